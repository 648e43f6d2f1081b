//! Dense parameter vectors.
//!
//! [`ModelVector`] holds every vector-valued quantity the simulator moves
//! around: server models, local iterates, control variates and gradients.
//! Checked operations (`axpy`, `try_from_vec`, ...) reject length mismatches
//! and non-finite results. The in-place `*_assign` helpers used in inner
//! loops only assert lengths; callers validate finiteness once per step via
//! [`ModelVector::is_finite`].

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    pub fn zeros(dim: usize) -> Self {
        ModelVector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        ModelVector(vec![value; dim])
    }

    /// Wraps `values`, rejecting empty or non-finite input.
    pub fn try_from_vec(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(FedError::param("model vector must have length >= 1"));
        }
        let v = ModelVector(values);
        v.check_finite("ModelVector::try_from_vec")?;
        Ok(v)
    }

    /// Wraps `values` without validation. Used internally where entries are
    /// known to come from finite arithmetic that is checked afterwards.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        ModelVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, context: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(FedError::NonFinite { context })
        }
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.len() == expected {
            Ok(())
        } else {
            Err(FedError::Dimension {
                expected,
                got: self.len(),
            })
        }
    }

    pub fn dot(&self, other: &ModelVector) -> f64 {
        assert_eq!(self.len(), other.len(), "dot: length mismatch");
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `‖self − other‖²`
    pub fn dist_sq(&self, other: &ModelVector) -> f64 {
        assert_eq!(self.len(), other.len(), "dist_sq: length mismatch");
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// `self ← self + a·x`
    pub fn axpy_assign(&mut self, a: f64, x: &ModelVector) {
        assert_eq!(self.len(), x.len(), "axpy_assign: length mismatch");
        for (s, xv) in self.0.iter_mut().zip(&x.0) {
            *s += a * xv;
        }
    }

    pub fn add_assign(&mut self, x: &ModelVector) {
        assert_eq!(self.len(), x.len(), "add_assign: length mismatch");
        for (s, xv) in self.0.iter_mut().zip(&x.0) {
            *s += xv;
        }
    }

    pub fn sub_assign(&mut self, x: &ModelVector) {
        assert_eq!(self.len(), x.len(), "sub_assign: length mismatch");
        for (s, xv) in self.0.iter_mut().zip(&x.0) {
            *s -= xv;
        }
    }

    pub fn scale_assign(&mut self, a: f64) {
        for s in &mut self.0 {
            *s *= a;
        }
    }

    pub fn add(&self, x: &ModelVector) -> ModelVector {
        let mut out = self.clone();
        out.add_assign(x);
        out
    }

    pub fn sub(&self, x: &ModelVector) -> ModelVector {
        let mut out = self.clone();
        out.sub_assign(x);
        out
    }

    pub fn scaled(&self, a: f64) -> ModelVector {
        let mut out = self.clone();
        out.scale_assign(a);
        out
    }

    /// Arithmetic mean of equally sized vectors, accumulated in slice order.
    pub fn mean<'a, I>(vectors: I) -> Result<ModelVector>
    where
        I: IntoIterator<Item = &'a ModelVector>,
    {
        let mut iter = vectors.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| FedError::param("mean of an empty set of vectors"))?;
        let mut acc = first.clone();
        let mut count = 1usize;
        for v in iter {
            v.check_dim(acc.len())?;
            acc.add_assign(v);
            count += 1;
        }
        acc.scale_assign(1.0 / count as f64);
        Ok(acc)
    }
}

impl From<ModelVector> for Vec<f64> {
    fn from(v: ModelVector) -> Self {
        v.0
    }
}

impl std::ops::Index<usize> for ModelVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Returns `a·x + y`.
pub fn axpy(a: f64, x: &ModelVector, y: &ModelVector) -> Result<ModelVector> {
    x.check_dim(y.len())?;
    let out = ModelVector(
        x.0.iter()
            .zip(&y.0)
            .map(|(xv, yv)| a * xv + yv)
            .collect(),
    );
    out.check_finite("axpy")?;
    Ok(out)
}
