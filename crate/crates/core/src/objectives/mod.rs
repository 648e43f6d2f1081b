//! Client objectives and the data partitioners that produce them.

mod data;
mod logistic;
mod quadratic;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use data::{
    label_entropy, make_synthetic_classification, split_by_similarity, Dataset, SyntheticClassification,
};
pub use logistic::{logistic_clients, LogisticClient, DEFAULT_BATCH_FRACTION};
pub use quadratic::{
    make_lower_bound_clients, make_quadratic_ensemble, measure_bgd, measure_bhd, spectral_norm_sym,
    LowerBoundPair, QuadraticClient, QuadraticEnsemble,
};

use crate::error::{FedError, Result};
use crate::oracle::ClientObjective;
use crate::vector::ModelVector;

/// Known minimizer of the averaged objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub x_star: ModelVector,
    pub f_star: f64,
}

/// The `N` client objectives of one experiment, with `f = (1/N)Σf_i`.
#[derive(Debug, Clone)]
pub struct Federation {
    clients: Vec<Arc<dyn ClientObjective>>,
    optimum: Option<Optimum>,
    /// Mean Hessian when every client is quadratic.
    curvature: Option<DMatrix<f64>>,
}

impl Federation {
    pub fn new(clients: Vec<Arc<dyn ClientObjective>>) -> Result<Self> {
        let first = clients.first().ok_or_else(|| FedError::param("federation needs >= 1 client"))?;
        let dim = first.dim();
        if dim == 0 {
            return Err(FedError::param("client dimension must be >= 1"));
        }
        for c in &clients {
            if c.dim() != dim {
                return Err(FedError::Dimension {
                    expected: dim,
                    got: c.dim(),
                });
            }
        }
        Ok(Federation {
            clients,
            optimum: None,
            curvature: None,
        })
    }

    /// Records the minimizer. For quadratic clients the suboptimality is
    /// then evaluated as `½(x − x*)ᵀĀ(x − x*)`, which keeps full relative
    /// precision near `x*` where `f(x) − f*` would cancel.
    pub fn with_optimum(mut self, optimum: Optimum) -> Self {
        let hessians: Option<Vec<DMatrix<f64>>> = self.clients.iter().map(|c| c.hessian()).collect();
        self.curvature = hessians.map(|hs| {
            let n = hs.len() as f64;
            hs.into_iter().fold(DMatrix::zeros(self.dim(), self.dim()), |acc, h| acc + h) / n
        });
        self.optimum = Some(optimum);
        self
    }

    pub fn clients(&self) -> &[Arc<dyn ClientObjective>] {
        &self.clients
    }

    pub fn client(&self, i: usize) -> &dyn ClientObjective {
        self.clients[i].as_ref()
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.clients[0].dim()
    }

    pub fn optimum(&self) -> Option<&Optimum> {
        self.optimum.as_ref()
    }

    pub fn loss(&self, x: &ModelVector) -> f64 {
        self.clients.iter().map(|c| c.loss(x)).sum::<f64>() / self.len() as f64
    }

    /// Exact `∇f(x)`, accumulated in ascending client order.
    pub fn gradient(&self, x: &ModelVector) -> ModelVector {
        let mut acc = ModelVector::zeros(self.dim());
        for c in &self.clients {
            acc.add_assign(&c.gradient(x));
        }
        acc.scale_assign(1.0 / self.len() as f64);
        acc
    }

    pub fn suboptimality(&self, x: &ModelVector) -> Option<f64> {
        let o = self.optimum.as_ref()?;
        Some(match &self.curvature {
            Some(a) => {
                let e = DVector::from_column_slice(x.sub(&o.x_star).as_slice());
                if !e.iter().all(|v| v.is_finite()) {
                    return Some(f64::INFINITY);
                }
                0.5 * e.dot(&(a * &e))
            }
            None => self.loss(x) - o.f_star,
        })
    }

    /// Fraction of correctly classified examples across all clients, if the
    /// clients make predictions.
    pub fn accuracy(&self, x: &ModelVector) -> Option<f64> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for c in &self.clients {
            let (ok, n) = c.prediction_counts(x)?;
            correct += ok;
            total += n;
        }
        (total > 0).then(|| correct as f64 / total as f64)
    }
}
