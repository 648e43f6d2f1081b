//! Quadratic clients `f_i(x) = ½xᵀA_i x + b_iᵀx + c_i`, the two-client
//! lower-bound construction and tunable heterogeneity ensembles.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Federation, Optimum};
use crate::error::{FedError, Result};
use crate::oracle::ClientObjective;
use crate::rng::{Purpose, RngStream};
use crate::vector::ModelVector;

#[derive(Debug, Clone)]
pub struct QuadraticClient {
    hessian: DMatrix<f64>,
    linear: ModelVector,
    constant: f64,
    noise_variance: f64,
}

fn symv(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    // a is symmetric, so column i doubles as row i
    (0..a.ncols())
        .map(|i| a.column(i).iter().zip(x).map(|(aij, xj)| aij * xj).sum())
        .collect()
}

impl QuadraticClient {
    /// General form `½xᵀAx + bᵀx + c`.
    pub fn new(hessian: DMatrix<f64>, linear: ModelVector, constant: f64) -> Result<Self> {
        if !hessian.is_square() || hessian.nrows() != linear.len() {
            return Err(FedError::Dimension {
                expected: linear.len(),
                got: hessian.nrows(),
            });
        }
        if hessian != hessian.transpose() {
            return Err(FedError::param("quadratic Hessian must be symmetric"));
        }
        if hessian.iter().any(|v| !v.is_finite()) || !constant.is_finite() {
            return Err(FedError::param("quadratic coefficients must be finite"));
        }
        Ok(QuadraticClient {
            hessian,
            linear,
            constant,
            noise_variance: 0.0,
        })
    }

    /// Centered form `½(x − x*)ᵀA(x − x*) + offset`.
    pub fn from_center(hessian: DMatrix<f64>, center: &ModelVector, offset: f64) -> Result<Self> {
        center.check_dim(hessian.nrows())?;
        let a_center = symv(&hessian, center.as_slice());
        let linear = ModelVector::from_raw(a_center.iter().map(|v| -v).collect());
        let constant = 0.5 * center.as_slice().iter().zip(&a_center).map(|(c, a)| c * a).sum::<f64>() + offset;
        QuadraticClient::new(hessian, linear, constant)
    }

    pub fn with_noise(mut self, variance: f64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(FedError::param("noise variance must be finite and >= 0"));
        }
        self.noise_variance = variance;
        Ok(self)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn linear(&self) -> &ModelVector {
        &self.linear
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }
}

impl ClientObjective for QuadraticClient {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn loss(&self, x: &ModelVector) -> f64 {
        let ax = symv(&self.hessian, x.as_slice());
        let quad: f64 = x.as_slice().iter().zip(&ax).map(|(a, b)| a * b).sum();
        0.5 * quad + self.linear.dot(x) + self.constant
    }

    fn gradient(&self, x: &ModelVector) -> ModelVector {
        let mut g = symv(&self.hessian, x.as_slice());
        for (gi, bi) in g.iter_mut().zip(self.linear.as_slice()) {
            *gi += bi;
        }
        ModelVector::from_raw(g)
    }

    fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    fn hessian(&self) -> Option<DMatrix<f64>> {
        Some(self.hessian.clone())
    }
}

/// `f1(x) = μx² + Gx`, `f2(x) = −Gx`; their average is `(μ/2)x²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundPair {
    pub mu: f64,
    pub g: f64,
}

impl LowerBoundPair {
    pub fn new(mu: f64, g: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(FedError::param(format!("lower-bound pair needs mu > 0, got {mu}")));
        }
        if !(g > 0.0) || !g.is_finite() {
            return Err(FedError::param(format!("lower-bound pair needs G > 0, got {g}")));
        }
        Ok(LowerBoundPair { mu, g })
    }

    pub fn clients(&self) -> [QuadraticClient; 2] {
        let f1 = QuadraticClient::new(
            DMatrix::from_element(1, 1, 2.0 * self.mu),
            ModelVector::from_raw(vec![self.g]),
            0.0,
        )
        .expect("valid 1-d quadratic");
        let f2 = QuadraticClient::new(
            DMatrix::zeros(1, 1),
            ModelVector::from_raw(vec![-self.g]),
            0.0,
        )
        .expect("valid 1-d linear function");
        [f1, f2]
    }

    pub fn federation(&self) -> Federation {
        let [f1, f2] = self.clients();
        Federation::new(vec![Arc::new(f1), Arc::new(f2)])
            .expect("two 1-d clients")
            .with_optimum(Optimum {
                x_star: ModelVector::zeros(1),
                f_star: 0.0,
            })
    }
}

/// Convenience wrapper returning the two lower-bound clients as a federation.
pub fn make_lower_bound_clients(mu: f64, g: f64) -> Result<Federation> {
    Ok(LowerBoundPair::new(mu, g)?.federation())
}

/// Parameters of a synthetic quadratic ensemble.
///
/// The mean Hessian has eigenvalues spread linearly over `[mu, beta]` in a
/// random orthonormal basis (just `beta` when `dim == 1`). Clients are
/// paired; each pair shares a random unit direction `u` and receives
/// `A ± δ·uuᵀ`, so the mean is untouched and `max ‖A_i − A‖ = δ`. With an
/// odd client count the last client keeps `A`. Gradients at the optimum
/// `x* = 0` are zero-mean random vectors rescaled so that
/// `(1/N)Σ‖∇f_i(x*)‖² = G²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticEnsemble {
    pub n_clients: usize,
    pub dim: usize,
    pub delta: f64,
    pub g: f64,
    pub mu: f64,
    pub beta: f64,
    pub noise_variance: f64,
    pub seed: u64,
}

impl QuadraticEnsemble {
    pub fn new(n_clients: usize, dim: usize, delta: f64, g: f64, seed: u64) -> Self {
        QuadraticEnsemble {
            n_clients,
            dim,
            delta,
            g,
            mu: 0.1,
            beta: 1.0,
            noise_variance: 0.0,
            seed,
        }
    }

    pub fn with_mu(self, mu: f64) -> Self {
        QuadraticEnsemble { mu, ..self }
    }

    pub fn with_noise(self, noise_variance: f64) -> Self {
        QuadraticEnsemble {
            noise_variance,
            ..self
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_clients < 2 {
            return Err(FedError::param("ensemble needs at least 2 clients"));
        }
        if self.dim < 1 {
            return Err(FedError::param("ensemble dimension must be >= 1"));
        }
        if !(self.beta > 0.0) || !(self.mu > 0.0) || self.mu > self.beta {
            return Err(FedError::param("ensemble needs 0 < mu <= beta"));
        }
        if !(self.delta >= 0.0) || !(self.g >= 0.0) || !(self.noise_variance >= 0.0) {
            return Err(FedError::param("delta, G and noise variance must be >= 0"));
        }
        if self.delta > 2.0 * self.beta {
            return Err(FedError::param(format!(
                "delta = {} exceeds 2*beta = {}",
                self.delta,
                2.0 * self.beta
            )));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Federation> {
        self.validate()?;
        let d = self.dim;
        let n = self.n_clients;
        let mut rng = RngStream::new(self.seed, Purpose::Ensemble).rng();
        let mut gauss = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.sample(StandardNormal)).collect() };

        let mean = if d == 1 {
            DMatrix::from_element(1, 1, self.beta)
        } else {
            let q = DMatrix::from_vec(d, d, gauss(d * d)).qr().q();
            let eig = DVector::from_iterator(
                d,
                (0..d).map(|j| self.mu + (self.beta - self.mu) * j as f64 / (d - 1) as f64),
            );
            let a = &q * DMatrix::from_diagonal(&eig) * q.transpose();
            (&a + a.transpose()) * 0.5
        };

        let mut hessians = Vec::with_capacity(n);
        for _ in 0..n / 2 {
            let mut u = DVector::from_vec(gauss(d));
            u /= u.norm();
            let outer = &u * u.transpose() * self.delta;
            hessians.push(&mean + &outer);
            hessians.push(&mean - &outer);
        }
        if n % 2 == 1 {
            hessians.push(mean.clone());
        }

        let mut grads: Vec<Vec<f64>> = (0..n).map(|_| gauss(d)).collect();
        let mut centroid = vec![0.0; d];
        for g in &grads {
            for (c, v) in centroid.iter_mut().zip(g) {
                *c += v / n as f64;
            }
        }
        for g in &mut grads {
            for (v, c) in g.iter_mut().zip(&centroid) {
                *v -= c;
            }
        }
        let mean_sq: f64 = grads.iter().flatten().map(|v| v * v).sum::<f64>() / n as f64;
        let scale = if mean_sq > 0.0 { self.g / mean_sq.sqrt() } else { 0.0 };

        // x* = 0, so b_i = ∇f_i(x*) and c_i = 0 gives f_i(x*) = f(x*) = 0.
        let clients = hessians
            .into_iter()
            .zip(grads)
            .map(|(a, g)| {
                let b = ModelVector::from_raw(g.into_iter().map(|v| v * scale).collect());
                let client = QuadraticClient::new(a, b, 0.0)?.with_noise(self.noise_variance)?;
                Ok(Arc::new(client) as Arc<dyn ClientObjective>)
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Federation::new(clients)?.with_optimum(Optimum {
            x_star: ModelVector::zeros(d),
            f_star: 0.0,
        }))
    }
}

pub fn make_quadratic_ensemble(
    n_clients: usize,
    dim: usize,
    delta: f64,
    g: f64,
    seed: u64,
) -> Result<Federation> {
    QuadraticEnsemble::new(n_clients, dim, delta, g, seed).build()
}

/// `((1/N)Σ‖∇f_i(x)‖², ‖∇f(x)‖²)`.
pub fn measure_bgd(clients: &[Arc<dyn ClientObjective>], x: &ModelVector) -> Result<(f64, f64)> {
    if clients.is_empty() {
        return Err(FedError::param("no clients"));
    }
    let grads = clients
        .iter()
        .map(|c| {
            x.check_dim(c.dim())?;
            Ok(c.gradient(x))
        })
        .collect::<Result<Vec<_>>>()?;
    let local = grads.iter().map(ModelVector::norm_sq).sum::<f64>() / grads.len() as f64;
    let full = ModelVector::mean(&grads)?.norm_sq();
    Ok((local, full))
}

/// Spectral norm of a symmetric matrix.
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `max_i ‖A_i − A‖₂` with `A` the mean Hessian.
pub fn measure_bhd(clients: &[Arc<dyn ClientObjective>]) -> Result<f64> {
    let hessians = clients
        .iter()
        .map(|c| {
            c.hessian()
                .ok_or_else(|| FedError::Unsupported("Hessian dissimilarity needs quadratic clients".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let first = hessians.first().ok_or_else(|| FedError::param("no clients"))?;
    let mut mean = DMatrix::zeros(first.nrows(), first.ncols());
    for h in &hessians {
        if h.shape() != first.shape() {
            return Err(FedError::Dimension {
                expected: first.nrows(),
                got: h.nrows(),
            });
        }
        mean += h;
    }
    mean /= hessians.len() as f64;
    Ok(hessians
        .iter()
        .map(|h| spectral_norm_sym(&(h - &mean)))
        .fold(0.0, f64::max))
}
