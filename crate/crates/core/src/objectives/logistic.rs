//! Multinomial logistic regression on a client's shard of a dataset.

use std::sync::Arc;

use rand::seq::index;

use super::data::Dataset;
use super::Federation;
use crate::error::{FedError, Result};
use crate::oracle::ClientObjective;
use crate::rng::RngStream;
use crate::vector::ModelVector;

/// Fraction of the local shard used per local step.
pub const DEFAULT_BATCH_FRACTION: f64 = 0.2;

/// Softmax regression with per-class weights and bias, parameters laid out
/// class-major as `[w_0 (d values), b_0, w_1, b_1, ...]`.
///
/// The loss is the mean cross-entropy over the shard plus `(λ/2)‖θ‖²`.
/// Stochastic gradients use a minibatch of `ceil(fraction·n)` examples drawn
/// without replacement.
#[derive(Debug, Clone)]
pub struct LogisticClient {
    data: Dataset,
    l2: f64,
    batch_fraction: f64,
    noise_variance: f64,
}

impl LogisticClient {
    pub fn new(data: Dataset, l2: f64, batch_fraction: f64) -> Result<Self> {
        if data.is_empty() {
            return Err(FedError::param("logistic client needs at least one example"));
        }
        if !(l2 >= 0.0) || !l2.is_finite() {
            return Err(FedError::param("L2 regularizer must be finite and >= 0"));
        }
        if !(batch_fraction > 0.0 && batch_fraction <= 1.0) {
            return Err(FedError::param(format!("batch fraction must lie in (0, 1], got {batch_fraction}")));
        }
        Ok(LogisticClient {
            data,
            l2,
            batch_fraction,
            noise_variance: 0.0,
        })
    }

    pub fn with_noise(mut self, variance: f64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(FedError::param("noise variance must be finite and >= 0"));
        }
        self.noise_variance = variance;
        Ok(self)
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn batch_size(&self) -> usize {
        ((self.batch_fraction * self.data.len() as f64).ceil() as usize).clamp(1, self.data.len())
    }

    fn stride(&self) -> usize {
        self.data.dim() + 1
    }

    fn logits(&self, theta: &[f64], row: &[f64], out: &mut [f64]) {
        let stride = self.stride();
        for (c, z) in out.iter_mut().enumerate() {
            let w = &theta[c * stride..(c + 1) * stride];
            *z = w[..row.len()].iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + w[row.len()];
        }
    }

    /// Mean cross-entropy gradient over `indices`, plus the L2 term.
    fn gradient_over<I: Iterator<Item = usize>>(&self, x: &ModelVector, indices: I, count: usize) -> ModelVector {
        let theta = x.as_slice();
        let stride = self.stride();
        let d = self.data.dim();
        let mut grad = vec![0.0; theta.len()];
        let mut z = vec![0.0; self.data.n_classes()];
        for i in indices {
            let row = self.data.row(i);
            self.logits(theta, row, &mut z);
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in z.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            let label = self.data.labels()[i];
            for (c, p) in z.iter().enumerate() {
                let coef = p / total - if c == label { 1.0 } else { 0.0 };
                let g = &mut grad[c * stride..(c + 1) * stride];
                for (gj, xj) in g[..d].iter_mut().zip(row) {
                    *gj += coef * xj;
                }
                g[d] += coef;
            }
        }
        let inv = 1.0 / count as f64;
        for (g, t) in grad.iter_mut().zip(theta) {
            *g = *g * inv + self.l2 * t;
        }
        ModelVector::from_raw(grad)
    }
}

impl ClientObjective for LogisticClient {
    fn dim(&self) -> usize {
        self.data.n_classes() * self.stride()
    }

    fn loss(&self, x: &ModelVector) -> f64 {
        let theta = x.as_slice();
        let mut z = vec![0.0; self.data.n_classes()];
        let mut ce = 0.0;
        for i in 0..self.data.len() {
            self.logits(theta, self.data.row(i), &mut z);
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            ce += lse - z[self.data.labels()[i]];
        }
        ce / self.data.len() as f64 + 0.5 * self.l2 * x.norm_sq()
    }

    fn gradient(&self, x: &ModelVector) -> ModelVector {
        self.gradient_over(x, 0..self.data.len(), self.data.len())
    }

    fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    fn sample_gradient(&self, x: &ModelVector, stream: &RngStream) -> ModelVector {
        let m = self.batch_size();
        if m == self.data.len() {
            return self.gradient(x);
        }
        let picked = index::sample(&mut stream.rng(), self.data.len(), m);
        self.gradient_over(x, picked.into_iter(), m)
    }

    fn prediction_counts(&self, x: &ModelVector) -> Option<(usize, usize)> {
        let mut z = vec![0.0; self.data.n_classes()];
        let mut correct = 0;
        for i in 0..self.data.len() {
            self.logits(x.as_slice(), self.data.row(i), &mut z);
            let pred = z
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
                .0;
            correct += usize::from(pred == self.data.labels()[i]);
        }
        Some((correct, self.data.len()))
    }
}

/// Builds one logistic client per index shard.
pub fn logistic_clients(
    data: &Dataset,
    shards: &[Vec<usize>],
    l2: f64,
    batch_fraction: f64,
    noise_variance: f64,
) -> Result<Federation> {
    let clients = shards
        .iter()
        .map(|idx| {
            let c = LogisticClient::new(data.subset(idx), l2, batch_fraction)?.with_noise(noise_variance)?;
            Ok(Arc::new(c) as Arc<dyn ClientObjective>)
        })
        .collect::<Result<Vec<_>>>()?;
    Federation::new(clients)
}
