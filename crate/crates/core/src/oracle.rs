//! The gradient-oracle contract consumed by every algorithm.

use std::fmt::Debug;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{FedError, Result};
use crate::rng::RngStream;
use crate::vector::ModelVector;

/// A client's local loss `f_i`.
///
/// Implementors provide the exact gradient and may override
/// [`ClientObjective::sample_gradient`] to inject sampling noise of their own
/// (minibatching). Additive Gaussian noise of total variance
/// [`ClientObjective::noise_variance`] is layered on top by
/// [`noisy_gradient`].
pub trait ClientObjective: Send + Sync + Debug {
    fn dim(&self) -> usize;

    fn loss(&self, x: &ModelVector) -> f64;

    fn gradient(&self, x: &ModelVector) -> ModelVector;

    /// Total additive noise variance σ² (summed over coordinates).
    fn noise_variance(&self) -> f64 {
        0.0
    }

    /// Unbiased sample of the gradient before additive noise. Defaults to the
    /// exact gradient.
    fn sample_gradient(&self, x: &ModelVector, _stream: &RngStream) -> ModelVector {
        self.gradient(x)
    }

    /// Constant Hessian for quadratic objectives.
    fn hessian(&self) -> Option<DMatrix<f64>> {
        None
    }

    /// `(correct, total)` classification counts for models that predict labels.
    fn prediction_counts(&self, _x: &ModelVector) -> Option<(usize, usize)> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub gradient: ModelVector,
    pub noise_variance_bound: f64,
}

/// Adds isotropic Gaussian noise with total variance `variance` to `g`.
/// The noise uses a ChaCha sub-stream disjoint from the one handed to
/// `sample_gradient`.
pub(crate) fn add_gaussian_noise(g: &mut ModelVector, variance: f64, stream: &RngStream) {
    if variance <= 0.0 {
        return;
    }
    let std = (variance / g.len() as f64).sqrt();
    let mut rng = stream.rng();
    rng.set_stream(1);
    for v in g.as_mut_slice() {
        let z: f64 = rng.sample(StandardNormal);
        *v += std * z;
    }
}

/// One draw of `g_i(x)`: the objective's sampled gradient plus zero-mean
/// Gaussian noise with total variance σ². With σ = 0 and no minibatching
/// this is the exact gradient, bit for bit.
pub fn noisy_gradient(
    obj: &dyn ClientObjective,
    x: &ModelVector,
    stream: &RngStream,
) -> Result<GradientSample> {
    x.check_dim(obj.dim())?;
    let sigma_sq = obj.noise_variance();
    if !(sigma_sq >= 0.0) {
        return Err(FedError::param("noise variance must be >= 0"));
    }
    let mut g = obj.sample_gradient(x, stream);
    add_gaussian_noise(&mut g, sigma_sq, stream);
    g.check_finite("noisy_gradient")?;
    Ok(GradientSample {
        gradient: g,
        noise_variance_bound: sigma_sq,
    })
}

/// Unchecked variant used inside local-update loops, which validate the
/// resulting iterate instead.
pub(crate) fn draw_gradient(
    obj: &dyn ClientObjective,
    x: &ModelVector,
    stream: &RngStream,
) -> ModelVector {
    let mut g = obj.sample_gradient(x, stream);
    add_gaussian_noise(&mut g, obj.noise_variance(), stream);
    g
}

/// Full-batch gradient with the additive noise of `draws` averaged samples.
pub(crate) fn draw_large_batch_gradient(
    obj: &dyn ClientObjective,
    x: &ModelVector,
    stream: &RngStream,
    draws: usize,
) -> ModelVector {
    let mut g = obj.gradient(x);
    add_gaussian_noise(&mut g, obj.noise_variance() / draws.max(1) as f64, stream);
    g
}

/// Central finite-difference gradient of `obj.loss`, used as a test oracle.
pub fn finite_difference_gradient(obj: &dyn ClientObjective, x: &ModelVector, h: f64) -> ModelVector {
    let mut out = Vec::with_capacity(x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        let orig = probe.as_slice()[j];
        probe.as_mut_slice()[j] = orig + h;
        let plus = obj.loss(&probe);
        probe.as_mut_slice()[j] = orig - h;
        let minus = obj.loss(&probe);
        probe.as_mut_slice()[j] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    ModelVector::from_raw(out)
}
