//! Client-side local updates and the server aggregation step for FedAvg,
//! SCAFFOLD (options I and II plus the full-gradient-control variant),
//! FedProx and large-batch SGD.
//!
//! Every local update is a pure function of its inputs and an
//! [`RngStream`] whose `round` and `client` coordinates are already set; the
//! `k`-th local step draws its gradient from coordinate `step = k`.

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::oracle::{draw_gradient, draw_large_batch_gradient, ClientObjective};
use crate::rng::{Purpose, RngStream};
use crate::vector::ModelVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    #[serde(rename = "fedavg")]
    FedAvg,
    /// SCAFFOLD, control update `c_i⁺ = g_i(x)`.
    ScaffoldI,
    /// SCAFFOLD, control update `c_i⁺ = c_i − c + (x − y_K)/(Kη_l)`.
    #[serde(rename = "scaffold_ii")]
    ScaffoldII,
    /// Controls are exact full gradients at the round's server model:
    /// `y ← y − η(g_i(y) + ∇f(x) − ∇f_i(x))`.
    ScaffoldTheory,
    #[serde(rename = "fedprox")]
    FedProx { mu_prox: f64 },
    #[serde(rename = "sgd")]
    LargeBatchSgd,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::FedAvg => "fedavg",
            Variant::ScaffoldI => "scaffold_i",
            Variant::ScaffoldII => "scaffold_ii",
            Variant::ScaffoldTheory => "scaffold_theory",
            Variant::FedProx { .. } => "fedprox",
            Variant::LargeBatchSgd => "sgd",
        }
    }

    /// Whether clients carry a persistent control variate.
    pub fn is_stateful(&self) -> bool {
        matches!(self, Variant::ScaffoldI | Variant::ScaffoldII)
    }

    /// Model-sized vectors sent in each direction per sampled client.
    pub fn vectors_per_direction(&self) -> u64 {
        match self {
            Variant::ScaffoldI | Variant::ScaffoldII | Variant::ScaffoldTheory => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ControlInit {
    #[default]
    Zeros,
    /// `c_i⁰ = g_i(x⁰)` for every client before the first round.
    WarmStart,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    pub local_lr: f64,
    #[serde(default = "one")]
    pub global_lr: f64,
    pub local_steps: usize,
    pub variant: Variant,
    #[serde(default)]
    pub control_init: ControlInit,
}

impl AlgorithmConfig {
    pub fn new(variant: Variant, local_lr: f64, local_steps: usize) -> Self {
        AlgorithmConfig {
            local_lr,
            global_lr: 1.0,
            local_steps,
            variant,
            control_init: ControlInit::Zeros,
        }
    }

    pub fn with_global_lr(self, global_lr: f64) -> Self {
        AlgorithmConfig { global_lr, ..self }
    }

    pub fn with_control_init(self, control_init: ControlInit) -> Self {
        AlgorithmConfig { control_init, ..self }
    }

    /// Step sizes for rate checks on `μ`-strongly convex, `β`-smooth
    /// problems: `η_g = √S` and
    /// `η_l = min(1/(81βKη_g), S/(15μNKη_g))`.
    pub fn theory_preset(variant: Variant, beta: f64, mu: f64, n_clients: usize, sampled: usize, local_steps: usize) -> Self {
        let k = local_steps as f64;
        let s = sampled as f64;
        let eta_g = s.sqrt();
        let eta_l = (1.0 / (81.0 * beta * k * eta_g)).min(s / (15.0 * mu * n_clients as f64 * k * eta_g));
        AlgorithmConfig::new(variant, eta_l, local_steps).with_global_lr(eta_g)
    }

    /// `η̃ = K·η_g·η_l`
    pub fn effective_lr(&self) -> f64 {
        self.local_steps as f64 * self.global_lr * self.local_lr
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.local_lr > 0.0) || !self.local_lr.is_finite() {
            return Err(FedError::param(format!("local step-size must be > 0, got {}", self.local_lr)));
        }
        if !(self.global_lr > 0.0) || !self.global_lr.is_finite() {
            return Err(FedError::param(format!("global step-size must be > 0, got {}", self.global_lr)));
        }
        if self.local_steps == 0 {
            return Err(FedError::param("local steps K must be >= 1"));
        }
        if let Variant::FedProx { mu_prox } = self.variant {
            if !(mu_prox >= 0.0) || !mu_prox.is_finite() {
                return Err(FedError::param("FedProx regularization must be >= 0"));
            }
        }
        let eff = self.effective_lr();
        if !(eff > 0.0) || !eff.is_finite() {
            return Err(FedError::param("effective step-size must be finite and positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub control: ModelVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub model: ModelVector,
    pub control: ModelVector,
    pub round: u64,
}

impl ServerState {
    pub fn new(model: ModelVector) -> Self {
        let control = ModelVector::zeros(model.len());
        ServerState {
            model,
            control,
            round: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalRunResult {
    pub client: usize,
    /// `y_{i,K} − x`
    pub delta_y: ModelVector,
    /// `c_i⁺ − c_i`; zero for stateless variants.
    pub delta_c: ModelVector,
    /// `c_i⁺` for stateful variants.
    pub control: Option<ModelVector>,
    /// `(1/K)Σ_k ‖y_{i,k} − x‖²`
    pub drift: f64,
    pub gradient_evals: u64,
}

fn client_id(stream: &RngStream) -> usize {
    stream.client as usize
}

fn diverged(stream: &RngStream, step: usize) -> FedError {
    FedError::Divergence {
        round: stream.round,
        client: client_id(stream),
        step,
    }
}

struct Trajectory {
    y: ModelVector,
    drift: f64,
}

/// `K` steps of `y ← (y − η·g_i(y)) − η·correction(y)`. The correction is
/// applied as a separate update so a zero correction leaves the plain
/// gradient step bit-identical.
fn local_descent<F>(
    x: &ModelVector,
    obj: &dyn ClientObjective,
    cfg: &AlgorithmConfig,
    stream: &RngStream,
    mut correction: F,
) -> Result<Trajectory>
where
    F: FnMut(&ModelVector) -> Option<ModelVector>,
{
    x.check_dim(obj.dim())?;
    let eta = cfg.local_lr;
    let mut y = x.clone();
    let mut drift = 0.0;
    let base = stream.with_purpose(Purpose::LocalStep);
    for k in 0..cfg.local_steps {
        let g = draw_gradient(obj, &y, &base.with_step(k as u64));
        let corr = correction(&y);
        y.axpy_assign(-eta, &g);
        if let Some(c) = corr {
            y.axpy_assign(-eta, &c);
        }
        if !y.is_finite() {
            return Err(diverged(stream, k + 1));
        }
        drift += y.dist_sq(x);
    }
    Ok(Trajectory {
        y,
        drift: drift / cfg.local_steps as f64,
    })
}

fn stateless_result(x: &ModelVector, t: Trajectory, stream: &RngStream, evals: u64) -> LocalRunResult {
    LocalRunResult {
        client: client_id(stream),
        delta_y: t.y.sub(x),
        delta_c: ModelVector::zeros(x.len()),
        control: None,
        drift: t.drift,
        gradient_evals: evals,
    }
}

fn expect_variant(cfg: &AlgorithmConfig, ok: bool, op: &str) -> Result<()> {
    cfg.validate()?;
    if ok {
        Ok(())
    } else {
        Err(FedError::param(format!("{op} called with variant {}", cfg.variant.name())))
    }
}

/// `y ← x`, then `K` times `y ← y − η_l·g_i(y)`.
pub fn fedavg_local(
    x: &ModelVector,
    obj: &dyn ClientObjective,
    cfg: &AlgorithmConfig,
    stream: &RngStream,
) -> Result<LocalRunResult> {
    expect_variant(cfg, cfg.variant == Variant::FedAvg, "fedavg_local")?;
    let t = local_descent(x, obj, cfg, stream, |_| None)?;
    Ok(stateless_result(x, t, stream, cfg.local_steps as u64))
}

/// Corrected steps `y ← y − η_l(g_i(y) + c − c_i)` followed by the option I
/// or option II control update.
pub fn scaffold_local(
    x: &ModelVector,
    server_control: &ModelVector,
    state: &ClientState,
    obj: &dyn ClientObjective,
    cfg: &AlgorithmConfig,
    stream: &RngStream,
) -> Result<LocalRunResult> {
    expect_variant(cfg, cfg.variant.is_stateful(), "scaffold_local")?;
    server_control.check_dim(x.len())?;
    state.control.check_dim(x.len())?;
    let k = cfg.local_steps;
    let kl = k as f64 * cfg.local_lr;
    if !(kl > 0.0) {
        return Err(FedError::param("K·η_l must be positive"));
    }
    let shift = server_control.sub(&state.control);
    let t = local_descent(x, obj, cfg, stream, |_| Some(shift.clone()))?;

    let (new_control, extra_evals) = match cfg.variant {
        Variant::ScaffoldI => {
            let pass = stream.with_purpose(Purpose::ControlPass);
            let mut acc = ModelVector::zeros(x.len());
            for j in 0..k {
                acc.add_assign(&draw_gradient(obj, x, &pass.with_step(j as u64)));
            }
            acc.scale_assign(1.0 / k as f64);
            (acc, k as u64)
        }
        _ => {
            let mut c = state.control.sub(server_control);
            c.axpy_assign(1.0 / kl, &x.sub(&t.y));
            (c, 0)
        }
    };
    if !new_control.is_finite() {
        return Err(diverged(stream, k));
    }
    Ok(LocalRunResult {
        client: client_id(stream),
        delta_y: t.y.sub(x),
        delta_c: new_control.sub(&state.control),
        control: Some(new_control),
        drift: t.drift,
        gradient_evals: k as u64 + extra_evals,
    })
}

/// Local SGD on `f_i(y) + (μ/2)‖y − x‖²`.
pub fn fedprox_local(
    x: &ModelVector,
    obj: &dyn ClientObjective,
    cfg: &AlgorithmConfig,
    stream: &RngStream,
) -> Result<LocalRunResult> {
    let Variant::FedProx { mu_prox } = cfg.variant else {
        return Err(FedError::param(format!("fedprox_local called with variant {}", cfg.variant.name())));
    };
    cfg.validate()?;
    let t = local_descent(x, obj, cfg, stream, |y| {
        (mu_prox != 0.0).then(|| y.sub(x).scaled(mu_prox))
    })?;
    Ok(stateless_result(x, t, stream, cfg.local_steps as u64))
}

/// One full-batch gradient step at `x`: `Δy = −η_l·∇f_i(x)`, with the
/// additive noise of `K` averaged samples.
pub fn sgd_local(
    x: &ModelVector,
    obj: &dyn ClientObjective,
    cfg: &AlgorithmConfig,
    stream: &RngStream,
) -> Result<LocalRunResult> {
    expect_variant(cfg, cfg.variant == Variant::LargeBatchSgd, "sgd_local")?;
    x.check_dim(obj.dim())?;
    let g = draw_large_batch_gradient(
        obj,
        x,
        &stream.with_purpose(Purpose::LocalStep).with_step(0),
        cfg.local_steps,
    );
    let mut y = x.clone();
    y.axpy_assign(-cfg.local_lr, &g);
    if !y.is_finite() {
        return Err(diverged(stream, 1));
    }
    let drift = y.dist_sq(x);
    Ok(LocalRunResult {
        client: client_id(stream),
        delta_y: y.sub(x),
        delta_c: ModelVector::zeros(x.len()),
        control: None,
        drift,
        gradient_evals: 1,
    })
}

/// `K` steps of `y ← y − η(g_i(y) + ∇f(x) − ∇f_i(x))` with exact gradients
/// at the round's server model.
pub fn scaffold_theory_local(
    x: &ModelVector,
    obj: &dyn ClientObjective,
    global_grad_at_x: &ModelVector,
    cfg: &AlgorithmConfig,
    stream: &RngStream,
) -> Result<LocalRunResult> {
    expect_variant(cfg, cfg.variant == Variant::ScaffoldTheory, "scaffold_theory_local")?;
    global_grad_at_x.check_dim(x.len())?;
    x.check_dim(obj.dim())?;
    let shift = global_grad_at_x.sub(&obj.gradient(x));
    let t = local_descent(x, obj, cfg, stream, |_| Some(shift.clone()))?;
    Ok(stateless_result(x, t, stream, cfg.local_steps as u64 + 1))
}

/// `x⁺ = x + (η_g/S)ΣΔy_i`, `c⁺ = c + (1/N)ΣΔc_i`, summed in ascending
/// client order.
pub fn server_aggregate(
    server: &ServerState,
    results: &[LocalRunResult],
    n_clients: usize,
    cfg: &AlgorithmConfig,
) -> Result<ServerState> {
    if results.is_empty() {
        return Err(FedError::Protocol("no client updates to aggregate".into()));
    }
    let mut ordered: Vec<&LocalRunResult> = results.iter().collect();
    ordered.sort_by_key(|r| r.client);
    for pair in ordered.windows(2) {
        if pair[0].client == pair[1].client {
            return Err(FedError::Protocol(format!("duplicate update from client {}", pair[0].client)));
        }
    }
    if let Some(r) = ordered.iter().find(|r| r.client >= n_clients) {
        return Err(FedError::Protocol(format!("client id {} out of range for N = {n_clients}", r.client)));
    }
    let d = server.model.len();
    let mut dy = ModelVector::zeros(d);
    let mut dc = ModelVector::zeros(d);
    for r in &ordered {
        r.delta_y.check_dim(d)?;
        r.delta_c.check_dim(d)?;
        dy.add_assign(&r.delta_y);
        dc.add_assign(&r.delta_c);
    }
    let mut model = server.model.clone();
    model.axpy_assign(cfg.global_lr / ordered.len() as f64, &dy);
    let mut control = server.control.clone();
    control.axpy_assign(1.0 / n_clients as f64, &dc);
    if !model.is_finite() || !control.is_finite() {
        return Err(FedError::NonFinite {
            context: "server_aggregate",
        });
    }
    Ok(ServerState {
        model,
        control,
        round: server.round + 1,
    })
}
