//! The round loop: client sampling, local-update dispatch, aggregation and
//! per-round metrics.
//!
//! Sampled clients may run on a rayon pool. Results are sorted by client id
//! before any reduction, so a trace depends only on `(seed, config)`.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    fedavg_local, fedprox_local, scaffold_local, scaffold_theory_local, server_aggregate, sgd_local, AlgorithmConfig,
    ClientState, ControlInit, LocalRunResult, ServerState, Variant,
};
use crate::error::{FedError, Result};
use crate::objectives::Federation;
use crate::oracle::draw_gradient;
use crate::rng::{Purpose, RngStream};
use crate::vector::ModelVector;

/// Uniform sampling of `sampled` distinct clients out of `n_clients` per round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub n_clients: usize,
    pub sampled: usize,
    pub seed: u64,
}

impl SamplingPlan {
    pub fn new(n_clients: usize, sampled: usize, seed: u64) -> Result<Self> {
        if sampled == 0 || sampled > n_clients {
            return Err(FedError::param(format!(
                "sampled clients must satisfy 1 <= S <= N, got S = {sampled}, N = {n_clients}"
            )));
        }
        Ok(SamplingPlan {
            n_clients,
            sampled,
            seed,
        })
    }

    pub fn full(n_clients: usize, seed: u64) -> Self {
        SamplingPlan {
            n_clients,
            sampled: n_clients,
            seed,
        }
    }

    /// Ascending client ids sampled in `round`.
    pub fn sample(&self, round: u64) -> Vec<usize> {
        if self.sampled == self.n_clients {
            return (0..self.n_clients).collect();
        }
        let mut rng = RngStream::new(self.seed, Purpose::Sampling).with_round(round).rng();
        let mut ids = index::sample(&mut rng, self.n_clients, self.sampled).into_vec();
        ids.sort_unstable();
        ids
    }
}

/// Where sampled clients run within a round.
#[derive(Default)]
pub enum Executor {
    #[default]
    Sequential,
    Pool(ThreadPool),
}

impl Executor {
    pub fn with_threads(threads: usize) -> Result<Self> {
        if threads <= 1 {
            return Ok(Executor::Sequential);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map(Executor::Pool)
            .map_err(|e| FedError::param(format!("thread pool: {e}")))
    }

    fn map<T, F>(&self, ids: &[usize], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Executor::Sequential => ids.iter().map(|&i| f(i)).collect(),
            Executor::Pool(pool) => pool.install(|| ids.par_iter().map(|&i| f(i)).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u64,
    /// `f(x^r) − f*`, when `f*` is known.
    pub suboptimality: Option<f64>,
    /// `‖∇f(x^r)‖²`
    pub grad_norm_sq: f64,
    /// Mean over the sampled clients of `(1/K)Σ_k ‖y_{i,k} − x^{r−1}‖²`.
    /// Undefined at round 0.
    pub drift: Option<f64>,
    /// `(1/N)Σ‖c_i − ∇f_i(x*)‖²` for SCAFFOLD I/II when `x*` is known.
    pub control_lag: Option<f64>,
    pub comm_bytes: u64,
    pub grad_evals: u64,
    /// Training accuracy for classifiers.
    pub accuracy: Option<f64>,
    /// Number of clients the drift estimate averages over.
    pub clients_evaluated: usize,
}

/// Mean of the per-client drift contributions.
pub fn compute_drift(results: &[LocalRunResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(FedError::UndefinedMetric("drift over zero clients"));
    }
    Ok(results.iter().map(|r| r.drift).sum::<f64>() / results.len() as f64)
}

/// `(1/N)Σ‖c_i − ∇f_i(x*)‖²`
pub fn compute_control_lag(clients: &[ClientState], federation: &Federation, x_star: Option<&ModelVector>) -> Result<f64> {
    let x_star = x_star.ok_or_else(|| FedError::Unsupported("control lag needs a known optimum".into()))?;
    if clients.len() != federation.len() {
        return Err(FedError::Dimension {
            expected: federation.len(),
            got: clients.len(),
        });
    }
    let total: f64 = clients
        .iter()
        .map(|c| c.control.dist_sq(&federation.client(c.id).gradient(x_star)))
        .sum();
    Ok(total / clients.len() as f64)
}

fn evaluate(
    round: u64,
    x: &ModelVector,
    clients: &[ClientState],
    federation: &Federation,
    cfg: &AlgorithmConfig,
) -> RoundMetrics {
    let optimum = federation.optimum().filter(|_| cfg.variant.is_stateful());
    RoundMetrics {
        round,
        suboptimality: federation.suboptimality(x),
        grad_norm_sq: federation.gradient(x).norm_sq(),
        drift: None,
        control_lag: optimum.and_then(|o| compute_control_lag(clients, federation, Some(&o.x_star)).ok()),
        comm_bytes: 0,
        grad_evals: 0,
        accuracy: federation.accuracy(x),
        clients_evaluated: 0,
    }
}

/// Server state and client states before round 1. Warm start sets
/// `c_i = g_i(x⁰)` averaged over `K` draws; the server control is always
/// the mean of the client controls.
pub fn initialize(
    federation: &Federation,
    x0: ModelVector,
    cfg: &AlgorithmConfig,
    seed: u64,
) -> Result<(ServerState, Vec<ClientState>)> {
    cfg.validate()?;
    x0.check_dim(federation.dim())?;
    x0.check_finite("initial model")?;
    let d = x0.len();
    let warm = cfg.control_init == ControlInit::WarmStart && cfg.variant.is_stateful();
    let clients: Vec<ClientState> = (0..federation.len())
        .map(|i| {
            let control = if warm {
                let base = RngStream::new(seed, Purpose::WarmStart).with_client(i as u64);
                let mut acc = ModelVector::zeros(d);
                for j in 0..cfg.local_steps {
                    acc.add_assign(&draw_gradient(federation.client(i), &x0, &base.with_step(j as u64)));
                }
                acc.scale_assign(1.0 / cfg.local_steps as f64);
                acc
            } else {
                ModelVector::zeros(d)
            };
            ClientState { id: i, control }
        })
        .collect();
    let mut server = ServerState::new(x0);
    if warm {
        server.control = ModelVector::mean(clients.iter().map(|c| &c.control))?;
        server.control.check_finite("warm-start control")?;
    }
    Ok((server, clients))
}

pub struct RoundOutcome {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub metrics: RoundMetrics,
}

/// Runs round `server.round + 1`.
pub fn run_round(
    server: &ServerState,
    clients: &[ClientState],
    federation: &Federation,
    cfg: &AlgorithmConfig,
    plan: &SamplingPlan,
    executor: &Executor,
) -> Result<RoundOutcome> {
    cfg.validate()?;
    if plan.n_clients != federation.len() || clients.len() != federation.len() {
        return Err(FedError::param("sampling plan, client states and objectives disagree on N"));
    }
    server.model.check_dim(federation.dim())?;
    let round = server.round + 1;
    let sampled = plan.sample(round);
    let x = &server.model;

    let (global_grad, global_evals) = match cfg.variant {
        Variant::ScaffoldTheory => (Some(federation.gradient(x)), federation.len() as u64),
        _ => (None, 0),
    };

    let run_client = |i: usize| -> Result<LocalRunResult> {
        let stream = RngStream::at(plan.seed, Purpose::LocalStep, round, i as u64, 0);
        let obj = federation.client(i);
        match cfg.variant {
            Variant::FedAvg => fedavg_local(x, obj, cfg, &stream),
            Variant::ScaffoldI | Variant::ScaffoldII => {
                scaffold_local(x, &server.control, &clients[i], obj, cfg, &stream)
            }
            Variant::ScaffoldTheory => {
                scaffold_theory_local(x, obj, global_grad.as_ref().expect("computed above"), cfg, &stream)
            }
            Variant::FedProx { .. } => fedprox_local(x, obj, cfg, &stream),
            Variant::LargeBatchSgd => sgd_local(x, obj, cfg, &stream),
        }
    };
    let results = executor
        .map(&sampled, run_client)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let drift = compute_drift(&results)?;
    let next = server_aggregate(server, &results, federation.len(), cfg)?;
    let mut next_clients = clients.to_vec();
    for r in &results {
        if let Some(c) = &r.control {
            next_clients[r.client].control = c.clone();
        }
    }

    let mut metrics = evaluate(round, &next.model, &next_clients, federation, cfg);
    let vectors = 2 * cfg.variant.vectors_per_direction();
    metrics.drift = Some(drift);
    metrics.comm_bytes = sampled.len() as u64 * vectors * federation.dim() as u64 * 8;
    metrics.grad_evals = results.iter().map(|r| r.gradient_evals).sum::<u64>() + global_evals;
    metrics.clients_evaluated = results.len();
    Ok(RoundOutcome {
        server: next,
        clients: next_clients,
        metrics,
    })
}

/// How the reported model is chosen from the iterates `x⁰ … x^R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OutputSelector {
    #[default]
    LastIterate,
    /// Picks `x^{r−1}` with probability proportional to
    /// `w_r = (1 − μη̃/2)^{1−r}`, `r = 1 … R+1`.
    Weighted { mu: f64, eta_eff: f64 },
}

impl OutputSelector {
    /// Selection probabilities for `x⁰ … x^R`.
    pub fn probabilities(&self, rounds: usize) -> Result<Vec<f64>> {
        match *self {
            OutputSelector::LastIterate => {
                let mut p = vec![0.0; rounds + 1];
                p[rounds] = 1.0;
                Ok(p)
            }
            OutputSelector::Weighted { mu, eta_eff } => {
                let base = 1.0 - mu * eta_eff / 2.0;
                if !(mu >= 0.0) || !(eta_eff > 0.0) || !(base > 0.0) {
                    return Err(FedError::param("weighted output needs mu >= 0, eta > 0 and mu*eta < 2"));
                }
                // log w_r = (1 − r)·ln(base); normalise in log space
                let logs: Vec<f64> = (1..=rounds + 1).map(|r| (1.0 - r as f64) * base.ln()).collect();
                let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
                let total: f64 = w.iter().sum();
                Ok(w.into_iter().map(|v| v / total).collect())
            }
        }
    }

    pub fn select(&self, rounds: usize, seed: u64) -> Result<usize> {
        let p = self.probabilities(rounds)?;
        if let OutputSelector::LastIterate = self {
            return Ok(rounds);
        }
        let u: f64 = RngStream::new(seed, Purpose::Output).rng().random();
        let mut acc = 0.0;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return Ok(i);
            }
        }
        Ok(rounds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMetric {
    /// Reached when `f(x) − f* <= threshold`.
    Suboptimality,
    /// Reached when `‖∇f(x)‖² <= threshold`.
    GradNormSq,
    /// Reached when training accuracy `>= threshold`.
    Accuracy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub metric: TargetMetric,
    pub threshold: f64,
}

impl Target {
    pub fn is_met(&self, m: &RoundMetrics) -> bool {
        match self.metric {
            TargetMetric::Suboptimality => m.suboptimality.is_some_and(|v| v <= self.threshold),
            TargetMetric::GradNormSq => m.grad_norm_sq <= self.threshold,
            TargetMetric::Accuracy => m.accuracy.is_some_and(|v| v >= self.threshold),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub stop_at_target: bool,
    pub threads: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            stop_at_target: false,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    /// Metrics for rounds `0 … R` (round 0 is the initial model).
    pub trace: Vec<RoundMetrics>,
    pub output: ModelVector,
    pub rounds_to_target: Option<u64>,
    pub diverged: bool,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
}

impl ExperimentOutcome {
    pub fn last(&self) -> &RoundMetrics {
        self.trace.last().expect("trace always holds round 0")
    }
}

fn metrics_finite(m: &RoundMetrics) -> bool {
    m.suboptimality.is_none_or(f64::is_finite) && m.grad_norm_sq.is_finite()
}

/// Runs up to `rounds` rounds. Divergence stops the run and marks it
/// instead of returning an error; misconfiguration is still an error.
#[allow(clippy::too_many_arguments)]
pub fn run_experiment(
    federation: &Federation,
    cfg: &AlgorithmConfig,
    x0: ModelVector,
    rounds: usize,
    plan: &SamplingPlan,
    selector: OutputSelector,
    target: Option<Target>,
    options: RunOptions,
) -> Result<ExperimentOutcome> {
    if rounds == 0 {
        return Err(FedError::param("experiment needs R >= 1 rounds"));
    }
    let executor = Executor::with_threads(options.threads)?;
    let (mut server, mut clients) = initialize(federation, x0, cfg, plan.seed)?;
    let keep_iterates = !matches!(selector, OutputSelector::LastIterate);
    let mut iterates = vec![server.model.clone()];

    let mut trace = vec![evaluate(0, &server.model, &clients, federation, cfg)];
    let mut rounds_to_target = target.filter(|t| t.is_met(&trace[0])).map(|_| 0);
    let mut diverged = !metrics_finite(&trace[0]);

    while !diverged && (server.round as usize) < rounds {
        if options.stop_at_target && rounds_to_target.is_some() {
            break;
        }
        match run_round(&server, &clients, federation, cfg, plan, &executor) {
            Ok(out) => {
                diverged = !metrics_finite(&out.metrics);
                if rounds_to_target.is_none() && target.is_some_and(|t| t.is_met(&out.metrics)) {
                    rounds_to_target = Some(out.metrics.round);
                }
                trace.push(out.metrics);
                server = out.server;
                clients = out.clients;
                if keep_iterates {
                    iterates.push(server.model.clone());
                }
            }
            Err(e) if e.is_divergence() => diverged = true,
            Err(e) => return Err(e),
        }
    }

    let output = if keep_iterates && !diverged {
        let idx = selector.select(iterates.len() - 1, plan.seed)?;
        iterates.swap_remove(idx)
    } else {
        server.model.clone()
    };
    Ok(ExperimentOutcome {
        trace,
        output,
        rounds_to_target,
        diverged,
        server,
        clients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_quadratic_ensemble, LowerBoundPair};

    #[test]
    fn sampling_is_distinct_sorted_and_deterministic() {
        let plan = SamplingPlan::new(10, 3, 5).unwrap();
        for r in 1..50 {
            let s = plan.sample(r);
            assert_eq!(s.len(), 3);
            assert!(s.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(s, plan.sample(r));
        }
        assert!(SamplingPlan::new(3, 4, 0).is_err());
        assert!(SamplingPlan::new(3, 0, 0).is_err());
    }

    #[test]
    fn drift_single_step_is_step_norm() {
        let fed = LowerBoundPair::new(1.0, 2.0).unwrap().federation();
        let cfg = AlgorithmConfig::new(Variant::FedAvg, 0.1, 1);
        let (server, clients) = initialize(&fed, ModelVector::filled(1, 1.0), &cfg, 0).unwrap();
        let out = run_round(&server, &clients, &fed, &cfg, &SamplingPlan::full(2, 0), &Executor::Sequential).unwrap();
        // ∇f1(1) = 4, ∇f2 = −2
        let expected = ((0.1f64 * 4.0).powi(2) + (0.1f64 * 2.0).powi(2)) / 2.0;
        assert!((out.metrics.drift.unwrap() - expected).abs() < 1e-15);
        assert!(compute_drift(&[]).is_err());
    }

    #[test]
    fn control_lag_cases() {
        let fed = make_quadratic_ensemble(4, 3, 0.5, 2.0, 1).unwrap();
        let x_star = fed.optimum().unwrap().x_star.clone();
        let exact: Vec<ClientState> = (0..4)
            .map(|i| ClientState {
                id: i,
                control: fed.client(i).gradient(&x_star),
            })
            .collect();
        assert_eq!(compute_control_lag(&exact, &fed, Some(&x_star)).unwrap(), 0.0);
        let zeros: Vec<ClientState> = (0..4)
            .map(|i| ClientState {
                id: i,
                control: ModelVector::zeros(3),
            })
            .collect();
        let lag = compute_control_lag(&zeros, &fed, Some(&x_star)).unwrap();
        assert!((lag - 4.0).abs() < 1e-12);
        assert!(compute_control_lag(&zeros, &fed, None).is_err());
    }

    #[test]
    fn weighted_selector_probabilities() {
        let p = OutputSelector::Weighted { mu: 0.0, eta_eff: 0.5 }.probabilities(4).unwrap();
        assert!(p.iter().all(|v| (v - 0.2).abs() < 1e-15));
        let p = OutputSelector::Weighted { mu: 1.0, eta_eff: 0.5 }.probabilities(300).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.windows(2).all(|w| w[0] < w[1]));
        assert!(OutputSelector::Weighted { mu: 10.0, eta_eff: 1.0 }.probabilities(3).is_err());
        assert_eq!(OutputSelector::LastIterate.select(7, 0).unwrap(), 7);
    }

    #[test]
    fn target_met_at_round_zero() {
        let fed = LowerBoundPair::new(1.0, 1.0).unwrap().federation();
        let cfg = AlgorithmConfig::new(Variant::FedAvg, 0.1, 2);
        let target = Target {
            metric: TargetMetric::Suboptimality,
            threshold: 1.0,
        };
        let out = run_experiment(
            &fed,
            &cfg,
            ModelVector::filled(1, 0.5),
            10,
            &SamplingPlan::full(2, 0),
            OutputSelector::LastIterate,
            Some(target),
            RunOptions {
                stop_at_target: true,
                threads: 1,
            },
        )
        .unwrap();
        assert_eq!(out.rounds_to_target, Some(0));
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn divergence_marks_the_run() {
        let fed = LowerBoundPair::new(1.0, 1.0).unwrap().federation();
        let cfg = AlgorithmConfig::new(Variant::FedAvg, 50.0, 10);
        let out = run_experiment(
            &fed,
            &cfg,
            ModelVector::filled(1, 1.0),
            500,
            &SamplingPlan::full(2, 0),
            OutputSelector::LastIterate,
            None,
            RunOptions::default(),
        )
        .unwrap();
        assert!(out.diverged);
        assert!(out.trace.len() < 501);
    }

    #[test]
    fn zero_rounds_rejected() {
        let fed = LowerBoundPair::new(1.0, 1.0).unwrap().federation();
        let cfg = AlgorithmConfig::new(Variant::FedAvg, 0.1, 1);
        let r = run_experiment(
            &fed,
            &cfg,
            ModelVector::zeros(1),
            0,
            &SamplingPlan::full(2, 0),
            OutputSelector::LastIterate,
            None,
            RunOptions::default(),
        );
        assert!(r.is_err());
    }
}
