//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedsim::algorithms::{scaffold_local, server_aggregate};
use fedsim::harness::{best_lr, median, run_grid, Axis, ExperimentSpec, ResultRow, TuneBy};
use fedsim::objectives::{measure_bhd, LogisticClient, LowerBoundPair, QuadraticClient, QuadraticEnsemble};
use fedsim::orchestrator::{compute_control_lag, initialize, Executor};
use fedsim::oracle::finite_difference_gradient;
use fedsim::{
    run_experiment, run_round, AlgorithmConfig, ClientObjective, ClientState, Federation, ModelVector, OutputSelector,
    Purpose, RngStream, RunOptions, SamplingPlan, ServerState, Variant,
};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn bits(x: &ModelVector) -> Vec<u64> {
    x.as_slice().iter().map(|v| v.to_bits()).collect()
}

/// Server models `x¹ … x^R` produced by the orchestrator.
fn orchestrated_models(
    fed: &Federation,
    cfg: &AlgorithmConfig,
    x0: ModelVector,
    plan: &SamplingPlan,
    rounds: usize,
) -> Result<Vec<ModelVector>, String> {
    let (mut server, mut clients) = initialize(fed, x0, cfg, plan.seed).map_err(err)?;
    let exec = Executor::Sequential;
    let mut models = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let out = run_round(&server, &clients, fed, cfg, plan, &exec).map_err(err)?;
        server = out.server;
        clients = out.clients;
        models.push(server.model.clone());
    }
    Ok(models)
}

fn zero_variate_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut compared = 0;
    for case in 0..20u64 {
        let d = rng.random_range(1..=5);
        let k = rng.random_range(1..=10);
        let n = rng.random_range(2..=8);
        let s = rng.random_range(1..=n);
        let eta = rng.random_range(0.01..0.1);
        let fed = QuadraticEnsemble::new(n, d, rng.random_range(0.0..1.0), rng.random_range(0.0..10.0), case)
            .with_noise(rng.random_range(0.0..1.0))
            .build()
            .map_err(err)?;
        let plan = SamplingPlan::new(n, s, 1000 + case).map_err(err)?;
        let x0 = ModelVector::filled(d, 1.0);
        let rounds = 10;
        let fedavg = orchestrated_models(&fed, &AlgorithmConfig::new(Variant::FedAvg, eta, k), x0.clone(), &plan, rounds)?;

        for variant in [Variant::ScaffoldI, Variant::ScaffoldII] {
            let cfg = AlgorithmConfig::new(variant, eta, k);
            let zero = ModelVector::zeros(d);
            let mut server = ServerState::new(x0.clone());
            for r in 1..=rounds as u64 {
                let results = plan
                    .sample(r)
                    .into_iter()
                    .map(|i| {
                        let state = ClientState {
                            id: i,
                            control: zero.clone(),
                        };
                        let stream = RngStream::at(plan.seed, Purpose::LocalStep, r, i as u64, 0);
                        scaffold_local(&server.model, &zero, &state, fed.client(i), &cfg, &stream)
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(err)?;
                server = server_aggregate(&server, &results, n, &cfg).map_err(err)?;
                server.control = zero.clone();
                ensure(
                    bits(&server.model) == bits(&fedavg[r as usize - 1]),
                    format!("config {case} {} differs from FedAvg at round {r}", variant.name()),
                )?;
                compared += 1;
            }
        }
    }
    Ok(format!("20 configs, {compared} rounds bit-identical for options I and II"))
}

/// Random convex quadratic `½xᵀAx + bᵀx` with `A = MᵀM/d + 0.1·I`.
fn random_quadratic(rng: &mut ChaCha8Rng, d: usize) -> (DMatrix<f64>, Vec<f64>) {
    let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let mut a = m.transpose() * &m / d as f64 + DMatrix::identity(d, d) * 0.1;
    a = (&a + a.transpose()) * 0.5;
    let b = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
    (a, b)
}

/// Plain SAGA: `x ← x − η(∇f_i(x) − α_i + mean(α))`, then `α_i ← ∇f_i(x)`.
fn saga_reference(quads: &[(DMatrix<f64>, Vec<f64>)], x0: &[f64], eta: f64, picks: &[usize]) -> Vec<Vec<f64>> {
    let n = quads.len();
    let d = x0.len();
    let grad = |i: usize, x: &[f64]| -> Vec<f64> {
        let (a, b) = &quads[i];
        (0..d).map(|r| (0..d).map(|c| a[(r, c)] * x[c]).sum::<f64>() + b[r]).collect()
    };
    let mut table = vec![vec![0.0; d]; n];
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(picks.len());
    for &i in picks {
        let g = grad(i, &x);
        let avg: Vec<f64> = (0..d).map(|j| table.iter().map(|t| t[j]).sum::<f64>() / n as f64).collect();
        for j in 0..d {
            x[j] -= eta * (g[j] - table[i][j] + avg[j]);
        }
        table[i] = g;
        out.push(x.clone());
    }
    out
}

fn saga_reduction() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, d, rounds) = (10, 4, 500);
    let quads: Vec<_> = (0..n).map(|_| random_quadratic(&mut rng, d)).collect();
    let lmax = quads
        .iter()
        .map(|(a, _)| a.clone().symmetric_eigen().eigenvalues.max())
        .fold(0.0, f64::max);
    let eta = 1.0 / (3.0 * lmax);
    let clients: Vec<Arc<dyn ClientObjective>> = quads
        .iter()
        .map(|(a, b)| {
            Arc::new(QuadraticClient::new(a.clone(), ModelVector::try_from_vec(b.clone()).unwrap(), 0.0).unwrap())
                as Arc<dyn ClientObjective>
        })
        .collect();
    let fed = Federation::new(clients).map_err(err)?;
    let plan = SamplingPlan::new(n, 1, 3).map_err(err)?;
    let cfg = AlgorithmConfig::new(Variant::ScaffoldI, eta, 1);
    let x0 = ModelVector::filled(d, 2.0);
    let models = orchestrated_models(&fed, &cfg, x0.clone(), &plan, rounds)?;
    let picks: Vec<usize> = (1..=rounds as u64).map(|r| plan.sample(r)[0]).collect();
    let reference = saga_reference(&quads, x0.as_slice(), eta, &picks);
    let worst = models
        .iter()
        .zip(&reference)
        .map(|(m, r)| m.as_slice().iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    ensure(worst <= 1e-12, format!("max model distance {worst:.3e} > 1e-12"))?;
    Ok(format!("{rounds} rounds, max model distance {worst:.2e}"))
}

/// FedAvg round map on the lower-bound pair with both clients participating:
/// `x⁺ = x((1−2μη)^K + 1)/2 + (ηG/2)Σ_{τ<K}(1 − (1−2μη)^τ)`.
fn lower_bound_next(x: f64, mu: f64, g: f64, k: usize, eta: f64) -> f64 {
    let q = 1.0 - 2.0 * mu * eta;
    let drift: f64 = (0..k).map(|t| 1.0 - q.powi(t as i32)).sum();
    x * (q.powi(k as i32) + 1.0) / 2.0 + eta * g / 2.0 * drift
}

fn lower_bound_recursion() -> Check {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for g in [1.0, 10.0] {
        for k in [2, 5] {
            for eta in [0.01, 0.1] {
                let mu = 1.0;
                let fed = LowerBoundPair::new(mu, g).map_err(err)?.federation();
                let cfg = AlgorithmConfig::new(Variant::FedAvg, eta, k);
                let models = orchestrated_models(&fed, &cfg, ModelVector::filled(1, 1.0), &SamplingPlan::full(2, 0), 100)?;
                let mut x = 1.0;
                for (r, m) in models.iter().enumerate() {
                    x = lower_bound_next(x, mu, g, k, eta);
                    let e = (m[0] - x).abs() / x.abs().max(1.0);
                    worst = worst.max(e);
                    ensure(
                        e <= 1e-12,
                        format!("G={g} K={k} η={eta}: round {} off by {e:.3e}", r + 1),
                    )?;
                }
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} parameter sets x 100 rounds, max error {worst:.2e}"))
}

fn spec_from(text: &str) -> Result<ExperimentSpec, String> {
    let mut spec = ExperimentSpec::from_toml_str(text).map_err(err)?;
    spec.output.traces = false;
    Ok(spec)
}

/// Runs a grid into a scratch directory and keeps the best local rate per configuration.
fn tuned(spec: &ExperimentSpec, axes: &[Axis], tune: TuneBy) -> Result<Vec<ResultRow>, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut spec = spec.clone();
    spec.out_override = Some(dir.path().to_path_buf());
    let report = run_grid(&spec, axes).map_err(err)?;
    Ok(best_lr(&report.rows, tune))
}

fn select<'a>(rows: &'a [ResultRow], pred: impl Fn(&ResultRow) -> bool) -> Vec<&'a ResultRow> {
    rows.iter().filter(|r| pred(r)).collect()
}

fn median_of(rows: &[&ResultRow], f: impl Fn(&ResultRow) -> f64) -> f64 {
    let mut v: Vec<f64> = rows.iter().map(|r| f(r)).collect();
    median(&mut v)
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn rounds_or_inf(r: &ResultRow) -> f64 {
    if r.diverged {
        return f64::INFINITY;
    }
    r.rounds_to_target.map_or(f64::INFINITY, |v| v as f64)
}

fn subopt_or_inf(r: &ResultRow) -> f64 {
    if r.diverged {
        return f64::INFINITY;
    }
    r.final_suboptimality.unwrap_or(f64::INFINITY)
}

const HETEROGENEITY: &str = r#"
name = "heterogeneity"
rounds = 200
seeds = [1, 2, 3, 4, 5]
init = 1.0

[objective]
kind = "quadratic_ensemble"
n_clients = 2
dim = 5
delta = 1.0
g = 1.0
mu = 0.03
beta = 1.0

[algorithm]
local_lr = 0.1
local_steps = 10
control_init = "warm_start"
variant = { kind = "scaffold_ii" }

[target]
metric = "suboptimality"
threshold = 1e-6
"#;

fn heterogeneity_sensitivity() -> Check {
    let spec = spec_from(HETEROGENEITY)?;
    let axes = [
        Axis::new("algo", ["fedavg", "scaffold_ii", "sgd"]),
        Axis::new("G", ["1", "10", "100"]),
        Axis::parse("eta_l=2^-6..2^6").map_err(err)?,
    ];
    let dir = tempfile::tempdir().map_err(err)?;
    let mut spec = spec;
    spec.out_override = Some(dir.path().to_path_buf());
    let rows = run_grid(&spec, &axes).map_err(err)?.rows;
    let by_subopt = best_lr(&rows, TuneBy::FinalSuboptimality);
    let by_rounds = best_lr(&rows, TuneBy::RoundsToTarget);

    let gs = [1.0, 10.0, 100.0];
    let final_at = |algo: &str| -> Vec<f64> {
        gs.iter()
            .map(|&g| median_of(&select(&by_subopt, |r| r.algo == algo && r.g == Some(g)), subopt_or_inf))
            .collect()
    };
    let fedavg = final_at("fedavg");
    let scaffold = final_at("scaffold_ii");
    ensure(
        fedavg[0] < fedavg[1] && fedavg[1] < fedavg[2],
        format!("(a) FedAvg final suboptimality not increasing in G: {}", sci(&fedavg)),
    )?;
    let spread = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min);
    let (sf, ss) = (spread(&fedavg), spread(&scaffold));
    ensure(ss < 10.0, format!("(b) SCAFFOLD varies {ss:.2}x across G: {}", sci(&scaffold)))?;
    ensure(sf > 10.0, format!("(b) FedAvg varies only {sf:.2}x across G"))?;

    let mut detail = Vec::new();
    for g in gs {
        let scaf = median_of(&select(&by_rounds, |r| r.algo == "scaffold_ii" && r.g == Some(g)), rounds_or_inf);
        let sgd = median_of(&select(&by_rounds, |r| r.algo == "sgd" && r.g == Some(g)), rounds_or_inf);
        ensure(
            scaf < sgd,
            format!("(c) G={g}: SCAFFOLD needs {scaf} rounds, SGD {sgd}"),
        )?;
        detail.push(format!("{scaf}/{sgd}"));
    }
    Ok(format!(
        "FedAvg {} ({sf:.0}x), SCAFFOLD {} ({ss:.2}x), rounds to 1e-6 SCAFFOLD/SGD {}",
        sci(&fedavg),
        sci(&scaffold),
        detail.join(" ")
    ))
}

fn linear_convergence() -> Check {
    let fed = QuadraticEnsemble::new(10, 10, 1.0, 10.0, 5).with_mu(0.1).build().map_err(err)?;
    let cfg = AlgorithmConfig::new(Variant::ScaffoldII, 0.05, 10);
    let out = run_experiment(
        &fed,
        &cfg,
        ModelVector::filled(10, 1.0),
        100,
        &SamplingPlan::full(10, 1),
        OutputSelector::LastIterate,
        None,
        RunOptions::default(),
    )
    .map_err(err)?;
    ensure(!out.diverged, "run diverged")?;
    let pts: Vec<(f64, f64)> = out.trace[10..=100]
        .iter()
        .map(|m| (m.round as f64, m.suboptimality.unwrap_or(f64::NAN).ln()))
        .collect();
    ensure(pts.iter().all(|p| p.1.is_finite()), "suboptimality reached zero or became non-finite")?;
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - (my + slope * (p.0 - mx))).powi(2)).sum();
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    ensure(slope < 0.0 && r2 >= 0.99, format!("slope {slope:.4}, R² {r2:.5}"))?;
    Ok(format!("slope {slope:.4} per round, R² {r2:.5}"))
}

const SIMILAR_HESSIANS: &str = r#"
name = "local_steps"
rounds = 2000
seeds = [1, 2, 3, 4, 5]
init = 1.0
stop_at_target = true

[objective]
kind = "quadratic_ensemble"
n_clients = 10
dim = 10
delta = 0.0
g = 10.0
mu = 0.1

[algorithm]
local_lr = 0.1
local_steps = 1
variant = { kind = "scaffold_theory" }

[target]
metric = "suboptimality"
threshold = 1e-8
"#;

fn local_step_benefit() -> Check {
    let spec = spec_from(SIMILAR_HESSIANS)?;
    let rows = tuned(
        &spec,
        &[Axis::new("K", [1, 10]), Axis::parse("eta_l=2^-6..2^6").map_err(err)?],
        TuneBy::RoundsToTarget,
    )?;
    let at = |k: usize| median_of(&select(&rows, |r| r.local_steps == k), rounds_or_inf);
    let (one, ten) = (at(1), at(10));
    ensure(
        ten.is_finite() && ten <= one / 4.0,
        format!("K=10 needs {ten} rounds, K=1 needs {one}"),
    )?;
    Ok(format!("rounds to 1e-8: K=1 {one}, K=10 {ten} (ratio {:.3})", ten / one))
}

fn classification_spec(similarity: f64, sampled: usize) -> Result<ExperimentSpec, String> {
    spec_from(&format!(
        r#"
name = "classification"
rounds = 400
sampled = {sampled}
seeds = [1, 2, 3, 4, 5]
stop_at_target = true

[objective]
kind = "logistic_split"
n = 2000
dim = 20
classes = 10
n_clients = 20
similarity = {similarity}
separation = {SEPARATION}
anisotropy = {ANISOTROPY}
batch_fraction = 0.2

[algorithm]
local_lr = 0.1
local_steps = 25
variant = {{ kind = "fedavg" }}

[target]
metric = "accuracy"
threshold = 0.5
"#
    ))
}

const SEPARATION: f64 = 0.5;
const ANISOTROPY: f64 = 100.0;

fn classification_rounds(similarity: f64, sampled: usize, algos: &[&str]) -> Result<Vec<f64>, String> {
    let spec = classification_spec(similarity, sampled)?;
    let rows = tuned(
        &spec,
        &[Axis::new("algo", algos.iter().copied()), Axis::parse("eta_l=2^-6..2^6").map_err(err)?],
        TuneBy::RoundsToTarget,
    )?;
    Ok(algos
        .iter()
        .map(|a| median_of(&select(&rows, |r| r.algo == *a), rounds_or_inf))
        .collect())
}

fn classification_ordering() -> Check {
    let algos = ["scaffold_ii", "fedavg", "sgd"];
    let s0 = classification_rounds(0.0, 4, &algos)?;
    let s10 = classification_rounds(10.0, 4, &algos)?;
    let (scaf, avg, sgd) = (s0[0], s0[1], s0[2]);
    ensure(
        scaf < avg && scaf <= sgd,
        format!("s=0%: SCAFFOLD {scaf}, FedAvg {avg}, SGD {sgd}"),
    )?;
    ensure(
        s10[0] < s10[2] && s10[1] < s10[2],
        format!("s=10%: SCAFFOLD {}, FedAvg {}, SGD {}", s10[0], s10[1], s10[2]),
    )?;
    Ok(format!(
        "rounds to 0.5 accuracy (SCAFFOLD/FedAvg/SGD): s=0% {scaf}/{avg}/{sgd}, s=10% {}/{}/{}",
        s10[0], s10[1], s10[2]
    ))
}

fn sampling_resilience() -> Check {
    let full = classification_rounds(10.0, 4, &["scaffold_ii"])?[0];
    let sparse = classification_rounds(10.0, 1, &["scaffold_ii"])?[0];
    let ratio = sparse / full;
    ensure(ratio < 4.0, format!("20% sampling {full} rounds, 5% sampling {sparse} rounds"))?;
    Ok(format!("SCAFFOLD rounds 20% {full}, 5% {sparse} (x{ratio:.2})"))
}

fn metric_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_fd = 0.0f64;
    let ensemble = QuadraticEnsemble::new(4, 6, 0.7, 3.0, 2).build().map_err(err)?;
    let pair = LowerBoundPair::new(1.0, 10.0).map_err(err)?.federation();
    let data = fedsim::objectives::make_synthetic_classification(80, 5, 3, 4).map_err(err)?;
    let logistic: Arc<dyn ClientObjective> = Arc::new(LogisticClient::new(data, 0.01, 1.0).map_err(err)?);
    let objectives: Vec<&dyn ClientObjective> = ensemble
        .clients()
        .iter()
        .chain(pair.clients())
        .map(|c| c.as_ref())
        .chain([logistic.as_ref()])
        .collect();
    for obj in objectives {
        for _ in 0..10 {
            let x = ModelVector::try_from_vec((0..obj.dim()).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let exact = obj.gradient(&x);
            let fd = finite_difference_gradient(obj, &x, 1e-5);
            let rel = exact.dist_sq(&fd).sqrt() / exact.norm().max(1e-8);
            worst_fd = worst_fd.max(rel);
        }
    }
    ensure(worst_fd <= 1e-5, format!("finite-difference relative error {worst_fd:.3e}"))?;

    let mut worst_bhd = 0.0f64;
    for (i, delta) in [0.1, 0.5, 1.0, 1.5].into_iter().enumerate() {
        let fed = QuadraticEnsemble::new(6, 8, delta, 1.0, i as u64).build().map_err(err)?;
        let measured = measure_bhd(fed.clients()).map_err(err)?;
        worst_bhd = worst_bhd.max((measured - delta).abs() / delta);
    }
    ensure(worst_bhd <= 0.05, format!("measured δ off by {:.2}%", 100.0 * worst_bhd))?;

    let x_star = ensemble.optimum().unwrap().x_star.clone();
    let exact: Vec<ClientState> = (0..ensemble.len())
        .map(|i| ClientState {
            id: i,
            control: ensemble.client(i).gradient(&x_star),
        })
        .collect();
    let lag = compute_control_lag(&exact, &ensemble, Some(&x_star)).map_err(err)?;
    ensure(lag == 0.0, format!("control lag {lag:e} at exact controls"))?;

    let x0 = ModelVector::filled(6, 1.0);
    let gmax = ensemble
        .clients()
        .iter()
        .map(|c| c.gradient(&x0).norm_sq())
        .fold(0.0, f64::max);
    let k = 10;
    let mut last = f64::INFINITY;
    for eta in [1e-1, 1e-2, 1e-3, 1e-4, 1e-6] {
        let cfg = AlgorithmConfig::new(Variant::FedAvg, eta, k);
        let out = run_experiment(
            &ensemble,
            &cfg,
            x0.clone(),
            1,
            &SamplingPlan::full(ensemble.len(), 0),
            OutputSelector::LastIterate,
            None,
            RunOptions::default(),
        )
        .map_err(err)?;
        let drift = out.trace[1].drift.unwrap();
        let bound = (k as f64 * eta).powi(2) * gmax;
        ensure(drift <= bound, format!("η={eta}: drift {drift:.3e} exceeds bound {bound:.3e}"))?;
        ensure(drift < last, format!("drift not shrinking with η: {drift:e} after {last:e}"))?;
        last = drift;
    }
    Ok(format!(
        "FD error {worst_fd:.1e}, BHD error {:.3}%, control lag 0, drift {last:.1e} at Kη=1e-5",
        100.0 * worst_bhd
    ))
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria = [
        Criterion { id: 1, name: "zero-variate equivalence", budget: Duration::from_secs(10), run: zero_variate_equivalence },
        Criterion { id: 2, name: "SAGA reduction", budget: Duration::from_secs(10), run: saga_reduction },
        Criterion { id: 3, name: "lower-bound recursion", budget: Duration::from_secs(5), run: lower_bound_recursion },
        Criterion { id: 4, name: "heterogeneity sensitivity", budget: Duration::from_secs(120), run: heterogeneity_sensitivity },
        Criterion { id: 5, name: "linear convergence", budget: Duration::from_secs(10), run: linear_convergence },
        Criterion { id: 6, name: "local-step benefit at zero Hessian dissimilarity", budget: Duration::from_secs(60), run: local_step_benefit },
        Criterion { id: 7, name: "classification ordering", budget: Duration::from_secs(300), run: classification_ordering },
        Criterion { id: 8, name: "sampling resilience", budget: Duration::from_secs(300), run: sampling_resilience },
        Criterion { id: 9, name: "metric correctness", budget: Duration::from_secs(10), run: metric_correctness },
    ];
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.iter().any(|f| f == &c.id.to_string())) {
        let start = Instant::now();
        let result = (c.run)();
        let elapsed = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) if elapsed <= c.budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {:?} budget", c.budget)),
            Err(e) => (false, e),
        };
        failed += usize::from(!ok);
        println!(
            "{} [{}] {} ({:.2} s): {}",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            elapsed.as_secs_f64(),
            detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
