use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spec::{ExperimentSpec, ObjectiveSpec};
use crate::algorithms::{ControlInit, Variant};
use crate::error::{FedError, Result};
use crate::orchestrator::{run_experiment, ExperimentOutcome, RoundMetrics, RunOptions, SamplingPlan};
use crate::vector::ModelVector;

/// Columns of a per-round trace file.
pub const TRACE_HEADER: [&str; 7] = [
    "round",
    "suboptimality",
    "grad_norm_sq",
    "drift",
    "control_lag",
    "comm_bytes",
    "grad_evals",
];

/// One (config, seed) run flattened to scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub name: String,
    pub cell: String,
    pub objective: String,
    pub algo: String,
    #[serde(rename = "N")]
    pub n_clients: usize,
    #[serde(rename = "S")]
    pub sampled: usize,
    #[serde(rename = "K")]
    pub local_steps: usize,
    #[serde(rename = "R")]
    pub rounds: usize,
    /// Model dimension.
    pub d: usize,
    pub init: f64,
    pub eta_l: f64,
    pub eta_g: f64,
    pub mu_prox: Option<f64>,
    pub control_init: String,
    pub s: Option<f64>,
    #[serde(rename = "G")]
    pub g: Option<f64>,
    pub delta: Option<f64>,
    pub sigma2: Option<f64>,
    pub mu: Option<f64>,
    pub threshold: Option<f64>,
    pub seed: u64,
    pub rounds_run: u64,
    pub rounds_to_target: Option<u64>,
    pub diverged: bool,
    pub final_suboptimality: Option<f64>,
    pub final_grad_norm_sq: f64,
    pub final_accuracy: Option<f64>,
    pub final_drift: Option<f64>,
    pub final_control_lag: Option<f64>,
    pub output_suboptimality: Option<f64>,
    pub output_accuracy: Option<f64>,
    pub total_comm_bytes: u64,
    pub total_grad_evals: u64,
}

impl ResultRow {
    fn new(spec: &ExperimentSpec, cell: &str, seed: u64, out: &ExperimentOutcome, fed: &crate::Federation) -> Self {
        let last = out.last();
        let (s, g, delta, sigma2, mu) = match &spec.objective {
            ObjectiveSpec::LowerBoundPair { g, mu } => (None, Some(*g), None, None, Some(*mu)),
            ObjectiveSpec::QuadraticEnsemble {
                g,
                delta,
                noise_variance,
                mu,
                ..
            } => (None, Some(*g), Some(*delta), Some(*noise_variance), Some(*mu)),
            ObjectiveSpec::LogisticSplit {
                similarity,
                noise_variance,
                ..
            }
            | ObjectiveSpec::CsvSplit {
                similarity,
                noise_variance,
                ..
            } => (Some(*similarity), None, None, Some(*noise_variance), None),
        };
        let cfg = &spec.algorithm;
        ResultRow {
            name: spec.name.clone(),
            cell: cell.to_string(),
            objective: spec.objective.kind().to_string(),
            algo: cfg.variant.name().to_string(),
            n_clients: spec.n_clients(),
            sampled: spec.sampled_clients(),
            local_steps: cfg.local_steps,
            rounds: spec.rounds,
            d: fed.dim(),
            init: spec.init,
            eta_l: cfg.local_lr,
            eta_g: cfg.global_lr,
            mu_prox: match cfg.variant {
                Variant::FedProx { mu_prox } => Some(mu_prox),
                _ => None,
            },
            control_init: match cfg.control_init {
                ControlInit::Zeros => "zeros",
                ControlInit::WarmStart => "warm_start",
            }
            .to_string(),
            s,
            g,
            delta,
            sigma2,
            mu,
            threshold: spec.target.map(|t| t.threshold),
            seed,
            rounds_run: last.round,
            rounds_to_target: out.rounds_to_target,
            diverged: out.diverged,
            final_suboptimality: last.suboptimality,
            final_grad_norm_sq: last.grad_norm_sq,
            final_accuracy: last.accuracy,
            final_drift: last.drift,
            final_control_lag: last.control_lag,
            output_suboptimality: fed.suboptimality(&out.output),
            output_accuracy: fed.accuracy(&out.output),
            total_comm_bytes: out.trace.iter().map(|m| m.comm_bytes).sum(),
            total_grad_evals: out.trace.iter().map(|m| m.grad_evals).sum(),
        }
    }

    /// Identity of the configuration, excluding seed, local rate and cell label.
    pub fn config_key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}|{}|{}|{}|{:?}|{}|{}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}",
            self.name,
            self.objective,
            self.algo,
            self.n_clients,
            self.sampled,
            self.local_steps,
            self.rounds,
            self.d,
            self.init,
            self.mu_prox,
            self.eta_g,
            self.control_init,
            self.s,
            self.g,
            self.delta,
            self.sigma2,
            self.mu,
            self.threshold,
        )
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_trace<W: Write>(out: W, trace: &[RoundMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for m in trace {
        w.write_record([
            m.round.to_string(),
            fmt_opt(m.suboptimality),
            fmt_f64(m.grad_norm_sq),
            fmt_opt(m.drift),
            fmt_opt(m.control_lag),
            m.comm_bytes.to_string(),
            m.grad_evals.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rows<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(FedError::from)).collect()
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub rows: Vec<ResultRow>,
    pub rows_path: PathBuf,
    pub trace_paths: Vec<PathBuf>,
}

impl RunReport {
    /// True when every run diverged.
    pub fn all_diverged(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.diverged)
    }
}

/// Runs one configuration for one seed without touching the filesystem.
pub fn run_seed(spec: &ExperimentSpec, seed: u64) -> Result<(ResultRow, ExperimentOutcome)> {
    run_seed_in_cell(spec, "", seed)
}

fn run_seed_in_cell(spec: &ExperimentSpec, cell: &str, seed: u64) -> Result<(ResultRow, ExperimentOutcome)> {
    let fed = spec.objective.build(seed)?;
    let plan = SamplingPlan::new(fed.len(), spec.sampled_clients(), seed)?;
    let x0 = ModelVector::filled(fed.dim(), spec.init);
    let options = RunOptions {
        stop_at_target: spec.stop_at_target,
        threads: spec.threads,
    };
    let out = run_experiment(&fed, &spec.algorithm, x0, spec.rounds, &plan, spec.selector, spec.target, options)?;
    Ok((ResultRow::new(spec, cell, seed, &out, &fed), out))
}

fn run_cell(spec: &ExperimentSpec, cell: &str, dir: &Path) -> Result<(Vec<ResultRow>, Vec<PathBuf>)> {
    let mut rows = Vec::with_capacity(spec.seeds.len());
    let mut traces = Vec::new();
    for &seed in &spec.seeds {
        let (row, out) = run_seed_in_cell(spec, cell, seed)?;
        if spec.output.traces {
            fs::create_dir_all(dir)?;
            let path = dir.join(format!("trace_seed{seed}.csv"));
            write_trace(fs::File::create(&path)?, &out.trace)?;
            traces.push(path);
        }
        rows.push(row);
    }
    Ok((rows, traces))
}

/// Runs every seed of `spec`, writing traces and `rows.csv` under
/// `<out>/<name>/`.
pub fn run_single(spec: &ExperimentSpec) -> Result<RunReport> {
    spec.validate()?;
    let dir = spec.out_dir().join(&spec.name);
    let (rows, trace_paths) = run_cell(spec, "", &dir)?;
    fs::create_dir_all(&dir)?;
    let rows_path = dir.join("rows.csv");
    write_rows(fs::File::create(&rows_path)?, &rows)?;
    Ok(RunReport {
        rows,
        rows_path,
        trace_paths,
    })
}

/// One swept field and its values.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub values: Vec<String>,
}

impl Axis {
    pub fn new(name: impl Into<String>, values: impl IntoIterator<Item = impl ToString>) -> Self {
        Axis {
            name: name.into(),
            values: values.into_iter().map(|v| v.to_string()).collect(),
        }
    }

    /// Parses `name=v1,v2,...`. A value `2^a..2^b` expands to the powers of
    /// two between the exponents.
    pub fn parse(text: &str) -> Result<Self> {
        let (name, list) = text
            .split_once('=')
            .ok_or_else(|| FedError::config(text, "axis must look like name=v1,v2"))?;
        let name = name.trim();
        let mut values = Vec::new();
        for v in list.split(',').map(str::trim).filter(|v| !v.is_empty()) {
            match parse_pow2_range(v) {
                Some(range) => values.extend(range.into_iter().map(|x| x.to_string())),
                None => values.push(v.to_string()),
            }
        }
        if name.is_empty() || values.is_empty() {
            return Err(FedError::config(text, "axis needs a name and at least one value"));
        }
        Ok(Axis {
            name: name.to_string(),
            values,
        })
    }
}

fn parse_pow2_range(v: &str) -> Option<Vec<f64>> {
    let (a, b) = v.split_once("..")?;
    let a: i32 = a.trim().strip_prefix("2^")?.parse().ok()?;
    let b: i32 = b.trim().strip_prefix("2^")?.parse().ok()?;
    (a <= b).then(|| (a..=b).map(|e| 2f64.powi(e)).collect())
}

/// Default local step-size grid: `2^-10 … 2^0`.
pub fn default_lr_grid() -> Vec<f64> {
    (-10..=0).map(|e| 2f64.powi(e)).collect()
}

/// Expands the Cartesian product of `axes` over `base`; the last axis varies
/// fastest. Every cell is validated before anything runs.
pub fn grid_cells(base: &ExperimentSpec, axes: &[Axis]) -> Result<Vec<(String, ExperimentSpec)>> {
    let mut cells = vec![(String::new(), base.clone())];
    for axis in axes {
        let mut next = Vec::with_capacity(cells.len() * axis.values.len());
        for (label, spec) in &cells {
            for v in &axis.values {
                let mut s = spec.clone();
                s.set(&axis.name, v)?;
                let l = if label.is_empty() {
                    format!("{}={v}", axis.name)
                } else {
                    format!("{label},{}={v}", axis.name)
                };
                next.push((l, s));
            }
        }
        cells = next;
    }
    for (label, spec) in &cells {
        spec.validate().map_err(|e| match e {
            FedError::Config { path, message } => FedError::config(path, format!("{message} (cell {label})")),
            other => other,
        })?;
    }
    Ok(cells)
}

fn cell_dir_name(index: usize, label: &str) -> String {
    let clean: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "=.-_".contains(c) { c } else { '_' })
        .collect();
    format!("{index:04}_{clean}")
}

/// Runs every grid cell for every seed on `spec.workers` threads. Rows come
/// back in cell order whatever the worker count.
pub fn run_grid(base: &ExperimentSpec, axes: &[Axis]) -> Result<RunReport> {
    let cells = grid_cells(base, axes)?;
    let root = base.out_dir().join(&base.name);
    let job = |(i, (label, spec)): (usize, &(String, ExperimentSpec))| {
        run_cell(spec, label, &root.join(cell_dir_name(i, label)))
    };
    let results: Vec<Result<(Vec<ResultRow>, Vec<PathBuf>)>> = if base.workers <= 1 {
        cells.iter().enumerate().map(job).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(base.workers)
            .build()
            .map_err(|e| FedError::param(format!("thread pool: {e}")))?
            .install(|| cells.par_iter().enumerate().map(job).collect())
    };
    let mut rows = Vec::new();
    let mut trace_paths = Vec::new();
    for r in results {
        let (r, t) = r?;
        rows.extend(r);
        trace_paths.extend(t);
    }
    fs::create_dir_all(&root)?;
    let rows_path = root.join("rows.csv");
    write_rows(fs::File::create(&rows_path)?, &rows)?;
    Ok(RunReport {
        rows,
        rows_path,
        trace_paths,
    })
}

/// Score used to pick the local step size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneBy {
    RoundsToTarget,
    FinalSuboptimality,
    FinalGradNormSq,
    FinalAccuracy,
}

impl TuneBy {
    /// Lower is better; diverged runs score +∞.
    fn score(self, r: &ResultRow) -> f64 {
        if r.diverged {
            return f64::INFINITY;
        }
        let v = match self {
            TuneBy::RoundsToTarget => r.rounds_to_target.map(|v| v as f64),
            TuneBy::FinalSuboptimality => r.final_suboptimality,
            TuneBy::FinalGradNormSq => Some(r.final_grad_norm_sq),
            TuneBy::FinalAccuracy => r.final_accuracy.map(|a| -a),
        };
        v.filter(|v| !v.is_nan()).unwrap_or(f64::INFINITY)
    }

    fn tiebreak(r: &ResultRow) -> f64 {
        if r.diverged {
            return f64::INFINITY;
        }
        r.final_suboptimality
            .or(r.final_accuracy.map(|a| -a))
            .unwrap_or(r.final_grad_norm_sq)
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        let (a, b) = (values[n / 2 - 1], values[n / 2]);
        if a == b {
            a
        } else {
            0.5 * (a + b)
        }
    }
}

/// For every configuration, keeps the rows of the local step size with the
/// best median score across seeds. Ties go to the better median final
/// metric, then to the smaller step.
pub fn best_lr(rows: &[ResultRow], tune: TuneBy) -> Vec<ResultRow> {
    let mut groups: BTreeMap<String, BTreeMap<u64, Vec<&ResultRow>>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows {
        let key = r.config_key();
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().entry(r.eta_l.to_bits()).or_default().push(r);
    }
    let mut out = Vec::new();
    for key in order {
        let by_lr = &groups[&key];
        let best = by_lr
            .values()
            .map(|rs| {
                let mut s: Vec<f64> = rs.iter().map(|r| tune.score(r)).collect();
                let mut t: Vec<f64> = rs.iter().map(|r| TuneBy::tiebreak(r)).collect();
                (median(&mut s), median(&mut t), rs[0].eta_l, rs)
            })
            .min_by(|a, b| {
                a.0.total_cmp(&b.0)
                    .then(a.1.total_cmp(&b.1))
                    .then(a.2.total_cmp(&b.2))
            });
        if let Some((_, _, _, rs)) = best {
            out.extend(rs.iter().map(|r| (*r).clone()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        let a = Axis::parse("K=1, 2,5").unwrap();
        assert_eq!(a.values, ["1", "2", "5"]);
        let a = Axis::parse("eta_l=2^-2..2^0").unwrap();
        assert_eq!(a.values, ["0.25", "0.5", "1"]);
        assert!(Axis::parse("K").is_err());
        assert!(Axis::parse("K=").is_err());
        assert_eq!(default_lr_grid().len(), 11);
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&mut [1.0, f64::INFINITY, f64::INFINITY]), f64::INFINITY);
        assert_eq!(median(&mut [1.0, f64::INFINITY]), f64::INFINITY);
    }
}
