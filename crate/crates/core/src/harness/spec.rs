//! Experiment configuration files.
//!
//! One TOML document describes one experiment:
//!
//! ```toml
//! name = "heterogeneity"
//! rounds = 200
//! sampled = 2
//! seeds = [1, 2, 3]
//! init = 1.0
//!
//! [objective]
//! kind = "quadratic_ensemble"
//! n_clients = 2
//! dim = 2
//! delta = 1.0
//! g = 10.0
//!
//! [algorithm]
//! local_lr = 0.125
//! global_lr = 1.0
//! local_steps = 10
//! variant = { kind = "scaffold_ii" }
//!
//! [target]
//! metric = "suboptimality"
//! threshold = 1e-6
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgorithmConfig, ControlInit, Variant};
use crate::error::{FedError, Result};
use crate::objectives::{
    logistic_clients, split_by_similarity, Dataset, Federation, LowerBoundPair, QuadraticEnsemble,
    SyntheticClassification, DEFAULT_BATCH_FRACTION,
};
use crate::orchestrator::{OutputSelector, Target, TargetMetric};

/// Environment variable overriding `output.dir`.
pub const OUT_DIR_ENV: &str = "FEDSIM_OUT_DIR";

fn default_beta() -> f64 {
    1.0
}
fn default_mu() -> f64 {
    0.1
}
fn default_batch_fraction() -> f64 {
    DEFAULT_BATCH_FRACTION
}
fn default_separation() -> f64 {
    SyntheticClassification::DEFAULT_SEPARATION
}
fn default_anisotropy() -> f64 {
    1.0
}
fn default_sampled() -> usize {
    0
}
fn default_threads() -> usize {
    1
}
fn default_workers() -> usize {
    1
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    LowerBoundPair {
        mu: f64,
        g: f64,
    },
    QuadraticEnsemble {
        n_clients: usize,
        dim: usize,
        delta: f64,
        g: f64,
        #[serde(default = "default_mu")]
        mu: f64,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default)]
        noise_variance: f64,
        /// Construction seed; the run seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    LogisticSplit {
        n: usize,
        dim: usize,
        classes: usize,
        n_clients: usize,
        similarity: f64,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_anisotropy")]
        anisotropy: f64,
        #[serde(default)]
        l2: f64,
        #[serde(default = "default_batch_fraction")]
        batch_fraction: f64,
        #[serde(default)]
        noise_variance: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    CsvSplit {
        path: PathBuf,
        n_clients: usize,
        similarity: f64,
        #[serde(default)]
        l2: f64,
        #[serde(default = "default_batch_fraction")]
        batch_fraction: f64,
        #[serde(default)]
        noise_variance: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

impl ObjectiveSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ObjectiveSpec::LowerBoundPair { .. } => "lower_bound_pair",
            ObjectiveSpec::QuadraticEnsemble { .. } => "quadratic_ensemble",
            ObjectiveSpec::LogisticSplit { .. } => "logistic_split",
            ObjectiveSpec::CsvSplit { .. } => "csv_split",
        }
    }

    pub fn n_clients(&self) -> usize {
        match self {
            ObjectiveSpec::LowerBoundPair { .. } => 2,
            ObjectiveSpec::QuadraticEnsemble { n_clients, .. }
            | ObjectiveSpec::LogisticSplit { n_clients, .. }
            | ObjectiveSpec::CsvSplit { n_clients, .. } => *n_clients,
        }
    }

    /// Builds the federation; `run_seed` stands in for an absent objective seed.
    pub fn build(&self, run_seed: u64) -> Result<Federation> {
        let built = match self {
            ObjectiveSpec::LowerBoundPair { mu, g } => Ok(LowerBoundPair::new(*mu, *g)?.federation()),
            ObjectiveSpec::QuadraticEnsemble {
                n_clients,
                dim,
                delta,
                g,
                mu,
                beta,
                noise_variance,
                seed,
            } => QuadraticEnsemble {
                n_clients: *n_clients,
                dim: *dim,
                delta: *delta,
                g: *g,
                mu: *mu,
                beta: *beta,
                noise_variance: *noise_variance,
                seed: seed.unwrap_or(run_seed),
            }
            .build(),
            ObjectiveSpec::LogisticSplit {
                n,
                dim,
                classes,
                n_clients,
                similarity,
                separation,
                anisotropy,
                l2,
                batch_fraction,
                noise_variance,
                seed,
            } => {
                let seed = seed.unwrap_or(run_seed);
                let data = SyntheticClassification {
                    n: *n,
                    dim: *dim,
                    classes: *classes,
                    separation: *separation,
                    anisotropy: *anisotropy,
                    seed,
                }
                .generate()?;
                let shards = split_by_similarity(&data, *similarity, *n_clients, seed)?;
                logistic_clients(&data, &shards, *l2, *batch_fraction, *noise_variance)
            }
            ObjectiveSpec::CsvSplit {
                path,
                n_clients,
                similarity,
                l2,
                batch_fraction,
                noise_variance,
                seed,
            } => {
                let seed = seed.unwrap_or(run_seed);
                let data = Dataset::from_csv_path(path)?;
                let shards = split_by_similarity(&data, *similarity, *n_clients, seed)?;
                logistic_clients(&data, &shards, *l2, *batch_fraction, *noise_variance)
            }
        };
        built.map_err(|e| match e {
            FedError::Parameter(m) => FedError::config("objective", m),
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Write one per-round CSV per seed.
    #[serde(default = "yes")]
    pub traces: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: default_out_dir(),
            traces: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub rounds: usize,
    /// Clients per round; 0 means all.
    #[serde(default = "default_sampled")]
    pub sampled: usize,
    pub seeds: Vec<u64>,
    /// Every coordinate of the initial model.
    #[serde(default)]
    pub init: f64,
    #[serde(default)]
    pub stop_at_target: bool,
    /// Threads used inside one run.
    #[serde(default = "default_threads")]
    pub threads: usize,
    /// Grid cells executed concurrently.
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub objective: ObjectiveSpec,
    pub algorithm: AlgorithmConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    #[serde(default)]
    pub selector: OutputSelector,
    #[serde(default)]
    pub output: OutputSpec,
    /// Takes precedence over both `output.dir` and the environment.
    #[serde(skip)]
    pub out_override: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| {
            let path = e
                .span()
                .map(|s| format!("byte {}..{}", s.start, s.end))
                .unwrap_or_else(|| "<document>".to_string());
            FedError::config(path, e.message().to_string())
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        ExperimentSpec::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| FedError::config("<document>", e.to_string()))
    }

    pub fn n_clients(&self) -> usize {
        self.objective.n_clients()
    }

    /// `sampled`, with 0 resolved to all clients.
    pub fn sampled_clients(&self) -> usize {
        if self.sampled == 0 {
            self.n_clients()
        } else {
            self.sampled
        }
    }

    /// Output directory after applying the environment override.
    pub fn out_dir(&self) -> PathBuf {
        if let Some(dir) = &self.out_override {
            return dir.clone();
        }
        std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output.dir.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(FedError::config("name", "must not be empty"));
        }
        if self.rounds == 0 {
            return Err(FedError::config("rounds", "must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(FedError::config("seeds", "at least one seed is required"));
        }
        let n = self.n_clients();
        if n == 0 {
            return Err(FedError::config("objective.n_clients", "must be >= 1"));
        }
        if self.sampled > n {
            return Err(FedError::config("sampled", format!("{} exceeds N = {n}", self.sampled)));
        }
        if !self.init.is_finite() {
            return Err(FedError::config("init", "must be finite"));
        }
        self.algorithm
            .validate()
            .map_err(|e| FedError::config("algorithm", e.to_string()))?;
        if let Some(t) = &self.target {
            if !t.threshold.is_finite() {
                return Err(FedError::config("target.threshold", "must be finite"));
            }
            let classifier = matches!(
                self.objective,
                ObjectiveSpec::LogisticSplit { .. } | ObjectiveSpec::CsvSplit { .. }
            );
            if t.metric == TargetMetric::Accuracy && !classifier {
                return Err(FedError::config("target.metric", "accuracy needs a classification objective"));
            }
            if t.metric == TargetMetric::Suboptimality && classifier {
                return Err(FedError::config("target.metric", "suboptimality needs a known optimum"));
            }
        }
        match &self.objective {
            ObjectiveSpec::LowerBoundPair { mu, g } => {
                if !(*mu > 0.0) || !(*g > 0.0) {
                    return Err(FedError::config("objective", "lower-bound pair needs mu > 0 and g > 0"));
                }
            }
            ObjectiveSpec::QuadraticEnsemble {
                n_clients,
                dim,
                delta,
                g,
                mu,
                beta,
                noise_variance,
                ..
            } => {
                if *n_clients < 2 || *dim < 1 {
                    return Err(FedError::config("objective", "ensemble needs n_clients >= 2 and dim >= 1"));
                }
                if !(*mu > 0.0 && mu <= beta) {
                    return Err(FedError::config("objective.mu", "need 0 < mu <= beta"));
                }
                if !(*delta >= 0.0 && *delta <= 2.0 * beta) {
                    return Err(FedError::config("objective.delta", "need 0 <= delta <= 2*beta"));
                }
                if !(*g >= 0.0) || !(*noise_variance >= 0.0) {
                    return Err(FedError::config("objective", "g and noise_variance must be >= 0"));
                }
            }
            ObjectiveSpec::LogisticSplit {
                n,
                dim,
                classes,
                n_clients,
                similarity,
                batch_fraction,
                ..
            } => {
                if *n < *classes || *dim < 2 || *n < *n_clients {
                    return Err(FedError::config("objective", "need n >= classes, n >= n_clients and dim >= 2"));
                }
                check_split(*similarity, *batch_fraction)?;
            }
            ObjectiveSpec::CsvSplit {
                similarity,
                batch_fraction,
                ..
            } => check_split(*similarity, *batch_fraction)?,
        }
        Ok(())
    }

    /// Sets one field by its grid-axis name.
    pub fn set(&mut self, axis: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<f64> {
            v.trim()
                .parse::<f64>()
                .map_err(|_| FedError::config(axis, format!("not a number: {v:?}")))
        };
        let int = |v: &str| -> Result<usize> {
            v.trim()
                .parse::<usize>()
                .map_err(|_| FedError::config(axis, format!("not an integer: {v:?}")))
        };
        match axis {
            "K" | "local_steps" => self.algorithm.local_steps = int(value)?,
            "eta_l" | "local_lr" => self.algorithm.local_lr = num(value)?,
            "eta_g" | "global_lr" => self.algorithm.global_lr = num(value)?,
            "S" | "sampled" => self.sampled = int(value)?,
            "R" | "rounds" => self.rounds = int(value)?,
            "init" => self.init = num(value)?,
            "algo" | "algorithm" => self.algorithm.variant = parse_variant(value, self.algorithm.variant)?,
            "mu_prox" => match &mut self.algorithm.variant {
                Variant::FedProx { mu_prox } => *mu_prox = num(value)?,
                _ => return Err(FedError::config(axis, "only applies to fedprox")),
            },
            "control_init" => {
                self.algorithm.control_init = match value.trim() {
                    "zeros" => ControlInit::Zeros,
                    "warm_start" => ControlInit::WarmStart,
                    other => return Err(FedError::config(axis, format!("unknown control init {other:?}"))),
                }
            }
            "threshold" => match &mut self.target {
                Some(t) => t.threshold = num(value)?,
                None => return Err(FedError::config(axis, "no target configured")),
            },
            _ => self.set_objective(axis, value, num, int)?,
        }
        Ok(())
    }

    fn set_objective(
        &mut self,
        axis: &str,
        value: &str,
        num: impl Fn(&str) -> Result<f64>,
        int: impl Fn(&str) -> Result<usize>,
    ) -> Result<()> {
        let kind = self.objective.kind();
        let unknown = || FedError::config(axis, format!("unknown axis for objective {kind}"));
        match (&mut self.objective, axis) {
            (ObjectiveSpec::LowerBoundPair { g, .. }, "G" | "g") => *g = num(value)?,
            (ObjectiveSpec::LowerBoundPair { mu, .. }, "mu") => *mu = num(value)?,
            (ObjectiveSpec::QuadraticEnsemble { g, .. }, "G" | "g") => *g = num(value)?,
            (ObjectiveSpec::QuadraticEnsemble { delta, .. }, "delta") => *delta = num(value)?,
            (ObjectiveSpec::QuadraticEnsemble { mu, .. }, "mu") => *mu = num(value)?,
            (ObjectiveSpec::QuadraticEnsemble { dim, .. }, "d" | "dim") => *dim = int(value)?,
            (ObjectiveSpec::QuadraticEnsemble { n_clients, .. }, "N" | "n_clients") => *n_clients = int(value)?,
            (ObjectiveSpec::QuadraticEnsemble { noise_variance, .. }, "sigma2" | "noise_variance") => {
                *noise_variance = num(value)?
            }
            (ObjectiveSpec::LogisticSplit { similarity, .. }, "s" | "similarity") => *similarity = num(value)?,
            (ObjectiveSpec::LogisticSplit { n_clients, .. }, "N" | "n_clients") => *n_clients = int(value)?,
            (ObjectiveSpec::LogisticSplit { l2, .. }, "l2") => *l2 = num(value)?,
            (ObjectiveSpec::LogisticSplit { separation, .. }, "separation") => *separation = num(value)?,
            (ObjectiveSpec::LogisticSplit { anisotropy, .. }, "anisotropy") => *anisotropy = num(value)?,
            (ObjectiveSpec::LogisticSplit { batch_fraction, .. }, "batch_fraction") => *batch_fraction = num(value)?,
            (ObjectiveSpec::CsvSplit { similarity, .. }, "s" | "similarity") => *similarity = num(value)?,
            (ObjectiveSpec::CsvSplit { n_clients, .. }, "N" | "n_clients") => *n_clients = int(value)?,
            _ => return Err(unknown()),
        }
        Ok(())
    }
}

fn check_split(similarity: f64, batch_fraction: f64) -> Result<()> {
    if !(0.0..=100.0).contains(&similarity) {
        return Err(FedError::config("objective.similarity", "must lie in [0, 100]"));
    }
    if !(batch_fraction > 0.0 && batch_fraction <= 1.0) {
        return Err(FedError::config("objective.batch_fraction", "must lie in (0, 1]"));
    }
    Ok(())
}

/// Parses an algorithm name; FedProx keeps the regularization of `current`
/// when it already is FedProx and defaults to 1 otherwise.
pub fn parse_variant(name: &str, current: Variant) -> Result<Variant> {
    Ok(match name.trim() {
        "fedavg" => Variant::FedAvg,
        "scaffold_i" | "scaffold1" => Variant::ScaffoldI,
        "scaffold_ii" | "scaffold2" | "scaffold" => Variant::ScaffoldII,
        "scaffold_theory" => Variant::ScaffoldTheory,
        "sgd" | "large_batch_sgd" => Variant::LargeBatchSgd,
        "fedprox" => match current {
            Variant::FedProx { mu_prox } => Variant::FedProx { mu_prox },
            _ => Variant::FedProx { mu_prox: 1.0 },
        },
        other => return Err(FedError::config("algorithm.variant", format!("unknown algorithm {other:?}"))),
    })
}
