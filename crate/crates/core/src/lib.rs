//! Single-process simulation of federated optimization.
//!
//! A [`Federation`] holds `N` client objectives; the [`algorithms`] module
//! implements the client-local updates and server aggregation of FedAvg,
//! SCAFFOLD, FedProx and large-batch SGD; the [`orchestrator`] drives rounds
//! and records drift, control lag and suboptimality; the [`harness`] turns
//! experiment configs into result rows, traces and tables.

pub mod algorithms;
pub mod error;
pub mod harness;
pub mod objectives;
pub mod oracle;
pub mod orchestrator;
pub mod rng;
pub mod vector;

pub use algorithms::{AlgorithmConfig, ClientState, ControlInit, LocalRunResult, ServerState, Variant};
pub use error::{FedError, Result};
pub use objectives::Federation;
pub use oracle::{noisy_gradient, ClientObjective, GradientSample};
pub use orchestrator::{run_experiment, run_round, OutputSelector, RunOptions, SamplingPlan, Target, TargetMetric};
pub use rng::{Purpose, RngStream};
pub use vector::{axpy, ModelVector};
