//! Per-round client drift and control lag for SCAFFOLD with zero-initialised
//! controls, next to FedAvg's drift on the same problem.
//!
//! cargo run --release --example drift_metrics

use fedsim::objectives::QuadraticEnsemble;
use fedsim::{run_experiment, AlgorithmConfig, ModelVector, OutputSelector, RunOptions, SamplingPlan, Variant};

fn main() -> fedsim::Result<()> {
    let fed = QuadraticEnsemble::new(8, 4, 0.5, 5.0, 3).build()?;
    let run = |variant| {
        run_experiment(
            &fed,
            &AlgorithmConfig::new(variant, 0.05, 10),
            ModelVector::filled(4, 1.0),
            40,
            &SamplingPlan::full(8, 0),
            OutputSelector::LastIterate,
            None,
            RunOptions::default(),
        )
    };
    let avg = run(Variant::FedAvg)?;
    let scaf = run(Variant::ScaffoldII)?;
    println!("{:>5} {:>12} {:>12} {:>12}", "round", "drift avg", "drift scaf", "control lag");
    for (a, s) in avg.trace.iter().zip(&scaf.trace).step_by(5) {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3e}"));
        println!(
            "{:>5} {:>12} {:>12} {:>12}",
            a.round,
            show(a.drift),
            show(s.drift),
            show(s.control_lag)
        );
    }
    Ok(())
}
