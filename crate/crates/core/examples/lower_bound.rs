//! FedAvg vs SCAFFOLD on the two-client quadratic pair where FedAvg's
//! fixed point moves away from the optimum as the gradient gap `G` grows.
//!
//! cargo run --release --example lower_bound

use fedsim::objectives::make_lower_bound_clients;
use fedsim::{run_experiment, AlgorithmConfig, ModelVector, OutputSelector, RunOptions, SamplingPlan, Variant};

fn main() -> fedsim::Result<()> {
    let (mu, eta, k, rounds) = (1.0, 0.01, 10, 300);
    println!("{:>6} {:>14} {:>14}", "G", "fedavg", "scaffold_ii");
    for g in [1.0, 10.0, 100.0] {
        let fed = make_lower_bound_clients(mu, g)?;
        let mut cells = Vec::new();
        for variant in [Variant::FedAvg, Variant::ScaffoldII] {
            let out = run_experiment(
                &fed,
                &AlgorithmConfig::new(variant, eta, k),
                ModelVector::filled(1, 1.0),
                rounds,
                &SamplingPlan::full(2, 0),
                OutputSelector::LastIterate,
                None,
                RunOptions::default(),
            )?;
            cells.push(out.last().suboptimality.unwrap_or(f64::NAN));
        }
        println!("{g:>6} {:>14.3e} {:>14.3e}", cells[0], cells[1]);
    }
    Ok(())
}
