//! Final suboptimality on random quadratic ensembles as gradient
//! dissimilarity `G` and Hessian dissimilarity `δ` vary.
//!
//! cargo run --release --example heterogeneity

use fedsim::objectives::{measure_bhd, QuadraticEnsemble};
use fedsim::{
    run_experiment, AlgorithmConfig, ControlInit, ModelVector, OutputSelector, RunOptions, SamplingPlan, Variant,
};

fn main() -> fedsim::Result<()> {
    let (n, d) = (10, 5);
    let variants = [Variant::FedAvg, Variant::ScaffoldII, Variant::FedProx { mu_prox: 0.1 }];
    print!("{:>5} {:>5} {:>7}", "delta", "G", "bhd");
    for v in &variants {
        print!(" {:>12}", v.name());
    }
    println!();
    for delta in [0.0, 0.5, 1.0] {
        for g in [1.0, 10.0] {
            let fed = QuadraticEnsemble::new(n, d, delta, g, 7).with_mu(0.05).build()?;
            print!("{delta:>5} {g:>5} {:>7.3}", measure_bhd(fed.clients())?);
            for &v in &variants {
                let cfg = AlgorithmConfig::new(v, 0.05, 10).with_control_init(ControlInit::WarmStart);
                let out = run_experiment(
                    &fed,
                    &cfg,
                    ModelVector::zeros(d),
                    100,
                    &SamplingPlan::new(n, 5, 1)?,
                    OutputSelector::LastIterate,
                    None,
                    RunOptions::default(),
                )?;
                print!(" {:>12.3e}", out.last().suboptimality.unwrap_or(f64::NAN));
            }
            println!();
        }
    }
    Ok(())
}
