//! How the s% similarity split changes label diversity per client, and how
//! many rounds FedAvg and SCAFFOLD need to reach 50% training accuracy.
//!
//! cargo run --release --example similarity_split

use fedsim::objectives::{label_entropy, logistic_clients, split_by_similarity, SyntheticClassification};
use fedsim::{
    run_experiment, AlgorithmConfig, ModelVector, OutputSelector, RunOptions, SamplingPlan, Target, TargetMetric,
    Variant,
};

fn main() -> fedsim::Result<()> {
    let data = SyntheticClassification::new(2000, 20, 10, 1)
        .with_separation(0.5)
        .with_anisotropy(10.0)
        .generate()?;
    let n = 20;
    let target = Target {
        metric: TargetMetric::Accuracy,
        threshold: 0.5,
    };
    println!("{:>4} {:>9} {:>8} {:>8}", "s", "entropy", "fedavg", "scaffold");
    for s in [0.0, 10.0, 50.0, 100.0] {
        let shards = split_by_similarity(&data, s, n, 1)?;
        let entropy = shards.iter().map(|idx| label_entropy(&data, idx)).sum::<f64>() / n as f64;
        let fed = logistic_clients(&data, &shards, 0.0, 0.2, 0.0)?;
        let mut rounds = Vec::new();
        for (variant, eta) in [(Variant::FedAvg, 0.5), (Variant::ScaffoldII, 0.25)] {
            let out = run_experiment(
                &fed,
                &AlgorithmConfig::new(variant, eta, 25),
                ModelVector::zeros(fed.dim()),
                200,
                &SamplingPlan::new(n, 4, 1)?,
                OutputSelector::LastIterate,
                Some(target),
                RunOptions {
                    stop_at_target: true,
                    threads: 1,
                },
            )?;
            rounds.push(out.rounds_to_target.map_or("-".to_string(), |r| r.to_string()));
        }
        println!("{s:>4} {entropy:>9.3} {:>8} {:>8}", rounds[0], rounds[1]);
    }
    Ok(())
}
