//! Loads a TOML config, sweeps step size and local steps, tunes the step size
//! per cell and prints a rounds-to-target table.
//!
//! cargo run --release --example grid_sweep -- [config.toml]

use fedsim::harness::{best_lr, emit_table, run_grid, Axis, ExperimentSpec, TuneBy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/lower_bound.toml").into());
    let mut spec = ExperimentSpec::from_path(&path)?;
    spec.out_override = Some(std::env::temp_dir().join("fedsim-grid-sweep"));
    let axes = [
        Axis::parse("algo=fedavg,scaffold_ii,sgd")?,
        Axis::parse("K=1,10")?,
        Axis::parse("eta_l=2^-8..2^-2")?,
    ];
    let report = run_grid(&spec, &axes)?;
    let tuned = best_lr(&report.rows, TuneBy::RoundsToTarget);
    let table = emit_table(&tuned, &["algo".into(), "K".into(), "eta_l".into()], "rounds_to_target")?;
    print!("{}", table.to_text());
    println!("rows written to {}", report.rows_path.display());
    Ok(())
}
