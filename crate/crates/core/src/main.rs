use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fedsim::harness::{self, Axis, ExperimentSpec, RunReport, TuneBy};
use fedsim::FedError;

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Federated optimization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config for each of its seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Sweep the Cartesian product of axes, e.g. `--axis K=1,5 --axis eta_l=2^-6..2^0`.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "axis", required = true)]
        axes: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        workers: Option<usize>,
        /// Also write `best.csv`, keeping the best local step size per configuration.
        #[arg(long)]
        tune: Option<Tune>,
    },
    /// Summarize a rows CSV: median/min/max of a metric per group.
    Table {
        #[arg(long)]
        rows: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        group_by: Vec<String>,
        #[arg(long, default_value = "rounds_to_target")]
        metric: String,
        /// Write CSV here in addition to printing text.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Parse and check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Tune {
    RoundsToTarget,
    FinalSuboptimality,
    FinalGradNormSq,
    FinalAccuracy,
}

impl From<Tune> for TuneBy {
    fn from(t: Tune) -> Self {
        match t {
            Tune::RoundsToTarget => TuneBy::RoundsToTarget,
            Tune::FinalSuboptimality => TuneBy::FinalSuboptimality,
            Tune::FinalGradNormSq => TuneBy::FinalGradNormSq,
            Tune::FinalAccuracy => TuneBy::FinalAccuracy,
        }
    }
}

fn load(config: &PathBuf, out: Option<PathBuf>, seeds: Option<Vec<u64>>) -> fedsim::Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::from_path(config).map_err(|e| match e {
        FedError::Io(io) => FedError::config(config.display().to_string(), io.to_string()),
        other => other,
    })?;
    spec.out_override = out;
    if let Some(seeds) = seeds {
        spec.seeds = seeds;
    }
    spec.validate()?;
    Ok(spec)
}

fn summarize(report: &RunReport) -> ExitCode {
    let diverged = report.rows.iter().filter(|r| r.diverged).count();
    println!(
        "{} run(s), {} diverged; rows written to {}",
        report.rows.len(),
        diverged,
        report.rows_path.display()
    );
    if report.all_diverged() {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    }
}

fn execute(cli: Cli) -> fedsim::Result<ExitCode> {
    match cli.command {
        Command::Run { config, out, seeds } => {
            let spec = load(&config, out, seeds)?;
            Ok(summarize(&harness::run_single(&spec)?))
        }
        Command::Grid {
            config,
            axes,
            out,
            seeds,
            workers,
            tune,
        } => {
            let mut spec = load(&config, out, seeds)?;
            if let Some(w) = workers {
                spec.workers = w;
            }
            let axes = axes.iter().map(|a| Axis::parse(a)).collect::<fedsim::Result<Vec<_>>>()?;
            let report = harness::run_grid(&spec, &axes)?;
            if let Some(t) = tune {
                let best = harness::best_lr(&report.rows, t.into());
                let path = report.rows_path.with_file_name("best.csv");
                harness::write_rows(std::fs::File::create(&path)?, &best)?;
                println!("best step sizes written to {}", path.display());
            }
            Ok(summarize(&report))
        }
        Command::Table {
            rows,
            group_by,
            metric,
            csv,
        } => {
            let file = std::fs::File::open(&rows)
                .map_err(|e| FedError::config(rows.display().to_string(), e.to_string()))?;
            let table = harness::table_from_csv(file, &group_by, &metric)?;
            print!("{}", table.to_text());
            if let Some(path) = csv {
                std::fs::write(path, table.to_csv()?)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let spec = load(&config, None, None)?;
            println!(
                "ok: {} ({}, {}, N={}, S={}, R={}, {} seed(s))",
                spec.name,
                spec.objective.kind(),
                spec.algorithm.variant.name(),
                spec.n_clients(),
                spec.sampled_clients(),
                spec.rounds,
                spec.seeds.len()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                FedError::Config { .. } | FedError::Parameter(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
