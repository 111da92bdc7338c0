use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use quantum_tdoa::crlb::{fisher_information, jensen_bound};
use quantum_tdoa::error::{Error, Result};
use quantum_tdoa::geometry::Point;
use quantum_tdoa::harness::{
    read_config, run_campaign, sample_sensor, summarize, write_results, write_summary,
};
use quantum_tdoa::noise::{measure, NoiseMode, NoiseSpec};
use quantum_tdoa::solver::{localize, mle_weights};

#[derive(Parser)]
#[command(name = "qtdoa", version, about = "Quantum-assisted vs classical TDoA localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo campaign and write per-trial records.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated noise levels, e.g. 0,0.01,0.02.
        #[arg(long, value_delimiter = ',')]
        eta_grid: Option<Vec<f64>>,
        #[arg(long)]
        trials: Option<u64>,
        /// Comma-separated subset of quantum,classical.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<NoiseMode>>,
        #[arg(long)]
        seed: Option<u64>,
        /// Use the weighted-likelihood objective.
        #[arg(long)]
        weighted: bool,
        #[arg(long, default_value = "results.csv")]
        out: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Localize the trial-0 sensor of a seed and print the solution as JSON.
    SolveOne {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        mode: NoiseMode,
        #[arg(long)]
        seed: u64,
    },
    /// Print the Fisher information and the error bound at a position.
    Crlb {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        eta: f64,
        #[arg(long, value_delimiter = ',', num_args = 1.., allow_hyphen_values = true)]
        x: Vec<f64>,
    },
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writeln!(std::io::stdout().lock(), "{text}")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, eta_grid, trials, modes, seed, weighted, out, summary } => {
            let mut cfg = read_config(&config)?;
            if let Some(g) = eta_grid {
                cfg.eta_grid = g;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(m) = modes {
                cfg.modes = m;
            }
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            cfg.weighted |= weighted;
            let records = run_campaign(&cfg)?;
            let table = summarize(&records);
            write_results(&records, &table, &out, summary.as_deref())?;
            write_summary(&table, std::io::stdout().lock())?;
            Ok(())
        }
        Command::SolveOne { config, eta, mode, seed } => {
            let mut cfg = read_config(&config)?;
            cfg.master_seed = seed;
            let (anchors, scenario) = (cfg.anchor_set()?, cfg.scenario()?);
            let x = sample_sensor(&cfg, 0)?;
            let spec = NoiseSpec::new(eta, mode, seed)?;
            let batch = measure(&x, &anchors, &scenario, &spec)?;
            let w = cfg.weighted.then(|| mle_weights(&batch.values, &anchors));
            let sol = localize(
                &anchors,
                &scenario,
                &batch.values,
                Some(cfg.delta),
                w.as_deref(),
                &cfg.solver,
            )?;
            #[derive(Serialize)]
            struct Out<'a, S> {
                x_true: &'a [f64],
                measurements: &'a [f64],
                error_m: f64,
                solution: S,
            }
            print_json(&Out {
                x_true: x.coords(),
                measurements: &batch.values,
                error_m: sol.x_hat.distance(&x),
                solution: sol.report(),
            })
        }
        Command::Crlb { config, eta, x } => {
            let cfg = read_config(&config)?;
            let x = Point::new(x)?;
            let info = fisher_information(&x, &cfg.anchor_set()?, &cfg.scenario()?, eta)?;
            let j: Vec<Vec<f64>> = info.j.row_iter().map(|r| r.iter().copied().collect()).collect();
            #[derive(Serialize)]
            struct Out {
                eta: f64,
                fisher_information: Vec<Vec<f64>>,
                bound_m: Option<f64>,
                note: Option<String>,
            }
            let (bound_m, note) = match jensen_bound(&info) {
                Ok(b) => (Some(b), None),
                Err(e) => (None, Some(e.to_string())),
            };
            print_json(&Out { eta, fisher_information: j, bound_m, note })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qtdoa: {e}");
            ExitCode::FAILURE
        }
    }
}
