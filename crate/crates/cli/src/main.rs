use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use homoglab::{GridFunction, Region};
use homoglab_cli::selftest::{self, Fault};
use homoglab_cli::{envelope_check, load_config, run, CliError, Kind, EXIT_IO, EXIT_NUMERICAL, EXIT_VALIDATION};

#[derive(Parser)]
#[command(name = "homoglab", version, about = "Curvature quantities and Monte Carlo homogenization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (`[section]` / `key = value`).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0: all cores); overrides `run.workers`.
    #[arg(long)]
    workers: Option<usize>,
    /// Master seed; overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Rerun even if this config and seed are already recorded.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Envelope measure, Monte Carlo oracle and invariants of a saved grid.
    EnvelopeCheck {
        #[arg(long)]
        grid: PathBuf,
        /// `x0 y0 x1 y1` (default: the open grid square).
        #[arg(long, num_args = 4, allow_negative_numbers = true, value_names = ["X0", "Y0", "X1", "Y1"])]
        region: Option<Vec<f64>>,
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// μ estimates per realization, cube and shift (writes mu.csv).
    Mu(RunArgs),
    /// Second moments across scales with frozen ŝ and the fitted rate.
    MuDecay(RunArgs),
    /// Balancing-constant and cell-problem estimates of the effective operator.
    Effective(RunArgs),
    /// Homogenization error against ε.
    ErrorRate(RunArgs),
    /// Fast invariant suite.
    Selftest {
        /// Corrupt one tolerance on purpose (envelope-tolerance, solver-data).
        #[arg(long)]
        inject: Option<String>,
    },
}

fn experiment(kind: Kind, a: RunArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.config, a.seed)?;
    if cfg.kind != kind {
        return Err(CliError::new(
            EXIT_VALIDATION,
            format!("config field `run.kind`: is {}, but the subcommand is {}", cfg.kind.as_str(), kind.as_str()),
        ));
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    let rec = run::run(&cfg, &a.out, a.force)?;
    println!("run {} wrote {} in {}", rec.id, rec.files.join(", "), a.out.display());
    Ok(())
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::EnvelopeCheck { grid, region, samples, seed } => {
            let u = GridFunction::load(&grid).map_err(|e| CliError::new(EXIT_IO, format!("{}: {e}", grid.display())))?;
            let region = match region {
                Some(r) => Region::new([r[0], r[1]], [r[2], r[3]]),
                None => Region::interior_of(u.square()),
            };
            let c = envelope_check(&u, &region, samples, seed)?;
            println!("envelope measure: {:.9e}", c.measure);
            println!("mc oracle:        {:.9e} ± {:.3e} ({samples} slopes)", c.mc_value, c.mc_std_error);
            for (name, ok, detail) in &c.invariants {
                println!("{} {name}: {detail}", if *ok { "PASS" } else { "FAIL" });
            }
            if c.passed() {
                Ok(())
            } else {
                Err(CliError::new(EXIT_NUMERICAL, "envelope invariants failed"))
            }
        }
        Command::Mu(a) => experiment(Kind::Mu, a),
        Command::MuDecay(a) => experiment(Kind::MuDecay, a),
        Command::Effective(a) => experiment(Kind::Effective, a),
        Command::ErrorRate(a) => experiment(Kind::ErrorRate, a),
        Command::Selftest { inject } => {
            let fault = match inject.as_deref() {
                None => None,
                Some(s) => Some(Fault::parse(s).ok_or_else(|| CliError::new(EXIT_VALIDATION, format!("unknown fault {s:?}")))?),
            };
            let report = selftest::run(fault);
            print!("{report}");
            if report.passed() {
                Ok(())
            } else {
                let names: Vec<String> = report.failures().iter().map(|c| format!("{}::{}", c.module, c.name)).collect();
                Err(CliError::new(EXIT_NUMERICAL, format!("selftest failed: {}", names.join(", "))))
            }
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
