use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use purestate::cli;
use purestate::config::RunConfig;
use purestate::{Error, Result};

/// Optimal control for pure-state preparation in open quantum systems.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate the initial state under fixed controls.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Control coefficients as `q,s,n,re,im` CSV; zero controls if omitted.
        #[arg(long)]
        alpha: Option<PathBuf>,
    },
    /// Optimize the controls, then simulate the result.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare adjoint gradients with central differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alpha: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of coordinates to check.
        #[arg(long, default_value_t = 20)]
        coords: usize,
    },
    /// Check the ensemble basis for the configured dimension.
    VerifyBasis {
        #[command(flatten)]
        common: Common,
    },
    /// Write lab-frame control spectra.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        alpha: Option<PathBuf>,
    },
}

const GRADCHECK_TOL: f64 = 1e-6;

fn load(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let config = RunConfig::from_file(&common.config)?;
    let out = match &common.out {
        Some(p) => p.clone(),
        None => config.resolve(&config.output.directory),
    };
    Ok((config, out))
}

fn load_alpha(config: &RunConfig, path: &Option<PathBuf>) -> Result<Option<purestate::control::ControlVector>> {
    let Some(path) = path else { return Ok(None) };
    let setup = cli::setup(config)?;
    cli::read_alpha(path, &setup.problem.controls).map(Some)
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Simulate { common, alpha } => {
            let (config, out) = load(&common)?;
            let alpha = load_alpha(&config, &alpha)?;
            let result = cli::run_simulate(&config, alpha, &out)?;
            print!("{}", result.summary.to_text());
        }
        Command::Optimize { common, seed } => {
            let (config, out) = load(&common)?;
            let result = cli::run_optimize(&config, seed, &out, |r| {
                eprintln!("iter {:4}  cost {:.6e}  |pg| {:.3e}  step {:.2e}", r.iter, r.cost.total, r.grad_norm, r.step);
            })?;
            print!("{}", result.summary.to_text());
        }
        Command::Gradcheck { common, alpha, seed, coords } => {
            let (config, _) = load(&common)?;
            let alpha = load_alpha(&config, &alpha)?;
            let report = cli::run_gradcheck(&config, alpha, seed, coords)?;
            print!("{}", report.to_csv());
            let worst = report.max_error();
            eprintln!("max relative error {worst:.3e}");
            if worst > GRADCHECK_TOL {
                return Ok(ExitCode::from(2));
            }
        }
        Command::VerifyBasis { common } => {
            let (config, _) = load(&common)?;
            let (n, report) = cli::run_verify_basis(&config)?;
            println!("dimension = {n}");
            println!("hermitian = {}", report.hermitian);
            println!("unit_trace = {}", report.unit_trace);
            println!("psd = {}", report.psd);
            println!("rank_one = {}", report.rank_one);
            println!("independent = {}", report.independent);
            if !report.all_ok() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Spectrum { common, alpha } => {
            let (config, out) = load(&common)?;
            let alpha = load_alpha(&config, &alpha)?;
            for f in cli::run_spectrum(&config, alpha, &out)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("PURESTATE_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("PURESTATE_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidParameter(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
