use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use subridge::commands::{cmd_sim, cmd_theory_surface, cmd_tune, parse_grid, SurfaceArgs, SurfaceModel, TuneArgs};
use subridge::theory::EnsembleSize;
use subridge::verify;

#[derive(Parser)]
#[command(name = "subridge", version, about = "Subsample ridge ensembles: theory, simulation and GCV tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Ar1,
    Isotropic,
}

#[derive(Subcommand)]
enum Command {
    /// Asymptotic risk over a (lambda, phi_s) grid.
    TheorySurface {
        #[arg(long)]
        phi: f64,
        #[arg(long, value_enum, default_value = "ar1")]
        model: ModelArg,
        #[arg(long, default_value_t = 0.5)]
        rho_ar1: f64,
        /// Dimension of the reference AR(1) covariance.
        #[arg(long, default_value_t = 500)]
        p_ref: usize,
        /// Signal energy for the isotropic model.
        #[arg(long, default_value_t = 1.0)]
        rho2: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
        /// `lo:hi:count` or a comma list.
        #[arg(long, default_value = "0:2:41")]
        lambda: String,
        #[arg(long, alias = "phis", default_value = "0.1:10:100")]
        phi_s: String,
        /// Ensemble size, a positive integer or `inf`.
        #[arg(long, default_value = "inf")]
        m: EnsembleSize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo sweep described by a TOML config.
    Sim {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select the subsample size by GCV on a CSV dataset.
    Tune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long, default_value_t = 50)]
        m: usize,
        /// Grid increment exponent: k0 = floor(n^nu).
        #[arg(long, default_value_t = 0.5)]
        nu: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction of rows held out for the reported test error.
        #[arg(long, default_value_t = 0.2)]
        holdout: f64,
        /// Also tune full-data ridge over a log grid of penalties.
        #[arg(long)]
        baseline: bool,
        /// Positive penalty used to extrapolate an equivalent ridge penalty.
        #[arg(long)]
        extrapolate: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the acceptance checks.
    Verify {
        /// Criterion ids or names; repeatable.
        #[arg(long)]
        only: Vec<String>,
        /// Existing directory for scratch output (default: a temporary one).
        #[arg(long)]
        work_dir: Option<PathBuf>,
    },
}

fn configure_threads() {
    #[cfg(feature = "parallel")]
    if let Some(n) = std::env::var("SUBRIDGE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn run(cli: Cli) -> subridge::Result<bool> {
    match cli.command {
        Command::TheorySurface { phi, model, rho_ar1, p_ref, rho2, sigma2, lambda, phi_s, m, out } => {
            let args = SurfaceArgs {
                phi,
                model: match model {
                    ModelArg::Ar1 => SurfaceModel::Ar1,
                    ModelArg::Isotropic => SurfaceModel::Isotropic,
                },
                rho_ar1,
                p_ref,
                rho2,
                sigma2,
                lambdas: parse_grid(&lambda)?,
                phi_s: parse_grid(&phi_s)?,
                ensemble_size: m,
            };
            let res = cmd_theory_surface(&args, &out)?;
            let mk = &res.markers;
            if !mk.nan_cells.is_empty() {
                eprintln!("warning: {} cells undefined (written as NaN)", mk.nan_cells.len());
            }
            println!("lambda* = {}  phi_s* = {}  risk* = {}", mk.lambda_star, mk.phi_s_star, mk.risk_star);
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::Sim { config, out } => {
            let manifest = cmd_sim(&config, &out)?;
            println!(
                "wrote {} files to {} in {:.1}s",
                manifest.outputs.len(),
                out.display(),
                manifest.wall_clock_seconds
            );
            Ok(true)
        }
        Command::Tune { data, target, lambda, m, nu, seed, holdout, baseline, extrapolate, out } => {
            let args = TuneArgs { target, lambda, m, nu, seed, holdout, baseline, extrapolate };
            let (_, report) = cmd_tune(&data, &args, &out)?;
            println!(
                "k_hat = {}  gcv = {}  holdout mse = {}",
                report.tune.k_hat, report.tune.gcv_at_k_hat, report.holdout_mse
            );
            if let (Some(b), Some(mse)) = (&report.tune.baseline, report.baseline_holdout_mse) {
                println!("ridge baseline: lambda = {}  holdout mse = {mse}", b.lambda);
            }
            if let Some(l) = report.tune.lambda_hat {
                println!("lambda_hat = {l}");
            }
            if report.tune.path.iter().any(|p| p.flagged) {
                eprintln!("warning: some grid points had near-degenerate GCV denominators");
            }
            Ok(true)
        }
        Command::Verify { only, work_dir } => {
            let selected = verify::select(&only)?;
            let tmp;
            let dir = match work_dir {
                Some(d) => d,
                None => {
                    tmp = tempfile::tempdir()?;
                    tmp.path().to_path_buf()
                }
            };
            let outcomes = verify::run_all(&selected, &dir, |o| println!("{o}"))?;
            let failed = outcomes.iter().filter(|o| !o.ok()).count();
            println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
            Ok(failed == 0)
        }
    }
}

fn main() -> ExitCode {
    configure_threads();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
