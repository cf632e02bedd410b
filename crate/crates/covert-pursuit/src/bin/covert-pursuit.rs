//! Thin command-line front end over the planning library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use covert_pursuit::harness::{self, HarnessConfig};
use covert_pursuit::oracle::{self, BruteForceOptions};
use covert_pursuit::pdcae::SolveStatus;
use covert_pursuit::power;
use covert_pursuit::report;
use covert_pursuit::Error;

#[derive(Parser)]
#[command(
    name = "covert-pursuit",
    about = "Energy-aware trajectory planning for a solar-powered monitoring UAV",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan one scheme and write report/trajectory/iteration files.
    Run {
        /// Scenario + solver config JSON; defaults to the reference setup.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scheme: proposed, dko, aco, ndp, dst, mdr, or online.
        #[arg(long, default_value = "proposed")]
        scheme: String,
        /// Target track CSV (header `t,a,b`); generated when omitted.
        #[arg(long)]
        track: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run several schemes on one scenario and tabulate them.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated scheme list.
        #[arg(long, value_delimiter = ',', default_value = "proposed,dko,aco,ndp,dst,mdr")]
        schemes: Vec<String>,
        #[arg(long)]
        track: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Sweep disguising weights along mu1 + mu2 = 1.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated mu1 grid; default 0,0.1,...,1.
        #[arg(long, value_delimiter = ',')]
        mu1: Option<Vec<f64>>,
        #[arg(long)]
        track: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Exhaustive grid search on a tiny scenario, for validation.
    Oracle {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        track: Option<PathBuf>,
        /// Grid points per horizontal axis.
        #[arg(long, default_value_t = 9)]
        points: usize,
        /// Grid points on the altitude axis.
        #[arg(long, default_value_t = 3)]
        z_points: usize,
    },
    /// Fit the linear solar under-estimator and print its coefficients.
    FitSolar {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Band lower edge (m); defaults to the scenario altitude floor.
        #[arg(long)]
        z_low: Option<f64>,
        /// Band upper edge (m); defaults to floor + 100.
        #[arg(long)]
        z_high: Option<f64>,
        #[arg(long, default_value_t = 512)]
        samples: usize,
    },
}

fn load(config: &Option<PathBuf>) -> Result<HarnessConfig, Error> {
    match config {
        Some(p) => harness::load_config(p),
        None => Ok(HarnessConfig::reference()),
    }
}

fn exit_code_for(err: &Error) -> ExitCode {
    match err {
        Error::Parse(_) | Error::Scenario(_) | Error::Domain(_) => ExitCode::from(2),
        Error::InfeasibleConstruction(_) | Error::InfeasibleIterate(_) => ExitCode::from(4),
        _ => ExitCode::from(3),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run {
            config,
            scheme,
            track,
            out_dir,
        } => {
            let cfg = load(&config)?;
            let track = harness::load_or_generate_track(&cfg.scenario, track.as_deref())?;
            let started = std::time::Instant::now();
            let report = harness::run_and_write(&cfg, &scheme, &track, &out_dir)?;
            eprintln!(
                "{scheme}: status {:?}, {} outer iterations, energy {:.1} J, wall {:.2} s",
                report.status,
                report.trace.len(),
                report.energy.consumed_j,
                started.elapsed().as_secs_f64()
            );
            if report.status == SolveStatus::Converged {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(3))
            }
        }
        Command::Compare {
            config,
            schemes,
            track,
            out_dir,
        } => {
            let cfg = load(&config)?;
            let track = harness::load_or_generate_track(&cfg.scenario, track.as_deref())?;
            let (rows, _) = harness::compare(&cfg, &schemes, &track, Some(&out_dir))?;
            let csv = report::compare_csv(&rows);
            report::write_atomic(&out_dir.join("compare.csv"), csv.as_bytes())?;
            print!("{csv}");
            let all_ok = rows.iter().all(|r| !r.status.starts_with("error"));
            Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(3) })
        }
        Command::Sweep {
            config,
            mu1,
            track,
            out_dir,
        } => {
            let cfg = load(&config)?;
            let track = harness::load_or_generate_track(&cfg.scenario, track.as_deref())?;
            let grid = mu1.unwrap_or_else(|| (0..=10).map(|i| i as f64 / 10.0).collect());
            let rows = harness::pareto_sweep(&cfg, &grid, &track)?;
            let csv = report::sweep_csv(&rows);
            report::write_atomic(&out_dir.join("sweep.csv"), csv.as_bytes())?;
            print!("{csv}");
            let all_ok = rows.iter().all(|r| r.power_w.is_finite());
            Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(3) })
        }
        Command::Oracle {
            config,
            track,
            points,
            z_points,
        } => {
            let cfg = load(&config)?;
            let track = harness::load_or_generate_track(&cfg.scenario, track.as_deref())?;
            let options = BruteForceOptions {
                points_per_axis: [points, points, z_points],
                ..BruteForceOptions::default()
            };
            let outcome = oracle::brute_force_small(&cfg.scenario, &track, &options)?;
            println!(
                "objective {:.9e} over {} evaluated trajectories (spacing {:.3}/{:.3}/{:.3} m)",
                outcome.objective,
                outcome.evaluated,
                outcome.spacing[0],
                outcome.spacing[1],
                outcome.spacing[2]
            );
            for (t, wp) in outcome.plan.waypoints.iter().enumerate() {
                println!("t={t} x={:.4} y={:.4} z={:.4}", wp[0], wp[1], wp[2]);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::FitSolar {
            config,
            z_low,
            z_high,
            samples,
        } => {
            let cfg = load(&config)?;
            let zl = z_low.unwrap_or(cfg.scenario.z_lower);
            let zu = z_high.unwrap_or(zl + 100.0);
            let fit = power::fit_solar_linear(&cfg.scenario.solar, [zl, zu], samples)?;
            println!(
                "c1 = {:.9e} W/m, c2 = {:.9e} W on [{zl}, {zu}] m ({} samples)",
                fit.c1, fit.c2, samples
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}
