//! Command-line front end for the limited-angle reconstruction toolkit.
//!
//! Exit codes: 0 success, 1 validation error (bad flags or config),
//! 2 runtime or solver failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lartk::solver::SolverMode;
use lartk_cli::config::ExperimentConfig;
use lartk_cli::harness;

#[derive(Parser)]
#[command(name = "lartk", version, about = "Limited-angle fan-beam reconstruction experiments")]
struct Cli {
    /// Experiment config file (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Override the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the resolution list, e.g. `--resolutions 128,256`.
    #[arg(long, global = true, value_delimiter = ',')]
    resolutions: Option<Vec<usize>>,

    /// Override the iteration count.
    #[arg(long, global = true)]
    n_iter: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ResolutionArg {
    /// Grid side in pixels; defaults to the first configured resolution.
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the phantom image and label map.
    Phantom(ResolutionArg),
    /// Generate the phantom and its noiseless sinogram.
    Project(ResolutionArg),
    /// Run one reconstruction.
    Reconstruct {
        #[command(flatten)]
        resolution: ResolutionArg,
        /// `single` or `two-channel`.
        #[arg(long)]
        mode: String,
    },
    /// Run the paired single- vs two-channel study over all resolutions.
    Compare,
    /// Emit mode-gain profiles and filter response curves.
    Spectrum,
}

fn load_config(cli: &Cli) -> lartk::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(res) = &cli.resolutions {
        cfg.resolutions = res.clone();
    }
    if let Some(n) = cli.n_iter {
        cfg.solver.n_iter = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pick_resolution(cfg: &ExperimentConfig, arg: &ResolutionArg) -> lartk::Result<usize> {
    match arg.resolution {
        Some(r) => {
            cfg.alpha_beta_for(r)?;
            Ok(r)
        }
        None => Ok(cfg.resolutions[0]),
    }
}

fn run(cli: &Cli) -> lartk::Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Phantom(res) => {
            let r = pick_resolution(&cfg, res)?;
            let art = harness::run_phantom(&cfg, r)?;
            println!("wrote {}", art.image_path.display());
            println!("wrote {}", art.labels_path.display());
        }
        Command::Project(res) => {
            let r = pick_resolution(&cfg, res)?;
            let art = harness::run_project(&cfg, r)?;
            println!("wrote {}", art.sinogram_path.display());
        }
        Command::Reconstruct { resolution, mode } => {
            let r = pick_resolution(&cfg, resolution)?;
            let mode = match mode.as_str() {
                "single" => SolverMode::Single,
                "two-channel" | "two_channel" => SolverMode::TwoChannel,
                other => {
                    return Err(lartk::Error::InvalidConfig(format!(
                        "unknown mode `{other}` (expected `single` or `two-channel`)"
                    )));
                }
            };
            let art = harness::run_reconstruct(&cfg, r, mode)?;
            let last = art.output.records.last().expect("n_iter >= 1");
            println!("wrote {}", art.image_path.display());
            println!("wrote {}", art.telemetry_path.display());
            println!(
                "final rmse {} after {} iterations",
                lartk::io::fmt_f64(last.image_rmse),
                last.iteration
            );
        }
        Command::Compare => {
            let report = harness::run_compare(&cfg)?;
            println!("wrote {}", report.report_path.display());
            for row in &report.rows {
                println!(
                    "{:>4}x{:<4} single {:.6}  two-channel {:.6}  improvement {:.1}%",
                    row.resolution,
                    row.resolution,
                    row.rmse_single,
                    row.rmse_two,
                    row.improvement_percent
                );
            }
        }
        Command::Spectrum => {
            for path in harness::run_spectrum(&cfg)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap routes --help and --version through the error path too
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() { ExitCode::from(1) } else { ExitCode::from(2) }
        }
    }
}
