use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rfqd_core::harness::{self, ExperimentConfig};
use rfqd_core::rfqd::Ablation;
use std::path::PathBuf;
use std::process::ExitCode;

/// Reset-free quality-diversity on a surrogate quadruped arena.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training run and write its run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// rfqd, noda, norecovery or mapelites; overrides the config.
        #[arg(long)]
        ablation: Option<String>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every ablation for every seed, then the navigation trials.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a stored archive on a maze.
    Navigate {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        maze: PathBuf,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        /// Supplies the surrogate, noise and archive settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed of the execution noise.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Directory for the trial reports.
        #[arg(long, default_value = "navigation")]
        out: PathBuf,
    },
    /// Render SVG figures for run directories.
    Plot {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, ablation, seed } => {
            let cfg = load(&config)?;
            let ablation = match ablation {
                Some(name) => match Ablation::parse(&name) {
                    Some(a) => a,
                    None => bail!("unknown ablation `{name}` (expected rfqd, noda, norecovery or mapelites)"),
                },
                None => cfg.ablation,
            };
            let (dir, report) = harness::cmd_train(&cfg, ablation, seed.unwrap_or(cfg.seed))?;
            let m = report.final_metrics();
            println!(
                "{}: {:?} after {} evaluations, {} solutions",
                dir.display(),
                report.termination,
                report.real_evals_used,
                m.map_or(0, |m| m.size)
            );
        }
        Command::Ablate { config } => {
            let cfg = load(&config)?;
            let report = harness::cmd_ablate(&cfg)?;
            println!("{:<11} {:>10} {:>8} {:>10} {:>9} {:>8}", "ablation", "evals", "size", "coverage", "qd", "nav");
            for s in &report.stats {
                println!(
                    "{:<11} {:>10.0} {:>8.0} {:>10.4} {:>9.2} {:>8.1}",
                    s.ablation.name(),
                    s.evals_used.median,
                    s.archive_size.median,
                    s.coverage.median,
                    s.qd_score.median,
                    s.nav_successes.median
                );
            }
            println!("wrote {}", cfg.output_dir.join(harness::AGGREGATE_JSON).display());
        }
        Command::Navigate { archive, maze, trials, config, seed, out } => {
            let mut cfg = match &config {
                Some(path) => load(path)?,
                None => ExperimentConfig::default(),
            };
            cfg.nav_trials = trials;
            let reports = harness::cmd_navigate(&cfg, &archive, &maze, seed, &out)?;
            for (t, r) in reports.iter().enumerate() {
                println!(
                    "trial {t}: {} in {} actions, {:.3} m from the goal",
                    if r.success { "success" } else { "failure" },
                    r.n_actions,
                    r.final_distance
                );
            }
            let ok = reports.iter().filter(|r| r.success).count();
            println!("{ok}/{} successful; reports in {}", reports.len(), out.display());
        }
        Command::Plot { run_dirs } => {
            for path in harness::cmd_plot(&run_dirs)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
