//! Experiment orchestration behind the command-line tool: training runs,
//! the four-way ablation with navigation trials, aggregation and plots.

pub mod config;
pub mod io;
pub mod plot;

pub use config::ExperimentConfig;

use crate::archive::UnstructuredArchive;
use crate::arena::{Pose, SurrogateArena};
use crate::navigation::{run_trial, MazeMap, TrialReport};
use crate::par;
use crate::rfqd::{run, Ablation, RunOutcome, RunReport, Termination};
use crate::rng::{substream, Stream};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub fn run_dir_name(ablation: Ablation, seed: u64) -> String {
    format!("{ablation}_seed{seed}")
}

/// One training run on the surrogate arena, without touching the disk.
pub fn train_run(cfg: &ExperimentConfig, ablation: Ablation, seed: u64) -> Result<RunOutcome> {
    let zones = cfg.zones()?;
    let mut env = SurrogateArena::new(cfg.surrogate_seed, cfg.noise(), substream(seed, Stream::ArenaNoise, 0));
    run(&cfg.run_config(ablation, seed), &mut env, &zones, Pose::new(zones.center[0], zones.center[1], 0.0))
}

/// Runs one training run and writes its directory under `cfg.output_dir`.
pub fn cmd_train(cfg: &ExperimentConfig, ablation: Ablation, seed: u64) -> Result<(PathBuf, RunReport)> {
    let outcome = train_run(cfg, ablation, seed)?;
    let dir = cfg.output_dir.join(run_dir_name(ablation, seed));
    let mut snapshot = cfg.clone();
    snapshot.ablation = ablation;
    snapshot.seed = seed;
    io::write_run(&dir, &outcome, &snapshot.to_text())?;
    Ok((dir, outcome.report))
}

/// Navigation trial `t` uses arena-noise index `t + 1`; index 0 belongs to
/// training.
pub fn nav_trials(archive: &UnstructuredArchive, maze: &MazeMap, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<TrialReport>> {
    par::map_range(cfg.exec(), cfg.nav_trials, |t| {
        if archive.is_empty() {
            let start = maze.spec.start;
            return Ok(TrialReport {
                success: false,
                n_actions: 0,
                elapsed: 0.0,
                final_distance: start.distance_to(maze.spec.goal),
                escape_hatches: 0,
                no_path: false,
                poses: vec![start],
            });
        }
        let mut env = SurrogateArena::new(cfg.surrogate_seed, cfg.noise(), substream(seed, Stream::ArenaNoise, t as u32 + 1));
        run_trial(archive, maze, &mut env, cfg.max_actions)
    })
    .into_iter()
    .collect()
}

/// Runs navigation trials for a stored archive and writes `nav_<t>` files
/// into `out`.
pub fn cmd_navigate(
    cfg: &ExperimentConfig,
    archive_path: &Path,
    maze_path: &Path,
    seed: u64,
    out: &Path,
) -> Result<Vec<TrialReport>> {
    let archive = io::read_archive(archive_path, cfg.archive_l, cfg.novelty_k)?;
    let maze = MazeMap::load(maze_path)?;
    let trials = nav_trials(&archive, &maze, cfg, seed)?;
    std::fs::create_dir_all(out)?;
    for (t, r) in trials.iter().enumerate() {
        io::write_trial(out, t, r)?;
    }
    Ok(trials)
}

/// Lower quartile, median and upper quartile with linear interpolation
/// between order statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Self {
        let mut v: Vec<f64> = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self { q1: quantile(&v, 0.25), median: quantile(&v, 0.5), q3: quantile(&v, 0.75) }
    }
}

/// Quantile of sorted data; NaN for an empty slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    Quartiles::of(values).median
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub ablation: Ablation,
    pub seed: u64,
    pub termination: Termination,
    pub real_evals_used: usize,
    pub recovery_evals: usize,
    pub archive_size: usize,
    pub coverage: f64,
    pub max_fitness: f64,
    pub qd_score: f64,
    pub nav_successes: usize,
    pub nav_trials: usize,
    /// Median over the trials of the number of actions taken.
    pub nav_median_actions: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub summary: RunSummary,
    pub trials: Vec<TrialReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationStats {
    pub ablation: Ablation,
    pub runs: usize,
    pub init_failures: usize,
    pub evals_used: Quartiles,
    pub archive_size: Quartiles,
    pub coverage: Quartiles,
    pub max_fitness: Quartiles,
    pub qd_score: Quartiles,
    pub nav_successes: Quartiles,
    pub nav_actions: Quartiles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub entries: Vec<RunEntry>,
    pub stats: Vec<AblationStats>,
}

impl AggregateReport {
    pub fn from_entries(entries: Vec<RunEntry>) -> Self {
        let stats = Ablation::ALL
            .iter()
            .filter_map(|&a| {
                let runs: Vec<&RunSummary> = entries.iter().map(|e| &e.summary).filter(|s| s.ablation == a).collect();
                if runs.is_empty() {
                    return None;
                }
                let q = |f: &dyn Fn(&RunSummary) -> f64| Quartiles::of(&runs.iter().map(|s| f(s)).collect::<Vec<_>>());
                Some(AblationStats {
                    ablation: a,
                    runs: runs.len(),
                    init_failures: runs.iter().filter(|s| s.termination == Termination::InitFailure).count(),
                    evals_used: q(&|s| s.real_evals_used as f64),
                    archive_size: q(&|s| s.archive_size as f64),
                    coverage: q(&|s| s.coverage),
                    max_fitness: q(&|s| s.max_fitness),
                    qd_score: q(&|s| s.qd_score),
                    nav_successes: q(&|s| s.nav_successes as f64),
                    nav_actions: q(&|s| s.nav_median_actions),
                })
            })
            .collect();
        Self { entries, stats }
    }

    pub fn entry(&self, ablation: Ablation, seed: u64) -> Option<&RunEntry> {
        self.entries.iter().find(|e| e.summary.ablation == ablation && e.summary.seed == seed)
    }

    pub fn stats_for(&self, ablation: Ablation) -> Option<&AblationStats> {
        self.stats.iter().find(|s| s.ablation == ablation)
    }
}

#[derive(Serialize)]
struct StatsRow {
    ablation: Ablation,
    metric: &'static str,
    q1: f64,
    median: f64,
    q3: f64,
}

pub const AGGREGATE_JSON: &str = "aggregate.json";
pub const RUNS_CSV: &str = "runs.csv";
pub const SUMMARY_CSV: &str = "summary.csv";

/// Trains one run and evaluates its archive on the maze, writing the run
/// directory along the way.
pub fn ablation_entry(cfg: &ExperimentConfig, maze: &MazeMap, ablation: Ablation, seed: u64) -> Result<RunEntry> {
    let (dir, report) = cmd_train(cfg, ablation, seed)?;
    let archive = io::read_archive(&dir.join(io::ARCHIVE_FILE), cfg.archive_l, cfg.novelty_k)?;
    if report.termination == Termination::InitFailure {
        log::warn!("{ablation} seed {seed}: initialisation left the recovery zone");
    }
    let trials = nav_trials(&archive, maze, cfg, seed)?;
    for (t, r) in trials.iter().enumerate() {
        io::write_trial(&dir, t, r)?;
    }
    let m = archive.metrics();
    let actions: Vec<f64> = trials.iter().map(|t| t.n_actions as f64).collect();
    let summary = RunSummary {
        ablation,
        seed,
        termination: report.termination,
        real_evals_used: report.real_evals_used,
        recovery_evals: report.recovery_evals,
        archive_size: m.size,
        coverage: m.coverage,
        max_fitness: m.max_fitness,
        qd_score: m.qd_score,
        nav_successes: trials.iter().filter(|t| t.success).count(),
        nav_trials: trials.len(),
        nav_median_actions: median(&actions),
    };
    log::info!(
        "{ablation} seed {seed}: {:?} after {} evals, {} solutions, {}/{} navigation successes",
        summary.termination,
        summary.real_evals_used,
        summary.archive_size,
        summary.nav_successes,
        summary.nav_trials
    );
    Ok(RunEntry { summary, trials })
}

/// Every ablation × training seed, each followed by navigation trials.
/// Writes `aggregate.json`, `runs.csv` and `summary.csv` into the output
/// directory.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<AggregateReport> {
    let maze = MazeMap::load(&cfg.maze)?;
    let jobs: Vec<(Ablation, u64)> =
        Ablation::ALL.iter().flat_map(|&a| cfg.training_seeds().into_iter().map(move |s| (a, s))).collect();
    let entries = par::map(cfg.exec(), &jobs, |&(a, s)| ablation_entry(cfg, &maze, a, s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let report = AggregateReport::from_entries(entries);
    std::fs::create_dir_all(&cfg.output_dir)?;
    io::write_json(&cfg.output_dir.join(AGGREGATE_JSON), &report)?;
    let runs: Vec<&RunSummary> = report.entries.iter().map(|e| &e.summary).collect();
    io::write_csv(&cfg.output_dir.join(RUNS_CSV), &runs)?;
    let mut rows = Vec::new();
    for s in &report.stats {
        for (metric, q) in [
            ("evals_used", s.evals_used),
            ("archive_size", s.archive_size),
            ("coverage", s.coverage),
            ("max_fitness", s.max_fitness),
            ("qd_score", s.qd_score),
            ("nav_successes", s.nav_successes),
            ("nav_actions", s.nav_actions),
        ] {
            rows.push(StatsRow { ablation: s.ablation, metric, q1: q.q1, median: q.median, q3: q.q3 });
        }
    }
    io::write_csv(&cfg.output_dir.join(SUMMARY_CSV), &rows)?;
    Ok(report)
}

pub const ARCHIVE_SVG: &str = "archive.svg";
pub const METRICS_SVG: &str = "metrics.svg";
pub const TRACE_SVG: &str = "trace.svg";

/// Renders the three figures of every run directory next to its data.
pub fn cmd_plot(dirs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for dir in dirs {
        let needed = [io::ARCHIVE_FILE, io::METRICS_FILE, io::TRACE_FILE, io::REPORT_FILE];
        let missing: Vec<&str> = needed.iter().copied().filter(|f| !dir.join(f).is_file()).collect();
        if !missing.is_empty() {
            return Err(Error::Missing(format!("{} lacks {} (expected {})", dir.display(), missing.join(", "), needed.join(", "))));
        }
        let report: RunReport = io::read_json(&dir.join(io::REPORT_FILE))?;
        let archive = io::read_archive(&dir.join(io::ARCHIVE_FILE), 0.0, 1)?;
        let metrics: Vec<io::MetricsRow> = io::read_csv(&dir.join(io::METRICS_FILE))?;
        let trace: Vec<io::TraceRow> = io::read_csv(&dir.join(io::TRACE_FILE))?;
        for (name, svg) in [
            (ARCHIVE_SVG, plot::archive_svg(&archive, &report.zones)),
            (METRICS_SVG, plot::metrics_svg(&metrics, report.real_evals_used)),
            (TRACE_SVG, plot::trace_svg(&trace, &report.pose_trace, &report.zones)),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, svg)?;
            written.push(path);
        }
    }
    Ok(written)
}
