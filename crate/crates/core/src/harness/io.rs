//! Run-directory files.
//!
//! | file            | content                                                        |
//! |-----------------|----------------------------------------------------------------|
//! | `archive.jsonl` | one `{id, genotype[24], bd[2], fitness, n_evals}` per line     |
//! | `metrics.csv`   | one row per real evaluation, see [`MetricsRow`]                |
//! | `trace.csv`     | `episode,substep,x,y,theta`; substep 0 is the episode start    |
//! | `report.json`   | [`RunReport`]                                                  |
//! | `model.bin`     | ensemble checkpoint, dynamics-aware runs only                  |
//! | `config.toml`   | the configuration the run was produced with                    |
//! | `nav_<t>.json`  | [`TrialReport`] of navigation trial `t`                        |
//! | `nav_<t>.csv`   | `action,x,y,theta` pose after every action of trial `t`        |

use crate::archive::{Solution, UnstructuredArchive};
use crate::arena::{Pose, Zone};
use crate::dynmodel::{checkpoint, Ensemble};
use crate::navigation::TrialReport;
use crate::rfqd::{EvalKind, RunOutcome, RunReport};
use crate::{Error, Result};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const ARCHIVE_FILE: &str = "archive.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.json";
pub const MODEL_FILE: &str = "model.bin";
pub const CONFIG_FILE: &str = "config.toml";

pub fn write_archive(path: &Path, archive: &UnstructuredArchive) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in archive.solutions() {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_archive(path: &Path, l: f64, k: usize) -> Result<UnstructuredArchive> {
    let file = File::open(path).map_err(|e| Error::Missing(format!("{}: {e}", path.display())))?;
    let mut sols = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Solution = serde_json::from_str(&line)
            .map_err(|e| Error::Format { what: format!("{} line {}", path.display(), i + 1), reason: e.to_string() })?;
        sols.push(s);
    }
    Ok(UnstructuredArchive::from_solutions(sols, l, k))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub eval: usize,
    pub kind: EvalKind,
    pub size: usize,
    pub coverage: f64,
    pub max_fitness: f64,
    pub qd_score: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub zone: Zone,
}

pub fn metrics_rows(report: &RunReport) -> Vec<MetricsRow> {
    report
        .history
        .iter()
        .map(|r| MetricsRow {
            eval: r.eval,
            kind: r.kind,
            size: r.size,
            coverage: r.coverage,
            max_fitness: r.max_fitness,
            qd_score: r.qd_score,
            x: r.pose.x,
            y: r.pose.y,
            theta: r.pose.theta,
            zone: r.zone,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: usize,
    pub substep: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

pub fn trace_rows(trajectories: &[Vec<Pose>], starts: &[Pose]) -> Vec<TraceRow> {
    let mut rows = Vec::new();
    for (e, (traj, start)) in trajectories.iter().zip(starts).enumerate() {
        let row = |substep, p: &Pose| TraceRow { episode: e + 1, substep, x: p.x, y: p.y, theta: p.theta };
        rows.push(row(0, start));
        rows.extend(traj.iter().enumerate().map(|(k, p)| row(k + 1, p)));
    }
    rows
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Missing(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Format { what: path.display().to_string(), reason: e.to_string() })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Missing(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Format { what: path.display().to_string(), reason: e.to_string() })
}

pub fn write_model(path: &Path, ens: &Ensemble) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    checkpoint::write(ens, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Writes every per-run file except the navigation results.
pub fn write_run(dir: &Path, outcome: &RunOutcome, config_text: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_archive(&dir.join(ARCHIVE_FILE), &outcome.archive)?;
    write_csv(&dir.join(METRICS_FILE), &metrics_rows(&outcome.report))?;
    write_csv(&dir.join(TRACE_FILE), &trace_rows(&outcome.trajectories, &outcome.report.pose_trace))?;
    write_json(&dir.join(REPORT_FILE), &outcome.report)?;
    if let Some(ens) = &outcome.ensemble {
        write_model(&dir.join(MODEL_FILE), ens)?;
    }
    std::fs::write(dir.join(CONFIG_FILE), config_text)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavPoseRow {
    pub action: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

pub fn write_trial(dir: &Path, index: usize, trial: &TrialReport) -> Result<()> {
    write_json(&dir.join(format!("nav_{index}.json")), trial)?;
    let rows: Vec<NavPoseRow> =
        trial.poses.iter().enumerate().map(|(i, p)| NavPoseRow { action: i, x: p.x, y: p.y, theta: p.theta }).collect();
    write_csv(&dir.join(format!("nav_{index}.csv")), &rows)
}
