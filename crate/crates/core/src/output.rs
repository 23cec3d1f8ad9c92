//! Run artifacts: per-run CSV records, aggregates over runs, and a TOML
//! summary.
//!
//! Layout of an output directory:
//!
//! ```text
//! runs/run_000_tracks.csv        run,step,node,ospa_m,estimated_cardinality,...
//! runs/run_000_registration.csv  run,step,node,neighbor,drift_error_m,...
//! aggregate_ospa.csv             step,node,runs,mean_ospa_m,mean_estimated_cardinality
//! aggregate_registration.csv     step,node,neighbor,runs,mean_drift_error_m,...
//! timing.csv                     run,seconds,failure
//! summary.toml
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::mean;
use crate::sim::{RegistrationRecord, RunRecord, TrackRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OspaAggregate {
    pub step: usize,
    pub node: usize,
    pub runs: usize,
    pub mean_ospa_m: f64,
    pub mean_estimated_cardinality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationAggregate {
    pub step: usize,
    pub node: usize,
    pub neighbor: usize,
    pub runs: usize,
    pub mean_drift_error_m: f64,
    pub mean_angle_error_rad: f64,
    pub mean_abs_angle_error_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TimingRow {
    run: usize,
    seconds: f64,
    failure: String,
}

/// Settings a set of runs was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub scenario: String,
    pub mode: String,
    pub runs: usize,
    pub seed: u64,
    pub consensus_iterations: usize,
    pub consensus_start_step: usize,
    pub n_max: usize,
    pub registration: bool,
}

/// Headline numbers over all runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    /// Mean OSPA over steps `[50, 150)`, all nodes and runs. Absent when
    /// the horizon does not reach the window.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_ospa_early_m: Option<f64>,
    /// Mean OSPA over steps `[200, 300]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_ospa_late_m: Option<f64>,
    /// Per node; empty when the late window is absent.
    #[serde(default)]
    pub mean_ospa_late_per_node_m: Vec<f64>,
    /// Registration errors at the last step, averaged over runs and edges.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_mean_drift_error_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_max_edge_drift_error_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_max_edge_abs_angle_error_deg: Option<f64>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub info: RunInfo,
    pub headline: Headline,
    #[serde(default)]
    pub failures: Vec<String>,
}

fn run_path(dir: &Path, run: usize, kind: &str) -> PathBuf {
    dir.join("runs").join(format!("run_{run:03}_{kind}.csv"))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

/// Writes the record files of one run.
pub fn write_run(dir: &Path, rec: &RunRecord) -> Result<()> {
    fs::create_dir_all(dir.join("runs"))?;
    write_csv(&run_path(dir, rec.run, "tracks"), &rec.tracks)?;
    write_csv(&run_path(dir, rec.run, "registration"), &rec.registration)?;
    Ok(())
}

/// Reads every run found under `dir/runs`, with timing when available.
pub fn read_runs(dir: &Path) -> Result<Vec<RunRecord>> {
    let runs_dir = dir.join("runs");
    let mut ids = Vec::new();
    for entry in fs::read_dir(&runs_dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_prefix("run_").and_then(|s| s.strip_suffix("_tracks.csv")) {
            if let Ok(id) = id.parse::<usize>() {
                ids.push(id);
            }
        }
    }
    ids.sort_unstable();
    if ids.is_empty() {
        return Err(Error::InvalidArgument(format!("no run records in {}", runs_dir.display())));
    }
    let timing: BTreeMap<usize, TimingRow> = match read_csv::<TimingRow>(&dir.join("timing.csv")) {
        Ok(rows) => rows.into_iter().map(|r| (r.run, r)).collect(),
        Err(_) => BTreeMap::new(),
    };
    ids.into_iter()
        .map(|id| {
            let tracks: Vec<TrackRecord> = read_csv(&run_path(dir, id, "tracks"))?;
            let reg_path = run_path(dir, id, "registration");
            let registration: Vec<RegistrationRecord> = if reg_path.exists() { read_csv(&reg_path)? } else { Vec::new() };
            let t = timing.get(&id);
            Ok(RunRecord {
                run: id,
                tracks,
                registration,
                seconds: t.map_or(0.0, |t| t.seconds),
                failure: t.and_then(|t| (!t.failure.is_empty()).then(|| t.failure.clone())),
            })
        })
        .collect()
}

/// Mean OSPA and cardinality per `(step, node)` over runs.
pub fn aggregate_ospa(runs: &[RunRecord]) -> Vec<OspaAggregate> {
    let mut acc: BTreeMap<(usize, usize), (usize, f64, f64)> = BTreeMap::new();
    for r in runs.iter().flat_map(|r| &r.tracks) {
        let e = acc.entry((r.step, r.node)).or_default();
        e.0 += 1;
        e.1 += r.ospa_m;
        e.2 += r.estimated_cardinality;
    }
    acc.into_iter()
        .map(|((step, node), (n, o, c))| OspaAggregate {
            step,
            node,
            runs: n,
            mean_ospa_m: o / n as f64,
            mean_estimated_cardinality: c / n as f64,
        })
        .collect()
}

/// Mean registration errors per `(step, node, neighbor)` over runs.
pub fn aggregate_registration(runs: &[RunRecord]) -> Vec<RegistrationAggregate> {
    let mut acc: BTreeMap<(usize, usize, usize), (usize, f64, f64, f64)> = BTreeMap::new();
    for r in runs.iter().flat_map(|r| &r.registration) {
        let e = acc.entry((r.step, r.node, r.neighbor)).or_default();
        e.0 += 1;
        e.1 += r.drift_error_m;
        e.2 += r.angle_error_rad;
        e.3 += r.angle_error_rad.abs();
    }
    acc.into_iter()
        .map(|((step, node, neighbor), (n, d, a, aa))| RegistrationAggregate {
            step,
            node,
            neighbor,
            runs: n,
            mean_drift_error_m: d / n as f64,
            mean_angle_error_rad: a / n as f64,
            mean_abs_angle_error_rad: aa / n as f64,
        })
        .collect()
}

/// Headline numbers from the records.
pub fn headline(runs: &[RunRecord]) -> Headline {
    let tracks = || runs.iter().flat_map(|r| &r.tracks);
    let early = mean(tracks().filter(|r| (50..150).contains(&r.step)).map(|r| r.ospa_m));
    let late = mean(tracks().filter(|r| (200..=300).contains(&r.step)).map(|r| r.ospa_m));
    let n_nodes = tracks().map(|r| r.node + 1).max().unwrap_or(0);
    let per_node = (0..n_nodes)
        .filter_map(|i| mean(tracks().filter(|r| r.node == i && (200..=300).contains(&r.step)).map(|r| r.ospa_m)))
        .collect();
    let agg = aggregate_registration(runs);
    let last = agg.iter().map(|a| a.step).max();
    let final_rows: Vec<&RegistrationAggregate> = agg.iter().filter(|a| Some(a.step) == last).collect();
    let (fm, fd, fa) = if final_rows.is_empty() {
        (None, None, None)
    } else {
        (
            mean(final_rows.iter().map(|a| a.mean_drift_error_m)),
            final_rows.iter().map(|a| a.mean_drift_error_m).reduce(f64::max),
            final_rows.iter().map(|a| a.mean_abs_angle_error_rad.to_degrees()).reduce(f64::max),
        )
    };
    Headline {
        mean_ospa_early_m: early,
        mean_ospa_late_m: late,
        mean_ospa_late_per_node_m: per_node,
        final_mean_drift_error_m: fm,
        final_max_edge_drift_error_m: fd,
        final_max_edge_abs_angle_error_deg: fa,
        total_seconds: runs.iter().map(|r| r.seconds).sum(),
    }
}

/// Writes aggregates, timing, and the summary for `runs`.
pub fn write_aggregates(dir: &Path, info: &RunInfo, runs: &[RunRecord]) -> Result<Summary> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("aggregate_ospa.csv"), &aggregate_ospa(runs))?;
    write_csv(&dir.join("aggregate_registration.csv"), &aggregate_registration(runs))?;
    let timing: Vec<TimingRow> = runs
        .iter()
        .map(|r| TimingRow {
            run: r.run,
            seconds: r.seconds,
            failure: r.failure.clone().unwrap_or_default(),
        })
        .collect();
    write_csv(&dir.join("timing.csv"), &timing)?;
    let summary = Summary {
        info: info.clone(),
        headline: headline(runs),
        failures: runs
            .iter()
            .filter_map(|r| r.failure.as_ref().map(|f| format!("run {}: {f}", r.run)))
            .collect(),
    };
    fs::write(dir.join("summary.toml"), toml::to_string_pretty(&summary)?)?;
    Ok(summary)
}

pub fn read_summary(dir: &Path) -> Result<Summary> {
    Ok(toml::from_str(&fs::read_to_string(dir.join("summary.toml"))?)?)
}
