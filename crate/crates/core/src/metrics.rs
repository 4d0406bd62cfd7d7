//! Stop accuracy, trajectory RMSE and multi-seed comparison tables.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineKind;
use crate::error::{Error, Result};
use crate::sim::TruthTrack;
use crate::types::{euclidean, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct StopAccuracy {
    pub avg_mm: f64,
    /// Population standard deviation.
    pub std_mm: f64,
    pub per_stop_mm: Vec<f64>,
}

fn nearest(track: &[Sample], t_ms: f64) -> &Sample {
    let i = track.partition_point(|s| (s.t_ms as f64) < t_ms);
    match (i.checked_sub(1).map(|j| &track[j]), track.get(i)) {
        // ties go to the earlier sample
        (Some(a), Some(b)) if t_ms - a.t_ms as f64 <= b.t_ms as f64 - t_ms => a,
        (_, Some(b)) => b,
        (Some(a), None) => a,
        (None, None) => unreachable!("track checked nonempty"),
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Error at each stop, read from the track sample nearest the middle of the
/// stop's dwell window.
pub fn stop_accuracy(track: &[Sample], truth: &TruthTrack) -> Result<StopAccuracy> {
    let positions: BTreeMap<usize, _> = truth.stop_positions().into_iter().collect();
    let mut per_stop = Vec::new();
    for w in truth.stop_windows() {
        let covered = track
            .iter()
            .any(|s| s.t_ms >= w.start_ms && s.t_ms <= w.end_ms);
        if !covered {
            return Err(Error::UncoveredStop { index: w.index });
        }
        let s = nearest(track, w.midpoint_ms());
        per_stop.push(euclidean(s.pos, positions[&w.index]));
    }
    let (avg_mm, std_mm) = mean_std(&per_stop);
    Ok(StopAccuracy {
        avg_mm,
        std_mm,
        per_stop_mm: per_stop,
    })
}

/// Root-mean-square distance to the interpolated truth. With
/// `segments_only`, samples inside dwell windows are left out.
pub fn trajectory_rmse(track: &[Sample], truth: &TruthTrack, segments_only: bool) -> Result<f64> {
    if track.is_empty() {
        return Err(Error::EmptyStream);
    }
    let windows = truth.stop_windows();
    let in_dwell = |t: i64| windows.iter().any(|w| w.start_ms <= t && t <= w.end_ms);
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in track {
        if segments_only && in_dwell(s.t_ms) {
            continue;
        }
        let p = truth.pose_at(s.t_ms as f64).ok_or(Error::EmptyStream)?;
        sum += euclidean(s.pos, p).powi(2);
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyStream);
    }
    Ok((sum / n as f64).sqrt())
}

/// Per-sample position error against interpolated truth, for error-vs-time plots.
pub fn error_series(track: &[Sample], truth: &TruthTrack) -> Result<Vec<(i64, f64)>> {
    track
        .iter()
        .map(|s| {
            let p = truth.pose_at(s.t_ms as f64).ok_or(Error::EmptyStream)?;
            Ok((s.t_ms, euclidean(s.pos, p)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: BaselineKind,
    pub seed: u64,
    #[serde(skip)]
    pub per_stop_error: Vec<f64>,
    pub avg_stop_mm: f64,
    pub std_stop_mm: f64,
    pub rmse_mm: f64,
    pub restarts: usize,
    pub corrections: usize,
}

impl RunReport {
    pub fn evaluate(
        method: BaselineKind,
        seed: u64,
        track: &[Sample],
        truth: &TruthTrack,
        restarts: usize,
        corrections: usize,
        segments_only: bool,
    ) -> Result<RunReport> {
        let acc = stop_accuracy(track, truth)?;
        Ok(RunReport {
            method,
            seed,
            avg_stop_mm: acc.avg_mm,
            std_stop_mm: acc.std_mm,
            per_stop_error: acc.per_stop_mm,
            rmse_mm: trajectory_rmse(track, truth, segments_only)?,
            restarts,
            corrections,
        })
    }
}

/// Mean and 95% normal-approximation half-width over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub half_width: f64,
}

impl Interval {
    pub fn of(values: &[f64]) -> Interval {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let half_width = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.96 * (var / n).sqrt()
        } else {
            0.0
        };
        Interval { mean, half_width }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.half_width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: BaselineKind,
    pub seeds: usize,
    pub avg_stop_mm: Interval,
    pub std_stop_mm: Interval,
    pub rmse_mm: Interval,
    pub restarts: Interval,
    pub corrections: Interval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

/// Groups reports by method (in first-seen order) and summarizes each group.
pub fn compare(reports: &[RunReport]) -> Result<Comparison> {
    if reports.is_empty() {
        return Err(Error::Config("no reports to compare".into()));
    }
    let mut order: Vec<BaselineKind> = Vec::new();
    for r in reports {
        if !order.contains(&r.method) {
            order.push(r.method);
        }
    }
    let rows = order
        .into_iter()
        .map(|m| {
            let group: Vec<&RunReport> = reports.iter().filter(|r| r.method == m).collect();
            let col = |f: fn(&RunReport) -> f64| Interval::of(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            ComparisonRow {
                method: m,
                seeds: group.len(),
                avg_stop_mm: col(|r| r.avg_stop_mm),
                std_stop_mm: col(|r| r.std_stop_mm),
                rmse_mm: col(|r| r.rmse_mm),
                restarts: col(|r| r.restarts as f64),
                corrections: col(|r| r.corrections as f64),
            }
        })
        .collect();
    Ok(Comparison { rows })
}

impl Comparison {
    pub fn row(&self, method: BaselineKind) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,seeds,avg_stop_mm,avg_stop_ci95,std_stop_mm,std_stop_ci95,rmse_mm,rmse_ci95,restarts,corrections\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.2},{:.2}",
                r.method,
                r.seeds,
                r.avg_stop_mm.mean,
                r.avg_stop_mm.half_width,
                r.std_stop_mm.mean,
                r.std_stop_mm.half_width,
                r.rmse_mm.mean,
                r.rmse_mm.half_width,
                r.restarts.mean,
                r.corrections.mean,
            );
        }
        out
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>5}  {:>18}  {:>18}  {:>18}  {:>8}",
            "method", "seeds", "avg stop (mm)", "std stop (mm)", "rmse (mm)", "restarts"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<16} {:>5}  {:>18}  {:>18}  {:>18}  {:>8.2}",
                r.method.as_str(),
                r.seeds,
                r.avg_stop_mm.to_string(),
                r.std_stop_mm.to_string(),
                r.rmse_mm.to_string(),
                r.restarts.mean,
            )?;
        }
        Ok(())
    }
}
