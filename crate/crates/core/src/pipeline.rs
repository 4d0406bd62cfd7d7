//! Self-corrective fusion: the visual odometer is trusted while it agrees
//! with the filtered UWB track; otherwise stop estimates from clustered UWB
//! data are used to shift all later VO outputs by a cumulative correction
//! vector and to reboot the odometer.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::cluster::{region_gate, ClusterParams, StopDetector, StopEstimate};
use crate::ekf::{FilterParams, StreamFilter};
use crate::error::{Error, Result};
use crate::types::{euclidean, FlightPlan, Position2D, Sample, Sensor, StreamPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Corrected VO is emitted.
    Vo,
    /// Sensors disagree by at least beta; filtered UWB is emitted.
    Kalman,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vo => "vo",
            Mode::Kalman => "kalman",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "vo" => Ok(Mode::Vo),
            "kalman" => Ok(Mode::Kalman),
            _ => Err(format!("unknown mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Mutual-error threshold (mm).
    pub beta_mm: f64,
    pub cluster: ClusterParams,
    pub filter: FilterParams,
    /// VO displacement window used to tell hover from flight.
    pub hover_window_ms: i64,
    /// VO speed below which the drone starts hovering.
    pub hover_enter_mm_s: f64,
    /// VO speed above which a hovering drone is moving again.
    pub hover_exit_mm_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            beta_mm: 30.0,
            cluster: ClusterParams::default(),
            filter: FilterParams::default(),
            hover_window_ms: 200,
            hover_enter_mm_s: 20.0,
            hover_exit_mm_s: 50.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_mm > 0.0) {
            return Err(Error::Config("beta must be positive".into()));
        }
        if self.hover_window_ms <= 0
            || !(self.hover_enter_mm_s > 0.0 && self.hover_exit_mm_s >= self.hover_enter_mm_s)
        {
            return Err(Error::Config(
                "hover window must be positive and 0 < hover_enter <= hover_exit".into(),
            ));
        }
        self.cluster.validate()?;
        self.filter.validate()
    }
}

pub fn corrected_vo(x_o: Position2D, w: Position2D) -> Position2D {
    x_o + w
}

pub fn mode_select(y_o: Position2D, y_u: Position2D, beta_mm: f64) -> Mode {
    if euclidean(y_o, y_u) >= beta_mm {
        Mode::Kalman
    } else {
        Mode::Vo
    }
}

/// Returns the new correction vector and whether the odometer must reboot.
pub fn update_correction(
    s_prime: Position2D,
    y_o_i: Position2D,
    w: Position2D,
    beta_mm: f64,
) -> (Position2D, bool) {
    if euclidean(s_prime, y_o_i) >= beta_mm {
        (w + (s_prime - y_o_i), true)
    } else {
        (w, false)
    }
}

/// What happened at one planned stop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRecord {
    pub index: usize,
    pub planned: Position2D,
    /// None when the stop was passed without the detector engaging.
    pub estimate: Option<StopEstimate>,
    /// Closest corrected VO sample of the segment to the estimate.
    pub y_o_i: Option<Position2D>,
    /// Change applied to the correction vector.
    pub correction: Position2D,
    pub restart: bool,
    pub t_ms: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RestartEvent {
    pub t_ms: i64,
    pub stop: usize,
}

/// Pipeline state between samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionState {
    pub w: Position2D,
    /// Index of the next planned stop.
    pub segment_index: usize,
    pub restarts: Vec<RestartEvent>,
    pub mode: Mode,
}

impl Default for CorrectionState {
    fn default() -> Self {
        CorrectionState {
            w: Position2D::ORIGIN,
            segment_index: 0,
            restarts: Vec::new(),
            mode: Mode::Vo,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedTrack {
    /// Final position estimate, one per VO sample.
    pub samples: Vec<Sample>,
    pub modes: Vec<Mode>,
    pub stops: Vec<StopRecord>,
    pub restarts: Vec<RestartEvent>,
    /// Correction vector after each change, with the time it took effect.
    pub w_history: Vec<(i64, Position2D)>,
    pub filtered_uwb: Vec<Sample>,
    pub filter_restarts: usize,
}

impl FusedTrack {
    pub fn corrections(&self) -> usize {
        self.stops.iter().filter(|s| s.restart).count()
    }

    pub fn stop_estimates(&self) -> Vec<StopEstimate> {
        self.stops.iter().filter_map(|s| s.estimate).collect()
    }
}

/// Hover/departure signal from the visual odometer: its output is smooth
/// even when its scale is wrong, so it reveals motion long before the
/// filtered UWB track does.
#[derive(Debug, Clone)]
struct HoverMonitor {
    window_ms: i64,
    enter_mm_s: f64,
    exit_mm_s: f64,
    recent: VecDeque<Sample>,
    hovering: Option<bool>,
}

impl HoverMonitor {
    /// Returns (hovering now, departure just detected).
    fn push(&mut self, s: Sample) -> (bool, bool) {
        self.recent.push_back(s);
        while self.recent.len() > 2 && s.t_ms - self.recent[1].t_ms >= self.window_ms {
            self.recent.pop_front();
        }
        let span = s.t_ms - self.recent[0].t_ms;
        if span < self.window_ms {
            return (self.hovering.unwrap_or(false), false);
        }
        let speed = ls_speed(&self.recent);
        let now = match self.hovering {
            Some(true) => speed <= self.exit_mm_s,
            _ => speed < self.enter_mm_s,
        };
        let departed = self.hovering == Some(true) && !now;
        self.hovering = Some(now);
        (now, departed)
    }
}

/// Least-squares speed over a window, mm/s.
fn ls_speed(window: &VecDeque<Sample>) -> f64 {
    let n = window.len() as f64;
    let t0 = window[0].t_ms;
    let t_mean = window.iter().map(|s| (s.t_ms - t0) as f64).sum::<f64>() / n;
    let p_mean = window.iter().fold(Position2D::ORIGIN, |acc, s| acc + s.pos) * (1.0 / n);
    let (mut stt, mut stp) = (0.0, Position2D::ORIGIN);
    for s in window {
        let dt = (s.t_ms - t0) as f64 - t_mean;
        stt += dt * dt;
        stp += (s.pos - p_mean) * dt;
    }
    (stp * (1000.0 / stt)).norm()
}

struct Runner<'a> {
    plan: &'a FlightPlan,
    cfg: &'a PipelineConfig,
    state: CorrectionState,
    detector: Option<StopDetector>,
    // the Kalman-selected condition held at this stop, so the estimate is used
    engaged: bool,
    // estimate reached before the stop was engaged
    pending: Option<StopEstimate>,
    // corrected VO positions since the last stop estimate
    segment_vo: Vec<Position2D>,
    hovering: bool,
    // the track has hovered inside the current stop's region
    visited: bool,
    stops: Vec<StopRecord>,
    w_history: Vec<(i64, Position2D)>,
}

impl Runner<'_> {
    fn current_stop(&self) -> Option<Position2D> {
        self.plan.stops.get(self.state.segment_index).copied()
    }

    fn advance(&mut self, record: StopRecord) {
        // a stop passed without an estimate keeps its VO history, so the
        // closest-vertex search spans everything since the last estimate
        if record.estimate.is_some() {
            self.segment_vo.clear();
        }
        self.stops.push(record);
        self.state.segment_index += 1;
        self.detector = None;
        self.engaged = false;
        self.pending = None;
        self.visited = false;
    }

    fn finalize(&mut self, est: StopEstimate, t_ms: i64) {
        let i = self.state.segment_index;
        let y_o_i = self
            .segment_vo
            .iter()
            .copied()
            .min_by(|a, b| euclidean(*a, est.pos).total_cmp(&euclidean(*b, est.pos)));
        let (w_new, restart) = match y_o_i {
            Some(y) => update_correction(est.pos, y, self.state.w, self.cfg.beta_mm),
            None => (self.state.w, false),
        };
        let correction = w_new - self.state.w;
        if restart {
            self.state.w = w_new;
            self.state.restarts.push(RestartEvent { t_ms, stop: i });
            self.w_history.push((t_ms, w_new));
        }
        self.advance(StopRecord {
            index: i,
            planned: self.plan.stops[i],
            estimate: Some(est),
            y_o_i,
            correction,
            restart,
            t_ms,
        });
    }

    fn skip(&mut self, t_ms: i64) {
        let i = self.state.segment_index;
        self.advance(StopRecord {
            index: i,
            planned: self.plan.stops[i],
            estimate: None,
            y_o_i: None,
            correction: Position2D::ORIGIN,
            restart: false,
            t_ms,
        });
    }

    /// Closes the current stop when the drone leaves it.
    fn depart(&mut self, t_ms: i64) -> Result<()> {
        if !self.engaged {
            if self.visited || self.detector.is_some() {
                self.skip(t_ms);
            }
            return Ok(());
        }
        if let Some(est) = self.pending.take() {
            self.finalize(est, t_ms);
        } else if let Some(det) = self.detector.take() {
            let est = det.finish().expect("a running detector has consumed samples");
            if est.support < self.cfg.cluster.k1 {
                return Err(Error::StopDetection {
                    index: est.index,
                    support: est.support,
                    k1: self.cfg.cluster.k1,
                });
            }
            self.finalize(est, t_ms);
        } else if self.visited {
            self.skip(t_ms);
        }
        Ok(())
    }

    fn note_position(&mut self, p: Position2D) {
        if let Some(stop) = self.current_stop() {
            if self.hovering && region_gate(p, stop, self.cfg.cluster.gamma_mm) {
                self.visited = true;
            }
        }
    }

    /// Handles a new filtered UWB position against the latest corrected VO.
    fn on_uwb(&mut self, t_ms: i64, y_u: Position2D, y_o: Option<Position2D>) {
        let Some(stop) = self.current_stop() else {
            return;
        };
        self.note_position(y_u);
        if !self.hovering || !region_gate(y_u, stop, self.cfg.cluster.gamma_mm) {
            return;
        }
        if !self.engaged
            && y_o.is_some_and(|y_o| mode_select(y_o, y_u, self.cfg.beta_mm) == Mode::Kalman)
        {
            self.engaged = true;
            if let Some(est) = self.pending.take() {
                self.finalize(est, t_ms);
                return;
            }
        }
        if self.pending.is_some() {
            return;
        }
        let index = self.state.segment_index;
        let det = self
            .detector
            .get_or_insert_with(|| StopDetector::new(index, self.cfg.cluster));
        if let Some(est) = det.push(y_u) {
            if self.engaged {
                self.finalize(est, t_ms);
            } else {
                self.pending = Some(est);
            }
        }
    }

    /// Passes the current stop once the track has reached the next stop's
    /// region without the current one having been visited.
    fn maybe_skip(&mut self, t_ms: i64, p: Position2D) {
        if self.detector.is_some() {
            return;
        }
        let Some(&next) = self.plan.stops.get(self.state.segment_index + 1) else {
            return;
        };
        if region_gate(p, next, self.cfg.cluster.gamma_mm) {
            self.skip(t_ms);
        }
    }
}

/// Runs the method over a recorded stream pair. Samples are processed in
/// time order, UWB first on equal timestamps. Reboot events are reported in
/// the result; a recorded VO stream cannot react to them.
pub fn run_pipeline(pair: &StreamPair, plan: &FlightPlan, cfg: &PipelineConfig) -> Result<FusedTrack> {
    pair.validate()?;
    cfg.validate()?;
    let mut filter = StreamFilter::new(cfg.filter.clone(), true);
    let mut monitor = HoverMonitor {
        window_ms: cfg.hover_window_ms,
        enter_mm_s: cfg.hover_enter_mm_s,
        exit_mm_s: cfg.hover_exit_mm_s,
        recent: VecDeque::new(),
        hovering: None,
    };
    let mut runner = Runner {
        plan,
        cfg,
        state: CorrectionState::default(),
        detector: None,
        engaged: false,
        pending: None,
        segment_vo: Vec::new(),
        hovering: false,
        visited: false,
        stops: Vec::new(),
        w_history: vec![(pair.vo[0].t_ms.min(pair.uwb[0].t_ms), Position2D::ORIGIN)],
    };

    let mut samples = Vec::with_capacity(pair.vo.len());
    let mut modes = Vec::with_capacity(pair.vo.len());
    let mut filtered = Vec::with_capacity(pair.uwb.len());
    let mut y_u: Option<Position2D> = None;
    let mut y_o: Option<Position2D> = None;
    let mut ui = 0;

    for x_o in &pair.vo {
        while ui < pair.uwb.len() && pair.uwb[ui].t_ms <= x_o.t_ms {
            let s = pair.uwb[ui];
            let p = filter.push(s)?;
            filtered.push(Sample::new(s.t_ms, p, Sensor::Uwb));
            y_u = Some(p);
            runner.on_uwb(s.t_ms, p, y_o);
            ui += 1;
        }
        let (hovering, departed) = monitor.push(*x_o);
        runner.hovering = hovering;
        if departed {
            runner.depart(x_o.t_ms)?;
        }
        let yo = corrected_vo(x_o.pos, runner.state.w);
        y_o = Some(yo);
        runner.segment_vo.push(yo);
        runner.note_position(yo);
        runner.maybe_skip(x_o.t_ms, yo);
        if let Some(yu) = y_u {
            runner.maybe_skip(x_o.t_ms, yu);
        }

        // the filter state carried forward to this VO timestamp
        let y_u_now = y_u.and(filter.position_at(x_o.t_ms));
        let mode = match y_u_now {
            Some(yu) => mode_select(yo, yu, cfg.beta_mm),
            None => Mode::Vo,
        };
        runner.state.mode = mode;
        let out = match (mode, y_u_now) {
            (Mode::Kalman, Some(yu)) => yu,
            _ => yo,
        };
        samples.push(Sample::new(x_o.t_ms, out, Sensor::Vo));
        modes.push(mode);
    }
    // trailing UWB samples still feed a stop in progress
    while ui < pair.uwb.len() {
        let s = pair.uwb[ui];
        let p = filter.push(s)?;
        filtered.push(Sample::new(s.t_ms, p, Sensor::Uwb));
        runner.on_uwb(s.t_ms, p, y_o);
        ui += 1;
    }
    let t_end = pair.vo.last().map_or(0, |s| s.t_ms).max(pair.uwb.last().map_or(0, |s| s.t_ms));
    runner.depart(t_end)?;

    Ok(FusedTrack {
        samples,
        modes,
        restarts: runner.state.restarts,
        stops: runner.stops,
        w_history: runner.w_history,
        filtered_uwb: filtered,
        filter_restarts: filter.restarts(),
    })
}
