//! Deterministic flight simulator: ground truth for a stop-and-go plan and
//! synthetic UWB / visual-odometry position streams with their fault
//! patterns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{FlightPlan, Position2D, Sample, SampleRates, Sensor, StreamPair};

const UWB_STREAM: u64 = 1;
const VO_STREAM: u64 = 2;
const FAULT_STREAM: u64 = 3;

/// Fig.-7-style burst: consecutive UWB readings pushed out along one direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayConfig {
    pub prob_per_stop: f64,
    pub length_mm: f64,
    pub count: usize,
    /// Scatter of ray points around the ray line (mm).
    pub jitter_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UwbConfig {
    pub sigma_mm: f64,
    pub outlier_ray: RayConfig,
}

/// Segment-length underestimation: the VO registers `scale` times the true
/// displacement of an affected segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultConfig {
    pub prob_per_segment: f64,
    pub scale_range: [f64; 2],
}

/// Heavier faults from a given stop onward; the segment leaving `from_stop`
/// is always affected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SevereFaultConfig {
    pub from_stop: usize,
    pub prob_per_segment: f64,
    pub scale_range: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoConfig {
    pub sigma_mm: f64,
    pub underestimate: FaultConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severe: Option<SevereFaultConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub plan: FlightPlan,
    pub uwb: UwbConfig,
    pub vo: VoConfig,
    /// UWB beacon positions; informational only.
    pub anchors: Vec<Position2D>,
}

fn check_prob(p: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be in [0, 1], got {p}")))
    }
}

fn check_scale(r: [f64; 2], what: &str) -> Result<()> {
    if 0.0 < r[0] && r[0] <= r[1] && r[1] <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must satisfy 0 < lo <= hi <= 1, got {r:?}")))
    }
}

impl ScenarioConfig {
    pub fn validate(&self, gamma_mm: f64) -> Result<()> {
        self.plan.validate(gamma_mm)?;
        if !(self.uwb.sigma_mm >= 0.0 && self.vo.sigma_mm >= 0.0) {
            return Err(Error::Config("noise levels must be nonnegative".into()));
        }
        let ray = &self.uwb.outlier_ray;
        check_prob(ray.prob_per_stop, "uwb.outlier_ray.prob_per_stop")?;
        if !(ray.length_mm >= 0.0 && ray.jitter_mm >= 0.0) {
            return Err(Error::Config("ray length and jitter must be nonnegative".into()));
        }
        check_prob(self.vo.underestimate.prob_per_segment, "vo.underestimate.prob_per_segment")?;
        check_scale(self.vo.underestimate.scale_range, "vo.underestimate.scale_range")?;
        if let Some(s) = &self.vo.severe {
            check_prob(s.prob_per_segment, "vo.severe.prob_per_segment")?;
            check_scale(s.scale_range, "vo.severe.scale_range")?;
            if s.from_stop >= self.plan.stops.len() {
                return Err(Error::Config("vo.severe.from_stop is past the last stop".into()));
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Sixteen stops on a counterclockwise octagon inside the 3 m beacon square.
pub fn lab_stops() -> Vec<Position2D> {
    [
        (1000.0, 0.0),
        (1500.0, 0.0),
        (2000.0, 0.0),
        (2500.0, 500.0),
        (3000.0, 1000.0),
        (3000.0, 1500.0),
        (3000.0, 2000.0),
        (2500.0, 2500.0),
        (2000.0, 3000.0),
        (1500.0, 3000.0),
        (1000.0, 3000.0),
        (500.0, 2500.0),
        (0.0, 2000.0),
        (0.0, 1500.0),
        (0.0, 1000.0),
        (500.0, 500.0),
    ]
    .into_iter()
    .map(|(x, y)| Position2D::new(x, y))
    .collect()
}

pub fn lab_anchors() -> Vec<Position2D> {
    vec![
        Position2D::new(3000.0, 0.0),
        Position2D::new(3000.0, 3000.0),
        Position2D::new(0.0, 3000.0),
        Position2D::new(0.0, 0.0),
    ]
}

/// Lab replica with the typical fault rate of the visual odometer.
pub fn default_scenario() -> ScenarioConfig {
    ScenarioConfig {
        name: "default".into(),
        seed: 0,
        plan: FlightPlan {
            stops: lab_stops(),
            dwell_ms: 120_000,
            cruise_speed_mm_s: 250.0,
            accel_mm_s2: 250.0,
            sample_rates: SampleRates::default(),
            closed: true,
        },
        uwb: UwbConfig {
            sigma_mm: 105.0,
            outlier_ray: RayConfig {
                prob_per_stop: 0.25,
                length_mm: 600.0,
                count: 27,
                jitter_mm: 5.0,
            },
        },
        vo: VoConfig {
            sigma_mm: 1.0,
            underestimate: FaultConfig {
                prob_per_segment: 0.4,
                scale_range: [0.7, 0.95],
            },
            severe: None,
        },
        anchors: lab_anchors(),
    }
}

/// Mild underestimation on every segment and severe loss of references
/// from the sixth stop on.
pub fn worst_case_scenario() -> ScenarioConfig {
    let mut s = default_scenario();
    s.name = "worst-case".into();
    s.vo.underestimate = FaultConfig {
        prob_per_segment: 1.0,
        scale_range: [0.92, 0.925],
    };
    s.vo.severe = Some(SevereFaultConfig {
        from_stop: 5,
        prob_per_segment: 0.4,
        scale_range: [0.6, 0.85],
    });
    s
}

/// No VO faults.
pub fn best_case_scenario() -> ScenarioConfig {
    let mut s = default_scenario();
    s.name = "best-case".into();
    s.vo.underestimate.prob_per_segment = 0.0;
    s.vo.severe = None;
    s
}

pub fn preset(name: &str) -> Option<ScenarioConfig> {
    match name {
        "default" => Some(default_scenario()),
        "worst-case" | "worst" => Some(worst_case_scenario()),
        "best-case" | "best" => Some(best_case_scenario()),
        _ => None,
    }
}

pub const PRESETS: [&str; 3] = ["default", "worst-case", "best-case"];

/// Accelerate / cruise / decelerate along a straight segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trapezoid {
    pub length: f64,
    pub accel: f64,
    pub peak_speed: f64,
    pub t_accel: f64,
    pub t_cruise: f64,
}

impl Trapezoid {
    pub fn new(length: f64, cruise: f64, accel: f64) -> Self {
        let (peak, t_cruise) = if length * accel >= cruise * cruise {
            (cruise, (length - cruise * cruise / accel) / cruise)
        } else {
            ((length * accel).sqrt(), 0.0)
        };
        Trapezoid {
            length,
            accel,
            peak_speed: peak,
            t_accel: peak / accel,
            t_cruise,
        }
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        2.0 * self.t_accel + self.t_cruise
    }

    /// Distance covered after `t` seconds.
    pub fn distance(&self, t: f64) -> f64 {
        let total = self.duration();
        let t = t.clamp(0.0, total);
        if t <= self.t_accel {
            0.5 * self.accel * t * t
        } else if t <= self.t_accel + self.t_cruise {
            0.5 * self.accel * self.t_accel * self.t_accel + self.peak_speed * (t - self.t_accel)
        } else {
            let r = total - t;
            self.length - 0.5 * self.accel * r * r
        }
    }

    pub fn speed(&self, t: f64) -> f64 {
        let total = self.duration();
        if t <= 0.0 || t >= total {
            0.0
        } else if t <= self.t_accel {
            self.accel * t
        } else if t <= self.t_accel + self.t_cruise {
            self.peak_speed
        } else {
            self.accel * (total - t)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhaseKind {
    Dwell { stop: usize },
    Move { segment: usize, from: Position2D, to: Position2D, profile: Trapezoid },
    /// Final hover after a closed loop returns to the first stop.
    Tail { at: Position2D },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub start_ms: i64,
    pub end_ms: i64,
    pub kind: PhaseKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopWindow {
    pub index: usize,
    pub start_ms: i64,
    pub end_ms: i64,
}

impl StopWindow {
    pub fn midpoint_ms(&self) -> f64 {
        (self.start_ms + self.end_ms) as f64 / 2.0
    }
}

/// Kinematic truth at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthState {
    pub pos: Position2D,
    /// Velocity vector (mm/s).
    pub vel: Position2D,
    pub segment: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub phases: Vec<Phase>,
    pub stop_windows: Vec<StopWindow>,
    pub stops: Vec<Position2D>,
}

const TAIL_MS: i64 = 2000;

/// Dwell at each stop, then fly straight to the next one. Segment
/// durations are rounded up to whole milliseconds; the drone rests at the
/// segment end for the remainder.
pub fn build_truth(plan: &FlightPlan) -> GroundTruth {
    let mut phases = Vec::new();
    let mut windows = Vec::new();
    let mut t = 0i64;
    let n = plan.stops.len();
    for (i, &stop) in plan.stops.iter().enumerate() {
        windows.push(StopWindow {
            index: i,
            start_ms: t,
            end_ms: t + plan.dwell_ms,
        });
        phases.push(Phase {
            start_ms: t,
            end_ms: t + plan.dwell_ms,
            kind: PhaseKind::Dwell { stop: i },
        });
        t += plan.dwell_ms;
        let next = if i + 1 < n {
            Some(plan.stops[i + 1])
        } else if plan.closed {
            Some(plan.stops[0])
        } else {
            None
        };
        if let Some(to) = next {
            let profile = Trapezoid::new((to - stop).norm(), plan.cruise_speed_mm_s, plan.accel_mm_s2);
            let dur = (profile.duration() * 1000.0).ceil() as i64;
            phases.push(Phase {
                start_ms: t,
                end_ms: t + dur,
                kind: PhaseKind::Move { segment: i, from: stop, to, profile },
            });
            t += dur;
        }
    }
    if plan.closed {
        phases.push(Phase {
            start_ms: t,
            end_ms: t + TAIL_MS,
            kind: PhaseKind::Tail { at: plan.stops[0] },
        });
    }
    GroundTruth {
        phases,
        stop_windows: windows,
        stops: plan.stops.clone(),
    }
}

impl GroundTruth {
    pub fn end_ms(&self) -> i64 {
        self.phases.last().map_or(0, |p| p.end_ms)
    }

    fn phase_at(&self, t_ms: f64) -> &Phase {
        let i = self.phases.partition_point(|p| (p.end_ms as f64) < t_ms);
        &self.phases[i.min(self.phases.len() - 1)]
    }

    pub fn state_at(&self, t_ms: f64) -> TruthState {
        let ph = self.phase_at(t_ms);
        match ph.kind {
            PhaseKind::Dwell { stop } => TruthState {
                pos: self.stops[stop],
                vel: Position2D::ORIGIN,
                segment: None,
            },
            PhaseKind::Tail { at } => TruthState {
                pos: at,
                vel: Position2D::ORIGIN,
                segment: None,
            },
            PhaseKind::Move { segment, from, to, profile } => {
                let tau = (t_ms - ph.start_ms as f64) / 1000.0;
                let dir = (to - from) * (1.0 / profile.length);
                TruthState {
                    pos: from + dir * profile.distance(tau),
                    vel: dir * profile.speed(tau),
                    segment: Some(segment),
                }
            }
        }
    }

    pub fn pose_at(&self, t_ms: f64) -> Position2D {
        self.state_at(t_ms).pos
    }

    /// Stop whose dwell window contains `t_ms`.
    pub fn stop_at(&self, t_ms: i64) -> Option<usize> {
        self.stop_windows
            .iter()
            .find(|w| w.start_ms <= t_ms && t_ms <= w.end_ms)
            .map(|w| w.index)
    }

    pub fn path_length(&self) -> f64 {
        self.phases
            .iter()
            .map(|p| match p.kind {
                PhaseKind::Move { profile, .. } => profile.length,
                _ => 0.0,
            })
            .sum()
    }

    /// Sampled truth table at a fixed period, with positions on the 0.1 mm grid.
    pub fn sample(&self, period_ms: i64) -> TruthTrack {
        let end = self.end_ms();
        let rows = (0..=end / period_ms)
            .map(|k| {
                let t = k * period_ms;
                TruthRow {
                    t_ms: t,
                    pos: self.pose_at(t as f64).quantized(),
                    stop: self.stop_at(t),
                }
            })
            .collect();
        TruthTrack { rows }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub t_ms: i64,
    pub pos: Position2D,
    pub stop: Option<usize>,
}

/// Tabulated ground truth, as logged alongside sensor streams.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TruthTrack {
    pub rows: Vec<TruthRow>,
}

impl TruthTrack {
    /// Dwell windows reconstructed from runs of equal stop index.
    pub fn stop_windows(&self) -> Vec<StopWindow> {
        let mut out: Vec<StopWindow> = Vec::new();
        for r in &self.rows {
            let Some(i) = r.stop else { continue };
            match out.last_mut() {
                Some(w) if w.index == i => w.end_ms = r.t_ms,
                _ => out.push(StopWindow {
                    index: i,
                    start_ms: r.t_ms,
                    end_ms: r.t_ms,
                }),
            }
        }
        out
    }

    /// Stop positions by index, read at each window start.
    pub fn stop_positions(&self) -> Vec<(usize, Position2D)> {
        let mut out: Vec<(usize, Position2D)> = Vec::new();
        for r in &self.rows {
            if let Some(i) = r.stop {
                if out.last().is_none_or(|(j, _)| *j != i) {
                    out.push((i, r.pos));
                }
            }
        }
        out
    }

    /// Linear interpolation between rows; clamped at both ends.
    pub fn pose_at(&self, t_ms: f64) -> Option<Position2D> {
        let first = self.rows.first()?;
        let last = self.rows.last()?;
        if t_ms <= first.t_ms as f64 {
            return Some(first.pos);
        }
        if t_ms >= last.t_ms as f64 {
            return Some(last.pos);
        }
        let i = self.rows.partition_point(|r| (r.t_ms as f64) <= t_ms);
        let (a, b) = (&self.rows[i - 1], &self.rows[i]);
        let f = (t_ms - a.t_ms as f64) / (b.t_ms - a.t_ms) as f64;
        Some(a.pos + (b.pos - a.pos) * f)
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("validated nonnegative sigma")
}

/// Sample times `round(n * 1000 / rate)` up to `end_ms`.
pub fn sample_times(rate_hz: f64, end_ms: i64) -> Vec<i64> {
    let mut out = Vec::new();
    let mut n = 0u64;
    loop {
        let t = (n as f64 * 1000.0 / rate_hz).round() as i64;
        if t > end_ms {
            break;
        }
        if out.last() != Some(&t) {
            out.push(t);
        }
        n += 1;
    }
    out
}

/// Where outlier rays were injected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayEvent {
    pub stop: usize,
    pub start_ms: i64,
    pub direction_rad: f64,
}

pub fn synth_uwb(truth: &GroundTruth, cfg: &ScenarioConfig, seed: u64) -> (Vec<Sample>, Vec<RayEvent>) {
    let mut rng = rng_for(seed, UWB_STREAM);
    let noise = normal(cfg.uwb.sigma_mm);
    let ray = cfg.uwb.outlier_ray;
    let jitter = normal(ray.jitter_mm);
    let times = sample_times(cfg.plan.sample_rates.uwb_hz, truth.end_ms());

    let mut samples: Vec<Sample> = times
        .iter()
        .map(|&t| {
            let p = truth.pose_at(t as f64);
            let off = Position2D::new(noise.sample(&mut rng), noise.sample(&mut rng));
            Sample::new(t, p + off, Sensor::Uwb)
        })
        .collect();

    let mut events = Vec::new();
    for w in &truth.stop_windows {
        let hit = rng.random::<f64>() < ray.prob_per_stop;
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let u = rng.random::<f64>();
        if !hit || ray.count == 0 {
            continue;
        }
        let lo = times.partition_point(|&t| t < w.start_ms);
        let hi = times.partition_point(|&t| t <= w.end_ms);
        if hi - lo < ray.count {
            continue;
        }
        let first = lo + ((u * (hi - lo - ray.count + 1) as f64) as usize).min(hi - lo - ray.count);
        let dir = Position2D::new(theta.cos(), theta.sin());
        let stop = truth.stops[w.index];
        for k in 0..ray.count {
            let d = ray.length_mm * (k + 1) as f64 / ray.count as f64;
            let off = Position2D::new(jitter.sample(&mut rng), jitter.sample(&mut rng));
            samples[first + k].pos = stop + dir * d + off;
        }
        events.push(RayEvent {
            stop: w.index,
            start_ms: times[first],
            direction_rad: theta,
        });
    }
    for s in &mut samples {
        s.pos = s.pos.quantized();
    }
    (samples, events)
}

/// A hover cloud with one outlier ray spliced in: `n` Gaussian positions
/// around `center` whose run starting at a random index is replaced by
/// `ray.count` points walking outward from `center`. Returns the positions
/// and the index range holding the ray.
pub fn ray_cloud(
    center: Position2D,
    sigma_mm: f64,
    n: usize,
    ray: &RayConfig,
    seed: u64,
) -> (Vec<Position2D>, std::ops::Range<usize>) {
    let mut rng = rng_for(seed, UWB_STREAM);
    let noise = normal(sigma_mm);
    let jitter = normal(ray.jitter_mm);
    let mut pts: Vec<Position2D> = (0..n)
        .map(|_| center + Position2D::new(noise.sample(&mut rng), noise.sample(&mut rng)))
        .collect();
    let count = ray.count.min(n);
    let first = rng.random_range(0..=n - count);
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let dir = Position2D::new(theta.cos(), theta.sin());
    for k in 0..count {
        let d = ray.length_mm * (k + 1) as f64 / count as f64;
        let off = Position2D::new(jitter.sample(&mut rng), jitter.sample(&mut rng));
        pts[first + k] = center + dir * d + off;
    }
    (pts, first..first + count)
}

/// Underestimation applied to one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentFault {
    pub segment: usize,
    pub scale: f64,
    pub severe: bool,
}

/// Draws the per-segment fault schedule. Every segment consumes the same
/// number of draws so that changing probabilities leaves later draws intact.
pub fn draw_faults(cfg: &ScenarioConfig, seed: u64) -> Vec<SegmentFault> {
    let mut rng = rng_for(seed, FAULT_STREAM);
    let mut out = Vec::new();
    for seg in 0..cfg.plan.segment_count() {
        let (u_sev, u_mild, u_scale) = (rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
        let severe = cfg.vo.severe.filter(|s| {
            seg >= s.from_stop && (seg == s.from_stop || u_sev < s.prob_per_segment)
        });
        let (range, is_severe) = match severe {
            Some(s) => (s.scale_range, true),
            None if u_mild < cfg.vo.underestimate.prob_per_segment => (cfg.vo.underestimate.scale_range, false),
            None => continue,
        };
        out.push(SegmentFault {
            segment: seg,
            scale: range[0] + (range[1] - range[0]) * u_scale,
            severe: is_severe,
        });
    }
    out
}

/// Visual-odometer output model. Positions are truth plus an offset that is
/// constant except while an affected segment is flown, when it grows as
/// `(scale - 1)` times the displacement made so far.
#[derive(Debug, Clone)]
pub struct VoModel {
    faults: Vec<SegmentFault>,
    reboots: Vec<i64>,
}

impl VoModel {
    pub fn new(faults: Vec<SegmentFault>) -> Self {
        VoModel {
            faults,
            reboots: Vec::new(),
        }
    }

    pub fn faults(&self) -> &[SegmentFault] {
        &self.faults
    }

    /// A reboot cancels the fault of the segment in progress at `t_ms`.
    /// The output stays continuous: accumulated error is kept.
    pub fn reboot(&mut self, t_ms: i64) {
        self.reboots.push(t_ms);
    }

    fn scale_of(&self, segment: usize) -> f64 {
        self.faults
            .iter()
            .find(|f| f.segment == segment)
            .map_or(1.0, |f| f.scale)
    }

    /// Offset of the VO output from truth at each of `times` (sorted).
    pub fn offsets(&self, truth: &GroundTruth, times: &[i64]) -> Vec<Position2D> {
        let mut base = Position2D::ORIGIN;
        let mut out = Vec::with_capacity(times.len());
        let mut ti = 0;
        for ph in &truth.phases {
            let (segment, from) = match ph.kind {
                PhaseKind::Move { segment, from, .. } => (Some(segment), from),
                _ => (None, Position2D::ORIGIN),
            };
            let scale = segment.map_or(1.0, |s| self.scale_of(s));
            let cut = self
                .reboots
                .iter()
                .copied()
                .filter(|&r| r >= ph.start_ms && r < ph.end_ms)
                .min();
            let offset_at = |t: f64| -> Position2D {
                if segment.is_none() || scale == 1.0 {
                    return base;
                }
                let t = cut.map_or(t, |c| t.min(c as f64));
                base + (truth.pose_at(t) - from) * (scale - 1.0)
            };
            while ti < times.len() && times[ti] <= ph.end_ms {
                out.push(offset_at(times[ti] as f64));
                ti += 1;
            }
            if segment.is_some() {
                base = offset_at(ph.end_ms as f64);
            }
        }
        while ti < times.len() {
            out.push(base);
            ti += 1;
        }
        out
    }
}

pub fn synth_vo(truth: &GroundTruth, cfg: &ScenarioConfig, model: &VoModel, seed: u64) -> Vec<Sample> {
    let mut rng = rng_for(seed, VO_STREAM);
    let noise = normal(cfg.vo.sigma_mm);
    let times = sample_times(cfg.plan.sample_rates.vo_hz, truth.end_ms());
    let offsets = model.offsets(truth, &times);
    times
        .iter()
        .zip(offsets)
        .map(|(&t, off)| {
            let n = Position2D::new(noise.sample(&mut rng), noise.sample(&mut rng));
            Sample::new(t, (truth.pose_at(t as f64) + off + n).quantized(), Sensor::Vo)
        })
        .collect()
}

/// Everything generated for one (scenario, seed).
#[derive(Debug, Clone)]
pub struct SimRun {
    pub truth: GroundTruth,
    pub streams: StreamPair,
    pub faults: Vec<SegmentFault>,
    pub rays: Vec<RayEvent>,
}

pub fn simulate(cfg: &ScenarioConfig) -> SimRun {
    let truth = build_truth(&cfg.plan);
    let (uwb, rays) = synth_uwb(&truth, cfg, cfg.seed);
    let faults = draw_faults(cfg, cfg.seed);
    let vo = synth_vo(&truth, cfg, &VoModel::new(faults.clone()), cfg.seed);
    SimRun {
        truth,
        streams: StreamPair::new(uwb, vo),
        faults,
        rays,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quiet(mut cfg: ScenarioConfig) -> ScenarioConfig {
        cfg.uwb.sigma_mm = 0.0;
        cfg.uwb.outlier_ray.prob_per_stop = 0.0;
        cfg.vo.sigma_mm = 0.0;
        cfg.vo.underestimate.prob_per_segment = 0.0;
        cfg.vo.severe = None;
        cfg
    }

    #[test]
    fn presets_are_valid() {
        for name in PRESETS {
            preset(name).unwrap().validate(100.0).unwrap();
        }
        let d = default_scenario();
        assert_eq!(d.plan.stops.len(), 16);
        assert_eq!(d.plan.stops[0], Position2D::new(1000.0, 0.0));
        assert_eq!(d.plan.stops[5], Position2D::new(3000.0, 1500.0));
        for p in [(2000.0, 0.0), (3000.0, 1000.0), (3000.0, 2000.0), (0.0, 2000.0), (0.0, 1000.0)] {
            assert!(d.plan.stops.contains(&Position2D::new(p.0, p.1)));
        }
    }

    #[test]
    fn loop_is_counterclockwise_and_closes() {
        let stops = lab_stops();
        let n = stops.len();
        let area2: f64 = (0..n)
            .map(|i| {
                let (a, b) = (stops[i], stops[(i + 1) % n]);
                a.x * b.y - b.x * a.y
            })
            .sum();
        assert!(area2 > 0.0);
        let truth = build_truth(&default_scenario().plan);
        assert_eq!(truth.pose_at(truth.end_ms() as f64), stops[0]);
    }

    #[test]
    fn pose_equals_stop_during_dwell() {
        let truth = build_truth(&default_scenario().plan);
        for w in &truth.stop_windows {
            for t in [w.start_ms, (w.start_ms + w.end_ms) / 2, w.end_ms] {
                assert_eq!(truth.pose_at(t as f64), truth.stops[w.index]);
            }
        }
    }

    #[test]
    fn symmetric_segment_midpoint() {
        let mut plan = default_scenario().plan;
        plan.stops = vec![Position2D::new(0.0, 0.0), Position2D::new(1000.0, 0.0)];
        plan.closed = false;
        let truth = build_truth(&plan);
        let p = Trapezoid::new(1000.0, plan.cruise_speed_mm_s, plan.accel_mm_s2);
        let mid = plan.dwell_ms as f64 + p.duration() * 500.0;
        assert_relative_eq!(truth.pose_at(mid).x, 500.0, epsilon = 1e-9);
        assert_relative_eq!(truth.pose_at(mid).y, 0.0);
    }

    #[test]
    fn path_length_matches_integrated_speed() {
        let truth = build_truth(&default_scenario().plan);
        let dt = 0.1; // ms
        let steps = (truth.end_ms() as f64 / dt) as usize;
        let integrated: f64 = (0..steps)
            .map(|k| truth.state_at((k as f64 + 0.5) * dt).vel.norm() * dt / 1000.0)
            .sum();
        assert_relative_eq!(integrated, truth.path_length(), max_relative = 1e-6);
    }

    #[test]
    fn triangular_profile_for_short_segments() {
        let p = Trapezoid::new(100.0, 250.0, 250.0);
        assert_eq!(p.t_cruise, 0.0);
        assert_relative_eq!(p.distance(p.duration()), 100.0);
        assert_relative_eq!(p.distance(p.duration() / 2.0), 50.0, epsilon = 1e-12);
    }

    #[test]
    fn noiseless_streams_are_exact() {
        let cfg = quiet(default_scenario());
        let run = simulate(&cfg);
        for s in run.streams.uwb.iter().chain(&run.streams.vo) {
            let p = run.truth.pose_at(s.t_ms as f64).quantized();
            assert_eq!(s.pos, p);
        }
    }

    #[test]
    fn uwb_noise_level() {
        let mut cfg = quiet(default_scenario());
        cfg.uwb.sigma_mm = 50.0;
        cfg.plan.dwell_ms = 400_000;
        cfg.plan.stops.truncate(2);
        cfg.plan.closed = false;
        let truth = build_truth(&cfg.plan);
        let (uwb, _) = synth_uwb(&truth, &cfg, 7);
        let errs: Vec<f64> = uwb
            .iter()
            .take(10_000)
            .map(|s| s.pos.x - truth.pose_at(s.t_ms as f64).x)
            .collect();
        let n = errs.len() as f64;
        let mean = errs.iter().sum::<f64>() / n;
        let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd - 50.0).abs() < 2.5, "sd {sd}");
    }

    #[test]
    fn single_fault_offsets_later_samples() {
        let mut cfg = quiet(default_scenario());
        cfg.plan.stops = vec![
            Position2D::new(0.0, 0.0),
            Position2D::new(1000.0, 0.0),
            Position2D::new(1000.0, 1000.0),
        ];
        cfg.plan.closed = false;
        let truth = build_truth(&cfg.plan);
        let model = VoModel::new(vec![SegmentFault {
            segment: 0,
            scale: 0.7,
            severe: false,
        }]);
        let vo = synth_vo(&truth, &cfg, &model, 1);
        let w1 = truth.stop_windows[1];
        for s in &vo {
            if s.t_ms >= w1.start_ms {
                let off = s.pos - truth.pose_at(s.t_ms as f64);
                assert_relative_eq!(off.x, -300.0, epsilon = 0.1);
                assert_relative_eq!(off.y, 0.0, epsilon = 0.1);
            }
        }
    }

    #[test]
    fn reboot_cancels_rest_of_segment() {
        let mut cfg = quiet(default_scenario());
        cfg.plan.stops = vec![Position2D::new(0.0, 0.0), Position2D::new(1000.0, 0.0)];
        cfg.plan.closed = false;
        let truth = build_truth(&cfg.plan);
        let mut model = VoModel::new(vec![SegmentFault {
            segment: 0,
            scale: 0.5,
            severe: false,
        }]);
        let seg = truth.phases[1];
        let mid = (seg.start_ms + seg.end_ms) / 2;
        model.reboot(mid);
        let at_mid = truth.pose_at(mid as f64).x;
        let off = model.offsets(&truth, &[seg.end_ms])[0];
        assert_relative_eq!(off.x, -0.5 * at_mid, epsilon = 1e-9);
    }

    #[test]
    fn fault_fraction_matches_binomial() {
        let cfg = default_scenario();
        let n_seg = cfg.plan.segment_count() as i32;
        let runs = 2000;
        let hit = (0..runs).filter(|&s| !draw_faults(&cfg, s).is_empty()).count();
        let expected = 1.0 - 0.6f64.powi(n_seg);
        let se = (expected * (1.0 - expected) / runs as f64).sqrt();
        assert!((hit as f64 / runs as f64 - expected).abs() < 4.0 * se + 1e-3);
    }

    #[test]
    fn worst_case_always_faults_from_sixth_stop() {
        let cfg = worst_case_scenario();
        for seed in 0..50 {
            let f = draw_faults(&cfg, seed);
            assert!(f.iter().any(|f| f.segment == 5 && f.severe));
            assert!(f.iter().all(|f| f.severe == (f.segment >= 5 && f.scale <= 0.85)));
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = worst_case_scenario().with_seed(3);
        let (a, b) = (simulate(&cfg), simulate(&cfg));
        assert_eq!(a.streams, b.streams);
        assert_eq!(a.faults, b.faults);
        assert_ne!(simulate(&cfg.clone().with_seed(4)).streams, a.streams);
    }

    #[test]
    fn sampled_truth_recovers_windows() {
        let truth = build_truth(&default_scenario().plan);
        let track = truth.sample(5);
        let windows = track.stop_windows();
        assert_eq!(windows.len(), truth.stop_windows.len());
        for (a, b) in windows.iter().zip(&truth.stop_windows) {
            assert_eq!(a.index, b.index);
            assert!((a.start_ms - b.start_ms).abs() < 5 && (a.end_ms - b.end_ms).abs() < 5);
        }
        assert_eq!(
            track.stop_positions().into_iter().map(|(_, p)| p).collect::<Vec<_>>(),
            truth.stops
        );
        assert_eq!(track.pose_at(12.5), Some(truth.pose_at(12.5)));
    }
}
