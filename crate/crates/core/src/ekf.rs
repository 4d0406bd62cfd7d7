//! Constant Turn Rate and Acceleration (CTRA) extended Kalman filter over a
//! single position stream.
//!
//! State order is `(x, y, v, psi, psi_dot, a)` in mm, mm/s, rad, rad/s and
//! mm/s². Measurements are full six-vectors in the same order, synthesized
//! from recent positions by [`pseudo_measurements`], so the observation
//! matrix is the identity and the gain is `K = P (P + R)^-1`.

use std::collections::VecDeque;
use std::f64::consts::{PI, TAU};

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Position2D, Sample};

pub type Vector6 = SVector<f64, 6>;
pub type Matrix6 = SMatrix<f64, 6, 6>;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a % TAU;
    if r > PI {
        r -= TAU;
    } else if r <= -PI {
        r += TAU;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CtraState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub psi: f64,
    pub psi_dot: f64,
    pub a: f64,
}

impl CtraState {
    pub fn new(x: f64, y: f64, v: f64, psi: f64, psi_dot: f64, a: f64) -> Self {
        CtraState {
            x,
            y,
            v,
            psi: normalize_angle(psi),
            psi_dot,
            a,
        }
    }

    pub fn at_rest(pos: Position2D, psi: f64) -> Self {
        CtraState::new(pos.x, pos.y, 0.0, psi, 0.0, 0.0)
    }

    pub fn to_vector(&self) -> Vector6 {
        Vector6::new(self.x, self.y, self.v, self.psi, self.psi_dot, self.a)
    }

    pub fn from_vector(v: &Vector6) -> Self {
        CtraState::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn position(&self) -> Position2D {
        Position2D::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }
}

/// `sin(z) / z`, continuous at zero.
fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        1.0 - z * z / 6.0
    } else {
        z.sin() / z
    }
}

/// Derivative of [`sinc`].
fn sinc_prime(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        -z / 3.0 + z * z * z / 30.0
    } else {
        (z * z.cos() - z.sin()) / (z * z)
    }
}

/// CTRA state transition over `dt` seconds.
///
/// Position advances along the arc `(v / psi_dot) * (sin(psi + dt psi_dot) - sin psi, ...)`,
/// evaluated through the equivalent half-angle form
/// `2 v sin(dt psi_dot / 2) / psi_dot * (cos h, sin h)` with `h = psi + dt psi_dot / 2`,
/// which stays accurate as `psi_dot` shrinks. Below `eps_yaw` the straight-line
/// limit `v dt (cos psi, sin psi)` is used.
pub fn predict_state(s: &CtraState, dt: f64, eps_yaw: f64) -> CtraState {
    let (dx, dy) = if s.psi_dot.abs() < eps_yaw {
        (s.v * dt * s.psi.cos(), s.v * dt * s.psi.sin())
    } else {
        let half = 0.5 * dt * s.psi_dot;
        let chord = dt * sinc(half);
        let h = s.psi + half;
        (s.v * chord * h.cos(), s.v * chord * h.sin())
    };
    CtraState::new(
        s.x + dx,
        s.y + dy,
        s.v + dt * s.a,
        s.psi + dt * s.psi_dot,
        s.psi_dot,
        s.a,
    )
}

/// Analytic Jacobian of [`predict_state`] with respect to the state vector.
pub fn jacobian(s: &CtraState, dt: f64, eps_yaw: f64) -> Matrix6 {
    let mut j = Matrix6::identity();
    let (chord, dchord, h) = if s.psi_dot.abs() < eps_yaw {
        (dt, 0.0, s.psi)
    } else {
        let half = 0.5 * dt * s.psi_dot;
        (dt * sinc(half), 0.5 * dt * dt * sinc_prime(half), s.psi + half)
    };
    let (sh, ch) = h.sin_cos();
    j[(0, 2)] = chord * ch;
    j[(0, 3)] = -s.v * chord * sh;
    j[(0, 4)] = s.v * (dchord * ch - chord * sh * 0.5 * dt);
    j[(1, 2)] = chord * sh;
    j[(1, 3)] = s.v * chord * ch;
    j[(1, 4)] = s.v * (dchord * sh + chord * ch * 0.5 * dt);
    j[(2, 5)] = dt;
    j[(3, 4)] = dt;
    j
}

/// Noise matrices, initial covariance and pseudo-measurement settings.
///
/// Diagonals are in state units: mm², (mm/s)², rad², (rad/s)², (mm/s²)².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub q: [f64; 6],
    pub r: [f64; 6],
    pub p0: [f64; 6],
    /// Yaw rates below this (rad/s) use the straight-line prediction.
    pub eps_yaw: f64,
    /// Time span of the position window used to synthesize rates.
    pub window_ms: i64,
    /// Window speed below which a moving track is declared hovering.
    pub hover_speed_mm_s: f64,
    /// Window speed above which a hovering track is declared moving.
    pub move_speed_mm_s: f64,
}

impl FilterParams {
    /// Process and measurement noise as tuned for the laboratory testbed,
    /// with rates taken from consecutive samples.
    pub fn original() -> Self {
        FilterParams {
            q: [0.0625, 0.0625, 1.44e-4, 9e-6, 9e-4, 0.25],
            r: [25.0, 25.0, 0.01, 0.01, 0.01, 0.09],
            p0: [1000.0, 1000.0, 100.0, 1.0, 0.1, 10.0],
            eps_yaw: 1e-6,
            window_ms: 0,
            hover_speed_mm_s: 0.0,
            move_speed_mm_s: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.q.iter().chain(&self.r).chain(&self.p0);
        if all.clone().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("Q, R and P0 diagonals must be finite and nonnegative".into()));
        }
        if !(self.eps_yaw >= 0.0) || self.window_ms < 0 {
            return Err(Error::Config("eps_yaw and window_ms must be nonnegative".into()));
        }
        if self.move_speed_mm_s < self.hover_speed_mm_s {
            return Err(Error::Config("move_speed_mm_s must be >= hover_speed_mm_s".into()));
        }
        Ok(())
    }

    fn diag(d: &[f64; 6]) -> Matrix6 {
        Matrix6::from_diagonal(&Vector6::from_row_slice(d))
    }
}

impl Default for FilterParams {
    /// Testbed noise levels with a position variance loose enough for the
    /// simulated UWB noise, and a two-second rate window with hover hysteresis.
    fn default() -> Self {
        FilterParams {
            r: [1.0e3, 1.0e3, 0.01, 0.01, 0.01, 0.09],
            window_ms: 2000,
            hover_speed_mm_s: 100.0,
            move_speed_mm_s: 150.0,
            ..FilterParams::original()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtraFilter {
    pub state: CtraState,
    pub p: Matrix6,
    pub q: Matrix6,
    pub r: Matrix6,
    pub eps_yaw: f64,
}

impl CtraFilter {
    pub fn new(state: CtraState, params: &FilterParams) -> Self {
        CtraFilter {
            state,
            p: FilterParams::diag(&params.p0),
            q: FilterParams::diag(&params.q),
            r: FilterParams::diag(&params.r),
            eps_yaw: params.eps_yaw,
        }
    }

    /// Predicts over `dt` seconds, then fuses the measurement `u`.
    pub fn step(&self, u: &CtraState, dt: f64) -> Result<CtraFilter> {
        let jac = jacobian(&self.state, dt, self.eps_yaw);
        let predicted = predict_state(&self.state, dt, self.eps_yaw);
        let p_pred = jac * self.p * jac.transpose() + self.q;

        let s = p_pred + self.r;
        let chol = s.cholesky().ok_or(Error::DegenerateInnovation)?;
        // P and S are symmetric, so K = P S^-1 = (S^-1 P)^T
        let gain = chol.solve(&p_pred).transpose();

        let mut innovation = u.to_vector() - predicted.to_vector();
        innovation[3] = normalize_angle(innovation[3]);
        let updated = predicted.to_vector() + gain * innovation;

        let p_upd = (Matrix6::identity() - gain) * p_pred;
        let p_sym = (p_upd + p_upd.transpose()) * 0.5;

        Ok(CtraFilter {
            state: CtraState::from_vector(&updated),
            p: p_sym,
            q: self.q,
            r: self.r,
            eps_yaw: self.eps_yaw,
        })
    }
}

/// Motion context carried between consecutive pseudo-measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionContext {
    pub heading: f64,
    pub moving: bool,
}

impl Default for MotionContext {
    fn default() -> Self {
        MotionContext {
            heading: 0.0,
            moving: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoMeasurement {
    pub u: CtraState,
    pub moving: bool,
}

/// Least-squares velocity (mm/s) of a sample run and its mean time (s).
fn ls_velocity(samples: &[Sample]) -> (Position2D, f64) {
    let n = samples.len() as f64;
    let t_ref = samples[samples.len() - 1].t_ms;
    let t = |s: &Sample| (s.t_ms - t_ref) as f64 / 1000.0;
    let t_mean = samples.iter().map(t).sum::<f64>() / n;
    let x_mean = samples.iter().map(|s| s.pos.x).sum::<f64>() / n;
    let y_mean = samples.iter().map(|s| s.pos.y).sum::<f64>() / n;
    let (mut stt, mut stx, mut sty) = (0.0, 0.0, 0.0);
    for s in samples {
        let dt = t(s) - t_mean;
        stt += dt * dt;
        stx += dt * (s.pos.x - x_mean);
        sty += dt * (s.pos.y - y_mean);
    }
    if stt <= 0.0 {
        return (Position2D::ORIGIN, t_mean);
    }
    (Position2D::new(stx / stt, sty / stt), t_mean)
}

/// Builds a full-state measurement from a window of positions.
///
/// Position is the newest sample. Velocity is the least-squares slope over
/// the window; heading is its direction. Yaw rate and acceleration are the
/// differences between the slopes of the older and newer halves of the
/// window (for three samples these reduce to plain first and second
/// differences). When the window speed indicates a hover, the rates are
/// zero and the heading from `ctx` is kept.
pub fn pseudo_measurements(
    window: &[Sample],
    ctx: MotionContext,
    params: &FilterParams,
) -> Result<PseudoMeasurement> {
    if window.len() < 3 {
        return Err(Error::InsufficientHistory {
            needed: 3,
            got: window.len(),
        });
    }
    let last = window[window.len() - 1].pos;
    let (vel, _) = ls_velocity(window);
    let speed = vel.norm();
    let threshold = if ctx.moving {
        params.hover_speed_mm_s
    } else {
        params.move_speed_mm_s
    };
    let moving = speed > threshold && speed > 0.0;
    if !moving {
        return Ok(PseudoMeasurement {
            u: CtraState::at_rest(last, ctx.heading),
            moving,
        });
    }

    let psi = vel.y.atan2(vel.x);
    let mid = (window.len() - 1) / 2;
    let (v_old, t_old) = ls_velocity(&window[..=mid]);
    let (v_new, t_new) = ls_velocity(&window[mid..]);
    // both halves share the newest-sample time reference
    let span = {
        let ref_shift = (window[window.len() - 1].t_ms - window[mid].t_ms) as f64 / 1000.0;
        t_new - (t_old - ref_shift)
    };
    let (psi_dot, a) = if span > 0.0 && v_old.norm() > 0.0 && v_new.norm() > 0.0 {
        let turn = normalize_angle(v_new.y.atan2(v_new.x) - v_old.y.atan2(v_old.x));
        (turn / span, (v_new.norm() - v_old.norm()) / span)
    } else {
        (0.0, 0.0)
    };
    Ok(PseudoMeasurement {
        u: CtraState::new(last.x, last.y, speed, psi, psi_dot, a),
        moving,
    })
}

/// When the filter is restarted (P back to P0, state reseeded from the next
/// measurement).
#[derive(Debug, Clone, PartialEq, Default)]
pub enum RestartPolicy {
    #[default]
    Never,
    /// Restart at these input indices.
    AtIndices(Vec<usize>),
    /// Restart whenever the track comes to a hover after moving, i.e. on
    /// arrival at each stopping point.
    OnHover,
}

/// Incremental CTRA filter over one position stream.
#[derive(Debug, Clone)]
pub struct StreamFilter {
    params: FilterParams,
    filter: Option<CtraFilter>,
    window: VecDeque<Sample>,
    ctx: MotionContext,
    last_t_ms: Option<i64>,
    restart_on_hover: bool,
    restart_pending: bool,
    restarts: usize,
}

impl StreamFilter {
    pub fn new(params: FilterParams, restart_on_hover: bool) -> Self {
        StreamFilter {
            params,
            filter: None,
            window: VecDeque::new(),
            ctx: MotionContext::default(),
            last_t_ms: None,
            restart_on_hover,
            restart_pending: false,
            restarts: 0,
        }
    }

    /// Requests a restart at the next sample.
    pub fn restart(&mut self) {
        self.restart_pending = true;
    }

    pub fn restarts(&self) -> usize {
        self.restarts
    }

    pub fn filter(&self) -> Option<&CtraFilter> {
        self.filter.as_ref()
    }

    pub fn is_moving(&self) -> bool {
        self.ctx.moving
    }

    /// Filtered position propagated from the latest sample to `t_ms`,
    /// without a measurement update.
    pub fn position_at(&self, t_ms: i64) -> Option<Position2D> {
        let f = self.filter.as_ref()?;
        let dt = (t_ms - self.last_t_ms?) as f64 / 1000.0;
        Some(predict_state(&f.state, dt, f.eps_yaw).position())
    }

    /// Consumes one sample and returns the filtered position at its time.
    pub fn push(&mut self, sample: Sample) -> Result<Position2D> {
        self.window.push_back(sample);
        while self.window.len() > 3
            && sample.t_ms - self.window[0].t_ms > self.params.window_ms
        {
            self.window.pop_front();
        }
        let dt = self
            .last_t_ms
            .map(|t| (sample.t_ms - t) as f64 / 1000.0)
            .unwrap_or(0.0);
        self.last_t_ms = Some(sample.t_ms);

        if self.window.len() < 3 {
            // not enough history for rates yet: seed at rest on the newest sample
            let seed = CtraState::at_rest(sample.pos, self.ctx.heading);
            self.filter = Some(CtraFilter::new(seed, &self.params));
            return Ok(sample.pos);
        }

        let window = self.window.make_contiguous();
        let pm = pseudo_measurements(window, self.ctx, &self.params)?;
        let arrived = self.ctx.moving && !pm.moving;
        self.ctx.moving = pm.moving;

        let reseed = self.restart_pending
            || (self.restart_on_hover && arrived)
            || self.filter.is_none();
        if reseed {
            if self.filter.is_some() {
                self.restarts += 1;
            }
            self.restart_pending = false;
            self.filter = Some(CtraFilter::new(pm.u, &self.params));
            self.ctx.heading = pm.u.psi;
            return Ok(pm.u.position());
        }

        let next = self
            .filter
            .as_ref()
            .expect("filter seeded above")
            .step(&pm.u, dt)?;
        self.ctx.heading = next.state.psi;
        let pos = next.state.position();
        self.filter = Some(next);
        Ok(pos)
    }
}

/// Runs the filter over a sorted stream; one output per input sample.
pub fn run_filter(
    stream: &[Sample],
    params: &FilterParams,
    restarts: &RestartPolicy,
) -> Result<Vec<Sample>> {
    let mut f = StreamFilter::new(params.clone(), matches!(restarts, RestartPolicy::OnHover));
    stream
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if let RestartPolicy::AtIndices(idx) = restarts {
                if idx.contains(&i) {
                    f.restart();
                }
            }
            f.push(*s).map(|pos| Sample::new(s.t_ms, pos, s.source))
        })
        .collect()
}
