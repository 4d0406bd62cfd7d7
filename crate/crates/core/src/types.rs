//! Value types shared by every stage: planar positions, timestamped samples,
//! flight plans and the two-sensor stream pair.
//!
//! Units are fixed everywhere: millimetres for lengths, milliseconds for
//! timestamps. Conversion from other units happens only at ingestion.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar position in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Position2D {
    pub x: f64,
    pub y: f64,
}

impl Position2D {
    pub const ORIGIN: Position2D = Position2D { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        debug_assert!(x.is_finite() && y.is_finite(), "non-finite position ({x}, {y})");
        Position2D { x, y }
    }

    /// Returns `None` unless both components are finite.
    pub fn checked(x: f64, y: f64) -> Option<Self> {
        (x.is_finite() && y.is_finite()).then_some(Position2D { x, y })
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Position2D) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// Rounds both components to the 0.1 mm log resolution.
    pub fn quantized(self) -> Self {
        Position2D {
            x: quantize_mm(self.x),
            y: quantize_mm(self.y),
        }
    }
}

pub(crate) fn quantize_mm(v: f64) -> f64 {
    let q = (v * 10.0).round() / 10.0;
    // avoid emitting "-0.0"
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

impl From<[f64; 2]> for Position2D {
    fn from([x, y]: [f64; 2]) -> Self {
        Position2D { x, y }
    }
}

impl From<Position2D> for [f64; 2] {
    fn from(p: Position2D) -> Self {
        [p.x, p.y]
    }
}

impl Add for Position2D {
    type Output = Position2D;
    fn add(self, rhs: Position2D) -> Position2D {
        Position2D::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Position2D {
    fn add_assign(&mut self, rhs: Position2D) {
        *self = *self + rhs;
    }
}

impl Sub for Position2D {
    type Output = Position2D;
    fn sub(self, rhs: Position2D) -> Position2D {
        Position2D::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Position2D {
    type Output = Position2D;
    fn neg(self) -> Position2D {
        Position2D::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Position2D {
    type Output = Position2D;
    fn mul(self, k: f64) -> Position2D {
        Position2D::new(self.x * k, self.y * k)
    }
}

impl fmt::Display for Position2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.1}, {:.1})", self.x, self.y)
    }
}

/// Euclidean distance in millimetres.
pub fn euclidean(a: Position2D, b: Position2D) -> f64 {
    (a - b).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sensor {
    Uwb,
    Vo,
}

impl Sensor {
    pub fn as_str(self) -> &'static str {
        match self {
            Sensor::Uwb => "uwb",
            Sensor::Vo => "vo",
        }
    }
}

impl fmt::Display for Sensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Timestamped position reading; `t_ms` counts milliseconds since run start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t_ms: i64,
    pub pos: Position2D,
    pub source: Sensor,
}

impl Sample {
    pub fn new(t_ms: i64, pos: Position2D, source: Sensor) -> Self {
        Sample { t_ms, pos, source }
    }

    pub fn t_secs(&self) -> f64 {
        self.t_ms as f64 / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRates {
    pub uwb_hz: f64,
    pub vo_hz: f64,
}

impl Default for SampleRates {
    fn default() -> Self {
        SampleRates {
            uwb_hz: 27.0,
            vo_hz: 200.0,
        }
    }
}

/// Ordered stopping points and the timing of the flight between them.
///
/// The drone hovers `dwell_ms` at every stop and flies straight between
/// consecutive stops with a trapezoidal speed profile. With `closed` set the
/// flight ends with a return leg to the first stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightPlan {
    pub stops: Vec<Position2D>,
    pub dwell_ms: i64,
    pub cruise_speed_mm_s: f64,
    pub accel_mm_s2: f64,
    pub sample_rates: SampleRates,
    #[serde(default)]
    pub closed: bool,
}

impl FlightPlan {
    /// Checks the plan invariants; `gamma_mm` is the stop activation radius.
    pub fn validate(&self, gamma_mm: f64) -> Result<()> {
        if self.stops.len() < 2 {
            return Err(Error::Config("a flight plan needs at least 2 stops".into()));
        }
        if self.dwell_ms <= 0 || self.cruise_speed_mm_s <= 0.0 || self.accel_mm_s2 <= 0.0 {
            return Err(Error::Config(
                "dwell, cruise speed and acceleration must be positive".into(),
            ));
        }
        if self.sample_rates.uwb_hz <= 0.0 || self.sample_rates.vo_hz <= 0.0 {
            return Err(Error::Config("sample rates must be positive".into()));
        }
        for (i, a) in self.stops.iter().enumerate() {
            if !(a.x.is_finite() && a.y.is_finite()) {
                return Err(Error::Config(format!("stop {i} is not finite")));
            }
            for (j, b) in self.stops.iter().enumerate().skip(i + 1) {
                if euclidean(*a, *b) <= 2.0 * gamma_mm {
                    return Err(Error::Config(format!(
                        "stops {i} and {j} are closer than 2*gamma = {} mm",
                        2.0 * gamma_mm
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of straight legs flown, including the closing leg.
    pub fn segment_count(&self) -> usize {
        self.stops.len() - 1 + usize::from(self.closed)
    }
}

/// Raw UWB and VO position streams of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StreamPair {
    pub uwb: Vec<Sample>,
    pub vo: Vec<Sample>,
}

impl StreamPair {
    pub fn new(uwb: Vec<Sample>, vo: Vec<Sample>) -> Self {
        StreamPair { uwb, vo }
    }

    pub fn validate(&self) -> Result<()> {
        if self.uwb.is_empty() || self.vo.is_empty() {
            return Err(Error::EmptyStream);
        }
        check_monotone(&self.uwb, Sensor::Uwb)?;
        check_monotone(&self.vo, Sensor::Vo)
    }
}

pub(crate) fn check_monotone(stream: &[Sample], sensor: Sensor) -> Result<()> {
    for w in stream.windows(2) {
        if w[1].t_ms <= w[0].t_ms {
            return Err(Error::NonMonotone {
                sensor: sensor.as_str(),
                t_ms: w[1].t_ms,
            });
        }
    }
    Ok(())
}

/// One UWB sample paired with the VO sample nearest in time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aligned {
    pub t_ms: i64,
    pub uwb: Position2D,
    pub vo: Position2D,
    pub vo_t_ms: i64,
}

/// Pairs every UWB sample with the VO sample whose timestamp is nearest;
/// ties go to the earlier VO sample. Both streams must be sorted.
pub fn align_streams(pair: &StreamPair) -> Result<Vec<Aligned>> {
    if pair.uwb.is_empty() || pair.vo.is_empty() {
        return Err(Error::EmptyStream);
    }
    let vo = &pair.vo;
    let mut j = 0usize;
    let out = pair
        .uwb
        .iter()
        .map(|u| {
            while j + 1 < vo.len() && (vo[j + 1].t_ms - u.t_ms).abs() < (vo[j].t_ms - u.t_ms).abs() {
                j += 1;
            }
            Aligned {
                t_ms: u.t_ms,
                uwb: u.pos,
                vo: vo[j].pos,
                vo_t_ms: vo[j].t_ms,
            }
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(x: f64, y: f64) -> Position2D {
        Position2D::new(x, y)
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean(p(0.0, 0.0), p(0.0, 0.0)), 0.0);
        assert_eq!(euclidean(p(0.0, 0.0), p(3.0, 4.0)), 5.0);
        assert_eq!(euclidean(p(1000.0, 0.0), p(3000.0, 1500.0)), 2500.0);
    }

    fn stream(ts: &[i64], sensor: Sensor) -> Vec<Sample> {
        ts.iter()
            .map(|&t| Sample::new(t, p(t as f64, 0.0), sensor))
            .collect()
    }

    #[test]
    fn align_picks_nearest_vo() {
        let vo: Vec<i64> = (0..=15).map(|k| k * 5).collect();
        let pair = StreamPair::new(stream(&[0, 37, 74], Sensor::Uwb), stream(&vo, Sensor::Vo));
        let a = align_streams(&pair).unwrap();
        let picked: Vec<i64> = a.iter().map(|s| s.vo_t_ms).collect();
        assert_eq!(picked, vec![0, 35, 75]);
    }

    #[test]
    fn align_tie_goes_to_earlier() {
        let pair = StreamPair::new(stream(&[5], Sensor::Uwb), stream(&[0, 10], Sensor::Vo));
        assert_eq!(align_streams(&pair).unwrap()[0].vo_t_ms, 0);
    }

    #[test]
    fn align_single_samples() {
        let pair = StreamPair::new(stream(&[3], Sensor::Uwb), stream(&[3], Sensor::Vo));
        let a = align_streams(&pair).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].t_ms, 3);
    }

    #[test]
    fn align_rejects_empty() {
        let pair = StreamPair::new(vec![], stream(&[0], Sensor::Vo));
        assert!(matches!(align_streams(&pair), Err(Error::EmptyStream)));
    }

    #[test]
    fn plan_validation() {
        let mut plan = FlightPlan {
            stops: vec![p(0.0, 0.0), p(1000.0, 0.0)],
            dwell_ms: 1000,
            cruise_speed_mm_s: 250.0,
            accel_mm_s2: 250.0,
            sample_rates: SampleRates::default(),
            closed: false,
        };
        assert!(plan.validate(100.0).is_ok());
        plan.stops.push(p(1150.0, 0.0));
        assert!(plan.validate(100.0).is_err());
        plan.stops.truncate(1);
        assert!(plan.validate(100.0).is_err());
    }

    fn jittered(seed: u64, n: usize, period: i64) -> Vec<i64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut t = 0i64;
        (0..n)
            .map(|_| {
                t += period + rng.random_range(0..5);
                t
            })
            .collect()
    }

    proptest! {
        #[test]
        fn euclidean_is_a_metric(ax in -1e4..1e4f64, ay in -1e4..1e4f64,
                                 bx in -1e4..1e4f64, by in -1e4..1e4f64,
                                 cx in -1e4..1e4f64, cy in -1e4..1e4f64) {
            let (a, b, c) = (p(ax, ay), p(bx, by), p(cx, cy));
            prop_assert!(euclidean(a, b) >= 0.0);
            prop_assert_eq!(euclidean(a, b), euclidean(b, a));
            prop_assert_eq!(euclidean(a, a), 0.0);
            prop_assert!(euclidean(a, c) <= euclidean(a, b) + euclidean(b, c) + 1e-9);
        }

        #[test]
        fn align_matches_exhaustive_search(seed in 0u64..10_000) {
            let uwb = stream(&jittered(seed, 40, 37), Sensor::Uwb);
            let vo = stream(&jittered(seed ^ 0xdead, 300, 5), Sensor::Vo);
            let pair = StreamPair::new(uwb.clone(), vo.clone());
            let a = align_streams(&pair).unwrap();
            prop_assert_eq!(a.len(), uwb.len());
            for (u, al) in uwb.iter().zip(&a) {
                let best = vo.iter().map(|v| (v.t_ms - u.t_ms).abs()).min().unwrap();
                let first = vo.iter().find(|v| (v.t_ms - u.t_ms).abs() == best).unwrap();
                prop_assert_eq!(al.vo_t_ms, first.t_ms);
            }
            // order preserved
            prop_assert!(a.windows(2).all(|w| w[0].t_ms < w[1].t_ms && w[0].vo_t_ms <= w[1].vo_t_ms));
        }
    }
}
