//! Comparison methods: raw sensor streams, the CTRA filter on UWB alone,
//! and two single-filter fusions of both sensors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ekf::{run_filter, FilterParams, RestartPolicy};
use crate::error::Result;
use crate::pipeline::{run_pipeline, Mode, PipelineConfig, StopRecord};
use crate::types::{align_streams, FlightPlan, Sample, Sensor, StreamPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    RawUwb,
    RawVo,
    PozyxCtra,
    AvgFusion,
    DirectFusion,
    SelfCorrective,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 6] = [
        BaselineKind::SelfCorrective,
        BaselineKind::AvgFusion,
        BaselineKind::DirectFusion,
        BaselineKind::RawVo,
        BaselineKind::RawUwb,
        BaselineKind::PozyxCtra,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::RawUwb => "raw-uwb",
            BaselineKind::RawVo => "raw-vo",
            BaselineKind::PozyxCtra => "pozyx-ctra",
            BaselineKind::AvgFusion => "avg-fusion",
            BaselineKind::DirectFusion => "direct-fusion",
            BaselineKind::SelfCorrective => "self-corrective",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = BaselineKind::ALL.iter().map(|k| k.as_str()).collect();
                format!("unknown method {s:?} (expected one of {})", names.join(", "))
            })
    }
}

/// A method's position track plus its correction bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutput {
    pub kind: BaselineKind,
    pub track: Vec<Sample>,
    /// Per-sample fusion mode; empty for methods without one.
    pub modes: Vec<Mode>,
    /// Per-stop decisions of the self-corrective method.
    pub stops: Vec<StopRecord>,
    pub restarts: usize,
    pub corrections: usize,
}

/// Pairs every UWB sample with the nearest VO sample, averages the two and
/// filters the result; one output per UWB sample.
pub fn avg_fusion(pair: &StreamPair, params: &FilterParams) -> Result<Vec<Sample>> {
    let averaged: Vec<Sample> = align_streams(pair)?
        .into_iter()
        .map(|a| Sample::new(a.t_ms, (a.uwb + a.vo) * 0.5, Sensor::Uwb))
        .collect();
    run_filter(&averaged, params, &RestartPolicy::OnHover)
}

/// Both streams interleaved by timestamp (UWB first on ties).
pub fn merge_streams(pair: &StreamPair) -> Vec<Sample> {
    let mut merged: Vec<Sample> = pair.uwb.iter().chain(&pair.vo).copied().collect();
    merged.sort_by_key(|s| (s.t_ms, s.source));
    merged
}

/// One filter over the merged stream, stepping by the actual gap between
/// consecutive readings.
pub fn direct_fusion(pair: &StreamPair, params: &FilterParams) -> Result<Vec<Sample>> {
    pair.validate()?;
    run_filter(&merge_streams(pair), params, &RestartPolicy::OnHover)
}

pub fn pozyx_only(uwb: &[Sample], params: &FilterParams) -> Result<Vec<Sample>> {
    run_filter(uwb, params, &RestartPolicy::OnHover)
}

/// Runs any method over the same stream pair.
pub fn run_method(
    kind: BaselineKind,
    pair: &StreamPair,
    plan: &FlightPlan,
    cfg: &PipelineConfig,
) -> Result<MethodOutput> {
    let plain = |track: Vec<Sample>| MethodOutput {
        kind,
        track,
        modes: Vec::new(),
        stops: Vec::new(),
        restarts: 0,
        corrections: 0,
    };
    Ok(match kind {
        BaselineKind::RawUwb => plain(pair.uwb.clone()),
        BaselineKind::RawVo => plain(pair.vo.clone()),
        BaselineKind::PozyxCtra => plain(pozyx_only(&pair.uwb, &cfg.filter)?),
        BaselineKind::AvgFusion => plain(avg_fusion(pair, &cfg.filter)?),
        BaselineKind::DirectFusion => plain(direct_fusion(pair, &cfg.filter)?),
        BaselineKind::SelfCorrective => {
            let fused = run_pipeline(pair, plan, cfg)?;
            MethodOutput {
                kind,
                restarts: fused.restarts.len(),
                corrections: fused.corrections(),
                track: fused.samples,
                modes: fused.modes,
                stops: fused.stops,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Position2D;

    fn pair() -> StreamPair {
        let uwb = (0..40)
            .map(|k| Sample::new(k * 37, Position2D::new(100.0, 3.0 * k as f64), Sensor::Uwb))
            .collect();
        let vo = (0..300)
            .map(|k| Sample::new(k * 5, Position2D::new(0.0, 0.4 * k as f64), Sensor::Vo))
            .collect();
        StreamPair::new(uwb, vo)
    }

    #[test]
    fn names_round_trip() {
        for k in BaselineKind::ALL {
            assert_eq!(k.as_str().parse::<BaselineKind>().unwrap(), k);
        }
        assert!("kalman".parse::<BaselineKind>().is_err());
    }

    #[test]
    fn avg_fusion_averages_then_filters() {
        let p = pair();
        let params = FilterParams::default();
        let out = avg_fusion(&p, &params).unwrap();
        assert_eq!(out.len(), p.uwb.len());
        // the first two outputs pass the averaged input through unfiltered
        assert_eq!(out[0].pos, Position2D::new(50.0, 0.0));
    }

    #[test]
    fn avg_fusion_of_identical_streams() {
        let mut p = pair();
        p.vo = p.uwb.iter().map(|s| Sample::new(s.t_ms, s.pos, Sensor::Vo)).collect();
        let params = FilterParams::default();
        assert_eq!(avg_fusion(&p, &params).unwrap(), pozyx_only(&p.uwb, &params).unwrap());
    }

    #[test]
    fn merged_stream_sorted_and_complete() {
        let p = pair();
        let m = merge_streams(&p);
        assert_eq!(m.len(), p.uwb.len() + p.vo.len());
        assert!(m.windows(2).all(|w| (w[0].t_ms, w[0].source) <= (w[1].t_ms, w[1].source)));
        assert_eq!(m[0].source, Sensor::Uwb);
        assert_eq!(direct_fusion(&p, &FilterParams::default()).unwrap().len(), m.len());
    }

    #[test]
    fn pozyx_only_is_run_filter() {
        let p = pair();
        let params = FilterParams::default();
        assert_eq!(
            pozyx_only(&p.uwb, &params).unwrap(),
            run_filter(&p.uwb, &params, &RestartPolicy::OnHover).unwrap()
        );
    }
}
