//! Online density-based stream clustering of filtered UWB positions around a
//! planned stopping point.
//!
//! Every arriving position becomes an element of a list with a neighbor
//! counter. Each new element is compared with all earlier ones and both
//! counters grow for every pair closer than `alpha`. Elements whose counter
//! reaches `k1` become candidates; the first counter to reach `k2` ends the
//! instance, and the estimate is the candidate with the most neighbors.
//! The gap between `k1` and `k2` is a hysteresis band: a cluster must first
//! be suspected before it can be confirmed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{euclidean, Position2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    /// Maximum intracluster distance (mm).
    pub alpha_mm: f64,
    /// Neighbor count at which a cluster is suspected.
    pub k1: usize,
    /// Neighbor count at which the instance terminates.
    pub k2: usize,
    /// Activation radius around each planned stop (mm).
    pub gamma_mm: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            alpha_mm: 10.0,
            k1: 100,
            k2: 500,
            gamma_mm: 100.0,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_mm > 0.0) {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if !(0 < self.k1 && self.k1 < self.k2) {
            return Err(Error::Config("cluster counts must satisfy 0 < k1 < k2".into()));
        }
        if !(self.gamma_mm > self.alpha_mm) {
            return Err(Error::Config("gamma must exceed alpha".into()));
        }
        Ok(())
    }
}

/// Estimate `s'_i` of one stopping point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopEstimate {
    /// Which planned stop this estimates.
    pub index: usize,
    pub pos: Position2D,
    /// Neighbor count of the winning element.
    pub support: usize,
    pub samples_consumed: usize,
    /// False when the stream ended before any counter reached `k2`.
    pub complete: bool,
}

/// True iff `sample` lies in the closed ball of radius `gamma` around `expected`.
pub fn region_gate(sample: Position2D, expected: Position2D, gamma_mm: f64) -> bool {
    euclidean(sample, expected) <= gamma_mm
}

/// One running instance of the clustering algorithm for one stop.
#[derive(Debug, Clone)]
pub struct StopDetector {
    params: ClusterParams,
    index: usize,
    points: Vec<Position2D>,
    counts: Vec<usize>,
    // indices into `points`, in order of entry
    candidates: Vec<usize>,
    in_candidates: Vec<bool>,
    candidate: bool,
    result: Option<StopEstimate>,
}

impl StopDetector {
    pub fn new(index: usize, params: ClusterParams) -> Self {
        StopDetector {
            params,
            index,
            points: Vec::new(),
            counts: Vec::new(),
            candidates: Vec::new(),
            in_candidates: Vec::new(),
            candidate: false,
            result: None,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn consumed(&self) -> usize {
        self.points.len()
    }

    /// Neighbor counters in insertion order.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn is_done(&self) -> bool {
        self.result.is_some()
    }

    /// Feeds one position. Returns the estimate once the instance terminates;
    /// later calls keep returning it without consuming more samples.
    pub fn push(&mut self, y: Position2D) -> Option<StopEstimate> {
        if self.result.is_some() {
            return self.result;
        }
        let new = self.points.len();
        let mut c_new = 0usize;
        let mut reached_k2 = false;
        for (z, c) in self.points.iter().zip(self.counts.iter_mut()) {
            if euclidean(*z, y) <= self.params.alpha_mm {
                c_new += 1;
                *c += 1;
                reached_k2 |= *c >= self.params.k2;
            }
        }
        self.points.push(y);
        self.counts.push(c_new);
        self.in_candidates.push(false);
        reached_k2 |= c_new >= self.params.k2;

        // counters only change for y and its neighbors, but a sweep keeps
        // candidate entry order identical to the list order
        for (i, &c) in self.counts.iter().enumerate() {
            if c >= self.params.k1 && !self.in_candidates[i] {
                self.in_candidates[i] = true;
                self.candidates.push(i);
                self.candidate = true;
            }
        }
        debug_assert!(new + 1 == self.points.len());

        if reached_k2 && self.candidate {
            self.result = Some(self.estimate(true));
        }
        self.result
    }

    fn estimate(&self, complete: bool) -> StopEstimate {
        let pool: Box<dyn Iterator<Item = usize>> = if self.candidate {
            let mut c = self.candidates.clone();
            c.sort_unstable();
            Box::new(c.into_iter())
        } else {
            Box::new(0..self.points.len())
        };
        // max count; ties go to the earliest inserted element
        let mut best: Option<usize> = None;
        for i in pool {
            if best.is_none_or(|b| self.counts[i] > self.counts[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("estimate requested on an empty detector");
        StopEstimate {
            index: self.index,
            pos: self.points[b],
            support: self.counts[b],
            samples_consumed: self.points.len(),
            complete,
        }
    }

    /// Ends the instance. Returns the terminal estimate, or the best element
    /// so far flagged incomplete, or `None` if nothing was consumed.
    pub fn finish(&self) -> Option<StopEstimate> {
        if let Some(r) = self.result {
            return Some(r);
        }
        (!self.points.is_empty()).then(|| self.estimate(false))
    }
}

/// Runs one instance over `stream` until termination or exhaustion.
pub fn detect_stop<I>(stream: I, params: ClusterParams, index: usize) -> Result<StopEstimate>
where
    I: IntoIterator<Item = Position2D>,
{
    let mut det = StopDetector::new(index, params);
    for y in stream {
        if let Some(est) = det.push(y) {
            return Ok(est);
        }
    }
    det.finish().ok_or(Error::EmptyStream)
}
