//! Batch experiments: simulate logs, run methods over them, summarize.
//!
//! Output directory layout:
//!
//! ```text
//! experiment.toml
//! logs/seed-0003/{streams.csv, truth.csv, meta.toml}
//! runs/<method>/seed-0003.csv          fused track
//! runs/<method>/seed-0003.errors.csv   error against truth over time
//! runs/<method>/seed-0003.stops.csv    per-stop error and decisions
//! reports.csv  failures.csv  comparison.csv
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::baselines::{run_method, BaselineKind};
use crate::config::ExperimentSpec;
use crate::error::{Error, Result};
use crate::log::{self, RunMeta};
use crate::metrics::{self, compare, stop_accuracy, Comparison, RunReport};
use crate::pipeline::StopRecord;
use crate::sim::{self, ScenarioConfig, TruthTrack};

/// Truth is tabulated on the VO sample grid.
pub const TRUTH_PERIOD_MS: i64 = 5;

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn spec(&self) -> PathBuf {
        self.root.join("experiment.toml")
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join("logs").join(format!("seed-{seed:04}"))
    }

    pub fn streams(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("streams.csv")
    }

    pub fn truth(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("truth.csv")
    }

    pub fn meta(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("meta.toml")
    }

    pub fn fused(&self, method: BaselineKind, seed: u64) -> PathBuf {
        self.root.join("runs").join(method.as_str()).join(format!("seed-{seed:04}.csv"))
    }

    pub fn errors(&self, method: BaselineKind, seed: u64) -> PathBuf {
        self.root
            .join("runs")
            .join(method.as_str())
            .join(format!("seed-{seed:04}.errors.csv"))
    }

    pub fn stops(&self, method: BaselineKind, seed: u64) -> PathBuf {
        self.root
            .join("runs")
            .join(method.as_str())
            .join(format!("seed-{seed:04}.stops.csv"))
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports.csv")
    }

    pub fn failures(&self) -> PathBuf {
        self.root.join("failures.csv")
    }

    pub fn comparison(&self) -> PathBuf {
        self.root.join("comparison.csv")
    }
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Runs `f` on a pool of `jobs` threads (0 = one per core).
pub fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Writes one log set per seed plus a copy of the spec.
pub fn simulate(spec: &ExperimentSpec, jobs: usize) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    let scenario = spec.scenario.resolve()?;
    let layout = Layout::new(&spec.output_dir);
    mkdir(&layout.root)?;
    let text = spec.to_toml()?;
    fs::write(layout.spec(), text).map_err(|e| Error::io(layout.spec(), e))?;

    with_pool(jobs, || {
        spec.seeds
            .par_iter()
            .map(|&seed| {
                let cfg = scenario.clone().with_seed(seed);
                let run = sim::simulate(&cfg);
                mkdir(&layout.seed_dir(seed))?;
                log::write_log(&run.streams, &layout.streams(seed))?;
                log::write_truth(&run.truth.sample(TRUTH_PERIOD_MS), &layout.truth(seed))?;
                let meta = RunMeta {
                    scenario: cfg.name.clone(),
                    seed,
                    faults: run.faults,
                    rays: run.rays,
                };
                log::write_meta(&meta, &layout.meta(seed))?;
                Ok(layout.seed_dir(seed))
            })
            .collect()
    })?
}

/// One (method, seed) cell that did not produce a report.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub method: BaselineKind,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub reports: Vec<RunReport>,
    pub failures: Vec<Failure>,
}

fn run_cell(
    spec: &ExperimentSpec,
    layout: &Layout,
    method: BaselineKind,
    seed: u64,
    scenario: &ScenarioConfig,
    logs: &(crate::types::StreamPair, TruthTrack),
) -> Result<RunReport> {
    let cfg = spec.params.pipeline()?;
    let (pair, truth) = logs;
    let out = run_method(method, pair, &scenario.plan, &cfg)?;
    let report = RunReport::evaluate(
        method,
        seed,
        &out.track,
        truth,
        out.restarts,
        out.corrections,
        spec.params.segments_only,
    )?;
    let modes = (!out.modes.is_empty()).then_some(out.modes.as_slice());
    log::write_fused(&out.track, modes, &layout.fused(method, seed))?;
    write_errors(&metrics::error_series(&out.track, truth)?, &layout.errors(method, seed))?;
    write_stops(&report.per_stop_error, &out.stops, &layout.stops(method, seed))?;
    Ok(report)
}

/// Per-stop error, plus the estimate, correction and restart flag when the
/// method makes stop decisions.
fn write_stops(errors: &[f64], records: &[StopRecord], path: &Path) -> Result<()> {
    let mut text = String::from(
        "stop_index,error_mm,planned_x_mm,planned_y_mm,estimate_x_mm,estimate_y_mm,correction_x_mm,correction_y_mm,restart\n",
    );
    for (i, e) in errors.iter().enumerate() {
        let extra = match records.iter().find(|r| r.index == i) {
            Some(r) => {
                let (ex, ey) = r
                    .estimate
                    .map_or((String::new(), String::new()), |s| (format!("{:.1}", s.pos.x), format!("{:.1}", s.pos.y)));
                format!(
                    "{:.1},{:.1},{ex},{ey},{:.1},{:.1},{}",
                    r.planned.x, r.planned.y, r.correction.x, r.correction.y, r.restart
                )
            }
            None => ",,,,,,".into(),
        };
        text.push_str(&format!("{i},{e:.3},{extra}\n"));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_errors(series: &[(i64, f64)], path: &Path) -> Result<()> {
    let mut text = String::from("t_ms,error_mm\n");
    for (t, e) in series {
        text.push_str(&format!("{t},{e:.1}\n"));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_failures(failures: &[Failure], path: &Path) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let io = |e: csv::Error| Error::Config(e.to_string());
    out.write_record(["method", "seed", "error"]).map_err(io)?;
    for f in failures {
        out.write_record([f.method.as_str(), &f.seed.to_string(), &f.message]).map_err(io)?;
    }
    let bytes = out.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

/// Runs every (method, seed) cell over the logs written by [`simulate`].
/// A cell that fails is recorded and the batch continues.
pub fn run(spec: &ExperimentSpec, jobs: usize) -> Result<RunSummary> {
    spec.validate()?;
    let scenario = spec.scenario.resolve()?;
    let layout = Layout::new(&spec.output_dir);
    for m in &spec.methods {
        mkdir(&layout.root.join("runs").join(m.as_str()))?;
    }
    let cells: Vec<(BaselineKind, u64)> = spec
        .methods
        .iter()
        .flat_map(|&m| spec.seeds.iter().map(move |&s| (m, s)))
        .collect();

    let outcomes = with_pool(jobs, || -> Result<Vec<Result<RunReport>>> {
        let logs: Vec<_> = spec
            .seeds
            .par_iter()
            .map(|&seed| {
                Ok((
                    seed,
                    (log::read_log(&layout.streams(seed))?, log::read_truth(&layout.truth(seed))?),
                ))
            })
            .collect::<Result<_>>()?;
        let logs_for = |seed: u64| &logs.iter().find(|(s, _)| *s == seed).expect("loaded above").1;
        Ok(cells
            .par_iter()
            .map(|&(m, seed)| run_cell(spec, &layout, m, seed, &scenario, logs_for(seed)))
            .collect())
    })??;

    let mut summary = RunSummary {
        reports: Vec::new(),
        failures: Vec::new(),
    };
    for ((method, seed), outcome) in cells.into_iter().zip(outcomes) {
        match outcome {
            Ok(r) => summary.reports.push(r),
            Err(e @ Error::Io { .. }) => return Err(e),
            Err(e) => summary.failures.push(Failure {
                method,
                seed,
                message: e.to_string(),
            }),
        }
    }
    log::write_reports(&summary.reports, &layout.reports())?;
    write_failures(&summary.failures, &layout.failures())?;
    Ok(summary)
}

/// Summarizes `reports.csv` in `dir` and writes `comparison.csv` beside it.
pub fn compare_dir(dir: &Path) -> Result<Comparison> {
    let layout = Layout::new(dir);
    let reports = log::read_reports(&layout.reports())?;
    let table = compare(&reports)?;
    fs::write(layout.comparison(), table.to_csv()).map_err(|e| Error::io(layout.comparison(), e))?;
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub sigma_mm: f64,
    /// Mean raw-UWB stop accuracy over the seeds at `sigma_mm`.
    pub stop_accuracy_mm: f64,
}

/// Mean raw-UWB stop accuracy over `seeds` with the given noise level.
pub fn raw_uwb_stop_accuracy(scenario: &ScenarioConfig, sigma_mm: f64, seeds: &[u64]) -> Result<f64> {
    let mut cfg = scenario.clone();
    cfg.uwb.sigma_mm = sigma_mm;
    let truth = sim::build_truth(&cfg.plan);
    let table = truth.sample(TRUTH_PERIOD_MS);
    let accs: Vec<f64> = seeds
        .par_iter()
        .map(|&seed| {
            let (uwb, _) = sim::synth_uwb(&truth, &cfg, seed);
            stop_accuracy(&uwb, &table).map(|a| a.avg_mm)
        })
        .collect::<Result<_>>()?;
    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
}

/// Finds the UWB noise level whose raw stop accuracy matches `target_mm`.
/// Noise enters linearly for fixed seeds, so bisection converges.
pub fn calibrate(scenario: &ScenarioConfig, seeds: &[u64], target_mm: f64) -> Result<Calibration> {
    if seeds.is_empty() || !(target_mm > 0.0) {
        return Err(Error::Config("calibration needs seeds and a positive target".into()));
    }
    let (mut lo, mut hi) = (0.0, 4.0 * target_mm);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if raw_uwb_stop_accuracy(scenario, mid, seeds)? < target_mm {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sigma_mm = 0.5 * (lo + hi);
    Ok(Calibration {
        sigma_mm,
        stop_accuracy_mm: raw_uwb_stop_accuracy(scenario, sigma_mm, seeds)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_spec(dir: &Path) -> ExperimentSpec {
        let mut sc = sim::best_case_scenario();
        sc.plan.stops.truncate(4);
        sc.plan.closed = false;
        sc.plan.dwell_ms = 25_000;
        let mut spec = ExperimentSpec::new("best-case", vec![1, 2], dir);
        spec.scenario = crate::config::ScenarioRef::Inline(Box::new(sc));
        spec.methods = vec![BaselineKind::RawUwb, BaselineKind::PozyxCtra];
        spec
    }

    #[test]
    fn simulate_run_compare() {
        let dir = tempfile::tempdir().unwrap();
        let spec = quick_spec(dir.path());
        let sets = simulate(&spec, 2).unwrap();
        assert_eq!(sets.len(), 2);
        let layout = Layout::new(dir.path());
        assert!(layout.meta(2).exists() && layout.truth(1).exists());

        let summary = run(&spec, 2).unwrap();
        assert_eq!(summary.reports.len(), 4);
        assert!(summary.failures.is_empty());
        assert!(layout.fused(BaselineKind::PozyxCtra, 2).exists());
        let mut written = summary.reports.clone();
        for r in &mut written {
            r.per_stop_error.clear();
        }
        assert_eq!(log::read_reports(&layout.reports()).unwrap(), written);
        let stops = fs::read_to_string(layout.stops(BaselineKind::RawUwb, 1)).unwrap();
        assert_eq!(stops.lines().count(), 5);

        let table = compare_dir(dir.path()).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.row(BaselineKind::RawUwb).unwrap().seeds, 2);
    }

    #[test]
    fn missing_logs_are_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(run(&quick_spec(dir.path()), 1), Err(Error::Io { .. })));
        assert!(compare_dir(dir.path()).is_err());
    }

    #[test]
    fn worst_case_logs_carry_forced_fault() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = ExperimentSpec::new("worst-case", vec![0, 1, 2], dir.path());
        spec.methods = vec![BaselineKind::RawVo];
        simulate(&spec, 0).unwrap();
        for seed in [0, 1, 2] {
            let meta = log::read_meta(&Layout::new(dir.path()).meta(seed)).unwrap();
            assert!(meta.faults.iter().any(|f| f.segment == 5 && f.severe), "seed {seed}");
        }
    }

    #[test]
    fn calibration_hits_target() {
        let mut sc = sim::default_scenario();
        sc.plan.stops.truncate(6);
        sc.plan.closed = false;
        sc.plan.dwell_ms = 5_000;
        let cal = calibrate(&sc, &[0, 1, 2], 80.0).unwrap();
        assert!((cal.stop_accuracy_mm - 80.0).abs() < 0.5, "{cal:?}");
    }
}
