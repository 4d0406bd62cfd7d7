//! Experiment description files.
//!
//! ```toml
//! schema_version = 1
//! scenario = "worst-case"          # preset name, or an inline [scenario] table
//! methods = ["self-corrective", "pozyx-ctra"]
//! seeds = [0, 1, 2]
//! output_dir = "out"
//!
//! [params]
//! beta_mm = 30.0
//! gamma_mm = 100.0
//! ```
//!
//! Every `[params]` key is optional and falls back to the pipeline defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineKind;
use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;
use crate::sim::{self, ScenarioConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioRef {
    Preset(String),
    Inline(Box<ScenarioConfig>),
}

impl ScenarioRef {
    pub fn resolve(&self) -> Result<ScenarioConfig> {
        match self {
            ScenarioRef::Preset(name) => sim::preset(name).ok_or_else(|| {
                Error::Config(format!(
                    "unknown scenario {name:?} (presets: {})",
                    sim::PRESETS.join(", ")
                ))
            }),
            ScenarioRef::Inline(cfg) => Ok((**cfg).clone()),
        }
    }
}

/// Tunable thresholds and filter noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub beta_mm: f64,
    pub gamma_mm: f64,
    pub alpha_mm: f64,
    pub k1: usize,
    pub k2: usize,
    pub q: [f64; 6],
    pub r: [f64; 6],
    pub p0: [f64; 6],
    /// Leave dwell windows out of the trajectory RMSE.
    pub segments_only: bool,
}

impl Default for Params {
    fn default() -> Self {
        Params::from_pipeline(&PipelineConfig::default())
    }
}

impl Params {
    pub fn from_pipeline(cfg: &PipelineConfig) -> Self {
        Params {
            beta_mm: cfg.beta_mm,
            gamma_mm: cfg.cluster.gamma_mm,
            alpha_mm: cfg.cluster.alpha_mm,
            k1: cfg.cluster.k1,
            k2: cfg.cluster.k2,
            q: cfg.filter.q,
            r: cfg.filter.r,
            p0: cfg.filter.p0,
            segments_only: false,
        }
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig {
            beta_mm: self.beta_mm,
            ..PipelineConfig::default()
        };
        cfg.cluster.gamma_mm = self.gamma_mm;
        cfg.cluster.alpha_mm = self.alpha_mm;
        cfg.cluster.k1 = self.k1;
        cfg.cluster.k2 = self.k2;
        cfg.filter.q = self.q;
        cfg.filter.r = self.r;
        cfg.filter.p0 = self.p0;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub scenario: ScenarioRef,
    #[serde(default = "all_methods")]
    pub methods: Vec<BaselineKind>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub params: Params,
    pub output_dir: PathBuf,
}

fn all_methods() -> Vec<BaselineKind> {
    BaselineKind::ALL.to_vec()
}

impl ExperimentSpec {
    pub fn new(scenario: &str, seeds: Vec<u64>, output_dir: impl Into<PathBuf>) -> Self {
        ExperimentSpec {
            schema_version: SCHEMA_VERSION,
            scenario: ScenarioRef::Preset(scenario.into()),
            methods: all_methods(),
            seeds,
            params: Params::default(),
            output_dir: output_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("methods and seeds must be nonempty".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        let cfg = self.params.pipeline()?;
        self.scenario.resolve()?.validate(cfg.cluster.gamma_mm)
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1) as u64);
            Error::parse(path, line, e.message())
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentSpec::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
