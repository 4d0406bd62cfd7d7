//! Self-corrective positioning for small indoor drones from a UWB stream and
//! a visual-odometry stream.

pub mod baselines;
pub mod cluster;
pub mod config;
pub mod ekf;
pub mod error;
pub mod harness;
pub mod log;
pub mod metrics;
pub mod pipeline;
pub mod sim;
pub mod types;

pub use baselines::{run_method, BaselineKind, MethodOutput};
pub use cluster::{detect_stop, region_gate, ClusterParams, StopDetector, StopEstimate};
pub use config::{ExperimentSpec, Params, ScenarioRef};
pub use ekf::{run_filter, CtraFilter, CtraState, FilterParams, RestartPolicy, StreamFilter};
pub use error::{Error, Result};
pub use harness::{Calibration, Failure, Layout, RunSummary};
pub use log::{read_log, write_log};
pub use metrics::{compare, stop_accuracy, trajectory_rmse, Comparison, RunReport};
pub use pipeline::{run_pipeline, FusedTrack, Mode, PipelineConfig};
pub use sim::{ScenarioConfig, TruthTrack};
pub use types::{align_streams, euclidean, Aligned, FlightPlan, Position2D, Sample, SampleRates, Sensor, StreamPair};
