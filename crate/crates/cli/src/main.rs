use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use uwbvo_core::config::ScenarioRef;
use uwbvo_core::{harness, BaselineKind, ExperimentSpec, Layout};

/// Reproducible experiments for self-corrective UWB + visual odometry positioning.
#[derive(Debug, Parser)]
#[command(name = "uwbvo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate sensor logs and ground truth, one set per seed.
    Simulate(ExperimentArgs),
    /// Run methods over the logs and write reports.
    Run(RunArgs),
    /// Summarize reports.csv into a comparison table.
    Compare {
        /// Experiment directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Find the UWB noise level matching a raw stop-accuracy target.
    Calibrate {
        #[arg(long, default_value = "worst-case")]
        scenario: String,
        #[arg(long, default_value = "0..10")]
        seeds: Seeds,
        /// Raw UWB stop accuracy to match (mm).
        #[arg(long, default_value_t = 131.9)]
        target_mm: f64,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Experiment file (TOML). Defaults to <out>/experiment.toml when present.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario preset: default, worst-case or best-case.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed list such as 0..10 or 1,4,7.
    #[arg(long)]
    seeds: Option<Seeds>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Method to run; repeat or separate with commas. Defaults to all.
    #[arg(long = "method", value_delimiter = ',')]
    methods: Vec<BaselineKind>,
    #[arg(long)]
    beta_mm: Option<f64>,
    #[arg(long)]
    gamma_mm: Option<f64>,
    #[arg(long)]
    alpha_mm: Option<f64>,
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long)]
    k2: Option<usize>,
    /// Leave dwell windows out of the trajectory RMSE.
    #[arg(long)]
    segments_only: bool,
}

/// Seeds given as a half-open range `a..b` or a comma list.
#[derive(Debug, Clone)]
struct Seeds(Vec<u64>);

impl FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = |_| format!("invalid seed list {s:?}");
        if let Some((a, b)) = s.split_once("..") {
            let (a, b): (u64, u64) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
            if a >= b {
                return Err(format!("empty seed range {s:?}"));
            }
            return Ok(Seeds((a..b).collect()));
        }
        s.split(',').map(|p| p.trim().parse().map_err(bad)).collect::<Result<_, _>>().map(Seeds)
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Experiment(anyhow::Error),
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn experiment(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Experiment(e.into())
}

fn load_spec(args: &ExperimentArgs) -> anyhow::Result<ExperimentSpec> {
    let default_out = PathBuf::from("out");
    let out = args.out.as_deref().unwrap_or(&default_out);
    let implicit = Layout::new(out).spec();
    let mut spec = match &args.config {
        Some(path) => ExperimentSpec::load(path)?,
        None if implicit.exists() => ExperimentSpec::load(&implicit)?,
        None => ExperimentSpec::new("worst-case", vec![0], out),
    };
    if let Some(name) = &args.scenario {
        spec.scenario = ScenarioRef::Preset(name.clone());
    }
    if let Some(seed) = args.seed {
        spec.seeds = vec![seed];
    }
    if let Some(seeds) = &args.seeds {
        spec.seeds = seeds.0.clone();
    }
    if let Some(out) = &args.out {
        spec.output_dir = out.clone();
    }
    Ok(spec)
}

fn apply_run_args(spec: &mut ExperimentSpec, args: &RunArgs) {
    if !args.methods.is_empty() {
        spec.methods = args.methods.clone();
    }
    let p = &mut spec.params;
    p.beta_mm = args.beta_mm.unwrap_or(p.beta_mm);
    p.gamma_mm = args.gamma_mm.unwrap_or(p.gamma_mm);
    p.alpha_mm = args.alpha_mm.unwrap_or(p.alpha_mm);
    p.k1 = args.k1.unwrap_or(p.k1);
    p.k2 = args.k2.unwrap_or(p.k2);
    p.segments_only |= args.segments_only;
}

fn checked(spec: ExperimentSpec) -> Result<ExperimentSpec, Failure> {
    spec.validate().map_err(usage)?;
    Ok(spec)
}

fn simulate(args: &ExperimentArgs) -> Result<(), Failure> {
    let spec = checked(load_spec(args).map_err(usage)?)?;
    let sets = harness::simulate(&spec, args.jobs).map_err(experiment)?;
    println!("wrote {} log sets to {}", sets.len(), spec.output_dir.display());
    Ok(())
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let mut spec = load_spec(&args.exp).map_err(usage)?;
    apply_run_args(&mut spec, args);
    let spec = checked(spec)?;
    let summary = harness::run(&spec, args.exp.jobs)
        .with_context(|| format!("running experiment in {}", spec.output_dir.display()))
        .map_err(experiment)?;
    println!(
        "{} reports written to {}",
        summary.reports.len(),
        Layout::new(&spec.output_dir).reports().display()
    );
    if summary.failures.is_empty() {
        return Ok(());
    }
    for f in &summary.failures {
        eprintln!("failed: {} seed {}: {}", f.method, f.seed, f.message);
    }
    let total = summary.failures.len() + summary.reports.len();
    Err(experiment(anyhow::anyhow!("{} of {total} runs failed", summary.failures.len())))
}

fn compare(out: &Path) -> Result<(), Failure> {
    let table = harness::compare_dir(out).map_err(experiment)?;
    print!("{table}");
    Ok(())
}

fn calibrate(scenario: &str, seeds: &[u64], target_mm: f64, jobs: usize) -> Result<(), Failure> {
    let sc = ScenarioRef::Preset(scenario.into()).resolve().map_err(usage)?;
    let cal = harness::with_pool(jobs, || harness::calibrate(&sc, seeds, target_mm))
        .and_then(|r| r)
        .map_err(experiment)?;
    println!(
        "sigma_uwb = {:.2} mm (raw UWB stop accuracy {:.2} mm over {} seeds, target {target_mm} mm)",
        cal.sigma_mm,
        cal.stop_accuracy_mm,
        seeds.len()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Run(args) => run(args),
        Command::Compare { out } => compare(out),
        Command::Calibrate {
            scenario,
            seeds,
            target_mm,
            jobs,
        } => {
            if !(*target_mm > 0.0) {
                return Err(usage(anyhow::anyhow!("--target-mm must be positive")));
            }
            calibrate(scenario, &seeds.0, *target_mm, *jobs)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Experiment(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
