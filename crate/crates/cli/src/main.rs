//! `ctslam` command-line tool.

mod cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ctslam::pipeline::Mode;

#[derive(Parser)]
#[command(name = "ctslam", version, about = "Continuous-time RGB-D SLAM on cubic B-splines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic RGB-D dataset.
    Gen(GenArgs),
    /// Run tracking and mapping on a dataset.
    Run(RunArgs),
    /// Fit a spline to a TUM trajectory.
    Fit(FitArgs),
    /// ATE, RPE and smoothness of an estimate against ground truth.
    Eval(EvalArgs),
    /// SVG plot of an aligned estimate and the ground truth.
    Plot(PlotArgs),
}

#[derive(Args)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Generator spec as JSON; unset keys take their defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Depth noise standard deviation, meters.
    #[arg(long)]
    pub depth_sigma: Option<f64>,
    /// Tracked-pose jitter recorded in the manifest, meters.
    #[arg(long)]
    pub jitter_trans: Option<f64>,
    /// Tracked-pose jitter recorded in the manifest, radians.
    #[arg(long)]
    pub jitter_rot: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Spline,
    Baseline,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Spline => Mode::Spline,
            ModeArg::Baseline => Mode::Baseline,
        }
    }
}

#[derive(Args)]
pub struct RunArgs {
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Run configuration as JSON; unset keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Serialize tracking and mapping.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Args)]
pub struct FitArgs {
    /// TUM trajectory to fit.
    #[arg(long)]
    pub input: PathBuf,
    /// Control points, TUM format, with a JSON knot sidecar.
    #[arg(long)]
    pub out: PathBuf,
    /// Knot spacing, seconds.
    #[arg(long, default_value_t = 0.3)]
    pub dt: f64,
    /// Also write the spline evaluated at the input timestamps.
    #[arg(long)]
    pub resampled: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Estimated trajectory, TUM format.
    #[arg(long)]
    pub est: PathBuf,
    /// Ground-truth trajectory, TUM format.
    #[arg(long)]
    pub gt: PathBuf,
    /// Frame rate used for timestamp association.
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    #[arg(long, default_value_t = 1)]
    pub rpe_interval: usize,
    /// Control points of the estimate, for smoothness statistics.
    #[arg(long)]
    pub controls: Option<PathBuf>,
    /// Write the report as JSON here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub est: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
}

/// Validation failures exit with 1, numerical failures with 2.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|c| c.downcast_ref::<ctslam::Error>())
        .any(|e| e.is_numerical());
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd::gen(&a),
        Command::Run(a) => cmd::run(&a),
        Command::Fit(a) => cmd::fit(&a),
        Command::Eval(a) => cmd::eval(&a),
        Command::Plot(a) => cmd::plot(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
