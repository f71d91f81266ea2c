use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use ctslam::eval::{align_trajectories, association_tolerance, plot_svg, TimedTrajectory, TrajectoryReport};
use ctslam::io::dataset::{generate_dataset, load_dataset, DatasetSpec};
use ctslam::io::tum::{load_control_trajectory, load_trajectory, save_control_trajectory, save_trajectory};
use ctslam::io::{load_config, read_text, write_text};
use ctslam::pipeline::{fit_trajectory, run_sequence, curve_cost, RunConfig, StageLog};

use crate::{EvalArgs, FitArgs, GenArgs, PlotArgs, RunArgs};

fn json_line<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn gen(a: &GenArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = read_text(p)?;
            serde_json::from_str::<DatasetSpec>(&text)
                .map_err(|e| ctslam::Error::Config(e.to_string()))
                .with_context(|| format!("{}", p.display()))?
        }
        None => DatasetSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.frames {
        spec.frames = n;
    }
    if let Some(s) = a.depth_sigma {
        spec.noise.depth_sigma = s;
    }
    if let Some(s) = a.jitter_trans {
        spec.noise.jitter_trans = s;
    }
    if let Some(s) = a.jitter_rot {
        spec.noise.jitter_rot = s;
    }
    let m = generate_dataset(&spec, &a.out)?;
    println!("wrote {} frames to {}", m.frame_count, a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct LossRow<'a> {
    cycle: usize,
    stage: &'a str,
    rgb: f64,
    depth: f64,
    sdf: f64,
    fs: f64,
    dynamics: f64,
    total: f64,
}

fn write_losses(path: &Path, logs: &[StageLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("{}", path.display()))?;
    for l in logs {
        w.serialize(LossRow {
            cycle: l.cycle,
            stage: &l.stage,
            rgb: l.loss.rgb,
            depth: l.loss.depth,
            sdf: l.loss.sdf,
            fs: l.loss.free_space,
            dynamics: l.loss.dynamics,
            total: l.loss.total,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RunSummary<'a> {
    dataset: String,
    frames: usize,
    cycles: usize,
    flagged_frames: &'a [usize],
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<TrajectoryReport>,
}

pub fn run(a: &RunArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = a.mode {
        cfg.pipeline.mode = m.into();
    }
    if let Some(s) = a.seed {
        cfg.optim.seed = s;
    }
    if a.deterministic {
        cfg.pipeline.deterministic = true;
    }
    cfg.validate()?;
    let data = load_dataset(&a.data)?;
    let out = run_sequence(&data.sequence, &cfg)?;

    std::fs::create_dir_all(&a.out).with_context(|| format!("{}", a.out.display()))?;
    save_trajectory(&a.out.join("trajectory.txt"), &out.trajectory)?;
    save_trajectory(&a.out.join("tracked.txt"), &out.tracked)?;
    if let Some(s) = &out.spline {
        save_control_trajectory(&a.out.join("controls.txt"), s)?;
    }
    write_losses(&a.out.join("losses.csv"), &out.logs)?;
    let fps = cfg.pipeline.fps.unwrap_or(data.sequence.fps);
    let report = match data.ground_truth() {
        Ok(gt) => Some(TrajectoryReport::compute(&out.trajectory, &gt, fps, 1, out.spline.as_ref())?),
        Err(e) => {
            log::warn!("no ground truth to evaluate against: {e}");
            None
        }
    };
    if let Some(r) = &report {
        write_text(&a.out.join("report.json"), &json_line(r)?)?;
        print!("{}", r.table());
    }
    let summary = RunSummary {
        dataset: a.data.display().to_string(),
        frames: data.sequence.frames.len(),
        cycles: out.cycles,
        flagged_frames: &out.flagged_frames,
        config: &cfg,
        report,
    };
    write_text(&a.out.join("summary.json"), &json_line(&summary)?)?;
    if !out.flagged_frames.is_empty() {
        log::warn!("tracking failed numerically on frames {:?}", out.flagged_frames);
    }
    Ok(())
}

pub fn fit(a: &FitArgs) -> Result<()> {
    if !(a.dt > 0.0 && a.dt.is_finite()) {
        bail!(ctslam::Error::InvalidArgument(format!("--dt must be positive, got {}", a.dt)));
    }
    let input = load_trajectory(&a.input)?;
    let spline = fit_trajectory(input.entries(), a.dt)?;
    save_control_trajectory(&a.out, &spline)?;
    let cost = curve_cost(&spline, input.entries())?;
    println!("{} controls, residual {:.6e} over {} poses", spline.len(), cost, input.len());
    if let Some(p) = &a.resampled {
        save_trajectory(p, &TimedTrajectory::from_spline(&spline, &input.timestamps())?)?;
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    if a.rpe_interval == 0 {
        bail!(ctslam::Error::InvalidArgument("--rpe-interval must be positive".into()));
    }
    let est = load_trajectory(&a.est)?;
    let gt = load_trajectory(&a.gt)?;
    let controls = a.controls.as_deref().map(load_control_trajectory).transpose()?;
    let report = TrajectoryReport::compute(&est, &gt, a.fps, a.rpe_interval, controls.as_ref())?;
    print!("{}", report.table());
    if let Some(p) = &a.json {
        write_text(p, &json_line(&report)?)?;
    }
    Ok(())
}

pub fn plot(a: &PlotArgs) -> Result<()> {
    let est = load_trajectory(&a.est)?;
    let gt = load_trajectory(&a.gt)?;
    let al = align_trajectories(&est, &gt, association_tolerance(a.fps))?;
    let aligned = est.transformed(&al.transform);
    let points = |t: &TimedTrajectory| t.entries().iter().map(|(_, p)| p.translation).collect::<Vec<_>>();
    let svg = plot_svg(&[("ground truth", "black", points(&gt)), ("estimate", "crimson", points(&aligned))]);
    write_text(&a.out, &svg)?;
    Ok(())
}
