//! Tracking and mapping over an RGB-D sequence.
//!
//! Every frame is tracked against the latest map. Once the first frame of
//! a new knot interval arrives, a mapping cycle runs for the finished
//! interval: the next control point is initialized by curve fitting, the
//! newest controls are refined with the map frozen, then jointly with the
//! map over the window keyframes, and finally the older keyframes are
//! revisited together with the map.

pub mod batch;
pub mod config;
pub mod curve;
mod mapper;
pub mod tracker;

use std::sync::mpsc;
use std::sync::Arc;

pub use config::{MapConfig, Mode, OptimConfig, PipelineConfig, RunConfig};
pub use curve::{curve_cost, extend_and_refit, fit_controls, fit_controls_smoothed, fit_trajectory, init_control_point, init_first_controls};
pub use mapper::StageLog;
pub use tracker::{constant_velocity, track_frame};

use crate::error::{Error, Result};
use crate::eval::TimedTrajectory;
use crate::render::{LossContext, RgbdFrame, VoxelMap};
use crate::se3::Pose;
use crate::spline::{ControlTrajectory, KnotGrid};
use batch::{derive_rng, valid_pixels};
use mapper::Mapper;

/// Environment variable capping internal parallelism.
pub const THREADS_ENV: &str = "TSSLAM_THREADS";

const STREAM_TRACK: u64 = 1;
const STREAM_JITTER: u64 = 3;

/// Input of a run.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub frames: Vec<RgbdFrame>,
    pub fps: f64,
    /// Default far bound for ray sampling, meters.
    pub far: f64,
    /// Tracked-pose noise, meters and radians.
    pub jitter_trans: f64,
    pub jitter_rot: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    /// Estimated pose at every frame timestamp.
    pub trajectory: TimedTrajectory,
    /// Raw per-frame tracking results.
    pub tracked: TimedTrajectory,
    pub spline: Option<ControlTrajectory>,
    pub map: VoxelMap,
    pub logs: Vec<StageLog>,
    /// Frames whose tracking failed numerically.
    pub flagged_frames: Vec<usize>,
    pub cycles: usize,
}

/// Thread cap from [`THREADS_ENV`], if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|n| *n > 0)
}

struct Shared<'a> {
    cfg: RunConfig,
    seq: &'a Sequence,
    valid: Vec<Vec<usize>>,
    ctx: LossContext,
    /// `ctx` with the tracking outlier filter.
    track_ctx: LossContext,
    grid: KnotGrid,
    jitter: (f64, f64),
}

impl Shared<'_> {
    fn interval_of(&self, t: f64) -> Result<usize> {
        Ok(self.grid.segment_index(t)?.0 - 1)
    }

    /// Tracks frame `f` from the constant-velocity prediction.
    fn track(&self, map: &VoxelMap, f: usize, prev: Option<Pose>, prev2: Option<Pose>, flagged: &mut Vec<usize>) -> Result<Pose> {
        if f == 0 {
            return Ok(Pose::identity());
        }
        let init = constant_velocity(prev.as_ref(), prev2.as_ref());
        let o = &self.cfg.optim;
        let mut rng = derive_rng(o.seed, STREAM_TRACK, f as u64, 0);
        let frame = &self.seq.frames[f];
        let pose = match track_frame(
            map,
            frame,
            f,
            &self.valid[f],
            init,
            &self.track_ctx,
            o.iters_tracking,
            self.cfg.pipeline.pixels_tracking,
            o.lr_pose,
            &mut rng,
        ) {
            Ok((p, _)) => p,
            Err(e) if e.is_numerical() => {
                log::warn!("frame {f}: tracking failed ({e}); keeping the previous pose");
                flagged.push(f);
                prev.unwrap_or_default()
            }
            Err(e) => return Err(e),
        };
        let (jt, jr) = self.jitter;
        if jt > 0.0 || jr > 0.0 {
            let mut rng = derive_rng(o.seed, STREAM_JITTER, f as u64, 0);
            return Ok(tracker::jitter_pose(&pose, jt, jr, &mut rng));
        }
        Ok(pose)
    }
}

fn history(corrected: &dyn Fn(usize) -> Option<Pose>, tracked: &[Pose], f: usize) -> (Option<Pose>, Option<Pose>) {
    let get = |k: usize| corrected(k).or_else(|| tracked.get(k).copied());
    (f.checked_sub(1).and_then(get), f.checked_sub(2).and_then(get))
}

/// Runs tracking and mapping over a sequence.
pub fn run_sequence(seq: &Sequence, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let fps = cfg.pipeline.fps.unwrap_or(seq.fps);
    cfg.check_fps(fps)?;
    let Some(first) = seq.frames.first() else {
        return Err(Error::InsufficientData("sequence has no frames".into()));
    };
    if let Some(w) = seq.frames.windows(2).find(|w| !(w[0].timestamp < w[1].timestamp)) {
        return Err(Error::InvalidArgument(format!(
            "frame timestamps must increase ({} then {})",
            w[0].timestamp, w[1].timestamp
        )));
    }
    for f in &seq.frames {
        f.validate()?;
    }
    let far = cfg.render.far.unwrap_or(seq.far);
    let dt = cfg.pipeline.dt;
    let t_first = first.timestamp;
    let t_last = seq.frames.last().expect("non-empty").timestamp;
    let count = ((t_last - t_first) / dt).ceil() as usize + 8;
    let mut ctx = LossContext::new(cfg.render, far, cfg.loss);
    ctx.jitter_seed = cfg.optim.seed;
    let shared = Shared {
        cfg: *cfg,
        seq,
        valid: seq.frames.iter().map(valid_pixels).collect(),
        ctx,
        track_ctx: LossContext {
            outlier_factor: cfg.pipeline.tracking_outlier_factor,
            ..ctx
        },
        grid: KnotGrid::new(t_first - dt, dt, count)?,
        jitter: (
            cfg.pipeline.jitter_trans.unwrap_or(seq.jitter_trans),
            cfg.pipeline.jitter_rot.unwrap_or(seq.jitter_rot),
        ),
    };

    let cap = thread_cap();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cap {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let serial = cfg.pipeline.deterministic || cap == Some(1);
    if serial {
        pool.install(|| run_serial(&shared))
    } else {
        run_threaded(&shared, &pool)
    }
}

fn finish(shared: &Shared, mapper: Mapper, tracked: Vec<Pose>, flagged: Vec<usize>, cycles: usize) -> Result<RunOutput> {
    let times: Vec<f64> = shared.seq.frames.iter().map(|f| f.timestamp).collect();
    let tracked_traj = TimedTrajectory::new(times.iter().copied().zip(tracked.iter().copied()).collect())?;
    let trajectory = match shared.cfg.pipeline.mode {
        Mode::Spline => {
            let traj = mapper.traj.as_ref().ok_or_else(|| Error::InsufficientData("no mapping cycle ran".into()))?;
            TimedTrajectory::from_spline(traj, &times)?
        }
        Mode::Baseline => TimedTrajectory::new(
            times
                .iter()
                .enumerate()
                .map(|(f, t)| (*t, mapper.keyframe_poses.get(&f).copied().unwrap_or(tracked[f])))
                .collect(),
        )?,
    };
    Ok(RunOutput {
        trajectory,
        tracked: tracked_traj,
        spline: mapper.traj,
        map: mapper.map,
        logs: mapper.logs,
        flagged_frames: flagged,
        cycles,
    })
}

fn new_mapper<'a>(shared: &'a Shared) -> Result<Mapper<'a>> {
    let mut mapper = Mapper::new(shared.cfg, &shared.seq.frames, &shared.valid, shared.ctx, shared.grid)?;
    mapper.bootstrap()?;
    Ok(mapper)
}

fn run_serial(shared: &Shared) -> Result<RunOutput> {
    let mut mapper = new_mapper(shared)?;
    let mut tracked: Vec<Pose> = Vec::with_capacity(shared.seq.frames.len());
    let mut flagged = Vec::new();
    let mut current = 0;
    let mut cycles = 0;
    for (f, frame) in shared.seq.frames.iter().enumerate() {
        let j = shared.interval_of(frame.timestamp)?;
        while j > current {
            mapper.run_cycle(current, &tracked)?;
            cycles += 1;
            current += 1;
        }
        let (p1, p2) = history(&|k| mapper.corrected(k), &tracked, f);
        let pose = shared.track(&mapper.map, f, p1, p2, &mut flagged)?;
        tracked.push(pose);
    }
    mapper.run_cycle(current, &tracked)?;
    cycles += 1;
    finish(shared, mapper, tracked, flagged, cycles)
}

/// State published by the mapping task after each cycle.
struct Snapshot {
    map: Arc<VoxelMap>,
    corrected: Vec<Option<Pose>>,
}

fn snapshot(mapper: &Mapper, frames: usize) -> Snapshot {
    Snapshot {
        map: Arc::new(mapper.map.clone()),
        corrected: (0..frames).map(|k| mapper.corrected(k)).collect(),
    }
}

/// Tracking on the calling thread, mapping on a second one; they exchange
/// immutable snapshots, so results depend on timing.
fn run_threaded(shared: &Shared, pool: &rayon::ThreadPool) -> Result<RunOutput> {
    let n = shared.seq.frames.len();
    let (req_tx, req_rx) = mpsc::channel::<(usize, Vec<Pose>)>();
    let (snap_tx, snap_rx) = mpsc::channel::<Snapshot>();
    std::thread::scope(|scope| {
        let mapping = scope.spawn(move || -> Result<(Mapper, usize)> {
            pool.install(|| {
                let mut mapper = new_mapper(shared)?;
                let _ = snap_tx.send(snapshot(&mapper, n));
                let mut cycles = 0;
                for (j, tracked) in req_rx {
                    mapper.run_cycle(j, &tracked)?;
                    cycles += 1;
                    let _ = snap_tx.send(snapshot(&mapper, n));
                }
                Ok((mapper, cycles))
            })
        });

        let run_tracking = || -> Result<(Vec<Pose>, Vec<usize>)> {
            // the first snapshot carries the bootstrapped map
            let mut latest = snap_rx
                .recv()
                .map_err(|_| Error::InsufficientData("mapping task stopped before bootstrap".into()))?;
            let mut tracked: Vec<Pose> = Vec::with_capacity(n);
            let mut flagged = Vec::new();
            let mut current = 0;
            for (f, frame) in shared.seq.frames.iter().enumerate() {
                let j = shared.interval_of(frame.timestamp)?;
                while j > current {
                    let _ = req_tx.send((current, tracked.clone()));
                    current += 1;
                }
                while let Ok(s) = snap_rx.try_recv() {
                    latest = s;
                }
                let corrected = latest.corrected.clone();
                let (p1, p2) = history(&|k| corrected.get(k).copied().flatten(), &tracked, f);
                let pose = pool.install(|| shared.track(&latest.map, f, p1, p2, &mut flagged))?;
                tracked.push(pose);
            }
            let _ = req_tx.send((current, tracked.clone()));
            Ok((tracked, flagged))
        };
        let tracking = run_tracking();
        drop(req_tx);
        let (mapper, cycles) = mapping
            .join()
            .map_err(|_| Error::InsufficientData("mapping task panicked".into()))??;
        let (tracked, flagged) = tracking?;
        finish(shared, mapper, tracked, flagged, cycles)
    })
}
