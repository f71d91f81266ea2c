use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};

use super::batch::{derive_rng, evaluate_frames, sample_pixels};
use super::config::{Mode, RunConfig};
use super::curve::{curve_cost, extend_and_refit, init_first_controls};
use crate::dynamics::dynamics_regularizer_with_grad;
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState, ParamKind};
use crate::render::{LossBreakdown, LossContext, MapModel, RgbdFrame, VoxelMap};
use crate::se3::Pose;
use crate::spline::{ControlTrajectory, KnotGrid, MAX_ADJACENT_ANGLE};

const STREAM_STAGE: u64 = 2;

/// Controls refitted by the curve stage of a cycle: the new one and the
/// two before it, which share its interval.
const CURVE_TAIL: usize = 3;

/// Loss at the last iteration of one optimization stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub cycle: usize,
    pub stage: String,
    pub loss: LossBreakdown,
}

/// Frame span covered by a mapping cycle.
#[derive(Clone, Copy, Debug)]
struct Window {
    start: f64,
    end: f64,
}

/// Owns the map and the trajectory parameters; runs the mapping cycles.
pub(crate) struct Mapper<'a> {
    cfg: RunConfig,
    frames: &'a [RgbdFrame],
    valid: &'a [Vec<usize>],
    ctx: LossContext,
    /// Assigns timestamps to knot intervals.
    grid: KnotGrid,
    pub map: VoxelMap,
    map_adam: AdamState,
    grad: Vec<f64>,
    pub traj: Option<ControlTrajectory>,
    /// Refined keyframe poses of the baseline mode.
    pub keyframe_poses: BTreeMap<usize, Pose>,
    pub logs: Vec<StageLog>,
    cycle: usize,
}

impl<'a> Mapper<'a> {
    pub fn new(cfg: RunConfig, frames: &'a [RgbdFrame], valid: &'a [Vec<usize>], ctx: LossContext, grid: KnotGrid) -> Result<Self> {
        let map = VoxelMap::cube(Vector3::zeros(), cfg.map.half_extent, cfg.map.cell_size, cfg.render.truncation)?;
        let n = map.parameter_count();
        Ok(Self {
            map_adam: AdamState::new(ParamKind::VoxelGrid, n, cfg.optim.lr_map, AdamConfig::default()),
            grad: vec![0.0; n],
            cfg,
            frames,
            valid,
            ctx,
            grid,
            map,
            traj: None,
            keyframe_poses: BTreeMap::new(),
            logs: Vec::new(),
            cycle: 0,
        })
    }

    fn interval_start(&self, j: usize) -> f64 {
        self.grid.knot_time(j + 1)
    }

    fn is_keyframe(&self, f: usize) -> bool {
        f % self.cfg.pipeline.keyframe_every == 0
    }

    fn frames_in(&self, lo: f64, hi: f64, upto: usize) -> Vec<usize> {
        let (lo, hi) = (self.grid.position(lo), self.grid.position(hi));
        (0..upto)
            .filter(|f| {
                let s = self.grid.position(self.frames[*f].timestamp);
                s >= lo && s < hi
            })
            .collect()
    }

    fn log(&mut self, stage: &str, loss: LossBreakdown) {
        self.logs.push(StageLog {
            cycle: self.cycle,
            stage: stage.to_string(),
            loss,
        });
    }

    /// Pose of frame `f` after the latest mapping cycle, if it has one.
    pub fn corrected(&self, f: usize) -> Option<Pose> {
        match self.cfg.pipeline.mode {
            Mode::Spline => {
                let traj = self.traj.as_ref()?;
                traj.eval_pose(self.frames[f].timestamp).ok()
            }
            Mode::Baseline => self.keyframe_poses.get(&f).copied(),
        }
    }

    /// Map-only fit to the first frame at the identity pose.
    pub fn bootstrap(&mut self) -> Result<()> {
        let iters = self.cfg.optim.iters_map_init;
        let pixels = self.cfg.pipeline.pixels_map_init;
        let mut last = LossBreakdown::default();
        for it in 0..iters {
            let mut rng = derive_rng(self.cfg.optim.seed, STREAM_STAGE, 0, it as u64);
            let batch = sample_pixels(&self.valid[0], pixels, &mut rng);
            self.grad.iter_mut().for_each(|g| *g = 0.0);
            let items = [(0usize, Pose::identity(), batch)];
            let (loss, _) = evaluate_frames(&self.map, self.frames, &items, &self.ctx, Some(&mut self.grad))?;
            check_loss(&loss, "bootstrap")?;
            last = loss;
            self.map_adam.step_lazy(self.map.params_mut(), &self.grad)?;
        }
        self.log("bootstrap", last);
        Ok(())
    }

    /// Mapping for knot interval `j`, given the tracked poses of every
    /// frame so far.
    pub fn run_cycle(&mut self, j: usize, tracked: &[Pose]) -> Result<()> {
        self.cycle = j + 1;
        let end = self.interval_start(j + 1);
        let start = self.interval_start(0).max(end - self.cfg.pipeline.window as f64 * self.cfg.pipeline.dt);
        let window = Window { start, end };
        match self.cfg.pipeline.mode {
            Mode::Spline => self.spline_cycle(j, tracked, window),
            Mode::Baseline => self.baseline_cycle(tracked, window),
        }
    }

    fn spline_cycle(&mut self, j: usize, tracked: &[Pose], w: Window) -> Result<()> {
        let lo = self.interval_start(j);
        let fresh: Vec<(f64, Pose)> = self
            .frames_in(lo, w.end, tracked.len())
            .into_iter()
            .map(|f| (self.frames[f].timestamp, tracked[f]))
            .collect();
        let (traj, samples) = match self.traj.take() {
            None => (init_first_controls(self.grid.t0, self.grid.dt, &fresh, self.cfg.pipeline.curve_smoothing)?, fresh),
            Some(t) => {
                // earlier frames in the support of the refitted controls
                // are anchored at their current estimates
                let anchor = self.interval_start(j.saturating_sub(CURVE_TAIL - 1));
                let mut samples = Vec::new();
                if !fresh.is_empty() {
                    for f in self.frames_in(anchor, lo, tracked.len()) {
                        let ts = self.frames[f].timestamp;
                        samples.push((ts, t.eval_pose(ts)?));
                    }
                }
                samples.extend(fresh);
                (extend_and_refit(&t, &samples, CURVE_TAIL, self.cfg.pipeline.curve_smoothing)?, samples)
            }
        };
        let curve = if samples.is_empty() { 0.0 } else { curve_cost(&traj, &samples)? };
        self.traj = Some(traj);
        self.log(
            "curve",
            LossBreakdown {
                total: curve,
                ..Default::default()
            },
        );

        let c = self.traj.as_ref().map_or(0, |t| t.len());
        let m = self.cfg.pipeline.window;
        let free = c.saturating_sub(m)..c;
        let upto = tracked.len();
        let window_frames = self.frames_in(w.start, w.end, upto);
        let window_keys: Vec<usize> = window_frames.iter().copied().filter(|f| self.is_keyframe(*f)).collect();
        let dyn_window = Some((w.start, w.end));

        let iters = self.cfg.optim.iters_lba_init;
        let px = self.cfg.pipeline.pixels_lba;
        self.guarded("refine", |s| s.spline_stage(&window_frames, free.clone(), dyn_window, false, iters, px))?;
        let iters = self.cfg.optim.iters_lba_joint;
        self.guarded("joint", |s| s.spline_stage(&window_keys, free.clone(), dyn_window, true, iters, px))?;

        let outside: Vec<usize> = self
            .frames_in(self.interval_start(0), w.start, upto)
            .into_iter()
            .filter(|f| self.is_keyframe(*f))
            .collect();
        if c > m && !outside.is_empty() {
            let span = (self.frames[outside[0]].timestamp, w.start);
            let iters = self.cfg.optim.iters_gba;
            let px = self.cfg.pipeline.pixels_gba;
            self.guarded("global", |s| s.spline_stage(&outside, 0..c - m, Some(span), true, iters, px))?;
        }
        Ok(())
    }

    fn baseline_cycle(&mut self, tracked: &[Pose], w: Window) -> Result<()> {
        let upto = tracked.len();
        let keys: Vec<usize> = (0..upto).filter(|f| self.is_keyframe(*f)).collect();
        for f in keys {
            self.keyframe_poses.entry(f).or_insert(tracked[f]);
        }
        let window_keys: Vec<usize> = self
            .frames_in(w.start, w.end, upto)
            .into_iter()
            .filter(|f| self.is_keyframe(*f))
            .collect();
        let iters = self.cfg.optim.iters_lba_joint;
        let px = self.cfg.pipeline.pixels_lba;
        self.guarded("joint", |s| s.discrete_stage(&window_keys, iters, px))?;
        let outside: Vec<usize> = self
            .frames_in(self.interval_start(0), w.start, upto)
            .into_iter()
            .filter(|f| self.is_keyframe(*f))
            .collect();
        if !outside.is_empty() {
            let iters = self.cfg.optim.iters_gba;
            let px = self.cfg.pipeline.pixels_gba;
            self.guarded("global", |s| s.discrete_stage(&outside, iters, px))?;
        }
        Ok(())
    }

    /// Runs a stage; on a numerical failure restores the prior state and
    /// carries on.
    fn guarded(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<LossBreakdown>) -> Result<()> {
        let traj = self.traj.clone();
        let keys = self.keyframe_poses.clone();
        let map = self.map.clone();
        let adam = self.map_adam.clone();
        match f(self) {
            Ok(loss) => {
                self.log(stage, loss);
                Ok(())
            }
            Err(e) if e.is_numerical() => {
                log::warn!("cycle {} stage {stage} aborted, prior values restored: {e}", self.cycle);
                self.traj = traj;
                self.keyframe_poses = keys;
                self.map = map;
                self.map_adam = adam;
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    fn batch(&self, frames: &[usize], poses: &[Pose], pixels: usize, stage_seed: u64) -> Vec<(usize, Pose, Vec<usize>)> {
        frames
            .iter()
            .zip(poses)
            .map(|(f, p)| {
                let mut rng = derive_rng(self.cfg.optim.seed, STREAM_STAGE, stage_seed, *f as u64);
                (*f, *p, sample_pixels(&self.valid[*f], pixels, &mut rng))
            })
            .collect()
    }

    fn stage_seed(&self, iter: usize) -> u64 {
        ((self.cycle as u64) << 32) ^ ((self.logs.len() as u64) << 16) ^ iter as u64
    }

    /// Optimizes the controls in `free` (and the map when `with_map`)
    /// against the given frames plus the dynamics term over `dyn_span`.
    fn spline_stage(
        &mut self,
        frames: &[usize],
        free: Range<usize>,
        dyn_span: Option<(f64, f64)>,
        with_map: bool,
        iters: usize,
        pixels: usize,
    ) -> Result<LossBreakdown> {
        let mut adam = AdamState::new(ParamKind::PoseTangent, 6 * free.len(), self.cfg.optim.lr_pose_mapping, AdamConfig::default());
        let dynamics = self.cfg.dynamics;
        let mut last = LossBreakdown::default();
        for it in 0..iters {
            let traj = self.traj.as_ref().ok_or_else(|| Error::InvalidArgument("no trajectory".into()))?;
            let jacs = frames
                .iter()
                .map(|f| traj.pose_jacobian(self.frames[*f].timestamp))
                .collect::<Result<Vec<_>>>()?;
            let poses: Vec<Pose> = jacs.iter().map(|j| j.pose).collect();
            let items = self.batch(frames, &poses, pixels, self.stage_seed(it));
            let mut control_grad = vec![[0.0; 6]; traj.len()];
            let mut loss = LossBreakdown::default();
            if !items.is_empty() {
                if with_map {
                    self.grad.iter_mut().for_each(|g| *g = 0.0);
                }
                let grad = with_map.then_some(self.grad.as_mut_slice());
                let (l, pose_grads) = evaluate_frames(&self.map, self.frames, &items, &self.ctx, grad)?;
                loss = l;
                for (jac, g) in jacs.iter().zip(&pose_grads) {
                    let gc = jac.jacobian.transpose() * SVector::<f64, 6>::from(*g);
                    for k in 0..4 {
                        for i in 0..6 {
                            control_grad[jac.first + k][i] += gc[6 * k + i];
                        }
                    }
                }
            }
            if let Some(span) = dyn_span.filter(|_| dynamics.is_active()) {
                let r = dynamics_regularizer_with_grad(traj, span, &dynamics, &mut control_grad)?;
                loss.dynamics = r;
                loss.total += r;
            }
            check_loss(&loss, "mapping")?;
            last = loss;

            let mut controls = traj.controls()[free.clone()].to_vec();
            adam.step_poses(&mut controls, &control_grad[free.clone()])?;
            let traj = self.traj.as_mut().expect("checked above");
            for (k, p) in free.clone().zip(controls) {
                // an update that breaks the adjacent-angle bound is a numerical failure
                traj.set_control(k, p).map_err(|_| Error::DegenerateRotation {
                    angle: MAX_ADJACENT_ANGLE,
                    tolerance: std::f64::consts::PI - MAX_ADJACENT_ANGLE,
                })?;
            }
            if with_map && !items.is_empty() {
                self.map_adam.step_lazy(self.map.params_mut(), &self.grad)?;
            }
        }
        Ok(last)
    }

    /// Joint optimization of discrete keyframe poses and the map.
    fn discrete_stage(&mut self, frames: &[usize], iters: usize, pixels: usize) -> Result<LossBreakdown> {
        let mut adam = AdamState::new(ParamKind::PoseTangent, 6 * frames.len(), self.cfg.optim.lr_pose_mapping, AdamConfig::default());
        let mut last = LossBreakdown::default();
        if frames.is_empty() {
            return Ok(last);
        }
        for it in 0..iters {
            let mut poses: Vec<Pose> = frames.iter().map(|f| self.keyframe_poses[f]).collect();
            let items = self.batch(frames, &poses, pixels, self.stage_seed(it));
            self.grad.iter_mut().for_each(|g| *g = 0.0);
            let (loss, grads) = evaluate_frames(&self.map, self.frames, &items, &self.ctx, Some(&mut self.grad))?;
            check_loss(&loss, "mapping")?;
            last = loss;
            adam.step_poses(&mut poses, &grads)?;
            for (f, p) in frames.iter().zip(poses) {
                self.keyframe_poses.insert(*f, p);
            }
            self.map_adam.step_lazy(self.map.params_mut(), &self.grad)?;
        }
        Ok(last)
    }
}

fn check_loss(loss: &LossBreakdown, context: &str) -> Result<()> {
    match loss.non_finite_term() {
        Some(term) => Err(Error::NonFiniteLoss {
            term,
            context: format!(" during {context}"),
        }),
        None => Ok(()),
    }
}

