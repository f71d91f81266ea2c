use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsParams;
use crate::error::{Error, Result};
use crate::render::{LossWeights, RenderSettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Trajectory as a cubic B-spline refined by bundle adjustment.
    #[default]
    Spline,
    /// Independent per-frame poses, no spline and no dynamics term.
    Baseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    /// Pose learning rate of tracking.
    pub lr_pose: f64,
    /// Pose (control point or keyframe) learning rate of the mapping stages.
    pub lr_pose_mapping: f64,
    pub lr_map: f64,
    pub iters_tracking: usize,
    pub iters_lba_init: usize,
    pub iters_lba_joint: usize,
    pub iters_gba: usize,
    /// Map-only iterations on the first frame.
    pub iters_map_init: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_pose: 1e-3,
            lr_pose_mapping: 1e-4,
            lr_map: 5e-3,
            iters_tracking: 20,
            iters_lba_init: 0,
            iters_lba_joint: 10,
            iters_gba: 10,
            iters_map_init: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub mode: Mode,
    /// Knot interval, seconds.
    pub dt: f64,
    /// Sliding-window size in control points.
    #[serde(rename = "M")]
    pub window: usize,
    /// Overrides the dataset frame rate.
    pub fps: Option<f64>,
    pub keyframe_every: usize,
    pub pixels_tracking: usize,
    pub pixels_lba: usize,
    pub pixels_gba: usize,
    pub pixels_map_init: usize,
    /// Run tracking and mapping inline in a fixed order.
    pub deterministic: bool,
    /// Gaussian noise added to each tracked pose: translation (m) and
    /// rotation (rad) standard deviations. Overrides the dataset values.
    pub jitter_trans: Option<f64>,
    pub jitter_rot: Option<f64>,
    /// Tracking ignores rays whose depth miss exceeds this multiple of the
    /// batch median; `null` keeps every ray.
    pub tracking_outlier_factor: Option<f64>,
    /// Weight of the control second-difference prior in the curve stage,
    /// relative to one tracked pose.
    pub curve_smoothing: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Spline,
            dt: 0.3,
            window: 6,
            fps: None,
            keyframe_every: 5,
            pixels_tracking: 1024,
            pixels_lba: 2048,
            pixels_gba: 1024,
            pixels_map_init: 4096,
            deterministic: true,
            jitter_trans: None,
            jitter_rot: None,
            tracking_outlier_factor: Some(5.0),
            curve_smoothing: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    /// Half side of the cubic grid centered on the first camera, meters.
    pub half_extent: f64,
    pub cell_size: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            half_extent: 3.2,
            cell_size: 0.064,
        }
    }
}

/// Every tunable of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub render: RenderSettings,
    pub loss: LossWeights,
    pub dynamics: DynamicsParams,
    pub optim: OptimConfig,
    pub pipeline: PipelineConfig,
    pub map: MapConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        self.loss.validate()?;
        self.dynamics.validate()?;
        let p = &self.pipeline;
        let o = &self.optim;
        if !(p.dt > 0.0 && p.dt.is_finite()) {
            return Err(Error::Config(format!("pipeline.dt must be positive, got {}", p.dt)));
        }
        if p.window < 4 {
            return Err(Error::Config(format!("pipeline.M must be at least 4, got {}", p.window)));
        }
        if p.keyframe_every == 0 {
            return Err(Error::Config("pipeline.keyframe_every must be positive".into()));
        }
        if let Some(fps) = p.fps {
            self.check_fps(fps)?;
        }
        if p.pixels_tracking == 0 || p.pixels_lba == 0 || p.pixels_gba == 0 || p.pixels_map_init == 0 {
            return Err(Error::Config("pixel budgets must be positive".into()));
        }
        for (name, v) in [("jitter_trans", p.jitter_trans), ("jitter_rot", p.jitter_rot)] {
            if v.is_some_and(|v| !(v >= 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("pipeline.{name} must be non-negative")));
            }
        }
        if p.tracking_outlier_factor.is_some_and(|k| !(k > 1.0 && k.is_finite())) {
            return Err(Error::Config("pipeline.tracking_outlier_factor must exceed 1".into()));
        }
        if !(p.curve_smoothing >= 0.0 && p.curve_smoothing.is_finite()) {
            return Err(Error::Config("pipeline.curve_smoothing must be non-negative".into()));
        }
        if [o.lr_pose, o.lr_pose_mapping, o.lr_map].iter().any(|lr| !(*lr > 0.0 && lr.is_finite())) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.map.half_extent > 0.0 && self.map.cell_size > 0.0) {
            return Err(Error::Config("map extent and cell size must be positive".into()));
        }
        Ok(())
    }

    /// The knot interval must exceed the frame period.
    pub fn check_fps(&self, fps: f64) -> Result<()> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Config(format!("fps must be positive, got {fps}")));
        }
        if self.pipeline.dt <= 1.0 / fps {
            return Err(Error::Config(format!(
                "pipeline.dt = {} must exceed the frame period 1/{fps}",
                self.pipeline.dt
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"M\":6"));
        assert!(text.contains("\"K\":16"));
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"optim": {"lr": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"extra": 1}"#).is_err());
    }

    #[test]
    fn partial_override() {
        let cfg = RunConfig::from_json(r#"{"pipeline": {"mode": "baseline", "dt": 0.2}}"#).unwrap();
        assert_eq!(cfg.pipeline.mode, Mode::Baseline);
        assert_eq!(cfg.pipeline.dt, 0.2);
        assert_eq!(cfg.pipeline.window, 6);
    }

    #[test]
    fn knot_interval_must_exceed_frame_period() {
        let cfg = RunConfig::default();
        assert!(cfg.check_fps(30.0).is_ok());
        assert!(cfg.check_fps(2.0).is_err());
        assert!(RunConfig::from_json(r#"{"pipeline": {"M": 3}}"#).is_err());
    }
}
