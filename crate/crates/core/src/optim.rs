//! Adaptive-moment first-order updates over flat and pose-valued blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::Pose;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// What a block of parameters represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// 6 entries per pose: rotation (rad) then translation (m).
    PoseTangent,
    VoxelGrid,
}

/// Moment accumulators of one parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub kind: ParamKind,
    pub lr: f64,
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl AdamState {
    pub fn new(kind: ParamKind, len: usize, lr: f64, config: AdamConfig) -> Self {
        Self {
            kind,
            lr,
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Grows the block with zero moments, e.g. when a control is appended.
    pub fn resize(&mut self, len: usize) {
        self.m.resize(len, 0.0);
        self.v.resize(len, 0.0);
    }

    /// Updates the moments with `grad` and writes the increment to apply
    /// into `delta`.
    pub fn increment(&mut self, grad: &[f64], delta: &mut [f64]) -> Result<()> {
        if grad.len() != self.len() || delta.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "gradient of length {} for a block of {}",
                grad.len(),
                self.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                term: "gradient",
                context: format!(" at entry {i} of a {:?} block", self.kind),
            });
        }
        self.steps += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.steps.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - beta2.powi(self.steps.min(i32::MAX as u64) as i32);
        for i in 0..grad.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            delta[i] = -self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
        Ok(())
    }

    /// In-place update of a flat block.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        let mut delta = vec![0.0; params.len()];
        self.increment(grad, &mut delta)?;
        for (p, d) in params.iter_mut().zip(&delta) {
            *p += d;
        }
        Ok(())
    }

    /// Like [`AdamState::step`], but entries whose gradient is exactly zero
    /// keep their value and moments. Suited to large sparse blocks such as
    /// a voxel grid where most cells are unobserved in a batch.
    pub fn step_lazy(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if grad.len() != self.len() || params.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "gradient of length {} for a block of {}",
                grad.len(),
                self.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                term: "gradient",
                context: format!(" at entry {i} of a {:?} block", self.kind),
            });
        }
        self.steps += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.steps.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - beta2.powi(self.steps.min(i32::MAX as u64) as i32);
        for (i, &g) in grad.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
        Ok(())
    }

    /// On-manifold update of a pose block; poses with a zero increment are
    /// left untouched.
    pub fn step_poses(&mut self, poses: &mut [Pose], grad: &[[f64; 6]]) -> Result<()> {
        let flat: Vec<f64> = grad.iter().flatten().copied().collect();
        let mut delta = vec![0.0; flat.len()];
        self.increment(&flat, &mut delta)?;
        for (pose, d) in poses.iter_mut().zip(delta.chunks_exact(6)) {
            if d.iter().any(|v| *v != 0.0) {
                *pose = pose.retract(d.try_into().expect("chunk of six"));
            }
        }
        Ok(())
    }
}
