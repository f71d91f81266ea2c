//! Log-barrier penalty on sampled linear and angular acceleration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline::ControlTrajectory;

/// Ratios `|a| / a_max` are clamped to `1 - BARRIER_EPS` before the log.
pub const BARRIER_EPS: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsParams {
    pub lambda1: f64,
    pub lambda2: f64,
    /// m/s^2
    pub a_max: f64,
    /// rad/s^2
    pub w_dot_max: f64,
    /// Samples per regularized interval.
    #[serde(rename = "K")]
    pub k: usize,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.1,
            a_max: 5.0,
            w_dot_max: 5.0,
            k: 16,
        }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda1 >= 0.0
            && self.lambda2 >= 0.0
            && self.a_max > 0.0
            && self.w_dot_max > 0.0
            && self.k >= 1
            && self.lambda1.is_finite()
            && self.lambda2.is_finite()
            && self.a_max.is_finite()
            && self.w_dot_max.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid dynamics parameters {self:?}")))
        }
    }

    /// Same bounds, both weights zero.
    pub fn disabled(&self) -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
            ..*self
        }
    }

    pub fn is_active(&self) -> bool {
        self.lambda1 > 0.0 || self.lambda2 > 0.0
    }
}

/// Midpoints of `k` equal sub-intervals of `[ta, tb)`.
pub fn sample_times(ta: f64, tb: f64, k: usize) -> Vec<f64> {
    let step = (tb - ta) / k as f64;
    (0..k).map(|i| ta + (i as f64 + 0.5) * step).collect()
}

/// Returns the clamped barrier value and its slope with respect to the
/// ratio. Past the clamp the slope is taken at the clamp point so that the
/// gradient keeps pointing inward.
fn barrier(ratio: f64, lambda: f64) -> (f64, f64) {
    let r = ratio.min(1.0 - BARRIER_EPS);
    (-lambda * (1.0 - r).ln(), lambda / (1.0 - r))
}

fn check_interval(traj: &ControlTrajectory, ta: f64, tb: f64) -> Result<()> {
    let (start, end) = traj.domain();
    if !(ta < tb) || ta < start || tb > end {
        return Err(Error::OutOfDomain {
            t: if ta < start { ta } else { tb },
            start,
            end,
        });
    }
    Ok(())
}

pub fn dynamics_regularizer(
    traj: &ControlTrajectory,
    interval: (f64, f64),
    params: &DynamicsParams,
) -> Result<f64> {
    check_interval(traj, interval.0, interval.1)?;
    let mut total = 0.0;
    for t in sample_times(interval.0, interval.1, params.k) {
        let (_, a) = traj.eval_linear_kinematics(t)?;
        let (_, w_dot) = traj.eval_angular_rates(t)?;
        total += barrier(a.norm() / params.a_max, params.lambda1).0;
        total += barrier(w_dot.norm() / params.w_dot_max, params.lambda2).0;
    }
    Ok(total)
}

/// Regularizer value; accumulates its gradient with respect to the
/// control tangents (rotation, translation) into `grad`, one entry per
/// control.
pub fn dynamics_regularizer_with_grad(
    traj: &ControlTrajectory,
    interval: (f64, f64),
    params: &DynamicsParams,
    grad: &mut [[f64; 6]],
) -> Result<f64> {
    check_interval(traj, interval.0, interval.1)?;
    if grad.len() != traj.len() {
        return Err(Error::InvalidArgument(format!(
            "gradient buffer has {} entries for {} controls",
            grad.len(),
            traj.len()
        )));
    }
    let mut total = 0.0;
    for t in sample_times(interval.0, interval.1, params.k) {
        let jac = traj.acceleration_jacobian(t)?;

        let a_norm = jac.acceleration.norm();
        let (value, slope) = barrier(a_norm / params.a_max, params.lambda1);
        total += value;
        if a_norm > 0.0 && params.lambda1 > 0.0 {
            let dir = jac.acceleration * (slope / (params.a_max * a_norm));
            for k in 0..4 {
                let g = &mut grad[jac.first + k];
                for c in 0..3 {
                    g[3 + c] += dir[c] * jac.translation_weights[k];
                }
            }
        }

        let w_norm = jac.angular_acceleration.norm();
        let (value, slope) = barrier(w_norm / params.w_dot_max, params.lambda2);
        total += value;
        if w_norm > 0.0 && params.lambda2 > 0.0 {
            let dir = jac.angular_acceleration * (slope / (params.w_dot_max * w_norm));
            let g_rot = jac.angular_jacobian.transpose() * dir;
            for k in 0..4 {
                let g = &mut grad[jac.first + k];
                for c in 0..3 {
                    g[c] += g_rot[3 * k + c];
                }
            }
        }
    }
    Ok(total)
}
