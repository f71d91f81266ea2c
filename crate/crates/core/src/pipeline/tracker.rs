use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::batch::sample_pixels;
use crate::error::Result;
use crate::optim::{AdamConfig, AdamState, ParamKind};
use crate::render::{frame_loss, LossBreakdown, LossContext, MapModel, RgbdFrame};
use crate::se3::Pose;

/// `T_{k-1} (T_{k-2}^-1 T_{k-1})`; with fewer than two priors the last
/// pose (or identity) is repeated.
pub fn constant_velocity(prev: Option<&Pose>, prev2: Option<&Pose>) -> Pose {
    match (prev, prev2) {
        (Some(a), Some(b)) => a.compose(&b.inverse().compose(a)),
        (Some(a), None) => *a,
        _ => Pose::identity(),
    }
}

/// Refines `init` against a frozen map. Returns the pose and the loss of
/// the last iteration.
pub fn track_frame(
    map: &dyn MapModel,
    frame: &RgbdFrame,
    index: usize,
    valid: &[usize],
    init: Pose,
    ctx: &LossContext,
    iters: usize,
    pixels: usize,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Pose, LossBreakdown)> {
    let mut pose = init;
    let mut adam = AdamState::new(ParamKind::PoseTangent, 6, lr, AdamConfig::default());
    let mut last = LossBreakdown::default();
    for _ in 0..iters {
        let batch = sample_pixels(valid, pixels, rng);
        let fl = frame_loss(map, frame, index, &pose, &batch, ctx, 1.0, None)?;
        last = fl.breakdown;
        let mut poses = [pose];
        adam.step_poses(&mut poses, &[fl.pose_gradient])?;
        pose = poses[0];
    }
    Ok((pose, last))
}

/// Perturbs a pose by Gaussian tangent noise.
pub fn jitter_pose(pose: &Pose, sigma_trans: f64, sigma_rot: f64, rng: &mut impl Rng) -> Pose {
    let draw = |s: f64, rng: &mut dyn rand::RngCore| -> f64 {
        if s > 0.0 {
            Normal::new(0.0, s).expect("positive sigma").sample(rng)
        } else {
            0.0
        }
    };
    let mut d = [0.0; 6];
    for v in d.iter_mut().take(3) {
        *v = draw(sigma_rot, rng);
    }
    for v in d.iter_mut().skip(3) {
        *v = draw(sigma_trans, rng);
    }
    pose.retract(&d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn constant_velocity_model() {
        assert_eq!(constant_velocity(None, None), Pose::identity());
        let a = Pose::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let b = Pose::from_translation(Vector3::new(0.3, 0.0, 0.0));
        let p = constant_velocity(Some(&b), Some(&a));
        assert!((p.translation - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-15);
        let id = Pose::identity();
        assert_eq!(constant_velocity(Some(&id), Some(&id)), id);
    }
}
