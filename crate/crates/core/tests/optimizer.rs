mod common;

use common::*;

use ctslam::optim::{AdamConfig, AdamState, ParamKind};
use ctslam::se3::Pose;

/// `sum |log(T_i^-1 P_i)|^2` style objective through the retraction: the
/// gradient at `pose` of `|rot err|^2 + |trans err|^2` toward `target`.
fn pull(pose: &Pose, target: &Pose) -> [f64; 6] {
    let f = |p: &Pose| {
        let r = (target.rotation.inverse() * p.rotation).log().unwrap();
        r.norm_squared() + (p.translation - target.translation).norm_squared()
    };
    fd_pose_gradient(f, pose, 1e-7)
}

#[test]
fn pose_updates_stay_on_the_manifold_and_converge() {
    let mut rng = rng(41);
    let targets: Vec<Pose> = (0..4).map(|_| random_pose(&mut rng, 1.0, 1.0)).collect();
    let mut poses: Vec<Pose> = targets.iter().map(|t| t.compose(&random_pose(&mut rng, 0.2, 0.3))).collect();
    let mut adam = AdamState::new(ParamKind::PoseTangent, 24, 1e-2, AdamConfig::default());
    for _ in 0..3000 {
        let grad: Vec<[f64; 6]> = poses.iter().zip(&targets).map(|(p, t)| pull(p, t)).collect();
        adam.step_poses(&mut poses, &grad).unwrap();
    }
    for (p, t) in poses.iter().zip(&targets) {
        let m = p.rotation.matrix();
        let ortho = (m.transpose() * m - nalgebra::Matrix3::identity()).norm();
        assert!(ortho < 1e-12, "orthogonality defect {ortho:e}");
        assert!((m.determinant() - 1.0).abs() < 1e-12);
        assert!((p.translation - t.translation).norm() < 1e-3);
        assert!((p.rotation.inverse() * t.rotation).angle() < 1e-3);
    }
    assert_eq!(adam.steps(), 3000);
}

#[test]
fn zero_gradient_blocks_are_untouched() {
    let mut rng = rng(42);
    let mut poses: Vec<Pose> = (0..3).map(|_| random_pose(&mut rng, 1.0, 1.0)).collect();
    let before = poses.clone();
    let mut adam = AdamState::new(ParamKind::PoseTangent, 18, 1e-2, AdamConfig::default());
    let grad = vec![[0.0; 6], [1.0, 0.0, 0.0, 0.0, -1.0, 0.0], [0.0; 6]];
    adam.step_poses(&mut poses, &grad).unwrap();
    assert_eq!(poses[0], before[0]);
    assert_eq!(poses[2], before[2]);
    assert_ne!(poses[1], before[1]);
    // the first step of bias-corrected Adam moves each active coordinate by lr
    let d = before[1].inverse().compose(&poses[1]);
    assert!(((poses[1].translation - before[1].translation).y - 1e-2).abs() < 1e-9);
    assert!((d.rotation.angle() - 1e-2).abs() < 1e-9);
}

#[test]
fn non_finite_gradients_are_rejected() {
    let mut adam = AdamState::new(ParamKind::VoxelGrid, 3, 1e-2, AdamConfig::default());
    let mut params = vec![0.0; 3];
    assert!(adam.step(&mut params, &[0.0, f64::NAN, 0.0]).is_err());
    assert!(adam.step(&mut params, &[0.0, 1.0]).is_err());
}
