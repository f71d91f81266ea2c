//! Independent oracles shared by the integration tests: central finite
//! differences, random generators and brute-force metric formulas.
#![allow(dead_code)]

use ctslam::se3::{exp_so3, Pose};
use ctslam::ControlTrajectory;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian3(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal) * sigma)
}

pub fn random_pose(rng: &mut ChaCha8Rng, trans: f64, rot: f64) -> Pose {
    let r = exp_so3(&gaussian3(rng, rot)).unwrap();
    Pose::new(r, gaussian3(rng, trans))
}

/// Random-walk controls: translation steps of `trans` meters and rotation
/// steps of `rot` radians (per axis standard deviation).
pub fn random_trajectory(rng: &mut ChaCha8Rng, n: usize, dt: f64, trans: f64, rot: f64) -> ControlTrajectory {
    let mut controls = vec![random_pose(rng, 1.0, 1.0)];
    for _ in 1..n {
        let step = random_pose(rng, trans, rot);
        controls.push(controls.last().unwrap().compose(&step));
    }
    ControlTrajectory::new(rng.random_range(-1.0..1.0), dt, controls).unwrap()
}

/// Uniform time inside the valid domain, kept `margin` away from its ends.
pub fn random_time(rng: &mut ChaCha8Rng, traj: &ControlTrajectory, margin: f64) -> f64 {
    let (lo, hi) = traj.domain();
    rng.random_range(lo + margin..hi - margin)
}

/// `|a - b| / max(|a|, |b|, floor)`
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn rel_err3(a: &Vector3<f64>, b: &Vector3<f64>, floor: f64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(floor)
}

pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn central_diff3(f: impl Fn(f64) -> Vector3<f64>, x: f64, h: f64) -> Vector3<f64> {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn second_diff3(f: impl Fn(f64) -> Vector3<f64>, x: f64, h: f64) -> Vector3<f64> {
    (f(x + h) - f(x) * 2.0 + f(x - h)) / (h * h)
}

/// Body angular velocity from rotations alone: `vee(log(R(t-h)^T R(t+h))) / 2h`.
pub fn fd_body_rate(traj: &ControlTrajectory, t: f64, h: f64) -> Vector3<f64> {
    let a = traj.eval_pose(t - h).unwrap().rotation;
    let b = traj.eval_pose(t + h).unwrap().rotation;
    (a.inverse() * b).log().unwrap() / (2.0 * h)
}

/// Gradient of `f` under the retraction `pose.retract(delta)`.
pub fn fd_pose_gradient(f: impl Fn(&Pose) -> f64, pose: &Pose, h: f64) -> [f64; 6] {
    std::array::from_fn(|i| {
        let mut d = [0.0; 6];
        d[i] = h;
        let p = f(&pose.retract(&d));
        d[i] = -h;
        let m = f(&pose.retract(&d));
        (p - m) / (2.0 * h)
    })
}

/// Rigid alignment of `est` onto `gt` by SVD of the cross-covariance
/// (Kabsch), with a reflection guard.
pub fn kabsch(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = est.len() as f64;
    let ce = est.iter().sum::<Vector3<f64>>() / n;
    let cg = gt.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (e, g) in est.iter().zip(gt) {
        h += (e - ce) * (g - cg).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = vt.transpose() * d * u.transpose();
    (r, cg - r * ce)
}

/// Translation RMSE after Kabsch alignment, in the input units.
pub fn brute_ate(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> f64 {
    let (r, t) = kabsch(est, gt);
    let sum: f64 = est.iter().zip(gt).map(|(e, g)| (r * e + t - g).norm_squared()).sum();
    (sum / est.len() as f64).sqrt()
}

/// Relative translation error RMSE written out with 4x4 homogeneous
/// matrices, in the input units.
pub fn brute_rpe(est: &[Pose], gt: &[Pose], interval: usize) -> f64 {
    let hom = |p: &Pose| {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(p.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.translation);
        m
    };
    let mut sum = 0.0;
    let mut count = 0;
    for k in 0..est.len() - interval {
        let q = hom(&gt[k]).try_inverse().unwrap() * hom(&gt[k + interval]);
        let p = hom(&est[k]).try_inverse().unwrap() * hom(&est[k + interval]);
        let e = q.try_inverse().unwrap() * p;
        sum += Vector3::new(e[(0, 3)], e[(1, 3)], e[(2, 3)]).norm_squared();
        count += 1;
    }
    (sum / count as f64).sqrt()
}
