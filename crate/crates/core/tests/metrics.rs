mod common;

use common::*;
use nalgebra::Vector3;
use rand::Rng;

use ctslam::eval::{associate, ate_rmse, horn_align, rpe, TimedTrajectory};
use ctslam::se3::Pose;

fn random_timed(seed: u64, n: usize) -> TimedTrajectory {
    let mut rng = rng(seed);
    let traj = random_trajectory(&mut rng, n / 5 + 4, 0.3, 0.2, 0.2);
    let (lo, _) = traj.domain();
    let times: Vec<f64> = (0..n).map(|k| lo + k as f64 / 30.0).collect();
    TimedTrajectory::from_spline(&traj, &times).unwrap()
}

fn noisy(traj: &TimedTrajectory, seed: u64, sigma: f64) -> TimedTrajectory {
    let mut rng = rng(seed);
    TimedTrajectory::new(
        traj.entries()
            .iter()
            .map(|(t, p)| (*t, p.compose(&random_pose(&mut rng, sigma, sigma))))
            .collect(),
    )
    .unwrap()
}

const TOL: f64 = 1.0 / 60.0;

#[test]
fn errors_vanish_for_a_rigidly_moved_copy() {
    for seed in 0..10 {
        let gt = random_timed(seed, 60);
        let mut rng = rng(100 + seed);
        let est = gt.transformed(&random_pose(&mut rng, 2.0, 1.0));
        assert!(ate_rmse(&est, &gt, TOL).unwrap() < 1e-9);
        let (t, r) = rpe(&est, &gt, 1, TOL).unwrap();
        assert!(t < 1e-9 && r < 1e-7, "{t} {r}");
    }
}

#[test]
fn metrics_ignore_a_global_transform_of_the_estimate() {
    for seed in 0..10 {
        let gt = random_timed(seed, 60);
        let est = noisy(&gt, 200 + seed, 0.01);
        let mut rng = rng(300 + seed);
        let moved = est.transformed(&random_pose(&mut rng, 2.0, 1.0));
        let a = ate_rmse(&est, &gt, TOL).unwrap();
        let b = ate_rmse(&moved, &gt, TOL).unwrap();
        assert!(rel_err(a, b, 1e-12) < 1e-8, "{a} {b}");
        for interval in [1, 3] {
            let (ta, ra) = rpe(&est, &gt, interval, TOL).unwrap();
            let (tb, rb) = rpe(&moved, &gt, interval, TOL).unwrap();
            assert!(rel_err(ta, tb, 1e-12) < 1e-8 && rel_err(ra, rb, 1e-12) < 1e-8);
        }
    }
}

#[test]
fn horn_recovers_the_transform_under_noise() {
    let mut rng = rng(21);
    for _ in 0..20 {
        let truth = random_pose(&mut rng, 1.0, 1.0);
        let n = 200;
        let sigma = 1e-3;
        let est: Vec<Vector3<f64>> = (0..n).map(|_| gaussian3(&mut rng, 1.0)).collect();
        let gt: Vec<Vector3<f64>> = est.iter().map(|p| truth.transform_point(p) + gaussian3(&mut rng, sigma)).collect();
        let fit = horn_align(&est, &gt).unwrap();
        let (r_oracle, t_oracle) = kabsch(&est, &gt);
        // both closed forms agree
        assert!((fit.rotation.matrix() - r_oracle).norm() < 1e-9);
        assert!((fit.translation - t_oracle).norm() < 1e-9);
        // and sit within a few noise standard errors of the truth
        assert!((fit.rotation.inverse() * truth.rotation).angle() < 10.0 * sigma / (n as f64).sqrt());
        assert!((fit.translation - truth.translation).norm() < 10.0 * sigma / (n as f64).sqrt() * 3.0);
    }
}

#[test]
fn association_matches_within_tolerance_only() {
    let gt = random_timed(3, 30);
    let mut rng = rng(4);
    let shifted = TimedTrajectory::new(
        gt.entries()
            .iter()
            .map(|(t, p)| (t + rng.random_range(-0.005..0.005), *p))
            .collect(),
    )
    .unwrap();
    let pairs = associate(&shifted, &gt, TOL);
    assert_eq!(pairs, (0..30).map(|k| (k, k)).collect::<Vec<_>>());
    let late = TimedTrajectory::new(gt.entries().iter().map(|(t, p)| (t + 10.0, *p)).collect()).unwrap();
    assert!(associate(&late, &gt, TOL).is_empty());
    assert!(ate_rmse(&late, &gt, TOL).is_err());
}

#[test]
fn rpe_matches_the_homogeneous_matrix_oracle() {
    for seed in 0..5 {
        let gt = random_timed(seed, 40);
        let est = noisy(&gt, 50 + seed, 0.02);
        let poses = |t: &TimedTrajectory| t.entries().iter().map(|e| e.1).collect::<Vec<Pose>>();
        for interval in [1, 2, 5] {
            let (t, _) = rpe(&est, &gt, interval, TOL).unwrap();
            let oracle = brute_rpe(&poses(&est), &poses(&gt), interval) * 100.0;
            assert!(rel_err(t, oracle, 1e-12) < 1e-9, "{t} vs {oracle}");
        }
    }
}
