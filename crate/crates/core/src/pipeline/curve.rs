//! Fitting spline control points to discrete poses.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::se3::{hat, Pose};
use crate::spline::{ControlTrajectory, KnotGrid};

const MAX_ITERS: usize = 60;
/// Residual norms are floored here when forming reweighting factors.
const IRLS_FLOOR: f64 = 1e-6;

/// Inverse right Jacobian of SO(3): `log(exp(phi) exp(d)) ~ phi + Jr^-1(phi) d`.
fn right_jacobian_inverse(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    let coeff = if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() + k * 0.5 + k * k * coeff
}

fn residual(traj: &ControlTrajectory, t: f64, target: &Pose) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let p = traj.eval_pose(t)?;
    let r = (target.rotation.inverse() * p.rotation).log()?;
    Ok((r, p.translation - target.translation))
}

/// Objective `sum_k |log(R_k^T R(t_k))| + |t(t_k) - t_k|`.
pub fn curve_cost(traj: &ControlTrajectory, samples: &[(f64, Pose)]) -> Result<f64> {
    samples.iter().try_fold(0.0, |acc, (t, p)| {
        let (r, e) = residual(traj, *t, p)?;
        Ok(acc + r.norm() + e.norm())
    })
}

/// Second differences of the controls `i-2, i-1, i`: rotation
/// `log(R_{i-1}^T R_i) - log(R_{i-2}^T R_{i-1})` and translation
/// `t_i - 2 t_{i-1} + t_{i-2}`.
fn second_difference(c: &[Pose], i: usize) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let a = (c[i - 2].rotation.inverse() * c[i - 1].rotation).log()?;
    let b = (c[i - 1].rotation.inverse() * c[i].rotation).log()?;
    Ok((b - a, c[i].translation - c[i - 1].translation * 2.0 + c[i - 2].translation))
}

/// Controls `i` whose second difference involves a control in `free`.
fn smoothed_range(len: usize, free: &std::ops::Range<usize>) -> std::ops::Range<usize> {
    free.start.max(2)..(free.end + 2).min(len)
}

/// [`curve_cost`] plus `smooth` times the summed norms of the control
/// second differences that involve `free`.
fn penalized_cost(traj: &ControlTrajectory, samples: &[(f64, Pose)], free: &std::ops::Range<usize>, smooth: f64) -> Result<f64> {
    let mut cost = curve_cost(traj, samples)?;
    if smooth > 0.0 {
        for i in smoothed_range(traj.len(), free) {
            let (r, e) = second_difference(traj.controls(), i)?;
            cost += smooth * (r.norm() + e.norm());
        }
    }
    Ok(cost)
}

/// Residual rows for the normal equations: 3x6 blocks per control.
struct Block {
    res: Vector3<f64>,
    cols: Vec<(usize, nalgebra::Matrix3x6<f64>)>,
    weight: f64,
}

fn accumulate(h: &mut DMatrix<f64>, g: &mut DVector<f64>, b: &Block, free: &std::ops::Range<usize>) {
    let w = b.weight / b.res.norm().max(IRLS_FLOOR);
    for (ci, ji) in b.cols.iter().filter(|(c, _)| free.contains(c)) {
        let oi = 6 * (ci - free.start);
        let mut gi = g.rows_mut(oi, 6);
        gi += ji.transpose() * b.res * w;
        for (cj, jj) in b.cols.iter().filter(|(c, _)| free.contains(c)) {
            let oj = 6 * (cj - free.start);
            let mut hij = h.view_mut((oi, oj), (6, 6));
            hij += ji.transpose() * jj * w;
        }
    }
}

/// Minimizes [`curve_cost`] over the controls in `free` by iteratively
/// reweighted Gauss-Newton with Levenberg damping. Returns the final cost.
pub fn fit_controls(
    traj: &mut ControlTrajectory,
    samples: &[(f64, Pose)],
    free: std::ops::Range<usize>,
) -> Result<f64> {
    fit_controls_smoothed(traj, samples, free, 0.0)
}

/// [`fit_controls`] with an added `smooth * sum |second difference|` over
/// the controls, which damps the poorly observed newest control. Returns
/// the final [`curve_cost`], without the smoothing term.
pub fn fit_controls_smoothed(
    traj: &mut ControlTrajectory,
    samples: &[(f64, Pose)],
    free: std::ops::Range<usize>,
    smooth: f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("curve fit needs at least one pose".into()));
    }
    if free.is_empty() || free.end > traj.len() {
        return Err(Error::InvalidArgument(format!("free range {free:?} for {} controls", traj.len())));
    }
    if !(smooth >= 0.0 && smooth.is_finite()) {
        return Err(Error::InvalidArgument(format!("smoothing weight {smooth}")));
    }
    let n = 6 * free.len();
    let mut cost = penalized_cost(traj, samples, &free, smooth)?;
    let mut damping = 1e-9;
    for _ in 0..MAX_ITERS {
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut g = DVector::<f64>::zeros(n);
        for (t, target) in samples {
            let jac = traj.pose_jacobian(*t)?;
            if !(0..4).any(|k| free.contains(&(jac.first + k))) {
                continue;
            }
            let r_rot = (target.rotation.inverse() * jac.pose.rotation).log()?;
            let jr = right_jacobian_inverse(&r_rot);
            let rot = (0..4)
                .map(|k| (jac.first + k, jr * jac.jacobian.fixed_view::<3, 6>(0, 6 * k)))
                .collect();
            let tr = (0..4)
                .map(|k| (jac.first + k, jac.jacobian.fixed_view::<3, 6>(3, 6 * k).into_owned()))
                .collect();
            accumulate(&mut h, &mut g, &Block { res: r_rot, cols: rot, weight: 1.0 }, &free);
            let r_tr = jac.pose.translation - target.translation;
            accumulate(&mut h, &mut g, &Block { res: r_tr, cols: tr, weight: 1.0 }, &free);
        }
        if smooth > 0.0 {
            let c = traj.controls();
            for i in smoothed_range(c.len(), &free) {
                let (r, e) = second_difference(c, i)?;
                let n_rel = c[i - 2].rotation.inverse() * c[i - 1].rotation;
                let m_rel = c[i - 1].rotation.inverse() * c[i].rotation;
                let ja = right_jacobian_inverse(&n_rel.log()?);
                let jb = right_jacobian_inverse(&m_rel.log()?);
                let (n_rot, m_rot) = (n_rel.matrix(), m_rel.matrix());
                let rot_block = |m: Matrix3<f64>| {
                    let mut b = nalgebra::Matrix3x6::zeros();
                    b.fixed_view_mut::<3, 3>(0, 0).copy_from(&m);
                    b
                };
                let tr_block = |s: f64| {
                    let mut b = nalgebra::Matrix3x6::zeros();
                    b.fixed_view_mut::<3, 3>(0, 3).copy_from(&(Matrix3::identity() * s));
                    b
                };
                let rot = vec![
                    (i, rot_block(jb)),
                    (i - 1, rot_block(-jb * m_rot.transpose() - ja)),
                    (i - 2, rot_block(ja * n_rot.transpose())),
                ];
                let tr = vec![(i, tr_block(1.0)), (i - 1, tr_block(-2.0)), (i - 2, tr_block(1.0))];
                accumulate(&mut h, &mut g, &Block { res: r, cols: rot, weight: smooth }, &free);
                accumulate(&mut h, &mut g, &Block { res: e, cols: tr, weight: smooth }, &free);
            }
        }
        let mut accepted = false;
        for _ in 0..20 {
            let mut a = h.clone();
            for i in 0..n {
                a[(i, i)] += damping * (1.0 + h[(i, i)]);
            }
            let Some(chol) = a.cholesky() else {
                damping *= 10.0;
                continue;
            };
            let step = -chol.solve(&g);
            let mut trial = traj.clone();
            let mut ok = true;
            for (j, c) in free.clone().enumerate() {
                let d: [f64; 6] = std::array::from_fn(|i| step[6 * j + i]);
                let next = trial.controls()[c].retract(&d);
                if trial.set_control(c, next).is_err() {
                    ok = false;
                    break;
                }
            }
            let trial_cost = if ok { penalized_cost(&trial, samples, &free, smooth).ok() } else { None };
            match trial_cost {
                Some(tc) if tc <= cost => {
                    let small = step.amax() < 1e-13;
                    *traj = trial;
                    cost = tc;
                    damping = (damping * 0.3).max(1e-12);
                    accepted = true;
                    if small {
                        return curve_cost(traj, samples);
                    }
                    break;
                }
                _ => damping *= 10.0,
            }
        }
        if !accepted {
            break;
        }
    }
    curve_cost(traj, samples)
}

/// Next control by repeating the last control increment.
pub fn extrapolate_control(traj: &ControlTrajectory) -> Pose {
    let c = traj.controls();
    let (a, b) = (&c[c.len() - 2], &c[c.len() - 1]);
    b.compose(&a.inverse().compose(b))
}

/// Appends and fits the control that completes the interval covering
/// `samples`; with no samples the last increment is repeated.
pub fn init_control_point(traj: &ControlTrajectory, samples: &[(f64, Pose)]) -> Result<ControlTrajectory> {
    let mut out = traj.append_control_point(extrapolate_control(traj))?;
    if samples.is_empty() {
        log::warn!("no tracked poses in the interval; extrapolating the last control increment");
        return Ok(out);
    }
    let last = out.len() - 1;
    fit_controls(&mut out, samples, last..last + 1)?;
    Ok(out)
}

/// Appends a control and refits the last `tail` controls to `samples`,
/// which should span the support of those controls.
pub fn extend_and_refit(traj: &ControlTrajectory, samples: &[(f64, Pose)], tail: usize, smooth: f64) -> Result<ControlTrajectory> {
    let mut out = traj.append_control_point(extrapolate_control(traj))?;
    if samples.is_empty() {
        log::warn!("no tracked poses in the interval; extrapolating the last control increment");
        return Ok(out);
    }
    let c = out.len();
    fit_controls_smoothed(&mut out, samples, c - tail.clamp(1, c)..c, smooth)?;
    Ok(out)
}

/// Four controls fitted to the poses of the first interval, whose first
/// knot-domain point is `t0 + dt`, with the second-difference prior of
/// [`fit_controls_smoothed`].
pub fn init_first_controls(t0: f64, dt: f64, samples: &[(f64, Pose)], smooth: f64) -> Result<ControlTrajectory> {
    let Some(first) = samples.first() else {
        return Err(Error::InsufficientData("no poses in the first interval".into()));
    };
    // constant-velocity guess through the first and last samples
    let last = samples.last().expect("non-empty");
    let span = last.0 - first.0;
    let guess = |t: f64| -> Pose {
        if span <= 0.0 {
            return first.1;
        }
        let f = (t - first.0) / span;
        let rel = first.1.inverse().compose(&last.1);
        let w = rel.rotation.log().unwrap_or_else(|_| Vector3::zeros()) * f;
        let r = first.1.rotation * crate::se3::Rotation::exp(&w).unwrap_or_default();
        Pose::new(r, first.1.translation + (last.1.translation - first.1.translation) * f)
    };
    let controls = (0..4).map(|k| guess(t0 + k as f64 * dt)).collect();
    let mut traj = ControlTrajectory::new(t0, dt, controls)?;
    fit_controls_smoothed(&mut traj, samples, 0..4, smooth)?;
    Ok(traj)
}

/// Spline with knot spacing `dt` through a whole pose sequence, first
/// knot-domain point at the first sample. Controls are initialized one
/// interval at a time, then refined together.
pub fn fit_trajectory(samples: &[(f64, Pose)], dt: f64) -> Result<ControlTrajectory> {
    let Some(first) = samples.first() else {
        return Err(Error::InsufficientData("no poses to fit".into()));
    };
    if samples.windows(2).any(|w| !(w[0].0 < w[1].0)) {
        return Err(Error::InvalidArgument("sample times must increase".into()));
    }
    let t0 = first.0 - dt;
    let grid = KnotGrid::new(t0, dt, usize::MAX)?;
    let interval = |t: f64| grid.position(t).floor() as usize - 1;
    let last = interval(samples[samples.len() - 1].0);
    let mut groups = vec![Vec::new(); last + 1];
    for s in samples {
        groups[interval(s.0)].push(*s);
    }
    let mut traj = init_first_controls(t0, dt, &groups[0], 0.0)?;
    for g in &groups[1..] {
        traj = init_control_point(&traj, g)?;
    }
    let n = traj.len();
    fit_controls(&mut traj, samples, 0..n)?;
    Ok(traj)
}
