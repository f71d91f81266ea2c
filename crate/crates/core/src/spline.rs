//! Uniform cubic B-spline trajectories in cumulative form.
//!
//! Control point `k` sits at time `t0 + k * dt`. A query at time `t` with
//! `s = (t - t0) / dt`, `i = floor(s)` and `u = s - i` blends the four
//! controls `i-1 ..= i+2`, so the valid domain is
//! `[t0 + dt, t0 + (count - 2) * dt)`.
//!
//! Translation is interpolated as `t_a + sum_j B_j(u) (t_{a+j} - t_{a+j-1})`
//! and rotation as `R_a * prod_j Exp(B_j(u) d_j)` with
//! `d_j = Log(R_{a+j-1}^T R_{a+j})`, where `a = i - 1`. Angular velocity
//! and acceleration are body-frame quantities computed with the usual
//! three-step recursion over the factors `A_j = Exp(B_j d_j)`.

use nalgebra::{Matrix3, SMatrix, Vector3};

use crate::error::{Error, Result};
use crate::jet::{Jet, Real};
use crate::se3::{exp_generic, log_generic, vee, Pose, Rotation, PI_TOLERANCE};

/// Cumulative basis matrix, rows indexed by basis element, columns by the
/// power of `u`.
pub const BASIS: [[f64; 4]; 4] = [
    [1.0, 0.0, 0.0, 0.0],
    [5.0 / 6.0, 3.0 / 6.0, -3.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 3.0 / 6.0, 3.0 / 6.0, -2.0 / 6.0],
    [0.0, 0.0, 0.0, 1.0 / 6.0],
];

/// Adjacent control rotations must differ by less than this angle.
pub const MAX_ADJACENT_ANGLE: f64 = std::f64::consts::PI - 1e-3;

fn basis_unchecked(u: f64, order: u8, dt: f64) -> [f64; 4] {
    let (powers, scale) = match order {
        0 => ([1.0, u, u * u, u * u * u], 1.0),
        1 => ([0.0, 1.0, 2.0 * u, 3.0 * u * u], 1.0 / dt),
        _ => ([0.0, 0.0, 2.0, 6.0 * u], 1.0 / (dt * dt)),
    };
    let mut out = [0.0; 4];
    for (row, o) in BASIS.iter().zip(out.iter_mut()) {
        *o = scale * row.iter().zip(powers.iter()).map(|(c, p)| c * p).sum::<f64>();
    }
    out
}

/// `B(u)`, `dB/dt` or `d2B/dt2` for the cumulative cubic basis.
///
/// `u = 1` is accepted so that continuity across knots can be probed.
pub fn cumulative_basis(u: f64, derivative_order: u8, dt: f64) -> Result<[f64; 4]> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::InvalidArgument(format!("u = {u} outside [0, 1]")));
    }
    if derivative_order > 2 {
        return Err(Error::InvalidArgument(format!(
            "derivative order {derivative_order} not in {{0, 1, 2}}"
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt = {dt} must be positive")));
    }
    Ok(basis_unchecked(u, derivative_order, dt))
}

/// Uniform knot spacing of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KnotGrid {
    pub t0: f64,
    pub dt: f64,
    pub count: usize,
}

impl KnotGrid {
    pub fn new(t0: f64, dt: f64, count: usize) -> Result<Self> {
        if !t0.is_finite() {
            return Err(Error::NonFinite(format!("t0 = {t0}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt = {dt} must be positive")));
        }
        Ok(Self { t0, dt, count })
    }

    pub fn knot_time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Half-open valid evaluation interval.
    pub fn domain(&self) -> (f64, f64) {
        (self.t0 + self.dt, self.t0 + (self.count as f64 - 2.0) * self.dt)
    }

    pub fn contains(&self, t: f64) -> bool {
        self.segment_index(t).is_ok()
    }

    /// Time in knot units from `t0`. Times within rounding of a knot
    /// (such as `t0 + k * dt` or `k / fps`) land exactly on it.
    pub fn position(&self, t: f64) -> f64 {
        let s = (t - self.t0) / self.dt;
        let r = s.round();
        if (s - r).abs() <= 1e-12 * r.abs().max(1.0) {
            r
        } else {
            s
        }
    }

    /// Segment index `i` and fraction `u` of time `t`.
    pub fn segment_index(&self, t: f64) -> Result<(usize, f64)> {
        let (start, end) = self.domain();
        let err = || Error::OutOfDomain { t, start, end };
        if !t.is_finite() || self.count < 4 {
            return Err(err());
        }
        let s = self.position(t);
        let i = s.floor();
        if i < 1.0 || i > self.count as f64 - 3.0 {
            return Err(err());
        }
        Ok((i as usize, s - i))
    }
}

pub fn segment_index(grid: &KnotGrid, t: f64) -> Result<(usize, f64)> {
    grid.segment_index(t)
}

/// Linear and angular derivatives at one instant.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Kinematics {
    /// m/s, world frame
    pub velocity: Vector3<f64>,
    /// m/s^2, world frame
    pub acceleration: Vector3<f64>,
    /// rad/s, body frame
    pub angular_velocity: Vector3<f64>,
    /// rad/s^2, body frame
    pub angular_acceleration: Vector3<f64>,
}

pub(crate) struct RotationEval<T: Real> {
    pub rotation: Matrix3<T>,
    pub omega: Vector3<T>,
    pub omega_dot: Vector3<T>,
}

pub(crate) fn eval_rotation<T: Real>(
    rs: &[Matrix3<T>; 4],
    b: &[f64; 4],
    bd: &[f64; 4],
    bdd: &[f64; 4],
) -> RotationEval<T> {
    let mut rotation = rs[0];
    let mut omega = Vector3::<T>::zeros();
    let mut omega_dot = Vector3::<T>::zeros();
    for j in 1..4 {
        let d = log_generic(&(rs[j - 1].transpose() * rs[j]));
        let a = exp_generic(&(d * T::from_f64(b[j])));
        rotation *= a;
        let at = a.transpose();
        omega = at * omega + d * T::from_f64(bd[j]);
        omega_dot = omega.cross(&d) * T::from_f64(bd[j]) + at * omega_dot + d * T::from_f64(bdd[j]);
    }
    RotationEval {
        rotation,
        omega,
        omega_dot,
    }
}

/// Weights `c_k` such that the blended vector is `sum_k c_k p_{a+k}`.
fn control_weights(b: &[f64; 4], order: u8) -> [f64; 4] {
    let b0 = if order == 0 { 1.0 } else { 0.0 };
    [b0 - b[1], b[1] - b[2], b[2] - b[3], b[3]]
}

/// Derivative of the spline pose at one time with respect to the right
/// tangent perturbations of its four supporting controls.
#[derive(Clone, Debug)]
pub struct PoseJacobian {
    pub pose: Pose,
    /// Index of the first supporting control.
    pub first: usize,
    /// Rows: pose tangent (rotation, translation). Columns: 6 per control,
    /// rotation then translation.
    pub jacobian: SMatrix<f64, 6, 24>,
}

/// Linear and angular acceleration with their control-point derivatives.
#[derive(Clone, Debug)]
pub struct AccelerationJacobian {
    pub first: usize,
    pub acceleration: Vector3<f64>,
    /// `a = sum_k weights[k] * t_{first+k}`
    pub translation_weights: [f64; 4],
    pub angular_acceleration: Vector3<f64>,
    /// Derivative of the angular acceleration with respect to the rotation
    /// tangents of the four supporting controls.
    pub angular_jacobian: SMatrix<f64, 3, 12>,
}

/// Uniform cubic B-spline on SE(3).
#[derive(Clone, Debug, PartialEq)]
pub struct ControlTrajectory {
    grid: KnotGrid,
    controls: Vec<Pose>,
}

fn check_adjacent(a: &Pose, b: &Pose, index: usize) -> Result<()> {
    let angle = (a.rotation.inverse() * b.rotation).angle();
    if angle >= MAX_ADJACENT_ANGLE {
        return Err(Error::InvalidArgument(format!(
            "controls {} and {} differ by {angle} rad, limit {MAX_ADJACENT_ANGLE}",
            index,
            index + 1
        )));
    }
    Ok(())
}

impl ControlTrajectory {
    pub fn new(t0: f64, dt: f64, controls: Vec<Pose>) -> Result<Self> {
        let grid = KnotGrid::new(t0, dt, controls.len())?;
        if controls.len() < 4 {
            return Err(Error::InvalidArgument(format!(
                "a cubic spline needs at least 4 controls, got {}",
                controls.len()
            )));
        }
        for (k, p) in controls.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFinite(format!("control {k}")));
            }
        }
        for (k, w) in controls.windows(2).enumerate() {
            check_adjacent(&w[0], &w[1], k)?;
        }
        Ok(Self { grid, controls })
    }

    pub fn grid(&self) -> &KnotGrid {
        &self.grid
    }

    pub fn controls(&self) -> &[Pose] {
        &self.controls
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn domain(&self) -> (f64, f64) {
        self.grid.domain()
    }

    /// Replaces control `k`, keeping the adjacent-angle invariant.
    pub fn set_control(&mut self, k: usize, pose: Pose) -> Result<()> {
        if k >= self.controls.len() {
            return Err(Error::InvalidArgument(format!("control index {k} out of range")));
        }
        if !pose.is_finite() {
            return Err(Error::NonFinite(format!("control {k}")));
        }
        if k > 0 {
            check_adjacent(&self.controls[k - 1], &pose, k - 1)?;
        }
        if k + 1 < self.controls.len() {
            check_adjacent(&pose, &self.controls[k + 1], k)?;
        }
        self.controls[k] = pose;
        Ok(())
    }

    /// Appends a control at the end, extending the domain by one knot.
    pub fn push_control(&mut self, pose: Pose) -> Result<()> {
        if !pose.is_finite() {
            return Err(Error::NonFinite("appended control".into()));
        }
        let last = self.controls.len() - 1;
        check_adjacent(&self.controls[last], &pose, last)?;
        self.controls.push(pose);
        self.grid.count += 1;
        Ok(())
    }

    pub fn append_control_point(&self, pose: Pose) -> Result<ControlTrajectory> {
        let mut out = self.clone();
        out.push_control(pose)?;
        Ok(out)
    }

    /// First supporting control index and the segment fraction.
    pub fn support(&self, t: f64) -> Result<(usize, f64)> {
        let (i, u) = self.grid.segment_index(t)?;
        Ok((i - 1, u))
    }

    fn rotations(&self, first: usize) -> [Matrix3<f64>; 4] {
        std::array::from_fn(|k| *self.controls[first + k].rotation.matrix())
    }

    fn check_window(&self, first: usize) -> Result<()> {
        for k in first..first + 3 {
            let rel = self.controls[k].rotation.inverse() * self.controls[k + 1].rotation;
            let angle = rel.angle();
            if angle >= MAX_ADJACENT_ANGLE {
                return Err(Error::DegenerateRotation {
                    angle,
                    tolerance: PI_TOLERANCE.max(std::f64::consts::PI - MAX_ADJACENT_ANGLE),
                });
            }
        }
        Ok(())
    }

    fn blend(&self, first: usize, w: &[f64; 4]) -> Vector3<f64> {
        (0..4).fold(Vector3::zeros(), |acc, k| acc + self.controls[first + k].translation * w[k])
    }

    pub fn eval_pose(&self, t: f64) -> Result<Pose> {
        let (first, u) = self.support(t)?;
        self.check_window(first)?;
        let b = basis_unchecked(u, 0, self.grid.dt);
        let zero = [0.0; 4];
        let rot = eval_rotation(&self.rotations(first), &b, &zero, &zero);
        Ok(Pose {
            rotation: Rotation::from_matrix_unchecked(rot.rotation),
            translation: self.blend(first, &control_weights(&b, 0)),
        })
    }

    /// World-frame velocity and acceleration of the translation.
    pub fn eval_linear_kinematics(&self, t: f64) -> Result<(Vector3<f64>, Vector3<f64>)> {
        let (first, u) = self.support(t)?;
        let dt = self.grid.dt;
        let bd = basis_unchecked(u, 1, dt);
        let bdd = basis_unchecked(u, 2, dt);
        Ok((
            self.blend(first, &control_weights(&bd, 1)),
            self.blend(first, &control_weights(&bdd, 2)),
        ))
    }

    /// Body-frame angular velocity and angular acceleration.
    pub fn eval_angular_rates(&self, t: f64) -> Result<(Vector3<f64>, Vector3<f64>)> {
        let (first, u) = self.support(t)?;
        self.check_window(first)?;
        let dt = self.grid.dt;
        let rot = eval_rotation(
            &self.rotations(first),
            &basis_unchecked(u, 0, dt),
            &basis_unchecked(u, 1, dt),
            &basis_unchecked(u, 2, dt),
        );
        Ok((rot.omega, rot.omega_dot))
    }

    pub fn kinematics(&self, t: f64) -> Result<Kinematics> {
        let (velocity, acceleration) = self.eval_linear_kinematics(t)?;
        let (angular_velocity, angular_acceleration) = self.eval_angular_rates(t)?;
        Ok(Kinematics {
            velocity,
            acceleration,
            angular_velocity,
            angular_acceleration,
        })
    }

    fn seeded_rotations(&self, first: usize) -> [Matrix3<Jet<12>>; 4] {
        std::array::from_fn(|k| {
            let r = self.controls[first + k].rotation.matrix().map(Jet::<12>::constant);
            let eps = Vector3::from_fn(|a, _| Jet::<12>::variable(0.0, 3 * k + a));
            r * exp_generic(&eps)
        })
    }

    pub fn pose_jacobian(&self, t: f64) -> Result<PoseJacobian> {
        let (first, u) = self.support(t)?;
        self.check_window(first)?;
        let b = basis_unchecked(u, 0, self.grid.dt);
        let zero = [0.0; 4];
        let rot = eval_rotation(&self.seeded_rotations(first), &b, &zero, &zero);
        let value = rot.rotation.map(|v| v.re);
        let mut jacobian = SMatrix::<f64, 6, 24>::zeros();
        for k in 0..4 {
            for a in 0..3 {
                let deriv = rot.rotation.map(|v| v.eps[3 * k + a]);
                let xi = vee(&(value.transpose() * deriv));
                jacobian.fixed_view_mut::<3, 1>(0, 6 * k + a).copy_from(&xi);
            }
        }
        let w = control_weights(&b, 0);
        for (k, wk) in w.iter().enumerate() {
            for a in 0..3 {
                jacobian[(3 + a, 6 * k + 3 + a)] = *wk;
            }
        }
        Ok(PoseJacobian {
            pose: Pose {
                rotation: Rotation::from_matrix_unchecked(value),
                translation: self.blend(first, &w),
            },
            first,
            jacobian,
        })
    }

    pub fn acceleration_jacobian(&self, t: f64) -> Result<AccelerationJacobian> {
        let (first, u) = self.support(t)?;
        self.check_window(first)?;
        let dt = self.grid.dt;
        let b = basis_unchecked(u, 0, dt);
        let bd = basis_unchecked(u, 1, dt);
        let bdd = basis_unchecked(u, 2, dt);
        let rot = eval_rotation(&self.seeded_rotations(first), &b, &bd, &bdd);
        let mut angular_jacobian = SMatrix::<f64, 3, 12>::zeros();
        for r in 0..3 {
            for c in 0..12 {
                angular_jacobian[(r, c)] = rot.omega_dot[r].eps[c];
            }
        }
        let translation_weights = control_weights(&bdd, 2);
        Ok(AccelerationJacobian {
            first,
            acceleration: self.blend(first, &translation_weights),
            translation_weights,
            angular_acceleration: rot.omega_dot.map(|v| v.re),
            angular_jacobian,
        })
    }
}
