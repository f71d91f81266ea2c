//! SO(3)/SE(3) group operations.
//!
//! Rotations are stored as 3x3 matrices. The exponential and logarithm are
//! implemented once, generically over [`Real`], so the spline code can
//! differentiate through them with [`crate::jet::Jet`].

use std::ops::Mul;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::jet::Real;

/// Below this rotation angle (rad) the exponential and logarithm switch to
/// their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Rotations whose angle is within this distance of pi have no well defined
/// principal logarithm and are rejected by [`log_so3`].
pub const PI_TOLERANCE: f64 = 1e-6;

/// Tangent vector: radians for rotations, meters for translations.
pub type TangentVec3 = Vector3<f64>;

pub fn hat<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -v.z, v.y, v.z, z, -v.x, -v.y, v.x, z)
}

/// Axial vector of the skew-symmetric part of `m`.
pub fn vee<T: Real>(m: &Matrix3<T>) -> Vector3<T> {
    let half = T::from_f64(0.5);
    Vector3::new(
        (m[(2, 1)] - m[(1, 2)]) * half,
        (m[(0, 2)] - m[(2, 0)]) * half,
        (m[(1, 0)] - m[(0, 1)]) * half,
    )
}

/// Rodrigues exponential. Uses the second-order Taylor coefficients when
/// the angle is below [`SMALL_ANGLE`].
pub fn exp_generic<T: Real>(w: &Vector3<T>) -> Matrix3<T> {
    let theta2 = w.dot(w);
    let (a, b) = if theta2.value() < SMALL_ANGLE * SMALL_ANGLE {
        let t4 = theta2 * theta2;
        (
            T::one() - theta2 / T::from_f64(6.0) + t4 / T::from_f64(120.0),
            T::from_f64(0.5) - theta2 / T::from_f64(24.0) + t4 / T::from_f64(720.0),
        )
    } else {
        let theta = theta2.sqrt();
        let half_sin = (theta * T::from_f64(0.5)).sin();
        // (1 - cos t) / t^2 written as 2 sin^2(t/2) / t^2 to avoid cancellation.
        (
            theta.sin() / theta,
            T::from_f64(2.0) * half_sin * half_sin / theta2,
        )
    };
    let k = hat(w);
    Matrix3::identity() + k * a + (k * k) * b
}

/// Principal logarithm of a rotation matrix. Callers must keep the angle
/// away from pi; see [`log_so3`] for the checked version.
pub fn log_generic<T: Real>(r: &Matrix3<T>) -> Vector3<T> {
    let half = T::from_f64(0.5);
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let mut c = (trace - T::one()) * half;
    if c.value() > 1.0 {
        c = T::one();
    } else if c.value() < -1.0 {
        c = -T::one();
    }
    let w = vee(r);
    let s2 = w.dot(&w);

    if c.value() > -0.9 {
        if s2.value() < SMALL_ANGLE * SMALL_ANGLE {
            // asin(s)/s = 1 + s^2/6 + 3 s^4/40 + ...
            let factor =
                T::one() + s2 / T::from_f64(6.0) + s2 * s2 * T::from_f64(3.0 / 40.0);
            return w * factor;
        }
        let s = s2.sqrt();
        let theta = s.atan2(c);
        return w * (theta / s);
    }

    // Near pi the skew part carries little information; recover the axis
    // from the symmetric part (R + R^T)/2 - c I = (1 - c) a a^T.
    let theta = s2.sqrt().atan2(c);
    let sym = (r + r.transpose()) * half - Matrix3::identity() * c;
    let mut k = 0;
    for i in 1..3 {
        if sym[(i, i)].value() > sym[(k, k)].value() {
            k = i;
        }
    }
    let norm = (sym[(k, k)] * (T::one() - c)).sqrt();
    let mut axis = sym.column(k).into_owned() / norm;
    if axis.dot(&w).value() < 0.0 {
        axis = -axis;
    }
    axis * theta
}

fn check_finite3(v: &Vector3<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what}: {v:?}")))
    }
}

/// Element of SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    m: Matrix3<f64>,
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    /// Wraps a matrix without validation. The caller guarantees it is a
    /// rotation.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self { m }
    }

    /// Accepts `m` if it is orthonormal with determinant +1 within `1e-6`,
    /// and returns the nearest exact rotation.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("rotation matrix {m:?}")));
        }
        let err = (m.transpose() * m - Matrix3::identity()).amax();
        if err > 1e-6 || m.determinant() < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "matrix is not a rotation (orthonormality error {err:e}, det {})",
                m.determinant()
            )));
        }
        Ok(Self { m }.renormalized())
    }

    /// Unit quaternion in x, y, z, w order. The input is normalized.
    pub fn from_quaternion_xyzw(q: [f64; 4]) -> Result<Self> {
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::InvalidArgument(format!("bad quaternion {q:?}")));
        }
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]));
        Ok(Self {
            m: uq.to_rotation_matrix().into_inner(),
        })
    }

    /// Unit quaternion in x, y, z, w order with the sign chosen so that
    /// w >= 0 (first non-zero component positive when w == 0).
    pub fn to_quaternion_xyzw(&self) -> [f64; 4] {
        let uq = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(
            self.m,
        ));
        let q = uq.into_inner();
        let mut out = [q.i, q.j, q.k, q.w];
        let lead = [out[3], out[0], out[1], out[2]]
            .into_iter()
            .find(|v| *v != 0.0)
            .unwrap_or(1.0);
        if lead < 0.0 {
            for v in &mut out {
                *v = -*v;
            }
        }
        for v in &mut out {
            if *v == 0.0 {
                *v = 0.0; // drop negative zero
            }
        }
        out
    }

    pub fn exp(omega: &TangentVec3) -> Result<Self> {
        check_finite3(omega, "rotation vector")?;
        Ok(Self {
            m: exp_generic(omega),
        })
    }

    /// Principal logarithm; rejects angles within [`PI_TOLERANCE`] of pi.
    pub fn log(&self) -> Result<TangentVec3> {
        let angle = self.angle();
        if std::f64::consts::PI - angle < PI_TOLERANCE {
            return Err(Error::DegenerateRotation {
                angle,
                tolerance: PI_TOLERANCE,
            });
        }
        Ok(log_generic(&self.m))
    }

    /// Rotation angle in [0, pi].
    pub fn angle(&self) -> f64 {
        let w = vee(&self.m);
        let c = 0.5 * (self.m.trace() - 1.0);
        w.norm().atan2(c)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn inverse(&self) -> Self {
        Self {
            m: self.m.transpose(),
        }
    }

    /// Projects back onto SO(3) through the quaternion representation.
    pub fn renormalized(&self) -> Self {
        // from_rotation_matrix assumes orthonormal input and does not
        // normalize the quaternion it returns
        let q = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(self.m)).into_inner();
        let uq = UnitQuaternion::new_normalize(q);
        Self {
            m: uq.to_rotation_matrix().into_inner(),
        }
    }

    /// Maximum absolute entry of R^T R - I.
    pub fn orthonormality_error(&self) -> f64 {
        (self.m.transpose() * self.m - Matrix3::identity()).amax()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation { m: self.m * rhs.m }
    }
}

impl Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.m * rhs
    }
}

pub fn exp_so3(omega: &TangentVec3) -> Result<Rotation> {
    Rotation::exp(omega)
}

pub fn log_so3(r: &Rotation) -> Result<TangentVec3> {
    r.log()
}

/// Rigid camera-to-world transform.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation::identity(),
            translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.inverse();
        Self {
            rotation: r,
            translation: -(r * self.translation),
        }
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * *p + self.translation
    }

    /// Right-multiplicative rotation increment and additive translation
    /// increment: `R <- R exp(delta[0..3])`, `t <- t + delta[3..6]`.
    pub fn retract(&self, delta: &[f64; 6]) -> Pose {
        let dr = Vector3::new(delta[0], delta[1], delta[2]);
        Pose {
            rotation: Rotation::from_matrix_unchecked(self.rotation.matrix() * exp_generic(&dr))
                .renormalized(),
            translation: self.translation + Vector3::new(delta[3], delta[4], delta[5]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.matrix().iter().all(|v| v.is_finite())
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

pub fn pose_compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn pose_inverse(a: &Pose) -> Pose {
    a.inverse()
}
