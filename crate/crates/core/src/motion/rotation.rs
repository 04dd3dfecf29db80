//! Rotation representations: the continuous 6D encoding, rotation matrices
//! and intrinsic x-y-z Euler angles.
//!
//! The 6D encoding stores two 3-vectors `a1`, `a2`. Gram-Schmidt maps them to
//! an orthonormal frame whose columns are `b1 = a1/‖a1‖`,
//! `b2 = normalize(a2 − (b1·a2) b1)` and `b3 = b1 × b2`. The inverse keeps the
//! first two columns of the matrix.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Norm below which a 6D input is considered degenerate.
pub const DEGENERATE_EPS: f64 = 1e-8;

/// Tolerance of the rotation-matrix invariants (orthonormal, det = 1).
pub const ROTATION_TOL: f64 = 1e-5;

/// Threshold on `|m[0][2]|` above which the x-y-z decomposition is treated as
/// gimbal-locked.
pub const GIMBAL_EPS: f64 = 1e-6;

/// Two raw 3-vectors; need not be orthonormal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D {
    pub a1: [f64; 3],
    pub a2: [f64; 3],
}

impl Rot6D {
    pub const IDENTITY: Rot6D = Rot6D {
        a1: [1.0, 0.0, 0.0],
        a2: [0.0, 1.0, 0.0],
    };

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            a1: [v[0], v[1], v[2]],
            a2: [v[3], v[4], v[5]],
        }
    }

    pub fn to_array(self) -> [f64; 6] {
        [
            self.a1[0], self.a1[1], self.a1[2], self.a2[0], self.a2[1], self.a2[2],
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.a1.iter().chain(&self.a2).all(|v| v.is_finite())
    }
}

/// A proper rotation matrix. Construct through [`matrix_from_rot6d`],
/// [`RotationMatrix::try_new`] or the axis-angle/Euler helpers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthonormality and unit determinant within [`ROTATION_TOL`].
    pub fn try_new(m: Matrix3<f64>) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if ortho > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL || !m.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateInput(format!(
                "not a rotation: |MᵀM − I|max = {ortho:e}, det = {det}"
            )));
        }
        Ok(Self(m))
    }

    pub fn from_axis_angle(axis: [f64; 3], angle_rad: f64) -> Self {
        let axis = Vector3::from(axis);
        if axis.norm() == 0.0 {
            return Self::identity();
        }
        let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle_rad);
        Self(*r.matrix())
    }

    /// Composes `Rx(a)·Ry(b)·Rz(c)` from angles in degrees.
    pub fn from_euler_xyz_deg(angles: [f64; 3]) -> Self {
        let [a, b, c] = angles.map(f64::to_radians);
        let rx = Self::from_axis_angle([1.0, 0.0, 0.0], a).0;
        let ry = Self::from_axis_angle([0.0, 1.0, 0.0], b).0;
        let rz = Self::from_axis_angle([0.0, 0.0, 1.0], c).0;
        Self(rx * ry * rz)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.0[(r, c)]
    }

    pub fn mul(&self, other: &RotationMatrix) -> RotationMatrix {
        Self(self.0 * other.0)
    }

    pub fn transpose(&self) -> RotationMatrix {
        Self(self.0.transpose())
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.0))
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Self(*q.to_rotation_matrix().matrix())
    }
}

/// Gram-Schmidt map from the 6D encoding to a rotation matrix.
pub fn matrix_from_rot6d(r: Rot6D) -> Result<RotationMatrix> {
    if !r.is_finite() {
        return Err(Error::DegenerateInput("non-finite 6D component".into()));
    }
    let a1 = Vector3::from(r.a1);
    let a2 = Vector3::from(r.a2);
    let n1 = a1.norm();
    if n1 <= DEGENERATE_EPS {
        return Err(Error::DegenerateInput(format!("‖a1‖ = {n1:e}")));
    }
    let b1 = a1 / n1;
    let resid = a2 - b1 * b1.dot(&a2);
    let n2 = resid.norm();
    if n2 <= DEGENERATE_EPS {
        return Err(Error::DegenerateInput(format!(
            "a2 residual after projection on a1 has norm {n2:e}"
        )));
    }
    let b2 = resid / n2;
    let b3 = b1.cross(&b2);
    Ok(RotationMatrix(Matrix3::from_columns(&[b1, b2, b3])))
}

/// First two columns of `m`.
pub fn rot6d_from_matrix(m: &RotationMatrix) -> Rot6D {
    let c0 = m.0.column(0);
    let c1 = m.0.column(1);
    Rot6D {
        a1: [c0[0], c0[1], c0[2]],
        a2: [c1[0], c1[1], c1[2]],
    }
}

/// Intrinsic x-y-z Euler angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerXyz {
    pub degrees: [f64; 3],
    /// Set when the middle angle sits at ±90°; the third angle is then fixed to 0.
    pub gimbal_lock: bool,
}

/// Decomposes `m = Rx(a)·Ry(b)·Rz(c)`.
pub fn euler_xyz_from_matrix(m: &RotationMatrix) -> EulerXyz {
    let m = &m.0;
    let s = m[(0, 2)].clamp(-1.0, 1.0);
    if s.abs() > 1.0 - GIMBAL_EPS {
        // Only a ± c is observable; put it all into a.
        let b = s.signum() * std::f64::consts::FRAC_PI_2;
        let a = m[(2, 1)].atan2(m[(1, 1)]);
        return EulerXyz {
            degrees: [a.to_degrees(), b.to_degrees(), 0.0],
            gimbal_lock: true,
        };
    }
    let a = (-m[(1, 2)]).atan2(m[(2, 2)]);
    let b = s.asin();
    let c = (-m[(0, 1)]).atan2(m[(0, 0)]);
    EulerXyz {
        degrees: [a.to_degrees(), b.to_degrees(), c.to_degrees()],
        gimbal_lock: false,
    }
}

/// Geodesic distance on SO(3), in radians, computed with `atan2` so small
/// angles keep full precision.
pub fn geodesic_angle(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    let r = a.0.transpose() * b.0;
    let cos = (r.trace() - 1.0) / 2.0;
    let sx = r[(2, 1)] - r[(1, 2)];
    let sy = r[(0, 2)] - r[(2, 0)];
    let sz = r[(1, 0)] - r[(0, 1)];
    let sin = 0.5 * (sx * sx + sy * sy + sz * sz).sqrt();
    sin.atan2(cos)
}

/// Spherical interpolation between two rotations, `t ∈ [0, 1]`.
pub fn slerp(a: &RotationMatrix, b: &RotationMatrix, t: f64) -> RotationMatrix {
    let qa = a.to_quaternion();
    let qb = b.to_quaternion();
    // nalgebra's slerp panics on exactly antipodal inputs; fall back to the
    // shortest arc through try_slerp and keep `a` when undefined.
    match qa.try_slerp(&qb, t, 1e-12) {
        Some(q) => RotationMatrix::from_quaternion(&q),
        None if t < 0.5 => *a,
        None => *b,
    }
}

/// Nearest rotation (Frobenius sense) to an arbitrary 3×3 matrix, via SVD.
pub fn project_to_rotation(m: &Matrix3<f64>) -> Result<RotationMatrix> {
    let svd = m.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::DegenerateInput("SVD failed".into()));
    };
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Ok(RotationMatrix(u * d * v_t))
}
