//! SO(3) / SE(3) primitives used by the flow path, the velocity targets and the
//! simulator kinematics.
//!
//! Rotations are stored as unit quaternions `(w, x, y, z)` and renormalized
//! after every composition. Tangent vectors are axis-angle 3-vectors. All math
//! is `f64`.

use std::fmt;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Below this angle `exp`/`log` switch to their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// An element of SO(3).
#[derive(Clone, Copy)]
pub struct Rotation {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Rotation(w: {:.6}, x: {:.6}, y: {:.6}, z: {:.6})",
            self.w, self.x, self.y, self.z
        )
    }
}

/// Equality of the represented rotation: `q` and `-q` compare equal.
impl PartialEq for Rotation {
    fn eq(&self, other: &Self) -> bool {
        self.quaternion() == other.quaternion()
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub const fn identity() -> Self {
        Rotation {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Builds a rotation from raw quaternion coefficients, normalizing them.
    /// Coefficients already of unit norm (within 1e-12) are kept bit for bit.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::invalid(format!(
                "quaternion ({w}, {x}, {y}, {z}) cannot be normalized"
            )));
        }
        if (n - 1.0).abs() < 1e-12 {
            return Ok(Rotation { w, x, y, z });
        }
        Ok(Rotation {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    /// Quaternion coefficients `[w, x, y, z]` with `w >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        if self.w < 0.0 {
            [-self.w, -self.x, -self.y, -self.z]
        } else {
            [self.w, self.x, self.y, self.z]
        }
    }

    /// Exponential map. Non-finite input yields NaNs; use [`exp_so3`] for the
    /// checked variant.
    pub fn exp(w: &Vec3) -> Self {
        let theta2 = w.norm_squared();
        let theta = theta2.sqrt();
        let (c, s) = if theta < SMALL_ANGLE {
            // cos(θ/2) and sin(θ/2)/θ to second order
            (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
        } else {
            let half = 0.5 * theta;
            (half.cos(), half.sin() / theta)
        };
        let mut r = Rotation {
            w: c,
            x: s * w.x,
            y: s * w.y,
            z: s * w.z,
        };
        r.renormalize();
        r
    }

    /// Principal logarithm, `|result| <= π`.
    pub fn log(&self) -> Vec3 {
        let [w, x, y, z] = self.quaternion();
        let v = Vec3::new(x, y, z);
        let s2 = v.norm_squared();
        let s = s2.sqrt();
        if s < SMALL_ANGLE {
            // 2 atan(s/w)/s ≈ (2/w)(1 - s²/(3w²))
            v * (2.0 / w) * (1.0 - s2 / (3.0 * w * w))
        } else {
            // atan2 keeps the angle well conditioned all the way to θ = π,
            // where w → 0 and the axis is read directly off the vector part.
            let theta = 2.0 * s.atan2(w);
            v * (theta / s)
        }
    }

    pub fn angle(&self) -> f64 {
        self.log().norm()
    }

    pub fn about_x(angle: f64) -> Self {
        Self::exp(&Vec3::new(angle, 0.0, 0.0))
    }

    pub fn about_y(angle: f64) -> Self {
        Self::exp(&Vec3::new(0.0, angle, 0.0))
    }

    pub fn about_z(angle: f64) -> Self {
        Self::exp(&Vec3::new(0.0, 0.0, angle))
    }

    pub fn inverse(&self) -> Self {
        Rotation {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product `self · other`, renormalized.
    pub fn compose(&self, other: &Rotation) -> Self {
        let (a, b) = (self, other);
        let mut r = Rotation {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        };
        r.renormalize();
        r
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        // v' = v + 2w(q×v) + 2 q×(q×v)
        let q = Vec3::new(self.x, self.y, self.z);
        let t = 2.0 * q.cross(v);
        v + self.w * t + q.cross(&t)
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// First two columns of the rotation matrix, column-major.
    pub fn six_d(&self) -> [f64; 6] {
        let m = self.to_matrix();
        [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    fn renormalize(&mut self) {
        let n = (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        self.w /= n;
        self.x /= n;
        self.y /= n;
        self.z /= n;
    }
}

/// Rigid transform: rotation followed by translation. Serializes as
/// [`Pose::to_array`].
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(into = "[f64; 7]", try_from = "[f64; 7]")]
pub struct Pose {
    pub translation: Vec3,
    pub rotation: Rotation,
}

impl Pose {
    pub fn identity() -> Self {
        Pose::default()
    }

    pub fn new(translation: Vec3, rotation: Rotation) -> Self {
        Pose {
            translation,
            rotation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Pose::new(translation, Rotation::identity())
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        compose(self, other)
    }

    pub fn inverse(&self) -> Pose {
        inverse(self)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.translation + self.rotation.rotate(p)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.to_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `[px, py, pz, qw, qx, qy, qz]` with `qw >= 0`.
    pub fn to_array(&self) -> [f64; 7] {
        let [w, x, y, z] = self.rotation.quaternion();
        let p = &self.translation;
        [p.x, p.y, p.z, w, x, y, z]
    }

    pub fn from_array(a: &[f64; 7]) -> Result<Pose> {
        if a[..3].iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite translation"));
        }
        Ok(Pose::new(
            Vec3::new(a[0], a[1], a[2]),
            Rotation::from_quaternion(a[3], a[4], a[5], a[6])?,
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite()) && self.rotation.is_finite()
    }
}

impl From<Pose> for [f64; 7] {
    fn from(p: Pose) -> Self {
        p.to_array()
    }
}

impl TryFrom<[f64; 7]> for Pose {
    type Error = Error;
    fn try_from(a: [f64; 7]) -> Result<Pose> {
        Pose::from_array(&a)
    }
}

/// Tangent-space velocity; rotation part expressed at the current rotation
/// (right-trivialized).
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl Twist {
    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Twist { linear, angular }
    }

    pub fn zero() -> Self {
        Twist::default()
    }

    pub fn to_array(&self) -> [f64; 6] {
        let (l, a) = (&self.linear, &self.angular);
        [l.x, l.y, l.z, a.x, a.y, a.z]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Twist::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|v| v.is_finite())
    }
}

/// Right Jacobian of the exponential map: `exp(w + δ) ≈ exp(w) · exp(J_r(w) δ)`.
pub fn right_jacobian(w: &Vec3) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0);
    let (a, b) = if theta2 < 1e-10 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() - k * a + k * k * b
}

/// Checked exponential map.
pub fn exp_so3(w: &Vec3) -> Result<Rotation> {
    if !w.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid(format!("exp_so3 of non-finite vector {w:?}")));
    }
    Ok(Rotation::exp(w))
}

pub fn log_so3(r: &Rotation) -> Vec3 {
    r.log()
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        translation: a.translation + a.rotation.rotate(&b.translation),
        rotation: a.rotation.compose(&b.rotation),
    }
}

pub fn inverse(p: &Pose) -> Pose {
    let r_inv = p.rotation.inverse();
    Pose {
        translation: -r_inv.rotate(&p.translation),
        rotation: r_inv,
    }
}

/// `r0 · exp(t · log(r0⁻¹ r1))`.
pub fn geodesic_interp(r0: &Rotation, r1: &Rotation, t: f64) -> Result<Rotation> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("interpolation time {t} outside [0, 1]")));
    }
    let delta = r0.inverse().compose(r1).log();
    Ok(r0.compose(&Rotation::exp(&(delta * t))))
}
