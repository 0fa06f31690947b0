//! SE(3) and planar rigid-transform primitives.
//!
//! Everything downstream (factor residuals, the plant, the controller)
//! works in one unit system: millimeters for translations, radians for
//! rotations. Tangent vectors are ordered `[Rx, Ry, Rz, x, y, z]` —
//! rotation first, translation last — and every Jacobian, covariance and
//! residual in this crate follows that ordering.
//!
//! Rotations are stored as orthonormal matrices. Long composition chains
//! drift; `compose` re-orthonormalizes (Gram-Schmidt) every
//! [`RENORM_INTERVAL`] compositions, and `renormalized` is available on
//! demand.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Compositions between automatic Gram-Schmidt passes.
pub const RENORM_INTERVAL: u32 = 1000;

/// Angle (rad) below which series expansions replace closed forms.
const SMALL_ANGLE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    /// `log_map` has no chart at a half-turn.
    #[error("rotation angle {0} rad is at the log-map singularity (pi)")]
    LogSingularity(f64),
    #[error("component mask is empty")]
    EmptyMask,
    #[error("component mask repeats {0:?}")]
    DuplicateComponent(Component),
    #[error("frame axis is not unit length (|x| = {0})")]
    DegenerateFrame(f64),
}

/// One tangent-space component, in the fixed `[Rx, Ry, Rz, x, y, z]` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    Rx,
    Ry,
    Rz,
    X,
    Y,
    Z,
}

impl Component {
    /// Index of this component in a 6-vector tangent.
    pub fn index(self) -> usize {
        match self {
            Component::Rx => 0,
            Component::Ry => 1,
            Component::Rz => 2,
            Component::X => 3,
            Component::Y => 4,
            Component::Z => 5,
        }
    }
}

/// Skew-symmetric matrix such that `hat(w) * v = w × v`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues rotation from an axis-angle vector.
pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let wh = hat(w);
    let (a, b) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Matrix3::identity() + wh * a + wh * wh * b
}

/// Axis-angle vector of a rotation matrix. Errors within 1e-9 of a half-turn.
pub fn log_so3(r: &Matrix3<f64>) -> Result<Vector3<f64>, GeomError> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    if theta >= std::f64::consts::PI - 1e-9 {
        return Err(GeomError::LogSingularity(theta));
    }
    let anti = vee(&(r - r.transpose())) * 0.5;
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        return Ok(anti * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0));
    }
    if theta > std::f64::consts::PI - 1e-4 {
        // Near pi the antisymmetric part loses the axis; recover it from
        // the symmetric part n n^T = (R + R^T - (3cos - 1) I) / ... and
        // orient it with the antisymmetric remnant.
        let nnt = (r + r.transpose() - Matrix3::identity() * (2.0 * cos))
            / (2.0 * (1.0 - cos));
        let k = (0..3)
            .max_by(|&i, &j| nnt[(i, i)].partial_cmp(&nnt[(j, j)]).unwrap())
            .unwrap();
        let mut n = Vector3::new(nnt[(0, k)], nnt[(1, k)], nnt[(2, k)]);
        n /= nnt[(k, k)].max(1e-300).sqrt();
        if n.dot(&anti) < 0.0 {
            n = -n;
        }
        return Ok(n * theta);
    }
    Ok(anti * (theta / theta.sin()))
}

/// Left Jacobian of SO(3): `exp(w) = I + Jl(w) * hat(w)`-style integrator,
/// also the V matrix of the SE(3) exponential.
pub fn so3_left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let wh = hat(w);
    let (a, b) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        (
            (1.0 - theta.cos()) / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    };
    Matrix3::identity() + wh * a + wh * wh * b
}

fn so3_left_jacobian_inv(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let wh = hat(w);
    let c = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        1.0 / (theta * theta)
            - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - wh * 0.5 + wh * wh * c
}

/// A rigid transform in SE(3). Translation in mm.
#[derive(Debug, Clone, Copy)]
pub struct Pose3 {
    rot: Matrix3<f64>,
    trans: Vector3<f64>,
    /// Compositions since the last re-orthonormalization.
    age: u32,
}

impl PartialEq for Pose3 {
    fn eq(&self, other: &Self) -> bool {
        self.rot == other.rot && self.trans == other.trans
    }
}

impl Pose3 {
    pub fn identity() -> Self {
        Pose3 {
            rot: Matrix3::identity(),
            trans: Vector3::zeros(),
            age: 0,
        }
    }

    /// Builds a pose from a rotation matrix and translation. The matrix is
    /// Gram-Schmidt projected so downstream invariants hold even for
    /// slightly drifted inputs.
    pub fn from_parts(rot: Matrix3<f64>, trans: Vector3<f64>) -> Self {
        Pose3 {
            rot: gram_schmidt(&rot),
            trans,
            age: 0,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose3 {
            rot: Matrix3::identity(),
            trans: Vector3::new(x, y, z),
            age: 0,
        }
    }

    pub fn from_rotation_x(angle: f64) -> Self {
        Self::exp_map(&Twist6::new(Vector3::new(angle, 0.0, 0.0), Vector3::zeros()))
    }

    pub fn from_rotation_y(angle: f64) -> Self {
        Self::exp_map(&Twist6::new(Vector3::new(0.0, angle, 0.0), Vector3::zeros()))
    }

    pub fn from_rotation_z(angle: f64) -> Self {
        Self::exp_map(&Twist6::new(Vector3::new(0.0, 0.0, angle), Vector3::zeros()))
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rot
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.trans
    }

    /// Group product `self · other`.
    pub fn compose(&self, other: &Pose3) -> Pose3 {
        let mut out = Pose3 {
            rot: self.rot * other.rot,
            trans: self.rot * other.trans + self.trans,
            age: self.age.max(other.age) + 1,
        };
        if out.age >= RENORM_INTERVAL {
            out.rot = gram_schmidt(&out.rot);
            out.age = 0;
        }
        out
    }

    pub fn inverse(&self) -> Pose3 {
        let rt = self.rot.transpose();
        Pose3 {
            rot: rt,
            trans: -(rt * self.trans),
            age: self.age,
        }
    }

    /// Applies the transform to a point (mm).
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot * p + self.trans
    }

    /// Rotates a direction without translating it.
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rot * v
    }

    /// SE(3) exponential of a tangent `[w; v]`.
    pub fn exp_map(xi: &Twist6) -> Pose3 {
        Pose3 {
            rot: exp_so3(&xi.angular),
            trans: so3_left_jacobian(&xi.angular) * xi.linear,
            age: 0,
        }
    }

    /// SE(3) logarithm. Errors when the rotation angle reaches pi.
    pub fn log_map(&self) -> Result<Twist6, GeomError> {
        let w = log_so3(&self.rot)?;
        let v = so3_left_jacobian_inv(&w) * self.trans;
        Ok(Twist6::new(w, v))
    }

    /// Adjoint matrix mapping body-frame tangents to parent-frame tangents,
    /// in the `[w; v]` ordering.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rot);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.rot);
        ad.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(hat(&self.trans) * self.rot));
        ad
    }

    /// Right-perturbed update `self · exp(delta)` used by the solvers.
    pub fn retract(&self, delta: &Vector6<f64>) -> Pose3 {
        self.compose(&Pose3::exp_map(&Twist6::from_vector(delta)))
    }

    /// Gram-Schmidt pass, exposed for on-demand drift control.
    pub fn renormalized(&self) -> Pose3 {
        Pose3 {
            rot: gram_schmidt(&self.rot),
            trans: self.trans,
            age: 0,
        }
    }

    /// Max deviation from orthonormality and unit determinant.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rot.transpose() * self.rot - Matrix3::identity()).abs().max();
        e.max((self.rot.determinant() - 1.0).abs())
    }
}

fn gram_schmidt(m: &Matrix3<f64>) -> Matrix3<f64> {
    let mut a = m.column(0).into_owned();
    a /= a.norm();
    let mut b = m.column(1).into_owned();
    b -= a * a.dot(&b);
    b /= b.norm();
    let c = a.cross(&b);
    Matrix3::from_columns(&[a, b, c])
}

impl std::ops::Mul for &Pose3 {
    type Output = Pose3;
    fn mul(self, rhs: &Pose3) -> Pose3 {
        self.compose(rhs)
    }
}

impl Serialize for Pose3 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        // Row-major rotation, per the graph JSON schema.
        let mut rot = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                rot[r * 3 + c] = self.rot[(r, c)];
            }
        }
        let repr = Pose3Repr {
            rotation: rot,
            translation: [self.trans.x, self.trans.y, self.trans.z],
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose3 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = Pose3Repr::deserialize(d)?;
        let rot = Matrix3::new(
            repr.rotation[0],
            repr.rotation[1],
            repr.rotation[2],
            repr.rotation[3],
            repr.rotation[4],
            repr.rotation[5],
            repr.rotation[6],
            repr.rotation[7],
            repr.rotation[8],
        );
        let pose = Pose3::from_parts(
            rot,
            Vector3::new(repr.translation[0], repr.translation[1], repr.translation[2]),
        );
        if pose.orthonormality_error() > 1e-6 {
            return Err(D::Error::custom("rotation block is not orthonormal"));
        }
        Ok(pose)
    }
}

#[derive(Serialize, Deserialize)]
struct Pose3Repr {
    rotation: [f64; 9],
    translation: [f64; 3],
}

/// Body twist or SE(3) tangent: angular part in rad (or rad/s), linear part
/// in mm (or mm/s), in the frame stated by the producer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Twist6 {
    pub angular: Vector3<f64>,
    pub linear: Vector3<f64>,
}

impl Twist6 {
    pub fn new(angular: Vector3<f64>, linear: Vector3<f64>) -> Self {
        Twist6 { angular, linear }
    }

    pub fn zero() -> Self {
        Twist6 {
            angular: Vector3::zeros(),
            linear: Vector3::zeros(),
        }
    }

    /// Packs into `[Rx, Ry, Rz, x, y, z]`.
    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.angular.x,
            self.angular.y,
            self.angular.z,
            self.linear.x,
            self.linear.y,
            self.linear.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Twist6 {
            angular: Vector3::new(v[0], v[1], v[2]),
            linear: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn scaled(&self, k: f64) -> Twist6 {
        Twist6 {
            angular: self.angular * k,
            linear: self.linear * k,
        }
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }
}

impl std::ops::Add for Twist6 {
    type Output = Twist6;
    fn add(self, rhs: Twist6) -> Twist6 {
        Twist6 {
            angular: self.angular + rhs.angular,
            linear: self.linear + rhs.linear,
        }
    }
}

/// Selects tangent components of `log_map(p)` in the order the mask lists
/// them. Factor residuals in this crate always pass masks in the canonical
/// `[Rx, Ry, Rz, x, y, z]` order.
pub fn component_select(p: &Pose3, mask: &[Component]) -> Result<Vec<f64>, GeomError> {
    if mask.is_empty() {
        return Err(GeomError::EmptyMask);
    }
    for (i, c) in mask.iter().enumerate() {
        if mask[..i].contains(c) {
            return Err(GeomError::DuplicateComponent(*c));
        }
    }
    let xi = p.log_map()?.as_vector();
    Ok(mask.iter().map(|c| xi[c.index()]).collect())
}

/// An estimated contact line: a full SE(3) frame whose x-axis runs along
/// the line and whose origin is a point on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactLineFrame {
    pub frame: Pose3,
}

impl ContactLineFrame {
    pub fn new(frame: Pose3) -> Self {
        ContactLineFrame { frame }
    }

    /// Frame with origin `p` and x-axis along `dir`; the z-axis is chosen
    /// as close to `up_hint` as possible.
    pub fn from_origin_direction(
        p: Vector3<f64>,
        dir: Vector3<f64>,
        up_hint: Vector3<f64>,
    ) -> Result<Self, GeomError> {
        let n = dir.norm();
        if !(n.is_finite() && n > 1e-12) {
            return Err(GeomError::DegenerateFrame(n));
        }
        let x = dir / n;
        let mut z = up_hint - x * x.dot(&up_hint);
        let zn = z.norm();
        if zn < 1e-9 {
            return Err(GeomError::DegenerateFrame(zn));
        }
        z /= zn;
        let y = z.cross(&x);
        Ok(ContactLineFrame {
            frame: Pose3::from_parts(Matrix3::from_columns(&[x, y, z]), p),
        })
    }

    /// Unit direction of the line.
    pub fn axis(&self) -> Vector3<f64> {
        self.frame.rotation().column(0).into_owned()
    }

    pub fn origin(&self) -> Vector3<f64> {
        *self.frame.translation()
    }

    pub fn point_at(&self, s: f64) -> Vector3<f64> {
        self.origin() + self.axis() * s
    }

    /// Perpendicular distance from a point to the line (mm).
    pub fn distance_to(&self, p: &Vector3<f64>) -> f64 {
        let d = p - self.origin();
        (d - self.axis() * self.axis().dot(&d)).norm()
    }

    /// Re-expresses the line in another frame: `pose · line`.
    pub fn transformed_by(&self, pose: &Pose3) -> ContactLineFrame {
        ContactLineFrame {
            frame: pose.compose(&self.frame),
        }
    }

    /// Errors unless both the axis and the frame rotation are sound.
    pub fn validated(&self) -> Result<&Self, GeomError> {
        let n = self.axis().norm();
        if (n - 1.0).abs() > 1e-6 || self.frame.orthonormality_error() > 1e-6 {
            return Err(GeomError::DegenerateFrame(n));
        }
        Ok(self)
    }
}

/// Planar rigid transform (mm, mm, rad); `theta` is kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = (a + std::f64::consts::PI).rem_euclid(two_pi);
    if r == 0.0 {
        r = two_pi;
    }
    r - std::f64::consts::PI
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2 {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Pose2 {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)
    }

    pub fn transform_point(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (self.x + c * p.0 - s * p.1, self.y + s * p.0 + c * p.1)
    }
}

/// Inverse right Jacobian of SE(3) at `xi`, in the `[w; v]` ordering:
/// `log(exp(xi) · exp(d)) ≈ xi + Jr⁻¹(xi) · d` for small `d`.
pub fn se3_jr_inv(xi: &Twist6) -> Matrix6<f64> {
    // Right quantities at xi are left quantities at -xi.
    se3_jl_inv(&xi.scaled(-1.0))
}

fn se3_jl_inv(xi: &Twist6) -> Matrix6<f64> {
    let jinv = so3_left_jacobian_inv(&xi.angular);
    let q = se3_q_matrix(&xi.angular, &xi.linear);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jinv);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jinv);
    out.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-jinv * q * jinv));
    out
}

/// The coupling block of the SE(3) left Jacobian (Barfoot's Q matrix).
fn se3_q_matrix(w: &Vector3<f64>, v: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let wh = hat(w);
    let vh = hat(v);
    let (c1, c2, c3) = if theta < 1e-3 {
        let t2 = theta * theta;
        (
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
            -1.0 / 24.0 + t2 / 720.0 - t2 * t2 / 40320.0,
            -1.0 / 120.0 + t2 / 5040.0,
        )
    } else {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        let (s, c) = theta.sin_cos();
        (
            (theta - s) / (t2 * theta),
            (1.0 - t2 / 2.0 - c) / t4,
            ((1.0 - t2 / 2.0 - c) / t4 - 3.0 * (theta - s - t2 * theta / 6.0) / (t4 * theta))
                * -0.5,
        )
    };
    // Barfoot, State Estimation for Robotics, eq. 7.86.
    let m1 = wh * vh + vh * wh + wh * vh * wh;
    let m2 = wh * wh * vh + vh * wh * wh - wh * vh * wh * 3.0;
    let m3 = wh * vh * wh * wh + wh * wh * vh * wh;
    vh * 0.5 + m1 * c1 - m2 * c2 + m3 * c3
}
