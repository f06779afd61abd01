//! Pose, twist, wrench and screw algebra.
//!
//! Conventions used throughout the crate:
//! - quaternions are Hamilton, scalar-first when serialized (`[w, x, y, z]`);
//! - a 6-DoF displacement `[dr; dω]` translates the gripper origin by `dr` and
//!   rotates the body by the rotation vector `dω` about the gripper origin, both
//!   expressed in world-aligned axes;
//! - wrenches are taken about the gripper origin in the same axes.

use nalgebra::{Matrix6, Quaternion, SVector, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|q| - 1` accepted from callers.
pub const UNIT_TOL: f64 = 1e-6;

/// Relative force magnitude below which an eigenwrench is treated as a pure couple.
pub const COUPLE_EPS: f64 = 1e-9;

pub type Vector7 = SVector<f64, 7>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    pub r: Vector3<f64>,
    pub q: UnitQuaternion<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    r: [f64; 3],
    /// Scalar-first.
    q: [f64; 4],
}

impl TryFrom<PoseRepr> for Pose {
    type Error = Error;

    fn try_from(p: PoseRepr) -> Result<Self> {
        let q = Quaternion::new(p.q[0], p.q[1], p.q[2], p.q[3]);
        check_unit(&q)?;
        let r = Vector3::from(p.r);
        if !r.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("pose position must be finite"));
        }
        Ok(Pose { r, q: UnitQuaternion::new_normalize(q) })
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let q = p.q.quaternion();
        PoseRepr { r: p.r.into(), q: [q.w, q.i, q.j, q.k] }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn new(r: Vector3<f64>, q: UnitQuaternion<f64>) -> Self {
        Pose { r, q }
    }

    pub fn identity() -> Self {
        Pose { r: Vector3::zeros(), q: UnitQuaternion::identity() }
    }

    /// Planar pose `(x, y, θ)` with rotation about world z.
    pub fn planar(x: f64, y: f64, theta: f64) -> Self {
        Pose { r: Vector3::new(x, y, 0.0), q: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), theta) }
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Pose { r: Vector3::new(x, y, z), q: UnitQuaternion::identity() }
    }

    /// Applies a displacement `[dr; dω]`.
    pub fn oplus(&self, d: &Vector6<f64>) -> Pose {
        let dr = d.fixed_rows::<3>(0).into_owned();
        let dw = d.fixed_rows::<3>(3).into_owned();
        let q = UnitQuaternion::from_scaled_axis(dw) * self.q;
        Pose { r: self.r + dr, q: UnitQuaternion::new_normalize(q.into_inner()) }
    }

    /// Displacement `d` such that `self.oplus(d) == other`.
    pub fn displacement_to(&self, other: &Pose) -> Vector6<f64> {
        let dr = other.r - self.r;
        let dq = other.q * self.q.inverse();
        let dw = dq.scaled_axis();
        Vector6::new(dr.x, dr.y, dr.z, dw.x, dw.y, dw.z)
    }

    /// Scalar-first quaternion coefficients.
    pub fn q_wxyz(&self) -> [f64; 4] {
        let q = self.q.quaternion();
        [q.w, q.i, q.j, q.k]
    }
}

/// Linear and angular velocity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
}

impl Twist {
    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Twist { v: x.fixed_rows::<3>(0).into_owned(), w: x.fixed_rows::<3>(3).into_owned() }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.v.x, self.v.y, self.v.z, self.w.x, self.w.y, self.w.z)
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

/// Force and moment about the gripper origin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub f: Vector3<f64>,
    pub m: Vector3<f64>,
}

impl Wrench {
    pub fn zero() -> Self {
        Wrench::default()
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Wrench { f: x.fixed_rows::<3>(0).into_owned(), m: x.fixed_rows::<3>(3).into_owned() }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.f.x, self.f.y, self.f.z, self.m.x, self.m.y, self.m.z)
    }

    /// `|Γ6 w|` with `Γ6 = diag(1, 1, 1, α, α, α)`.
    pub fn weighted_norm(&self, alpha: f64) -> f64 {
        (self.f.norm_squared() + alpha * alpha * self.m.norm_squared()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }
}

impl std::ops::Add for Wrench {
    type Output = Wrench;
    fn add(self, o: Wrench) -> Wrench {
        Wrench { f: self.f + o.f, m: self.m + o.m }
    }
}

impl std::ops::AddAssign for Wrench {
    fn add_assign(&mut self, o: Wrench) {
        self.f += o.f;
        self.m += o.m;
    }
}

/// Screw pitch; `Infinite` marks a couple-dominant axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Option<f64>", into = "Option<f64>")]
pub enum Pitch {
    Finite(f64),
    Infinite,
}

impl Pitch {
    /// `|h|`, with `Infinite` mapping to `f64::INFINITY`.
    pub fn magnitude(&self) -> f64 {
        match self {
            Pitch::Finite(h) => h.abs(),
            Pitch::Infinite => f64::INFINITY,
        }
    }
}

impl From<Option<f64>> for Pitch {
    fn from(v: Option<f64>) -> Self {
        match v {
            Some(h) if h.is_finite() => Pitch::Finite(h),
            _ => Pitch::Infinite,
        }
    }
}

impl From<Pitch> for Option<f64> {
    fn from(p: Pitch) -> Self {
        match p {
            Pitch::Finite(h) => Some(h),
            Pitch::Infinite => None,
        }
    }
}

/// A screw 6-vector `[a; b]`, read as an eigenwrench `[f; m]`.
///
/// Stored sign-canonicalized: the first non-negligible component of the
/// dominant 3-subvector is positive. Magnitude is preserved.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 6]", into = "[f64; 6]")]
pub struct ScrewVector {
    a: Vector3<f64>,
    b: Vector3<f64>,
}

impl TryFrom<[f64; 6]> for ScrewVector {
    type Error = Error;
    fn try_from(v: [f64; 6]) -> Result<Self> {
        ScrewVector::from_vector(&Vector6::from(v))
    }
}

impl From<ScrewVector> for [f64; 6] {
    fn from(s: ScrewVector) -> Self {
        s.to_vector().into()
    }
}

impl ScrewVector {
    pub fn new(a: Vector3<f64>, b: Vector3<f64>) -> Result<Self> {
        let v = Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z);
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("screw vector must be finite"));
        }
        if v.norm() <= 1e-15 {
            return Err(Error::invalid("screw vector must be nonzero"));
        }
        Ok(canonical(a, b))
    }

    pub fn from_vector(v: &Vector6<f64>) -> Result<Self> {
        ScrewVector::new(v.fixed_rows::<3>(0).into_owned(), v.fixed_rows::<3>(3).into_owned())
    }

    pub fn a(&self) -> Vector3<f64> {
        self.a
    }

    pub fn b(&self) -> Vector3<f64> {
        self.b
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.a.x, self.a.y, self.a.z, self.b.x, self.b.y, self.b.z)
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    /// Unit 6-norm copy (still canonical).
    pub fn normalized(&self) -> ScrewVector {
        let n = self.norm();
        // rescaling can flip a near-tie in subvector dominance
        canonical(self.a / n, self.b / n)
    }

    /// True when the leading (force) subvector dominates.
    pub fn force_dominant(&self) -> bool {
        self.a.norm() >= self.b.norm()
    }
}

fn canonical(a: Vector3<f64>, b: Vector3<f64>) -> ScrewVector {
    let dom = if a.norm() >= b.norm() { a } else { b };
    let tol = 1e-12 * dom.norm();
    let sign = dom.iter().find(|c| c.abs() > tol).map(|c| c.signum()).unwrap_or(1.0);
    ScrewVector { a: a * sign, b: b * sign }
}

/// The block-swap matrix `Δ = [[0, I], [I, 0]]`.
pub fn delta_matrix() -> Matrix6<f64> {
    let mut d = Matrix6::zeros();
    for i in 0..3 {
        d[(i, i + 3)] = 1.0;
        d[(i + 3, i)] = 1.0;
    }
    d
}

fn check_unit(q: &Quaternion<f64>) -> Result<()> {
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::invalid(format!("quaternion norm {n} is not unit")));
    }
    Ok(())
}

/// Relative rotation `q⁻¹ * q_g`, hemisphere-corrected to a non-negative scalar part.
pub fn quat_error(q: &Quaternion<f64>, q_g: &Quaternion<f64>) -> Result<UnitQuaternion<f64>> {
    check_unit(q)?;
    check_unit(q_g)?;
    Ok(quat_error_unit(&UnitQuaternion::new_normalize(*q), &UnitQuaternion::new_normalize(*q_g)))
}

pub fn quat_error_unit(q: &UnitQuaternion<f64>, q_g: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let mut d = q.conjugate().into_inner() * q_g.into_inner();
    if d.w < 0.0 {
        d = -d;
    }
    UnitQuaternion::new_normalize(d)
}

/// `[r_g - r; δq]` as a 7-vector (quaternion scalar-first).
pub fn pose_error(z: &Pose, z_g: &Pose) -> Vector7 {
    let dr = z_g.r - z.r;
    let dq = quat_error_unit(&z.q, &z_g.q);
    let c = dq.quaternion();
    Vector7::from_column_slice(&[dr.x, dr.y, dr.z, c.w, c.i, c.j, c.k])
}

/// `|½ êᵀ Δ ê|` of the unit-normalized screw, i.e. `|a·b|`.
pub fn raw_pitch(e: &ScrewVector) -> f64 {
    let u = e.normalized();
    u.a.dot(&u.b).abs()
}

/// `(f·m)/(f·f)` of an eigenwrench, or `Infinite` when the force part vanishes.
pub fn wrench_pitch(e: &ScrewVector) -> Pitch {
    let f = e.a;
    if f.norm() <= COUPLE_EPS * e.norm() {
        Pitch::Infinite
    } else {
        Pitch::Finite(f.dot(&e.b) / f.norm_squared())
    }
}

/// A line in space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub direction: Vector3<f64>,
    pub point: Vector3<f64>,
}

/// Axis of a screw: direction of the dominant subvector and the point on
/// the axis closest to the origin, `(dominant × other)/|dominant|²`.
pub fn screw_axis_line(e: &ScrewVector) -> Result<Line> {
    let (dom, other) = if e.force_dominant() { (e.a, e.b) } else { (e.b, e.a) };
    let n2 = dom.norm_squared();
    if n2 < 1e-24 {
        return Err(Error::invalid("degenerate screw: no axis direction"));
    }
    Ok(Line { direction: dom / n2.sqrt(), point: dom.cross(&other) / n2 })
}

/// Angle in degrees between two undirected lines' directions, in `[0, 90]`.
pub fn line_angle_deg(u: &Vector3<f64>, v: &Vector3<f64>) -> f64 {
    let c = (u.dot(v) / (u.norm() * v.norm())).abs().min(1.0);
    c.acos().to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_4;

    fn rot_z(theta: f64) -> Quaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), theta).into_inner()
    }

    #[test]
    fn quat_error_identity_and_analytic() {
        let q = rot_z(0.3);
        let d = quat_error(&q, &q).unwrap();
        assert_abs_diff_eq!(d.w, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.imag().norm(), 0.0, epsilon = 1e-12);

        let d = quat_error(&Quaternion::identity(), &rot_z(std::f64::consts::FRAC_PI_2)).unwrap();
        assert_abs_diff_eq!(d.w, FRAC_PI_4.cos(), epsilon = 1e-12);
        assert_abs_diff_eq!(d.k, FRAC_PI_4.sin(), epsilon = 1e-12);
        assert_abs_diff_eq!(d.i, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn quat_error_rejects_non_unit() {
        let bad = Quaternion::new(1.0, 0.1, 0.0, 0.0);
        assert!(matches!(quat_error(&bad, &Quaternion::identity()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn quat_error_hemisphere() {
        // q_g and -q_g are the same rotation
        let d = quat_error(&Quaternion::identity(), &(-rot_z(0.2))).unwrap();
        assert!(d.w > 0.0);
        assert_abs_diff_eq!(d.angle(), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn pose_error_cases() {
        let z = Pose::identity();
        let e = pose_error(&z, &z);
        assert_eq!(e.as_slice(), &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);

        let e = pose_error(&z, &Pose::translation(0.01, 0.0, 0.0));
        assert_abs_diff_eq!(e[0], 0.01);
        assert_abs_diff_eq!(e[3], 1.0);

        let e = pose_error(&z, &Pose::planar(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        assert_abs_diff_eq!(e[3], FRAC_PI_4.cos(), epsilon = 1e-12);
        assert_abs_diff_eq!(e[6], FRAC_PI_4.sin(), epsilon = 1e-12);
    }

    #[test]
    fn raw_pitch_cases() {
        let e = ScrewVector::from_vector(&Vector6::new(-0.648, -0.734, 0.200, 0.018, -0.004, -0.005)).unwrap();
        assert!((raw_pitch(&e) - 0.0094).abs() <= 0.002);

        let e = ScrewVector::from_vector(&Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(raw_pitch(&e), 0.0);

        let s = 0.5f64.sqrt();
        let e = ScrewVector::from_vector(&Vector6::new(s, 0.0, 0.0, s, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(raw_pitch(&e), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn zero_screw_is_rejected() {
        assert!(ScrewVector::from_vector(&Vector6::zeros()).is_err());
        assert!(ScrewVector::from_vector(&Vector6::repeat(f64::NAN)).is_err());
    }

    #[test]
    fn wrench_pitch_cases() {
        let z = Vector3::z();
        assert_eq!(wrench_pitch(&ScrewVector::new(z, Vector3::zeros()).unwrap()), Pitch::Finite(0.0));
        match wrench_pitch(&ScrewVector::new(z, 0.05 * z).unwrap()) {
            Pitch::Finite(h) => assert_abs_diff_eq!(h, 0.05, epsilon = 1e-15),
            Pitch::Infinite => panic!("expected finite pitch"),
        }
        assert_eq!(wrench_pitch(&ScrewVector::new(Vector3::zeros(), z).unwrap()), Pitch::Infinite);
    }

    #[test]
    fn axis_line_cases() {
        let l = screw_axis_line(&ScrewVector::new(Vector3::z(), Vector3::zeros()).unwrap()).unwrap();
        assert_abs_diff_eq!(l.direction, Vector3::z());
        assert_abs_diff_eq!(l.point, Vector3::zeros());

        let l = screw_axis_line(&ScrewVector::new(Vector3::z(), Vector3::x()).unwrap()).unwrap();
        assert_abs_diff_eq!(l.direction, Vector3::z());
        assert_abs_diff_eq!(l.point, Vector3::y());
    }

    #[test]
    fn delta_squares_to_identity() {
        let d = delta_matrix();
        assert_eq!(d * d, Matrix6::identity());
        assert_eq!(d, d.transpose());
    }

    #[test]
    fn canonical_sign() {
        let e = ScrewVector::from_vector(&Vector6::new(-0.648, -0.734, 0.2, 0.018, -0.004, -0.005)).unwrap();
        assert!(e.a().x > 0.0);
        let c = ScrewVector::from_vector(&Vector6::new(0.0, 0.0, 0.01, 0.0, -1.0, 0.0)).unwrap();
        assert!(c.b().y > 0.0);
        assert!(c.a().z < 0.0);
    }

    #[test]
    fn pose_json_is_scalar_first() {
        let p = Pose::planar(0.1, 0.2, 0.0);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"r":[0.1,0.2,0.0],"q":[1.0,0.0,0.0,0.0]}"#);
        let back: Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<Pose>(r#"{"r":[0,0,0],"q":[2,0,0,0]}"#).is_err());
    }

    #[test]
    fn oplus_displacement_round_trip() {
        let z = Pose::new(Vector3::new(0.1, -0.2, 0.3), UnitQuaternion::from_euler_angles(0.1, 0.2, -0.3));
        let d = Vector6::new(0.01, 0.02, -0.03, 0.05, -0.02, 0.04);
        let back = z.displacement_to(&z.oplus(&d));
        assert_abs_diff_eq!(back, d, epsilon = 1e-12);
    }
}
