//! Quasi-static spring-network environment.
//!
//! Stands in for the robot and its force sensor: for any gripper pose it
//! returns the elastic reaction wrench on the gripper, the stored energy and
//! a finite-difference ground-truth stiffness.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix6, UnitQuaternion, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::screw::{Line, Pose, Wrench};
use crate::stiffness::StiffnessMatrix;

/// Net wrench allowed at a scene's equilibrium pose.
pub const EQUILIBRIUM_TOL: f64 = 1e-9;

/// Linear spring between a fixed world anchor and a body-frame attachment point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpringElement {
    pub anchor: Vector3<f64>,
    /// Body frame, relative to the gripper origin.
    pub attach: Vector3<f64>,
    pub k: f64,
    pub rest_len: f64,
    /// Marks the stiff springs that pin out-of-plane motion in planar scenes.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub virtual_axis: bool,
}

impl SpringElement {
    fn world_attach(&self, z: &Pose) -> Vector3<f64> {
        z.r + z.q * self.attach
    }

    /// Tension `k (|l| - rest_len)` at pose `z`.
    pub fn tension(&self, z: &Pose) -> f64 {
        let l = self.anchor - self.world_attach(z);
        self.k * (l.norm() - self.rest_len)
    }
}

/// Rotational spring resisting rotation of the body about a fixed axis.
///
/// The angle is the twist component, about `axis.direction`, of the body's
/// rotation relative to the scene's equilibrium orientation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorsionElement {
    pub axis: Line,
    pub k_t: f64,
    #[serde(default)]
    pub rest_angle: f64,
}

impl TorsionElement {
    /// Twist angle and its gradient with respect to a world-frame rotation vector.
    fn angle_and_gradient(&self, q_rel: &UnitQuaternion<f64>) -> Result<(f64, Vector3<f64>)> {
        let u = self.axis.direction;
        let mut c = *q_rel.quaternion();
        if c.w < 0.0 {
            c = -c;
        }
        let (s, v) = (c.w, c.imag());
        let t = u.dot(&v);
        let den = s * s + t * t;
        if den < 1e-18 {
            return Err(Error::SingularGeometry("torsion angle undefined at half-turn swing".into()));
        }
        let phi = 2.0 * t.atan2(s);
        let grad = (s * s * u + s * v.cross(&u) + t * v) / den;
        Ok((phi, grad))
    }
}

/// Pose-dependent element activation (contact and detachment).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ContactRule {
    /// Every element releases once the gripper origin rises above `height`.
    ReleaseAbove { height: f64 },
}

impl ContactRule {
    fn active(&self, z: &Pose) -> bool {
        match self {
            ContactRule::ReleaseAbove { height } => z.r.z <= *height,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    #[serde(default)]
    pub springs: Vec<SpringElement>,
    #[serde(default)]
    pub torsions: Vec<TorsionElement>,
    pub equilibrium_pose: Pose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact: Option<ContactRule>,
}

impl Scene {
    /// Validates element parameters and the equilibrium invariant.
    pub fn new(
        springs: Vec<SpringElement>,
        torsions: Vec<TorsionElement>,
        equilibrium_pose: Pose,
        contact: Option<ContactRule>,
    ) -> Result<Self> {
        let mut scene = Scene { springs, torsions, equilibrium_pose, contact };
        scene.validate()?;
        Ok(scene)
    }

    /// Checks element invariants (normalizing torsion axes) and that the
    /// equilibrium pose carries no net wrench.
    pub fn validate(&mut self) -> Result<()> {
        for (i, s) in self.springs.iter().enumerate() {
            if !(s.k > 0.0 && s.k.is_finite()) {
                return Err(Error::invalid(format!("spring {i}: stiffness must be positive")));
            }
            if !(s.rest_len >= 0.0) {
                return Err(Error::invalid(format!("spring {i}: rest length must be non-negative")));
            }
        }
        for (i, t) in self.torsions.iter_mut().enumerate() {
            if !(t.k_t > 0.0 && t.k_t.is_finite()) {
                return Err(Error::invalid(format!("torsion {i}: stiffness must be positive")));
            }
            let n = t.axis.direction.norm();
            if !(n > 1e-12) {
                return Err(Error::invalid(format!("torsion {i}: axis direction is zero")));
            }
            t.axis.direction /= n;
        }
        let w = self.wrench_with(&self.equilibrium_pose, true)?;
        let n = w.to_vector().norm();
        if n >= EQUILIBRIUM_TOL {
            return Err(Error::invalid(format!("scene is not at equilibrium: net wrench {n:.3e}")));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut scene: Scene = serde_json::from_str(s)?;
        scene.validate()?;
        Ok(scene)
    }

    /// Whether the elements are engaged at pose `z`.
    pub fn is_active(&self, z: &Pose) -> bool {
        self.contact.as_ref().is_none_or(|c| c.active(z))
    }

    fn wrench_with(&self, z: &Pose, active: bool) -> Result<Wrench> {
        let mut w = Wrench::zero();
        if !active {
            return Ok(w);
        }
        for s in &self.springs {
            let a = s.world_attach(z);
            let l = s.anchor - a;
            let len = l.norm();
            if len < 1e-12 {
                return Err(Error::SingularGeometry("spring anchor coincides with its attachment".into()));
            }
            let f = s.k * (len - s.rest_len) * (l / len);
            w += Wrench { f, m: (a - z.r).cross(&f) };
        }
        let q_rel = z.q * self.equilibrium_pose.q.inverse();
        for t in &self.torsions {
            let (phi, grad) = t.angle_and_gradient(&q_rel)?;
            w.m -= t.k_t * (phi - t.rest_angle) * grad;
        }
        Ok(w)
    }

    fn raw_energy(&self, z: &Pose, active: bool) -> Result<f64> {
        if !active {
            return Ok(0.0);
        }
        let mut e = 0.0;
        for s in &self.springs {
            let len = (s.anchor - s.world_attach(z)).norm();
            if len < 1e-12 {
                return Err(Error::SingularGeometry("spring anchor coincides with its attachment".into()));
            }
            e += 0.5 * s.k * (len - s.rest_len).powi(2);
        }
        let q_rel = z.q * self.equilibrium_pose.q.inverse();
        for t in &self.torsions {
            let (phi, _) = t.angle_and_gradient(&q_rel)?;
            e += 0.5 * t.k_t * (phi - t.rest_angle).powi(2);
        }
        Ok(e)
    }

    /// Per-spring tensions at `z` (zero for released elements).
    pub fn spring_forces(&self, z: &Pose) -> Vec<f64> {
        let active = self.is_active(z);
        self.springs.iter().map(|s| if active { s.tension(z) } else { 0.0 }).collect()
    }

    /// Largest tension among the physical (non-virtual) springs.
    pub fn max_spring_force(&self, z: &Pose) -> f64 {
        let active = self.is_active(z);
        self.springs
            .iter()
            .filter(|s| !s.virtual_axis)
            .map(|s| if active { s.tension(z).abs() } else { 0.0 })
            .fold(0.0, f64::max)
    }
}

/// Reaction wrench exerted by the environment on the gripper at pose `z`.
pub fn reaction_wrench(scene: &Scene, z: &Pose) -> Result<Wrench> {
    scene.wrench_with(z, scene.is_active(z))
}

/// Stored elastic energy relative to the equilibrium configuration.
pub fn elastic_energy(scene: &Scene, z: &Pose) -> Result<f64> {
    let e = scene.raw_energy(z, scene.is_active(z))?;
    Ok(e - scene.raw_energy(&scene.equilibrium_pose, true)?)
}

/// Central-difference stiffness before symmetrization.
pub fn finite_difference_stiffness_raw(scene: &Scene, z: &Pose, step: f64) -> Result<Matrix6<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut k = Matrix6::zeros();
    for j in 0..6 {
        let mut d = Vector6::zeros();
        d[j] = step;
        let wp = reaction_wrench(scene, &z.oplus(&d))?;
        let wm = reaction_wrench(scene, &z.oplus(&-d))?;
        if !wp.is_finite() || !wm.is_finite() {
            return Err(Error::SingularGeometry("non-finite wrench while probing".into()));
        }
        let col = -(wp.to_vector() - wm.to_vector()) / (2.0 * step);
        k.set_column(j, &col);
    }
    Ok(k)
}

/// Ground-truth stiffness `δw = -K δ` by central differences, symmetrized.
pub fn finite_difference_stiffness(scene: &Scene, z: &Pose, step: f64) -> Result<StiffnessMatrix> {
    Ok(StiffnessMatrix::symmetrize(&finite_difference_stiffness_raw(scene, z, step)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    PlanarTriangle,
    LineSpring,
    FlexibleHinge,
    Membrane,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] =
        [ScenarioKind::PlanarTriangle, ScenarioKind::LineSpring, ScenarioKind::FlexibleHinge, ScenarioKind::Membrane];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::PlanarTriangle => "planar_triangle",
            ScenarioKind::LineSpring => "line_spring",
            ScenarioKind::FlexibleHinge => "flexible_hinge",
            ScenarioKind::Membrane => "membrane",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

/// Rigid triangle held in its plane by three radial pretensioned springs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriangleParams {
    /// Centroid-to-vertex distance [m].
    pub vertex_radius: f64,
    pub spring_length: f64,
    pub k: f64,
    pub pretension: f64,
    /// Stiffness of the vertical springs that pin z, roll and pitch.
    pub virtual_k: f64,
    pub virtual_length: f64,
}

impl Default for TriangleParams {
    fn default() -> Self {
        TriangleParams {
            vertex_radius: 0.1,
            spring_length: 0.1,
            k: 400.0,
            pretension: 5.0,
            virtual_k: 3000.0,
            virtual_length: 1.0,
        }
    }
}

/// Body suspended between two pretensioned springs along one line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineSpringParams {
    pub direction: Vector3<f64>,
    pub spring_length: f64,
    pub k: f64,
    pub pretension: f64,
    /// Half-length of the body segment the two springs attach to.
    pub attach_offset: f64,
    /// Torsional stiffness of the spring line about its own axis.
    pub k_twist: f64,
}

impl Default for LineSpringParams {
    fn default() -> Self {
        LineSpringParams {
            direction: Vector3::new(0.15, 0.1, 0.071),
            spring_length: 0.15,
            k: 800.0,
            pretension: 40.0,
            attach_offset: 0.02,
            k_twist: 1.5,
        }
    }
}

/// Torsion hinge in a stiff spring cage with one compliant translation
/// perpendicular to the hinge axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HingeParams {
    pub axis: Vector3<f64>,
    pub k_t: f64,
    /// Arm at which the hinge stiffness is reflected as translational compliance [m].
    pub lever_arm: f64,
    /// Stiffness of each of the two springs along the hinge axis.
    pub k_axial: f64,
    pub axial_offset: f64,
    /// Stiffness of each of the two springs along the in-plane normal.
    pub k_lateral: f64,
    pub lateral_offset: f64,
    pub spring_length: f64,
}

impl Default for HingeParams {
    fn default() -> Self {
        HingeParams {
            axis: Vector3::x(),
            k_t: 0.344,
            lever_arm: 0.0415,
            k_axial: 830.0,
            axial_offset: 0.027,
            k_lateral: 570.0,
            lateral_offset: 0.04,
            spring_length: 0.1,
        }
    }
}

/// Horizontal fan of radial pretensioned springs around the gripper.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MembraneParams {
    pub n_springs: usize,
    pub attach_radius: f64,
    pub spring_length: f64,
    pub k: f64,
    /// Relative stiffness modulation `k_i = k (1 + a cos 2φ_i)`; breaks in-plane isotropy.
    pub anisotropy: f64,
    pub pretension: f64,
    pub release_height: f64,
}

impl Default for MembraneParams {
    fn default() -> Self {
        MembraneParams {
            n_springs: 8,
            attach_radius: 0.01,
            spring_length: 0.15,
            k: 400.0,
            anisotropy: 0.3,
            pretension: 5.0,
            release_height: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ScenarioSpec {
    PlanarTriangle(TriangleParams),
    LineSpring(LineSpringParams),
    FlexibleHinge(HingeParams),
    Membrane(MembraneParams),
}

impl ScenarioSpec {
    pub fn default_for(kind: ScenarioKind) -> Self {
        match kind {
            ScenarioKind::PlanarTriangle => ScenarioSpec::PlanarTriangle(TriangleParams::default()),
            ScenarioKind::LineSpring => ScenarioSpec::LineSpring(LineSpringParams::default()),
            ScenarioKind::FlexibleHinge => ScenarioSpec::FlexibleHinge(HingeParams::default()),
            ScenarioKind::Membrane => ScenarioSpec::Membrane(MembraneParams::default()),
        }
    }

    pub fn kind(&self) -> ScenarioKind {
        match self {
            ScenarioSpec::PlanarTriangle(_) => ScenarioKind::PlanarTriangle,
            ScenarioSpec::LineSpring(_) => ScenarioKind::LineSpring,
            ScenarioSpec::FlexibleHinge(_) => ScenarioKind::FlexibleHinge,
            ScenarioSpec::Membrane(_) => ScenarioKind::Membrane,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

fn pretensioned(anchor: Vector3<f64>, attach: Vector3<f64>, k: f64, tension: f64) -> Result<SpringElement> {
    let len = (anchor - attach).norm();
    let rest_len = len - tension / k;
    if rest_len < 0.0 {
        return Err(Error::invalid("pretension too high for spring stiffness and length"));
    }
    Ok(SpringElement { anchor, attach, k, rest_len, virtual_axis: false })
}

fn relaxed(attach: Vector3<f64>, dir: Vector3<f64>, len: f64, k: f64) -> SpringElement {
    SpringElement { anchor: attach + len * dir, attach, k, rest_len: len, virtual_axis: false }
}

/// Orthonormal frame `(u, v, w)` with `u` along `axis`.
fn frame_from_axis(axis: &Vector3<f64>) -> Result<(Vector3<f64>, Vector3<f64>, Vector3<f64>)> {
    let n = axis.norm();
    if !(n > 1e-12) {
        return Err(Error::invalid("axis must be nonzero"));
    }
    let u = axis / n;
    let seed = if u.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let w = (seed - u * u.dot(&seed)).normalize();
    let v = w.cross(&u);
    Ok((u, v, w))
}

/// Builds one of the four built-in scenes. All are at equilibrium at the
/// identity pose.
pub fn make_scenario(spec: &ScenarioSpec) -> Result<Scene> {
    let eq = Pose::identity();
    match spec {
        ScenarioSpec::PlanarTriangle(p) => {
            for (n, v) in [
                ("vertex_radius", p.vertex_radius),
                ("spring_length", p.spring_length),
                ("k", p.k),
                ("virtual_k", p.virtual_k),
                ("virtual_length", p.virtual_length),
            ] {
                positive(n, v)?;
            }
            let mut springs = Vec::new();
            for i in 0..3 {
                let phi = std::f64::consts::FRAC_PI_2 + i as f64 * 2.0 * std::f64::consts::PI / 3.0;
                let dir = Vector3::new(phi.cos(), phi.sin(), 0.0);
                let vertex = p.vertex_radius * dir;
                springs.push(pretensioned(vertex + p.spring_length * dir, vertex, p.k, p.pretension)?);
                springs.push(SpringElement {
                    anchor: vertex - p.virtual_length * Vector3::z(),
                    attach: vertex,
                    k: p.virtual_k,
                    rest_len: p.virtual_length,
                    virtual_axis: true,
                });
            }
            Scene::new(springs, vec![], eq, None)
        }
        ScenarioSpec::LineSpring(p) => {
            for (n, v) in [
                ("spring_length", p.spring_length),
                ("k", p.k),
                ("attach_offset", p.attach_offset),
                ("k_twist", p.k_twist),
            ] {
                positive(n, v)?;
            }
            let (d, _, _) = frame_from_axis(&p.direction)?;
            let a = p.attach_offset;
            let l = p.spring_length;
            let springs = vec![
                pretensioned((a + l) * d, a * d, p.k, p.pretension)?,
                pretensioned(-(a + l) * d, -a * d, p.k, p.pretension)?,
            ];
            let torsions = vec![TorsionElement {
                axis: Line { direction: d, point: Vector3::zeros() },
                k_t: p.k_twist,
                rest_angle: 0.0,
            }];
            Scene::new(springs, torsions, eq, None)
        }
        ScenarioSpec::FlexibleHinge(p) => {
            for (n, v) in [
                ("k_t", p.k_t),
                ("lever_arm", p.lever_arm),
                ("k_axial", p.k_axial),
                ("axial_offset", p.axial_offset),
                ("k_lateral", p.k_lateral),
                ("lateral_offset", p.lateral_offset),
                ("spring_length", p.spring_length),
            ] {
                positive(n, v)?;
            }
            let (u, v, w) = frame_from_axis(&p.axis)?;
            let l = p.spring_length;
            let springs = vec![
                // along the hinge axis, offset along w: pins rotation about v
                relaxed(p.axial_offset * w, u, l, p.k_axial),
                relaxed(-p.axial_offset * w, -u, l, p.k_axial),
                // along v, offset along u: pins rotation about w
                relaxed(p.lateral_offset * u, v, l, p.k_lateral),
                relaxed(-p.lateral_offset * u, -v, l, p.k_lateral),
                // compliant translation perpendicular to the hinge
                relaxed(Vector3::zeros(), w, l, p.k_t / (p.lever_arm * p.lever_arm)),
            ];
            let torsions = vec![TorsionElement {
                axis: Line { direction: u, point: Vector3::zeros() },
                k_t: p.k_t,
                rest_angle: 0.0,
            }];
            Scene::new(springs, torsions, eq, None)
        }
        ScenarioSpec::Membrane(p) => {
            if p.n_springs < 8 || p.n_springs % 2 != 0 {
                return Err(Error::invalid("membrane needs an even number of at least 8 springs"));
            }
            for (n, v) in [
                ("attach_radius", p.attach_radius),
                ("spring_length", p.spring_length),
                ("k", p.k),
                ("pretension", p.pretension),
            ] {
                positive(n, v)?;
            }
            if !(p.anisotropy.abs() < 1.0) {
                return Err(Error::invalid("membrane anisotropy must lie in (-1, 1)"));
            }
            let mut springs = Vec::with_capacity(p.n_springs);
            for i in 0..p.n_springs {
                let phi = 2.0 * std::f64::consts::PI * i as f64 / p.n_springs as f64;
                let dir = Vector3::new(phi.cos(), phi.sin(), 0.0);
                let k = p.k * (1.0 + p.anisotropy * (2.0 * phi).cos());
                let attach = p.attach_radius * dir;
                springs.push(pretensioned(attach + p.spring_length * dir, attach, k, p.pretension)?);
            }
            Scene::new(springs, vec![], eq, Some(ContactRule::ReleaseAbove { height: p.release_height }))
        }
    }
}

/// Force/torque sensor noise and moving-average filter settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    /// Per-axis Gaussian standard deviation `[fx, fy, fz, mx, my, mz]`.
    pub noise_std: [f64; 6],
    pub filter_window: usize,
    pub rng_seed: u64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel { noise_std: [0.0; 6], filter_window: 1, rng_seed: 0 }
    }
}

impl SensorModel {
    pub fn noiseless(&self) -> bool {
        self.noise_std.iter().all(|s| *s == 0.0)
    }
}

/// Stateful sensor channel: adds seeded noise, then a moving average.
pub struct Sensor {
    model: SensorModel,
    rng: ChaCha8Rng,
    noise: Vec<Normal<f64>>,
    window: VecDeque<Vector6<f64>>,
}

impl Sensor {
    pub fn new(model: SensorModel) -> Result<Self> {
        if model.filter_window < 1 {
            return Err(Error::invalid("filter_window must be at least 1"));
        }
        let noise = model
            .noise_std
            .iter()
            .map(|s| Normal::new(0.0, *s).map_err(|_| Error::invalid("noise std must be finite and non-negative")))
            .collect::<Result<Vec<_>>>()?;
        let rng = ChaCha8Rng::seed_from_u64(model.rng_seed);
        Ok(Sensor { window: VecDeque::with_capacity(model.filter_window), model, rng, noise })
    }

    pub fn model(&self) -> &SensorModel {
        &self.model
    }

    /// Feeds one raw sample and returns the filtered output.
    pub fn sense(&mut self, raw: &Wrench) -> Wrench {
        let mut x = raw.to_vector();
        for (i, n) in self.noise.iter().enumerate() {
            if self.model.noise_std[i] > 0.0 {
                x[i] += n.sample(&mut self.rng);
            }
        }
        if self.window.len() == self.model.filter_window {
            self.window.pop_front();
        }
        self.window.push_back(x);
        let sum: Vector6<f64> = self.window.iter().sum();
        Wrench::from_vector(&(sum / self.window.len() as f64))
    }

    /// Clears the filter history; the noise stream continues.
    pub fn reset_filter(&mut self) {
        self.window.clear();
    }

    /// Holds a static pose for one full window and returns the settled reading.
    pub fn settle(&mut self, raw: &Wrench) -> Wrench {
        self.reset_filter();
        let mut out = *raw;
        for _ in 0..self.model.filter_window {
            out = self.sense(raw);
        }
        out
    }

    /// Standard deviation of one settled reading's difference between two poses.
    pub fn noise_floor(&self) -> f64 {
        let s: f64 = self.model.noise_std.iter().map(|x| x * x).sum::<f64>().sqrt();
        s * (2.0 / self.model.filter_window as f64).sqrt()
    }
}

/// Anything that reports the reaction wrench at a commanded pose.
pub trait WrenchSource {
    fn wrench_at(&mut self, z: &Pose) -> Result<Wrench>;

    /// Standard deviation of a difference of two readings; zero for exact sources.
    fn noise_floor(&self) -> f64 {
        0.0
    }
}

impl WrenchSource for &Scene {
    fn wrench_at(&mut self, z: &Pose) -> Result<Wrench> {
        reaction_wrench(self, z)
    }
}

impl<T: WrenchSource + ?Sized> WrenchSource for &mut T {
    fn wrench_at(&mut self, z: &Pose) -> Result<Wrench> {
        (**self).wrench_at(z)
    }

    fn noise_floor(&self) -> f64 {
        (**self).noise_floor()
    }
}

/// Adapts a closure into a [`WrenchSource`].
pub struct FnSource<F>(pub F);

impl<F: FnMut(&Pose) -> Result<Wrench>> WrenchSource for FnSource<F> {
    fn wrench_at(&mut self, z: &Pose) -> Result<Wrench> {
        (self.0)(z)
    }
}

/// A scene observed through a [`Sensor`]; each query settles the filter at the pose.
pub struct SensedScene<'a> {
    pub scene: &'a Scene,
    pub sensor: Sensor,
}

impl<'a> SensedScene<'a> {
    pub fn new(scene: &'a Scene, model: SensorModel) -> Result<Self> {
        Ok(SensedScene { scene, sensor: Sensor::new(model)? })
    }
}

impl WrenchSource for SensedScene<'_> {
    fn wrench_at(&mut self, z: &Pose) -> Result<Wrench> {
        let raw = reaction_wrench(self.scene, z)?;
        Ok(self.sensor.settle(&raw))
    }

    fn noise_floor(&self) -> f64 {
        self.sensor.noise_floor()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single_z_spring() -> Scene {
        let s = pretensioned(Vector3::new(0.0, 0.0, -0.1), Vector3::zeros(), 100.0, 0.0).unwrap();
        Scene::new(vec![s], vec![], Pose::identity(), None).unwrap()
    }

    #[test]
    fn hooke_single_spring() {
        let scene = single_z_spring();
        let w = reaction_wrench(&scene, &Pose::translation(0.0, 0.0, 0.01)).unwrap();
        assert_abs_diff_eq!(w.f, Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(w.m, Vector3::zeros(), epsilon = 1e-12);
        let e = elastic_energy(&scene, &Pose::translation(0.0, 0.0, 0.01)).unwrap();
        assert_abs_diff_eq!(e, 5e-3, epsilon = 1e-12);
    }

    #[test]
    fn single_spring_axial_stiffness() {
        let scene = single_z_spring();
        let k = finite_difference_stiffness(&scene, &Pose::identity(), 1e-6).unwrap();
        assert_abs_diff_eq!(k.matrix()[(2, 2)], 100.0, epsilon = 1e-6);
    }

    #[test]
    fn coincident_spring_is_singular() {
        let scene = Scene {
            springs: vec![SpringElement {
                anchor: Vector3::new(0.0, 0.0, 0.01),
                attach: Vector3::zeros(),
                k: 1.0,
                rest_len: 0.01,
                virtual_axis: false,
            }],
            torsions: vec![],
            equilibrium_pose: Pose::identity(),
            contact: None,
        };
        let r = reaction_wrench(&scene, &Pose::translation(0.0, 0.0, 0.01));
        assert!(matches!(r, Err(Error::SingularGeometry(_))));
    }

    #[test]
    fn scenarios_start_at_equilibrium() {
        for kind in ScenarioKind::ALL {
            let scene = make_scenario(&ScenarioSpec::default_for(kind)).unwrap();
            let w = reaction_wrench(&scene, &scene.equilibrium_pose).unwrap();
            assert!(w.to_vector().norm() < 1e-9, "{kind}");
            assert_eq!(elastic_energy(&scene, &scene.equilibrium_pose).unwrap(), 0.0);
        }
    }

    #[test]
    fn unbalanced_scene_rejected() {
        let s = pretensioned(Vector3::new(0.0, 0.0, -0.1), Vector3::zeros(), 100.0, 1.0).unwrap();
        assert!(Scene::new(vec![s], vec![], Pose::identity(), None).is_err());
    }

    #[test]
    fn invalid_params() {
        let p = MembraneParams { n_springs: 4, ..Default::default() };
        assert!(make_scenario(&ScenarioSpec::Membrane(p)).is_err());
        let t = TriangleParams { k: -1.0, ..Default::default() };
        assert!(make_scenario(&ScenarioSpec::PlanarTriangle(t)).is_err());
        assert!("blob".parse::<ScenarioKind>().is_err());
    }

    #[test]
    fn torsion_couple_about_axis() {
        let scene = make_scenario(&ScenarioSpec::default_for(ScenarioKind::FlexibleHinge)).unwrap();
        let z = Pose::new(Vector3::zeros(), UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.01));
        let w = reaction_wrench(&scene, &z).unwrap();
        // the cage springs lie in planes containing the x axis only partially; the
        // torsion element alone contributes -k_t θ about x
        assert!(w.m.x < 0.0);
    }

    #[test]
    fn membrane_releases_above_threshold() {
        let scene = make_scenario(&ScenarioSpec::default_for(ScenarioKind::Membrane)).unwrap();
        let up = Pose::translation(0.0, 0.0, 0.02);
        assert!(!scene.is_active(&up));
        assert_eq!(reaction_wrench(&scene, &up).unwrap(), Wrench::zero());
        assert!(scene.spring_forces(&up).iter().all(|f| *f == 0.0));
    }

    #[test]
    fn sensor_zero_noise_is_identity() {
        let mut s = Sensor::new(SensorModel { noise_std: [0.0; 6], filter_window: 7, rng_seed: 3 }).unwrap();
        let w = Wrench::from_vector(&Vector6::new(1.0, -2.0, 3.0, 0.1, 0.2, -0.3));
        for _ in 0..10 {
            assert_abs_diff_eq!(s.sense(&w).to_vector(), w.to_vector(), epsilon = 1e-12);
        }
    }

    #[test]
    fn sensor_step_response() {
        let mut s = Sensor::new(SensorModel { noise_std: [0.0; 6], filter_window: 4, rng_seed: 0 }).unwrap();
        let zero = Wrench::zero();
        for _ in 0..4 {
            s.sense(&zero);
        }
        let step = Wrench::from_vector(&Vector6::repeat(1.0));
        let outs: Vec<f64> = (0..4).map(|_| s.sense(&step).f.x).collect();
        assert_abs_diff_eq!(outs[0], 0.25);
        assert_abs_diff_eq!(outs[2], 0.75);
        assert_abs_diff_eq!(outs[3], 1.0);
    }

    #[test]
    fn sensor_average_converges() {
        let sigma = 0.5;
        let mut s = Sensor::new(SensorModel { noise_std: [sigma; 6], filter_window: 200, rng_seed: 11 }).unwrap();
        let w = Wrench::from_vector(&Vector6::new(2.0, 0.0, -1.0, 0.0, 0.3, 0.0));
        let out = s.settle(&w);
        let bound = 3.0 * sigma / 200f64.sqrt();
        for i in 0..6 {
            assert!((out.to_vector()[i] - w.to_vector()[i]).abs() < bound);
        }
    }

    #[test]
    fn sensor_is_reproducible() {
        let m = SensorModel { noise_std: [0.1; 6], filter_window: 5, rng_seed: 42 };
        let (mut a, mut b) = (Sensor::new(m.clone()).unwrap(), Sensor::new(m).unwrap());
        let w = Wrench::zero();
        for _ in 0..20 {
            assert_eq!(a.sense(&w), b.sense(&w));
        }
    }

    #[test]
    fn zero_window_rejected() {
        assert!(Sensor::new(SensorModel { filter_window: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn scene_json_round_trip() {
        let scene = make_scenario(&ScenarioSpec::default_for(ScenarioKind::Membrane)).unwrap();
        let s = serde_json::to_string(&scene).unwrap();
        let back = Scene::from_json(&s).unwrap();
        assert_eq!(back, scene);
    }
}
