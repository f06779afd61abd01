//! Per-axis stiffness/motion classification and library constraint identification.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::screw::{line_angle_deg, screw_axis_line, Line, ScrewVector};
use crate::stiffness::{Constraint, Eigenscrew};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierThresholds {
    /// `|h|` below this is translational.
    pub gamma_theta: f64,
    /// `|h|` above this is rotational [m].
    pub gamma_x: f64,
    pub gamma_c_trans: f64,
    pub gamma_r_trans: f64,
    pub gamma_c_rot: f64,
    pub gamma_r_rot: f64,
    /// Ratio that counts as "much greater".
    pub dominance_ratio: f64,
    /// Relative difference that counts as "about equal".
    pub similarity_band: f64,
    pub perp_tol_deg: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for ClassifierThresholds {
    fn default() -> Self {
        ClassifierThresholds {
            gamma_theta: 0.1,
            gamma_x: 0.5,
            gamma_c_trans: 10.0,
            gamma_r_trans: 5000.0,
            gamma_c_rot: 0.05,
            gamma_r_rot: 50.0,
            dominance_ratio: 1.5,
            similarity_band: 0.35,
            perp_tol_deg: 15.0,
            r_min: 0.01,
            r_max: 0.5,
        }
    }
}

impl ClassifierThresholds {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.gamma_theta,
            self.gamma_x,
            self.gamma_c_trans,
            self.gamma_r_trans,
            self.gamma_c_rot,
            self.gamma_r_rot,
            self.dominance_ratio,
            self.similarity_band,
            self.perp_tol_deg,
            self.r_min,
            self.r_max,
        ];
        if all.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::invalid("classifier thresholds must be finite and non-negative"));
        }
        if !(self.gamma_theta < self.gamma_x) {
            return Err(Error::invalid("gamma_theta must be below gamma_x"));
        }
        if !(self.gamma_c_trans < self.gamma_r_trans && self.gamma_c_rot < self.gamma_r_rot) {
            return Err(Error::invalid("compliant bounds must be below rigid bounds"));
        }
        if !(self.dominance_ratio > 1.0) {
            return Err(Error::invalid("dominance_ratio must exceed 1"));
        }
        if !(self.r_min < self.r_max) {
            return Err(Error::invalid("r_min must be below r_max"));
        }
        Ok(())
    }

    fn much_greater(&self, a: f64, b: f64) -> bool {
        a > 0.0 && a >= self.dominance_ratio * b
    }

    fn about_equal(&self, a: f64, b: f64) -> bool {
        (a - b).abs() <= self.similarity_band * a.max(b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Rotational,
    Screw,
    Translational,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StiffnessClass {
    Free,
    Compliant,
    Rigid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisClass {
    pub motion: Motion,
    pub stiffness: StiffnessClass,
}

impl AxisClass {
    /// Name of the table cell.
    pub fn cell_name(&self) -> &'static str {
        use Motion::*;
        use StiffnessClass::*;
        match (self.stiffness, self.motion) {
            (Free, Rotational) => "Free Rotation",
            (Free, Screw) => "Free Screw",
            (Free, Translational) => "Free Translation",
            (Compliant, Rotational) => "Torsion Spring",
            (Compliant, Screw) => "Screw Spring",
            (Compliant, Translational) => "Linear Spring",
            (Rigid, Rotational) => "Rigid Rotational",
            (Rigid, Screw) => "Rigid Screw",
            (Rigid, Translational) => "Rigid Translational",
        }
    }
}

/// Motion from `|pitch_w|`, stiffness from `|λ|`. Screw-motion axes use the
/// translational bounds when force-dominant and the rotational ones otherwise.
pub fn classify_axis(s: &Eigenscrew, th: &ClassifierThresholds) -> AxisClass {
    let h = s.pitch_w.magnitude();
    let motion = if h < th.gamma_theta {
        Motion::Translational
    } else if h > th.gamma_x {
        Motion::Rotational
    } else {
        Motion::Screw
    };
    let trans = match motion {
        Motion::Translational => true,
        Motion::Rotational => false,
        Motion::Screw => s.e.force_dominant(),
    };
    let (c, r) = if trans { (th.gamma_c_trans, th.gamma_r_trans) } else { (th.gamma_c_rot, th.gamma_r_rot) };
    let l = s.lambda.abs();
    let stiffness = if l < c {
        StiffnessClass::Free
    } else if l > r {
        StiffnessClass::Rigid
    } else {
        StiffnessClass::Compliant
    };
    AxisClass { motion, stiffness }
}

/// Screws not classified as rigid.
pub fn non_rigid(screws: &[Eigenscrew], th: &ClassifierThresholds) -> Vec<Eigenscrew> {
    screws.iter().filter(|s| classify_axis(s, th).stiffness != StiffnessClass::Rigid).copied().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "label")]
pub enum ConstraintLabel {
    FlexibleHinge { axis: Line, lever_arm: f64 },
    LinearSpringConstraint { direction: Line },
    Membrane { normal: Vector3<f64> },
    Unknown { reason: String },
}

impl ConstraintLabel {
    pub fn name(&self) -> &'static str {
        match self {
            ConstraintLabel::FlexibleHinge { .. } => "FlexibleHinge",
            ConstraintLabel::LinearSpringConstraint { .. } => "LinearSpringConstraint",
            ConstraintLabel::Membrane { .. } => "Membrane",
            ConstraintLabel::Unknown { .. } => "Unknown",
        }
    }
}

/// `√(|λ_rot| / |λ_trans|)`.
pub fn lever_arm(rot_min: &Eigenscrew, trans_min: &Eigenscrew) -> Result<f64> {
    let t = trans_min.lambda.abs();
    if !(t > 0.0) {
        return Err(Error::invalid("translational eigenvalue must be nonzero"));
    }
    Ok((rot_min.lambda.abs() / t).sqrt())
}

fn by_magnitude_desc(mut v: Vec<Eigenscrew>) -> Vec<Eigenscrew> {
    v.sort_by(|a, b| b.lambda.abs().total_cmp(&a.lambda.abs()));
    v
}

fn avg_abs(v: &[Eigenscrew]) -> f64 {
    v.iter().map(|s| s.lambda.abs()).sum::<f64>() / v.len() as f64
}

fn hinge(r: &[Eigenscrew], t: &[Eigenscrew], th: &ClassifierThresholds) -> Option<ConstraintLabel> {
    let (rmin, tmin) = (r.last()?, t.last()?);
    if !(th.much_greater(avg_abs(r), rmin.lambda.abs()) && th.much_greater(avg_abs(t), tmin.lambda.abs())) {
        return None;
    }
    let (ra, ta) = (screw_axis_line(&rmin.e).ok()?, screw_axis_line(&tmin.e).ok()?);
    if (90.0 - line_angle_deg(&ra.direction, &ta.direction)).abs() > th.perp_tol_deg {
        return None;
    }
    let arm = lever_arm(rmin, tmin).ok()?;
    (th.r_min < arm && arm < th.r_max).then_some(ConstraintLabel::FlexibleHinge { axis: ra, lever_arm: arm })
}

fn linear_spring(t: &[Eigenscrew], th: &ClassifierThresholds) -> Option<ConstraintLabel> {
    let [a, b, c] = [t[0].lambda.abs(), t[1].lambda.abs(), t[2].lambda.abs()];
    let fires = th.much_greater(a, avg_abs(t)) && th.about_equal(b, c) && th.much_greater(a, b);
    fires
        .then(|| screw_axis_line(&t[0].e).ok().map(|direction| ConstraintLabel::LinearSpringConstraint { direction }))?
}

fn membrane(t: &[Eigenscrew], th: &ClassifierThresholds) -> Option<ConstraintLabel> {
    let n = t.len();
    let [a, b, c] = [t[0].lambda.abs(), t[1].lambda.abs(), t[n - 1].lambda.abs()];
    let fires = th.much_greater(avg_abs(t), c) && th.about_equal(a, b) && th.much_greater(b, c);
    fires.then(|| screw_axis_line(&t[n - 1].e).ok().map(|l| ConstraintLabel::Membrane { normal: l.direction }))?
}

/// Applies the hinge, linear-spring and membrane rules in that order.
pub fn identify_constraint(c: &Constraint, th: &ClassifierThresholds) -> ConstraintLabel {
    let usable: Vec<Eigenscrew> = c.screws.iter().filter(|s| s.lambda.is_finite()).copied().collect();
    if usable.len() < 3 {
        return ConstraintLabel::Unknown { reason: format!("{} usable screws, need at least 3", usable.len()) };
    }
    if usable.iter().all(|s| classify_axis(s, th).stiffness == StiffnessClass::Free) {
        return ConstraintLabel::Unknown { reason: "every axis is free".into() };
    }
    let (mut r, mut t) = (vec![], vec![]);
    for s in usable {
        match classify_axis(&s, th).motion {
            Motion::Rotational => r.push(s),
            Motion::Translational => t.push(s),
            Motion::Screw => {}
        }
    }
    if t.len() < 3 {
        return ConstraintLabel::Unknown { reason: format!("{} translational axes, need at least 3", t.len()) };
    }
    let (r, t) = (by_magnitude_desc(r), by_magnitude_desc(t));
    hinge(&r, &t, th)
        .or_else(|| linear_spring(&t, th))
        .or_else(|| membrane(&t, th))
        .unwrap_or_else(|| ConstraintLabel::Unknown { reason: "no library rule matched".into() })
}

/// Eigenvalues, optional pitches and axis columns as reported by an external decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eigendata {
    pub eigenvalues: Vec<f64>,
    #[serde(default)]
    pub pitches: Option<Vec<f64>>,
    pub axes: Vec<[f64; 6]>,
}

impl Eigendata {
    pub fn to_constraint(&self) -> Result<Constraint> {
        let n = self.eigenvalues.len();
        if self.axes.len() != n || self.pitches.as_ref().is_some_and(|p| p.len() != n) {
            return Err(Error::invalid("eigenvalues, pitches and axes must have equal length"));
        }
        let screws = (0..n)
            .map(|i| {
                let e = ScrewVector::try_from(self.axes[i])?;
                Ok(match &self.pitches {
                    Some(p) => Eigenscrew::with_pitch(e, self.eigenvalues[i], p[i]),
                    None => Eigenscrew::new(e, self.eigenvalues[i]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Constraint::new(screws))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::screw::{raw_pitch, Pitch};
    use nalgebra::Vector6;

    fn screw(v: [f64; 6], lambda: f64, pitch: f64) -> Eigenscrew {
        Eigenscrew::with_pitch(ScrewVector::try_from(v).unwrap(), lambda, pitch)
    }

    fn trans(dir: Vector3<f64>, lambda: f64) -> Eigenscrew {
        Eigenscrew::new(ScrewVector::new(dir, Vector3::zeros()).unwrap(), lambda)
    }

    fn rot(dir: Vector3<f64>, lambda: f64) -> Eigenscrew {
        Eigenscrew::new(ScrewVector::new(Vector3::zeros(), dir).unwrap(), lambda)
    }

    #[test]
    fn axis_examples() {
        let th = ClassifierThresholds::default();
        let s = screw([-0.648, -0.734, 0.2, 0.018, -0.004, -0.005], 1617.0, 0.0094);
        let c = classify_axis(&s, &th);
        assert_eq!(c, AxisClass { motion: Motion::Translational, stiffness: StiffnessClass::Compliant });
        assert_eq!(c.cell_name(), "Linear Spring");

        assert_eq!(classify_axis(&trans(Vector3::x(), 0.0), &th).stiffness, StiffnessClass::Free);

        let t = rot(Vector3::z(), 2.0);
        assert_eq!(t.pitch_w, Pitch::Infinite);
        let c = classify_axis(&t, &th);
        assert_eq!(c, AxisClass { motion: Motion::Rotational, stiffness: StiffnessClass::Compliant });
        assert_eq!(c.cell_name(), "Torsion Spring");
    }

    #[test]
    fn scale_moves_toward_rigid() {
        let th = ClassifierThresholds::default();
        for base in [0.01, 0.3, 7.0, 40.0, 900.0, 4000.0, 1e5] {
            for s in [trans(Vector3::y(), base), rot(Vector3::x(), base)] {
                let before = classify_axis(&s, &th).stiffness;
                for c in [1.5, 10.0, 1e3] {
                    let scaled = Eigenscrew { lambda: s.lambda * c, ..s };
                    assert!(classify_axis(&scaled, &th).stiffness >= before);
                }
            }
        }
    }

    #[test]
    fn lever_arm_examples() {
        let r = rot(Vector3::x(), 0.344);
        let t = trans(Vector3::z(), 200.3);
        assert!((lever_arm(&r, &t).unwrap() - (0.344f64 / 200.3).sqrt()).abs() < 1e-15);
        assert!((lever_arm(&r, &t).unwrap() - 0.0414).abs() < 1e-3);
        assert_eq!(lever_arm(&rot(Vector3::x(), 3.0), &trans(Vector3::z(), 3.0)).unwrap(), 1.0);
        assert!(lever_arm(&r, &trans(Vector3::z(), 0.0)).is_err());
    }

    fn hinge_like(tilt_deg: f64) -> Constraint {
        // compliant translation along z; hinge axis tilted from x toward z
        let t = tilt_deg.to_radians();
        Constraint::new(vec![
            trans(Vector3::x(), 1600.0),
            trans(Vector3::y(), 1100.0),
            trans(Vector3::z(), 200.0),
            rot(Vector3::y(), 1.2),
            rot(Vector3::z(), 1.8),
            rot(Vector3::new(t.cos(), 0.0, t.sin()), 0.344),
        ])
    }

    #[test]
    fn hinge_perpendicularity_boundary() {
        let th = ClassifierThresholds::default();
        assert_eq!(identify_constraint(&hinge_like(0.0), &th).name(), "FlexibleHinge");
        assert_eq!(identify_constraint(&hinge_like(th.perp_tol_deg - 1.0), &th).name(), "FlexibleHinge");
        assert_ne!(identify_constraint(&hinge_like(th.perp_tol_deg + 1.0), &th).name(), "FlexibleHinge");
    }

    #[test]
    fn hinge_lever_arm_bounds() {
        let th = ClassifierThresholds::default();
        let mut c = hinge_like(0.0);
        c.screws[5].lambda = 1e-3; // arm √(1e-3/200) ≈ 2.2 mm < r_min
        c.screws[3].lambda = 0.05;
        c.screws[4].lambda = 0.05;
        assert_ne!(identify_constraint(&c, &th).name(), "FlexibleHinge");
    }

    #[test]
    fn permutation_and_sign_invariance() {
        let th = ClassifierThresholds::default();
        let c = hinge_like(5.0);
        let expected = identify_constraint(&c, &th);
        let mut screws = c.screws.clone();
        screws.reverse();
        screws.rotate_left(2);
        for s in screws.iter_mut().step_by(2) {
            let flipped = ScrewVector::from_vector(&-s.e.to_vector()).unwrap();
            *s = Eigenscrew { e: flipped, lambda: -s.lambda, ..*s };
        }
        assert_eq!(identify_constraint(&Constraint::new(screws), &th), expected);
    }

    #[test]
    fn detached_is_unknown() {
        let th = ClassifierThresholds::default();
        let c = Constraint::new(
            (0..6)
                .map(|i| if i < 3 { trans(Vector3::ith(i, 1.0), 0.0) } else { rot(Vector3::ith(i - 3, 1.0), 0.0) })
                .collect(),
        );
        assert!(matches!(identify_constraint(&c, &th), ConstraintLabel::Unknown { .. }));
    }

    #[test]
    fn too_few_screws_is_unknown() {
        let th = ClassifierThresholds::default();
        let c = Constraint::new(vec![trans(Vector3::x(), 10.0), trans(Vector3::y(), 20.0)]);
        assert!(matches!(identify_constraint(&c, &th), ConstraintLabel::Unknown { .. }));
    }

    #[test]
    fn linear_spring_and_membrane_rules() {
        let th = ClassifierThresholds::default();
        let ls = Constraint::new(vec![
            trans(Vector3::x(), 1600.0),
            trans(Vector3::y(), 700.0),
            trans(Vector3::z(), 650.0),
            rot(Vector3::x(), 1.0),
            rot(Vector3::y(), 1.0),
            rot(Vector3::z(), 1.0),
        ]);
        match identify_constraint(&ls, &th) {
            ConstraintLabel::LinearSpringConstraint { direction } => assert!(direction.direction.x.abs() > 0.999),
            other => panic!("{other:?}"),
        }
        let mem = Constraint::new(vec![
            trans(Vector3::x(), 1100.0),
            trans(Vector3::y(), 1000.0),
            trans(Vector3::z(), 300.0),
            rot(Vector3::x(), 1.0),
            rot(Vector3::y(), 1.0),
            rot(Vector3::z(), 1.0),
        ]);
        match identify_constraint(&mem, &th) {
            ConstraintLabel::Membrane { normal } => assert!(normal.z.abs() > 0.999),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn eigendata_length_mismatch() {
        let d = Eigendata { eigenvalues: vec![1.0, 2.0], pitches: None, axes: vec![[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]] };
        assert!(d.to_constraint().is_err());
        let d = Eigendata { eigenvalues: vec![1.0], pitches: None, axes: vec![[0.6, 0.0, 0.0, 0.8, 0.0, 0.0]] };
        let c = d.to_constraint().unwrap();
        assert!(
            (c.screws[0].pitch_raw
                - raw_pitch(&ScrewVector::from_vector(&Vector6::new(0.6, 0.0, 0.0, 0.8, 0.0, 0.0)).unwrap()))
            .abs()
                < 1e-15
        );
    }
}
