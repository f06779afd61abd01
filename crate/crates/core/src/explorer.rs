//! Atlas of stiffness regions built by matching local eigenscrews against known constraints.

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::classifier::{identify_constraint, non_rigid, ClassifierThresholds, ConstraintLabel};
use crate::error::{Error, Result};
use crate::screw::{Pose, ScrewVector};
use crate::stiffness::{decompose, Constraint, Decomposition, Eigenscrew, StiffnessMatrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScrewFilter {
    #[default]
    All,
    /// Drop screws classified as rigid before storing a constraint.
    NonRigid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorerConfig {
    pub gamma: f64,
    pub ema_weight: f64,
    pub mismatch_patience: usize,
    pub decomposition: Decomposition,
    pub screw_filter: ScrewFilter,
}

impl Default for ExplorerConfig {
    fn default() -> Self {
        ExplorerConfig {
            gamma: 0.25,
            ema_weight: 0.2,
            mismatch_patience: 3,
            decomposition: Decomposition::Pencil,
            screw_filter: ScrewFilter::All,
        }
    }
}

impl ExplorerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid("gamma must lie in (0, 1)"));
        }
        if !(self.ema_weight > 0.0 && self.ema_weight <= 1.0) {
            return Err(Error::invalid("ema_weight must lie in (0, 1]"));
        }
        if self.mismatch_patience == 0 {
            return Err(Error::invalid("mismatch_patience must be at least 1"));
        }
        Ok(())
    }
}

/// Sign-aligned normalized squared distance between two screws.
pub fn screw_distance(e_i: &Vector6<f64>, e_k: &Vector6<f64>) -> Result<f64> {
    let (ni, nk) = (e_i.norm(), e_k.norm());
    if !(ni > 0.0 && nk > 0.0) || !ni.is_finite() || !nk.is_finite() {
        return Err(Error::invalid("screws must be nonzero and finite"));
    }
    let (u, v) = (e_i / ni, e_k / nk);
    Ok((u - v).norm_squared().min((u + v).norm_squared()))
}

/// `(d2 < γ², d2)`.
pub fn screw_similarity(e_i: &ScrewVector, e_k: &ScrewVector, gamma: f64) -> (bool, f64) {
    let d2 = screw_distance(&e_i.to_vector(), &e_k.to_vector()).expect("screw vectors are nonzero");
    (d2 < gamma * gamma, d2)
}

/// One-to-one pairing `(constraint index, observed index, d2)` covering every
/// constraint screw, chosen greedily by ascending `d2` then index.
pub fn match_constraint(
    c: &Constraint,
    observed: &[Eigenscrew],
    cfg: &ExplorerConfig,
) -> Option<Vec<(usize, usize, f64)>> {
    if observed.is_empty() {
        return None;
    }
    let mut cand = vec![];
    for (i, s) in c.screws.iter().enumerate() {
        for (j, o) in observed.iter().enumerate() {
            let (ok, d2) = screw_similarity(&s.e, &o.e, cfg.gamma);
            if ok {
                cand.push((i, j, d2));
            }
        }
    }
    cand.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let (mut used_c, mut used_o) = (vec![false; c.screws.len()], vec![false; observed.len()]);
    let mut pairs = vec![];
    for (i, j, d2) in cand {
        if !used_c[i] && !used_o[j] {
            used_c[i] = true;
            used_o[j] = true;
            pairs.push((i, j, d2));
        }
    }
    (pairs.len() == c.screws.len()).then(|| {
        pairs.sort_by_key(|p| p.0);
        pairs
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StiffnessRegion {
    pub id: u32,
    pub poses: Vec<Pose>,
    pub constraint: Constraint,
    pub label: Option<ConstraintLabel>,
}

#[derive(Clone, Debug, PartialEq)]
struct Pending {
    z: Pose,
    screws: Vec<Eigenscrew>,
}

/// Known stiffness regions plus the run of unmatched poses since the last match.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Atlas {
    pub regions: Vec<StiffnessRegion>,
    #[serde(skip)]
    pending: Vec<Pending>,
}

impl Atlas {
    pub fn new() -> Self {
        Atlas::default()
    }

    pub fn region(&self, id: u32) -> Option<&StiffnessRegion> {
        self.regions.iter().find(|r| r.id == id)
    }

    /// Poses seen since the last match that are not yet assigned to a region.
    pub fn pending_poses(&self) -> Vec<Pose> {
        self.pending.iter().map(|p| p.z).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Decomposes `k` and assigns `z` to the first matching region, or queues it;
    /// after `mismatch_patience` consecutive misses a new region is minted.
    /// Returns the region id `z` was assigned to, if any.
    pub fn explore_step(
        &mut self,
        z: &Pose,
        k: &StiffnessMatrix,
        cfg: &ExplorerConfig,
        th: &ClassifierThresholds,
    ) -> Result<Option<u32>> {
        cfg.validate()?;
        let screws = decompose(k, cfg.decomposition)?;
        let label = Some(label_for(k, th)?);
        for region in self.regions.iter_mut() {
            if let Some(pairs) = match_constraint(&region.constraint, &screws, cfg) {
                region.poses.push(*z);
                update_constraint(&mut region.constraint, &screws, &pairs, cfg.ema_weight);
                region.label = label;
                self.pending.clear();
                return Ok(Some(region.id));
            }
        }
        self.pending.push(Pending { z: *z, screws: screws.clone() });
        if !self.regions.is_empty() && self.pending.len() < cfg.mismatch_patience {
            return Ok(None);
        }
        let stored = match cfg.screw_filter {
            ScrewFilter::All => screws,
            ScrewFilter::NonRigid => {
                let kept = non_rigid(&screws, th);
                if kept.is_empty() {
                    screws
                } else {
                    kept
                }
            }
        };
        let constraint = Constraint::new(stored);
        let id = self.regions.last().map_or(1, |r| r.id + 1);
        let mut poses = vec![];
        for p in self.pending.drain(..) {
            if match_constraint(&constraint, &p.screws, cfg).is_some() {
                poses.push(p.z);
            }
        }
        self.regions.push(StiffnessRegion { id, poses, constraint, label });
        Ok(Some(id))
    }
}

/// Library label of the most recent stiffness seen in a region, from the plain
/// eigendecomposition whose axes separate translation from rotation.
fn label_for(k: &StiffnessMatrix, th: &ClassifierThresholds) -> Result<ConstraintLabel> {
    Ok(identify_constraint(&Constraint::new(decompose(k, Decomposition::Symmetric)?), th))
}

/// Sign-aligned exponential moving average of the matched screws, renormalized.
fn update_constraint(c: &mut Constraint, observed: &[Eigenscrew], pairs: &[(usize, usize, f64)], w: f64) {
    for &(i, j, _) in pairs {
        let (old, new) = (c.screws[i], observed[j]);
        let (a, b) = (old.e.to_vector(), new.e.to_vector());
        let b = if a.dot(&b) < 0.0 { -b } else { b };
        let mixed = (1.0 - w) * a + w * b;
        if let Ok(e) = ScrewVector::from_vector(&mixed) {
            c.screws[i] = Eigenscrew::new(e, (1.0 - w) * old.lambda + w * new.lambda);
        }
    }
    c.sample_count += 1;
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix6, Vector3};

    fn unit(i: usize) -> ScrewVector {
        let mut v = Vector6::zeros();
        v[i] = 1.0;
        ScrewVector::from_vector(&v).unwrap()
    }

    #[test]
    fn similarity_examples() {
        let e = ScrewVector::new(Vector3::new(0.3, -0.2, 0.9), Vector3::new(0.1, 0.0, 0.4)).unwrap().normalized();
        assert_eq!(screw_similarity(&e, &e, 0.25), (true, 0.0));
        let neg = screw_distance(&e.to_vector(), &-e.to_vector()).unwrap();
        assert_eq!(neg, 0.0);
        let (sim, d2) = screw_similarity(&unit(0), &unit(4), 0.25);
        assert!(!sim);
        assert!((d2 - 2.0).abs() < 1e-15);
        assert!(screw_distance(&Vector6::zeros(), &unit(0).to_vector()).is_err());
    }

    fn basis_constraint() -> Constraint {
        Constraint::new((0..6).map(|i| Eigenscrew::new(unit(i), 1.0 + i as f64)).collect())
    }

    #[test]
    fn shuffled_signed_screws_match() {
        let cfg = ExplorerConfig::default();
        let c = basis_constraint();
        let mut obs: Vec<Eigenscrew> = c.screws.iter().rev().copied().collect();
        obs.rotate_left(2);
        let pairs = match_constraint(&c, &obs, &cfg).unwrap();
        assert_eq!(pairs.len(), 6);
        assert!(pairs.iter().map(|p| p.2).sum::<f64>() < 1e-15);
    }

    #[test]
    fn rotated_screw_breaks_match() {
        let cfg = ExplorerConfig::default();
        let c = basis_constraint();
        let mut obs = c.screws.clone();
        obs[0] = Eigenscrew::new(ScrewVector::new(Vector3::new(1.0, 1.0, 0.0), Vector3::zeros()).unwrap(), 1.0);
        obs[1] = Eigenscrew::new(ScrewVector::new(Vector3::new(1.0, -1.0, 0.0), Vector3::zeros()).unwrap(), 1.0);
        assert!(match_constraint(&c, &obs, &cfg).is_none());
    }

    #[test]
    fn empty_atlas_mints_and_repeat_matches() {
        let (cfg, th) = (ExplorerConfig::default(), ClassifierThresholds::default());
        let k =
            StiffnessMatrix::new(Matrix6::from_diagonal(&Vector6::new(900.0, 700.0, 200.0, 1.0, 2.0, 3.0))).unwrap();
        let mut atlas = Atlas::new();
        assert_eq!(atlas.explore_step(&Pose::identity(), &k, &cfg, &th).unwrap(), Some(1));
        assert_eq!(atlas.regions[0].poses.len(), 1);
        assert_eq!(atlas.explore_step(&Pose::identity(), &k, &cfg, &th).unwrap(), Some(1));
        assert_eq!(atlas.regions.len(), 1);
        assert_eq!(atlas.regions[0].constraint.sample_count, 2);
    }

    #[test]
    fn patience_then_mint_then_reentry() {
        let (cfg, th) = (ExplorerConfig::default(), ClassifierThresholds::default());
        let k1 =
            StiffnessMatrix::new(Matrix6::from_diagonal(&Vector6::new(900.0, 700.0, 200.0, 1.0, 2.0, 3.0))).unwrap();
        let k0 = StiffnessMatrix::zeros();
        let mut atlas = Atlas::new();
        atlas.explore_step(&Pose::identity(), &k1, &cfg, &th).unwrap();
        let ids: Vec<_> = (0..4)
            .map(|i| atlas.explore_step(&Pose::translation(0.0, 0.0, i as f64), &k0, &cfg, &th).unwrap())
            .collect();
        assert_eq!(ids, vec![None, None, Some(2), Some(2)]);
        assert_eq!(atlas.region(2).unwrap().poses.len(), 4);
        assert_eq!(atlas.explore_step(&Pose::identity(), &k1, &cfg, &th).unwrap(), Some(1));
        assert_eq!(atlas.regions.len(), 2);
    }

    #[test]
    fn ema_keeps_unit_norm() {
        let (cfg, th) = (ExplorerConfig::default(), ClassifierThresholds::default());
        let mut atlas = Atlas::new();
        let mut m = Matrix6::from_diagonal(&Vector6::new(900.0, 700.0, 200.0, 1.0, 2.0, 3.0));
        for i in 0..20 {
            m[(0, 1)] = 5.0 * i as f64;
            m[(1, 0)] = 5.0 * i as f64;
            atlas.explore_step(&Pose::identity(), &StiffnessMatrix::new(m).unwrap(), &cfg, &th).unwrap();
        }
        assert_eq!(atlas.regions.len(), 1);
        for s in &atlas.regions[0].constraint.screws {
            assert!((s.e.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn json_skips_pending() {
        let (cfg, th) = (ExplorerConfig::default(), ClassifierThresholds::default());
        let mut atlas = Atlas::new();
        let k = StiffnessMatrix::new(Matrix6::identity()).unwrap();
        atlas.explore_step(&Pose::identity(), &k, &cfg, &th).unwrap();
        let back: Atlas = serde_json::from_str(&atlas.to_json().unwrap()).unwrap();
        assert_eq!(back.regions, atlas.regions);
    }
}
