//! Local stiffness estimation and eigenscrew decomposition.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::env::WrenchSource;
use crate::error::{Error, Result};
use crate::screw::{delta_matrix, raw_pitch, wrench_pitch, Pitch, Pose, ScrewVector};

/// Relative asymmetry accepted by [`StiffnessMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Singular values below this fraction of `|K|` count as null directions.
pub const RANK_TOL: f64 = 1e-9;

/// Floor for `α` when the rotational block vanishes.
pub const ALPHA_MIN: f64 = 1e-3;

/// Symmetric 6×6 stiffness, `δw = -K δ` under the restoring-sign convention.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct StiffnessMatrix(Matrix6<f64>);

impl StiffnessMatrix {
    /// Accepts `m` if it is finite and symmetric within [`SYMMETRY_TOL`].
    pub fn new(m: Matrix6<f64>) -> Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("stiffness matrix must be finite"));
        }
        let asym = (m - m.transpose()).norm();
        if asym > SYMMETRY_TOL * m.norm() {
            return Err(Error::invalid(format!("stiffness matrix is not symmetric (skew norm {asym:.3e})")));
        }
        Ok(StiffnessMatrix(0.5 * (m + m.transpose())))
    }

    pub fn symmetrize(m: &Matrix6<f64>) -> Self {
        StiffnessMatrix(0.5 * (m + m.transpose()))
    }

    pub fn zeros() -> Self {
        StiffnessMatrix(Matrix6::zeros())
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.0
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn translational_block(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn rotational_block(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(3, 3).into_owned()
    }

    /// Row-major nested rows.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..6).map(|i| (0..6).map(|j| self.0[(i, j)]).collect()).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for StiffnessMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != 6 || rows.iter().any(|r| r.len() != 6) {
            return Err(Error::invalid("stiffness matrix must be 6x6"));
        }
        StiffnessMatrix::new(Matrix6::from_fn(|i, j| rows[i][j]))
    }
}

impl From<StiffnessMatrix> for Vec<Vec<f64>> {
    fn from(k: StiffnessMatrix) -> Self {
        k.rows()
    }
}

/// One screw of the decomposition with its eigenvalue and both pitch readings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eigenscrew {
    pub e: ScrewVector,
    pub lambda: f64,
    pub pitch_raw: f64,
    pub pitch_w: Pitch,
}

impl Eigenscrew {
    /// Normalizes `e` and derives both pitches from it.
    pub fn new(e: ScrewVector, lambda: f64) -> Self {
        let e = e.normalized();
        Eigenscrew { e, lambda, pitch_raw: raw_pitch(&e), pitch_w: wrench_pitch(&e) }
    }

    /// For externally measured eigendata that carries its own pitch value.
    pub fn with_pitch(e: ScrewVector, lambda: f64, pitch: f64) -> Self {
        let e = e.normalized();
        Eigenscrew { e, lambda, pitch_raw: raw_pitch(&e), pitch_w: Pitch::Finite(pitch) }
    }
}

/// A mechanical constraint: the set of screws characterizing one coupling.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub screws: Vec<Eigenscrew>,
    pub sample_count: usize,
}

impl Constraint {
    pub fn new(screws: Vec<Eigenscrew>) -> Self {
        Constraint { screws, sample_count: 1 }
    }
}

/// Which eigenproblem defines the screws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decomposition {
    /// Generalized problem `K e = λ Δ e`.
    #[default]
    Pencil,
    /// Ordinary symmetric eigenproblem `K e = λ e` in mixed units.
    Symmetric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Probe twist magnitude; the displacement is `eps * dt`.
    pub eps: f64,
    pub dt: f64,
    /// Readings averaged per probe when the source is noisy.
    pub repeats: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { eps: 2.5e-3, dt: 0.4, repeats: 16 }
    }
}

/// Estimates `K` at `z` from ± basis-twist probes of the wrench source.
pub fn probe_stiffness<S: WrenchSource>(mut source: S, z: &Pose, cfg: &ProbeConfig) -> Result<StiffnessMatrix> {
    if !(cfg.eps > 0.0 && cfg.dt > 0.0 && cfg.eps.is_finite() && cfg.dt.is_finite()) {
        return Err(Error::invalid("probe eps and dt must be positive"));
    }
    let floor = source.noise_floor();
    let repeats = if floor > 0.0 { cfg.repeats.max(1) } else { 1 };
    let h = cfg.eps * cfg.dt;
    let mut k = Matrix6::zeros();
    let mut signal: f64 = 0.0;
    for j in 0..6 {
        let mut d = Vector6::zeros();
        d[j] = h;
        let (zp, zm) = (z.oplus(&d), z.oplus(&-d));
        let mut diff = Vector6::zeros();
        for _ in 0..repeats {
            diff += source.wrench_at(&zp)?.to_vector() - source.wrench_at(&zm)?.to_vector();
        }
        diff /= repeats as f64;
        if !diff.iter().all(|x| x.is_finite()) {
            return Err(Error::SingularGeometry("non-finite wrench while probing".into()));
        }
        signal = signal.max(diff.norm());
        k.set_column(j, &(-diff / (2.0 * h)));
    }
    let floor = 4.0 * floor / (repeats as f64).sqrt();
    if floor > 0.0 && signal <= floor {
        return Err(Error::LowSignal { signal, floor });
    }
    Ok(StiffnessMatrix::symmetrize(&k))
}

/// Eigenscrews of the pencil `K e = λ Δ e`, sorted by `|λ|` descending.
///
/// Null directions of `K` are reported as `λ = 0` screws; the remaining screws
/// solve the reduced problem on the range of `K`, where `e = Δ V z` and
/// `(Vᵀ K Δ V) z = λ z`.
pub fn eigenscrew_decompose(k: &StiffnessMatrix) -> Result<Vec<Eigenscrew>> {
    decompose(k, Decomposition::Pencil)
}

pub fn decompose(k: &StiffnessMatrix, mode: Decomposition) -> Result<Vec<Eigenscrew>> {
    let m = k.matrix();
    let scale = m.norm();
    let eig = m.symmetric_eigen();
    let mut pairs: Vec<(f64, Vector6<f64>)> = Vec::with_capacity(6);
    match mode {
        Decomposition::Symmetric => {
            for i in 0..6 {
                pairs.push((eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned()));
            }
        }
        Decomposition::Pencil => {
            if scale == 0.0 {
                for i in 0..6 {
                    let mut e = Vector6::zeros();
                    e[i] = 1.0;
                    pairs.push((0.0, e));
                }
            } else {
                let tol = RANK_TOL * scale;
                let (null, range): (Vec<usize>, Vec<usize>) = (0..6).partition(|&i| eig.eigenvalues[i].abs() <= tol);
                for &i in &null {
                    pairs.push((0.0, eig.eigenvectors.column(i).into_owned()));
                }
                pairs.extend(reduced_pencil(&eig.eigenvectors, &eig.eigenvalues, &range)?);
            }
        }
    }
    let mut screws = pairs
        .into_iter()
        .map(|(lambda, e)| Ok(Eigenscrew::new(ScrewVector::from_vector(&e)?, lambda)))
        .collect::<Result<Vec<_>>>()?;
    if mode == Decomposition::Pencil {
        let delta = delta_matrix();
        for s in &screws {
            let e = s.e.to_vector();
            let res = (m * e - s.lambda * delta * e).norm();
            if res > 1e-6 * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::Decomposition(format!("residual {res:.3e} exceeds tolerance")));
            }
        }
    }
    sort_screws(&mut screws);
    Ok(screws)
}

fn reduced_pencil(vecs: &Matrix6<f64>, vals: &Vector6<f64>, range: &[usize]) -> Result<Vec<(f64, Vector6<f64>)>> {
    let n = range.len();
    if n == 0 {
        return Ok(vec![]);
    }
    let delta = delta_matrix();
    let v = DMatrix::from_fn(6, n, |i, j| vecs[(i, range[j])]);
    let d: Vec<f64> = range.iter().map(|&i| vals[i]).collect();
    let b = v.transpose() * DMatrix::from_fn(6, 6, |i, j| delta[(i, j)]) * &v;
    let lift = |z: &DVector<f64>| -> Vector6<f64> {
        let x = &v * z;
        delta * Vector6::from_iterator(x.iter().copied())
    };
    let mut out = Vec::with_capacity(n);
    if d.iter().all(|x| *x > 0.0) {
        // A = D B is similar to the symmetric S = D^½ B D^½
        let sq: Vec<f64> = d.iter().map(|x| x.sqrt()).collect();
        let s = DMatrix::from_fn(n, n, |i, j| sq[i] * b[(i, j)] * sq[j]);
        let eig = s.symmetric_eigen();
        for c in 0..n {
            let z = DVector::from_fn(n, |i, _| sq[i] * eig.eigenvectors[(i, c)]);
            out.push((eig.eigenvalues[c], lift(&z)));
        }
    } else {
        let a = DMatrix::from_fn(n, n, |i, j| d[i] * b[(i, j)]);
        for (lambda, z) in real_eigenpairs(&a)? {
            out.push((lambda, lift(&z)));
        }
    }
    Ok(out)
}

/// Real eigenpairs of a general square matrix; fails on complex spectra.
fn real_eigenpairs(a: &DMatrix<f64>) -> Result<Vec<(f64, DVector<f64>)>> {
    let n = a.nrows();
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let complex = a.clone().complex_eigenvalues();
    if complex.iter().any(|c| c.im.abs() > 1e-9 * scale) {
        return Err(Error::Decomposition("indefinite stiffness gives complex eigenscrews".into()));
    }
    let mut vals: Vec<f64> = complex.iter().map(|c| c.re).collect();
    vals.sort_by(|x, y| x.total_cmp(y));
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && (vals[j] - vals[i]).abs() <= 1e-8 * scale {
            j += 1;
        }
        let mult = j - i;
        let lambda = vals[i..j].iter().sum::<f64>() / mult as f64;
        let shifted = a - DMatrix::identity(n, n) * lambda;
        let svd = shifted.svd(false, true);
        let vt = svd.v_t.ok_or_else(|| Error::Decomposition("SVD failed".into()))?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&p, &q| svd.singular_values[p].total_cmp(&svd.singular_values[q]));
        for &r in order.iter().take(mult) {
            out.push((lambda, vt.row(r).transpose()));
        }
        i = j;
    }
    Ok(out)
}

fn lex_cmp(a: &ScrewVector, b: &ScrewVector) -> Ordering {
    let (x, y) = (a.to_vector(), b.to_vector());
    x.iter().zip(y.iter()).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// `|λ|` descending; runs of equal `|λ|` (within 1e-9 relative) ordered lexicographically.
pub fn sort_screws(screws: &mut [Eigenscrew]) {
    screws.sort_by(|a, b| b.lambda.abs().total_cmp(&a.lambda.abs()));
    let top = screws.first().map_or(0.0, |s| s.lambda.abs());
    let tol = 1e-9 * top.max(f64::MIN_POSITIVE);
    let mut i = 0;
    while i < screws.len() {
        let mut j = i + 1;
        while j < screws.len() && (screws[j - 1].lambda.abs() - screws[j].lambda.abs()) <= tol {
            j += 1;
        }
        screws[i..j].sort_by(|a, b| lex_cmp(&a.e, &b.e));
        i = j;
    }
}

/// Frobenius norms of the translational and rotational diagonal blocks.
pub fn characteristic_stiffness(k: &StiffnessMatrix) -> (f64, f64) {
    (k.translational_block().norm(), k.rotational_block().norm())
}

/// Length-per-radian weight `√(k_θ / k_x)` equating elastic energies.
pub fn alpha(k_x: f64, k_th: f64) -> Result<f64> {
    if !(k_x > 0.0) {
        return Err(Error::invalid(format!("translational stiffness must be positive, got {k_x}")));
    }
    if k_th == 0.0 {
        return Ok(ALPHA_MIN);
    }
    Ok((k_th / k_x).sqrt())
}
