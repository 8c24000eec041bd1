//! Information-theoretic functionals on states, ensembles and classical
//! tables, plus the measurement search behind accessible-information and
//! Shannon-distinguishability lower bounds.
//!
//! All logarithms are base 2.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::qmatrix::{
    c, eigh, eigvalsh, projector, singular_values, spectral_apply, CMatrix, CVector, DensityMatrix, Povm, QError,
    Result, C64,
};

/// Eigenvalues of `b` below this are treated as outside its support.
pub const SUPPORT_TOL: f64 = 1e-12;
/// Agreement required between the two Holevo formulas.
pub const HOLEVO_AGREEMENT_TOL: f64 = 1e-8;

fn xlog2x(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

/// Shannon entropy of a (possibly subnormalized) weight vector, `−Σ p log p`.
pub fn shannon_entropy(p: impl IntoIterator<Item = f64>) -> f64 {
    -p.into_iter().map(xlog2x).sum::<f64>()
}

pub fn binary_entropy(p: f64) -> f64 {
    shannon_entropy([p, 1.0 - p])
}

// ---------------------------------------------------------------------------
// operator-level functionals (Hermitian / PSD matrices, any trace)
// ---------------------------------------------------------------------------

/// Sum of singular values of a Hermitian matrix.
pub fn trace_norm(h: &CMatrix) -> f64 {
    eigvalsh(h).iter().map(|v| v.abs()).sum()
}

fn clamped_sqrt(x: f64) -> f64 {
    if x > 1e-15 {
        x.sqrt()
    } else {
        0.0
    }
}

/// `Tr|√a √b|` for PSD operators; the square root of the fidelity when both
/// have unit trace.
pub fn root_fidelity_op(a: &CMatrix, b: &CMatrix) -> f64 {
    // singular values of √a √b avoid square-rooting eigenvalue noise near zero
    let sa = spectral_apply(a, clamped_sqrt);
    let sb = spectral_apply(b, clamped_sqrt);
    singular_values(&(sa * sb)).iter().sum()
}

/// `−Tr A log A` for a PSD operator.
pub fn entropy_op(a: &CMatrix) -> f64 {
    shannon_entropy(eigvalsh(a))
}

/// `Tr a (log a − log b)` for PSD operators; `+∞` when `a` has weight
/// outside the support of `b`. Not clamped: for subnormalized blocks the
/// value may be negative.
pub fn relative_entropy_op(a: &CMatrix, b: &CMatrix) -> f64 {
    let (vals_b, vecs_b) = eigh(b);
    let mut cross = 0.0;
    for (j, &lam) in vals_b.iter().enumerate() {
        let v = vecs_b.column(j);
        let w = (v.adjoint() * a * v)[(0, 0)].re;
        if lam < SUPPORT_TOL {
            if w > 1e-10 {
                return f64::INFINITY;
            }
        } else {
            cross += w * lam.log2();
        }
    }
    let self_term = eigvalsh(a).into_iter().map(xlog2x).sum::<f64>();
    self_term - cross
}

// ---------------------------------------------------------------------------
// state-level functionals
// ---------------------------------------------------------------------------

fn same_dim(a: &DensityMatrix, b: &DensityMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        Err(QError::DimensionMismatch(a.dim(), b.dim()))
    } else {
        Ok(())
    }
}

/// `‖a − b‖₁`, ranging over `[0, 2]`.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    same_dim(a, b)?;
    Ok(trace_norm(&(a.matrix() - b.matrix())))
}

/// Squared Uhlmann fidelity `(Tr√(√a b √a))²`.
pub fn fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    same_dim(a, b)?;
    Ok(root_fidelity_op(a.matrix(), b.matrix()).powi(2).min(1.0))
}

pub fn von_neumann_entropy(rho: &DensityMatrix) -> f64 {
    entropy_op(rho.matrix()).max(0.0)
}

/// Quantum relative entropy in bits; `f64::INFINITY` when the support of
/// `a` is not contained in that of `b`.
pub fn relative_entropy(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    same_dim(a, b)?;
    Ok(relative_entropy_op(a.matrix(), b.matrix()).max(0.0))
}

// ---------------------------------------------------------------------------
// ensembles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EnsembleEntry {
    pub label: String,
    pub prob: f64,
    pub state: DensityMatrix,
}

/// A finite classical-quantum ensemble `{q_x, ρ_x}`.
#[derive(Debug, Clone)]
pub struct CqEnsemble {
    entries: Vec<EnsembleEntry>,
}

impl CqEnsemble {
    pub fn new(entries: Vec<EnsembleEntry>) -> Result<Self> {
        let first = entries.first().ok_or(QError::Empty)?;
        let d = first.state.dim();
        let mut labels = BTreeSet::new();
        let mut total = 0.0;
        for e in &entries {
            if e.state.dim() != d {
                return Err(QError::DimensionMismatch(e.state.dim(), d));
            }
            if !(0.0..=1.0 + 1e-12).contains(&e.prob) {
                return Err(QError::BadProbabilities(format!("{} outside [0,1]", e.prob)));
            }
            if !labels.insert(e.label.clone()) {
                return Err(QError::DuplicateLabel);
            }
            total += e.prob;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(QError::BadProbabilities(format!("sum {total}")));
        }
        Ok(Self { entries })
    }

    /// Builds an ensemble with labels `0, 1, ...`.
    pub fn from_pairs(pairs: Vec<(f64, DensityMatrix)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .enumerate()
                .map(|(i, (prob, state))| EnsembleEntry {
                    label: i.to_string(),
                    prob,
                    state,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[EnsembleEntry] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries[0].state.dim()
    }

    pub fn average(&self) -> CMatrix {
        let d = self.dim();
        self.entries
            .iter()
            .fold(CMatrix::zeros(d, d), |acc, e| acc + e.state.matrix() * c(e.prob))
    }

    pub(crate) fn weighted_ops(&self) -> Vec<CMatrix> {
        self.entries.iter().map(|e| e.state.matrix() * c(e.prob)).collect()
    }
}

/// Holevo information from both the entropy-difference and the
/// average-relative-entropy forms, returned as `(entropy_form, rel_form)`.
pub fn holevo_both_forms(weighted: &[(f64, &CMatrix)]) -> (f64, f64) {
    let d = weighted[0].1.nrows();
    let avg = weighted
        .iter()
        .fold(CMatrix::zeros(d, d), |acc, (q, rho)| acc + *rho * c(*q));
    let mut mean_entropy = 0.0;
    let mut mean_rel = 0.0;
    for (q, rho) in weighted {
        if *q <= 0.0 {
            continue;
        }
        mean_entropy += q * entropy_op(rho);
        mean_rel += q * relative_entropy_op(rho, &avg);
    }
    (entropy_op(&avg) - mean_entropy, mean_rel)
}

/// Holevo information `S(Σ q ρ) − Σ q S(ρ)`. The average relative entropy
/// to the mean state is computed as well and must agree within `1e-8`.
pub fn holevo_chi(e: &CqEnsemble) -> Result<f64> {
    let pairs: Vec<(f64, &CMatrix)> = e.entries.iter().map(|x| (x.prob, x.state.matrix())).collect();
    let (a, b) = holevo_both_forms(&pairs);
    if (a - b).is_nan() || (a - b).abs() > HOLEVO_AGREEMENT_TOL {
        return Err(QError::Inconsistent(format!(
            "Holevo forms disagree: entropy {a} vs relative entropy {b}"
        )));
    }
    Ok(a.max(0.0))
}

/// Mutual information of a joint probability matrix `p[x][y]`.
pub fn joint_mutual_info(joint: &[Vec<f64>]) -> f64 {
    let nx = joint.len();
    if nx == 0 {
        return 0.0;
    }
    let ny = joint[0].len();
    let px: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let py: Vec<f64> = (0..ny).map(|y| joint.iter().map(|r| r[y]).sum()).collect();
    let mut i = 0.0;
    for x in 0..nx {
        for y in 0..ny {
            let p = joint[x][y];
            if p > 0.0 && px[x] > 0.0 && py[y] > 0.0 {
                i += p * (p / (px[x] * py[y])).log2();
            }
        }
    }
    i.max(0.0)
}

fn mutual_info_ops(weighted: &[CMatrix], elements: &[CMatrix]) -> f64 {
    let joint: Vec<Vec<f64>> = weighted
        .iter()
        .map(|w| elements.iter().map(|o| (o * w).trace().re.max(0.0)).collect())
        .collect();
    joint_mutual_info(&joint)
}

/// `I(X:Y)` for the joint table `Pr(x, y) = q_x Tr(O_y ρ_x)`.
pub fn measurement_mutual_info(e: &CqEnsemble, m: &Povm) -> Result<f64> {
    if e.dim() != m.dim() {
        return Err(QError::DimensionMismatch(e.dim(), m.dim()));
    }
    Ok(mutual_info_ops(&e.weighted_ops(), m.elements()))
}

// ---------------------------------------------------------------------------
// measurement search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// Rank-1 projective qubit measurements on a Fibonacci-sphere grid.
    QubitProjectiveGrid,
    /// Random rank-1 POVMs with `outcomes` elements.
    RandomRank1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementFamilyConfig {
    pub kind: FamilyKind,
    pub grid_size: usize,
    pub refinement_rounds: usize,
    pub outcomes: usize,
    pub seed: u64,
}

impl Default for MeasurementFamilyConfig {
    fn default() -> Self {
        Self {
            kind: FamilyKind::QubitProjectiveGrid,
            grid_size: 10_000,
            refinement_rounds: 3,
            outcomes: 2,
            seed: 0,
        }
    }
}

impl MeasurementFamilyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 {
            return Err(QError::BadProbabilities(format!(
                "grid size must be at least 2, got {}",
                self.grid_size
            )));
        }
        if self.outcomes == 0 {
            return Err(QError::BadProbabilities("outcome count must be positive".into()));
        }
        Ok(())
    }

    /// Random-family settings used for blocks that are not qubits.
    pub fn random_fallback(&self) -> Self {
        Self {
            kind: FamilyKind::RandomRank1,
            grid_size: if self.kind == FamilyKind::RandomRank1 { self.grid_size } else { 200 },
            ..self.clone()
        }
    }
}

/// Result of a family-restricted accessible-information search.
#[derive(Debug, Clone)]
pub struct AccessibleInfo {
    /// Best mutual information found; a lower bound on `I_acc`.
    pub lower: f64,
    /// Holevo information; an upper bound on `I_acc`.
    pub upper: f64,
    pub best_povm: Povm,
}

/// `n` points spread over the unit sphere.
pub fn fibonacci_sphere(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

fn bloch_vector(m: &CMatrix) -> [f64; 3] {
    // m = (t I + x X + y Y + z Z)/2 with t = trace
    [
        2.0 * m[(0, 1)].re,
        -2.0 * m[(0, 1)].im,
        (m[(0, 0)] - m[(1, 1)]).re,
    ]
}

fn qubit_projector_pair(n: [f64; 3]) -> [CMatrix; 2] {
    let half = 0.5;
    let p = CMatrix::from_row_slice(
        2,
        2,
        &[
            c(half * (1.0 + n[2])),
            C64::new(half * n[0], -half * n[1]),
            C64::new(half * n[0], half * n[1]),
            c(half * (1.0 - n[2])),
        ],
    );
    let q = CMatrix::identity(2, 2) - &p;
    [p, q]
}

/// Mutual information for the projective measurement along `n` on a qubit
/// ensemble given as (weight, Bloch vector scaled by weight).
fn qubit_direction_mi(ens: &[(f64, [f64; 3])], n: [f64; 3]) -> f64 {
    let joint: Vec<Vec<f64>> = ens
        .iter()
        .map(|(w, r)| {
            let dot = n[0] * r[0] + n[1] * r[1] + n[2] * r[2];
            let up = (0.5 * (w + dot)).max(0.0);
            vec![up, (w - up).max(0.0)]
        })
        .collect();
    joint_mutual_info(&joint)
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Deterministic argmax: larger value wins, ties go to the lower index.
fn better(a: (usize, f64), b: (usize, f64)) -> (usize, f64) {
    if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
        b
    } else {
        a
    }
}

fn par_argmax<T: Sync>(cands: &[T], f: impl Fn(&T) -> f64 + Sync) -> (usize, f64) {
    cands
        .par_iter()
        .enumerate()
        .map(|(i, x)| (i, f(x)))
        .reduce(|| (usize::MAX, f64::NEG_INFINITY), better)
}

/// Best projective qubit measurement over the Fibonacci grid plus local
/// refinement. Returns the direction and its mutual information.
fn qubit_grid_search(weighted: &[CMatrix], cfg: &MeasurementFamilyConfig) -> ([f64; 3], f64) {
    let ens: Vec<(f64, [f64; 3])> = weighted
        .iter()
        .map(|w| (w.trace().re, bloch_vector(w)))
        .collect();
    let mut grid = vec![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
    grid.extend(fibonacci_sphere(cfg.grid_size));
    let (idx, mut best_val) = par_argmax(&grid, |n| qubit_direction_mi(&ens, *n));
    let mut best = grid[idx];

    let mut radius = 2.0 * (4.0 * std::f64::consts::PI / cfg.grid_size as f64).sqrt();
    const STEPS: i32 = 10;
    for _ in 0..cfg.refinement_rounds {
        // orthonormal tangent frame at the current best direction
        let helper = if best[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
        let u = normalize3(cross(best, helper));
        let v = cross(best, u);
        let mut local = Vec::with_capacity(((2 * STEPS + 1) * (2 * STEPS + 1)) as usize);
        for i in -STEPS..=STEPS {
            for j in -STEPS..=STEPS {
                let a = radius * i as f64 / STEPS as f64;
                let b = radius * j as f64 / STEPS as f64;
                local.push(normalize3([
                    best[0] + a * u[0] + b * v[0],
                    best[1] + a * u[1] + b * v[1],
                    best[2] + a * u[2] + b * v[2],
                ]));
            }
        }
        let (li, lv) = par_argmax(&local, |n| qubit_direction_mi(&ens, *n));
        if lv > best_val {
            best_val = lv;
            best = local[li];
        }
        radius /= 5.0;
    }
    (best, best_val)
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Inverse square root on the support; zero elsewhere.
fn inv_sqrt_on_support(m: &CMatrix) -> CMatrix {
    spectral_apply(m, |x| if x > 1e-12 { 1.0 / x.sqrt() } else { 0.0 })
}

/// Rank-1 POVM `{S^{-1/2} v v† S^{-1/2}}` from a generating set of vectors,
/// completed on the kernel of `S`.
fn povm_from_vectors(vectors: &[CVector], d: usize) -> Vec<CMatrix> {
    let s = vectors
        .iter()
        .fold(CMatrix::zeros(d, d), |acc, v| acc + projector(v));
    let w = inv_sqrt_on_support(&s);
    let mut elements: Vec<CMatrix> = vectors.iter().map(|v| &w * projector(v) * &w).collect();
    let sum = elements.iter().fold(CMatrix::zeros(d, d), |acc, e| acc + e);
    let rest = CMatrix::identity(d, d) - sum;
    if trace_norm(&rest) > 1e-9 {
        elements.push(rest);
    }
    elements
}

/// Pretty-good measurement `ρ̄^{-1/2} q_x ρ_x ρ̄^{-1/2}`, completed on the
/// kernel of `ρ̄`.
fn pretty_good_measurement(weighted: &[CMatrix]) -> Vec<CMatrix> {
    let d = weighted[0].nrows();
    let avg = weighted.iter().fold(CMatrix::zeros(d, d), |acc, w| acc + w);
    let w = inv_sqrt_on_support(&avg);
    let mut elements: Vec<CMatrix> = weighted.iter().map(|x| &w * x * &w).collect();
    let sum = elements.iter().fold(CMatrix::zeros(d, d), |acc, e| acc + e);
    let rest = CMatrix::identity(d, d) - sum;
    if trace_norm(&rest) > 1e-9 {
        elements.push(rest);
    }
    elements.iter().map(|e| (e + e.adjoint()) * c(0.5)).collect()
}

fn random_vector(rng: &mut ChaCha8Rng, d: usize) -> CVector {
    CVector::from_fn(d, |_, _| {
        C64::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0)
    })
}

/// Local coordinate search on the generating vectors of a rank-1 POVM.
fn refine_vectors(
    weighted: &[CMatrix],
    mut vectors: Vec<CVector>,
    rounds: usize,
) -> (Vec<CVector>, f64) {
    let d = weighted[0].nrows();
    let eval = |vs: &[CVector]| mutual_info_ops(weighted, &povm_from_vectors(vs, d));
    let mut best = eval(&vectors);
    let mut step = 0.25;
    for _ in 0..rounds {
        for j in 0..vectors.len() {
            for k in 0..d {
                for delta in [c(step), c(-step), C64::new(0.0, step), C64::new(0.0, -step)] {
                    let mut trial = vectors.clone();
                    trial[j][k] += delta;
                    if trial[j].norm() < 1e-9 {
                        continue;
                    }
                    let v = eval(&trial);
                    if v > best {
                        best = v;
                        vectors = trial;
                    }
                }
            }
        }
        step /= 4.0;
    }
    (vectors, best)
}

/// Structured candidates every search starts from: the computational
/// basis, the eigenbasis of the average state and the pretty-good
/// measurement.
fn structured_candidates(weighted: &[CMatrix]) -> Vec<Vec<CMatrix>> {
    let d = weighted[0].nrows();
    let avg = weighted.iter().fold(CMatrix::zeros(d, d), |acc, w| acc + w);
    let (_, eigvecs) = eigh(&avg);
    vec![
        Povm::computational(d).elements().to_vec(),
        (0..d).map(|j| projector(&eigvecs.column(j).into_owned())).collect(),
        pretty_good_measurement(weighted),
    ]
}

fn weighted_holevo(weighted: &[CMatrix]) -> f64 {
    let normalized: Vec<(f64, CMatrix)> = weighted
        .iter()
        .map(|w| (w.trace().re, w.clone()))
        .filter(|(t, _)| *t > 0.0)
        .map(|(t, w)| (t, w * c(1.0 / t)))
        .collect();
    let total: f64 = normalized.iter().map(|(t, _)| t).sum();
    let pairs: Vec<(f64, &CMatrix)> = normalized.iter().map(|(t, w)| (t / total, w)).collect();
    if pairs.is_empty() {
        return 0.0;
    }
    holevo_both_forms(&pairs).0
}

/// Family-restricted maximization of `I(X:Y)` over measurements, on an
/// ensemble given as weighted operators `q_x ρ_x`.
pub(crate) fn best_measurement(weighted: &[CMatrix], cfg: &MeasurementFamilyConfig) -> (Vec<CMatrix>, f64) {
    let d = weighted[0].nrows();
    if d == 1 {
        return (vec![CMatrix::identity(1, 1)], 0.0);
    }
    let structured = structured_candidates(weighted);
    let (si, sv) = structured
        .iter()
        .enumerate()
        .map(|(i, e)| (i, mutual_info_ops(weighted, e)))
        .fold((usize::MAX, f64::NEG_INFINITY), better);
    let mut best = (structured[si].clone(), sv);
    // nothing can beat the Holevo bound, e.g. for commuting states
    if sv >= weighted_holevo(weighted) - 1e-12 {
        return best;
    }

    if d == 2 && cfg.kind == FamilyKind::QubitProjectiveGrid {
        let (dir, val) = qubit_grid_search(weighted, cfg);
        if val > best.1 {
            best = (qubit_projector_pair(dir).to_vec(), val);
        }
        return best;
    }

    let cfg = cfg.random_fallback();
    let k = cfg.outcomes.max(d);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cands: Vec<Vec<CVector>> = (0..cfg.grid_size)
        .map(|_| (0..k).map(|_| random_vector(&mut rng, d)).collect())
        .collect();
    let (ri, rv) = par_argmax(&cands, |vs| mutual_info_ops(weighted, &povm_from_vectors(vs, d)));
    let (vs, refined) = refine_vectors(weighted, cands[ri].clone(), cfg.refinement_rounds);
    let val = refined.max(rv);
    if val > best.1 {
        best = (povm_from_vectors(&vs, d), val);
    }
    best
}

/// Lower bound on the accessible information from a family-restricted
/// search, paired with the Holevo upper bound.
pub fn accessible_info_estimate(e: &CqEnsemble, cfg: &MeasurementFamilyConfig) -> Result<AccessibleInfo> {
    cfg.validate()?;
    let upper = holevo_chi(e)?;
    let weighted = e.weighted_ops();
    let (elements, lower) = best_measurement(&weighted, cfg);
    let best_povm = Povm::new(elements.iter().map(|x| (x + x.adjoint()) * c(0.5)).collect())?;
    Ok(AccessibleInfo {
        lower,
        upper,
        best_povm,
    })
}

/// Accessible information about a fair coin choosing between `a` and `b`.
pub fn shannon_distinguishability(
    a: &DensityMatrix,
    b: &DensityMatrix,
    cfg: &MeasurementFamilyConfig,
) -> Result<f64> {
    same_dim(a, b)?;
    cfg.validate()?;
    let weighted = vec![a.matrix() * c(0.5), b.matrix() * c(0.5)];
    Ok(best_measurement(&weighted, cfg).1.clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// classical tables
// ---------------------------------------------------------------------------

/// Joint distribution over tuples of discrete variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalJointTable {
    arity: usize,
    probs: BTreeMap<Vec<u32>, f64>,
}

impl ClassicalJointTable {
    pub fn new(probs: BTreeMap<Vec<u32>, f64>) -> Result<Self> {
        let arity = probs.keys().next().map(Vec::len).ok_or(QError::Empty)?;
        let mut total = 0.0;
        for (k, &p) in &probs {
            if k.len() != arity {
                return Err(QError::DimensionMismatch(k.len(), arity));
            }
            if p < 0.0 {
                return Err(QError::BadProbabilities(format!("negative entry {p}")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(QError::BadProbabilities(format!("sum {total}")));
        }
        Ok(Self { arity, probs })
    }

    pub fn from_entries(entries: &[(&[u32], f64)]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, p) in entries {
            *map.entry(k.to_vec()).or_insert(0.0) += p;
        }
        Self::new(map)
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    fn marginal_entropy(&self, vars: &[usize]) -> f64 {
        let mut m: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (k, &p) in &self.probs {
            *m.entry(vars.iter().map(|&v| k[v]).collect()).or_insert(0.0) += p;
        }
        shannon_entropy(m.into_values())
    }
}

/// `I(X:Y|Z) = H(XZ) + H(YZ) − H(XYZ) − H(Z)`.
pub fn conditional_mutual_info(
    t: &ClassicalJointTable,
    x_vars: &[usize],
    y_vars: &[usize],
    z_vars: &[usize],
) -> Result<f64> {
    let mut seen = BTreeSet::new();
    for &v in x_vars.iter().chain(y_vars).chain(z_vars) {
        if v >= t.arity {
            return Err(QError::IndexOutOfRange(v, t.arity));
        }
        if !seen.insert(v) {
            return Err(QError::BadProbabilities(format!("variable {v} used twice")));
        }
    }
    let cat = |a: &[usize], b: &[usize]| -> Vec<usize> { a.iter().chain(b).copied().collect() };
    let hxz = t.marginal_entropy(&cat(x_vars, z_vars));
    let hyz = t.marginal_entropy(&cat(y_vars, z_vars));
    let hxyz = t.marginal_entropy(&cat(&cat(x_vars, y_vars), z_vars));
    let hz = t.marginal_entropy(z_vars);
    Ok((hxz + hyz - hxyz - hz).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmatrix::PureState;
    use approx::assert_abs_diff_eq;

    fn plus() -> DensityMatrix {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        DensityMatrix::from_pure(&PureState::new(CVector::from_vec(vec![c(s), c(s)])).unwrap())
    }

    fn z(i: usize) -> DensityMatrix {
        DensityMatrix::basis(2, i)
    }

    fn fast_cfg() -> MeasurementFamilyConfig {
        MeasurementFamilyConfig {
            grid_size: 2000,
            ..Default::default()
        }
    }

    /// 2x2 Hermitian eigenvalues in closed form.
    fn eig2(m: &CMatrix) -> [f64; 2] {
        let a = m[(0, 0)].re;
        let d = m[(1, 1)].re;
        let b = m[(0, 1)].norm();
        let mid = 0.5 * (a + d);
        let r = (0.25 * (a - d).powi(2) + b * b).sqrt();
        [mid - r, mid + r]
    }

    #[test]
    fn trace_distance_examples() {
        let rho = DensityMatrix::diagonal(&[0.3, 0.7]).unwrap();
        assert_abs_diff_eq!(trace_distance(&rho, &rho).unwrap(), 0.0);
        assert_abs_diff_eq!(trace_distance(&z(0), &z(1)).unwrap(), 2.0, epsilon = 1e-12);
        // oracle: closed-form eigenvalues of the 2x2 difference
        let diff = z(0).matrix() - plus().matrix();
        let oracle: f64 = eig2(&diff).iter().map(|v| v.abs()).sum();
        assert_abs_diff_eq!(oracle, 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(trace_distance(&z(0), &plus()).unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_errors() {
        let a = DensityMatrix::maximally_mixed(2);
        let b = DensityMatrix::maximally_mixed(3);
        assert!(trace_distance(&a, &b).is_err());
        assert!(fidelity(&a, &b).is_err());
        assert!(relative_entropy(&a, &b).is_err());
        let ens = CqEnsemble::from_pairs(vec![(1.0, a.clone())]).unwrap();
        assert!(measurement_mutual_info(&ens, &Povm::computational(3)).is_err());
    }

    #[test]
    fn fidelity_examples() {
        let rho = DensityMatrix::diagonal(&[0.3, 0.7]).unwrap();
        assert_abs_diff_eq!(fidelity(&rho, &rho).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fidelity(&z(0), &plus()).unwrap(), 0.5, epsilon = 1e-12);
        let mixed = DensityMatrix::maximally_mixed(2);
        assert_abs_diff_eq!(fidelity(&mixed, &z(0)).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn fidelity_matches_purification_overlap_oracle() {
        // purifications of I/2: (|0a⟩ + e^{iφ}|1b⟩)/√2 with orthonormal a, b;
        // purification of |0⟩⟨0|: |0⟩|χ⟩. Maximize |⟨ψ₁|ψ₂⟩|² over χ on a grid.
        let mut best: f64 = 0.0;
        let n = 200;
        for i in 0..=n {
            let theta = std::f64::consts::PI * i as f64 / n as f64;
            // χ = cos θ |a⟩ + sin θ |b⟩; overlap = cos θ /√2
            let ov = theta.cos() / 2f64.sqrt();
            best = best.max(ov * ov);
        }
        let f = fidelity(&DensityMatrix::maximally_mixed(2), &z(0)).unwrap();
        assert_abs_diff_eq!(f, best, epsilon = 1e-9);
    }

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(von_neumann_entropy(&plus()), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(von_neumann_entropy(&DensityMatrix::maximally_mixed(2)), 1.0, epsilon = 1e-12);
        let rho = DensityMatrix::diagonal(&[0.9, 0.1]).unwrap();
        let oracle = -(0.9f64 * 0.9f64.log2() + 0.1 * 0.1f64.log2());
        assert_abs_diff_eq!(oracle, 0.468996, epsilon = 1e-6);
        assert_abs_diff_eq!(von_neumann_entropy(&rho), oracle, epsilon = 1e-12);
    }

    #[test]
    fn relative_entropy_examples() {
        let rho = DensityMatrix::diagonal(&[0.3, 0.7]).unwrap();
        assert_abs_diff_eq!(relative_entropy(&rho, &rho).unwrap(), 0.0, epsilon = 1e-12);
        let mixed = DensityMatrix::maximally_mixed(2);
        assert_abs_diff_eq!(relative_entropy(&z(0), &mixed).unwrap(), 1.0, epsilon = 1e-12);
        assert!(relative_entropy(&z(0), &z(1)).unwrap().is_infinite());
    }

    #[test]
    fn holevo_examples() {
        let ens = CqEnsemble::from_pairs(vec![(0.5, z(0)), (0.5, z(1))]).unwrap();
        assert_abs_diff_eq!(holevo_chi(&ens).unwrap(), 1.0, epsilon = 1e-12);
        let single = CqEnsemble::from_pairs(vec![(1.0, plus())]).unwrap();
        assert_abs_diff_eq!(holevo_chi(&single).unwrap(), 0.0, epsilon = 1e-12);
        let ens = CqEnsemble::from_pairs(vec![(0.5, z(0)), (0.5, plus())]).unwrap();
        let lam = 0.5 * (1.0 + std::f64::consts::FRAC_1_SQRT_2);
        let oracle = binary_entropy(lam);
        assert_abs_diff_eq!(oracle, 0.600876, epsilon = 1e-6);
        assert_abs_diff_eq!(holevo_chi(&ens).unwrap(), oracle, epsilon = 1e-10);
    }

    #[test]
    fn ensemble_validation() {
        assert!(CqEnsemble::from_pairs(vec![(0.5, z(0)), (0.4, z(1))]).is_err());
        let dup = vec![
            EnsembleEntry { label: "a".into(), prob: 0.5, state: z(0) },
            EnsembleEntry { label: "a".into(), prob: 0.5, state: z(1) },
        ];
        assert_eq!(CqEnsemble::new(dup).unwrap_err(), QError::DuplicateLabel);
    }

    #[test]
    fn measurement_mutual_info_examples() {
        let ens = CqEnsemble::from_pairs(vec![(0.5, z(0)), (0.5, z(1))]).unwrap();
        assert_abs_diff_eq!(measurement_mutual_info(&ens, &Povm::computational(2)).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(measurement_mutual_info(&ens, &Povm::trivial(2)).unwrap(), 0.0, epsilon = 1e-12);
        // joint {(0,0):1/2, (+,0):1/4, (+,1):1/4}: 1 + h(1/4) - 3/2
        let ens = CqEnsemble::from_pairs(vec![(0.5, z(0)), (0.5, plus())]).unwrap();
        let oracle = 1.0 + binary_entropy(0.25) - 1.5;
        assert_abs_diff_eq!(oracle, 0.311278, epsilon = 1e-6);
        assert_abs_diff_eq!(measurement_mutual_info(&ens, &Povm::computational(2)).unwrap(), oracle, epsilon = 1e-12);
    }

    /// Dense scan of projective qubit measurements in the x-z plane, which
    /// contains the optimum for real symmetric pure-state pairs.
    fn plane_grid_oracle(weighted: &[CMatrix]) -> f64 {
        let n = 200_000;
        (0..n)
            .map(|i| {
                let t = std::f64::consts::PI * i as f64 / n as f64;
                let dir = [t.sin(), 0.0, t.cos()];
                mutual_info_ops(weighted, &qubit_projector_pair(dir))
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn accessible_info_examples() {
        let cfg = fast_cfg();
        let ens = CqEnsemble::from_pairs(vec![(0.5, z(0)), (0.5, z(1))]).unwrap();
        let r = accessible_info_estimate(&ens, &cfg).unwrap();
        assert_abs_diff_eq!(r.lower, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.upper, 1.0, epsilon = 1e-12);

        let single = CqEnsemble::from_pairs(vec![(1.0, plus())]).unwrap();
        let r = accessible_info_estimate(&single, &cfg).unwrap();
        assert_abs_diff_eq!(r.lower, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.upper, 0.0, epsilon = 1e-12);

        let ens = CqEnsemble::from_pairs(vec![(0.5, z(0)), (0.5, plus())]).unwrap();
        let oracle = plane_grid_oracle(&ens.weighted_ops());
        // closed form for two equiprobable pure states: 1 - h((1 - sin θ)/2)
        let closed = 1.0 - binary_entropy(0.5 * (1.0 - std::f64::consts::FRAC_1_SQRT_2));
        assert_abs_diff_eq!(oracle, closed, epsilon = 1e-9);
        assert_abs_diff_eq!(closed, 0.399124, epsilon = 1e-6);
        let r = accessible_info_estimate(&ens, &cfg).unwrap();
        assert_abs_diff_eq!(r.lower, oracle, epsilon = 1e-6);
        assert_abs_diff_eq!(r.upper, 0.600876, epsilon = 1e-6);
        let attained = measurement_mutual_info(&ens, &r.best_povm).unwrap();
        assert_abs_diff_eq!(attained, r.lower, epsilon = 1e-9);
    }

    #[test]
    fn shannon_distinguishability_examples() {
        let cfg = fast_cfg();
        let rho = DensityMatrix::diagonal(&[0.3, 0.7]).unwrap();
        assert_abs_diff_eq!(shannon_distinguishability(&rho, &rho, &cfg).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(shannon_distinguishability(&z(0), &z(1), &cfg).unwrap(), 1.0, epsilon = 1e-12);
        let sd = shannon_distinguishability(&z(0), &plus(), &cfg).unwrap();
        assert_abs_diff_eq!(sd, 0.399124, epsilon = 1e-5);
    }

    #[test]
    fn random_family_on_higher_dims() {
        let cfg = MeasurementFamilyConfig {
            kind: FamilyKind::RandomRank1,
            grid_size: 50,
            refinement_rounds: 1,
            outcomes: 3,
            seed: 7,
        };
        let ens = CqEnsemble::from_pairs(vec![
            (1.0 / 3.0, DensityMatrix::basis(3, 0)),
            (1.0 / 3.0, DensityMatrix::basis(3, 1)),
            (1.0 / 3.0, DensityMatrix::basis(3, 2)),
        ])
        .unwrap();
        let r = accessible_info_estimate(&ens, &cfg).unwrap();
        assert_abs_diff_eq!(r.lower, 3f64.log2(), epsilon = 1e-9);
        assert_abs_diff_eq!(r.upper, 3f64.log2(), epsilon = 1e-9);
    }

    #[test]
    fn family_config_validation() {
        let cfg = MeasurementFamilyConfig { grid_size: 1, ..Default::default() };
        let ens = CqEnsemble::from_pairs(vec![(1.0, z(0))]).unwrap();
        assert!(accessible_info_estimate(&ens, &cfg).is_err());
    }

    #[test]
    fn conditional_mutual_info_examples() {
        let indep = ClassicalJointTable::from_entries(&[
            (&[0, 0], 0.25),
            (&[0, 1], 0.25),
            (&[1, 0], 0.25),
            (&[1, 1], 0.25),
        ])
        .unwrap();
        assert_abs_diff_eq!(conditional_mutual_info(&indep, &[0], &[1], &[]).unwrap(), 0.0, epsilon = 1e-12);
        let copy = ClassicalJointTable::from_entries(&[(&[0, 0], 0.5), (&[1, 1], 0.5)]).unwrap();
        assert_abs_diff_eq!(conditional_mutual_info(&copy, &[0], &[1], &[]).unwrap(), 1.0, epsilon = 1e-12);
        let t = ClassicalJointTable::from_entries(&[(&[0, 0], 0.5), (&[1, 0], 0.25), (&[1, 1], 0.25)]).unwrap();
        let oracle = 1.0 + binary_entropy(0.25) - 1.5;
        assert_abs_diff_eq!(oracle, 0.311278, epsilon = 1e-6);
        assert_abs_diff_eq!(conditional_mutual_info(&t, &[0], &[1], &[]).unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn conditional_mutual_info_conditioning() {
        // Z selects whether Y copies X (z=0) or is independent noise (z=1)
        let t = ClassicalJointTable::from_entries(&[
            (&[0, 0, 0], 0.25),
            (&[1, 1, 0], 0.25),
            (&[0, 0, 1], 0.125),
            (&[0, 1, 1], 0.125),
            (&[1, 0, 1], 0.125),
            (&[1, 1, 1], 0.125),
        ])
        .unwrap();
        assert_abs_diff_eq!(conditional_mutual_info(&t, &[0], &[1], &[2]).unwrap(), 0.5, epsilon = 1e-12);
        assert!(conditional_mutual_info(&t, &[0], &[0], &[]).is_err());
        assert!(ClassicalJointTable::new(BTreeMap::new()).is_err());
    }
}
