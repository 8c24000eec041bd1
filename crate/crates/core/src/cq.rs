//! Block-diagonal classical-quantum operators `Σ_v |v⟩⟨v| ⊗ A_v`.
//!
//! Eve's views and the game states carry large classical registers. Storing
//! them as a map from classical label to the (subnormalized) quantum block
//! keeps every distinguishability computation exact while only ever
//! diagonalizing the small blocks. Blocks under different labels may have
//! different dimensions; a missing label is a zero block.

use std::collections::BTreeMap;
use std::fmt::Debug;

use crate::qinfo::{entropy_op, relative_entropy_op, root_fidelity_op, trace_norm, SUPPORT_TOL};
use crate::qmatrix::{c, CMatrix, DensityMatrix, QError, Result, MAX_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct CqState<L: Ord> {
    blocks: BTreeMap<L, CMatrix>,
}

impl<L: Ord + Clone + Debug> Default for CqState<L> {
    fn default() -> Self {
        Self::new()
    }
}

impl<L: Ord + Clone + Debug> CqState<L> {
    pub fn new() -> Self {
        Self {
            blocks: BTreeMap::new(),
        }
    }

    pub fn single(label: L, block: CMatrix) -> Self {
        let mut s = Self::new();
        s.add(label, &block);
        s
    }

    pub fn from_density(label: L, rho: &DensityMatrix) -> Self {
        Self::single(label, rho.matrix().clone())
    }

    /// Adds `block` to the block under `label`.
    pub fn add(&mut self, label: L, block: &CMatrix) {
        match self.blocks.get_mut(&label) {
            Some(existing) => *existing += block,
            None => {
                self.blocks.insert(label, block.clone());
            }
        }
    }

    pub fn add_scaled(&mut self, other: &CqState<L>, w: f64) {
        for (l, b) in &other.blocks {
            self.add(l.clone(), &(b * c(w)));
        }
    }

    pub fn scaled(&self, w: f64) -> Self {
        Self {
            blocks: self.blocks.iter().map(|(l, b)| (l.clone(), b * c(w))).collect(),
        }
    }

    pub fn blocks(&self) -> &BTreeMap<L, CMatrix> {
        &self.blocks
    }

    pub fn block(&self, label: &L) -> Option<&CMatrix> {
        self.blocks.get(label)
    }

    pub fn trace(&self) -> f64 {
        self.blocks.values().map(|b| b.trace().re).sum()
    }

    /// Rescales to unit trace; `None` for a zero operator.
    pub fn normalized(&self) -> Option<Self> {
        let t = self.trace();
        (t > 0.0).then(|| self.scaled(1.0 / t))
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.values().map(|b| b.nrows()).sum()
    }

    /// Relabels blocks, merging those that map to the same label.
    pub fn map_labels<M: Ord + Clone + Debug>(&self, f: impl Fn(&L) -> M) -> CqState<M> {
        let mut out = CqState::new();
        for (l, b) in &self.blocks {
            out.add(f(l), b);
        }
        out
    }

    /// Blocks whose label passes `keep`.
    pub fn filter(&self, keep: impl Fn(&L) -> bool) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .filter(|(l, _)| keep(l))
                .map(|(l, b)| (l.clone(), b.clone()))
                .collect(),
        }
    }

    /// Drops blocks whose trace is below `tol`.
    pub fn prune(&mut self, tol: f64) {
        self.blocks.retain(|_, b| b.trace().re.abs() > tol);
    }

    /// Dense block-diagonal matrix, labels in sorted order.
    pub fn to_dense(&self) -> Result<CMatrix> {
        let d = self.total_dim();
        if d > MAX_DIM {
            return Err(QError::Capacity(d));
        }
        let mut m = CMatrix::zeros(d, d);
        let mut off = 0;
        for b in self.blocks.values() {
            let n = b.nrows();
            m.view_mut((off, off), (n, n)).copy_from(b);
            off += n;
        }
        Ok(m)
    }

    /// Dense density matrix (requires unit trace).
    pub fn to_density_matrix(&self) -> Result<DensityMatrix> {
        DensityMatrix::new(self.to_dense()?)
    }

    /// Dense embedding into the union of both label sets, padding missing
    /// blocks with zeros of the partner's shape.
    pub fn dense_pair(a: &Self, b: &Self) -> Result<(CMatrix, CMatrix)> {
        let (x, y) = aligned(a, b)?;
        let mut da = CqState::new();
        let mut db = CqState::new();
        for (l, (p, q)) in x.into_iter().zip(y).enumerate() {
            da.add(l, &p);
            db.add(l, &q);
        }
        Ok((da.to_dense()?, db.to_dense()?))
    }
}

/// Blocks of `a` and `b` over the union of labels.
fn aligned<L: Ord + Clone + Debug>(a: &CqState<L>, b: &CqState<L>) -> Result<(Vec<CMatrix>, Vec<CMatrix>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut labels: Vec<&L> = a.blocks.keys().chain(b.blocks.keys()).collect();
    labels.sort();
    labels.dedup();
    for l in labels {
        match (a.blocks.get(l), b.blocks.get(l)) {
            (Some(x), Some(y)) => {
                if x.shape() != y.shape() {
                    return Err(QError::DimensionMismatch(x.nrows(), y.nrows()));
                }
                xs.push(x.clone());
                ys.push(y.clone());
            }
            (Some(x), None) => {
                ys.push(CMatrix::zeros(x.nrows(), x.ncols()));
                xs.push(x.clone());
            }
            (None, Some(y)) => {
                xs.push(CMatrix::zeros(y.nrows(), y.ncols()));
                ys.push(y.clone());
            }
            (None, None) => unreachable!(),
        }
    }
    Ok((xs, ys))
}

/// `‖a − b‖₁` summed over blocks.
pub fn trace_distance<L: Ord + Clone + Debug>(a: &CqState<L>, b: &CqState<L>) -> Result<f64> {
    let (xs, ys) = aligned(a, b)?;
    Ok(xs.iter().zip(&ys).map(|(x, y)| trace_norm(&(x - y))).sum())
}

/// Squared fidelity `(Σ_v Tr|√a_v √b_v|)²`.
pub fn fidelity<L: Ord + Clone + Debug>(a: &CqState<L>, b: &CqState<L>) -> Result<f64> {
    let mut root = 0.0;
    for (l, x) in &a.blocks {
        if let Some(y) = b.blocks.get(l) {
            if x.shape() != y.shape() {
                return Err(QError::DimensionMismatch(x.nrows(), y.nrows()));
            }
            root += root_fidelity_op(x, y);
        }
    }
    Ok((root * root).min(1.0))
}

pub fn entropy<L: Ord + Clone + Debug>(a: &CqState<L>) -> f64 {
    a.blocks.values().map(entropy_op).sum::<f64>().max(0.0)
}

/// `Σ_v Tr a_v (log a_v − log b_v)`; infinite when `a` has weight on a
/// block or direction outside the support of `b`.
pub fn relative_entropy<L: Ord + Clone + Debug>(a: &CqState<L>, b: &CqState<L>) -> Result<f64> {
    let mut total = 0.0;
    for (l, x) in &a.blocks {
        match b.blocks.get(l) {
            Some(y) => {
                if x.shape() != y.shape() {
                    return Err(QError::DimensionMismatch(x.nrows(), y.nrows()));
                }
                total += relative_entropy_op(x, y);
            }
            None => {
                if x.trace().re > SUPPORT_TOL {
                    return Ok(f64::INFINITY);
                }
            }
        }
    }
    Ok(total.max(0.0))
}

/// Weighted average `Σ q_x ρ_x`.
pub fn average<L: Ord + Clone + Debug>(ensemble: &[(f64, &CqState<L>)]) -> CqState<L> {
    let mut avg = CqState::new();
    for (q, s) in ensemble {
        avg.add_scaled(s, *q);
    }
    avg
}

/// Holevo information of an ensemble of block states in both forms,
/// `(entropy_difference, average_relative_entropy)`.
pub fn holevo_both_forms<L: Ord + Clone + Debug>(ensemble: &[(f64, &CqState<L>)]) -> Result<(f64, f64)> {
    let avg = average(ensemble);
    let mut mean_entropy = 0.0;
    let mut mean_rel = 0.0;
    for (q, s) in ensemble {
        if *q <= 0.0 {
            continue;
        }
        mean_entropy += q * entropy(s);
        mean_rel += q * relative_entropy(s, &avg)?;
    }
    Ok((entropy(&avg) - mean_entropy, mean_rel))
}

/// Holevo information, checked against the relative-entropy form.
pub fn holevo_chi<L: Ord + Clone + Debug>(ensemble: &[(f64, &CqState<L>)]) -> Result<f64> {
    let (a, b) = holevo_both_forms(ensemble)?;
    if (a - b).is_nan() || (a - b).abs() > crate::qinfo::HOLEVO_AGREEMENT_TOL {
        return Err(QError::Inconsistent(format!(
            "Holevo forms disagree: entropy {a} vs relative entropy {b}"
        )));
    }
    Ok(a.max(0.0))
}

/// Family-restricted lower bound on the accessible information of an
/// ensemble of block states. Measuring the classical label first loses
/// nothing, so the bound is `I(X:V) + Σ_v Pr(v) I_family(X:Y | V=v)`.
pub fn accessible_info_lower<L: Ord + Clone + Debug>(
    ensemble: &[(f64, &CqState<L>)],
    cfg: &crate::qinfo::MeasurementFamilyConfig,
) -> Result<f64> {
    cfg.validate()?;
    let mut labels: Vec<&L> = ensemble.iter().flat_map(|(_, s)| s.blocks.keys()).collect();
    labels.sort();
    labels.dedup();
    let nx = ensemble.len();
    // joint Pr(x, v) and conditional weighted operators per block
    let mut joint_xv = vec![vec![0.0; labels.len()]; nx];
    let mut total = 0.0;
    for (vi, l) in labels.iter().enumerate() {
        let mut weighted = Vec::with_capacity(nx);
        let mut shape: Option<(usize, usize)> = None;
        for (x, (q, s)) in ensemble.iter().enumerate() {
            if let Some(b) = s.blocks.get(*l) {
                if let Some(sh) = shape {
                    if sh != b.shape() {
                        return Err(QError::DimensionMismatch(b.nrows(), sh.0));
                    }
                }
                shape = Some(b.shape());
                let w = b * c(*q);
                joint_xv[x][vi] = w.trace().re.max(0.0);
                weighted.push(Some(w));
            } else {
                weighted.push(None);
            }
        }
        let (r, cdim) = shape.expect("label taken from some block");
        let weighted: Vec<CMatrix> = weighted
            .into_iter()
            .map(|w| w.unwrap_or_else(|| CMatrix::zeros(r, cdim)))
            .collect();
        let pv: f64 = weighted.iter().map(|w| w.trace().re).sum();
        if pv <= 1e-15 {
            continue;
        }
        let cond: Vec<CMatrix> = weighted.iter().map(|w| w * c(1.0 / pv)).collect();
        total += pv * crate::qinfo::best_measurement(&cond, cfg).1;
    }
    Ok(total + crate::qinfo::joint_mutual_info(&joint_xv))
}
