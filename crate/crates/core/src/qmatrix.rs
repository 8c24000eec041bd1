//! Dense complex-matrix kernel: density matrices, pure states, Kraus
//! channels, POVMs, tensor products, partial traces and purification.
//!
//! Every spectral quantity in the crate goes through [`eigh`], the single
//! Hermitian eigendecomposition primitive. Square roots, logarithms and PSD
//! validation are all built on top of it.

use nalgebra::linalg::SymmetricEigen;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Largest total Hilbert-space dimension a dense operator may have.
pub const MAX_DIM: usize = 4096;
/// Hermiticity and unit-trace tolerance.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Eigenvalues in `[-PSD_TOL, 0)` are clamped to zero.
pub const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QError {
    #[error("matrix is not square: {0}x{1}")]
    NotSquare(usize, usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("trace is not 1 (got {0})")]
    InvalidTrace(f64),
    #[error("not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("vector is not normalized (norm {0})")]
    NotNormalized(f64),
    #[error("invalid subsystem factorization {dims:?} for dimension {dim}")]
    BadSubsystems { dims: Vec<usize>, dim: usize },
    #[error("dimension {0} exceeds capacity {MAX_DIM}")]
    Capacity(usize),
    #[error("subsystem index {0} out of range ({1} subsystems)")]
    IndexOutOfRange(usize, usize),
    #[error("empty subsystem selection")]
    EmptySelection,
    #[error("Kraus operators are not trace preserving (deviation {0:e})")]
    NotTracePreserving(f64),
    #[error("POVM elements do not sum to identity (deviation {0:e})")]
    NotComplete(f64),
    #[error("empty operator collection")]
    Empty,
    #[error("probabilities invalid: {0}")]
    BadProbabilities(String),
    #[error("labels are not distinct")]
    DuplicateLabel,
    #[error("numerical inconsistency: {0}")]
    Inconsistent(String),
}

pub type Result<T> = std::result::Result<T, QError>;

#[inline]
pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Eigendecomposition of a Hermitian matrix. Eigenvalues are returned in
/// ascending order together with the matching orthonormal eigenvectors as
/// columns.
pub fn eigh(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), CMatrix::zeros(0, 0));
    }
    if n == 1 {
        return (vec![m[(0, 0)].re], CMatrix::identity(1, 1));
    }
    // symmetrize so round-off in the input cannot leak an anti-Hermitian part
    let h = (m + m.adjoint()) * c(0.5);
    let frob = h.norm_squared();
    let tr = h.trace().re;
    // the QR-based solver occasionally stalls or returns non-finite values on
    // highly degenerate input, so its result is checked before use
    let (raw_vals, raw_vecs) = match SymmetricEigen::try_new(h.clone(), f64::EPSILON, SOLVER_MAX_ITER) {
        Some(eig)
            if eig.eigenvalues.iter().all(|v| v.is_finite())
                && eig.eigenvectors.iter().all(|z| z.re.is_finite() && z.im.is_finite())
                && (eig.eigenvalues.sum() - tr).abs() <= 1e-10 * frob.sqrt().max(1e-300) * n as f64
                && (eig.eigenvalues.norm_squared() - frob).abs() <= 1e-10 * frob.max(1e-300) =>
        {
            (eig.eigenvalues.iter().copied().collect::<Vec<_>>(), eig.eigenvectors)
        }
        _ => jacobi_eigh(h),
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| raw_vals[i].total_cmp(&raw_vals[j]).then(i.cmp(&j)));
    let vals = order.iter().map(|&i| raw_vals[i]).collect();
    let vecs = CMatrix::from_fn(n, n, |r, col| raw_vecs[(r, order[col])]);
    (vals, vecs)
}

const SOLVER_MAX_ITER: usize = 10_000;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Applies the 2×2 transform `u` (`[[u_pp, u_pq], [u_qp, u_qq]]`) to columns `p`, `q`.
fn rotate_columns(m: &mut CMatrix, p: usize, q: usize, u: [[C64; 2]; 2]) {
    for r in 0..m.nrows() {
        let (x, y) = (m[(r, p)], m[(r, q)]);
        m[(r, p)] = x * u[0][0] + y * u[1][0];
        m[(r, q)] = x * u[0][1] + y * u[1][1];
    }
}

/// Cyclic Jacobi eigendecomposition of a Hermitian matrix. Slower than the
/// QR-based solver but always converges; used when that solver stalls.
fn jacobi_eigh(mut a: CMatrix) -> (Vec<f64>, CMatrix) {
    let n = a.nrows();
    let mut v = CMatrix::identity(n, n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let g = a[(p, q)].norm();
                let (dp, dq) = (a[(p, p)].re.abs(), a[(q, q)].re.abs());
                if g == 0.0 || (dp + 100.0 * g == dp && dq + 100.0 * g == dq) {
                    continue;
                }
                rotated = true;
                let phase = a[(p, q)] / g;
                let theta = (a[(q, q)].re - a[(p, p)].re) / (2.0 * g);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                let ph = phase.conj();
                let u = [[c(cs), c(sn)], [-ph * sn, ph * cs]];
                rotate_columns(&mut a, p, q, u);
                for col in 0..n {
                    let (x, y) = (a[(p, col)], a[(q, col)]);
                    a[(p, col)] = u[0][0].conj() * x + u[1][0].conj() * y;
                    a[(q, col)] = u[0][1].conj() * x + u[1][1].conj() * y;
                }
                rotate_columns(&mut v, p, q, u);
            }
        }
        if !rotated {
            break;
        }
    }
    ((0..n).map(|i| a[(i, i)].re).collect(), v)
}

/// Singular values of a square or rectangular matrix, descending.
pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    let frob = m.norm_squared();
    // the QR-based SVD can also return garbage without reporting failure
    let mut vals: Vec<f64> = match m.clone().try_svd(false, false, f64::EPSILON, SOLVER_MAX_ITER) {
        Some(svd)
            if svd.singular_values.iter().all(|v| v.is_finite())
                && (svd.singular_values.norm_squared() - frob).abs() <= 1e-10 * frob.max(1e-300) =>
        {
            svd.singular_values.iter().copied().collect()
        }
        _ => jacobi_singular_values(m.clone()),
    };
    vals.sort_by(|a, b| b.total_cmp(a));
    vals
}

/// One-sided (Hestenes) Jacobi: orthogonalizes columns pairwise; the
/// singular values are the final column norms.
fn jacobi_singular_values(mut a: CMatrix) -> Vec<f64> {
    let n = a.ncols();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dotc(&a.column(q));
                let g = gamma.norm();
                if g <= f64::EPSILON * (alpha * beta).sqrt() || g == 0.0 {
                    continue;
                }
                rotated = true;
                let ph = (gamma / g).conj();
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (zeta * zeta + 1.0).sqrt());
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                rotate_columns(&mut a, p, q, [[c(cs), c(sn)], [-ph * sn, ph * cs]]);
            }
        }
        if !rotated {
            break;
        }
    }
    (0..n).map(|j| a.column(j).norm()).collect()
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn eigvalsh(m: &CMatrix) -> Vec<f64> {
    eigh(m).0
}

/// Rebuilds `V f(Λ) V†` from an eigendecomposition.
pub fn spectral_apply(m: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let (vals, vecs) = eigh(m);
    let n = vals.len();
    let mut scaled = vecs.clone();
    for (j, &v) in vals.iter().enumerate() {
        let fv = c(f(v));
        for i in 0..n {
            scaled[(i, j)] *= fv;
        }
    }
    scaled * vecs.adjoint()
}

/// Square root of a PSD matrix; negative eigenvalues are treated as zero.
pub fn sqrt_psd(m: &CMatrix) -> CMatrix {
    spectral_apply(m, |x| x.max(0.0).sqrt())
}

pub fn trace(m: &CMatrix) -> C64 {
    m.trace()
}

pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Projector `|ψ⟩⟨ψ|`.
pub fn projector(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

pub fn basis_vector(dim: usize, i: usize) -> CVector {
    let mut v = CVector::zeros(dim);
    v[i] = c(1.0);
    v
}

/// A validated density matrix with a subsystem factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: CMatrix,
    dims: Vec<usize>,
}

impl DensityMatrix {
    /// Validates `mat` as a single-system state.
    pub fn new(mat: CMatrix) -> Result<Self> {
        let d = mat.nrows();
        Self::with_dims(mat, vec![d])
    }

    /// Validates `mat` with an explicit subsystem factorization. Eigenvalues
    /// in `[-1e-9, 0)` are clamped to zero.
    pub fn with_dims(mat: CMatrix, dims: Vec<usize>) -> Result<Self> {
        let (r, cdim) = mat.shape();
        if r != cdim {
            return Err(QError::NotSquare(r, cdim));
        }
        if r > MAX_DIM {
            return Err(QError::Capacity(r));
        }
        check_dims(&dims, r)?;
        let dev = hermitian_deviation(&mat);
        if dev > HERMITIAN_TOL {
            return Err(QError::NotHermitian(dev));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > HERMITIAN_TOL || tr.im.abs() > HERMITIAN_TOL {
            return Err(QError::InvalidTrace(tr.re));
        }
        let (vals, vecs) = eigh(&mat);
        let min = vals.first().copied().unwrap_or(0.0);
        if min < -PSD_TOL {
            return Err(QError::NotPsd(min));
        }
        let mat = if min < 0.0 {
            let n = vals.len();
            let mut scaled = vecs.clone();
            for (j, &v) in vals.iter().enumerate() {
                let fv = c(v.max(0.0));
                for i in 0..n {
                    scaled[(i, j)] *= fv;
                }
            }
            scaled * vecs.adjoint()
        } else {
            (&mat + mat.adjoint()) * c(0.5)
        };
        Ok(Self { mat, dims })
    }

    pub fn from_pure(psi: &PureState) -> Self {
        Self {
            mat: projector(&psi.amps),
            dims: psi.dims.clone(),
        }
    }

    /// `|i⟩⟨i|` on a `dim`-dimensional system.
    pub fn basis(dim: usize, i: usize) -> Self {
        Self {
            mat: projector(&basis_vector(dim, i)),
            dims: vec![dim],
        }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            mat: CMatrix::identity(dim, dim) * c(1.0 / dim as f64),
            dims: vec![dim],
        }
    }

    /// Diagonal state from a probability vector.
    pub fn diagonal(probs: &[f64]) -> Result<Self> {
        let d = probs.len();
        let mat = CMatrix::from_fn(d, d, |i, j| if i == j { c(probs[i]) } else { c(0.0) });
        Self::new(mat)
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace().re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        eigvalsh(&self.mat)
    }

    /// Same matrix, new factorization.
    pub fn reshape(mut self, dims: Vec<usize>) -> Result<Self> {
        check_dims(&dims, self.dim())?;
        self.dims = dims;
        Ok(self)
    }
}

fn check_dims(dims: &[usize], dim: usize) -> Result<()> {
    let ok = !dims.is_empty()
        && dims.iter().all(|&d| d >= 1)
        && (dims.len() == 1 || dims.iter().all(|&d| d >= 2))
        && dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)) == Some(dim);
    if ok {
        Ok(())
    } else {
        Err(QError::BadSubsystems {
            dims: dims.to_vec(),
            dim,
        })
    }
}

/// A unit-norm state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amps: CVector,
    dims: Vec<usize>,
}

impl PureState {
    pub fn new(amps: CVector) -> Result<Self> {
        let d = amps.len();
        Self::with_dims(amps, vec![d])
    }

    pub fn with_dims(amps: CVector, dims: Vec<usize>) -> Result<Self> {
        check_dims(&dims, amps.len())?;
        let norm = amps.norm();
        if (norm - 1.0).abs() > HERMITIAN_TOL {
            return Err(QError::NotNormalized(norm));
        }
        Ok(Self { amps, dims })
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amps
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix::from_pure(self)
    }
}

/// Kronecker product with concatenated subsystem factorizations.
pub fn tensor(a: &DensityMatrix, b: &DensityMatrix) -> Result<DensityMatrix> {
    let dim = a
        .dim()
        .checked_mul(b.dim())
        .filter(|&d| d <= MAX_DIM)
        .ok_or(QError::Capacity(a.dim().saturating_mul(b.dim())))?;
    let mut dims: Vec<usize> = a.dims.iter().chain(&b.dims).copied().filter(|&d| d > 1).collect();
    if dims.is_empty() {
        dims.push(dim);
    }
    Ok(DensityMatrix {
        mat: kron(&a.mat, &b.mat),
        dims,
    })
}

/// Partial trace of an arbitrary square operator over the subsystems not in
/// `keep`. Kept subsystems retain their original order.
pub fn partial_trace_op(m: &CMatrix, dims: &[usize], keep: &[usize]) -> Result<CMatrix> {
    let total: usize = dims.iter().product();
    if m.nrows() != total || m.ncols() != total {
        return Err(QError::DimensionMismatch(m.nrows(), total));
    }
    if keep.is_empty() {
        return Err(QError::EmptySelection);
    }
    let nsys = dims.len();
    let mut keep_mask = vec![false; nsys];
    for &k in keep {
        if k >= nsys {
            return Err(QError::IndexOutOfRange(k, nsys));
        }
        keep_mask[k] = true;
    }
    let kept: Vec<usize> = (0..nsys).filter(|&i| keep_mask[i]).collect();
    let traced: Vec<usize> = (0..nsys).filter(|&i| !keep_mask[i]).collect();
    let dk: usize = kept.iter().map(|&i| dims[i]).product();
    let dt: usize = traced.iter().map(|&i| dims[i]).product();

    // row-major strides of the full index
    let mut strides = vec![1usize; nsys];
    for i in (0..nsys.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    let offset = |sub: &[usize], idx: usize| -> usize {
        let mut rem = idx;
        let mut off = 0;
        for &s in sub.iter().rev() {
            off += (rem % dims[s]) * strides[s];
            rem /= dims[s];
        }
        off
    };
    let kept_off: Vec<usize> = (0..dk).map(|i| offset(&kept, i)).collect();
    let traced_off: Vec<usize> = (0..dt).map(|i| offset(&traced, i)).collect();

    let mut out = CMatrix::zeros(dk, dk);
    for (i, &ri) in kept_off.iter().enumerate() {
        for (j, &cj) in kept_off.iter().enumerate() {
            let mut acc = c(0.0);
            for &t in &traced_off {
                acc += m[(ri + t, cj + t)];
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

/// Reduced state on the subsystems listed in `keep`.
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    let out = partial_trace_op(&rho.mat, &rho.dims, keep)?;
    let mut sorted = keep.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut dims: Vec<usize> = sorted.iter().map(|&k| rho.dims[k]).collect();
    if dims.len() > 1 && dims.iter().any(|&d| d < 2) {
        dims.retain(|&d| d >= 2);
        if dims.is_empty() {
            dims.push(1);
        }
    }
    Ok(DensityMatrix {
        mat: (&out + out.adjoint()) * c(0.5),
        dims,
    })
}

/// Canonical purification `Σ √λᵢ |eᵢ⟩|eᵢ⟩` with the system first and the
/// ancilla (a copy of the eigenbasis) second.
pub fn purify(rho: &DensityMatrix) -> PureState {
    let d = rho.dim();
    let (vals, vecs) = eigh(&rho.mat);
    let mut amps = CVector::zeros(d * d);
    for (i, &lam) in vals.iter().enumerate() {
        let w = lam.max(0.0).sqrt();
        if w == 0.0 {
            continue;
        }
        for s in 0..d {
            // ancilla component uses the computational basis |i⟩
            amps[s * d + i] += vecs[(s, i)] * c(w);
        }
    }
    let norm = amps.norm();
    amps /= c(norm);
    let dims = if d >= 2 { vec![d, d] } else { vec![1] };
    PureState { amps, dims }
}

/// A trace-preserving completely positive map in Kraus form.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausChannel {
    ops: Vec<CMatrix>,
    dim_in: usize,
    dim_out: usize,
}

impl KrausChannel {
    pub fn new(ops: Vec<CMatrix>) -> Result<Self> {
        let first = ops.first().ok_or(QError::Empty)?;
        let (dim_out, dim_in) = first.shape();
        let mut sum = CMatrix::zeros(dim_in, dim_in);
        for k in &ops {
            if k.shape() != (dim_out, dim_in) {
                return Err(QError::DimensionMismatch(k.ncols(), dim_in));
            }
            sum += k.adjoint() * k;
        }
        let dev = max_abs(&(sum - CMatrix::identity(dim_in, dim_in)));
        if dev > HERMITIAN_TOL {
            return Err(QError::NotTracePreserving(dev));
        }
        Ok(Self { ops, dim_in, dim_out })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            ops: vec![CMatrix::identity(dim, dim)],
            dim_in: dim,
            dim_out: dim,
        }
    }

    pub fn ops(&self) -> &[CMatrix] {
        &self.ops
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    /// `Σ Kᵢ ρ Kᵢ†` on a raw operator.
    pub fn apply_op(&self, m: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim_out, self.dim_out);
        for k in &self.ops {
            out += k * m * k.adjoint();
        }
        out
    }

    /// `id ⊗ self`, acting on the last tensor factor.
    pub fn extend_left(&self, dim: usize) -> Self {
        let id = CMatrix::identity(dim, dim);
        Self {
            ops: self.ops.iter().map(|k| kron(&id, k)).collect(),
            dim_in: dim * self.dim_in,
            dim_out: dim * self.dim_out,
        }
    }
}

pub fn apply_channel(rho: &DensityMatrix, ch: &KrausChannel) -> Result<DensityMatrix> {
    if rho.dim() != ch.dim_in {
        return Err(QError::DimensionMismatch(rho.dim(), ch.dim_in));
    }
    let out = ch.apply_op(&rho.mat);
    let dims = if ch.dim_in == ch.dim_out {
        rho.dims.clone()
    } else {
        vec![ch.dim_out]
    };
    Ok(DensityMatrix {
        mat: (&out + out.adjoint()) * c(0.5),
        dims,
    })
}

/// A positive operator-valued measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Povm {
    elements: Vec<CMatrix>,
}

impl Povm {
    pub fn new(elements: Vec<CMatrix>) -> Result<Self> {
        let first = elements.first().ok_or(QError::Empty)?;
        let d = first.nrows();
        let mut sum = CMatrix::zeros(d, d);
        for e in &elements {
            if e.shape() != (d, d) {
                return Err(QError::DimensionMismatch(e.nrows(), d));
            }
            let dev = hermitian_deviation(e);
            if dev > HERMITIAN_TOL {
                return Err(QError::NotHermitian(dev));
            }
            let min = eigvalsh(e).first().copied().unwrap_or(0.0);
            if min < -PSD_TOL {
                return Err(QError::NotPsd(min));
            }
            sum += e;
        }
        let dev = max_abs(&(sum - CMatrix::identity(d, d)));
        if dev > HERMITIAN_TOL {
            return Err(QError::NotComplete(dev));
        }
        Ok(Self { elements })
    }

    /// Projective measurement in the computational basis.
    pub fn computational(dim: usize) -> Self {
        Self {
            elements: (0..dim).map(|i| projector(&basis_vector(dim, i))).collect(),
        }
    }

    /// Projective measurement onto the columns of a unitary.
    pub fn from_basis(u: &CMatrix) -> Result<Self> {
        Self::new((0..u.ncols()).map(|j| projector(&u.column(j).into_owned())).collect())
    }

    pub fn trivial(dim: usize) -> Self {
        Self {
            elements: vec![CMatrix::identity(dim, dim)],
        }
    }

    pub fn elements(&self) -> &[CMatrix] {
        &self.elements
    }

    pub fn dim(&self) -> usize {
        self.elements[0].nrows()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// One row of a measurement outcome table.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub probability: f64,
    /// `None` when the outcome has probability below `1e-12`.
    pub post_state: Option<DensityMatrix>,
}

/// Outcome probabilities `Tr(Oₖ ρ)` and Lüders post-measurement states
/// `√Oₖ ρ √Oₖ / p`.
pub fn measure(rho: &DensityMatrix, m: &Povm) -> Result<Vec<Outcome>> {
    if rho.dim() != m.dim() {
        return Err(QError::DimensionMismatch(rho.dim(), m.dim()));
    }
    let out = m
        .elements
        .iter()
        .map(|e| {
            let p = (e * &rho.mat).trace().re.max(0.0);
            let post_state = (p >= 1e-12).then(|| {
                let r = sqrt_psd(e);
                let post = &r * &rho.mat * &r * c(1.0 / p);
                DensityMatrix {
                    mat: (&post + post.adjoint()) * c(0.5),
                    dims: rho.dims.clone(),
                }
            });
            Outcome {
                probability: p,
                post_state,
            }
        })
        .collect();
    Ok(out)
}

/// Pauli matrices `I, X, Y, Z`.
pub fn paulis() -> [CMatrix; 4] {
    let i = C64::new(0.0, 1.0);
    [
        CMatrix::identity(2, 2),
        CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]),
        CMatrix::from_row_slice(2, 2, &[c(0.0), -i, i, c(0.0)]),
        CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)]),
    ]
}

/// The maximally entangled two-qubit state `(|00⟩ + |11⟩)/√2`.
pub fn bell_phi() -> PureState {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let amps = CVector::from_vec(vec![c(s), c(0.0), c(0.0), c(s)]);
    PureState {
        amps,
        dims: vec![2, 2],
    }
}
