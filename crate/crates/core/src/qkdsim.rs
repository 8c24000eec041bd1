//! BB84 prepare-and-measure simulation under individual (per-signal i.i.d.)
//! attacks, tracking the exact joint state of the keys and Eve's view, and
//! construction of the real, ideal and hybrid game states.
//!
//! Per signal Alice picks a bit and a basis, Eve's channel maps the signal
//! into signal ⊗ probe, and Bob measures in a random basis. After sifting a
//! `ceil(test_fraction · s)` subset of the `s` sifted positions is
//! announced and compared; the run aborts (`M = 0`) when the observed error
//! rate exceeds the threshold or too few key bits remain. Surviving key bits
//! are hashed by a seeded Toeplitz matrix to `m_out` bits (or kept raw when
//! `m_out = 0`).
//!
//! Eve's view is stored block-diagonally: one block per value of her
//! classical registers. In [`EveView::Full`] the registers hold every
//! public message (bases, test positions, test values) and her probes for
//! all signals. [`EveView::Reduced`] keeps only the ordered key-signal bases
//! and the pass/abort flag, tracing out registers that are independent of
//! the keys given those. Both give identical distances, fidelities and
//! Holevo quantities; the full view is limited to tiny `n`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cq::CqState;
use crate::qinfo;
use crate::qmatrix::{
    bell_phi, c, kron, partial_trace, tensor, CMatrix, CVector, DensityMatrix, KrausChannel, QError, C64,
};

/// Largest number of enumerated branches in exact mode.
pub const ENUMERATION_LIMIT: u64 = 1 << 24;
/// Largest dimension of one block of Eve's view.
pub const MAX_EVE_BLOCK_DIM: usize = 1024;
/// Longest key for which all `2^m` key strings are enumerated.
pub const MAX_KEY_BITS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("enumeration of {0} branches exceeds the limit of {ENUMERATION_LIMIT}")]
    EnumerationGuard(u64),
    #[error("Eve block dimension {0} exceeds the limit of {MAX_EVE_BLOCK_DIM}")]
    EveCapacity(usize),
    #[error("record inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Quantum(#[from] QError),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EveView {
    #[default]
    Reduced,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub n: usize,
    pub test_fraction: f64,
    pub qber_threshold: f64,
    /// Output key length after hashing; 0 keeps the sifted key bits raw.
    pub m_out: usize,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub eve_view: EveView,
}

impl ProtocolConfig {
    pub fn exact(n: usize, test_fraction: f64, qber_threshold: f64, m_out: usize, seed: u64) -> Self {
        Self {
            n,
            test_fraction,
            qber_threshold,
            m_out,
            mode: Mode::Exact,
            trials: 0,
            seed,
            eve_view: EveView::Reduced,
        }
    }

    /// Number of test positions among `s` sifted ones.
    pub fn test_count(&self, s: usize) -> usize {
        if s == 0 {
            0
        } else {
            ((self.test_fraction * s as f64) - 1e-12).ceil().max(1.0) as usize
        }
    }

    fn passes(&self, errors: usize, tests: usize) -> bool {
        tests == 0 || (errors as f64) <= self.qber_threshold * tests as f64 + 1e-12
    }

    fn key_long_enough(&self, key_bits: usize) -> bool {
        if self.m_out == 0 {
            key_bits > 0
        } else {
            key_bits >= self.m_out
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(SimError::Config(m));
        if self.n < 2 {
            return fail(format!("n must be at least 2, got {}", self.n));
        }
        if self.mode == Mode::Exact && self.n > 10 {
            return fail(format!("exact mode supports n <= 10, got {}", self.n));
        }
        if self.n > 64 {
            return fail(format!("n must be at most 64, got {}", self.n));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return fail(format!("test_fraction must lie in (0,1), got {}", self.test_fraction));
        }
        if !(0.0..=0.5).contains(&self.qber_threshold) {
            return fail(format!("qber_threshold must lie in [0,0.5], got {}", self.qber_threshold));
        }
        if self.m_out > MAX_KEY_BITS {
            return fail(format!("m_out must be at most {MAX_KEY_BITS}, got {}", self.m_out));
        }
        if self.mode == Mode::MonteCarlo && self.trials == 0 {
            return fail("monte_carlo mode needs trials > 0".into());
        }
        if self.mode == Mode::MonteCarlo && self.eve_view == EveView::Full {
            return fail("the full Eve view is only available in exact mode".into());
        }
        let max_key = (0..=self.n).map(|s| s - self.test_count(s)).max().unwrap_or(0);
        if self.m_out > max_key {
            return fail(format!(
                "m_out = {} exceeds the {max_key} key bits available on every branch",
                self.m_out
            ));
        }
        if self.mode == Mode::Exact {
            let size = self.enumeration_size();
            if size > ENUMERATION_LIMIT {
                return Err(SimError::EnumerationGuard(size));
            }
        }
        Ok(())
    }

    /// Number of branches the exact enumeration visits.
    pub fn enumeration_size(&self) -> u64 {
        let n = self.n as u64;
        (0..=n)
            .map(|s| {
                let t = self.test_count(s as usize) as u64;
                let base = binomial(n, s) * (1u64 << s) * binomial(s, t);
                match self.eve_view {
                    EveView::Reduced => base,
                    EveView::Full => base * (1u64 << (n - s)) * (1u64 << (2 * t)),
                }
            })
            .sum()
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EveKind {
    None,
    InterceptResend,
    EntanglingProbe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EveStrategy {
    pub kind: EveKind,
    /// Per-signal attack probability.
    #[serde(default = "one")]
    pub p: f64,
    /// Probe coupling angle in radians (entangling probe only).
    #[serde(default)]
    pub probe_angle: f64,
}

fn one() -> f64 {
    1.0
}

impl EveStrategy {
    pub fn none() -> Self {
        Self {
            kind: EveKind::None,
            p: 0.0,
            probe_angle: 0.0,
        }
    }

    pub fn intercept_resend(p: f64) -> Self {
        Self {
            kind: EveKind::InterceptResend,
            p,
            probe_angle: 0.0,
        }
    }

    pub fn entangling_probe(theta: f64) -> Self {
        Self {
            kind: EveKind::EntanglingProbe,
            p: 1.0,
            probe_angle: theta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(SimError::Config(format!("attack probability {} outside [0,1]", self.p)));
        }
        if !self.probe_angle.is_finite() {
            return Err(SimError::Config("probe angle must be finite".into()));
        }
        Ok(())
    }

    /// Dimension of Eve's per-signal probe register.
    pub fn probe_dim(&self) -> usize {
        match self.kind {
            EveKind::None => 1,
            // no attack, then (basis, outcome) for Z0 Z1 X0 X1
            EveKind::InterceptResend => 5,
            EveKind::EntanglingProbe if self.p >= 1.0 => 2,
            // probe qubit plus a flag level for unattacked signals
            EveKind::EntanglingProbe => 3,
        }
    }

    /// Eve's per-signal action as a channel from the signal qubit into
    /// signal ⊗ probe (signal index major).
    pub fn signal_map(&self) -> Result<KrausChannel> {
        self.validate()?;
        let de = self.probe_dim();
        let embed = |signal_op: &CMatrix, probe_level: usize| -> CMatrix {
            let mut e = CMatrix::zeros(de, 1);
            e[(probe_level, 0)] = c(1.0);
            kron(signal_op, &e)
        };
        let id = CMatrix::identity(2, 2);
        let ops = match self.kind {
            EveKind::None => vec![id],
            EveKind::InterceptResend => {
                let mut ops = Vec::new();
                if self.p < 1.0 {
                    ops.push(embed(&id, 0) * c((1.0 - self.p).sqrt()));
                }
                if self.p > 0.0 {
                    let w = c((self.p / 2.0).sqrt());
                    for (bi, basis) in [Basis::Z, Basis::X].into_iter().enumerate() {
                        for e in 0..2 {
                            let v = basis.state(e as u8);
                            ops.push(embed(&(&v * v.adjoint()), 1 + 2 * bi + e) * w);
                        }
                    }
                }
                ops
            }
            EveKind::EntanglingProbe => {
                let u = controlled_rotation(self.probe_angle);
                let mut attack = CMatrix::zeros(4, 2);
                // U (I ⊗ |0⟩) restricted to probe |0⟩ input
                for s in 0..2 {
                    for out in 0..4 {
                        attack[(out, s)] = u[(out, 2 * s)];
                    }
                }
                if self.p >= 1.0 {
                    vec![attack]
                } else {
                    // lift the probe qubit into a qutrit; level 2 flags "not attacked"
                    let mut lifted = CMatrix::zeros(6, 2);
                    for out in 0..4 {
                        let (sig, e) = (out / 2, out % 2);
                        for s in 0..2 {
                            lifted[(3 * sig + e, s)] = attack[(out, s)];
                        }
                    }
                    vec![lifted * c(self.p.sqrt()), embed(&id, 2) * c((1.0 - self.p).sqrt())]
                }
            }
        };
        Ok(KrausChannel::new(ops)?)
    }
}

/// `|0⟩⟨0| ⊗ I + |1⟩⟨1| ⊗ R_y(2θ)` on signal ⊗ probe: the probe picks up
/// `cos θ |0⟩ + sin θ |1⟩` when the signal is `|1⟩`. At `θ = π/2` this is a
/// CNOT copying the Z value.
pub fn controlled_rotation(theta: f64) -> CMatrix {
    let (s, co) = theta.sin_cos();
    let mut u = CMatrix::zeros(4, 4);
    u[(0, 0)] = c(1.0);
    u[(1, 1)] = c(1.0);
    u[(2, 2)] = c(co);
    u[(3, 2)] = c(s);
    u[(2, 3)] = c(-s);
    u[(3, 3)] = c(co);
    u
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub fn state(self, bit: u8) -> CVector {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        match (self, bit) {
            (Basis::Z, 0) => CVector::from_vec(vec![c(1.0), c(0.0)]),
            (Basis::Z, _) => CVector::from_vec(vec![c(0.0), c(1.0)]),
            (Basis::X, 0) => CVector::from_vec(vec![c(s), c(s)]),
            (Basis::X, _) => CVector::from_vec(vec![c(s), c(-s)]),
        }
    }

    fn letter(self) -> char {
        match self {
            Basis::Z => 'Z',
            Basis::X => 'X',
        }
    }

    fn index(self) -> usize {
        match self {
            Basis::Z => 0,
            Basis::X => 1,
        }
    }
}

/// A key bitstring; ordered by length, then value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Key {
    pub len: u8,
    pub bits: u64,
}

impl Key {
    pub const EMPTY: Key = Key { len: 0, bits: 0 };

    pub fn new(len: usize, bits: u64) -> Self {
        Self { len: len as u8, bits }
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// All keys of length `m`.
    pub fn all(m: usize) -> impl Iterator<Item = Key> {
        (0..1u64 << m).map(move |b| Key::new(m, b))
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in (0..self.len).rev() {
            write!(f, "{}", (self.bits >> i) & 1)?;
        }
        Ok(())
    }
}

pub type KeyPair = (Key, Key);
/// Eve's state: blocks labelled by the value of her classical registers.
pub type EveState = CqState<String>;

/// Per-signal tables `W[α][β][a][b]`: Eve's unnormalized probe operator
/// jointly with Alice's bit `a` (probability ½ each) and Bob's outcome `b`,
/// given Alice's basis `α` and Bob's basis `β`.
#[derive(Debug, Clone)]
pub struct SignalTables {
    pub probe_dim: usize,
    w: [[[[CMatrix; 2]; 2]; 2]; 2],
}

impl SignalTables {
    pub fn new(eve: &EveStrategy) -> Result<Self> {
        let map = eve.signal_map()?;
        let de = eve.probe_dim();
        let bases = [Basis::Z, Basis::X];
        let zero = CMatrix::zeros(de, de);
        let mut w: [[[[CMatrix; 2]; 2]; 2]; 2] = Default::default();
        for (ai, alpha) in bases.iter().enumerate() {
            for (bi, beta) in bases.iter().enumerate() {
                for a in 0..2u8 {
                    for b in 0..2u8 {
                        let input = alpha.state(a);
                        let bob = beta.state(b);
                        let mut acc = zero.clone();
                        for k in map.ops() {
                            let psi = k * &input;
                            let phi = CVector::from_fn(de, |e, _| {
                                (0..2).map(|s| bob[s].conj() * psi[s * de + e]).sum::<C64>()
                            });
                            acc += &phi * phi.adjoint() * c(0.5);
                        }
                        w[ai][bi][a as usize][b as usize] = acc;
                    }
                }
            }
        }
        Ok(Self { probe_dim: de, w })
    }

    pub fn get(&self, alice: Basis, bob: Basis, a: u8, b: u8) -> &CMatrix {
        &self.w[alice.index()][bob.index()][a as usize][b as usize]
    }

    /// Probe operator summed over the unannounced bits.
    pub fn marginal(&self, alice: Basis, bob: Basis) -> CMatrix {
        let mut m = self.get(alice, bob, 0, 0).clone();
        m += self.get(alice, bob, 0, 1);
        m += self.get(alice, bob, 1, 0);
        m += self.get(alice, bob, 1, 1);
        m
    }

    /// Probability that a sifted signal in `basis` has `a ≠ b`.
    pub fn error_prob(&self, basis: Basis) -> f64 {
        (self.get(basis, basis, 0, 1).trace() + self.get(basis, basis, 1, 0).trace()).re
    }
}

/// Seeded Toeplitz matrix over GF(2) mapping `input` bits to `output` bits,
/// redrawn until it has full row rank. Row `i` is a bit mask over inputs.
pub fn toeplitz_hash(seed: u64, input: usize, output: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (input as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    loop {
        let diag: Vec<u8> = (0..input + output - 1).map(|_| rng.gen_range(0..2)).collect();
        let rows: Vec<u64> = (0..output)
            .map(|i| {
                (0..input).fold(0u64, |acc, j| acc | ((diag[i + input - 1 - j] as u64) << j))
            })
            .collect();
        if gf2_rank(&rows) == output {
            return rows;
        }
    }
}

fn gf2_rank(rows: &[u64]) -> usize {
    let mut rows = rows.to_vec();
    let mut rank = 0;
    for bit in 0..64 {
        if let Some(pos) = (rank..rows.len()).find(|&r| rows[r] >> bit & 1 == 1) {
            rows.swap(rank, pos);
            for r in 0..rows.len() {
                if r != rank && rows[r] >> bit & 1 == 1 {
                    rows[r] ^= rows[rank];
                }
            }
            rank += 1;
        }
    }
    rank
}

/// Column `j` of the hash as an output-bit mask (bit `i` is row `i`).
fn hash_columns(rows: &[u64], input: usize) -> Vec<u64> {
    (0..input)
        .map(|j| {
            rows.iter()
                .enumerate()
                .fold(0u64, |acc, (i, r)| acc | (((r >> j) & 1) << i))
        })
        .collect()
}

/// Joint key-pair operators for one set of key positions with the given
/// bases: `(k_A, k_B) ↦ Σ_{x_A, x_B ↦ k_A, k_B} ⊗_j W_j(x_A,j, x_B,j)`.
fn key_part(
    tables: &SignalTables,
    bases: &[Basis],
    cfg: &ProtocolConfig,
) -> Result<BTreeMap<KeyPair, CMatrix>> {
    let l = bases.len();
    if tables
        .probe_dim
        .checked_pow(l as u32)
        .is_none_or(|d| d > MAX_EVE_BLOCK_DIM)
    {
        return Err(SimError::EveCapacity(tables.probe_dim.saturating_pow(l as u32)));
    }
    let (m, columns) = if cfg.m_out == 0 {
        (l, (0..l).map(|j| 1u64 << (l - 1 - j)).collect::<Vec<_>>())
    } else {
        (cfg.m_out, hash_columns(&toeplitz_hash(cfg.seed, l, cfg.m_out), l))
    };
    if m > MAX_KEY_BITS {
        return Err(SimError::Config(format!("raw key of {m} bits is too long")));
    }
    let mut acc: BTreeMap<(u64, u64), CMatrix> = BTreeMap::new();
    acc.insert((0, 0), CMatrix::identity(1, 1));
    for (j, &basis) in bases.iter().enumerate() {
        let mut next: BTreeMap<(u64, u64), CMatrix> = BTreeMap::new();
        for ((ha, hb), op) in &acc {
            for xa in 0..2u8 {
                for xb in 0..2u8 {
                    let w = tables.get(basis, basis, xa, xb);
                    let ka = if xa == 1 { ha ^ columns[j] } else { *ha };
                    let kb = if xb == 1 { hb ^ columns[j] } else { *hb };
                    let term = kron(op, w);
                    next.entry((ka, kb))
                        .and_modify(|e| *e += &term)
                        .or_insert(term);
                }
            }
        }
        acc = next;
    }
    Ok(acc
        .into_iter()
        .map(|((a, b), op)| ((Key::new(m, a), Key::new(m, b)), op))
        .collect())
}

fn bases_label(bases: &[Basis]) -> String {
    format!("pass:{}", bases.iter().map(|b| b.letter()).collect::<String>())
}

const ABORT_LABEL: &str = "abort";

/// Error statistics of the announced test bits.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QberStats {
    /// `E[test errors] / E[test bits]`.
    pub expected_error_rate: f64,
    /// Mean observed error rate over runs with at least one test bit.
    pub mean_observed_rate: f64,
    /// Standard error of `mean_observed_rate` (Monte Carlo only; 0 when exact).
    pub std_error: f64,
    pub expected_test_bits: f64,
    /// Probability that a run has at least one test bit.
    pub prob_tested: f64,
}

/// Complete outcome of a simulated run under one attack.
#[derive(Debug, Clone)]
pub struct QkdRunRecord {
    pub length_dist: BTreeMap<usize, f64>,
    pub key_table: BTreeMap<KeyPair, f64>,
    /// Normalized `ρ_{E,k_A,k_B}` for every key pair of positive probability.
    pub eve_states: BTreeMap<KeyPair, EveState>,
    /// Entanglement-picture state of one signal pair.
    pub rho_ab_signal: DensityMatrix,
    pub qber: QberStats,
    /// Attack that produced the record; `None` for records assembled from tables.
    pub eve: Option<EveStrategy>,
}

impl QkdRunRecord {
    /// Assembles and validates a record from its tables. `length_dist` is
    /// derived from the key table.
    pub fn from_parts(
        key_table: BTreeMap<KeyPair, f64>,
        eve_states: BTreeMap<KeyPair, EveState>,
        rho_ab_signal: DensityMatrix,
        qber: QberStats,
    ) -> Result<Self> {
        let mut length_dist = BTreeMap::new();
        for ((ka, kb), &p) in &key_table {
            if ka.len != kb.len {
                return Err(SimError::Inconsistent(format!("keys {ka} and {kb} differ in length")));
            }
            *length_dist.entry(ka.len()).or_insert(0.0) += p;
        }
        let rec = Self {
            length_dist,
            key_table,
            eve_states,
            rho_ab_signal,
            qber,
            eve: None,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.key_table.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SimError::Inconsistent(format!("key table sums to {total}")));
        }
        let mut marg: BTreeMap<usize, f64> = BTreeMap::new();
        for ((ka, kb), &p) in &self.key_table {
            if p < -1e-12 {
                return Err(SimError::Inconsistent(format!("negative probability {p}")));
            }
            if ka.len != kb.len {
                return Err(SimError::Inconsistent(format!("keys {ka} and {kb} differ in length")));
            }
            if ka.is_empty() && (ka.bits != 0 || kb.bits != 0) {
                return Err(SimError::Inconsistent("malformed empty key".into()));
            }
            *marg.entry(ka.len()).or_insert(0.0) += p;
            if p > 0.0 {
                let st = self
                    .eve_states
                    .get(&(*ka, *kb))
                    .ok_or_else(|| SimError::Inconsistent(format!("no Eve state for ({ka},{kb})")))?;
                if (st.trace() - 1.0).abs() > 1e-9 {
                    return Err(SimError::Inconsistent(format!(
                        "Eve state for ({ka},{kb}) has trace {}",
                        st.trace()
                    )));
                }
            }
        }
        for (m, &p) in &self.length_dist {
            let got = marg.get(m).copied().unwrap_or(0.0);
            if (got - p).abs() > 1e-9 {
                return Err(SimError::Inconsistent(format!(
                    "Pr(M={m}) = {p} but key table gives {got}"
                )));
            }
        }
        if self.rho_ab_signal.dim() != 4 {
            return Err(SimError::Inconsistent("entanglement-picture state must be two qubits".into()));
        }
        Ok(())
    }

    pub fn prob_length(&self, m: usize) -> f64 {
        self.length_dist.get(&m).copied().unwrap_or(0.0)
    }

    /// Key lengths with positive probability.
    pub fn realized_lengths(&self) -> Vec<usize> {
        self.length_dist
            .iter()
            .filter(|(_, &p)| p > 0.0)
            .map(|(&m, _)| m)
            .collect()
    }

    /// `Pr(K_A = K_B = k)`.
    pub fn prob_equal(&self, k: Key) -> f64 {
        self.key_table.get(&(k, k)).copied().unwrap_or(0.0)
    }
}

/// Accumulated view weights for one run.
#[derive(Default)]
struct Tally {
    /// view label -> (weight, key bases of the view)
    pass: BTreeMap<String, (f64, Vec<Basis>)>,
    abort: f64,
    err_sum: f64,
    test_sum: f64,
    rate_sum: f64,
    rate_sq_sum: f64,
    tested: f64,
}

impl Tally {
    fn merge(&mut self, other: Tally) {
        for (k, (w, b)) in other.pass {
            self.pass.entry(k).and_modify(|e| e.0 += w).or_insert((w, b));
        }
        self.abort += other.abort;
        self.err_sum += other.err_sum;
        self.test_sum += other.test_sum;
        self.rate_sum += other.rate_sum;
        self.rate_sq_sum += other.rate_sq_sum;
        self.tested += other.tested;
    }
}

/// Distribution of the number of errors among independent positions.
fn error_count_dist(probs: &[f64]) -> Vec<f64> {
    let mut dist = vec![1.0];
    for &p in probs {
        let mut next = vec![0.0; dist.len() + 1];
        for (k, &q) in dist.iter().enumerate() {
            next[k] += q * (1.0 - p);
            next[k + 1] += q * p;
        }
        dist = next;
    }
    dist
}

/// Per-position sifting pattern: `None` for mismatched bases.
fn patterns(n: usize) -> Vec<Vec<Option<Basis>>> {
    let total = 3usize.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            (0..n)
                .map(|_| {
                    let v = idx % 3;
                    idx /= 3;
                    match v {
                        0 => None,
                        1 => Some(Basis::Z),
                        _ => Some(Basis::X),
                    }
                })
                .collect()
        })
        .collect()
}

fn subsets(s: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 0u64..(1u64 << s) {
        if mask.count_ones() as usize == t {
            out.push((0..s).filter(|i| mask >> i & 1 == 1).collect());
        }
    }
    out
}

fn tally_exact(cfg: &ProtocolConfig, tables: &SignalTables) -> Tally {
    let err = [tables.error_prob(Basis::Z), tables.error_prob(Basis::X)];
    let partial: Vec<Tally> = patterns(cfg.n)
        .par_iter()
        .map(|pat| {
            let mut tally = Tally::default();
            let sifted: Vec<Basis> = pat.iter().flatten().copied().collect();
            let p_pat: f64 = pat
                .iter()
                .map(|x| if x.is_none() { 0.5 } else { 0.25 })
                .product();
            let s = sifted.len();
            if s == 0 {
                tally.abort += p_pat;
                return tally;
            }
            let t = cfg.test_count(s);
            let subs = subsets(s, t);
            let p_sub = p_pat / subs.len() as f64;
            for sub in subs {
                let test_err: Vec<f64> = sub.iter().map(|&i| err[sifted[i].index()]).collect();
                let dist = error_count_dist(&test_err);
                let key_bases: Vec<Basis> = (0..s)
                    .filter(|i| !sub.contains(i))
                    .map(|i| sifted[i])
                    .collect();
                let mut p_pass = 0.0;
                for (e, &q) in dist.iter().enumerate() {
                    if cfg.passes(e, t) {
                        p_pass += q;
                    }
                    let rate = e as f64 / t as f64;
                    tally.rate_sum += p_sub * q * rate;
                    tally.rate_sq_sum += p_sub * q * rate * rate;
                }
                tally.err_sum += p_sub * test_err.iter().sum::<f64>();
                tally.test_sum += p_sub * t as f64;
                tally.tested += p_sub;
                if cfg.key_long_enough(key_bases.len()) {
                    let w = p_sub * p_pass;
                    tally.abort += p_sub - w;
                    if w > 0.0 {
                        tally
                            .pass
                            .entry(bases_label(&key_bases))
                            .and_modify(|e| e.0 += w)
                            .or_insert((w, key_bases));
                    }
                } else {
                    tally.abort += p_sub;
                }
            }
            tally
        })
        .collect();
    let mut total = Tally::default();
    for t in partial {
        total.merge(t);
    }
    total
}

const MC_CHUNK: usize = 4096;

fn tally_monte_carlo(cfg: &ProtocolConfig, tables: &SignalTables) -> (Tally, f64) {
    let err = [tables.error_prob(Basis::Z), tables.error_prob(Basis::X)];
    let chunks = cfg.trials.div_ceil(MC_CHUNK);
    let partial: Vec<Tally> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5851_F42D_4C95_7F2D).wrapping_add(ci as u64));
            let count = MC_CHUNK.min(cfg.trials - ci * MC_CHUNK);
            let w = 1.0 / cfg.trials as f64;
            let mut tally = Tally::default();
            for _ in 0..count {
                let sifted: Vec<Basis> = (0..cfg.n)
                    .filter_map(|_| match rng.gen_range(0..4) {
                        0 => Some(Basis::Z),
                        1 => Some(Basis::X),
                        _ => None,
                    })
                    .collect();
                let s = sifted.len();
                if s == 0 {
                    tally.abort += w;
                    continue;
                }
                let t = cfg.test_count(s);
                let mut is_test = vec![false; s];
                for i in sample(&mut rng, s, t).iter() {
                    is_test[i] = true;
                }
                let errors = (0..s)
                    .filter(|&i| is_test[i] && rng.gen::<f64>() < err[sifted[i].index()])
                    .count();
                let rate = errors as f64 / t as f64;
                tally.rate_sum += w * rate;
                tally.rate_sq_sum += w * rate * rate;
                tally.err_sum += w * errors as f64;
                tally.test_sum += w * t as f64;
                tally.tested += w;
                let key_bases: Vec<Basis> = (0..s).filter(|&i| !is_test[i]).map(|i| sifted[i]).collect();
                if cfg.key_long_enough(key_bases.len()) && cfg.passes(errors, t) {
                    tally
                        .pass
                        .entry(bases_label(&key_bases))
                        .and_modify(|e| e.0 += w)
                        .or_insert((w, key_bases));
                } else {
                    tally.abort += w;
                }
            }
            tally
        })
        .collect();
    let mut total = Tally::default();
    for t in partial {
        total.merge(t);
    }
    let var = (total.rate_sq_sum / total.tested - (total.rate_sum / total.tested).powi(2)).max(0.0);
    let n_tested = total.tested * cfg.trials as f64;
    let se = if n_tested > 1.0 { (var / n_tested).sqrt() } else { 0.0 };
    (total, se)
}

/// Entanglement-picture state: Alice keeps half of `Φ`, the other half
/// passes through Eve's per-signal channel, and the probe is traced out.
pub fn channel_to_ent_pair(eve: &EveStrategy) -> Result<DensityMatrix> {
    let map = eve.signal_map()?;
    let de = eve.probe_dim();
    let full = map.extend_left(2);
    let out = full.apply_op(bell_phi().to_density().matrix());
    if de == 1 {
        return Ok(DensityMatrix::with_dims(out, vec![2, 2])?);
    }
    let rho = DensityMatrix::with_dims(out, vec![2, 2, de])?;
    Ok(partial_trace(&rho, &[0, 1])?)
}

/// `F(ρ_AB^{⊗m}, Φ^{⊗m}) = F(ρ_AB, Φ)^m`. For `m ≤ 3` the power is checked
/// against a direct computation on the tensor power.
pub fn singlet_fidelity(rho_ab: &DensityMatrix, m: usize) -> Result<f64> {
    if rho_ab.dim() != 4 {
        return Err(SimError::Quantum(QError::DimensionMismatch(rho_ab.dim(), 4)));
    }
    let phi = bell_phi().to_density();
    let f1 = qinfo::fidelity(rho_ab, &phi)?;
    let fm = f1.powi(m as i32);
    if (1..=3).contains(&m) {
        let mut rho = rho_ab.clone();
        let mut target = phi.clone();
        for _ in 1..m {
            rho = tensor(&rho, rho_ab)?;
            target = tensor(&target, &phi)?;
        }
        let direct = qinfo::fidelity(&rho, &target)?;
        if (direct - fm).abs() > 1e-9 {
            return Err(SimError::Quantum(QError::Inconsistent(format!(
                "fidelity power {fm} vs direct {direct}"
            ))));
        }
    }
    Ok(fm)
}

/// One step of the purification argument behind the fidelity bound, for a
/// single signal pair measured in `basis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UhlmannStep {
    pub basis: Basis,
    /// `F(ρ_AB, Φ)`, which Uhlmann's theorem realizes as the overlap of a
    /// purification of `ρ_AB` and its optimal partner `Φ ⊗ |η⟩`.
    pub pair_fidelity: f64,
    /// Fidelity of the key-and-Eve states obtained from both purifications
    /// by measuring A and B and discarding the channel's Kraus register.
    pub measured_fidelity: f64,
}

/// Evaluates the purification argument per signal for both key bases.
/// Eve holds the probe; the Kraus index of her channel is the discarded
/// purifying register.
pub fn uhlmann_steps(eve: &EveStrategy) -> Result<Vec<UhlmannStep>> {
    let map = eve.signal_map()?;
    let de = eve.probe_dim();
    let r = map.ops().len();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    // ψ1[a, b, e, j] = K_j[(b, e), a] / √2
    let psi1 = |a: usize, b: usize, e: usize, j: usize| map.ops()[j][(b * de + e, a)] * c(s);
    // (⟨Φ| ⊗ I)|ψ1⟩ on (e, j)
    let eta = CVector::from_fn(de * r, |idx, _| {
        let (e, j) = (idx / r, idx % r);
        (psi1(0, 0, e, j) + psi1(1, 1, e, j)) * c(s)
    });
    let pair_fidelity = eta.norm_squared();
    let eve_marginal = |v: &CVector| {
        let mut m = CMatrix::zeros(de, de);
        for j in 0..r {
            let col = CVector::from_fn(de, |e, _| v[e * r + j]);
            m += &col * col.adjoint();
        }
        m
    };
    let mut out = Vec::new();
    for basis in [Basis::Z, Basis::X] {
        let mut real = CqState::<(u8, u8)>::new();
        let mut partner = CqState::<(u8, u8)>::new();
        let eta_marg = if pair_fidelity > 0.0 { eve_marginal(&eta) * c(1.0 / pair_fidelity) } else { CMatrix::zeros(de, de) };
        for a in 0..2u8 {
            let va = basis.state(a);
            for b in 0..2u8 {
                let vb = basis.state(b);
                let phi_ab = CVector::from_fn(de * r, |idx, _| {
                    let (e, j) = (idx / r, idx % r);
                    let mut acc = C64::new(0.0, 0.0);
                    for x in 0..2 {
                        for y in 0..2 {
                            acc += va[x].conj() * vb[y].conj() * psi1(x, y, e, j);
                        }
                    }
                    acc
                });
                real.add((a, b), &eve_marginal(&phi_ab));
                if a == b {
                    partner.add((a, b), &(&eta_marg * c(0.5)));
                }
            }
        }
        out.push(UhlmannStep {
            basis,
            pair_fidelity,
            measured_fidelity: crate::cq::fidelity(&real, &partner)?,
        });
    }
    Ok(out)
}

/// Runs the protocol under `eve` and returns the exact (or sampled-weight)
/// record.
pub fn run_protocol(cfg: &ProtocolConfig, eve: &EveStrategy) -> Result<QkdRunRecord> {
    cfg.validate()?;
    eve.validate()?;
    let tables = SignalTables::new(eve)?;
    let rho_ab_signal = channel_to_ent_pair(eve)?;
    if cfg.eve_view == EveView::Full {
        let mut rec = run_full_view(cfg, &tables, rho_ab_signal)?;
        rec.eve = Some(eve.clone());
        return Ok(rec);
    }
    let (tally, std_error) = match cfg.mode {
        Mode::Exact => (tally_exact(cfg, &tables), 0.0),
        Mode::MonteCarlo => tally_monte_carlo(cfg, &tables),
    };

    let views: Vec<(&String, &(f64, Vec<Basis>))> = tally.pass.iter().collect();
    let parts: Vec<Result<BTreeMap<KeyPair, CMatrix>>> = views
        .par_iter()
        .map(|(_, (_, bases))| key_part(&tables, bases, cfg))
        .collect();

    let mut joint: BTreeMap<KeyPair, EveState> = BTreeMap::new();
    for ((label, (w, _)), part) in views.iter().zip(parts) {
        for (kp, op) in part? {
            joint
                .entry(kp)
                .or_default()
                .add((*label).clone(), &(op * c(*w)));
        }
    }
    if tally.abort > 0.0 {
        joint
            .entry((Key::EMPTY, Key::EMPTY))
            .or_default()
            .add(ABORT_LABEL.to_string(), &CMatrix::from_element(1, 1, c(tally.abort)));
    }
    let qber = QberStats {
        expected_error_rate: if tally.test_sum > 0.0 { tally.err_sum / tally.test_sum } else { 0.0 },
        mean_observed_rate: if tally.tested > 0.0 { tally.rate_sum / tally.tested } else { 0.0 },
        std_error,
        expected_test_bits: tally.test_sum,
        prob_tested: tally.tested,
    };
    let mut rec = finish_record(joint, rho_ab_signal, qber)?;
    rec.eve = Some(eve.clone());
    Ok(rec)
}

fn finish_record(
    joint: BTreeMap<KeyPair, EveState>,
    rho_ab_signal: DensityMatrix,
    qber: QberStats,
) -> Result<QkdRunRecord> {
    let mut key_table = BTreeMap::new();
    let mut eve_states = BTreeMap::new();
    for (kp, st) in joint {
        let p = st.trace();
        if p <= 1e-15 {
            continue;
        }
        key_table.insert(kp, p);
        eve_states.insert(kp, st.scaled(1.0 / p));
    }
    // renormalize away accumulated round-off in the total
    let total: f64 = key_table.values().sum();
    for p in key_table.values_mut() {
        *p /= total;
    }
    QkdRunRecord::from_parts(key_table, eve_states, rho_ab_signal, qber)
}

/// Exact run keeping every public register and every probe in Eve's view.
fn run_full_view(cfg: &ProtocolConfig, tables: &SignalTables, rho_ab_signal: DensityMatrix) -> Result<QkdRunRecord> {
    let n = cfg.n;
    let de = tables.probe_dim;
    if de.checked_pow(n as u32).is_none_or(|d| d > MAX_EVE_BLOCK_DIM) {
        return Err(SimError::EveCapacity(de.saturating_pow(n as u32)));
    }
    let bases = [Basis::Z, Basis::X];
    let mut joint: BTreeMap<KeyPair, EveState> = BTreeMap::new();
    let mut err_sum = 0.0;
    let mut test_sum = 0.0;
    let mut rate_sum = 0.0;
    let mut tested = 0.0;
    let p_bases = 0.25f64.powi(n as i32);
    for code in 0..(1usize << (2 * n)) {
        let alice: Vec<Basis> = (0..n).map(|i| bases[(code >> (2 * i)) & 1]).collect();
        let bob: Vec<Basis> = (0..n).map(|i| bases[(code >> (2 * i + 1)) & 1]).collect();
        let sifted: Vec<usize> = (0..n).filter(|&i| alice[i] == bob[i]).collect();
        let s = sifted.len();
        let basis_str: String = alice.iter().chain(&bob).map(|b| b.letter()).collect();
        let unsifted_op = (0..n)
            .filter(|i| !sifted.contains(i))
            .fold(CMatrix::identity(1, 1), |acc, i| kron(&acc, &tables.marginal(alice[i], bob[i])));
        if s == 0 {
            let label = format!("abort;bases={basis_str}");
            joint
                .entry((Key::EMPTY, Key::EMPTY))
                .or_default()
                .add(label, &(unsifted_op * c(p_bases)));
            continue;
        }
        let t = cfg.test_count(s);
        let subs = subsets(s, t);
        let p_sub = p_bases / subs.len() as f64;
        for sub in &subs {
            let test_pos: Vec<usize> = sub.iter().map(|&j| sifted[j]).collect();
            let key_pos: Vec<usize> = (0..s).filter(|j| !sub.contains(j)).map(|j| sifted[j]).collect();
            let key_bases: Vec<Basis> = key_pos.iter().map(|&i| alice[i]).collect();
            let key_ops = if cfg.key_long_enough(key_pos.len()) {
                Some(key_part(tables, &key_bases, cfg)?)
            } else {
                None
            };
            let key_marginal = key_pos
                .iter()
                .fold(CMatrix::identity(1, 1), |acc, &i| kron(&acc, &tables.marginal(alice[i], bob[i])));
            for tv in 0..(1usize << (2 * t)) {
                let mut test_op = CMatrix::identity(1, 1);
                let mut errors = 0;
                let mut tv_str = String::new();
                for (j, &i) in test_pos.iter().enumerate() {
                    let a = ((tv >> (2 * j)) & 1) as u8;
                    let b = ((tv >> (2 * j + 1)) & 1) as u8;
                    errors += (a != b) as usize;
                    tv_str.push_str(&format!("{a}{b}"));
                    test_op = kron(&test_op, tables.get(alice[i], bob[i], a, b));
                }
                let p_tv = test_op.trace().re;
                err_sum += p_sub * p_tv * errors as f64;
                test_sum += p_sub * p_tv * t as f64;
                rate_sum += p_sub * p_tv * errors as f64 / t as f64;
                tested += p_sub * p_tv;
                let public = format!(
                    "bases={basis_str};tests={};values={tv_str}",
                    test_pos.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
                );
                let rest = kron(&test_op, &unsifted_op);
                match (&key_ops, cfg.passes(errors, t)) {
                    (Some(ops), true) => {
                        for (kp, op) in ops {
                            let block = kron(op, &rest) * c(p_sub);
                            joint.entry(*kp).or_default().add(format!("pass;{public}"), &block);
                        }
                    }
                    _ => {
                        let block = kron(&key_marginal, &rest) * c(p_sub);
                        joint
                            .entry((Key::EMPTY, Key::EMPTY))
                            .or_default()
                            .add(format!("abort;{public}"), &block);
                    }
                }
            }
        }
    }
    let qber = QberStats {
        expected_error_rate: if test_sum > 0.0 { err_sum / test_sum } else { 0.0 },
        mean_observed_rate: if tested > 0.0 { rate_sum / tested } else { 0.0 },
        std_error: 0.0,
        expected_test_bits: test_sum,
        prob_tested: tested,
    };
    finish_record(joint, rho_ab_signal, qber)
}

// ---------------------------------------------------------------------------
// game states
// ---------------------------------------------------------------------------

/// Label of a block of a game state: Alice's key, Bob's key, Eve's view.
pub type GameLabel = (Key, Key, String);
pub type GameState = CqState<GameLabel>;

/// Real, ideal and hybrid states of the distinguishing game.
#[derive(Debug, Clone)]
pub struct GameStates {
    pub rho_qkd: GameState,
    pub rho_ideal: GameState,
    pub rho_qi1: GameState,
    pub rho_qi2: GameState,
    /// `ρ̄_m`: uniform average of `ρ_{E,k,k}` over keys of length `m`.
    pub rho_bar: BTreeMap<usize, EveState>,
    /// `ρ̃_m`: Eve's state averaged with the real key distribution given `M = m`.
    pub rho_tilde: BTreeMap<usize, EveState>,
    /// `ρ_{E,k,k}` used in the hybrids (falls back to `ρ̃_{|k|}` when `Pr(k,k) = 0`).
    pub rho_equal: BTreeMap<Key, EveState>,
    pub length_dist: BTreeMap<usize, f64>,
}

fn tag(state: &EveState, ka: Key, kb: Key, w: f64, into: &mut GameState) {
    for (v, b) in state.blocks() {
        into.add((ka, kb, v.clone()), &(b * c(w)));
    }
}

impl GameStates {
    /// Restriction to key length `m`, renormalized. `None` when `Pr(M=m) = 0`.
    pub fn conditional(state: &GameState, m: usize) -> Option<GameState> {
        state.filter(|(ka, _, _)| ka.len() == m).normalized()
    }
}

pub fn build_game_states(rec: &QkdRunRecord) -> Result<GameStates> {
    rec.validate()?;
    let lengths = rec.realized_lengths();
    if let Some(&m) = lengths.iter().find(|&&m| m > MAX_KEY_BITS) {
        return Err(SimError::Config(format!("key length {m} too long to enumerate")));
    }

    let mut rho_tilde = BTreeMap::new();
    for &m in &lengths {
        let pm = rec.prob_length(m);
        let mut acc = EveState::new();
        for ((ka, kb), &p) in rec.key_table.iter().filter(|((ka, _), _)| ka.len() == m) {
            if p > 0.0 {
                acc.add_scaled(&rec.eve_states[&(*ka, *kb)], p / pm);
            }
        }
        rho_tilde.insert(m, acc);
    }

    let mut rho_equal = BTreeMap::new();
    let mut rho_bar = BTreeMap::new();
    for &m in &lengths {
        let mut bar = EveState::new();
        let w = 0.5f64.powi(m as i32);
        for k in Key::all(m) {
            let st = if rec.prob_equal(k) > 0.0 {
                rec.eve_states[&(k, k)].clone()
            } else {
                rho_tilde[&m].clone()
            };
            bar.add_scaled(&st, w);
            rho_equal.insert(k, st);
        }
        rho_bar.insert(m, bar);
    }

    let mut rho_qkd = GameState::new();
    for ((ka, kb), &p) in &rec.key_table {
        if p > 0.0 {
            tag(&rec.eve_states[&(*ka, *kb)], *ka, *kb, p, &mut rho_qkd);
        }
    }
    let mut rho_ideal = GameState::new();
    let mut rho_qi1 = GameState::new();
    let mut rho_qi2 = GameState::new();
    for &m in &lengths {
        let w = rec.prob_length(m) * 0.5f64.powi(m as i32);
        for k in Key::all(m) {
            tag(&rho_tilde[&m], k, k, w, &mut rho_ideal);
            tag(&rho_equal[&k], k, k, w, &mut rho_qi1);
            tag(&rho_bar[&m], k, k, w, &mut rho_qi2);
        }
    }
    for (name, st) in [("qkd", &rho_qkd), ("ideal", &rho_ideal), ("qi1", &rho_qi1), ("qi2", &rho_qi2)] {
        if (st.trace() - 1.0).abs() > 1e-9 {
            return Err(SimError::Inconsistent(format!("rho_{name} has trace {}", st.trace())));
        }
    }
    Ok(GameStates {
        rho_qkd,
        rho_ideal,
        rho_qi1,
        rho_qi2,
        rho_bar,
        rho_tilde,
        rho_equal,
        length_dist: rec.length_dist.clone(),
    })
}

/// Number of distinct Eve views in a record.
pub fn view_count(rec: &QkdRunRecord) -> usize {
    rec.eve_states
        .values()
        .flat_map(|s| s.blocks().keys().cloned())
        .collect::<BTreeSet<_>>()
        .len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cq;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn base_cfg() -> ProtocolConfig {
        ProtocolConfig::exact(4, 0.5, 0.0, 1, 7)
    }

    #[test]
    fn signal_maps_are_channels() {
        for eve in [
            EveStrategy::none(),
            EveStrategy::intercept_resend(0.3),
            EveStrategy::intercept_resend(1.0),
            EveStrategy::entangling_probe(0.7),
            EveStrategy { kind: EveKind::EntanglingProbe, p: 0.4, probe_angle: 1.1 },
        ] {
            let map = eve.signal_map().unwrap();
            assert_eq!(map.dim_out(), 2 * eve.probe_dim());
            let t = SignalTables::new(&eve).unwrap();
            for a in [Basis::Z, Basis::X] {
                for b in [Basis::Z, Basis::X] {
                    assert_abs_diff_eq!(t.marginal(a, b).trace().re, 1.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn intercept_resend_error_rates() {
        for p in [0.0, 0.25, 0.5, 1.0] {
            let t = SignalTables::new(&EveStrategy::intercept_resend(p)).unwrap();
            assert_abs_diff_eq!(t.error_prob(Basis::Z), p / 4.0, epsilon = 1e-12);
            assert_abs_diff_eq!(t.error_prob(Basis::X), p / 4.0, epsilon = 1e-12);
        }
        let t = SignalTables::new(&EveStrategy::entangling_probe(0.6)).unwrap();
        assert_abs_diff_eq!(t.error_prob(Basis::Z), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.error_prob(Basis::X), (1.0 - 0.6f64.cos()) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn toeplitz_hash_is_full_rank_and_deterministic() {
        for l in 1..8 {
            for m in 1..=l {
                let h = toeplitz_hash(3, l, m);
                assert_eq!(gf2_rank(&h), m);
                assert_eq!(h, toeplitz_hash(3, l, m));
                assert!(h.iter().all(|r| r >> l == 0));
            }
        }
    }

    #[test]
    fn no_attack_run() {
        let rec = run_protocol(&base_cfg(), &EveStrategy::none()).unwrap();
        // aborts only from too few sifted bits: s = 0 or s = 1
        let oracle = 0.5f64.powi(4) + 4.0 * 0.5f64.powi(4);
        assert_abs_diff_eq!(rec.prob_length(0), oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(rec.prob_length(1), 1.0 - oracle, epsilon = 1e-12);
        for ((ka, kb), &p) in &rec.key_table {
            if p > 0.0 {
                assert_eq!(ka, kb);
            }
        }
        let e0 = &rec.eve_states[&(Key::new(1, 0), Key::new(1, 0))];
        let e1 = &rec.eve_states[&(Key::new(1, 1), Key::new(1, 1))];
        assert_abs_diff_eq!(cq::trace_distance(e0, e1).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rec.qber.expected_error_rate, 0.0);
    }

    /// Independent abort oracle for a basis-independent per-bit error rate.
    fn abort_oracle(cfg: &ProtocolConfig, err: f64) -> f64 {
        let n = cfg.n as u64;
        let mut abort = 0.0;
        for s in 0..=n {
            let ps = binomial(n, s) as f64 * 0.5f64.powi(cfg.n as i32);
            let t = cfg.test_count(s as usize);
            let l = s as usize - t;
            if s == 0 || !cfg.key_long_enough(l) {
                abort += ps;
                continue;
            }
            let tail: f64 = (0..=t)
                .filter(|&e| e as f64 > cfg.qber_threshold * t as f64 + 1e-12)
                .map(|e| binomial(t as u64, e as u64) as f64 * err.powi(e as i32) * (1.0 - err).powi((t - e) as i32))
                .sum();
            abort += ps * tail;
        }
        abort
    }

    #[test]
    fn intercept_resend_abort_and_qber() {
        for thr in [0.0, 0.25, 0.5] {
            let cfg = ProtocolConfig { qber_threshold: thr, ..base_cfg() };
            let rec = run_protocol(&cfg, &EveStrategy::intercept_resend(1.0)).unwrap();
            assert_abs_diff_eq!(rec.qber.expected_error_rate, 0.25, epsilon = 1e-12);
            assert_abs_diff_eq!(rec.qber.mean_observed_rate, 0.25, epsilon = 1e-12);
            assert_abs_diff_eq!(rec.prob_length(0), abort_oracle(&cfg, 0.25), epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_angle_probe_matches_no_attack() {
        let cfg = base_cfg();
        let a = run_protocol(&cfg, &EveStrategy::none()).unwrap();
        let b = run_protocol(&cfg, &EveStrategy::entangling_probe(0.0)).unwrap();
        assert_eq!(a.length_dist.len(), b.length_dist.len());
        for (m, p) in &a.length_dist {
            assert_abs_diff_eq!(*p, b.length_dist[m], epsilon = 1e-12);
        }
        for (kp, p) in &a.key_table {
            assert_abs_diff_eq!(*p, b.key_table[kp], epsilon = 1e-12);
        }
        let ga = build_game_states(&a).unwrap();
        let gb = build_game_states(&b).unwrap();
        assert_abs_diff_eq!(
            cq::trace_distance(&ga.rho_qkd, &ga.rho_ideal).unwrap(),
            cq::trace_distance(&gb.rho_qkd, &gb.rho_ideal).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn config_errors() {
        let cfg = ProtocolConfig { m_out: 4, ..base_cfg() };
        assert!(matches!(run_protocol(&cfg, &EveStrategy::none()), Err(SimError::Config(_))));
        let cfg = ProtocolConfig { n: 11, ..base_cfg() };
        assert!(matches!(cfg.validate(), Err(SimError::Config(_))));
        let cfg = ProtocolConfig { eve_view: EveView::Full, n: 10, ..base_cfg() };
        assert!(matches!(cfg.validate(), Err(SimError::EnumerationGuard(_))));
        let cfg = ProtocolConfig { test_fraction: 1.0, ..base_cfg() };
        assert!(cfg.validate().is_err());
        assert!(EveStrategy::intercept_resend(1.5).validate().is_err());
    }

    #[test]
    fn ent_pair_examples() {
        let phi = bell_phi().to_density();
        let rho = channel_to_ent_pair(&EveStrategy::none()).unwrap();
        assert_abs_diff_eq!(qinfo::fidelity(&rho, &phi).unwrap(), 1.0, epsilon = 1e-12);
        // oracle: average the two measure-and-prepare branches directly
        let mut oracle = CMatrix::zeros(4, 4);
        for basis in [Basis::Z, Basis::X] {
            for e in 0..2 {
                let v = basis.state(e);
                let proj = kron(&CMatrix::identity(2, 2), &(&v * v.adjoint()));
                oracle += &proj * phi.matrix() * &proj * c(0.5);
            }
        }
        let f_oracle = (bell_phi().amplitudes().adjoint() * &oracle * bell_phi().amplitudes())[(0, 0)].re;
        let rho = channel_to_ent_pair(&EveStrategy::intercept_resend(1.0)).unwrap();
        let f = qinfo::fidelity(&rho, &phi).unwrap();
        assert_abs_diff_eq!(f, f_oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(f, 0.5, epsilon = 1e-12);
        let f_half = qinfo::fidelity(&channel_to_ent_pair(&EveStrategy::intercept_resend(0.5)).unwrap(), &phi).unwrap();
        assert_abs_diff_eq!(f_half, 0.5 * (1.0 + f), epsilon = 1e-12);
        let f_probe = qinfo::fidelity(&channel_to_ent_pair(&EveStrategy::entangling_probe(0.8)).unwrap(), &phi).unwrap();
        assert_abs_diff_eq!(f_probe, 0.5 * (1.0 + 0.8f64.cos()), epsilon = 1e-12);
    }

    #[test]
    fn singlet_fidelity_examples() {
        let phi = bell_phi().to_density();
        for m in 0..5 {
            assert_abs_diff_eq!(singlet_fidelity(&phi, m).unwrap(), 1.0, epsilon = 1e-12);
        }
        let mixed = DensityMatrix::maximally_mixed(4).reshape(vec![2, 2]).unwrap();
        assert_abs_diff_eq!(singlet_fidelity(&mixed, 1).unwrap(), 0.25, epsilon = 1e-12);
        // Werner-like state with F = 0.9
        let w = (phi.matrix() * c(0.9 - 0.1 / 3.0) + CMatrix::identity(4, 4) * c(0.4 / 3.0 / 4.0 * 1.0))
            .map(|z| z);
        let w = DensityMatrix::with_dims(w.clone() * c(1.0 / w.trace().re), vec![2, 2]).unwrap();
        let f1 = singlet_fidelity(&w, 1).unwrap();
        let f3 = singlet_fidelity(&w, 3).unwrap();
        assert_abs_diff_eq!(f3, f1.powi(3), epsilon = 1e-12);
        let p = DensityMatrix::with_dims(
            phi.matrix() * c(0.9) + DensityMatrix::basis(4, 1).matrix() * c(0.1),
            vec![2, 2],
        )
        .unwrap();
        assert_abs_diff_eq!(singlet_fidelity(&p, 3).unwrap(), 0.729, epsilon = 1e-12);
        assert!(singlet_fidelity(&DensityMatrix::maximally_mixed(2), 1).is_err());
    }

    #[test]
    fn uhlmann_steps_follow_monotonicity() {
        let phi = bell_phi().to_density();
        for eve in [
            EveStrategy::none(),
            EveStrategy::intercept_resend(0.25),
            EveStrategy::intercept_resend(1.0),
            EveStrategy::entangling_probe(PI / 8.0),
            EveStrategy::entangling_probe(1.3),
            EveStrategy { kind: EveKind::EntanglingProbe, p: 0.5, probe_angle: 0.7 },
        ] {
            let direct = qinfo::fidelity(&channel_to_ent_pair(&eve).unwrap(), &phi).unwrap();
            for step in uhlmann_steps(&eve).unwrap() {
                assert_abs_diff_eq!(step.pair_fidelity, direct, epsilon = 1e-12);
                assert!(step.measured_fidelity >= step.pair_fidelity - 1e-9, "{step:?}");
            }
        }
        let none = uhlmann_steps(&EveStrategy::none()).unwrap();
        assert!(none.iter().all(|s| (s.measured_fidelity - 1.0).abs() < 1e-12));
    }

    #[test]
    fn game_states_no_attack() {
        let rec = run_protocol(&base_cfg(), &EveStrategy::none()).unwrap();
        let gs = build_game_states(&rec).unwrap();
        assert!(cq::trace_distance(&gs.rho_qkd, &gs.rho_ideal).unwrap() <= 1e-9);
        for st in [&gs.rho_qkd, &gs.rho_ideal, &gs.rho_qi1, &gs.rho_qi2] {
            assert_abs_diff_eq!(st.trace(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn game_states_structure_under_attack() {
        let rec = run_protocol(&base_cfg(), &EveStrategy::intercept_resend(1.0)).unwrap();
        let gs = build_game_states(&rec).unwrap();
        assert_abs_diff_eq!(gs.rho_qi1.trace(), 1.0, epsilon = 1e-12);
        assert!(gs.rho_qi2.blocks().keys().all(|(ka, kb, _)| ka == kb));
        assert!(gs.rho_ideal.blocks().keys().all(|(ka, kb, _)| ka == kb));
        let eps = 0.5 * cq::trace_distance(&gs.rho_qkd, &gs.rho_ideal).unwrap();
        assert!(eps > 1e-3, "eps = {eps}");
    }

    #[test]
    fn full_view_matches_reduced_view() {
        for (n, eve) in [
            (2, EveStrategy::intercept_resend(1.0)),
            (2, EveStrategy::intercept_resend(0.5)),
            (3, EveStrategy::entangling_probe(PI / 4.0)),
            (3, EveStrategy::none()),
        ] {
            for thr in [0.0, 0.5] {
                let red_cfg = ProtocolConfig::exact(n, 0.5, thr, 1, 5);
                let full_cfg = ProtocolConfig { eve_view: EveView::Full, ..red_cfg.clone() };
                let red = run_protocol(&red_cfg, &eve).unwrap();
                let full = run_protocol(&full_cfg, &eve).unwrap();
                for (kp, p) in &red.key_table {
                    assert_abs_diff_eq!(*p, full.key_table[kp], epsilon = 1e-12);
                }
                assert_abs_diff_eq!(red.qber.expected_error_rate, full.qber.expected_error_rate, epsilon = 1e-12);
                assert_abs_diff_eq!(red.qber.mean_observed_rate, full.qber.mean_observed_rate, epsilon = 1e-12);
                let gr = build_game_states(&red).unwrap();
                let gf = build_game_states(&full).unwrap();
                let pairs = |g: &GameStates| {
                    [
                        cq::trace_distance(&g.rho_qkd, &g.rho_ideal).unwrap(),
                        cq::trace_distance(&g.rho_qkd, &g.rho_qi1).unwrap(),
                        cq::trace_distance(&g.rho_qi1, &g.rho_qi2).unwrap(),
                        cq::trace_distance(&g.rho_qi2, &g.rho_ideal).unwrap(),
                        cq::fidelity(&g.rho_qkd, &g.rho_ideal).unwrap(),
                    ]
                };
                for (x, y) in pairs(&gr).iter().zip(pairs(&gf)) {
                    assert_abs_diff_eq!(*x, y, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn game_states_dense_cross_check() {
        // n = 2 states are small enough to embed densely
        let cfg = ProtocolConfig::exact(2, 0.5, 0.5, 1, 1);
        let rec = run_protocol(&cfg, &EveStrategy::entangling_probe(1.0)).unwrap();
        let gs = build_game_states(&rec).unwrap();
        let (a, b) = CqState::dense_pair(&gs.rho_qkd, &gs.rho_ideal).unwrap();
        assert_abs_diff_eq!(
            qinfo::trace_norm(&(a - b)),
            cq::trace_distance(&gs.rho_qkd, &gs.rho_ideal).unwrap(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn monte_carlo_is_deterministic_and_close_to_exact() {
        let exact = run_protocol(&base_cfg(), &EveStrategy::intercept_resend(1.0)).unwrap();
        let mc_cfg = ProtocolConfig { mode: Mode::MonteCarlo, trials: 20_000, ..base_cfg() };
        let a = run_protocol(&mc_cfg, &EveStrategy::intercept_resend(1.0)).unwrap();
        let b = run_protocol(&mc_cfg, &EveStrategy::intercept_resend(1.0)).unwrap();
        assert_eq!(a.key_table, b.key_table);
        for (m, p) in &exact.length_dist {
            let se = (p * (1.0 - p) / 20_000.0).sqrt();
            assert!((a.prob_length(*m) - p).abs() <= 3.0 * se + 1e-12);
        }
    }

    #[test]
    fn raw_keys_have_variable_length() {
        let cfg = ProtocolConfig::exact(4, 0.5, 0.5, 0, 3);
        let rec = run_protocol(&cfg, &EveStrategy::none()).unwrap();
        assert!(rec.prob_length(1) > 0.0);
        assert!(rec.prob_length(2) > 0.0);
        let gs = build_game_states(&rec).unwrap();
        assert!(cq::trace_distance(&gs.rho_qkd, &gs.rho_ideal).unwrap() <= 1e-9);
    }

    #[test]
    fn record_validation_rejects_bad_tables() {
        let phi = bell_phi().to_density();
        let mut table = BTreeMap::new();
        table.insert((Key::new(1, 0), Key::new(1, 0)), 0.7);
        let mut eve = BTreeMap::new();
        eve.insert((Key::new(1, 0), Key::new(1, 0)), EveState::single("v".into(), CMatrix::identity(1, 1)));
        assert!(QkdRunRecord::from_parts(table, eve, phi, QberStats::default()).is_err());
    }
}
