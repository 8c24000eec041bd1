//! Security quantities of a simulated run and the inequality chains that
//! relate them.
//!
//! Deviation budgets:
//! * `μ₁`: equality and uniformity of the keys,
//! * `μ₂`: Eve's information on the key (family lower bound or Holevo),
//! * `μ₂″`: infidelity of the shared pre-measurement state with `Φ^{⊗m}`.
//!
//! [`certify`] evaluates each bound on `‖ρ_qi1 − ρ_qi2‖₁` and the
//! fidelity bound on the composable advantage, and reports every row with
//! its margin.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cq;
use crate::qinfo::MeasurementFamilyConfig;
use crate::qkdsim::{singlet_fidelity, uhlmann_steps, EveState, GameStates, Key, QkdRunRecord, SimError};
use crate::qmatrix::QError;

/// Additive tolerance of every pass/fail comparison.
pub const BOUND_TOL: f64 = 1e-7;
/// Tolerance of internal consistency checks between exactly related values.
pub const CHAIN_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("internal inequality violated: {0}")]
    Violated(String),
    #[error(transparent)]
    Quantum(#[from] QError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub type Result<T> = std::result::Result<T, BoundsError>;

/// How Eve's information on the key is quantified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivacyMeasure {
    /// Best mutual information over a searched measurement family (a lower
    /// bound on the accessible information).
    FamilyAcc,
    /// Holevo information (an upper bound on the accessible information).
    Chi,
}

fn information(ensemble: &[(f64, &EveState)], measure: PrivacyMeasure, cfg: &MeasurementFamilyConfig) -> Result<f64> {
    if ensemble.len() < 2 {
        return Ok(0.0);
    }
    Ok(match measure {
        PrivacyMeasure::Chi => cq::holevo_chi(ensemble)?,
        PrivacyMeasure::FamilyAcc => cq::accessible_info_lower(ensemble, cfg)?,
    })
}

fn key_length_mass<'a>(table: impl Iterator<Item = (&'a (Key, Key), &'a f64)>) -> BTreeMap<usize, f64> {
    let mut out = BTreeMap::new();
    for ((ka, _), p) in table {
        *out.entry(ka.len()).or_insert(0.0) += p;
    }
    out
}

fn mu1_from_table(table: &BTreeMap<(Key, Key), f64>) -> f64 {
    let lengths = key_length_mass(table.iter());
    let mut total = 0.0;
    for (&m, &pm) in &lengths {
        if m == 0 || pm <= 0.0 {
            continue;
        }
        let uniform = 0.5f64.powi(m as i32);
        let mut l1 = 0.0;
        let mut seen_diag = 0usize;
        for ((ka, kb), &p) in table.iter().filter(|((ka, _), _)| ka.len() == m) {
            if ka == kb {
                l1 += (p / pm - uniform).abs();
                seen_diag += 1;
            } else {
                l1 += p / pm;
            }
        }
        // equal keys absent from the table carry ideal weight only
        l1 += ((1u64 << m) as usize - seen_diag) as f64 * uniform;
        total += pm * l1;
    }
    total
}

/// `Σ_m Pr(m) ‖p_ideal^(m) − p_qkd^(m)‖₁` over joint key tables given
/// `M = m`; the abort branch contributes nothing.
pub fn mu1_uniformity(rec: &QkdRunRecord) -> f64 {
    mu1_from_table(&rec.key_table)
}

/// Key table read off the key registers of `ρ_qkd`.
fn game_key_table(gs: &GameStates) -> BTreeMap<(Key, Key), f64> {
    let mut table = BTreeMap::new();
    for ((ka, kb, _), b) in gs.rho_qkd.blocks() {
        *table.entry((*ka, *kb)).or_insert(0.0) += b.trace().re;
    }
    table
}

/// `Σ_m Pr(m) I(K_E : K | M = m)` with the ensemble of equal-key Eve
/// states weighted by the record's conditional distribution of equal keys.
pub fn mu2_privacy(rec: &QkdRunRecord, measure: PrivacyMeasure, cfg: &MeasurementFamilyConfig) -> Result<f64> {
    let mut total = 0.0;
    for m in rec.realized_lengths() {
        if m == 0 {
            continue;
        }
        let equal: Vec<(f64, &EveState)> = rec
            .key_table
            .iter()
            .filter(|((ka, kb), &p)| ka.len() == m && ka == kb && p > 0.0)
            .map(|(kp, &p)| (p, &rec.eve_states[kp]))
            .collect();
        let mass: f64 = equal.iter().map(|(p, _)| p).sum();
        if mass <= 0.0 {
            continue;
        }
        let ensemble: Vec<(f64, &EveState)> = equal.into_iter().map(|(p, s)| (p / mass, s)).collect();
        total += rec.prob_length(m) * information(&ensemble, measure, cfg)?;
    }
    Ok(total)
}

/// `Σ_m Pr(m) I(𝓕_m)` for the uniform ensembles `𝓕_m = {2^{-m}, ρ_{E,k,k}}`
/// that the hybrid states are built from. This is the quantity the
/// `‖ρ_qi1 − ρ_qi2‖₁` bounds are stated in.
pub fn mu2_uniform(gs: &GameStates, measure: PrivacyMeasure, cfg: &MeasurementFamilyConfig) -> Result<f64> {
    let mut total = 0.0;
    for (&m, &pm) in &gs.length_dist {
        if m == 0 || pm <= 0.0 {
            continue;
        }
        let w = 0.5f64.powi(m as i32);
        let ensemble: Vec<(f64, &EveState)> = Key::all(m).map(|k| (w, &gs.rho_equal[&k])).collect();
        total += pm * information(&ensemble, measure, cfg)?;
    }
    Ok(total)
}

/// `μ₂″ = Σ_m Pr(m) [1 − F(ρ_AB^{⊗m}, Φ^{⊗m})]`.
pub fn mu2_fid(rec: &QkdRunRecord) -> Result<f64> {
    let mut total = 0.0;
    for (&m, &pm) in &rec.length_dist {
        if pm > 0.0 {
            total += pm * (1.0 - singlet_fidelity(&rec.rho_ab_signal, m)?);
        }
    }
    Ok(total.max(0.0))
}

/// `½ ‖ρ_qkd − ρ_ideal‖₁`, the bound on the distinguishing advantage.
pub fn eps_composable(gs: &GameStates) -> Result<f64> {
    Ok(0.5 * cq::trace_distance(&gs.rho_qkd, &gs.rho_ideal)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrivacyTerms {
    /// `½ ‖ρ_qi1 − ρ_qi2‖₁`.
    pub eps_privacy: f64,
    /// `½ Σ_k Pr(M=|k|) 2^{-|k|} ‖ρ̄_{|k|} − ρ_{E,k,k}‖₁`.
    pub keywise: f64,
}

pub fn eps_privacy(gs: &GameStates) -> Result<PrivacyTerms> {
    let eps = 0.5 * cq::trace_distance(&gs.rho_qi1, &gs.rho_qi2)?;
    let mut keywise = 0.0;
    for (&m, &pm) in &gs.length_dist {
        if pm <= 0.0 {
            continue;
        }
        let w = pm * 0.5f64.powi(m as i32);
        for k in Key::all(m) {
            keywise += w * cq::trace_distance(&gs.rho_bar[&m], &gs.rho_equal[&k])?;
        }
    }
    keywise *= 0.5;
    if eps > keywise + CHAIN_TOL {
        return Err(BoundsError::Violated(format!("eps_privacy {eps} exceeds keywise sum {keywise}")));
    }
    Ok(PrivacyTerms { eps_privacy: eps, keywise })
}

/// `½‖ρ_qkd − ρ_qi1‖₁`, `½‖ρ_qi1 − ρ_qi2‖₁`, `½‖ρ_qi2 − ρ_ideal‖₁`.
/// Checks the triangle inequality and that the outer terms are covered by `μ₁`.
pub fn triangle_decomposition(gs: &GameStates) -> Result<[f64; 3]> {
    let terms = [
        0.5 * cq::trace_distance(&gs.rho_qkd, &gs.rho_qi1)?,
        0.5 * cq::trace_distance(&gs.rho_qi1, &gs.rho_qi2)?,
        0.5 * cq::trace_distance(&gs.rho_qi2, &gs.rho_ideal)?,
    ];
    let eps = eps_composable(gs)?;
    let sum: f64 = terms.iter().sum();
    if eps > sum + CHAIN_TOL {
        return Err(BoundsError::Violated(format!("eps_composable {eps} exceeds triangle sum {sum}")));
    }
    let mu1 = mu1_from_table(&game_key_table(gs));
    if terms[0] + terms[2] > mu1 + BOUND_TOL {
        return Err(BoundsError::Violated(format!(
            "outer triangle terms {} exceed mu1 {mu1}",
            terms[0] + terms[2]
        )));
    }
    Ok(terms)
}

/// `(F(ρ_qkd^m, ρ_ideal^m), F(ρ_AB, Φ)^m)` for every realized key length.
pub fn uhlmann_pairs(rec: &QkdRunRecord, gs: &GameStates) -> Result<Vec<(usize, f64, f64)>> {
    let mut out = Vec::new();
    for m in rec.realized_lengths() {
        let (Some(q), Some(i)) = (
            GameStates::conditional(&gs.rho_qkd, m),
            GameStates::conditional(&gs.rho_ideal, m),
        ) else {
            continue;
        };
        out.push((m, cq::fidelity(&q, &i)?, singlet_fidelity(&rec.rho_ab_signal, m)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`.
    pub margin: f64,
    pub pass: bool,
    /// Informational rows are reported but never fail certification.
    pub informational: bool,
}

impl BoundRow {
    fn new(name: &str, lhs: f64, rhs: f64, informational: bool) -> Self {
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            margin: rhs - lhs,
            pass: lhs <= rhs + BOUND_TOL,
            informational,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    #[serde(default)]
    pub info: MeasurementFamilyConfig,
    /// Also evaluate the family lower bound on `μ₂` and add informational
    /// rows using it.
    #[serde(default = "yes")]
    pub family_rows: bool,
}

fn yes() -> bool {
    true
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            info: MeasurementFamilyConfig::default(),
            family_rows: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecurityReport {
    pub mu1: f64,
    /// Family lower bound on `μ₂` (record's key distribution); `None` when not requested.
    pub mu2_acc_lower: Option<f64>,
    /// Holevo `μ₂′` with the record's key distribution.
    pub mu2_chi: f64,
    /// Holevo `μ₂′` over the uniform ensembles `𝓕_m`; used by the bound rows.
    pub mu2_chi_uniform: f64,
    pub mu2_fid: f64,
    pub eps_composable: f64,
    pub eps_privacy: f64,
    pub eps_privacy_keywise: f64,
    pub triangle_terms: [f64; 3],
    pub max_key_length: usize,
    pub bound_rows: Vec<BoundRow>,
}

impl SecurityReport {
    /// All pass/fail rows pass.
    pub fn all_pass(&self) -> bool {
        self.bound_rows.iter().all(|r| r.pass || r.informational)
    }

    pub fn row(&self, name: &str) -> Option<&BoundRow> {
        self.bound_rows.iter().find(|r| r.name == name)
    }

    /// `eps_privacy ≤ keywise ≤ Bound-2 RHS ≤ Bound-1 RHS`.
    pub fn ordering_holds(&self) -> bool {
        let (Some(b1), Some(b2)) = (self.row("B1"), self.row("B2")) else {
            return false;
        };
        self.eps_privacy <= self.eps_privacy_keywise + CHAIN_TOL
            && self.eps_privacy_keywise <= b2.rhs + CHAIN_TOL
            && b2.rhs <= b1.rhs + CHAIN_TOL
    }
}

fn bound1_rhs(max_m: usize, mu2: f64) -> f64 {
    let f = (2f64.powi(max_m as i32) + 1.0).powi(2);
    f * (2.0 * std::f64::consts::LN_2 * mu2).sqrt()
}

fn bound2_rhs(max_m: usize, mu2: f64) -> f64 {
    2f64.powf(max_m as f64 / 2.0 + 1.0) * mu2.sqrt()
}

pub fn certify(rec: &QkdRunRecord, gs: &GameStates, cfg: &CertifyConfig) -> Result<SecurityReport> {
    cfg.info.validate()?;
    let mu1 = mu1_uniformity(rec);
    let mu2_chi = mu2_privacy(rec, PrivacyMeasure::Chi, &cfg.info)?;
    let mu2_chi_uniform = mu2_uniform(gs, PrivacyMeasure::Chi, &cfg.info)?;
    let mu2_fid = mu2_fid(rec)?;
    let eps = eps_composable(gs)?;
    let privacy = eps_privacy(gs)?;
    let triangle = triangle_decomposition(gs)?;
    let max_m = rec.realized_lengths().into_iter().max().unwrap_or(0);
    let qi_distance = 2.0 * privacy.eps_privacy;

    let mut rows = vec![
        BoundRow::new("B1", qi_distance, bound1_rhs(max_m, mu2_chi_uniform), false),
        BoundRow::new("B2", qi_distance, bound2_rhs(max_m, mu2_chi_uniform), false),
        BoundRow::new(
            "HOL",
            qi_distance,
            (2.0 * std::f64::consts::LN_2 * mu2_chi_uniform).sqrt(),
            false,
        ),
        BoundRow::new("FID", eps, mu2_fid.sqrt(), false),
    ];

    let mut mu2_acc_lower = None;
    if cfg.family_rows {
        let acc = mu2_privacy(rec, PrivacyMeasure::FamilyAcc, &cfg.info)?;
        let acc_uniform = mu2_uniform(gs, PrivacyMeasure::FamilyAcc, &cfg.info)?;
        if acc > mu2_chi + 1e-8 {
            return Err(BoundsError::Violated(format!("family information {acc} exceeds Holevo {mu2_chi}")));
        }
        mu2_acc_lower = Some(acc);
        rows.push(BoundRow::new("B1_family", qi_distance, bound1_rhs(max_m, acc_uniform), true));
        rows.push(BoundRow::new("B2_family", qi_distance, bound2_rhs(max_m, acc_uniform), true));
    }
    if let (Some(eve), true) = (&rec.eve, max_m > 0) {
        // fidelity is multiplicative over the i.i.d. signals, so the m-fold
        // chain is the per-signal chain raised to the m-th power
        for step in uhlmann_steps(eve)? {
            rows.push(BoundRow::new(
                &format!("UHLMANN_{:?}", step.basis),
                step.pair_fidelity.powi(max_m as i32),
                step.measured_fidelity.powi(max_m as i32),
                false,
            ));
        }
    }
    for (m, f_game, f_pair) in uhlmann_pairs(rec, gs)? {
        if m > 0 {
            rows.push(BoundRow::new(&format!("UHLMANN_DIRECT_m{m}"), f_pair, f_game, true));
        }
    }

    Ok(SecurityReport {
        mu1,
        mu2_acc_lower,
        mu2_chi,
        mu2_chi_uniform,
        mu2_fid,
        eps_composable: eps,
        eps_privacy: privacy.eps_privacy,
        eps_privacy_keywise: privacy.keywise,
        triangle_terms: triangle,
        max_key_length: max_m,
        bound_rows: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qkdsim::{build_game_states, run_protocol, EveStrategy, ProtocolConfig, QberStats};
    use crate::qmatrix::{bell_phi, c, CMatrix};
    use approx::assert_abs_diff_eq;

    fn fast_info() -> MeasurementFamilyConfig {
        MeasurementFamilyConfig {
            grid_size: 500,
            refinement_rounds: 1,
            ..MeasurementFamilyConfig::default()
        }
    }

    fn k1(b: u64) -> Key {
        Key::new(1, b)
    }

    /// One-bit key, uniform, Eve holding `|k⟩` in a single view block.
    fn copy_record() -> QkdRunRecord {
        let mut table = BTreeMap::new();
        let mut eve = BTreeMap::new();
        for b in 0..2 {
            table.insert((k1(b), k1(b)), 0.5);
            let mut m = CMatrix::zeros(2, 2);
            m[(b as usize, b as usize)] = c(1.0);
            eve.insert((k1(b), k1(b)), EveState::single("v".into(), m));
        }
        QkdRunRecord::from_parts(table, eve, bell_phi().to_density(), QberStats::default()).unwrap()
    }

    fn constant_key_record() -> QkdRunRecord {
        let mut table = BTreeMap::new();
        let mut eve = BTreeMap::new();
        table.insert((k1(0), k1(0)), 0.8);
        eve.insert((k1(0), k1(0)), EveState::single("v".into(), CMatrix::identity(1, 1)));
        table.insert((Key::EMPTY, Key::EMPTY), 0.2);
        eve.insert((Key::EMPTY, Key::EMPTY), EveState::single("abort".into(), CMatrix::identity(1, 1)));
        QkdRunRecord::from_parts(table, eve, bell_phi().to_density(), QberStats::default()).unwrap()
    }

    #[test]
    fn mu1_examples() {
        let rec = run_protocol(&ProtocolConfig::exact(4, 0.5, 0.0, 1, 3), &EveStrategy::none()).unwrap();
        assert!(mu1_uniformity(&rec) <= 1e-9);
        // ‖(1,0) − (½,½)‖₁ = 1 weighted by Pr(M=1)
        assert_abs_diff_eq!(mu1_uniformity(&constant_key_record()), 0.8, epsilon = 1e-12);
        let rec = run_protocol(&ProtocolConfig::exact(4, 0.5, 0.5, 1, 3), &EveStrategy::intercept_resend(1.0)).unwrap();
        assert!(mu1_uniformity(&rec) > 1e-3);
    }

    #[test]
    fn mu2_examples() {
        let info = fast_info();
        let rec = run_protocol(&ProtocolConfig::exact(4, 0.5, 0.0, 1, 3), &EveStrategy::none()).unwrap();
        for measure in [PrivacyMeasure::Chi, PrivacyMeasure::FamilyAcc] {
            assert!(mu2_privacy(&rec, measure, &info).unwrap() <= 1e-9);
        }
        let copy = copy_record();
        for measure in [PrivacyMeasure::Chi, PrivacyMeasure::FamilyAcc] {
            assert_abs_diff_eq!(mu2_privacy(&copy, measure, &info).unwrap(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn perfect_copy_privacy_and_triangle() {
        let gs = build_game_states(&copy_record()).unwrap();
        let p = eps_privacy(&gs).unwrap();
        assert_abs_diff_eq!(p.keywise, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.eps_privacy, 0.5, epsilon = 1e-12);
        let t = triangle_decomposition(&gs).unwrap();
        assert_abs_diff_eq!(t[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(t[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ideal_against_itself_is_zero() {
        let rec = run_protocol(&ProtocolConfig::exact(4, 0.5, 0.5, 1, 3), &EveStrategy::intercept_resend(1.0)).unwrap();
        let gs = build_game_states(&rec).unwrap();
        let same = GameStates {
            rho_qkd: gs.rho_ideal.clone(),
            ..gs
        };
        assert!(eps_composable(&same).unwrap() <= 1e-12);
    }

    #[test]
    fn no_attack_certifies_with_zero_lhs() {
        let rec = run_protocol(&ProtocolConfig::exact(4, 0.5, 0.0, 1, 3), &EveStrategy::none()).unwrap();
        let gs = build_game_states(&rec).unwrap();
        let cfg = CertifyConfig { info: fast_info(), family_rows: true };
        let r = certify(&rec, &gs, &cfg).unwrap();
        assert!(r.all_pass());
        assert!(r.ordering_holds());
        for name in ["B1", "B2", "HOL", "FID"] {
            let row = r.row(name).unwrap();
            assert!(row.lhs <= 1e-9, "{row:?}");
        }
        assert!(r.triangle_terms.iter().all(|&t| t <= 1e-9));
    }

    #[test]
    fn always_abort_record_has_zero_budgets() {
        let mut table = BTreeMap::new();
        let mut eve = BTreeMap::new();
        table.insert((Key::EMPTY, Key::EMPTY), 1.0);
        eve.insert(
            (Key::EMPTY, Key::EMPTY),
            EveState::single("abort".into(), CMatrix::identity(2, 2) * c(0.5)),
        );
        let rec = QkdRunRecord::from_parts(table, eve, bell_phi().to_density(), QberStats::default()).unwrap();
        let gs = build_game_states(&rec).unwrap();
        let r = certify(&rec, &gs, &CertifyConfig { info: fast_info(), family_rows: true }).unwrap();
        assert_eq!(r.mu1, 0.0);
        assert_eq!(r.mu2_chi, 0.0);
        assert!(r.eps_privacy <= 1e-12);
        assert!(r.eps_composable <= 1e-12);
        assert!(r.all_pass());
    }

    #[test]
    fn keywise_matches_direct_sum() {
        let rec = run_protocol(&ProtocolConfig::exact(4, 0.5, 0.5, 1, 9), &EveStrategy::entangling_probe(0.9)).unwrap();
        let gs = build_game_states(&rec).unwrap();
        let p = eps_privacy(&gs).unwrap();
        // the hybrids are block diagonal in k, so the expansion is exact
        assert_abs_diff_eq!(p.eps_privacy, p.keywise, epsilon = 1e-10);
    }

    #[test]
    fn bound_constants() {
        assert_abs_diff_eq!(bound2_rhs(2, 0.25), 4.0 * 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(bound1_rhs(1, 1.0), 9.0 * (2.0 * std::f64::consts::LN_2).sqrt(), epsilon = 1e-12);
        for m in 0..12 {
            assert!(bound2_rhs(m, 0.3) <= bound1_rhs(m, 0.3));
        }
    }
}
