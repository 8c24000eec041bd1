//! Report assembly and rendering.
//!
//! Every number is rounded to 12 significant digits before it is written,
//! so reports are byte-stable across thread counts.
//!
//! CSV layouts:
//! * `simulate`, `certify`, `compose`: `path,value`, one line per leaf of
//!   the JSON report in document order, with `/`-separated paths.
//! * `sweep`: `value,eps_composable,eps_privacy,b1_rhs,b2_rhs,hol_rhs,fid_rhs,all_pass`.

use std::collections::BTreeMap;

use qkdlab_core::bounds::SecurityReport;
use qkdlab_core::qkdsim::{Key, Mode, QberStats, QkdRunRecord};
use serde::Serialize;
use serde_json::Value;

pub const SIG_DIGITS: usize = 12;

pub const SWEEP_COLUMNS: [&str; 8] =
    ["value", "eps_composable", "eps_privacy", "b1_rhs", "b2_rhs", "hol_rhs", "fid_rhs", "all_pass"];

pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIG_DIGITS - 1, x).parse().unwrap_or(x)
}

fn round_value(v: Value) -> Value {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => match n.as_f64() {
            Some(x) => serde_json::Number::from_f64(round_sig(x)).map_or(Value::Null, Value::Number),
            None => Value::Number(n),
        },
        Value::Array(a) => Value::Array(a.into_iter().map(round_value).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_value(v))).collect()),
        other => other,
    }
}

/// Serializes `value` with every float rounded.
pub fn to_rounded_value<T: Serialize>(value: &T) -> Value {
    round_value(serde_json::to_value(value).expect("report types serialize"))
}

pub fn number(x: f64) -> String {
    serde_json::Number::from_f64(round_sig(x)).map_or_else(|| "nan".to_string(), |n| n.to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct LengthProb {
    pub length: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KeyProb {
    pub key: String,
    pub length: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecordSummary {
    pub mode: Mode,
    pub n: usize,
    pub trials: usize,
    pub m_out: usize,
    pub prob_m_out: f64,
    pub prob_abort: f64,
    pub length_dist: Vec<LengthProb>,
    pub qber: QberStats,
    pub prob_keys_equal: f64,
    pub alice_marginal: Vec<KeyProb>,
    pub bob_marginal: Vec<KeyProb>,
    /// Fidelity of one signal pair with a perfect EPR pair.
    pub signal_singlet_fidelity: f64,
    pub eve_views: usize,
}

fn marginal(rec: &QkdRunRecord, pick: impl Fn(&(Key, Key)) -> Key) -> Vec<KeyProb> {
    let mut m: BTreeMap<Key, f64> = BTreeMap::new();
    for (kp, p) in &rec.key_table {
        *m.entry(pick(kp)).or_default() += p;
    }
    m.into_iter().map(|(k, prob)| KeyProb { key: k.to_string(), length: k.len(), prob }).collect()
}

impl RecordSummary {
    pub fn new(rec: &QkdRunRecord, cfg: &qkdlab_core::qkdsim::ProtocolConfig, singlet_fidelity: f64) -> Self {
        let prob_keys_equal = rec.key_table.iter().filter(|((a, b), _)| a == b).map(|(_, p)| p).sum();
        Self {
            mode: cfg.mode,
            n: cfg.n,
            trials: cfg.trials,
            m_out: cfg.m_out,
            prob_m_out: rec.prob_length(cfg.m_out),
            prob_abort: rec.prob_length(0),
            length_dist: rec.length_dist.iter().map(|(&length, &prob)| LengthProb { length, prob }).collect(),
            qber: rec.qber.clone(),
            prob_keys_equal,
            alice_marginal: marginal(rec, |kp| kp.0),
            bob_marginal: marginal(rec, |kp| kp.1),
            signal_singlet_fidelity: singlet_fidelity,
            eve_views: qkdlab_core::qkdsim::view_count(rec),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RepeatedBudget {
    pub rounds: u64,
    pub eps_kappa: f64,
    /// `configured` or `measured` (the scenario's composable advantage).
    pub eps_kappa_source: String,
    pub eps_alpha: f64,
    pub total: f64,
    pub closed_form: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ComposeBudget {
    pub nodes: usize,
    pub tree_total: Option<f64>,
    /// Total accumulated along the leaves-first replacement schedule.
    pub schedule_total: Option<f64>,
    pub repeated: Option<RepeatedBudget>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub qkdlab: String,
    pub report_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Self { qkdlab: env!("CARGO_PKG_VERSION").to_string(), report_format: 1 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub scenario: Value,
    pub record_summary: Option<RecordSummary>,
    pub security_report: Option<SecurityReport>,
    pub compose_budget: Option<ComposeBudget>,
    pub versions: Versions,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub eps_composable: f64,
    pub eps_privacy: f64,
    pub b1_rhs: f64,
    pub b2_rhs: f64,
    pub hol_rhs: f64,
    pub fid_rhs: f64,
    pub all_pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub scenario: Value,
    pub parameter: String,
    pub rows: Vec<SweepRow>,
    pub versions: Versions,
}

pub fn render_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(&to_rounded_value(value)).expect("json");
    s.push('\n');
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}/{k}") };
    match v {
        Value::Object(o) => o.iter().for_each(|(k, v)| flatten(&join(k), v, out)),
        Value::Array(a) => a.iter().enumerate().for_each(|(i, v)| flatten(&join(&i.to_string()), v, out)),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// `path,value` lines for every leaf of the report.
pub fn render_flat_csv<T: Serialize>(value: &T) -> String {
    let v: Value = to_rounded_value(value);
    let mut rows = Vec::new();
    flatten("", &v, &mut rows);
    let mut s = String::from("path,value\n");
    for (p, val) in rows {
        s.push_str(&format!("{},{}\n", csv_field(&p), csv_field(&val)));
    }
    s
}

pub fn render_sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = SWEEP_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        let nums = [r.value, r.eps_composable, r.eps_privacy, r.b1_rhs, r.b2_rhs, r.hol_rhs, r.fid_rhs];
        let mut line: Vec<String> = nums.iter().map(|&x| number(x)).collect();
        line.push(r.all_pass.to_string());
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}
