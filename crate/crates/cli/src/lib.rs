//! Scenario-driven front end: simulate a run, certify its bounds, sweep an
//! attack or protocol parameter, and evaluate composition budgets.

pub mod report;
pub mod scenario;

use std::path::PathBuf;

use qkdlab_core::bounds::{self, BoundsError, CertifyConfig, SecurityReport};
use qkdlab_core::compose::{self, ComposeError};
use qkdlab_core::qkdsim::{self, SimError};
use qkdlab_core::qmatrix::QError;
use rayon::prelude::*;
use thiserror::Error;

use report::{ComposeBudget, RecordSummary, RepeatedBudget, Report, SweepReport, SweepRow, Versions};
use scenario::ScenarioFile;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid scenario: {0}")]
    Schema(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Quantum(#[from] QError),
}

/// Sweepable scenario fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    EveP,
    ProbeAngle,
    QberThreshold,
}

impl std::str::FromStr for SweepParam {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "eve.p" => Ok(Self::EveP),
            "eve.probe_angle" => Ok(Self::ProbeAngle),
            "protocol.qber_threshold" => Ok(Self::QberThreshold),
            other => Err(CliError::Usage(format!(
                "unknown sweep parameter `{other}` (expected eve.p, eve.probe_angle or protocol.qber_threshold)"
            ))),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::EveP => "eve.p",
            Self::ProbeAngle => "eve.probe_angle",
            Self::QberThreshold => "protocol.qber_threshold",
        }
    }

    pub fn apply(self, sc: &ScenarioFile, value: f64) -> Result<ScenarioFile, CliError> {
        let mut sc = sc.clone();
        match self {
            Self::EveP => sc.eve.p = value,
            Self::ProbeAngle => sc.eve.probe_angle = value,
            Self::QberThreshold => sc.protocol.qber_threshold = value,
        }
        sc.validate()?;
        Ok(sc)
    }
}

/// Outcome of a command: rendered output and whether every gated row passed.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub output: String,
    pub all_pass: bool,
}

fn scenario_value(sc: &ScenarioFile) -> serde_json::Value {
    report::to_rounded_value(sc)
}

fn simulate_parts(sc: &ScenarioFile) -> Result<(qkdsim::QkdRunRecord, RecordSummary), CliError> {
    let rec = qkdsim::run_protocol(&sc.protocol, &sc.eve)?;
    let ent = qkdsim::channel_to_ent_pair(&sc.eve)?;
    let f = qkdsim::singlet_fidelity(&ent, 1)?;
    let summary = RecordSummary::new(&rec, &sc.protocol, f);
    Ok((rec, summary))
}

fn certify_parts(sc: &ScenarioFile) -> Result<(RecordSummary, SecurityReport), CliError> {
    let (rec, summary) = simulate_parts(sc)?;
    let gs = qkdsim::build_game_states(&rec)?;
    let cfg = CertifyConfig { info: sc.info.clone(), family_rows: true };
    let rep = bounds::certify(&rec, &gs, &cfg)?;
    Ok((summary, rep))
}

/// Budget of the scenario's compose block; `measured` is the scenario's
/// composable advantage when it has been computed.
pub fn compose_budget(sc: &ScenarioFile, measured: Option<f64>) -> Result<Option<ComposeBudget>, CliError> {
    let Some(block) = &sc.compose else {
        return Ok(None);
    };
    let mut budget = ComposeBudget::default();
    if let Some(tree) = block.tree()? {
        budget.nodes = tree.len();
        budget.tree_total = Some(compose::tree_total(&tree));
        budget.schedule_total = Some(tree.replacement_total(&tree.replacement_schedule())?);
    }
    if let Some(rounds) = block.rounds {
        let (eps_kappa, source) = match (block.eps_kappa, measured) {
            (Some(e), _) => (e, "configured"),
            (None, Some(e)) => (e, "measured"),
            (None, None) => return Err(CliError::Usage("repeated budget needs eps_kappa or a simulated run".into())),
        };
        let (total, _) = compose::repeated_qkd(rounds, eps_kappa, block.eps_alpha)?;
        budget.repeated = Some(RepeatedBudget {
            rounds,
            eps_kappa,
            eps_kappa_source: source.to_string(),
            eps_alpha: block.eps_alpha,
            total,
            closed_form: rounds as f64 * (eps_kappa + block.eps_alpha),
        });
    }
    Ok(Some(budget))
}

fn render<T: serde::Serialize>(value: &T, format: scenario::Format) -> String {
    match format {
        scenario::Format::Json => report::render_json(value),
        scenario::Format::Csv => report::render_flat_csv(value),
    }
}

pub fn cmd_simulate(sc: &ScenarioFile, format: scenario::Format) -> Result<Outcome, CliError> {
    let (_, summary) = simulate_parts(sc)?;
    let rep = Report {
        scenario: scenario_value(sc),
        record_summary: Some(summary),
        security_report: None,
        compose_budget: None,
        versions: Versions::default(),
    };
    Ok(Outcome { output: render(&rep, format), all_pass: true })
}

/// Full certification report, plus the compose budget when the scenario
/// has a compose block.
pub fn certify_report(sc: &ScenarioFile) -> Result<Report, CliError> {
    let (summary, sec) = certify_parts(sc)?;
    let budget = compose_budget(sc, Some(sec.eps_composable))?;
    Ok(Report {
        scenario: scenario_value(sc),
        record_summary: Some(summary),
        security_report: Some(sec),
        compose_budget: budget,
        versions: Versions::default(),
    })
}

pub fn cmd_certify(sc: &ScenarioFile, format: scenario::Format) -> Result<Outcome, CliError> {
    let rep = certify_report(sc)?;
    let all_pass = rep.security_report.as_ref().is_some_and(SecurityReport::all_pass);
    Ok(Outcome { output: render(&rep, format), all_pass })
}

pub fn cmd_compose(sc: &ScenarioFile, format: scenario::Format) -> Result<Outcome, CliError> {
    let Some(block) = &sc.compose else {
        return Err(CliError::Usage("scenario has no [compose] block".into()));
    };
    let measured = if block.needs_measurement() {
        let rec = qkdsim::run_protocol(&sc.protocol, &sc.eve)?;
        let gs = qkdsim::build_game_states(&rec)?;
        Some(bounds::eps_composable(&gs)?)
    } else {
        None
    };
    let rep = Report {
        scenario: scenario_value(sc),
        record_summary: None,
        security_report: None,
        compose_budget: compose_budget(sc, measured)?,
        versions: Versions::default(),
    };
    Ok(Outcome { output: render(&rep, format), all_pass: true })
}

fn row_rhs(rep: &SecurityReport, name: &str) -> f64 {
    rep.row(name).map_or(f64::NAN, |r| r.rhs)
}

/// One certification per value, evaluated concurrently and reported in
/// input order.
pub fn sweep_rows(sc: &ScenarioFile, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>, CliError> {
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    let points: Vec<ScenarioFile> = values.iter().map(|&v| param.apply(sc, v)).collect::<Result<_, _>>()?;
    points
        .par_iter()
        .zip(values.par_iter())
        .map(|(point, &value)| {
            let (_, rep) = certify_parts(point)?;
            Ok(SweepRow {
                value,
                eps_composable: rep.eps_composable,
                eps_privacy: rep.eps_privacy,
                b1_rhs: row_rhs(&rep, "B1"),
                b2_rhs: row_rhs(&rep, "B2"),
                hol_rhs: row_rhs(&rep, "HOL"),
                fid_rhs: row_rhs(&rep, "FID"),
                all_pass: rep.all_pass(),
            })
        })
        .collect()
}

pub fn cmd_sweep(
    sc: &ScenarioFile,
    param: SweepParam,
    values: &[f64],
    format: scenario::Format,
) -> Result<Outcome, CliError> {
    let rows = sweep_rows(sc, param, values)?;
    let all_pass = rows.iter().all(|r| r.all_pass);
    let output = match format {
        scenario::Format::Csv => report::render_sweep_csv(&rows),
        scenario::Format::Json => report::render_json(&SweepReport {
            scenario: scenario_value(sc),
            parameter: param.name().to_string(),
            rows,
            versions: Versions::default(),
        }),
    };
    Ok(Outcome { output, all_pass })
}

/// Comma-separated list of numbers.
pub fn parse_values(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| CliError::Usage(format!("not a number: `{t}`"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parameters_parse() {
        assert_eq!("eve.p".parse::<SweepParam>().unwrap(), SweepParam::EveP);
        assert_eq!("protocol.qber_threshold".parse::<SweepParam>().unwrap().name(), "protocol.qber_threshold");
        assert!("eve.q".parse::<SweepParam>().is_err());
    }

    #[test]
    fn values_parse() {
        assert_eq!(parse_values("0, 0.5,1").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_values("").unwrap().is_empty());
        assert!(parse_values("0,x").is_err());
    }
}
