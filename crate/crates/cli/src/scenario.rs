//! Scenario files.
//!
//! A scenario is a TOML document with the blocks `protocol`, `eve`,
//! optional `info`, optional `compose` and optional `output`. Unknown keys
//! are rejected and every seed must be given explicitly.

use std::fs;
use std::path::{Path, PathBuf};

use qkdlab_core::compose::{CompositionTree, NodeSpec};
use qkdlab_core::qinfo::MeasurementFamilyConfig;
use qkdlab_core::qkdsim::{EveStrategy, ProtocolConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
}

/// Composition budget inputs.
///
/// `nodes` is a call tree given as a node list with parent references.
/// `rounds` asks for the budget of repeated key distribution, with the key
/// distribution advantage taken from `eps_kappa` when given and measured
/// from the simulated scenario otherwise.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeBlock {
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub rounds: Option<u64>,
    #[serde(default)]
    pub eps_kappa: Option<f64>,
    #[serde(default)]
    pub eps_alpha: f64,
}

impl ComposeBlock {
    /// The call tree, if any nodes are listed.
    pub fn tree(&self) -> Result<Option<CompositionTree>, CliError> {
        if self.nodes.is_empty() {
            return Ok(None);
        }
        Ok(Some(CompositionTree::from_parents(&self.nodes)?))
    }

    /// Whether the repeated budget needs a simulated advantage.
    pub fn needs_measurement(&self) -> bool {
        self.rounds.is_some() && self.eps_kappa.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub protocol: ProtocolConfig,
    pub eve: EveStrategy,
    #[serde(default)]
    pub info: MeasurementFamilyConfig,
    #[serde(default)]
    pub compose: Option<ComposeBlock>,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let sc: ScenarioFile = toml::from_str(text).map_err(|e| CliError::Schema(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Schema(msg) => CliError::Schema(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.protocol.validate()?;
        self.eve.validate()?;
        self.info.validate()?;
        if let Some(block) = &self.compose {
            block.tree()?;
            if let Some(t) = block.rounds {
                qkdlab_core::compose::repeated_qkd(t, block.eps_kappa.unwrap_or(0.0), block.eps_alpha)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[protocol]
n = 4
test_fraction = 0.5
qber_threshold = 0.25
m_out = 1
seed = 7

[eve]
kind = "intercept_resend"
p = 1.0
"#;

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let sc = ScenarioFile::parse(BASE).unwrap();
        assert_eq!(sc.protocol.n, 4);
        assert_eq!(sc.output.format, Format::Json);
        assert!(sc.compose.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = ScenarioFile::parse(&format!("{BASE}\nbogus = 1\n")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus"), "{msg}");
        assert!(msg.contains("line"), "{msg}");

        let err = ScenarioFile::parse(&BASE.replace("p = 1.0", "p = 1.0\nangle = 2")).unwrap_err();
        assert!(err.to_string().contains("angle"));
    }

    #[test]
    fn seed_is_mandatory() {
        let err = ScenarioFile::parse(&BASE.replace("seed = 7\n", "")).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
        let with_info = format!("{BASE}\n[info]\nkind = \"qubit_projective_grid\"\ngrid_size = 50\nrefinement_rounds = 1\noutcomes = 2\n");
        assert!(ScenarioFile::parse(&with_info).is_err());
    }

    #[test]
    fn semantic_errors_are_reported() {
        assert!(ScenarioFile::parse(&BASE.replace("p = 1.0", "p = 1.5")).is_err());
        assert!(ScenarioFile::parse(&BASE.replace("test_fraction = 0.5", "test_fraction = 2.0")).is_err());
        let cyclic = format!(
            "{BASE}\n[compose]\nnodes = [{{ id = \"a\", eps = 0.1, parent = \"b\" }}, {{ id = \"b\", eps = 0.1, parent = \"a\" }}]\n"
        );
        assert!(matches!(ScenarioFile::parse(&cyclic), Err(CliError::Compose(_))));
        let zero_rounds = format!("{BASE}\n[compose]\nrounds = 0\n");
        assert!(ScenarioFile::parse(&zero_rounds).is_err());
    }

    #[test]
    fn compose_block_parses() {
        let text = format!(
            "{BASE}\n[compose]\nrounds = 3\neps_alpha = 0.001\nnodes = [{{ id = \"qkd\", eps = 0.01 }}, {{ id = \"auth\", eps = 0.002, parent = \"qkd\" }}]\n"
        );
        let sc = ScenarioFile::parse(&text).unwrap();
        let block = sc.compose.unwrap();
        assert!(block.needs_measurement());
        assert_eq!(block.tree().unwrap().unwrap().len(), 2);
    }
}
