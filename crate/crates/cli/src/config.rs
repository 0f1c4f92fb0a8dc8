//! TOML configuration shared by every verb. Command-line flags override it.

use std::path::Path;

use hops_core::pipeline::PipelineConfig;
use hops_core::sim::ScenarioConfig;
use serde::{Deserialize, Serialize};

use crate::files::Diagnostic;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Table,
    Door,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub preset: Preset,
    /// Zero drift, noise and outliers.
    pub noiseless: bool,
    pub drift_rate: Option<f64>,
    pub loc_noise_sigma: Option<f64>,
    pub outlier_fraction: Option<f64>,
    /// A complete scenario. Replaces the preset; its seed is still
    /// overridden by `--seed`.
    pub scenario: Option<ScenarioConfig>,
}

impl SimulateConfig {
    pub fn scenario(&self, seed: u64) -> ScenarioConfig {
        let mut cfg = match &self.scenario {
            Some(s) => ScenarioConfig { seed, ..s.clone() },
            None => match self.preset {
                Preset::Table => ScenarioConfig::table(seed),
                Preset::Door => ScenarioConfig::door(seed),
            },
        };
        if self.noiseless {
            cfg = cfg.noiseless();
        }
        if let Some(v) = self.drift_rate {
            cfg.drift_rate = v;
        }
        if let Some(v) = self.loc_noise_sigma {
            cfg.loc_noise_sigma = v;
        }
        if let Some(v) = self.outlier_fraction {
            cfg.outlier_fraction = v;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub pipeline: PipelineConfig,
    pub simulate: SimulateConfig,
}

impl Config {
    pub fn parse(text: &str, path: &str) -> Result<Self, Diagnostic> {
        toml::from_str(text).map_err(|e: toml::de::Error| {
            let offset = e.span().map_or(0, |s| s.start);
            Diagnostic::at_offset(path, text, offset, e.message().trim().to_string())
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string()).map_err(CliError::Input)
    }
}
