//! Run configuration: one JSON document shared by every subcommand.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::model::{
    validate_plan, validate_protocol, validate_setup, validate_stats, MeasuredStats, ProtocolFamily,
    ProtocolSpec, SessionPlan, SetupParams,
};
use crate::planner::{validate_grid, GridSpec};

fn default_rel_tolerance() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub d_start: f64,
    pub d_end: f64,
    pub d_step: f64,
    pub families: Vec<ProtocolFamily>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub schedule: u64,
    pub session: u64,
}

/// A previously reported value to compare the computed rate against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    #[serde(rename = "rate_R")]
    pub rate: f64,
    #[serde(default = "default_rel_tolerance")]
    pub rel_tolerance: f64,
    #[serde(rename = "key_length_L", default, skip_serializing_if = "Option::is_none")]
    pub key_length: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub setup: SetupParams,
    pub protocol: ProtocolSpec,
    pub plan: SessionPlan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<MeasuredStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Seeds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Reference>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl RunConfig {
    /// Parses and validates a config document.
    pub fn from_json(text: &str) -> Result<RunConfig, CliError> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Parse {
            position: Some((e.line(), e.column())),
            message: e.to_string(),
        })?;
        config.validate()
    }

    pub fn validate(self) -> Result<RunConfig, CliError> {
        let setup = validate_setup(self.setup)?;
        let protocol = validate_protocol(self.protocol)?;
        let plan = validate_plan(self.plan)?;
        let stats = self.stats.map(validate_stats).transpose()?;
        let grid = self.grid.map(validate_grid).transpose()?;
        if let Some(d) = self.distance_km {
            if !(d.is_finite() && d >= 0.0) {
                return Err(CliError::Config(format!("distance_km = {d} must be non-negative")));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.families.is_empty() {
                return Err(CliError::Parse {
                    position: None,
                    message: "sweep.families must list at least one protocol family".into(),
                });
            }
            crate::planner::sweep_distances(sweep.d_start, sweep.d_end, sweep.d_step)?;
        }
        if let Some(r) = &self.reference {
            if !(r.rate.is_finite() && r.rel_tolerance >= 0.0) {
                return Err(CliError::Config("reference needs a finite rate_R and rel_tolerance >= 0".into()));
            }
        }
        Ok(RunConfig {
            setup,
            protocol,
            plan,
            stats,
            grid,
            ..self
        })
    }

    pub fn to_pretty_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }
}

/// Loaded config together with the hash of its exact bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub sha256: String,
}

impl LoadedConfig {
    /// Parses config text already in memory; the hash covers its UTF-8 bytes.
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        Ok(LoadedConfig {
            config: RunConfig::from_json(text)?,
            sha256: hex::encode(Sha256::digest(text.as_bytes())),
        })
    }
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::Parse {
        position: None,
        message: format!("config is not UTF-8: {e}"),
    })?;
    LoadedConfig::from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "setup": {"dark_count_Y0": 2.11e-5, "detector_error_e_det": 8.27e-3,
                  "receiver_efficiency_eta_bob": 2.27e-2, "loss_alpha_db_per_km": 0.21},
        "protocol": {"family": "NO_DECOY", "mu": 0.1, "frac_signal": 1.0, "frac_weak": 0.0, "frac_vacuum": 0.0},
        "plan": {"total_pulses_N": 1000, "u_alpha": 10.0}
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.setup.ec_efficiency_f, 1.22);
        assert_eq!(c.setup.vacuum_error_e0, 0.5);
        assert!(c.stats.is_none());
        let again = RunConfig::from_json(&c.to_pretty_json()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_keys_report_position() {
        let text = MINIMAL.replace("\"plan\"", "\"plann\"");
        match RunConfig::from_json(&text) {
            Err(CliError::Parse { position: Some((line, _)), message }) => {
                assert!(line > 1);
                assert!(message.contains("plann"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_errors_are_not_parse_errors() {
        let text = MINIMAL.replace("2.11e-5", "-1e-6");
        assert!(matches!(RunConfig::from_json(&text), Err(CliError::Invalid(_))));
    }

    #[test]
    fn empty_family_list_is_a_parse_error() {
        let text = MINIMAL.replace(
            "\"plan\"",
            "\"sweep\": {\"d_start\": 0, \"d_end\": 10, \"d_step\": 1, \"families\": []}, \"plan\"",
        );
        assert!(matches!(RunConfig::from_json(&text), Err(CliError::Parse { .. })));
    }
}
