//! Experiment configuration: JSON schema, defaults and validation.

use std::path::{Path, PathBuf};

use maxdissent::mixing::{BitCosts, SchemeKind};
use maxdissent::optimizer::{ScheduleKind, StepSizeSchedule};
use maxdissent::GraphKind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("{field} {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphFamily {
    Complete,
    Line,
    Star,
    Barbell,
    Ladder,
    #[serde(alias = "er")]
    ErdosRenyi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub kind: GraphFamily,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

impl GraphConfig {
    pub fn graph_kind(&self) -> GraphKind {
        match self.kind {
            GraphFamily::Complete => GraphKind::Complete,
            GraphFamily::Line => GraphKind::Line,
            GraphFamily::Star => GraphKind::Star,
            GraphFamily::Barbell => GraphKind::Barbell,
            GraphFamily::Ladder => GraphKind::Ladder,
            GraphFamily::ErdosRenyi => GraphKind::ErdosRenyi {
                p: self.p.unwrap_or(f64::NAN),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// `f_i ≡ 0`: pure averaging.
    Constant {
        #[serde(default = "one")]
        d: usize,
    },
    /// Scalar estimation from noisy measurements `θ₀ + noise`.
    MlEstimation {
        #[serde(default)]
        theta0: f64,
    },
    /// Regularized logistic regression on synthetic two-blob data.
    Logistic {
        #[serde(default = "default_samples")]
        samples_per_agent: usize,
        #[serde(default = "default_feature_dim")]
        feature_dim: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// i.i.d. standard Gaussian entries.
    #[default]
    Gaussian,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphConfig,
    pub scheme: Vec<SchemeKind>,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub schedule: StepSizeSchedule,
    pub steps: u64,
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Record one CSV row every this many iterations.
    #[serde(default = "one_u64")]
    pub snapshot_every: u64,
    #[serde(default = "default_output")]
    pub output_path: String,
    #[serde(default)]
    pub emit_trace: bool,
    #[serde(default)]
    pub bit_constants: BitCosts,
    #[serde(default)]
    pub init: InitKind,
}

fn one() -> usize {
    1
}

fn one_u64() -> u64 {
    1
}

fn default_samples() -> usize {
    10
}

fn default_feature_dim() -> usize {
    2
}

fn default_output() -> String {
    "out".into()
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.runs < 1 {
            return Err(invalid("runs", "must be ≥ 1"));
        }
        if self.steps < 1 {
            return Err(invalid("steps", "must be ≥ 1"));
        }
        if self.snapshot_every < 1 {
            return Err(invalid("snapshot_every", "must be ≥ 1"));
        }
        if self.scheme.is_empty() {
            return Err(invalid("scheme", "must name at least one scheme"));
        }
        for (k, s) in self.scheme.iter().enumerate() {
            if self.scheme[..k].contains(s) {
                return Err(invalid("scheme", format!("lists {s} twice")));
            }
        }
        match (self.graph.kind, self.graph.p) {
            (GraphFamily::ErdosRenyi, None) => {
                return Err(invalid("graph.p", "is required for erdos_renyi graphs"))
            }
            (GraphFamily::ErdosRenyi, Some(p)) if !(p > 0.0 && p <= 1.0) => {
                return Err(invalid("graph.p", format!("must lie in (0, 1], got {p}")))
            }
            (GraphFamily::ErdosRenyi, Some(_)) => {}
            (_, Some(_)) => {
                return Err(invalid("graph.p", "is only allowed for erdos_renyi graphs"))
            }
            (_, None) => {}
        }
        let scale = self.schedule.scale;
        if !(scale.is_finite() && (scale > 0.0 || self.schedule.kind == ScheduleKind::Constant && scale == 0.0)) {
            return Err(invalid("schedule.scale", format!("must be positive, got {scale}")));
        }
        match self.problem {
            ProblemConfig::Constant { d: 0 } => Err(invalid("problem.d", "must be ≥ 1")),
            ProblemConfig::MlEstimation { theta0 } if !theta0.is_finite() => {
                Err(invalid("problem.theta0", "must be finite"))
            }
            ProblemConfig::Logistic {
                samples_per_agent,
                feature_dim,
            } if samples_per_agent == 0 || feature_dim == 0 => Err(invalid(
                "problem",
                "samples_per_agent and feature_dim must be ≥ 1",
            )),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"graph":{"kind":"line","n":5},"scheme":["global_max_gossip"],
        "problem":{"kind":"constant"},"steps":100}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.runs, 1);
        assert_eq!(cfg.snapshot_every, 1);
        assert_eq!(cfg.schedule, StepSizeSchedule::inv_t(1.0));
        assert_eq!(cfg.bit_constants, BitCosts::default());
        assert_eq!(cfg.problem, ProblemConfig::Constant { d: 1 });
        assert_eq!(cfg.init, InitKind::Gaussian);
        assert!(!cfg.emit_trace);
    }

    #[test]
    fn runs_zero_rejected() {
        let text = MINIMAL.replace("\"steps\":100", "\"steps\":100,\"runs\":0");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert_eq!(err.to_string(), "runs must be ≥ 1");
    }

    #[test]
    fn semantic_and_schema_errors() {
        let with_p = MINIMAL.replace("\"n\":5", "\"n\":5,\"p\":0.3");
        let err = ExperimentConfig::from_json(&with_p).unwrap_err();
        assert!(err.to_string().starts_with("graph.p"), "{err}");

        let unknown = MINIMAL.replace("\"steps\":100", "\"steps\":100,\"colour\":1");
        let err = ExperimentConfig::from_json(&unknown).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");

        let bad_scheme = MINIMAL.replace("global_max_gossip", "push_sum");
        let err = ExperimentConfig::from_json(&bad_scheme).unwrap_err();
        assert!(err.to_string().contains("push_sum"), "{err}");

        let zero_steps = MINIMAL.replace("\"steps\":100", "\"steps\":0");
        assert_eq!(
            ExperimentConfig::from_json(&zero_steps).unwrap_err().to_string(),
            "steps must be ≥ 1"
        );

        let er_no_p = MINIMAL.replace("\"line\"", "\"erdos_renyi\"");
        assert!(ExperimentConfig::from_json(&er_no_p).is_err());
    }

    #[test]
    fn er_sweep_accepted() {
        let text = r#"{"graph":{"kind":"erdos_renyi","n":180,"p":0.4},
            "scheme":["randomized_gossip","local_max_gossip","global_max_gossip","load_balancing"],
            "problem":{"kind":"ml_estimation","theta0":1.0},"steps":1000,"runs":10,"base_seed":7}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.graph.graph_kind(), GraphKind::ErdosRenyi { p: 0.4 });
        assert_eq!(cfg.runs, 10);
    }
}
