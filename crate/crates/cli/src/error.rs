use std::fmt;

use quantswitch::Error as CoreError;

/// Pipeline stage an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Plant,
    Quantizer,
    Synthesis,
    Check,
    Bounds,
    Campaign,
    Adversarial,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Plant => "plant",
            Stage::Quantizer => "quantizer",
            Stage::Synthesis => "synthesis",
            Stage::Check => "check",
            Stage::Bounds => "bounds",
            Stage::Campaign => "campaign",
            Stage::Adversarial => "adversarial",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {message}{}", hint.as_ref().map(|h| format!("\n  hint: {h}")).unwrap_or_default())]
pub struct CliError {
    pub stage: Stage,
    pub message: String,
    pub hint: Option<String>,
}

impl CliError {
    pub fn new(stage: Stage, message: String) -> Self {
        Self {
            stage,
            message,
            hint: None,
        }
    }

    pub fn core(stage: Stage, err: CoreError) -> Self {
        let hint = match &err {
            CoreError::ConditionViolated { .. } => Some(
                "the sampled-state bound needs eta < 1: refine the quantizer (smaller eta or xi0) or shorten the sampling period"
                    .to_string(),
            ),
            CoreError::CertificateIncompatible { .. } => Some(
                "the attractor does not fit inside the outer ellipsoid: shrink the inner ball, enlarge the outer one, or shorten the sampling period"
                    .to_string(),
            ),
            CoreError::SynthesisFailed { .. } => {
                Some("raise max_runs or samples_per_run, or try another seed or delta".to_string())
            }
            CoreError::OutOfRange { .. } => {
                Some("the quantizer must cover the outer ball; add levels or enlarge xi0".to_string())
            }
            _ => None,
        };
        Self {
            stage,
            message: err.to_string(),
            hint,
        }
    }

    pub fn io(err: std::io::Error, what: &str) -> Self {
        Self::new(Stage::Output, format!("{what}: {err}"))
    }
}
