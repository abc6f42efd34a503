use thiserror::Error;

/// Errors raised by the certificate pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in mode {mode}: {detail}")]
    Dimension { mode: usize, detail: String },

    #[error("invalid parameter `{name}`: {detail}")]
    Parameter { name: &'static str, detail: String },

    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("state {norm} lies outside the quantizer coverage radius {radius}")]
    OutOfRange { norm: f64, radius: f64 },

    #[error("partition invariant violated in cell {cell}: {detail}")]
    Partition { cell: usize, detail: String },

    #[error(
        "sampling or quantization too coarse: eta = {eta} must be < 1 \
         (decrease the sampling period or refine the quantizer)"
    )]
    ConditionViolated { eta: f64 },

    #[error(
        "certificate incompatible with kappa = {kappa}: kappa^2 r^2 lambda_min(P) = {lhs} \
         must be < R^2 lambda_max(P) = {rhs}"
    )]
    CertificateIncompatible { kappa: f64, lhs: f64, rhs: f64 },

    #[error("synthesis failed after {runs} runs ({updates} updates in the last run)")]
    SynthesisFailed { runs: usize, updates: usize },

    #[error("no feasible radius: {0}")]
    RadiusInfeasible(String),

    #[error("L = {l} must lie in [0, {l_max})")]
    Precondition { l: f64, l_max: f64 },

    #[error("unsupported dimension {0} (expected 2)")]
    UnsupportedDimension(usize),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
