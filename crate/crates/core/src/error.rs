use thiserror::Error;

/// Errors raised by the lab's numerical operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ball does not contain any cell center of the grid")]
    EmptyRestriction,

    #[error("masses differ: {source_mass} vs {target_mass} (relative defect {relative:.3e})")]
    MassMismatch {
        source_mass: f64,
        target_mass: f64,
        relative: f64,
    },

    #[error("problem too large for the exact solver: {cells} cells exceeds cap {cap}")]
    ProblemTooLarge { cells: usize, cap: usize },

    #[error("solver did not converge in {iterations} iterations (last defect {defect:.3e})")]
    ConvergenceFailure { iterations: usize, defect: f64 },

    #[error("incompatible Neumann data: defect {defect:.3e} exceeds hard cap {cap:.3e}")]
    IncompatibleData { defect: f64, cap: f64 },

    #[error("linear solve failed: {0}")]
    SolverFailure(String),

    #[error("harmonic jet fit is ill-conditioned (condition number {condition:.3e})")]
    FitDegenerate { condition: f64 },

    #[error("matrix is not symmetric (asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("region exceeds the data domain: {0}")]
    DomainExceeded(String),

    #[error("smallness hypothesis violated: {quantity} = {value:.4e} > {threshold:.4e}")]
    SmallnessViolated {
        quantity: &'static str,
        value: f64,
        threshold: f64,
    },

    #[error("iteration trace too short: {valid} valid steps, need {needed}")]
    InsufficientTrace { valid: usize, needed: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyRestriction => "EmptyRestriction",
            Error::MassMismatch { .. } => "MassMismatch",
            Error::ProblemTooLarge { .. } => "ProblemTooLarge",
            Error::ConvergenceFailure { .. } => "ConvergenceFailure",
            Error::IncompatibleData { .. } => "IncompatibleData",
            Error::SolverFailure(_) => "SolverFailure",
            Error::FitDegenerate { .. } => "FitDegenerate",
            Error::NotSymmetric { .. } => "NotSymmetric",
            Error::DomainExceeded(_) => "DomainExceeded",
            Error::SmallnessViolated { .. } => "SmallnessViolated",
            Error::InsufficientTrace { .. } => "InsufficientTrace",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Config(_) => "ConfigError",
            Error::Parse(_) => "ParseError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }

    /// True for errors caused by bad user input rather than a numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::MassMismatch { .. }
                | Error::InvalidInput(_)
                | Error::Config(_)
                | Error::Parse(_)
                | Error::Io(_)
                | Error::ProblemTooLarge { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
