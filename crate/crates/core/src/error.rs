use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("stratum {stratum} has no failures")]
    NoFailures { stratum: i64 },

    #[error("non-finite relative risk at theta = {theta:?}")]
    NonFinite { theta: Vec<f64> },

    #[error("information matrix singular at theta = {theta:?}")]
    SingularInformation { theta: Vec<f64> },

    #[error("fit did not converge: {0}")]
    FitFailed(String),

    #[error("constrained loglik exceeds unconstrained by {excess:e}")]
    InconsistentFits { excess: f64 },

    #[error("infeasible censoring plan: cannot censor {requested} of {available} at stage {stage}")]
    InfeasiblePlan {
        stage: usize,
        requested: usize,
        available: usize,
    },

    #[error("only {completed} of {requested} bootstrap trials usable")]
    TooManyFailedTrials { completed: usize, requested: usize },

    #[error("no sign change in bracket [{lo}, {hi}]: p = {p_lo} at lo, {p_hi} at hi")]
    NoSignChange {
        lo: f64,
        hi: f64,
        p_lo: f64,
        p_hi: f64,
    },

    #[error("simulated expected information is not positive definite after {trials} trials")]
    SingularExpectedInformation { trials: usize },

    #[error("r* adjustment undefined: u/r = {u_over_r}, C = {c}")]
    UndefinedAdjustment { u_over_r: f64, c: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::SingularInformation { .. }
                | Error::FitFailed(_)
                | Error::InconsistentFits { .. }
                | Error::TooManyFailedTrials { .. }
                | Error::NoSignChange { .. }
                | Error::SingularExpectedInformation { .. }
                | Error::UndefinedAdjustment { .. }
                | Error::Degenerate(_)
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::NoFailures { .. } => "no_failures",
            Error::NonFinite { .. } => "non_finite",
            Error::SingularInformation { .. } => "singular_information",
            Error::FitFailed(_) => "fit_failed",
            Error::InconsistentFits { .. } => "inconsistent_fits",
            Error::InfeasiblePlan { .. } => "infeasible_plan",
            Error::TooManyFailedTrials { .. } => "too_many_failed_trials",
            Error::NoSignChange { .. } => "no_sign_change",
            Error::SingularExpectedInformation { .. } => "singular_expected_information",
            Error::UndefinedAdjustment { .. } => "undefined_adjustment",
            Error::Degenerate(_) => "degenerate",
            Error::Io(_) => "io",
        }
    }
}
