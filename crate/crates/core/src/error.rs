use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("invalid value `{value}` in column `{column}` (subject {id})")]
    InvalidValue { id: String, column: String, value: String },

    #[error("treatment indicator decreases for subject {id} at t={t}")]
    NonMonotoneTreatment { id: String, t: u32 },

    #[error("duplicate row for subject {id} at t={t}")]
    DuplicateRow { id: String, t: u32 },

    #[error("row after exit for subject {id} at t={t}")]
    PostExitRow { id: String, t: u32 },

    #[error("subject {id} has no fully measured row at t=0")]
    NoBaselineRow { id: String },

    #[error("subject {id} has gaps in its interval rows; expand the panel first")]
    GappedPanel { id: String },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("unknown coefficient `{0}`")]
    UnknownCoefficient(String),

    #[error("row weights do not match the panel: {0}")]
    InvalidWeights(String),

    #[error("grids differ: expected t_max={expected}, found {found}")]
    GridMismatch { expected: u32, found: u32 },

    #[error("no estimable increment model at or before t={t} (subject {id})")]
    NonEstimableGap { id: String, t: u32 },

    #[error("not enough untreated person-time to model covariate increments at t={t}")]
    InsufficientUntreatedData { t: u32 },

    #[error("no treated person-time")]
    NoTreatedPersonTime,

    #[error("no events in the data")]
    NoEvents,

    #[error("newton iterations did not converge after {iterations} steps (gradient max-norm {gradient:e})")]
    NonConvergence { iterations: usize, gradient: f64 },

    #[error("perfect prediction in logistic model for `{0}`")]
    PerfectPrediction(String),

    #[error("monotone likelihood: coefficient `{coefficient}` diverges")]
    MonotoneLikelihood { coefficient: String },

    #[error("time-varying covariate `{0}` not allowed in a marginal structural model")]
    TimeVaryingInMsm(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{failed} of {total} replicates failed")]
    TooManyFailures { failed: usize, total: usize },
}

impl Error {
    /// Short machine-readable tag, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Config(_) => "config",
            Error::MissingColumn(_) => "missing_column",
            Error::InvalidValue { .. } => "invalid_value",
            Error::NonMonotoneTreatment { .. } => "non_monotone_treatment",
            Error::DuplicateRow { .. } => "duplicate_row",
            Error::PostExitRow { .. } => "post_exit_row",
            Error::NoBaselineRow { .. } => "no_baseline_row",
            Error::GappedPanel { .. } => "gapped_panel",
            Error::UnknownVariable(_) => "unknown_variable",
            Error::UnknownCoefficient(_) => "unknown_coefficient",
            Error::InvalidWeights(_) => "invalid_weights",
            Error::GridMismatch { .. } => "grid_mismatch",
            Error::NonEstimableGap { .. } => "non_estimable_gap",
            Error::InsufficientUntreatedData { .. } => "insufficient_untreated_data",
            Error::NoTreatedPersonTime => "no_treated_person_time",
            Error::NoEvents => "no_events",
            Error::NonConvergence { .. } => "non_convergence",
            Error::PerfectPrediction(_) => "perfect_prediction",
            Error::MonotoneLikelihood { .. } => "monotone_likelihood",
            Error::TimeVaryingInMsm(_) => "time_varying_in_msm",
            Error::InvalidConfig(_) => "invalid_config",
            Error::TooManyFailures { .. } => "too_many_failures",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
