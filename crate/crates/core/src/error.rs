use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit can report. `category()` gives a stable
/// machine-readable tag used by the CLI and the C ABI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {field}: {reason}")]
    InvalidModel { field: String, reason: String },

    #[error("joint {index} value {value} outside limits [{min}, {max}]")]
    JointLimit {
        index: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("singular configuration: Jacobian singular-value ratio {ratio:e}")]
    Singular { ratio: f64 },

    #[error("ill-conditioned matrix ({what}): condition number {condition:e}")]
    Conditioning { what: &'static str, condition: f64 },

    #[error("ill-conditioned plan: condition number {condition:e}, weakest direction dominated by {weakest}")]
    IllConditionedPlan { condition: f64, weakest: String },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("model inconsistency: {0}")]
    ModelInconsistency(String),

    #[error("insufficient q2 groups: found {found}, need at least {needed}")]
    InsufficientGroups { found: usize, needed: usize },

    #[error("collinear q2 groups: regression normal matrix is singular")]
    CollinearGroups,

    #[error("no feasible plan on the candidate grid")]
    InfeasiblePlan,

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("parse error in {source_name} at line {line}: {field}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        field: String,
        message: String,
    },

    #[error("validation error: {field}: {message}")]
    Validation { field: String, message: String },

    #[error("missing input for `{verb}`: {what}")]
    MissingInput { verb: String, what: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidModel { .. } => "invalid-model",
            Error::JointLimit { .. } => "joint-limit",
            Error::Dimension { .. } => "dimension",
            Error::Singular { .. } => "singular",
            Error::Conditioning { .. } => "conditioning",
            Error::IllConditionedPlan { .. } => "ill-conditioned-plan",
            Error::DegenerateData(_) => "degenerate-data",
            Error::ModelInconsistency(_) => "model-inconsistency",
            Error::InsufficientGroups { .. } => "insufficient-groups",
            Error::CollinearGroups => "collinear-groups",
            Error::InfeasiblePlan => "infeasible-plan",
            Error::EmptyDataset(_) => "empty-dataset",
            Error::Parse { .. } => "parse",
            Error::Validation { .. } => "validation",
            Error::MissingInput { .. } => "missing-input",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit status for the CLI; 0 is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Validation { .. } => 2,
            Error::MissingInput { .. } => 3,
            Error::Io { .. } => 4,
            Error::InvalidModel { .. } | Error::Dimension { .. } | Error::JointLimit { .. } => 5,
            Error::Singular { .. } | Error::Conditioning { .. } => 6,
            Error::IllConditionedPlan { .. }
            | Error::InsufficientGroups { .. }
            | Error::CollinearGroups
            | Error::InfeasiblePlan => 7,
            Error::DegenerateData(_) | Error::EmptyDataset(_) => 8,
            Error::ModelInconsistency(_) => 9,
        }
    }

    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidModel {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
