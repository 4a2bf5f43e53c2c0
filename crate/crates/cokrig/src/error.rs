use thiserror::Error;

pub type Result<T> = std::result::Result<T, CokrigError>;

#[derive(Debug, Error)]
pub enum CokrigError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error(
        "correlation matrix for {what} is numerically singular even after the \
         largest nugget {last_nugget:.1e}"
    )]
    StillSingular { what: String, last_nugget: f64 },

    #[error(
        "design level {level} is not nested in level {parent}: point {point:?} \
         has no match within tolerance {tol:.1e}"
    )]
    NotNested {
        level: usize,
        parent: usize,
        point: Vec<f64>,
        tol: f64,
    },

    #[error("duplicate design point at level {level} (rows {i} and {j} coincide within {tol:.1e})")]
    DuplicatePoint {
        level: usize,
        i: usize,
        j: usize,
        tol: f64,
    },

    #[error(
        "not enough observations at level {level}: n = {n} must exceed the \
         {p} trend and {q} scale coefficients"
    )]
    InsufficientData {
        level: usize,
        n: usize,
        p: usize,
        q: usize,
    },

    #[error("collinear regressors at level {level}: the generalized least squares system is singular")]
    CollinearRegressors { level: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Invalid(String),
}

impl CokrigError {
    /// Process exit code for the CLI: 1 for user errors (bad input, bad
    /// config, malformed designs), 2 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CokrigError::StillSingular { .. } | CokrigError::CollinearRegressors { .. } => 2,
            _ => 1,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CokrigError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CokrigError::Invalid(msg.into())
    }
}
