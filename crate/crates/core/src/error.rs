use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("empty asset universe{}", .0.as_deref().map(|d| format!(" at {d}")).unwrap_or_default())]
    EmptyUniverse(Option<String>),

    #[error("degenerate support: lower bound {0} equals upper bound")]
    DegenerateSupport(f64),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("measure undefined: {0}")]
    UndefinedMeasure(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("root not bracketed: {0}")]
    Bracket(String),

    #[error("design matrix is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Bracket(_))
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
