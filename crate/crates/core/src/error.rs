use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} is outside the support of the {family} distribution")]
    Domain { family: &'static str, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("no convergence after {iterations} iterations: {what}")]
    NonConvergence { what: String, iterations: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// True for failures that come from the numerics rather than from
    /// inputs or the filesystem.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Degenerate(_)
                | Error::NonConvergence { .. }
                | Error::NotPositiveDefinite(_)
                | Error::Singular(_)
        )
    }
}
