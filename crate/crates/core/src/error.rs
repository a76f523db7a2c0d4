use thiserror::Error;

/// Errors raised by the scaling-path library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("constraint matrix is rank deficient: rank {rank} of {rows} rows")]
    RankDeficient { rank: usize, rows: usize },

    #[error("infeasible constraints: residual {residual:.3e} after {iterations} iterations")]
    Infeasible { residual: f64, iterations: usize },

    #[error("stale potentials: transport solve did not converge (last change {change:.3e})")]
    StalePotentials { change: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("gram matrix numerically singular after jitter {jitter:.3e}")]
    SingularGram { jitter: f64 },

    #[error("gradient descent found no descent step after {halvings} halvings")]
    NoDescent { halvings: usize },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::Infeasible { .. } => "infeasible",
            Error::StalePotentials { .. } => "stale_potentials",
            Error::NonFinite(_) => "non_finite",
            Error::SingularGram { .. } => "singular_gram",
            Error::NoDescent { .. } => "no_descent",
            Error::Schema(_) => "schema",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    /// Whether the error comes from bad input rather than a failed computation.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::Schema(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
