use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid of level {level} has {dim} points, above the limit of {max_dim}")]
    ResourceGuard { level: u32, dim: usize, max_dim: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("ellipticity violated: vol_squared({x}) = {value} is not positive")]
    Ellipticity { x: f64, value: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("explicit step unstable: 1 + dt * L(x,x) = {factor} at index {index}")]
    Unstable { index: usize, factor: f64 },

    #[error("non-Markov generator: rate {rate} between sites {from} and {to}")]
    NonPositiveRate { from: usize, to: usize, rate: f64 },

    #[error("kernels are not nested: {0}")]
    NotNested(String),

    #[error("difference {value} at position {index} is not positive")]
    NonPositiveDifference { index: usize, value: f64 },

    #[error("matrix exponential failed: {0}")]
    Expm(String),

    #[error("{what}: discrepancy {discrepancy:e} exceeds tolerance {tolerance:e}")]
    Consistency {
        what: &'static str,
        discrepancy: f64,
        tolerance: f64,
    },

    #[error("path enumeration would visit {count} paths (limit {limit})")]
    PathExplosion { count: u128, limit: u128 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the failure stems from user input rather than the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::ResourceGuard { .. }
                | Error::InvalidParameter(_)
                | Error::Ellipticity { .. }
                | Error::Config(_)
                | Error::Json(_)
        )
    }
}
