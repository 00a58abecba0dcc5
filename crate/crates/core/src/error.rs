use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum GwError {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "expansion for (r={r}, k={k}, d_x={d_x}, d_y={d_y}) needs {count} terms, above the cap of {cap}"
    )]
    TermCap {
        r: u32,
        k: u32,
        d_x: usize,
        d_y: usize,
        count: usize,
        cap: usize,
    },

    #[error("quadratic-form basis of size {size} exceeds the basis cap of {cap}")]
    BasisCap { size: usize, cap: usize },

    #[error("integer overflow while expanding coefficients for (r={r}, k={k})")]
    CoefficientOverflow { r: u32, k: u32 },

    #[error("Jacobi iteration did not converge after {sweeps} sweeps (off-diagonal {off:e})")]
    EigenNoConvergence { sweeps: usize, off: f64 },

    #[error("coupling marginals violate tolerance: max deviation {deviation:e}")]
    MarginalMismatch { deviation: f64 },

    #[error("weights are not a probability vector: {0}")]
    InfeasibleWeights(String),

    #[error("network simplex exceeded {0} pivots")]
    PivotLimit(usize),

    #[error("parameter {index} = {value} lies outside its box half-width {half_width}")]
    OutsideBox {
        index: usize,
        value: f64,
        half_width: f64,
    },

    #[error("instance too large for brute force: {n_x}x{n_y} (limit n_x*n_y <= 9)")]
    TooLarge { n_x: usize, n_y: usize },

    #[error("reference cannot be resolved: {0}")]
    UnresolvableReference(String),

    #[error("trial {trial} at n={n} failed: {source}")]
    Trial {
        n: usize,
        trial: usize,
        #[source]
        source: Box<GwError>,
    },

    #[error("unknown distribution spec `{0}`")]
    UnknownDistribution(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl GwError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        GwError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by combinatorial size limits rather than bad input.
    pub fn is_cap(&self) -> bool {
        matches!(self, GwError::TermCap { .. } | GwError::BasisCap { .. })
    }
}

pub type Result<T> = std::result::Result<T, GwError>;
