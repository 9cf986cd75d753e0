use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("metric is ill-conditioned (condition number {cond:.3e})")]
    IllConditioned { cond: f64 },

    #[error("algebra is not nilpotent")]
    NotNilpotent,

    #[error("degenerate triangle {triangle}: {reason}")]
    DegenerateTriangle { triangle: usize, reason: String },

    #[error("representation violates the surface relator (residual {residual:.3e})")]
    RelatorMismatch { residual: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("metric is not a nilsoliton (residual {residual:.3e}, trace gap {trace_gap:.3e}, norm gap {norm_gap:.3e})")]
    NotSoliton {
        residual: f64,
        trace_gap: f64,
        norm_gap: f64,
    },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 3 for non-convergence, 2 for everything the caller supplied wrong.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoConvergence { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
