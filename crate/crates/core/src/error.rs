//! Error types shared across the crate.

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid formation spec: {0}")]
    InvalidSpec(String),

    #[error("invalid gain: {0}")]
    InvalidGain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("closed loop is not Hurwitz (max Re eig = {max_re:.6e})")]
    NonHurwitz { max_re: f64 },

    #[error("Schur decomposition did not converge")]
    SchurFailed,

    #[error("Lyapunov residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    LyapunovResidual { residual: f64, tol: f64 },

    #[error("matrix is not positive definite")]
    NonPositiveDefinite,

    #[error("optimizer stopped after {max_iters} iterations with gradient norm {grad_norm:.3e}")]
    MaxItersExceeded {
        max_iters: usize,
        grad_norm: f64,
        /// Best parameter vector seen before giving up.
        best: Vec<f64>,
    },

    #[error("stability margin violated: need beta^2 > 8 alpha (beta^2 = {beta_sq}, 8 alpha = {eight_alpha})")]
    StabilityMarginViolated { beta_sq: f64, eight_alpha: f64 },

    #[error("diagonal-restricted operator is rank deficient at vehicle {index}")]
    SingularRestriction { index: usize },

    #[error("line search could not restore closed-loop stability")]
    LostStability,

    #[error("homotopy stage at epsilon = {epsilon} failed: {source}")]
    HomotopyStage {
        epsilon: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("unstable discretization: dt * max|eig| = {product:.3e} must be < 1")]
    UnstableDiscretization { product: f64 },

    #[error("degenerate data for fit: {0}")]
    DegenerateData(String),

    #[error("no closed form is available for this controller family")]
    Unavailable,

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
