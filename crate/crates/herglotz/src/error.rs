//! Error types shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while evaluating geometry, jump maps or the
/// hybrid integrator.
#[derive(Debug, Error)]
pub enum Error {
    /// The metric failed its Cholesky factorization at a queried point.
    #[error("metric is not positive definite at q = {q:?}")]
    NonPositiveDefinite { q: Vec<f64> },

    /// The gap normal vanishes (in the metric norm) at the contact point.
    #[error("degenerate contact normal at q = {q:?}: |grad gap|_g^2 = {norm_sq:.3e}")]
    DegenerateNormal { q: Vec<f64>, norm_sq: f64 },

    /// The constraint Gram matrix psi g^-1 psi^T is numerically singular.
    #[error("singular constraint mass matrix: sigma_min/sigma_max = {ratio:.3e}")]
    SingularConstraintMass { ratio: f64 },

    /// Contact with (numerically) zero normal velocity; the caller decides
    /// whether to treat it as a constraint activation instead.
    #[error("grazing contact: normal speed {normal_speed:.3e} below grazing tolerance")]
    GrazingContact { normal_speed: f64 },

    /// A (before, at, after) rank triple that no generalized distribution
    /// spanned by continuous rows can produce.
    #[error("rank triple ({before}, {at}, {after}) is not realizable")]
    InvalidTriple {
        before: usize,
        at: usize,
        after: usize,
    },

    /// The adaptive step controller shrank the step below the resolvable width.
    #[error("step size underflow at t = {t}: h = {h:.3e}")]
    StepSizeUnderflow { t: f64, h: f64 },

    /// More events than the configured bound inside one time window.
    #[error("Zeno guard tripped at t = {t}: {count} events within a window of {window}")]
    ZenoDetected { t: f64, count: usize, window: f64 },

    /// The initial state violates the active constraints or penetrates a gap.
    #[error("inconsistent initial state: {0}")]
    InconsistentInitialState(String),

    /// A scenario or system parameter failed validation.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A supplied analytic derivative disagrees with finite differences.
    #[error("analytic derivative check failed: {0}")]
    DerivativeMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
