//! Error taxonomy shared across the solver and harness layers.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Dyadic band [kappa, 2*kappa) is not fully contained in the truncation.
    #[error("band-truncated: band [{kappa}, {upper}) exceeds truncation K_max = {k_max}")]
    BandTruncated { kappa: f64, upper: f64, k_max: i32 },

    /// Two fields entering a binary operation carry different truncations.
    #[error("truncation-mismatch: {left} vs {right}")]
    TruncationMismatch { left: i32, right: i32 },

    /// Fixed-point iteration increments stopped contracting; the velocity
    /// amplitude is outside the perturbative regime.
    #[error(
        "divergent-iteration: increment ratio {ratio:.3} at step {step} (amplitude too large)"
    )]
    DivergentIteration { ratio: f64, step: usize },

    /// The requested correlation shape ships without a path sampler.
    #[error("no-sampler: correlation shape `{0}` has no stochastic path sampler")]
    NoSampler(String),

    /// Time grid too coarse for the fastest retained scale.
    #[error("under-resolved: dt = {dt:.3e} exceeds {limit:.3e} (need >= 20 points per min(1/|k|^2, 1/chi))")]
    UnderResolved { dt: f64, limit: f64 },

    /// Convergence gate for the time-dependent iteration failed.
    #[error("convergence-gate: sup-norm bound squared = {value:.3e} >= 1")]
    ConvergenceGate { value: f64 },

    /// A time step produced NaN or infinite coefficients.
    #[error("unstable-step: non-finite coefficient at t = {t}")]
    UnstableStep { t: f64 },

    /// Picard iterates stopped contracting in the energy norm.
    #[error("divergent-picard: energy ratio {ratio:.3} at iterate {iterate}")]
    DivergentPicard { ratio: f64, iterate: usize },

    /// Parameters outside the regime the predictions cover.
    #[error("out-of-theory: {0}")]
    OutOfTheory(String),

    /// The dense oracle system is numerically singular.
    #[error("singular-system: zero pivot at column {column}")]
    SingularSystem { column: usize },

    /// Scaling fit given nonpositive sample means.
    #[error("nonpositive-mean: band kappa = {kappa} has nonpositive sample mean")]
    NonPositiveMean { kappa: f64 },

    /// Malformed specification or configuration value.
    #[error("invalid-spec: {0}")]
    InvalidSpec(String),

    /// A Monte Carlo sample failed inside the harness.
    #[error("sample {index} failed: {source}")]
    SampleFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
