use thiserror::Error;

/// Errors raised anywhere in the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("fit window too short: {0}")]
    FitWindow(String),

    #[error("sign change inside fit window at index {0}")]
    SignChange(usize),

    #[error("leading eigenvalue branch lost at s = {re}{im:+}i")]
    BranchLoss { re: f64, im: f64 },

    #[error("continuation step underflow at s = {re}{im:+}i")]
    StepUnderflow { re: f64, im: f64 },

    #[error("near-singular resolvent at s = {re}{im:+}i (min pivot {pivot:.3e})")]
    NearSingular { re: f64, im: f64, pivot: f64 },

    #[error("frequency lies in the open left half-plane: Re s = {0}")]
    LeftHalfPlane(f64),

    #[error("regime mismatch: {0}")]
    Regime(String),

    #[error("k too small: |P_phi C(s)| = {0:.3e} is not below 1/3")]
    TruncationTooSmall(f64),

    #[error("sampling too coarse: {0}")]
    Sampling(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("cache: {0}")]
    Cache(String),

    #[error("{op}: {source}")]
    Operation {
        op: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
