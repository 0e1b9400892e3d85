use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("integration failed at t = {time} ns (step {step:e} ns): {reason}")]
    IntegrationFailure { time: f64, step: f64, reason: String },

    #[error("first-order rate is singular: D = {d:e} <= t_c^2 = {tc2:e}")]
    SingularRegime { d: f64, tc2: f64 },

    #[error("leading tap |h[0]| = {h0:e} is below tolerance {tol:e}; compensate the channel delay before inverting")]
    NonInvertibleLeadingTap { h0: f64, tol: f64 },

    #[error("quadrature did not converge: {0}")]
    Accuracy(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("at grid point (t = {time} ns, amplitude = {amplitude}): {source}")]
    AtGridPoint {
        time: f64,
        amplitude: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
