use thiserror::Error;

use crate::simulator::Trajectory;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    /// The candidate certificate admits no decrease at this history: the
    /// input direction vanishes while the activation term is positive.
    #[error("certificate violation at x = {state:?}: activation {activation:e} > 0 with |LgW| = {lg_norm:e}")]
    CertificateViolation {
        state: Vec<f64>,
        activation: f64,
        lg_norm: f64,
    },

    #[error("integration diverged at t = {time}")]
    Diverged {
        time: f64,
        partial: Box<Trajectory>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
