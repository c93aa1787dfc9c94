use thiserror::Error;

/// Errors raised by model construction, simulation and estimation.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (densities, parameters, files).
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke a step-function contract (e.g. supplied an observation on a skip slot).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("KL divergence is infinite: {0}")]
    InfiniteDivergence(String),

    /// No common lattice unit exists for the model parameters.
    #[error("incommensurable model: {0}")]
    Incommensurable(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(format!($($arg)*)))
    };
}

pub(crate) use bail;
