use thiserror::Error;

/// Errors reported by every fallible operation in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate distance {0:e} m between antenna and user")]
    DegenerateDistance(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("coupler decay exponent is imaginary (gamma0^2 < 4 pi^2 n_clad^2 / lambda^2)")]
    ImaginaryExponent,
    #[error("singular matrix (condition estimate {0:e})")]
    SingularMatrix(f64),
    #[error("grid pitch {pitch} m is below the minimum spacing {min_spacing} m")]
    PitchViolation { pitch: f64, min_spacing: f64 },
    #[error("infeasible: {count} antennas with spacing {min_spacing} m do not fit in {length} m")]
    Infeasible {
        count: usize,
        min_spacing: f64,
        length: f64,
    },
    #[error("channel vector is zero")]
    ZeroChannel,
    #[error("frequency {0} Hz is outside the dispersion table")]
    OutOfBand(f64),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Config(e.to_string())
    }
}
