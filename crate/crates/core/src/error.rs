use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid coefficients: {0}")]
    Coefficients(String),
    #[error("invalid mode: {0}")]
    Mode(String),
    #[error("grid mismatch: {0}")]
    Grid(String),
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("projection undefined: {0}")]
    ProjectionUndefined(String),
    #[error("resolvent singular at lambda = {0}")]
    ResolventSingular(String),
    #[error("singular step matrix at dt = {0}")]
    SingularStep(f64),
    #[error("regime mismatch: {0}")]
    Regime(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("empty bracket: {0}")]
    EmptyBracket(String),
    #[error("spectrum: {0}")]
    Spectrum(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
