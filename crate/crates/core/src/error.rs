use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("grid error: {0}")]
    Grid(String),
    #[error("quadrature failed to reach tolerance: estimate {value:e}, error {error:e}")]
    Quadrature { value: f64, error: f64 },
    #[error("ODE integration failed: {0}")]
    Integrator(String),
    #[error("fit did not converge: {0}")]
    Fit(String),
    #[error("ill-conditioned system: condition number {0:e} exceeds 1e12")]
    IllConditioned(f64),
    #[error("no root found: {0}")]
    NoRoot(String),
    #[error("ion flies through the mirror (passes G3)")]
    MirrorPassThrough,
    #[error("ion is turned back before reaching {0} (wrong field polarity)")]
    WrongPolarity(&'static str),
    #[error("dispersion curve is not strictly monotone")]
    NotMonotone,
    #[error("value {0} outside the tabulated range")]
    OutOfRange(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidInput(msg()))
    }
}
