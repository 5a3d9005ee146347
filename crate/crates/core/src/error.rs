use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("state within collision radius of a primary (r = {r:e})")]
    Collision { r: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("integrator step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("integrator exceeded {0} steps")]
    MaxSteps(usize),

    #[error("divisor below floor at k = {k} (|d| = {modulus:e})")]
    SmallDivisor { k: usize, modulus: f64 },

    #[error("multipliers not separated: |lambda| = {lam:e}, |mu| = {mu:e}")]
    NotHyperbolic { lam: f64, mu: f64 },

    #[error("twist condition fails: condition number {cond:e}")]
    Twist { cond: f64 },

    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed record: {0}")]
    Format(String),

    #[error("checksum mismatch in {0}")]
    Checksum(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidInput(_) => ErrorClass::Input,
            Error::Io(_) | Error::Format(_) | Error::Checksum(_) => ErrorClass::Io,
            _ => ErrorClass::Numerical,
        }
    }
}
