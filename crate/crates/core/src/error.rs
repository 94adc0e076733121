use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Rejection reasons for a speed-measure specification.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("duplicate position: two atoms at x = {0}")]
    DuplicatePosition(f64),
    #[error("atom positions must be strictly increasing (x = {0} follows {1})")]
    UnsortedAtoms(f64, f64),
    #[error("nonpositive mass {mass} at x = {position}")]
    NonpositiveMass { position: f64, mass: f64 },
    #[error("target must exceed start (start = {start}, target = {target})")]
    TargetNotAboveStart { start: f64, target: f64 },
    #[error("target must exceed all atom positions (atom at x = {0})")]
    TargetNotAboveAtoms(f64),
    #[error("no mass in [start, target)")]
    NoMassInWindow,
    #[error("start must coincide with an atom when mass lies below start")]
    StartNotAnAtom,
    #[error("string carries no atoms")]
    EmptyString,
    #[error("continuous piece must have lower < upper (got [{lower}, {upper}])")]
    BadPieceBounds { lower: f64, upper: f64 },
    #[error("continuous piece density must be nonnegative with at least one positive cell")]
    BadPieceDensity,
    #[error("continuous pieces must be discretized before analytic computation")]
    UndiscretizedPieces,
    #[error("cannot parse decimal value {0:?}")]
    BadDecimal(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid string: {0}")]
    Validation(#[from] ValidationError),
    #[error("rate collision: {first} and {second} within relative {tol:e}")]
    RateCollision { first: f64, second: f64, tol: f64 },
    #[error("root isolation failed: {0}")]
    RootIsolation(String),
    #[error("eigensolve failed: {0}")]
    Eigen(String),
    #[error("numerical breakdown: {0}")]
    Numerical(String),
    #[error("zero count at derivative order {order} is uncertified")]
    Uncertified { order: u32 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("empty sample set")]
    EmptySamples,
    #[error("GIG parameters outside admissible domain: lambda={lambda}, chi={chi}, psi={psi}")]
    GigDomain { lambda: f64, chi: f64, psi: f64 },
}

/// Coarse classification used for process exit codes: input errors exit 2,
/// numerical failures exit 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Numerical,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Validation(_) | Error::Unsupported(_) | Error::GigDomain { .. } => {
                ErrorCategory::Input
            }
            _ => ErrorCategory::Numerical,
        }
    }
}
