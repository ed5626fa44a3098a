//! Error type shared by every core module.

use alloc::string::String;
use core::fmt;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Shapes or lengths do not line up (channel mismatch, stale pool
    /// indices, wrong code length, ...).
    Dimension(String),
    /// Non-finite values where finite ones are required.
    Numeric(String),
    /// An argument violates its documented contract.
    Argument(String),
    /// Too little input to run the algorithm (fewer than two points, ...).
    DegenerateInput(String),
    /// Cluster luminance means are too close to pick the useful cluster;
    /// a manual override is required.
    AmbiguousClusters { luminance: [f64; 2] },
    /// No pixels above the optical-density threshold to estimate stains from.
    InsufficientTissue,
    /// Stain factorization did not converge within the iteration budget.
    Convergence { residual: f64 },
    /// A stain profile with zero concentration scale cannot be normalized.
    DegenerateProfile(String),
    /// A slide with no patch predictions cannot be aggregated.
    EmptySlide,
    /// A class named in the model has no training patches.
    EmptyClass(String),
    /// Pipeline wiring is inconsistent (e.g. child model missing).
    Configuration(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Argument(msg) => write!(f, "argument error: {msg}"),
            Error::DegenerateInput(msg) => write!(f, "degenerate input: {msg}"),
            Error::AmbiguousClusters { luminance } => write!(
                f,
                "cluster luminance means {:.6} and {:.6} are within 1e-3; \
                 pass a manual override to pick the useful cluster",
                luminance[0], luminance[1]
            ),
            Error::InsufficientTissue => {
                write!(f, "no pixels above the optical-density threshold")
            }
            Error::Convergence { residual } => write!(
                f,
                "stain factorization did not converge (relative residual {residual:.6})"
            ),
            Error::DegenerateProfile(msg) => write!(f, "degenerate stain profile: {msg}"),
            Error::EmptySlide => write!(f, "slide has no patch predictions"),
            Error::EmptyClass(name) => write!(f, "no training patches for class {name}"),
            Error::Configuration(msg) => write!(f, "configuration error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
