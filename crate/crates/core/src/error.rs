//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failure modes of the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data is inconsistent (index mismatch, empty grid, bad degree).
    #[error("structural error: {0}")]
    Structural(String),

    /// A document or value could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// A symbol polynomial vanishes (or nearly so) at a sampled frequency.
    #[error("singular symbol at m = {m}: |value| = {value:e}")]
    SingularSymbol { m: f64, value: f64 },

    /// An integration direction violates the transform's sector condition.
    #[error("sector condition violated: {0}")]
    Sector(String),

    /// The integrand does not decay on the available grid.
    #[error("divergent transform: {0}")]
    Divergence(String),

    /// A bound would overflow `f64`; the exponent is reported in log space.
    #[error("overflow: natural-log exponent {log_exponent} exceeds the f64 range")]
    Overflow { log_exponent: f64 },

    /// The leading coefficient of a pencil vanished at the requested ε.
    #[error("degree drop: leading coefficient of the pencil vanishes")]
    DegreeDrop,

    /// A fit or slope estimate received too few valid points.
    #[error("insufficient data: {got} valid points, need at least {need}")]
    InsufficientData { got: usize, need: usize },

    /// A quantity that should be an integer is not close to one.
    #[error("precision error: winding value {0} is not within 0.2 of an integer")]
    Precision(f64),

    /// A covering or sector construction is infeasible.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// No associated direction family could be constructed.
    #[error("association error: {0}")]
    Association(String),

    /// The Borel symbol is not bounded below on the chosen sector.
    #[error("admissibility violation: {0}")]
    Admissibility(String),

    /// A grid does not cover the range required by an evaluation.
    #[error("grid coverage error: {0}")]
    GridCoverage(String),

    /// The Picard iteration diverged.
    #[error("divergence after {iterations} iterations (last ratio {ratio:.3e})")]
    PicardDivergence { iterations: usize, ratio: f64 },

    /// The Picard iteration hit `max_iter` without meeting the tolerance.
    #[error("no convergence within {iterations} iterations (last increment {increment:.3e})")]
    NonConvergence { iterations: usize, increment: f64 },

    /// An evaluation point lies outside the domain of the object.
    #[error("domain error: {0}")]
    Domain(String),

    /// A regression could not be carried out.
    #[error("fit error: {0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
