use thiserror::Error;

/// Errors raised by the geometry, finite element and reduction layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The free-form deformation folded over: `det J <= 0` at `point` for `mu`.
    #[error("degenerate geometry: det J = {det:.3e} at ({:.6}, {:.6}) for mu = {mu:?}", point[0], point[1])]
    DegenerateGeometry {
        point: [f64; 2],
        mu: Vec<f64>,
        det: f64,
    },

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("reduced system is singular at mu = {mu:?} (loss of inf-sup stability?)")]
    SingularReducedSystem { mu: Vec<f64> },

    #[error("empirical interpolation for {entry} did not reach tol {tol:e} (error {achieved:e} with {terms} terms)")]
    EimNotConverged {
        entry: String,
        tol: f64,
        achieved: f64,
        terms: usize,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("artifact mismatch: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serialization(#[from] bincode::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
