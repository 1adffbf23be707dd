use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("tangled element {element}: Jacobian determinant {det:.3e}")]
    TangledElement { element: usize, det: f64 },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("Newton iteration did not converge after {iters} iterations (last update {last_update:.3e})")]
    NonConverged { iters: usize, last_update: f64 },
    #[error("requested {requested} modes but numerical rank is {rank}")]
    RankDeficient { requested: usize, rank: usize },
    #[error("store error: {0}")]
    Store(String),
    #[error("provenance mismatch: {0}")]
    Provenance(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
