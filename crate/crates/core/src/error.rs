use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("duplicate mode label `{0}`")]
    DuplicateMode(String),
    #[error("mode `{0}` has zero truncation")]
    ZeroTruncation(String),
    #[error("unknown mode label `{0}`")]
    UnknownMode(String),
    #[error("mode labels collide: `{0}`")]
    ModeCollision(String),
    #[error("matrix is not unitary (max deviation {deviation:e})")]
    NotUnitary { deviation: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("parameter `{name}` out of range: {value}")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("truncation leakage {leakage:e} exceeds limit {limit:e}")]
    TruncationLeakage { leakage: f64, limit: f64 },
    #[error("series truncated at n = {n_max} leaves tail {tail:e} above {limit:e}")]
    SeriesTruncation { n_max: usize, tail: f64, limit: f64 },
    #[error("matrix is not a valid density operator: {0}")]
    NotPhysical(String),
    #[error("missing polarization sub-mode `{0}`")]
    MissingPolarization(String),
    #[error("undefined for lambda = 0")]
    ZeroLambda,
    #[error("no counts recorded")]
    NoCounts,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("maximum-likelihood fit did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },
    #[error("preparation set does not span the operator space (rank {rank} < {required})")]
    RankDeficient { rank: usize, required: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
