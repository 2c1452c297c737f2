use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(String),
    #[error("{0} is singular")]
    Singular(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("channel failed the full-row-rank check after {attempts} attempts")]
    RankDeficient { attempts: usize },
    #[error("infeasible point: {0}")]
    Infeasible(String),
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("bisection failed: {0}")]
    Bisection(String),
    #[error("malformed matrix encoding: {0}")]
    Decode(String),
}

pub type Result<T> = std::result::Result<T, Error>;
