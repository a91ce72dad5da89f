use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular configuration: inertia condition number {condition:.3e} exceeds limit")]
    SingularConfiguration { condition: f64 },

    #[error("rank-deficient regressor: numerical rank {rank} < {expected}; unidentifiable directions: {}", directions.join("; "))]
    RankDeficient {
        rank: usize,
        expected: usize,
        directions: Vec<String>,
    },

    #[error("degenerate system: {0}")]
    Degenerate(String),

    #[error("controller fault at stage `{stage}`: non-finite value")]
    ControllerFault { stage: &'static str },

    #[error("simulation fault at t = {t:.6} s: {source}")]
    Simulation {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite state at t = {t:.6} s (q = {q:?})")]
    NonFiniteState { t: f64, q: Vec<f64> },

    #[error("log parse error at line {line}: {message}")]
    LogParse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
