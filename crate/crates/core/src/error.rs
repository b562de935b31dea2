use thiserror::Error;

/// Which user callback produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Callback {
    ObjectiveValue,
    ObjectiveGradient,
    ObjectiveHessian,
    G,
    GGradient,
    GHessian,
    H,
    HGradient,
    HHessian,
}

impl std::fmt::Display for Callback {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Callback::ObjectiveValue => "objective",
            Callback::ObjectiveGradient => "objective gradient",
            Callback::ObjectiveHessian => "objective hessian",
            Callback::G => "g",
            Callback::GGradient => "g gradient",
            Callback::GHessian => "g hessian",
            Callback::H => "h",
            Callback::HGradient => "h gradient",
            Callback::HHessian => "h hessian",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("player {player}: {callback} returned shape {got}, expected {expected}")]
    Shape {
        player: usize,
        callback: Callback,
        expected: String,
        got: String,
    },

    #[error("player {player}: {callback} returned a non-finite value")]
    NonFinite { player: usize, callback: Callback },

    #[error("player index {index} out of range for {players} players")]
    PlayerIndex { index: usize, players: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid problem: {0}")]
    Problem(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("nnls did not converge within {0} iterations")]
    NnlsIterations(usize),

    #[error("operation requires shared constraints")]
    NotShared,

    #[error("residual map needs full penalization, player {0} has h constraints")]
    NotFullyPenalized(usize),

    #[error("grid oracle supports player dimension <= 3, player {player} has {dim}")]
    OracleDimension { player: usize, dim: usize },

    #[error("{file}:{line}:{column}: {message}")]
    Parse {
        file: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
