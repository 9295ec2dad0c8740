use thiserror::Error;

/// Coarse classification used by the CLI for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Numerical,
    Verification,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("branch {from}-{to} references unknown bus {missing}")]
    DanglingBranch { from: usize, to: usize, missing: usize },
    #[error("network is disconnected: bus {0} is unreachable from bus {1}")]
    Disconnected(usize, usize),
    #[error("branch {from}-{to} has nonpositive reactance {x}")]
    NonpositiveReactance { from: usize, to: usize, x: f64 },
    #[error("invalid case: {0}")]
    InvalidCase(String),
    #[error("invalid dynamic parameters: {0}")]
    Params(String),
    #[error("invalid attack: {0}")]
    Attack(String),
    #[error("victim bus {bus} exceeds its gain budget: {used} > {limit}")]
    Budget { bus: usize, used: f64, limit: f64 },
    #[error("unknown bus {0}")]
    UnknownBus(usize),
    #[error("singular pencil: {0}")]
    SingularPencil(String),
    #[error("eigenvector normalization failed near eigenvalues {cluster:?}: {msg}")]
    Normalization { cluster: Vec<(f64, f64)>, msg: String },
    #[error("QZ iteration did not converge")]
    NoConvergence,
    #[error("evaluation point {0} lies on a pole")]
    Pole(String),
    #[error("near-degenerate eigenvalues {0} and {1}")]
    NearDegenerate(usize, usize),
    #[error("linear program infeasible (binding rows {0:?})")]
    Infeasible(Vec<usize>),
    #[error("linear program unbounded")]
    Unbounded,
    #[error("linear program solver failure: {0}")]
    Lp(String),
    #[error("integration failed at t = {t}: {msg}")]
    Integration { t: f64, msg: String },
    #[error("bracket [{lo}, {hi}] does not straddle the transition")]
    Bracket { lo: f64, hi: f64 },
    #[error("verification failed: {0}")]
    Verification(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Syntax { .. }
            | DanglingBranch { .. }
            | Disconnected(..)
            | NonpositiveReactance { .. }
            | InvalidCase(_)
            | Params(_)
            | Attack(_)
            | Budget { .. }
            | UnknownBus(_)
            | Bracket { .. } => ErrorKind::Input,
            Verification(_) => ErrorKind::Verification,
            _ => ErrorKind::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
