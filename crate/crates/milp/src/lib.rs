//! Sparse MILP models with a self-contained dual simplex and branch-and-bound,
//! CPLEX-style LP text interchange, and pluggable external backends.

pub mod backend;
pub mod bnb;
pub mod lpformat;
pub mod model;
pub mod simplex;

pub use backend::{backend_solve, read_solution, write_solution, Backend};
pub use bnb::{enumerate_oracle, relative_gap, solve_milp, MipLimits, MipSolution, MipStatus};
pub use lpformat::{parse_lp, write_lp};
pub use model::{Model, Row, Sense, Var, VarId};
pub use simplex::{solve_lp, DualSimplex, LpSolution, LpStatus};

#[derive(Debug, thiserror::Error)]
pub enum MilpError {
    #[error("malformed model: {0}")]
    Malformed(String),
    #[error("LP parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("enumeration oracle is capped at 20 binaries, model has {0}")]
    TooManyBinaries(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend failed: {0}")]
    BackendFailed(String),
    #[error("solution parse error: {0}")]
    SolutionParse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
