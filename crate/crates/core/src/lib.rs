//! Safeguarded augmented Lagrangian solver for generalized Nash equilibrium
//! problems.

pub mod alcore;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod outer;
pub mod problems;
pub mod subsolver;

pub use error::{Error, Result};
pub use model::{GnepProblem, MultiplierSet, PerPlayer, PlayerSpec, Point};
pub use outer::{solve, solve_variational, Mode, OuterConfig, Status, TerminationReport};
