//! Joint latency minimization: convex surrogates, the convex-program
//! representation and solver, the three alternating sub-problems, and the
//! outer block coordinate descent with its baselines.

pub mod barrier;
pub mod bcd;
mod energy;
pub mod feasibility;
pub mod oracle;
pub mod program;
pub mod rounding;
pub mod state;
pub mod subproblem;
pub mod surrogate;

pub use barrier::{solve_convex, SolveReport, SolveStatus, SolverSettings};
pub use bcd::{bcd_from, bcd_optimize, BaselineMode, BcdOptions, BcdResult, OptimizeError};
pub use oracle::{brute_force_oracle, tiny_instance, OracleError, OracleOptions, OracleResult};
pub use feasibility::{check_feasibility, ConstraintViolation, ViolationReport};
pub use program::{Atom, ConvexProgram, VarId};
pub use rounding::{repair_schedule, round_scheduling, Schedule};
pub use state::SurrogateState;
pub use subproblem::{build_program, build_subproblem1, build_subproblem2, build_subproblem3, Blocks, ScheduleMode, Subproblem};
pub use surrogate::{bilinear_upper, log_surrogate_lhs, square_lower};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("malformed program: {0}")]
    Structure(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid linearization state: {0}")]
    InvalidState(String),
}
