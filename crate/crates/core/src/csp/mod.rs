//! Integer constraint satisfaction over strictly positive finite domains.
//!
//! Problems are built from [`IntegerVariable`]s, binary expression trees and the
//! relations `=`, `<=` and `divides`. [`normalize_problem`] flattens compound terms
//! onto intermediate variables, [`global_arc_reduce`] narrows domains to an
//! arc-consistent fixpoint and [`solve`] runs a depth-first search in heuristic
//! order with propagation after every assignment.

mod brute;
mod domain;
mod json;
mod normalize;
mod problem;
mod propagate;
mod search;

use thiserror::Error;

pub use brute::brute_force_solve;
pub use domain::{Domain, DomainIter, Value, UNBOUNDED};
pub use json::{outcome_to_json, problem_from_json, problem_to_json};
pub use normalize::{is_normalized, normalize_problem};
pub use problem::{
    Constraint, CspProblem, Expr, Heuristic, IntegerVariable, Preference, ProblemBuilder, Relation,
    Solution, VarId, VarKind,
};
pub use propagate::SUPPORT_BUDGET;
pub use search::{global_arc_reduce, solve, solve_with_limit, SolveOutcome};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CspError {
    #[error("domain values must be strictly positive, got {0}")]
    NonPositiveValue(Value),
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("constant `{0}` must have a single value")]
    ConstantNotSingleton(String),
    #[error("reference to unknown variable #{0}")]
    DanglingReference(usize),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("heuristic names `{0}`, which is not a resolution variable")]
    HeuristicNotResolution(String),
    #[error("heuristic lists `{0}` more than once")]
    HeuristicDuplicate(String),
    #[error("resolution variable `{0}` is missing from the heuristic")]
    HeuristicMissing(String),
    #[error("constraint {0} is not in normalized form")]
    NotNormalized(usize),
    #[error("search space of {size} assignments exceeds the cap of {cap}")]
    SearchSpaceTooLarge { size: u128, cap: u128 },
    #[error("search stopped after {0} nodes")]
    NodeLimit(u64),
    #[error("invalid problem document: {0}")]
    Json(String),
}
