//! Per-iteration convex subproblems of the reweighted scheme.
//!
//! * [`constrained`]: `min tr(W T(u))` subject to the whitened fitting ball and
//!   `T(u) ⪰ 0`, solved by a barrier method or by operator splitting.
//! * [`ficmra`]: the Lagrangian relaxation without the PSD constraint, solved
//!   in closed form through a real least-squares system.

mod barrier;
pub mod constrained;
pub mod ficmra;
mod splitting;

pub use constrained::{
    is_feasible, solve_constrained, trace_objective, ConstrainedProblem, ConstrainedSolution,
    ConstrainedSolver, InnerMethod, SolverOptions, SplittingState,
};
pub use ficmra::{
    build_quadratic_operator, build_quadratic_operator_explicit, solve_ficmra, FicmraSolver,
    FicmraWhitener, QuadraticOperator,
};
