//! Mixed-integer linear programming: a bundled dual simplex and branch and
//! bound, the extensive form of the dispatch problem, and an LP-file writer
//! for cross-checking with external solvers.

mod branch;
mod extensive;
mod lp_format;
mod lu;
mod model;
mod simplex;

pub use branch::{solve_mip, MipOptions, MipSolution, MipStatus, FEASIBILITY_TOL, INTEGRALITY_TOL};
pub use extensive::{
    build_extensive, build_extensive_strict, BuildError, ExtensiveProblem, NodeVars, SolveStatus,
    SolverOutcome, BIG_M_MARGIN,
};
pub use lp_format::write_lp;
pub use model::{Constraint, LinearProgram, Variable};
pub use simplex::{DualSimplex, LpStatus};

/// CPLEX LP text of an extensive problem, with `pc_<node>`, `pd_<node>`,
/// `x_<node>`, `e_<node>` and `z_<node>` variables in node order.
pub fn export_lp(problem: &ExtensiveProblem) -> String {
    write_lp(&problem.lp)
}
