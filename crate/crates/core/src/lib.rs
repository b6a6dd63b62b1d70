//! Solvers for the singular fractional Dirichlet problem
//! (-Delta)^s u = lambda f(u) / u^q on (-1, 1), u = 0 outside,
//! built on the closed-form Green function of the interval.

pub mod barriers;
pub mod branch;
pub mod context;
pub mod error;
pub mod export;
pub mod grid;
pub mod gridfn;
pub mod multiplicity;
pub mod nonlinearity;
pub mod operator;
pub mod problem;
pub mod semipositone;
pub mod singular;
pub mod special;
pub mod tmap;

pub use barriers::{
    build_barriers, build_h, first_pair, lambda_window, BarrierSet, TruncationH, Window,
};
pub use branch::{
    default_lambda_grid, lower_bound_check, trace_branch, uniqueness_scan, BifurcationBranch,
    BranchRow, UniquenessReport,
};
pub use context::SolverContext;
pub use error::{Error, Result};
pub use grid::{make_grid, Grading, Grid};
pub use gridfn::{cone_inf, cone_norm, order_compare, GridFunction, Ordering};
pub use multiplicity::{
    maximal_fixed_point, minimal_fixed_point, strong_increasing_gap, three_solutions, SolutionKind,
    SolutionSet,
};
pub use nonlinearity::{Nonlinearity, NonlinearityKind, NonlinearityValues};
pub use operator::{
    constants, linearized_eigenvalue, principal_eigenpair, EigenPair, GreenOperator,
    OperatorConstants,
};
pub use problem::ProblemSpec;
pub use semipositone::{continue_theta, si_barrier, solve_i0, verify_lambda, SemipositoneSpec};
pub use singular::{solve_pure_singular, solve_regularized, RegularizedSolve};
pub use tmap::{apply_t, residual_p, TResult};
