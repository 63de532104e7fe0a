pub mod error;
pub mod grid;
pub mod harness;
pub mod loss;
pub mod operator;
pub mod optimizer;
pub mod reference;
pub mod stencil;
pub mod validate;
pub mod warmstart;

pub use error::{Error, Result};
pub use grid::{build_grid, mae, random_field, Axis, Field, GridSpec};
pub use harness::{
    init_levels, run_experiment, run_experiment_with_threads, solve_with_init, summarize,
    ExperimentResult, ExperimentSpec, InitKind, MethodSpec, ProblemRef, Resolution, RunRow, Stats,
    Summary, SummaryRow,
};
pub use loss::{gradient, loss, LossBreakdown, Objective};
pub use operator::{
    builtin_problems, evaluate_boundary, evaluate_operator, BoundaryCondition, BuiltinProblem,
    Coefficient, DiffTerm, Edge, Factor, GridFunction, OperatorSpec, PointSet, ProblemSpec,
};
pub use optimizer::{minimize, Convergence, Method, OptimizerConfig, SolveResult};
pub use reference::{heat_oracle, reference_field, wave_exact, wave_field, HeatOracle};
pub use stencil::{
    classify_points, derivative, first_derivative, ApproxOrder, Direction, SchemePolicy,
    StencilKind,
};
pub use validate::CheckReport;
pub use warmstart::{cascade, interp_multilinear, interp_rbf, CascadeLevel, Interpolator};
