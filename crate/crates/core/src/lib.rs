//! Turbo-type affine rank minimisation (TARM), the SVP/NIHT/RGrad
//! baselines, the state-evolution predictor and an experiment harness.
//!
//! Matrices are stored column-major, so `vec(X)` is the raw data slice.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod lowrank;
pub mod matrix;
pub mod operators;
pub mod rng;
pub mod state_evolution;
pub mod tarm;

pub use baselines::{niht_solve, rgrad_solve, svp_solve};
pub use error::{Error, Result};
pub use harness::{gen_lowrank, nmse, run_trial, ProblemInstance, ProblemSpec, SolverId};
pub use lowrank::{best_rank_r, divergence_analytic, divergence_monte_carlo, svd, Subspace, SvdFactors};
pub use matrix::{DenseMatrix, MeasurementVector};
pub use operators::{make_operator, LinearOperator, OperatorKind, OperatorSpec};
pub use state_evolution::{SeModel, SeOperator, Spectrum};
pub use tarm::{
    tarm_solve, tarm_solve_observed, AlphaMode, IterationRecord, ParamStrategy, Params, SolverResult, StepRule,
    TarmConfig, Termination,
};
