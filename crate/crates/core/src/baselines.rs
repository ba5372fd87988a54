//! Hard-thresholding baselines: SVP, NIHT and RGrad.
//!
//! All three start from `X^(0) = 0` and emit the same trace schema as
//! [`tarm_solve`](crate::tarm::tarm_solve), with `alpha = 0` and `c = 1`.

use crate::error::Result;
use crate::lowrank::{self, Subspace, SubspaceBasis};
use crate::matrix::{DenseMatrix, MeasurementVector};
use crate::operators::LinearOperator;
use crate::tarm::{check_problem, projected_step, Monitor, Params, SolverResult, TarmConfig, Termination};

/// `X = D(X + mu A^T(y - A(X)))` with a fixed step (`cfg.svp_step`,
/// default `n/m`).
pub fn svp_solve(
    op: &LinearOperator,
    y: &MeasurementVector,
    cfg: &TarmConfig,
    truth: Option<&DenseMatrix>,
) -> Result<SolverResult> {
    let mu = cfg.svp_step.unwrap_or(op.n() as f64 / op.m() as f64);
    hard_threshold(op, y, cfg, truth, Direction::Fixed(mu))
}

/// Full gradient step with the normalised step size computed on the column
/// space of the current estimate.
pub fn niht_solve(
    op: &LinearOperator,
    y: &MeasurementVector,
    cfg: &TarmConfig,
    truth: Option<&DenseMatrix>,
) -> Result<SolverResult> {
    hard_threshold(op, y, cfg, truth, Direction::Normalized)
}

/// Steepest descent along the gradient projected onto the tangent space of
/// the rank-r manifold at the current estimate, followed by truncation.
pub fn rgrad_solve(
    op: &LinearOperator,
    y: &MeasurementVector,
    cfg: &TarmConfig,
    truth: Option<&DenseMatrix>,
) -> Result<SolverResult> {
    hard_threshold(op, y, cfg, truth, Direction::Riemannian)
}

#[derive(Clone, Copy)]
enum Direction {
    Fixed(f64),
    Normalized,
    Riemannian,
}

fn hard_threshold(
    op: &LinearOperator,
    y: &MeasurementVector,
    cfg: &TarmConfig,
    truth: Option<&DenseMatrix>,
    direction: Direction,
) -> Result<SolverResult> {
    check_problem(op, y, cfg, truth)?;
    let (n1, n2) = op.shape();
    let mut monitor = Monitor::new(cfg, y, truth)?;
    let mut x = DenseMatrix::zeros(n1, n2);
    let mut resid = y.clone();
    let mut basis: Option<SubspaceBasis> = None;

    for t in 1..=cfg.max_iters {
        let grad = op.adjoint(&resid)?;
        let (mu, step) = match direction {
            Direction::Fixed(mu) => (mu, grad),
            Direction::Normalized => (projected_step(op, &grad, basis.as_ref(), Subspace::LeftSingular, cfg.rank)?.0, grad),
            Direction::Riemannian => projected_step(op, &grad, basis.as_ref(), Subspace::Tangent, cfg.rank)?,
        };
        let mut r = x.clone();
        r.axpy(mu, &step);
        if !(mu.is_finite() && r.is_finite()) {
            return Ok(monitor.diverged(x.clone(), x));
        }
        let factors = lowrank::svd(&r)?;
        let z = factors.truncate(cfg.rank)?;
        let resid_new = y - &op.apply(&z)?;
        let params = Params { mu, alpha: 0.0, c: 1.0 };
        let stop = monitor.record(op, t, params, false, &z, None, &resid_new)?;
        basis = Some(factors.leading(cfg.rank)?);
        x = z;
        resid = resid_new;
        if let Some(term) = stop {
            return Ok(monitor.finish(x.clone(), x, term));
        }
    }
    Ok(monitor.finish(x.clone(), x, Termination::MaxIters))
}
