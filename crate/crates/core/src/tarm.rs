//! Turbo-type affine rank minimisation.
//!
//! Each iteration runs a linear estimator (module A), the best rank-r
//! denoiser (module B) and an extrinsic combination:
//!
//! ```text
//! R = X + mu A^T(y - A(X))
//! Z = D(R)
//! X = c (Z - alpha R)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness;
use crate::lowrank::{self, SubspaceBasis, Subspace, SvdFactors};
use crate::matrix::{DenseMatrix, MeasurementVector};
use crate::operators::LinearOperator;
use crate::rng;
use crate::state_evolution::{self, SeModel, SeOperator, Spectrum};

/// How `alpha` is chosen when the operator is an entry selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// `alpha = div(D(R)) / n` with a Monte Carlo divergence.
    #[default]
    MonteCarloDiv,
    /// Grid search minimising the measured-domain error correlation.
    CorrelationSearch,
    /// `alpha(v)` from the state-evolution limit, with `v` estimated from
    /// the residual and a plug-in spectrum.
    AsymptoticLimit,
}

/// Step-size rule for the plain projected-gradient reductions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule {
    Fixed { mu: f64 },
    /// `||P(G)||^2 / ||A(P(G))||^2` with `G` the gradient.
    Projected { subspace: Subspace },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamStrategy {
    /// Parameters that enforce the decorrelation conditions exactly.
    /// Needs the ground truth; for validation only.
    OracleLemma1,
    /// `mu = n/m`, `alpha = div/n`, for ROIL operators.
    RoilPractical,
    /// Matrix-completion parameters.
    CompletionMc {
        #[serde(default)]
        alpha_mode: AlphaMode,
        #[serde(default)]
        subspace: Subspace,
    },
    /// `c = 1`, `alpha = 0`: TARM degenerates to SVP or NIHT.
    Reduced { step: StepRule },
}

impl ParamStrategy {
    /// The practical strategy for an operator family.
    pub fn practical_for(op: &LinearOperator) -> Self {
        if op.kind().is_roil() {
            ParamStrategy::RoilPractical
        } else {
            ParamStrategy::CompletionMc {
                alpha_mode: AlphaMode::default(),
                subspace: Subspace::default(),
            }
        }
    }
}

impl Default for ParamStrategy {
    fn default() -> Self {
        ParamStrategy::RoilPractical
    }
}

/// Overrides for the Monte Carlo divergence estimator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSettings {
    pub eps: Option<f64>,
    pub probes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TarmConfig {
    /// Target rank `r`.
    pub rank: usize,
    pub max_iters: usize,
    /// Stop once the NMSE of `X^(t)` is at most this (needs the truth).
    pub nmse_stop: f64,
    /// Stop when the relative improvement over this many iterations falls
    /// below `stagnation_tol`. Zero disables the check.
    pub stagnation_window: usize,
    pub stagnation_tol: f64,
    /// Stop once `||y - A(X^(t))|| <= residual_stop * ||y||`.
    pub residual_stop: Option<f64>,
    pub strategy: ParamStrategy,
    /// Measurement noise variance, used by the asymptotic alpha rule.
    pub noise_var: f64,
    /// Fixed SVP step; defaults to `n/m`.
    pub svp_step: Option<f64>,
    pub monte_carlo: MonteCarloSettings,
    /// Seed for the Monte Carlo divergence probes.
    pub seed: u64,
}

impl Default for TarmConfig {
    fn default() -> Self {
        Self {
            rank: 1,
            max_iters: 1000,
            nmse_stop: 1e-6,
            stagnation_window: 20,
            stagnation_tol: 1e-8,
            residual_stop: None,
            strategy: ParamStrategy::default(),
            noise_var: 0.0,
            svp_step: None,
            monte_carlo: MonteCarloSettings::default(),
            seed: 0,
        }
    }
}

impl TarmConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            ..Self::default()
        }
    }

    pub fn with_strategy(mut self, strategy: ParamStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::invalid("rank must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.nmse_stop > 0.0) {
            return Err(Error::invalid(format!("nmse_stop must be positive, got {}", self.nmse_stop)));
        }
        if !(self.stagnation_tol >= 0.0) {
            return Err(Error::invalid("stagnation_tol must be nonnegative"));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::invalid("noise_var must be nonnegative"));
        }
        if let Some(s) = self.residual_stop {
            if !(s >= 0.0) {
                return Err(Error::invalid("residual_stop must be nonnegative"));
            }
        }
        if let Some(mu) = self.svp_step {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::invalid(format!("svp_step must be positive, got {mu}")));
            }
        }
        if let ParamStrategy::Reduced { step: StepRule::Fixed { mu } } = self.strategy {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::invalid(format!("fixed step must be positive, got {mu}")));
            }
        }
        if let Some(eps) = self.monte_carlo.eps {
            if !(eps > 0.0) {
                return Err(Error::invalid("monte_carlo.eps must be positive"));
            }
        }
        if self.monte_carlo.probes == Some(0) {
            return Err(Error::invalid("monte_carlo.probes must be at least 1"));
        }
        Ok(())
    }
}

/// `(mu_t, alpha_t, c_t)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub mu: f64,
    pub alpha: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub mu: f64,
    pub alpha: f64,
    pub c: f64,
    /// NMSE of `X^(t)`, when the truth is attached.
    pub nmse: Option<f64>,
    /// `||y - A(X^(t))||_2`
    pub residual: f64,
    /// NMSE of the denoiser output `Z^(t)`.
    pub output_nmse: Option<f64>,
    /// `||y - A(Z^(t))||_2`
    pub output_residual: f64,
    /// Set when the configured parameter rule failed and a fallback was used.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    Stagnated,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    /// Last denoiser output `Z^(T)`; rank at most `r`.
    pub estimate: DenseMatrix,
    /// Last iterate `X^(T)`.
    pub iterate: DenseMatrix,
    pub trace: Vec<IterationRecord>,
    pub termination: Termination,
}

impl SolverResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    /// First iteration whose NMSE is at most `threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<usize> {
        self.trace
            .iter()
            .find(|r| r.nmse.is_some_and(|e| e <= threshold))
            .map(|r| r.t)
    }
}

/// Everything computed in one iteration, handed to observers.
pub struct IterationView<'a> {
    pub t: usize,
    pub x_prev: &'a DenseMatrix,
    pub r: &'a DenseMatrix,
    pub z: &'a DenseMatrix,
    pub x: &'a DenseMatrix,
    pub params: Params,
    pub record: &'a IterationRecord,
}

/// Runs TARM from `X^(0) = 0`.
pub fn tarm_solve(
    op: &LinearOperator,
    y: &MeasurementVector,
    cfg: &TarmConfig,
    truth: Option<&DenseMatrix>,
) -> Result<SolverResult> {
    tarm_solve_observed(op, y, cfg, truth, &mut |_| {})
}

pub fn tarm_solve_observed(
    op: &LinearOperator,
    y: &MeasurementVector,
    cfg: &TarmConfig,
    truth: Option<&DenseMatrix>,
    observer: &mut dyn FnMut(&IterationView<'_>),
) -> Result<SolverResult> {
    check_problem(op, y, cfg, truth)?;
    if cfg.strategy == ParamStrategy::OracleLemma1 && truth.is_none() {
        return Err(Error::MissingTruth("the oracle parameter strategy".into()));
    }
    if cfg.strategy == ParamStrategy::RoilPractical && !op.kind().is_roil() {
        return Err(Error::invalid(format!(
            "practical ROIL parameters need a ROIL operator, got {}",
            op.kind()
        )));
    }

    let (n1, n2) = op.shape();
    let mut monitor = Monitor::new(cfg, y, truth)?;
    let mut x_prev = DenseMatrix::zeros(n1, n2);
    let mut z_last = DenseMatrix::zeros(n1, n2);
    let mut resid = y.clone();
    let mut basis: Option<SubspaceBasis> = None;
    let mut prev_alpha: Option<f64> = None;

    for t in 1..=cfg.max_iters {
        let grad = op.adjoint(&resid)?;
        let (mu, mu_fallback) = step_size(op, y, cfg, truth, &x_prev, &grad, basis.as_ref())?;
        let mut r = x_prev.clone();
        r.axpy(mu, &grad);
        if !(mu.is_finite() && r.is_finite()) {
            return Ok(monitor.diverged(z_last, x_prev));
        }
        let factors = lowrank::svd(&r)?;
        let z = factors.truncate(cfg.rank)?;
        let ctx = AlphaContext {
            op,
            y,
            cfg,
            truth,
            t,
            r: &r,
            z: &z,
            factors: &factors,
            resid_prev: &resid,
            prev_alpha,
        };
        let (alpha, c, alpha_fallback) = combination(&ctx)?;
        let x = z.lincomb(c, &r, -c * alpha);
        if !(alpha.is_finite() && c.is_finite() && x.is_finite()) {
            return Ok(monitor.diverged(z, x_prev));
        }
        let resid_new = y - &op.apply(&x)?;
        let params = Params { mu, alpha, c };
        let stop = monitor.record(op, t, params, mu_fallback || alpha_fallback, &x, Some(&z), &resid_new)?;
        observer(&IterationView {
            t,
            x_prev: &x_prev,
            r: &r,
            z: &z,
            x: &x,
            params,
            record: monitor.trace.last().expect("just recorded"),
        });
        basis = Some(factors.leading(cfg.rank)?);
        prev_alpha = Some(alpha);
        x_prev = x;
        z_last = z;
        resid = resid_new;
        if let Some(term) = stop {
            return Ok(monitor.finish(z_last, x_prev, term));
        }
    }
    Ok(monitor.finish(z_last, x_prev, Termination::MaxIters))
}

pub(crate) fn check_problem(
    op: &LinearOperator,
    y: &MeasurementVector,
    cfg: &TarmConfig,
    truth: Option<&DenseMatrix>,
) -> Result<()> {
    cfg.validate()?;
    let (n1, n2) = op.shape();
    if y.len() != op.m() {
        return Err(Error::dims(format!("{} measurements", op.m()), y.len()));
    }
    if cfg.rank > n1.min(n2) {
        return Err(Error::invalid(format!("rank {} exceeds min({n1}, {n2})", cfg.rank)));
    }
    if let Some(x) = truth {
        if x.shape() != (n1, n2) {
            return Err(Error::dims(format!("{n1}x{n2}"), format!("{}x{}", x.rows(), x.cols())));
        }
    }
    Ok(())
}

fn step_size(
    op: &LinearOperator,
    y: &MeasurementVector,
    cfg: &TarmConfig,
    truth: Option<&DenseMatrix>,
    x_prev: &DenseMatrix,
    grad: &DenseMatrix,
    basis: Option<&SubspaceBasis>,
) -> Result<(f64, bool)> {
    let practical = || -> Result<f64> {
        if op.kind().is_roil() {
            Ok(roil_mu(op))
        } else {
            Ok(projected_step(op, grad, basis, Subspace::LeftSingular, cfg.rank)?.0)
        }
    };
    match cfg.strategy {
        ParamStrategy::OracleLemma1 => {
            let x_star = truth.ok_or_else(|| Error::MissingTruth("oracle step size".into()))?;
            match oracle_mu(x_prev, x_star, op, y) {
                Ok(mu) => Ok((mu, false)),
                Err(Error::Degenerate(_)) => Ok((practical()?, true)),
                Err(e) => Err(e),
            }
        }
        ParamStrategy::RoilPractical => Ok((roil_mu(op), false)),
        ParamStrategy::CompletionMc { subspace, .. } => {
            match projected_step(op, grad, basis, subspace, cfg.rank) {
                Ok((mu, _)) => Ok((mu, false)),
                Err(Error::Degenerate(_)) => Ok((roil_mu(op), true)),
                Err(e) => Err(e),
            }
        }
        ParamStrategy::Reduced { step } => match step {
            StepRule::Fixed { mu } => Ok((mu, false)),
            StepRule::Projected { subspace } => Ok((projected_step(op, grad, basis, subspace, cfg.rank)?.0, false)),
        },
    }
}

struct AlphaContext<'a> {
    op: &'a LinearOperator,
    y: &'a MeasurementVector,
    cfg: &'a TarmConfig,
    truth: Option<&'a DenseMatrix>,
    t: usize,
    r: &'a DenseMatrix,
    z: &'a DenseMatrix,
    factors: &'a SvdFactors,
    resid_prev: &'a MeasurementVector,
    prev_alpha: Option<f64>,
}

fn combination(ctx: &AlphaContext<'_>) -> Result<(f64, f64, bool)> {
    let cfg = ctx.cfg;
    match cfg.strategy {
        ParamStrategy::Reduced { .. } => Ok((0.0, 1.0, false)),
        ParamStrategy::OracleLemma1 => {
            let x_star = ctx.truth.ok_or_else(|| Error::MissingTruth("oracle alpha".into()))?;
            match oracle_alpha_c(ctx.r, ctx.z, x_star) {
                Ok((alpha, c)) => Ok((alpha, c, false)),
                Err(Error::NoRealRoot { .. }) | Err(Error::Degenerate(_)) => {
                    let (alpha, _) = if ctx.op.kind().is_roil() {
                        roil_alpha(ctx)?
                    } else {
                        (monte_carlo_alpha(ctx)?, false)
                    };
                    Ok((alpha, extrinsic_c(ctx.r, ctx.z, alpha)?, true))
                }
                Err(e) => Err(e),
            }
        }
        ParamStrategy::RoilPractical => {
            let (alpha, fallback) = roil_alpha(ctx)?;
            Ok((alpha, extrinsic_c(ctx.r, ctx.z, alpha)?, fallback))
        }
        ParamStrategy::CompletionMc { alpha_mode, .. } => {
            let (alpha, fallback) = match alpha_mode {
                AlphaMode::MonteCarloDiv => (monte_carlo_alpha(ctx)?, false),
                AlphaMode::CorrelationSearch => (
                    correlation_search(ctx.op, ctx.y, ctx.r, ctx.z, &CorrelationGrid::default())?.0,
                    false,
                ),
                AlphaMode::AsymptoticLimit => {
                    let v_hat = (ctx.resid_prev.norm_sq() / ctx.op.m() as f64 - cfg.noise_var).max(1e-12);
                    match asymptotic_alpha(v_hat, ctx.factors, ctx.op, cfg.rank) {
                        Ok(a) => (a, false),
                        Err(Error::SingularIntegrand { .. }) | Err(Error::InvalidArgument(_)) => {
                            (ctx.prev_alpha.unwrap_or(0.0), true)
                        }
                        Err(e) => return Err(e),
                    }
                }
            };
            Ok((alpha, extrinsic_c(ctx.r, ctx.z, alpha)?, fallback))
        }
    }
}

fn roil_mu(op: &LinearOperator) -> f64 {
    op.n() as f64 / op.m() as f64
}

/// Analytic divergence, then Monte Carlo, then the previous alpha.
fn roil_alpha(ctx: &AlphaContext<'_>) -> Result<(f64, bool)> {
    let (n1, n2) = ctx.op.shape();
    let n = ctx.op.n() as f64;
    match lowrank::divergence_from_spectrum(&ctx.factors.singular_values, n1, n2, ctx.cfg.rank) {
        Ok(div) => Ok((div / n, false)),
        Err(Error::DegenerateSpectrum { .. }) => match monte_carlo_alpha(ctx) {
            Ok(a) if a.is_finite() => Ok((a, true)),
            _ => Ok((ctx.prev_alpha.unwrap_or(0.0), true)),
        },
        Err(e) => Err(e),
    }
}

fn monte_carlo_alpha(ctx: &AlphaContext<'_>) -> Result<f64> {
    let mc = ctx.cfg.monte_carlo;
    let eps = mc.eps.unwrap_or_else(|| lowrank::default_eps(ctx.r));
    let probes = mc.probes.unwrap_or_else(|| lowrank::default_probes(ctx.r));
    let seed = rng::derive_seed(ctx.cfg.seed, ctx.t as u64);
    let div = lowrank::divergence_monte_carlo(ctx.r, ctx.cfg.rank, eps, probes, seed)?;
    Ok(div / ctx.op.n() as f64)
}

/// `alpha(v)` from the large-system limit, using the leading singular values
/// of `R` as a plug-in estimate of the signal spectrum.
fn asymptotic_alpha(v: f64, factors: &SvdFactors, op: &LinearOperator, rank: usize) -> Result<f64> {
    let (n1, n2) = op.shape();
    let scale = (n2 as f64).sqrt();
    let theta: Vec<f64> = factors.singular_values[..rank]
        .iter()
        .map(|s| s / scale)
        .filter(|t| *t > 0.0)
        .collect();
    let model = SeModel {
        rho: n1 as f64 / n2 as f64,
        lambda: rank as f64 / n2 as f64,
        delta: op.m() as f64 / op.n() as f64,
        sigma2: 0.0,
        operator: SeOperator::PartialOrthogonal,
        spectrum: Spectrum::uniform(theta)?,
    };
    state_evolution::alpha_limit(v, &model)
}

/// `c = <Z - alpha R, R> / ||Z - alpha R||_F^2`, the scaling that makes
/// `X - R` orthogonal to `X`.
pub fn extrinsic_c(r: &DenseMatrix, z: &DenseMatrix, alpha: f64) -> Result<f64> {
    let w = z.lincomb(1.0, r, -alpha);
    let den = w.norm_sq();
    if den == 0.0 || !den.is_finite() {
        return Err(Error::Degenerate("||Z - alpha R||_F = 0".into()));
    }
    Ok(w.dot(r) / den)
}

/// Step size that makes the error of `R` orthogonal to the error of the
/// previous iterate, given the truth (the noise is `y - A(X*)`).
pub fn oracle_mu(x_prev: &DenseMatrix, x_star: &DenseMatrix, op: &LinearOperator, y: &MeasurementVector) -> Result<f64> {
    let d = x_prev - x_star;
    let dd = d.norm_sq();
    let ad = op.apply(&d)?;
    let noise = y - &op.apply(x_star)?;
    let den = (&ad - &noise).dot(&ad);
    if dd == 0.0 || !(den > 0.0) {
        return Err(Error::Degenerate(format!(
            "oracle step size undefined (||X - X*||^2 = {dd:e}, denominator {den:e})"
        )));
    }
    Ok(dd / den)
}

/// Oracle `(alpha, c)`: `alpha` is the root of the decorrelation quadratic
/// that minimises `||X - R||_F`, ties going to the smaller `|alpha|`.
pub fn oracle_alpha_c(r: &DenseMatrix, z: &DenseMatrix, x_star: &DenseMatrix) -> Result<(f64, f64)> {
    let roots = oracle_alpha_roots(r, z, x_star)?;
    let objective = |alpha: f64| -> f64 {
        let w = z.lincomb(1.0, r, -alpha);
        let den = w.norm_sq();
        if den == 0.0 {
            f64::NEG_INFINITY
        } else {
            w.dot(r).powi(2) / den
        }
    };
    let best = match roots {
        [Some(a), Some(b)] => {
            let (fa, fb) = (objective(a), objective(b));
            let tie = (fa - fb).abs() <= 1e-12 * fa.abs().max(fb.abs());
            if tie {
                if a.abs() <= b.abs() {
                    a
                } else {
                    b
                }
            } else if fa > fb {
                a
            } else {
                b
            }
        }
        [Some(a), None] | [None, Some(a)] => a,
        [None, None] => return Err(Error::Degenerate("oracle quadratic is identically zero".into())),
    };
    Ok((best, extrinsic_c(r, z, best)?))
}

/// Real roots of `a alpha^2 + b alpha + d = 0` obtained by imposing
/// `<R - X*, c (Z - alpha R) - X*> = 0` with `c` from [`extrinsic_c`].
pub fn oracle_alpha_roots(r: &DenseMatrix, z: &DenseMatrix, x_star: &DenseMatrix) -> Result<[Option<f64>; 2]> {
    let e = r - x_star;
    let rr = r.norm_sq();
    let zz = z.norm_sq();
    let zr = z.dot(r);
    let ee = e.norm_sq();
    let ez = e.dot(z);
    let er = e.dot(r);
    let ex = e.dot(x_star);
    let a = rr * ee;
    let b = -zr * er - rr * ez + 2.0 * zr * ex;
    let d = zr * ez - zz * ex;
    solve_quadratic(a, b, d)
}

fn solve_quadratic(a: f64, b: f64, d: f64) -> Result<[Option<f64>; 2]> {
    let scale = a.abs().max(b.abs()).max(d.abs());
    if scale == 0.0 {
        return Ok([None, None]);
    }
    if a.abs() <= 1e-300 || a.abs() < 1e-14 * scale {
        return Ok(if b == 0.0 { [None, None] } else { [Some(-d / b), None] });
    }
    let disc = b * b - 4.0 * a * d;
    if disc < 0.0 {
        return Err(Error::NoRealRoot { discriminant: disc });
    }
    let sign = if b >= 0.0 { 1.0 } else { -1.0 };
    let q = -0.5 * (b + sign * disc.sqrt());
    if q == 0.0 {
        return Ok([Some(0.0), Some(0.0)]);
    }
    Ok([Some(q / a), Some(d / q)])
}

/// All three parameters under the oracle rule, evaluated for an already
/// formed `R` and `Z`.
pub fn params_oracle(
    x_prev: &DenseMatrix,
    r: &DenseMatrix,
    z: &DenseMatrix,
    x_star: &DenseMatrix,
    op: &LinearOperator,
    y: &MeasurementVector,
) -> Result<Params> {
    let mu = oracle_mu(x_prev, x_star, op, y)?;
    let (alpha, c) = oracle_alpha_c(r, z, x_star)?;
    Ok(Params { mu, alpha, c })
}

/// Practical ROIL parameters: `mu = n/m`, `alpha = div(D(R))/n` and the
/// matching `c`, with `Z` the rank-`r` truncation of `R`.
pub fn params_roil(r: &DenseMatrix, z: &DenseMatrix, op: &LinearOperator, rank: usize) -> Result<Params> {
    if !op.kind().is_roil() {
        return Err(Error::invalid(format!("{} is not a ROIL operator", op.kind())));
    }
    let alpha = match lowrank::divergence_analytic(r, rank) {
        Ok(div) => div / op.n() as f64,
        Err(Error::DegenerateSpectrum { .. }) => {
            let eps = lowrank::default_eps(r);
            lowrank::divergence_monte_carlo(r, rank, eps, lowrank::default_probes(r), 0)? / op.n() as f64
        }
        Err(e) => return Err(e),
    };
    Ok(Params {
        mu: roil_mu(op),
        alpha,
        c: extrinsic_c(r, z, alpha)?,
    })
}

/// Completion parameters for an already formed `R` and `Z`. `basis` spans
/// the previous estimate; `grad` is `A^T(y - A(X_prev))`.
#[allow(clippy::too_many_arguments)]
pub fn params_completion(
    grad: &DenseMatrix,
    basis: Option<&SubspaceBasis>,
    r: &DenseMatrix,
    z: &DenseMatrix,
    op: &LinearOperator,
    y: &MeasurementVector,
    mode: AlphaMode,
    subspace: Subspace,
    rank: usize,
    seed: u64,
) -> Result<Params> {
    let (mu, _) = projected_step(op, grad, basis, subspace, rank)?;
    let n = op.n() as f64;
    let alpha = match mode {
        AlphaMode::MonteCarloDiv => {
            lowrank::divergence_monte_carlo(r, rank, lowrank::default_eps(r), lowrank::default_probes(r), seed)? / n
        }
        AlphaMode::CorrelationSearch => correlation_search(op, y, r, z, &CorrelationGrid::default())?.0,
        AlphaMode::AsymptoticLimit => {
            let resid = y - &op.apply(&(r - &grad.scaled(mu)))?;
            let v_hat = (resid.norm_sq() / op.m() as f64).max(1e-12);
            asymptotic_alpha(v_hat, &lowrank::svd(r)?, op, rank)?
        }
    };
    Ok(Params {
        mu,
        alpha,
        c: extrinsic_c(r, z, alpha)?,
    })
}

/// Normalised step along the projected gradient:
/// `mu = ||P(G)||^2 / ||A(P(G))||^2`. Without a basis (first iteration) the
/// leading rank-`r` subspace of `G` itself is used. Returns `mu` and `P(G)`.
pub fn projected_step(
    op: &LinearOperator,
    grad: &DenseMatrix,
    basis: Option<&SubspaceBasis>,
    subspace: Subspace,
    rank: usize,
) -> Result<(f64, DenseMatrix)> {
    let owned;
    let basis = match basis {
        Some(b) => b,
        None => {
            owned = lowrank::svd(grad)?.leading(rank)?;
            &owned
        }
    };
    let pg = basis.project(subspace, grad);
    let num = pg.norm_sq();
    let den = op.apply(&pg)?.norm_sq();
    if num == 0.0 || den == 0.0 || !den.is_finite() {
        return Err(Error::Degenerate(format!(
            "projected step undefined (||P(G)||^2 = {num:e}, ||A(P(G))||^2 = {den:e}); fall back to mu = n/m"
        )));
    }
    Ok((num / den, pg))
}

/// Search grid for [`AlphaMode::CorrelationSearch`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for CorrelationGrid {
    fn default() -> Self {
        Self {
            lo: -0.1,
            hi: 0.6,
            step: 1e-3,
        }
    }
}

/// Minimises `|<c(alpha) A(Z - alpha R) - y, A(R) - y>|` over the grid.
/// Returns the minimiser and the objective there.
pub fn correlation_search(
    op: &LinearOperator,
    y: &MeasurementVector,
    r: &DenseMatrix,
    z: &DenseMatrix,
    grid: &CorrelationGrid,
) -> Result<(f64, f64)> {
    if !(grid.step > 0.0 && grid.hi >= grid.lo) {
        return Err(Error::invalid("bad correlation grid"));
    }
    let az = op.apply(z)?;
    let ar = op.apply(r)?;
    let w = &ar - y;
    let (aw, bw, yw) = (az.dot(&w), ar.dot(&w), y.dot(&w));
    let (zz, zr, rr) = (z.norm_sq(), z.dot(r), r.norm_sq());
    let steps = ((grid.hi - grid.lo) / grid.step).round() as usize;
    let mut best: Option<(f64, f64)> = None;
    for k in 0..=steps {
        let alpha = grid.lo + k as f64 * grid.step;
        let den = zz - 2.0 * alpha * zr + alpha * alpha * rr;
        if den <= 0.0 {
            continue;
        }
        let c = (zr - alpha * rr) / den;
        let obj = (c * (aw - alpha * bw) - yw).abs();
        if best.is_none_or(|(_, b)| obj < b) {
            best = Some((alpha, obj));
        }
    }
    best.ok_or_else(|| Error::Degenerate("correlation objective undefined on the whole grid".into()))
}

/// Bookkeeping shared by TARM and the baselines: trace records and the
/// stopping rules.
pub(crate) struct Monitor<'a> {
    cfg: &'a TarmConfig,
    y: &'a MeasurementVector,
    y_norm: f64,
    truth: Option<&'a DenseMatrix>,
    history: Vec<f64>,
    pub(crate) trace: Vec<IterationRecord>,
}

impl<'a> Monitor<'a> {
    pub(crate) fn new(cfg: &'a TarmConfig, y: &'a MeasurementVector, truth: Option<&'a DenseMatrix>) -> Result<Self> {
        if let Some(x) = truth {
            if x.norm_sq() == 0.0 {
                return Err(Error::invalid("ground truth has zero norm"));
            }
        }
        Ok(Self {
            cfg,
            y,
            y_norm: y.norm(),
            truth,
            history: Vec::new(),
            trace: Vec::new(),
        })
    }

    /// Appends a record for `X^(t)` and decides whether to stop. `z` is the
    /// denoiser output when it differs from `x`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn record(
        &mut self,
        op: &LinearOperator,
        t: usize,
        params: Params,
        fallback: bool,
        x: &DenseMatrix,
        z: Option<&DenseMatrix>,
        resid: &MeasurementVector,
    ) -> Result<Option<Termination>> {
        let nmse = self.truth.map(|s| harness::nmse(x, s)).transpose()?;
        let residual = resid.norm();
        let (output_nmse, output_residual) = match z {
            Some(z) => (
                self.truth.map(|s| harness::nmse(z, s)).transpose()?,
                (self.y - &op.apply(z)?).norm(),
            ),
            None => (nmse, residual),
        };
        self.trace.push(IterationRecord {
            t,
            mu: params.mu,
            alpha: params.alpha,
            c: params.c,
            nmse,
            residual,
            output_nmse,
            output_residual,
            fallback,
        });

        if let Some(e) = nmse {
            if e <= self.cfg.nmse_stop {
                return Ok(Some(Termination::Converged));
            }
        }
        if let Some(tol) = self.cfg.residual_stop {
            if residual <= tol * self.y_norm {
                return Ok(Some(Termination::Converged));
            }
        }
        let metric = nmse.unwrap_or(residual);
        self.history.push(metric);
        let w = self.cfg.stagnation_window;
        if w > 0 && self.history.len() > w {
            let now = self.history[self.history.len() - 1];
            let before = self.history[self.history.len() - 1 - w];
            if before > 0.0 && (before - now) / before < self.cfg.stagnation_tol {
                return Ok(Some(Termination::Stagnated));
            }
        }
        Ok(None)
    }

    pub(crate) fn finish(self, estimate: DenseMatrix, iterate: DenseMatrix, termination: Termination) -> SolverResult {
        SolverResult {
            estimate,
            iterate,
            trace: self.trace,
            termination,
        }
    }

    pub(crate) fn diverged(self, estimate: DenseMatrix, iterate: DenseMatrix) -> SolverResult {
        self.finish(estimate, iterate, Termination::Diverged)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{gen_lowrank, ProblemInstance};
    use crate::operators::OperatorKind;

    fn instance(kind: OperatorKind, n: usize, r: usize, rate: f64, sigma2: f64, seed: u64) -> ProblemInstance {
        let m = (rate * (n * n) as f64).round() as usize;
        ProblemInstance::generate(kind, n, n, r, m, sigma2, seed, seed + 1000, false).unwrap()
    }

    #[test]
    fn quadratic_solver_is_stable() {
        let roots = solve_quadratic(1.0, -1e8, 1.0).unwrap();
        let (a, b) = (roots[0].unwrap(), roots[1].unwrap());
        let small = if a.abs() < b.abs() { a } else { b };
        assert!((small - 1e-8).abs() < 1e-20);
        assert!(matches!(solve_quadratic(1.0, 0.0, 1.0), Err(Error::NoRealRoot { .. })));
        assert_eq!(solve_quadratic(0.0, 2.0, -1.0).unwrap(), [Some(0.5), None]);
        let r = solve_quadratic(2.0, 3.0, -2.0).unwrap();
        let mut v = [r[0].unwrap(), r[1].unwrap()];
        v.sort_by(f64::total_cmp);
        assert!((v[0] + 2.0).abs() < 1e-15 && (v[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn c_is_one_when_z_equals_r_and_alpha_zero() {
        let r = gen_lowrank(5, 4, 2, 1, false).unwrap();
        assert!((extrinsic_c(&r, &r, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(extrinsic_c(&r, &r, 1.0).is_err());
    }

    #[test]
    fn full_observation_recovers_in_one_step() {
        let inst = instance(OperatorKind::PartialOrthogonal, 12, 2, 1.0, 0.0, 3);
        let cfg = TarmConfig::new(2);
        let res = tarm_solve(&inst.op, &inst.y, &cfg, Some(&inst.x_star)).unwrap();
        assert_eq!(res.termination, Termination::Converged);
        assert!(res.trace.len() <= 2);
        assert!(res.trace[0].output_nmse.unwrap() <= 1e-12);
    }

    #[test]
    fn orthogonality_of_extrinsic_update_every_strategy() {
        let strategies = [
            (OperatorKind::PartialOrthogonal, ParamStrategy::RoilPractical),
            (OperatorKind::PartialOrthogonal, ParamStrategy::OracleLemma1),
            (OperatorKind::Gaussian, ParamStrategy::RoilPractical),
            (
                OperatorKind::EntrySelector,
                ParamStrategy::CompletionMc {
                    alpha_mode: AlphaMode::MonteCarloDiv,
                    subspace: Subspace::LeftSingular,
                },
            ),
            (
                OperatorKind::EntrySelector,
                ParamStrategy::CompletionMc {
                    alpha_mode: AlphaMode::CorrelationSearch,
                    subspace: Subspace::Tangent,
                },
            ),
            (
                OperatorKind::EntrySelector,
                ParamStrategy::CompletionMc {
                    alpha_mode: AlphaMode::AsymptoticLimit,
                    subspace: Subspace::RightSingular,
                },
            ),
        ];
        for (kind, strategy) in strategies {
            let inst = instance(kind, 20, 2, 0.5, 0.0, 11);
            let mut cfg = TarmConfig::new(2).with_strategy(strategy);
            cfg.max_iters = 15;
            let mut worst: f64 = 0.0;
            tarm_solve_observed(&inst.op, &inst.y, &cfg, Some(&inst.x_star), &mut |v| {
                let val = (v.x - v.r).dot(v.x).abs() / v.r.norm_sq();
                worst = worst.max(val);
            })
            .unwrap();
            assert!(worst <= 1e-8, "{kind:?} {strategy:?}: {worst:e}");
        }
    }

    #[test]
    fn distance_identity_holds_for_any_alpha() {
        let inst = instance(OperatorKind::PartialOrthogonal, 16, 2, 0.5, 0.0, 5);
        let r = &inst.op.adjoint(&inst.y).unwrap().scaled(2.0);
        let z = lowrank::best_rank_r(r, 2).unwrap();
        for &alpha in &[-0.2, 0.0, 0.1, 0.3] {
            let c = extrinsic_c(r, &z, alpha).unwrap();
            let x = z.lincomb(c, r, -c * alpha);
            let e = (r - &z).norm_sq();
            let want = e / (alpha * alpha * e / z.norm_sq() + (1.0 - alpha).powi(2));
            let got = (&x - r).norm_sq();
            assert!((got - want).abs() <= 1e-10 * want, "{alpha}");
        }
    }

    #[test]
    fn oracle_requires_truth() {
        let inst = instance(OperatorKind::PartialOrthogonal, 10, 1, 0.5, 0.0, 1);
        let cfg = TarmConfig::new(1).with_strategy(ParamStrategy::OracleLemma1);
        assert!(matches!(
            tarm_solve(&inst.op, &inst.y, &cfg, None),
            Err(Error::MissingTruth(_))
        ));
    }

    #[test]
    fn roil_strategy_rejects_selector() {
        let inst = instance(OperatorKind::EntrySelector, 10, 1, 0.5, 0.0, 1);
        let cfg = TarmConfig::new(1);
        assert!(tarm_solve(&inst.op, &inst.y, &cfg, None).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TarmConfig::new(0).validate().is_err());
        let mut cfg = TarmConfig::new(1);
        cfg.nmse_stop = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = TarmConfig::new(1).with_strategy(ParamStrategy::Reduced {
            step: StepRule::Fixed { mu: -1.0 },
        });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn roil_params_examples() {
        let op = crate::operators::make_operator(OperatorKind::PartialOrthogonal, 10, 5, 5, 0).unwrap();
        let r = gen_lowrank(5, 5, 5, 2, false).unwrap();
        let z = lowrank::best_rank_r(&r, 2).unwrap();
        let p = params_roil(&r, &z, &op, 2).unwrap();
        assert_eq!(p.mu, 2.5);
        assert_eq!(p.alpha, lowrank::divergence_analytic(&r, 2).unwrap() / 25.0);
        assert_eq!(p.c, extrinsic_c(&r, &z, p.alpha).unwrap());
        // Full rank: the divergence is r^2, so alpha = r^2 / n.
        let full = lowrank::divergence_analytic(&r, 5).unwrap() / 25.0;
        assert!((full - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_search_stays_on_grid_and_beats_zero() {
        let inst = instance(OperatorKind::EntrySelector, 30, 3, 0.4, 0.0, 8);
        let r = inst.op.adjoint(&inst.y).unwrap().scaled(inst.op.n() as f64 / inst.op.m() as f64);
        let z = lowrank::best_rank_r(&r, 3).unwrap();
        let (alpha, obj) = correlation_search(&inst.op, &inst.y, &r, &z, &CorrelationGrid::default()).unwrap();
        assert!((-0.1 - 1e-12..=0.6 + 1e-12).contains(&alpha));
        let c0 = extrinsic_c(&r, &z, 0.0).unwrap();
        let x0 = z.scaled(c0);
        let direct = (&inst.op.apply(&x0).unwrap() - &inst.y)
            .dot(&(&inst.op.apply(&r).unwrap() - &inst.y))
            .abs();
        assert!(obj <= direct * (1.0 + 1e-9));
    }
}
