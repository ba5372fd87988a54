//! Asymptotic MSE recursion for TARM with ROIL operators.
//!
//! `tau` is the normalised MSE of the input to the linear estimator
//! (`X^(t-1)`), `v` the normalised MSE of its output `R^(t)`. All quantities
//! assume `||X*||_F^2 = n`, and `theta` ranges over the singular values of
//! `X* / sqrt(n2)`.
//!
//! Module B has two closed forms. [`g_transfer`] pins every noise singular
//! value to the bulk edge when evaluating the divergence; [`g_bulk`]
//! averages over the bulk and tracks simulations to a fraction of a dB. The
//! recursion uses [`g_bulk`] unless told otherwise.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness;
use crate::lowrank;

/// Measurement-operator family as seen by the linear estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeOperator {
    PartialOrthogonal,
    Gaussian,
}

/// Discrete approximation of the limiting singular-value density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    theta: Vec<f64>,
    weights: Vec<f64>,
}

impl Spectrum {
    /// Weighted atoms; weights are renormalised to sum to one.
    pub fn new(theta: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if theta.is_empty() || theta.len() != weights.len() {
            return Err(Error::invalid("spectrum needs matching, nonempty theta and weights"));
        }
        if theta.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::invalid("spectrum atoms must be finite and positive"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("spectrum weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("spectrum weights sum to zero"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { theta, weights })
    }

    pub fn uniform(theta: Vec<f64>) -> Result<Self> {
        let w = vec![1.0; theta.len()];
        Self::new(theta, w)
    }

    pub fn point_mass(theta: f64) -> Result<Self> {
        Self::uniform(vec![theta])
    }

    /// Empirical spectrum of `draws` normalised Gaussian-product matrices
    /// (`||X*||_F^2 = n1 n2`), taking the top `r` singular values of each
    /// `X* / sqrt(n2)`.
    pub fn gaussian_product(n1: usize, n2: usize, r: usize, draws: usize, seed: u64) -> Result<Self> {
        if draws == 0 {
            return Err(Error::invalid("need at least one draw"));
        }
        let mut theta = Vec::with_capacity(draws * r);
        let scale = (n2 as f64).sqrt();
        for k in 0..draws {
            let x = harness::gen_lowrank(n1, n2, r, crate::rng::derive_seed(seed, k as u64), true)?;
            let s = lowrank::svd(&x)?;
            theta.extend(s.singular_values[..r].iter().map(|v| v / scale));
        }
        Self::uniform(theta)
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `sum_k w_k theta_k^2`
    pub fn mean_square(&self) -> f64 {
        self.theta.iter().zip(&self.weights).map(|(t, w)| w * t * t).sum()
    }

    /// Rescales the atoms so that the second moment equals `target`.
    pub fn rescaled_to(&self, target: f64) -> Result<Self> {
        if !(target > 0.0 && target.is_finite()) {
            return Err(Error::invalid(format!("target second moment must be positive, got {target}")));
        }
        let k = (target / self.mean_square()).sqrt();
        Ok(Self {
            theta: self.theta.iter().map(|t| t * k).collect(),
            weights: self.weights.clone(),
        })
    }
}

/// Parameters of the large-system limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeModel {
    /// `n1 / n2`
    pub rho: f64,
    /// `r / n2`
    pub lambda: f64,
    /// `m / n`
    pub delta: f64,
    pub sigma2: f64,
    pub operator: SeOperator,
    pub spectrum: Spectrum,
}

impl SeModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.lambda >= 0.0 && self.lambda <= self.rho.min(1.0)) {
            return Err(Error::invalid(format!(
                "lambda must lie in [0, min(1, rho)], got {}",
                self.lambda
            )));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1], got {}", self.delta)));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(Error::invalid(format!("sigma2 must be nonnegative, got {}", self.sigma2)));
        }
        Ok(())
    }

    /// Model for an `n1 x n2`, rank-`r` Gaussian-product target measured at
    /// rate `m / n`, with the spectrum estimated from `draws` samples and
    /// normalised to `E[theta^2] = rho / lambda`. `sigma2` is the variance
    /// per measurement; after the `mu = n/m` step it lands in `R` as
    /// `sigma2 n / m` per entry, which is the floor the model carries.
    pub fn for_dimensions(
        n1: usize,
        n2: usize,
        r: usize,
        m: usize,
        sigma2: f64,
        operator: SeOperator,
        draws: usize,
        seed: u64,
    ) -> Result<Self> {
        let rho = n1 as f64 / n2 as f64;
        let lambda = r as f64 / n2 as f64;
        let spectrum = Spectrum::gaussian_product(n1, n2, r, draws, seed)?.rescaled_to(rho / lambda)?;
        let model = Self {
            rho,
            lambda,
            delta: m as f64 / (n1 * n2) as f64,
            sigma2: sigma2 * (n1 * n2) as f64 / m as f64,
            operator,
            spectrum,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Output MSE of the linear estimator.
pub fn f_transfer(tau: f64, model: &SeModel) -> f64 {
    match model.operator {
        SeOperator::PartialOrthogonal => (1.0 / model.delta - 1.0) * tau + model.sigma2,
        SeOperator::Gaussian => tau / model.delta + model.sigma2,
    }
}

/// `E[(v + theta^2)(rho v + theta^2) / (sqrt(rho) v - theta^2)^2]`
pub fn delta1(v: f64, rho: f64, spectrum: &Spectrum) -> Result<f64> {
    let sr = rho.sqrt();
    let mut acc = 0.0;
    for (&t, &w) in spectrum.theta.iter().zip(&spectrum.weights) {
        let t2 = t * t;
        let gap = sr * v - t2;
        if gap.abs() < 1e-9 {
            return Err(Error::SingularIntegrand { theta: t });
        }
        acc += w * (v + t2) * (rho * v + t2) / (gap * gap);
    }
    Ok(acc)
}

/// `E[theta^-2]`
pub fn delta2(spectrum: &Spectrum) -> f64 {
    spectrum
        .theta
        .iter()
        .zip(&spectrum.weights)
        .map(|(t, w)| w / (t * t))
        .sum()
}

/// Limit of `div(D(R)) / n` when `R = X* + sqrt(v) W`.
pub fn alpha_limit(v: f64, model: &SeModel) -> Result<f64> {
    let (rho, lambda) = (model.rho, model.lambda);
    let d1 = delta1(v, rho, &model.spectrum)?;
    Ok((1.0 - 1.0 / rho).abs() * lambda
        + lambda * lambda / rho
        + 2.0 * ((1.0f64).min(1.0 / rho) - lambda / rho) * lambda * d1)
}

/// Spectrum-free `alpha` used by [`g_approx`]:
/// `|1 - 1/rho| lambda - lambda^2 / rho + 2 min(1, 1/rho) lambda`.
///
/// Equal to `alpha_limit(0, ..)` for every spectrum, since `Delta_1(0) = 1`.
pub fn alpha_zero_approx(model: &SeModel) -> f64 {
    let (rho, lambda) = (model.rho, model.lambda);
    (1.0 - 1.0 / rho).abs() * lambda - lambda * lambda / rho + 2.0 * (1.0f64).min(1.0 / rho) * lambda
}

fn energy_ratio(v: f64, model: &SeModel) -> f64 {
    let d2 = delta2(&model.spectrum);
    1.0 + model.lambda * (1.0 + 1.0 / model.rho) * v + model.lambda * v * v * d2
}

pub fn c_limit(v: f64, model: &SeModel) -> Result<f64> {
    let alpha = alpha_limit(v, model)?;
    let d = energy_ratio(v, model);
    let den = (1.0 - 2.0 * alpha) * d + alpha * alpha * (1.0 + v);
    if den == 0.0 {
        return Err(Error::ModelBreakdown {
            v,
            reason: "zero denominator in c(v)".into(),
        });
    }
    Ok((d - alpha * (1.0 + v)) / den)
}

/// Output MSE of the rank-r denoiser combined with the extrinsic update.
pub fn g_transfer(v: f64, model: &SeModel) -> Result<f64> {
    if v < 0.0 {
        return Err(Error::invalid(format!("v must be nonnegative, got {v}")));
    }
    let lambda = model.lambda;
    let d2 = delta2(&model.spectrum);
    let num = v - lambda * (1.0 + 1.0 / model.rho) * v - lambda * v * v * d2;
    if v > 0.0 && num <= 0.0 {
        return Err(Error::ModelBreakdown {
            v,
            reason: "residual energy after truncation is nonpositive".into(),
        });
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    let alpha = alpha_limit(v, model)?;
    let den = num / energy_ratio(v, model) * alpha * alpha + (1.0 - alpha) * (1.0 - alpha);
    if den <= 0.0 {
        return Err(Error::ModelBreakdown {
            v,
            reason: "nonpositive denominator".into(),
        });
    }
    Ok(num / den - v)
}

/// `alpha(v)` with the noise singular values averaged over the
/// Marchenko-Pastur bulk instead of pinned to its edge:
/// `lambda (1 + 1/rho) - lambda^2 / rho + 2 lambda v Delta_2`.
///
/// For a spike at `s = (v + theta^2)(rho v + theta^2) / theta^2` the bulk
/// Stieltjes transform is `1 / (theta^2 + rho v)`, which turns the cross sum
/// of the divergence into `n1 v / theta^2` per spike. The edge form of
/// [`alpha_limit`] overstates this by a factor of about four for strong
/// spikes.
pub fn alpha_bulk(v: f64, model: &SeModel) -> f64 {
    captured_slope(model) + 2.0 * model.lambda * v * delta2(&model.spectrum)
}

/// Share of white-noise energy the rank-r projection keeps to first order:
/// `r (n1 + n2 - r) / n`.
fn captured_slope(model: &SeModel) -> f64 {
    let (rho, lambda) = (model.rho, model.lambda);
    lambda * (1.0 + 1.0 / rho) - lambda * lambda / rho
}

/// [`g_transfer`] rebuilt on [`alpha_bulk`], with the truncation residual
/// `v (1 - lambda)(1 - lambda/rho) - lambda v^2 Delta_2` counting the
/// overlap of row and column spaces.
pub fn g_bulk(v: f64, model: &SeModel) -> Result<f64> {
    if v < 0.0 {
        return Err(Error::invalid(format!("v must be nonnegative, got {v}")));
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    let d2 = delta2(&model.spectrum);
    let kept = captured_slope(model) * v + model.lambda * v * v * d2;
    let num = v - kept;
    if num <= 0.0 {
        return Err(Error::ModelBreakdown {
            v,
            reason: "residual energy after truncation is nonpositive".into(),
        });
    }
    let alpha = alpha_bulk(v, model);
    let den = num / (1.0 + kept) * alpha * alpha + (1.0 - alpha) * (1.0 - alpha);
    if den <= 0.0 {
        return Err(Error::ModelBreakdown {
            v,
            reason: "nonpositive denominator".into(),
        });
    }
    Ok(num / den - v)
}

/// Small-`v` approximation of [`g_transfer`] that needs no spectrum.
pub fn g_approx(v: f64, model: &SeModel) -> Result<f64> {
    if v < 0.0 {
        return Err(Error::invalid(format!("v must be nonnegative, got {v}")));
    }
    let num = v - model.lambda * (1.0 + 1.0 / model.rho) * v;
    if v > 0.0 && num <= 0.0 {
        return Err(Error::ModelBreakdown {
            v,
            reason: "lambda (1 + 1/rho) >= 1".into(),
        });
    }
    let a = alpha_zero_approx(model);
    let den = (1.0 - a) * (1.0 - a);
    if den == 0.0 {
        return Err(Error::ModelBreakdown {
            v,
            reason: "alpha(0) = 1".into(),
        });
    }
    Ok(num / den - v)
}

/// Which output transfer function drives the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GVariant {
    /// [`g_bulk`].
    #[default]
    Bulk,
    /// [`g_transfer`].
    Edge,
    /// [`g_approx`].
    Approx,
}

impl GVariant {
    pub fn eval(self, v: f64, model: &SeModel) -> Result<f64> {
        match self {
            GVariant::Bulk => g_bulk(v, model),
            GVariant::Edge => g_transfer(v, model),
            GVariant::Approx => g_approx(v, model),
        }
    }
}

/// One step of the recursion: `v_t = f(tau_t)`, `tau_{t+1} = g(v_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeStep {
    pub t: usize,
    pub tau: f64,
    pub v: f64,
    /// False once the model has broken down; `tau` and `v` are then NaN.
    pub valid: bool,
}

impl SeStep {
    /// Predicted NMSE of `X^(t)`, i.e. `tau_{t+1}`.
    pub fn next_tau(steps: &[SeStep], t: usize) -> Option<f64> {
        steps.get(t).filter(|s| s.valid).map(|s| s.tau)
    }
}

/// Runs `T` steps from `tau0`, returning `T + 1` records so that the last
/// one carries `tau_{T+1}`. After a breakdown the remaining records are
/// marked invalid.
pub fn evolve(model: &SeModel, steps: usize, tau0: f64) -> Result<Vec<SeStep>> {
    evolve_with(model, steps, tau0, GVariant::default())
}

pub fn evolve_with(model: &SeModel, steps: usize, tau0: f64, variant: GVariant) -> Result<Vec<SeStep>> {
    model.validate()?;
    if steps == 0 {
        return Err(Error::invalid("need at least one step"));
    }
    if !(tau0 >= 0.0 && tau0.is_finite()) {
        return Err(Error::invalid(format!("tau0 must be nonnegative, got {tau0}")));
    }
    let mut out = Vec::with_capacity(steps + 1);
    let mut tau = tau0;
    let mut broken = false;
    for t in 1..=steps + 1 {
        if broken {
            out.push(SeStep { t, tau: f64::NAN, v: f64::NAN, valid: false });
            continue;
        }
        let v = f_transfer(tau, model);
        out.push(SeStep { t, tau, v, valid: true });
        if t == steps + 1 {
            break;
        }
        match variant.eval(v, model) {
            Ok(g) if g.is_finite() => tau = g,
            Ok(_) | Err(Error::ModelBreakdown { .. }) | Err(Error::SingularIntegrand { .. }) => broken = true,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Forward-iterates the recursion from `tau = 1` until successive values of
/// `tau` differ by at most `tol`.
pub fn fixed_point(model: &SeModel, tol: f64) -> Result<f64> {
    fixed_point_with(model, tol, GVariant::default())
}

pub fn fixed_point_with(model: &SeModel, tol: f64, variant: GVariant) -> Result<f64> {
    const MAX_ITERS: usize = 100_000;
    model.validate()?;
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tol must be positive, got {tol}")));
    }
    let mut tau = 1.0;
    for _ in 0..MAX_ITERS {
        let next = variant.eval(f_transfer(tau, model), model)?;
        if !next.is_finite() {
            return Err(Error::ModelBreakdown {
                v: f_transfer(tau, model),
                reason: "non-finite g".into(),
            });
        }
        if (next - tau).abs() <= tol {
            return Ok(next);
        }
        tau = next;
    }
    Err(Error::NoFixedPoint { iterations: MAX_ITERS })
}

/// Asymptotic singular value of `X* + sqrt(v) W` associated with a signal
/// singular value `sqrt(n2) theta`, `W` having i.i.d. unit-variance entries.
/// Below the detection threshold `theta^2 <= sqrt(rho) v` the value sticks to
/// the bulk edge `sqrt(n2 v) (1 + sqrt(rho))`.
pub fn predicted_singvals(theta: f64, v: f64, rho: f64, n2: usize) -> f64 {
    let n2 = n2 as f64;
    if theta > rho.powf(0.25) * v.sqrt() {
        let t2 = theta * theta;
        (n2 * (v + t2) * (rho * v + t2) / t2).sqrt()
    } else {
        (n2 * v).sqrt() * (1.0 + rho.sqrt())
    }
}

/// Writes `t,tau,v,valid` rows.
pub fn write_csv<W: Write>(steps: &[SeStep], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "tau", "v", "valid"]).map_err(csv_err)?;
    for s in steps {
        w.write_record([
            s.t.to_string(),
            format!("{:e}", s.tau),
            format!("{:e}", s.v),
            s.valid.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}
