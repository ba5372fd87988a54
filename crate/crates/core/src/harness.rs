//! Problem generation, trials, diagnostics and phase-transition sweeps.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::baselines::{niht_solve, rgrad_solve, svp_solve};
use crate::error::{Error, Result};
use crate::lowrank;
use crate::matrix::{DenseMatrix, MeasurementVector};
use crate::operators::{LinearOperator, OperatorKind, OperatorSpec};
use crate::rng;
use crate::tarm::{tarm_solve, tarm_solve_observed, SolverResult, TarmConfig};

/// Rank-`r` matrix `A B` with `A` (`n1 x r`) and `B` (`r x n2`) standard
/// Gaussian. With `normalize`, rescaled to `||X||_F^2 = n1 n2`.
pub fn gen_lowrank(n1: usize, n2: usize, r: usize, seed: u64, normalize: bool) -> Result<DenseMatrix> {
    if n1 == 0 || n2 == 0 || r == 0 || r > n1.min(n2) {
        return Err(Error::invalid(format!("rank {r} outside 1..=min({n1}, {n2})")));
    }
    for attempt in 0..16u64 {
        let mut g = rng::seeded(if attempt == 0 { seed } else { rng::derive_seed(seed, attempt) });
        let a = rng::normal_matrix(&mut g, n1, r);
        let b = rng::normal_matrix(&mut g, r, n2);
        let mut x = a.matmul(&b)?;
        let s = lowrank::svd(&x)?.singular_values;
        if s[r - 1] <= 1e-10 * s[0] {
            continue;
        }
        if normalize {
            let k = ((n1 * n2) as f64 / x.norm_sq()).sqrt();
            x.scale(k);
        }
        return Ok(x);
    }
    Err(Error::Degenerate("could not draw a matrix of full rank r".into()))
}

/// `||X - X*||_F^2 / ||X*||_F^2`
pub fn nmse(x: &DenseMatrix, x_star: &DenseMatrix) -> Result<f64> {
    if x.shape() != x_star.shape() {
        return Err(Error::dims(
            format!("{}x{}", x_star.rows(), x_star.cols()),
            format!("{}x{}", x.rows(), x.cols()),
        ));
    }
    let den = x_star.norm_sq();
    if den == 0.0 {
        return Err(Error::invalid("nmse against a zero matrix"));
    }
    Ok((x - x_star).norm_sq() / den)
}

/// Everything needed to rebuild a [`ProblemInstance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: OperatorKind,
    pub n1: usize,
    pub n2: usize,
    pub rank: usize,
    pub m: usize,
    #[serde(default)]
    pub sigma2: f64,
    pub matrix_seed: u64,
    pub noise_seed: u64,
    /// Rescale `X*` to `||X*||_F^2 = n1 n2`.
    #[serde(default)]
    pub normalize: bool,
}

/// `y = A(X*) + n` with `n ~ N(0, sigma2 I)`.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub op: LinearOperator,
    pub x_star: DenseMatrix,
    pub noise_sigma2: f64,
    pub noise: MeasurementVector,
    pub y: MeasurementVector,
    pub matrix_seed: u64,
    pub noise_seed: u64,
}

impl ProblemInstance {
    /// The operator is seeded from `matrix_seed`, so one seed fixes the
    /// noiseless problem and `noise_seed` varies only the noise.
    #[allow(clippy::too_many_arguments)]
    pub fn generate(
        kind: OperatorKind,
        n1: usize,
        n2: usize,
        rank: usize,
        m: usize,
        sigma2: f64,
        matrix_seed: u64,
        noise_seed: u64,
        normalize: bool,
    ) -> Result<Self> {
        Self::from_spec(&ProblemSpec {
            kind,
            n1,
            n2,
            rank,
            m,
            sigma2,
            matrix_seed,
            noise_seed,
            normalize,
        })
    }

    pub fn from_spec(spec: &ProblemSpec) -> Result<Self> {
        if !(spec.sigma2 >= 0.0 && spec.sigma2.is_finite()) {
            return Err(Error::invalid(format!("sigma2 must be nonnegative, got {}", spec.sigma2)));
        }
        let op = LinearOperator::new(OperatorSpec {
            kind: spec.kind,
            m: spec.m,
            n1: spec.n1,
            n2: spec.n2,
            seed: rng::derive_seed(spec.matrix_seed, 0x6f70),
        })?;
        let x_star = gen_lowrank(spec.n1, spec.n2, spec.rank, spec.matrix_seed, spec.normalize)?;
        let clean = op.apply(&x_star)?;
        let noise = if spec.sigma2 > 0.0 {
            let mut g = rng::seeded(spec.noise_seed);
            MeasurementVector::new(rng::normal_vec(&mut g, spec.m, spec.sigma2.sqrt()))?
        } else {
            MeasurementVector::zeros(spec.m)
        };
        let y = &clean + &noise;
        Ok(Self {
            op,
            x_star,
            noise_sigma2: spec.sigma2,
            noise,
            y,
            matrix_seed: spec.matrix_seed,
            noise_seed: spec.noise_seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverId {
    Tarm,
    Svp,
    Niht,
    Rgrad,
}

impl SolverId {
    pub const ALL: [SolverId; 4] = [SolverId::Tarm, SolverId::Svp, SolverId::Niht, SolverId::Rgrad];

    pub fn as_str(self) -> &'static str {
        match self {
            SolverId::Tarm => "tarm",
            SolverId::Svp => "svp",
            SolverId::Niht => "niht",
            SolverId::Rgrad => "rgrad",
        }
    }
}

impl fmt::Display for SolverId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tarm" => Ok(SolverId::Tarm),
            "svp" => Ok(SolverId::Svp),
            "niht" => Ok(SolverId::Niht),
            "rgrad" => Ok(SolverId::Rgrad),
            other => Err(Error::UnknownSolver(other.to_string())),
        }
    }
}

/// Runs one solver on an instance with the truth attached.
pub fn run_trial(instance: &ProblemInstance, solver: SolverId, cfg: &TarmConfig) -> Result<SolverResult> {
    let truth = Some(&instance.x_star);
    match solver {
        SolverId::Tarm => tarm_solve(&instance.op, &instance.y, cfg, truth),
        SolverId::Svp => svp_solve(&instance.op, &instance.y, cfg, truth),
        SolverId::Niht => niht_solve(&instance.op, &instance.y, cfg, truth),
        SolverId::Rgrad => rgrad_solve(&instance.op, &instance.y, cfg, truth),
    }
}

/// Success: NMSE at most `1e-6` at some iteration `t < 1000`, read from
/// the trace.
pub fn trial_succeeded(result: &SolverResult) -> bool {
    first_success(result).is_some()
}

pub fn first_success(result: &SolverResult) -> Option<usize> {
    result
        .trace
        .iter()
        .find(|r| r.t < SUCCESS_MAX_ITERS && r.nmse.is_some_and(|e| e <= SUCCESS_NMSE))
        .map(|r| r.t)
}

pub const SUCCESS_NMSE: f64 = 1e-6;
pub const SUCCESS_MAX_ITERS: usize = 1000;

/// Standardised error sample with its normal reference quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDiagnostics {
    pub t: usize,
    /// Sorted standardised errors.
    pub empirical: Vec<f64>,
    /// `Phi^-1((i + 0.5) / N)`
    pub normal: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
    pub excess_kurtosis: f64,
}

impl ErrorDiagnostics {
    /// Summary statistics of an arbitrary sample.
    pub fn from_sample(t: usize, sample: &[f64]) -> Result<Self> {
        if sample.len() < 2 {
            return Err(Error::invalid("need at least two samples"));
        }
        let n = sample.len() as f64;
        let mean = sample.iter().sum::<f64>() / n;
        let m2 = sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m4 = sample.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        if m2 == 0.0 {
            return Err(Error::Degenerate("error sample has zero variance".into()));
        }
        let std_dev = m2.sqrt();
        let mut empirical: Vec<f64> = sample.iter().map(|v| (v - mean) / std_dev).collect();
        empirical.sort_by(f64::total_cmp);
        let phi = Normal::standard();
        let normal = (0..sample.len())
            .map(|i| phi.inverse_cdf((i as f64 + 0.5) / n))
            .collect();
        Ok(Self {
            t,
            empirical,
            normal,
            mean,
            std_dev,
            excess_kurtosis: m4 / (m2 * m2) - 3.0,
        })
    }
}

/// Runs TARM on the instance and collects the entries of `R^(t) - X*` at
/// `t = t_probe`.
pub fn error_diagnostics(instance: &ProblemInstance, cfg: &TarmConfig, t_probe: usize) -> Result<ErrorDiagnostics> {
    if t_probe == 0 {
        return Err(Error::invalid("t_probe must be at least 1"));
    }
    let mut cfg = cfg.clone();
    cfg.max_iters = t_probe;
    cfg.stagnation_window = 0;
    cfg.nmse_stop = f64::MIN_POSITIVE;
    let mut sample = None;
    tarm_solve_observed(&instance.op, &instance.y, &cfg, Some(&instance.x_star), &mut |v| {
        if v.t == t_probe {
            sample = Some((v.r - &instance.x_star).into_vec());
        }
    })?;
    let sample = sample.ok_or_else(|| Error::Degenerate(format!("run stopped before t = {t_probe}")))?;
    ErrorDiagnostics::from_sample(t_probe, &sample)
}

/// One `(m/n, r)` cell. `trials = 0` marks a cell that was skipped because
/// smaller ranks already failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub m_over_n: f64,
    pub r: usize,
    pub trials: usize,
    pub successes: usize,
    /// Median first-success iteration over the successful trials.
    pub median_iters: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub solver: SolverId,
    pub m_grid: Vec<f64>,
    pub r_grid: Vec<usize>,
    /// Row-major over `(m, r)`.
    pub cells: Vec<PhaseCell>,
}

impl PhaseGrid {
    pub fn cell(&self, mi: usize, ri: usize) -> &PhaseCell {
        &self.cells[mi * self.r_grid.len() + ri]
    }

    /// Largest `r` whose cell succeeded in at least `num/den` of its
    /// trials, per `m` grid point (0 when none).
    pub fn boundary(&self, num: usize, den: usize) -> Vec<usize> {
        (0..self.m_grid.len())
            .map(|mi| {
                (0..self.r_grid.len())
                    .map(|ri| self.cell(mi, ri))
                    .filter(|c| c.trials > 0 && c.successes * den >= num * c.trials)
                    .map(|c| c.r)
                    .max()
                    .unwrap_or(0)
            })
            .collect()
    }
}

/// Largest rank permitted by the manifold dimension count
/// `r (n1 + n2 - r) <= m`.
pub fn manifold_bound(n1: usize, n2: usize, m: usize) -> f64 {
    let s = (n1 + n2) as f64;
    let disc = (s * s - 4.0 * m as f64).max(0.0);
    (s - disc.sqrt()) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub kind: OperatorKind,
    pub sigma2: f64,
    pub trials_per_cell: usize,
    pub seed: u64,
    /// Stop scanning larger ranks after this many consecutive cells with no
    /// success. `None` runs every cell.
    pub stop_after_failures: Option<usize>,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            kind: OperatorKind::PartialOrthogonal,
            sigma2: 0.0,
            trials_per_cell: 5,
            seed: 0,
            stop_after_failures: Some(2),
            jobs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSweep {
    pub n1: usize,
    pub n2: usize,
    pub grids: Vec<PhaseGrid>,
    /// `(m/n, r_max)` from [`manifold_bound`].
    pub bound: Vec<(f64, f64)>,
}

/// Measurement count for a rate, rounded to the nearest integer.
pub fn measurements_for(n1: usize, n2: usize, m_over_n: f64) -> usize {
    ((n1 * n2) as f64 * m_over_n).round() as usize
}

/// Seed of trial `k` in cell `(mi, r)`; shared by all solvers so they see the
/// same instances.
pub fn trial_seed(base: u64, mi: usize, r: usize, k: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(rng::derive_seed(base, mi as u64), r as u64), k as u64)
}

/// Instance of trial `k` in cell `(mi, r)`.
pub fn sweep_instance(n1: usize, n2: usize, m_over_n: f64, mi: usize, r: usize, k: usize, opts: &SweepOptions) -> Result<ProblemInstance> {
    let seed = trial_seed(opts.seed, mi, r, k);
    ProblemInstance::generate(
        opts.kind,
        n1,
        n2,
        r,
        measurements_for(n1, n2, m_over_n),
        opts.sigma2,
        seed,
        rng::derive_seed(seed, 0x6e),
        false,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn phase_sweep(
    n1: usize,
    n2: usize,
    solvers: &[SolverId],
    m_grid: &[f64],
    r_grid: &[usize],
    cfg: &TarmConfig,
    opts: &SweepOptions,
) -> Result<PhaseSweep> {
    if solvers.is_empty() || m_grid.is_empty() || r_grid.is_empty() {
        return Err(Error::invalid("phase sweep needs nonempty solver, m and r grids"));
    }
    if opts.trials_per_cell == 0 {
        return Err(Error::invalid("trials_per_cell must be at least 1"));
    }
    if m_grid.iter().any(|&d| !(d > 0.0 && d <= 1.0)) {
        return Err(Error::invalid("m/n grid values must lie in (0, 1]"));
    }
    if r_grid.iter().any(|&r| r == 0 || r > n1.min(n2)) || r_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("r grid must be strictly increasing within 1..=min(n1, n2)"));
    }

    let columns: Vec<(SolverId, usize)> = solvers
        .iter()
        .flat_map(|&s| (0..m_grid.len()).map(move |mi| (s, mi)))
        .collect();
    let run = || -> Result<Vec<Vec<PhaseCell>>> {
        columns
            .par_iter()
            .map(|&(solver, mi)| sweep_column(n1, n2, solver, mi, m_grid[mi], r_grid, cfg, opts))
            .collect()
    };
    let results = match opts.jobs {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };

    let mut grids = Vec::with_capacity(solvers.len());
    for (si, &solver) in solvers.iter().enumerate() {
        let cells = results[si * m_grid.len()..(si + 1) * m_grid.len()].concat();
        grids.push(PhaseGrid {
            solver,
            m_grid: m_grid.to_vec(),
            r_grid: r_grid.to_vec(),
            cells,
        });
    }
    let bound = m_grid
        .iter()
        .map(|&d| (d, manifold_bound(n1, n2, measurements_for(n1, n2, d))))
        .collect();
    Ok(PhaseSweep { n1, n2, grids, bound })
}

#[allow(clippy::too_many_arguments)]
fn sweep_column(
    n1: usize,
    n2: usize,
    solver: SolverId,
    mi: usize,
    m_over_n: f64,
    r_grid: &[usize],
    cfg: &TarmConfig,
    opts: &SweepOptions,
) -> Result<Vec<PhaseCell>> {
    let mut cells = Vec::with_capacity(r_grid.len());
    let mut failures = 0;
    for &r in r_grid {
        if opts.stop_after_failures.is_some_and(|k| failures >= k) {
            cells.push(PhaseCell {
                m_over_n,
                r,
                trials: 0,
                successes: 0,
                median_iters: None,
            });
            continue;
        }
        let mut iters = Vec::new();
        for k in 0..opts.trials_per_cell {
            let inst = sweep_instance(n1, n2, m_over_n, mi, r, k, opts)?;
            let mut trial_cfg = cfg.clone();
            trial_cfg.rank = r;
            trial_cfg.seed = trial_seed(opts.seed, mi, r, k);
            let res = run_trial(&inst, solver, &trial_cfg)?;
            if let Some(t) = first_success(&res) {
                iters.push(t as f64);
            }
        }
        failures = if iters.is_empty() { failures + 1 } else { 0 };
        cells.push(PhaseCell {
            m_over_n,
            r,
            trials: opts.trials_per_cell,
            successes: iters.len(),
            median_iters: median(&mut iters),
        });
    }
    Ok(cells)
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn fmt_f(v: f64) -> String {
    format!("{v:e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

/// `solver,seed,t,mu,alpha,c,nmse,residual`; `nmse` is empty without truth.
pub fn write_trace_csv<W: Write>(rows: &[(SolverId, u64, &SolverResult)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["solver", "seed", "t", "mu", "alpha", "c", "nmse", "residual"])
        .map_err(csv_err)?;
    for (solver, seed, res) in rows {
        for rec in &res.trace {
            w.write_record([
                solver.to_string(),
                seed.to_string(),
                rec.t.to_string(),
                fmt_f(rec.mu),
                fmt_f(rec.alpha),
                fmt_f(rec.c),
                fmt_opt(rec.nmse),
                fmt_f(rec.residual),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `solver,m_over_n,r,trials,successes,median_iters`
pub fn write_phase_csv<W: Write>(grids: &[PhaseGrid], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["solver", "m_over_n", "r", "trials", "successes", "median_iters"])
        .map_err(csv_err)?;
    for g in grids {
        for c in &g.cells {
            w.write_record([
                g.solver.to_string(),
                fmt_f(c.m_over_n),
                c.r.to_string(),
                c.trials.to_string(),
                c.successes.to_string(),
                fmt_opt(c.median_iters),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `empirical_quantile,normal_quantile`
pub fn write_qq_csv<W: Write>(diag: &ErrorDiagnostics, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["empirical_quantile", "normal_quantile"]).map_err(csv_err)?;
    for (e, q) in diag.empirical.iter().zip(&diag.normal) {
        w.write_record([fmt_f(*e), fmt_f(*q)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_minors_vanish() {
        let x = gen_lowrank(5, 4, 1, 3, false).unwrap();
        let scale = x.norm_sq();
        for i in 0..4 {
            for j in 0..3 {
                let minor = x[(i, j)] * x[(i + 1, j + 1)] - x[(i, j + 1)] * x[(i + 1, j)];
                assert!(minor.abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn normalized_energy() {
        let x = gen_lowrank(30, 20, 3, 5, true).unwrap();
        assert!((x.norm_sq() - 600.0).abs() <= 1e-12 * 600.0);
        let s = lowrank::svd(&x).unwrap().singular_values;
        assert!(s[2] > 1e-6 * s[0] && s[3] < 1e-9 * s[0]);
    }

    #[test]
    fn nmse_examples() {
        let x = gen_lowrank(4, 4, 2, 1, false).unwrap();
        assert_eq!(nmse(&x, &x).unwrap(), 0.0);
        assert_eq!(nmse(&DenseMatrix::zeros(4, 4), &x).unwrap(), 1.0);
        assert!((nmse(&x.scaled(2.0), &x).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmse(&x, &DenseMatrix::zeros(4, 4)).is_err());
    }

    #[test]
    fn solver_ids_round_trip() {
        for s in SolverId::ALL {
            assert_eq!(s.as_str().parse::<SolverId>().unwrap(), s);
        }
        assert!(matches!("amp".parse::<SolverId>(), Err(Error::UnknownSolver(_))));
    }

    #[test]
    fn instance_seeds_are_independent() {
        let a = ProblemInstance::generate(OperatorKind::Gaussian, 6, 5, 2, 20, 0.1, 1, 2, false).unwrap();
        let b = ProblemInstance::generate(OperatorKind::Gaussian, 6, 5, 2, 20, 0.1, 1, 3, false).unwrap();
        assert_eq!(a.x_star, b.x_star);
        assert_ne!(a.noise, b.noise);
        let c = ProblemInstance::generate(OperatorKind::Gaussian, 6, 5, 2, 20, 0.1, 1, 2, false).unwrap();
        assert_eq!(a.y, c.y);
    }

    #[test]
    fn kurtosis_of_gaussian_sample() {
        let mut g = rng::seeded(17);
        let sample = rng::normal_vec(&mut g, 100_000, 3.0);
        let d = ErrorDiagnostics::from_sample(1, &sample).unwrap();
        assert!(d.excess_kurtosis.abs() < 0.1, "{}", d.excess_kurtosis);
        assert!(d.empirical.windows(2).all(|w| w[0] <= w[1]));
        assert!((d.normal[50_000]).abs() < 1e-4);
    }

    #[test]
    fn manifold_bound_matches_dimension_count() {
        for &m in &[100usize, 1000, 5000, 10_000] {
            let r = manifold_bound(100, 100, m);
            assert!((r * (200.0 - r) - m as f64).abs() <= 1e-6 * m as f64);
        }
    }

    #[test]
    fn boundary_uses_three_of_five() {
        let mk = |r, s| PhaseCell {
            m_over_n: 0.5,
            r,
            trials: 5,
            successes: s,
            median_iters: None,
        };
        let g = PhaseGrid {
            solver: SolverId::Tarm,
            m_grid: vec![0.5],
            r_grid: vec![1, 2, 3],
            cells: vec![mk(1, 5), mk(2, 3), mk(3, 2)],
        };
        assert_eq!(g.boundary(3, 5), vec![2]);
    }

    #[test]
    fn trace_csv_layout() {
        let inst = ProblemInstance::generate(OperatorKind::PartialOrthogonal, 8, 8, 1, 40, 0.0, 1, 2, false).unwrap();
        let res = run_trial(&inst, SolverId::Niht, &TarmConfig::new(1)).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&[(SolverId::Niht, 1, &res)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("solver,seed,t,mu,alpha,c,nmse,residual\nniht,1,1,"));
        assert_eq!(text.lines().count(), res.trace.len() + 1);
    }
}
