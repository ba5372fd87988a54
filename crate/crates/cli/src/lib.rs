//! Experiment driver behind the `tarm` binary.
//!
//! Every subcommand reads one JSON [`ExperimentConfig`], validates it in
//! full, computes all artifacts in memory and only then writes them into the
//! output directory. A failed run therefore leaves nothing behind.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tarm_core::harness::{self, SweepOptions};
use tarm_core::rng::derive_seed;
use tarm_core::state_evolution::{self, GVariant};
use tarm_core::tarm::{oracle_mu, tarm_solve_observed};
use tarm_core::{
    Error, OperatorKind, ParamStrategy, ProblemInstance, SeModel, SeOperator, SolverId, SolverResult, TarmConfig,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Recover,
    Complete,
    Se,
    Phase,
    MuTable,
    Qq,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Recover => "recover",
            Command::Complete => "complete",
            Command::Se => "se",
            Command::Phase => "phase",
            Command::MuTable => "mu-table",
            Command::Qq => "qq",
        }
    }

    fn default_operator(self) -> OperatorKind {
        match self {
            Command::Complete => OperatorKind::EntrySelector,
            _ => OperatorKind::PartialOrthogonal,
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    /// Defaults to `selector` for `complete` and `dct` otherwise.
    pub operator: Option<OperatorKind>,
    pub n1: usize,
    pub n2: usize,
    pub rank: usize,
    /// Measurement count; takes precedence over `m_over_n`.
    pub m: Option<usize>,
    pub m_over_n: f64,
    /// Noise variance per measurement.
    pub sigma2: f64,
    /// Scale `X*` to unit mean-square entry.
    pub normalize: bool,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            operator: None,
            n1: 100,
            n2: 100,
            rank: 5,
            m: None,
            m_over_n: 0.4,
            sigma2: 0.0,
            normalize: true,
        }
    }
}

/// Solver knobs shared by TARM and the baselines. `rank` comes from the
/// problem section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iters: usize,
    pub nmse_stop: f64,
    pub stagnation_window: usize,
    pub stagnation_tol: f64,
    pub residual_stop: Option<f64>,
    /// Defaults to the practical rule for the operator.
    pub strategy: Option<ParamStrategy>,
    pub svp_step: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let base = TarmConfig::default();
        Self {
            max_iters: base.max_iters,
            nmse_stop: base.nmse_stop,
            stagnation_window: base.stagnation_window,
            stagnation_tol: base.stagnation_tol,
            residual_stop: base.residual_stop,
            strategy: None,
            svp_step: base.svp_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MuTableConfig {
    /// Undersampling ratios `n/m`.
    pub ratios: Vec<f64>,
    pub iterations: usize,
}

impl Default for MuTableConfig {
    fn default() -> Self {
        Self {
            ratios: vec![2.5, 10.0 / 3.0, 5.0],
            iterations: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeConfig {
    pub iterations: usize,
    /// Draws of a Gaussian-product matrix used to build the spectrum.
    pub spectrum_draws: usize,
    pub tau0: f64,
    pub variant: GVariant,
}

impl Default for SeConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            spectrum_draws: 50,
            tau0: 1.0,
            variant: GVariant::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub m_grid: Vec<f64>,
    pub r_grid: Vec<usize>,
    pub trials_per_cell: usize,
    pub stop_after_failures: Option<usize>,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            m_grid: (1..=9).map(|k| k as f64 / 10.0).collect(),
            r_grid: (1..=20).collect(),
            trials_per_cell: 5,
            stop_after_failures: Some(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QqConfig {
    pub t_probe: usize,
}

impl Default for QqConfig {
    fn default() -> Self {
        Self { t_probe: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub solvers: Vec<SolverId>,
    pub solver: SolverSettings,
    /// Independent instances for `recover` and `complete`.
    pub trials: usize,
    pub seed: u64,
    pub mu_table: MuTableConfig,
    pub se: SeConfig,
    pub phase: PhaseConfig,
    pub qq: QqConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                CliError::config(format!("cannot parse config: {inner}"))
            } else {
                CliError::config(format!("cannot parse config at {path}: {inner}"))
            }
        })?;
        if cfg.solvers.is_empty() {
            cfg.solvers = vec![SolverId::Tarm];
        }
        if cfg.trials == 0 {
            cfg.trials = 1;
        }
        Ok(cfg)
    }

    fn operator(&self, command: Command) -> OperatorKind {
        self.problem.operator.unwrap_or(command.default_operator())
    }

    fn measurements(&self) -> usize {
        let p = &self.problem;
        p.m.unwrap_or_else(|| harness::measurements_for(p.n1, p.n2, p.m_over_n))
    }

    /// Solver configuration for a given operator kind.
    pub fn tarm_config(&self, kind: OperatorKind) -> TarmConfig {
        let s = &self.solver;
        let strategy = s.strategy.unwrap_or(if kind.is_roil() {
            ParamStrategy::RoilPractical
        } else {
            ParamStrategy::CompletionMc {
                alpha_mode: Default::default(),
                subspace: Default::default(),
            }
        });
        TarmConfig {
            rank: self.problem.rank,
            max_iters: s.max_iters,
            nmse_stop: s.nmse_stop,
            stagnation_window: s.stagnation_window,
            stagnation_tol: s.stagnation_tol,
            residual_stop: s.residual_stop,
            strategy,
            noise_var: self.problem.sigma2,
            svp_step: s.svp_step,
            seed: self.seed,
            ..TarmConfig::default()
        }
    }

    /// Checks everything a subcommand needs before any work starts.
    pub fn validate(&self, command: Command) -> Result<(), CliError> {
        let p = &self.problem;
        let bad = |msg: String| Err(CliError::config(msg));
        if p.n1 == 0 || p.n2 == 0 {
            return bad("problem.n1 and problem.n2 must be positive".into());
        }
        if p.rank == 0 || p.rank > p.n1.min(p.n2) {
            return bad(format!("problem.rank must lie in 1..={}", p.n1.min(p.n2)));
        }
        if !(p.sigma2 >= 0.0 && p.sigma2.is_finite()) {
            return bad("problem.sigma2 must be nonnegative".into());
        }
        let kind = self.operator(command);
        self.tarm_config(kind).validate().map_err(CliError::from_core_config)?;

        let needs_m = matches!(command, Command::Recover | Command::Complete | Command::Se | Command::Qq);
        if needs_m {
            if p.m.is_none() && !(p.m_over_n > 0.0 && p.m_over_n <= 1.0) {
                return bad("problem.m_over_n must lie in (0, 1]".into());
            }
            let m = self.measurements();
            if m == 0 || m > p.n1 * p.n2 {
                return bad(format!("measurement count {m} must lie in 1..={}", p.n1 * p.n2));
            }
        }

        match command {
            Command::Complete if kind != OperatorKind::EntrySelector => {
                bad("complete needs the selector operator".into())
            }
            Command::MuTable | Command::Se if kind == OperatorKind::EntrySelector => {
                bad(format!("{command} needs a dct or gaussian operator"))
            }
            Command::MuTable => {
                let t = &self.mu_table;
                if t.iterations == 0 {
                    return bad("mu_table.iterations must be at least 1".into());
                }
                if t.ratios.is_empty() || t.ratios.iter().any(|&q| !(q >= 1.0 && q.is_finite())) {
                    return bad("mu_table.ratios must be nonempty with every n/m >= 1".into());
                }
                Ok(())
            }
            Command::Se => {
                let s = &self.se;
                if s.iterations == 0 || s.spectrum_draws == 0 {
                    return bad("se.iterations and se.spectrum_draws must be at least 1".into());
                }
                if !(s.tau0 >= 0.0 && s.tau0.is_finite()) {
                    return bad("se.tau0 must be nonnegative".into());
                }
                Ok(())
            }
            Command::Phase => {
                let ph = &self.phase;
                if ph.trials_per_cell == 0 {
                    return bad("phase.trials_per_cell must be at least 1".into());
                }
                if ph.m_grid.is_empty() || ph.m_grid.iter().any(|&d| !(d > 0.0 && d <= 1.0)) {
                    return bad("phase.m_grid values must lie in (0, 1]".into());
                }
                let rmax = p.n1.min(p.n2);
                if ph.r_grid.is_empty()
                    || ph.r_grid.iter().any(|&r| r == 0 || r > rmax)
                    || ph.r_grid.windows(2).any(|w| w[0] >= w[1])
                {
                    return bad(format!("phase.r_grid must be strictly increasing within 1..={rmax}"));
                }
                Ok(())
            }
            Command::Qq if self.qq.t_probe == 0 => bad("qq.t_probe must be at least 1".into()),
            _ => Ok(()),
        }
    }

    /// SHA-256 of the canonical JSON form (keys sorted, no whitespace).
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        Sha256::digest(value.to_string().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DEGENERATE: i32 = 3;
}

/// An error ready to be reported on stderr as `{code, message, context}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
    pub context: serde_json::Value,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: exit::CONFIG,
            message: message.into(),
            context: serde_json::json!({ "kind": "config" }),
        }
    }

    pub fn io(message: impl Into<String>, path: &Path) -> Self {
        Self {
            code: exit::IO,
            message: message.into(),
            context: serde_json::json!({ "kind": "io", "path": path.display().to_string() }),
        }
    }

    fn from_core_config(e: Error) -> Self {
        Self::config(e.to_string())
    }

    pub fn envelope(&self) -> String {
        serde_json::json!({ "code": self.code, "message": self.message, "context": self.context }).to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::UnknownSolver(_) | Error::MissingTruth(_) => {
                (exit::CONFIG, "config")
            }
            Error::Io(_) => (exit::IO, "io"),
            _ => (exit::DEGENERATE, "degenerate"),
        };
        Self {
            code,
            message: e.to_string(),
            context: serde_json::json!({ "kind": kind, "error": format!("{e:?}") }),
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

/// An artifact computed in memory, written only after the run succeeds.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: &'static str,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_sha256: &'a str,
    seed: u64,
    jobs: Option<usize>,
    config: &'a ExperimentConfig,
    artifacts: Vec<&'static str>,
    summary: serde_json::Value,
}

/// Runs `command` and writes its artifacts plus `manifest.json` into `out`.
/// Returns the artifact paths.
pub fn run(command: Command, config_text: &str, out: &Path, overrides: &Overrides) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = ExperimentConfig::from_json(config_text)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if overrides.jobs == Some(0) {
        return Err(CliError::config("--jobs must be at least 1"));
    }
    cfg.validate(command)?;
    let hash = cfg.hash();
    let header = format!(
        "# tarm {VERSION} command={command} config_sha256={hash} seed={}\n",
        cfg.seed
    );

    let (mut artifacts, summary) = compute(command, &cfg, overrides)?;
    for a in &mut artifacts {
        let mut bytes = header.clone().into_bytes();
        bytes.append(&mut a.bytes);
        a.bytes = bytes;
    }
    let manifest = Manifest {
        tool: "tarm",
        version: VERSION,
        command: command.as_str(),
        config_sha256: &hash,
        seed: cfg.seed,
        jobs: overrides.jobs,
        config: &cfg,
        artifacts: artifacts.iter().map(|a| a.name).collect(),
        summary,
    };
    let manifest = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");

    fs::create_dir_all(out).map_err(|e| CliError::io(format!("cannot create output directory: {e}"), out))?;
    let mut written = Vec::new();
    for (name, bytes) in artifacts.iter().map(|a| (a.name, &a.bytes)).chain([("manifest.json", &manifest)]) {
        let path = out.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(format!("cannot write artifact: {e}"), &path))?;
        written.push(path);
    }
    Ok(written)
}

type Computed = (Vec<Artifact>, serde_json::Value);

fn compute(command: Command, cfg: &ExperimentConfig, overrides: &Overrides) -> Result<Computed, CliError> {
    match command {
        Command::Recover | Command::Complete => recover(command, cfg),
        Command::Se => se(cfg),
        Command::Phase => phase(cfg, overrides.jobs),
        Command::MuTable => mu_table(cfg),
        Command::Qq => qq(cfg),
    }
}

fn instance(cfg: &ExperimentConfig, kind: OperatorKind, m: usize, k: u64) -> Result<ProblemInstance, CliError> {
    let p = &cfg.problem;
    let matrix_seed = derive_seed(cfg.seed, k);
    Ok(ProblemInstance::generate(
        kind,
        p.n1,
        p.n2,
        p.rank,
        m,
        p.sigma2,
        matrix_seed,
        derive_seed(matrix_seed, 0x6e),
        p.normalize,
    )?)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> tarm_core::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn recover(command: Command, cfg: &ExperimentConfig) -> Result<Computed, CliError> {
    let kind = cfg.operator(command);
    let m = cfg.measurements();
    let tarm_cfg = cfg.tarm_config(kind);
    let mut runs: Vec<(SolverId, u64, SolverResult)> = Vec::new();
    for k in 0..cfg.trials as u64 {
        let inst = instance(cfg, kind, m, k)?;
        for &solver in &cfg.solvers {
            runs.push((solver, inst.matrix_seed, harness::run_trial(&inst, solver, &tarm_cfg)?));
        }
    }
    let rows: Vec<(SolverId, u64, &SolverResult)> = runs.iter().map(|(s, seed, r)| (*s, *seed, r)).collect();
    let bytes = csv_bytes(|buf| harness::write_trace_csv(&rows, buf))?;
    let summary: Vec<_> = runs
        .iter()
        .map(|(s, seed, r)| {
            serde_json::json!({
                "solver": s.as_str(),
                "seed": seed,
                "iterations": r.iterations(),
                "termination": format!("{:?}", r.termination),
                "final_nmse": r.trace.last().and_then(|t| t.nmse),
            })
        })
        .collect();
    Ok((
        vec![Artifact { name: "trace.csv", bytes }],
        serde_json::json!({ "m": m, "runs": summary }),
    ))
}

fn se(cfg: &ExperimentConfig) -> Result<Computed, CliError> {
    let p = &cfg.problem;
    let op = match cfg.operator(Command::Se) {
        OperatorKind::Gaussian => SeOperator::Gaussian,
        _ => SeOperator::PartialOrthogonal,
    };
    let m = cfg.measurements();
    let model = SeModel::for_dimensions(p.n1, p.n2, p.rank, m, p.sigma2, op, cfg.se.spectrum_draws, cfg.seed)?;
    let steps = state_evolution::evolve_with(&model, cfg.se.iterations, cfg.se.tau0, cfg.se.variant)?;
    let bytes = csv_bytes(|buf| state_evolution::write_csv(&steps, buf))?;
    let valid = steps.iter().filter(|s| s.valid).count();
    Ok((
        vec![Artifact { name: "se.csv", bytes }],
        serde_json::json!({ "m": m, "delta": model.delta, "lambda": model.lambda, "rho": model.rho, "valid_steps": valid }),
    ))
}

fn phase(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<Computed, CliError> {
    let p = &cfg.problem;
    let ph = &cfg.phase;
    let kind = cfg.operator(Command::Phase);
    let opts = SweepOptions {
        kind,
        sigma2: p.sigma2,
        trials_per_cell: ph.trials_per_cell,
        seed: cfg.seed,
        stop_after_failures: ph.stop_after_failures,
        jobs,
    };
    let sweep = harness::phase_sweep(p.n1, p.n2, &cfg.solvers, &ph.m_grid, &ph.r_grid, &cfg.tarm_config(kind), &opts)?;
    let bytes = csv_bytes(|buf| harness::write_phase_csv(&sweep.grids, buf))?;
    let boundaries: Vec<_> = sweep
        .grids
        .iter()
        .map(|g| serde_json::json!({ "solver": g.solver.as_str(), "max_rank_all_success": g.boundary(1, 1) }))
        .collect();
    Ok((
        vec![Artifact { name: "phase.csv", bytes }],
        serde_json::json!({ "boundaries": boundaries, "manifold_bound": sweep.bound }),
    ))
}

fn mu_table(cfg: &ExperimentConfig) -> Result<Computed, CliError> {
    let p = &cfg.problem;
    let kind = cfg.operator(Command::MuTable);
    let n = p.n1 * p.n2;
    let mut tarm_cfg = cfg.tarm_config(kind);
    tarm_cfg.max_iters = cfg.mu_table.iterations;
    tarm_cfg.nmse_stop = f64::MIN_POSITIVE;
    tarm_cfg.stagnation_window = 0;
    tarm_cfg.residual_stop = None;

    let mut rows: Vec<[String; 5]> = Vec::new();
    let mut worst: f64 = 0.0;
    for (k, &ratio) in cfg.mu_table.ratios.iter().enumerate() {
        let m = (n as f64 / ratio).round() as usize;
        let inst = instance(cfg, kind, m, k as u64)?;
        let mut failure = None;
        tarm_solve_observed(&inst.op, &inst.y, &tarm_cfg, Some(&inst.x_star), &mut |v| {
            if failure.is_some() {
                return;
            }
            match oracle_mu(v.x_prev, &inst.x_star, &inst.op, &inst.y) {
                Ok(mu) => {
                    worst = worst.max((mu / ratio - 1.0).abs());
                    rows.push([
                        format!("{ratio:e}"),
                        v.t.to_string(),
                        format!("{:e}", v.params.mu),
                        format!("{mu:e}"),
                        format!("{:e}", v.record.nmse.unwrap_or(f64::NAN)),
                    ]);
                }
                Err(e) => failure = Some(e),
            }
        })?;
        if let Some(e) = failure {
            return Err(e.into());
        }
    }
    let mut bytes = b"n_over_m,t,mu,oracle_mu,nmse\n".to_vec();
    for row in &rows {
        bytes.extend_from_slice(row.join(",").as_bytes());
        bytes.push(b'\n');
    }
    Ok((
        vec![Artifact { name: "mu_table.csv", bytes }],
        serde_json::json!({ "max_relative_deviation": worst }),
    ))
}

fn qq(cfg: &ExperimentConfig) -> Result<Computed, CliError> {
    let kind = cfg.operator(Command::Qq);
    let inst = instance(cfg, kind, cfg.measurements(), 0)?;
    let diag = harness::error_diagnostics(&inst, &cfg.tarm_config(kind), cfg.qq.t_probe)?;
    let bytes = csv_bytes(|buf| harness::write_qq_csv(&diag, buf))?;
    Ok((
        vec![Artifact { name: "qq.csv", bytes }],
        serde_json::json!({
            "t": diag.t,
            "mean": diag.mean,
            "std_dev": diag.std_dev,
            "excess_kurtosis": diag.excess_kurtosis,
        }),
    ))
}
