//! Scenario configuration, Monte Carlo ensembles, comparisons and sweeps.

mod compare;
mod persist;
mod report;
mod sweep;

pub use compare::{ccdf_dominance, compare_scenarios, CompareOptions, Comparison, DominanceCheck, ScenarioRow, TypicalCheck};
pub use persist::{load_raw, persist_comparison, persist_ensemble, persist_kernel_fit, persist_sweep, persist_trajectory, read_manifest, Manifest, ManifestEntry};
pub use report::{summarize, AuditSummary, BurstSummary, KernelReport, NetworkReport, RegimeReport, Report, TruncationReport};
pub use sweep::{rank_correlation, sensitivity_sweep, SweepAxis, SweepRow, SweepTable};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::controller::{audit_event_log, ControllerError, PolicyConfig};
use crate::estimators::{cone_window_rates, detect_uncontrolled_dwells, quantile_sorted, DwellInterval};
use crate::integrator::{
    energy_audit_tolerance, energy_inequality_audit, integrate_trajectory, pathwise_bound_audit, IntegratorError,
    RecordOptions, SolverConfig, Trajectory,
};
use crate::linalg::{self, LinalgError, Matrix};
use crate::model::{
    check_mitigation_contraction, ContractionCheck, Forcing, ModeDesign, ModelError, NetworkSpec, OperatorTable,
    RegimeDynamics,
};
use crate::regime::{dwell_tally, sample_path_seeded, GeneratorSpec, RegimeError, RegimePath, STATE_U};
use crate::soe_kernel::{
    default_design_times, default_rate_bounds, fit_nnls, make_log_grid, KernelKind, KernelTarget, SoeError, SoeKernel,
};
use crate::tailfit::{truncation_bound, TailError, TailOptions, TruncationBound, TruncationInputs};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] SoeError),
    #[error(transparent)]
    Regime(#[from] RegimeError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Tail(#[from] TailError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed output: {message}")]
    Format { path: String, message: String },
    #[error("comparison refused: {0}")]
    Comparison(String),
}

impl ExperimentError {
    pub fn config(message: impl Into<String>) -> Self {
        ExperimentError::Config {
            line: None,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

/// Ring network with optional reverse edges and chords.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub nodes: usize,
    /// Weight of the edges `i → i+1`.
    #[serde(default = "one")]
    pub ring_weight: f64,
    /// Weight of the edges `i+1 → i`; equal to `ring_weight` gives a normal matrix.
    #[serde(default)]
    pub reverse_weight: f64,
    /// Extra edges `(from, to, weight)`.
    #[serde(default)]
    pub chords: Vec<(usize, usize, f64)>,
    /// Rescale so that `ρ(W) = 1`.
    #[serde(default = "yes")]
    pub normalize: bool,
    pub forced_node: usize,
    pub amplitude: f64,
    pub omega: f64,
    /// Indexed by regime: `S` then `U`.
    pub regimes: Vec<RegimeDynamics>,
}

impl NetworkConfig {
    pub fn adjacency(&self) -> Result<Matrix> {
        let n = self.nodes;
        if n == 0 {
            return Err(ExperimentError::config("network needs at least one node"));
        }
        let mut w = Matrix::zeros(n, n);
        if n > 1 {
            for i in 0..n {
                let j = (i + 1) % n;
                w[(j, i)] += self.ring_weight;
                w[(i, j)] += self.reverse_weight;
            }
        }
        for &(from, to, weight) in &self.chords {
            if from >= n || to >= n {
                return Err(ExperimentError::config(format!("chord ({from}, {to}) outside 0..{n}")));
            }
            w[(to, from)] += weight;
        }
        if self.normalize {
            let rho = linalg::spectral_radius(&w)?;
            if rho > 0.0 {
                w = w.scaled(1.0 / rho);
            }
        }
        Ok(w)
    }

    pub fn spec(&self) -> Result<NetworkSpec> {
        let spec = NetworkSpec {
            adjacency: self.adjacency()?,
            regimes: self.regimes.clone(),
            forced_node: self.forced_node,
            amplitude: self.amplitude,
            omega: self.omega,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Memory kernel and its sum-of-exponentials fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// `false` drops every memory term (`K = 0`).
    #[serde(default = "yes")]
    pub memory: bool,
    pub target: KernelKind,
    /// Multiplier applied to the fitted weights.
    #[serde(default = "one")]
    pub gain: f64,
    pub terms: usize,
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
    #[serde(default = "default_design_points")]
    pub design_points: usize,
}

fn default_design_points() -> usize {
    400
}

/// Fitted kernel with its rate grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelFit {
    pub soe: SoeKernel,
    pub r_min: f64,
    pub r_max: f64,
    pub gain: f64,
}

impl KernelConfig {
    pub fn rate_bounds(&self, horizon: f64, max_step: f64) -> (f64, f64) {
        let (lo, hi) = default_rate_bounds(horizon, max_step);
        (self.r_min.unwrap_or(lo), self.r_max.unwrap_or(hi))
    }

    /// NNLS fit of the target on the configured rate grid, scaled by `gain`.
    pub fn fit(&self, horizon: f64, max_step: f64) -> Result<KernelFit> {
        let (r_min, r_max) = self.rate_bounds(horizon, max_step);
        if !(self.gain >= 0.0 && self.gain.is_finite()) {
            return Err(ExperimentError::config(format!("kernel gain {} must be nonnegative", self.gain)));
        }
        if self.terms == 0 {
            return Err(ExperimentError::config("kernel needs at least one term"));
        }
        let target = KernelTarget::new(self.target.clone(), horizon)?;
        let rates = make_log_grid(r_min, r_max, self.terms)?;
        let soe = fit_nnls(&target, &rates, &default_design_times(horizon, self.design_points))?;
        Ok(KernelFit {
            soe: soe.scaled(self.gain),
            r_min,
            r_max,
            gain: self.gain,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    pub lambda_su: f64,
    pub lambda_us: f64,
    #[serde(default = "start_in_s")]
    pub initial: [f64; 2],
}

fn start_in_s() -> [f64; 2] {
    [1.0, 0.0]
}

impl RegimeConfig {
    pub fn generator(&self) -> Result<GeneratorSpec> {
        let g = GeneratorSpec::two_state(self.lambda_su, self.lambda_us, self.initial)?;
        g.validate_ergodic()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub q_gamma: f64,
    pub cone_alpha: f64,
    /// Cone window length in output-grid steps.
    pub window_steps: usize,
    /// Shortest uncontrolled dwell kept for dwell-level rates.
    pub min_dwell_length: f64,
    /// Growth-time window `T₀` for flagging tail points (defaults to the horizon).
    pub validity_window: Option<f64>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            q_gamma: 0.9,
            cone_alpha: 0.9,
            window_steps: 10,
            min_dwell_length: 0.0,
            validity_window: None,
        }
    }
}

fn disabled_policy() -> PolicyConfig {
    PolicyConfig::disabled()
}

/// Everything that defines one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub horizon: f64,
    pub ensemble: usize,
    /// Replace the unfavourable regime's operators by the mitigate construction permanently.
    #[serde(default)]
    pub safe_in_u: bool,
    pub network: NetworkConfig,
    pub kernel: KernelConfig,
    pub regimes: RegimeConfig,
    #[serde(default = "disabled_policy")]
    pub policy: PolicyConfig,
    pub design: ModeDesign,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub estimators: EstimatorConfig,
    #[serde(default)]
    pub tail: TailOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Plain,
    MemoryOff,
    SafeInU,
    Dddas,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Plain => "plain",
            Preset::MemoryOff => "memory_off",
            Preset::SafeInU => "safe_in_u",
            Preset::Dddas => "dddas",
        }
    }
}

/// Line number (one-based) of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ScenarioConfig {
    /// Parses and validates a TOML scenario.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config {
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ExperimentError::config(e.to_string()))
    }

    pub fn preset(&self) -> Result<Preset> {
        let flags = [
            (!self.kernel.memory, Preset::MemoryOff),
            (self.safe_in_u, Preset::SafeInU),
            (self.policy.enabled, Preset::Dddas),
        ];
        let set: Vec<Preset> = flags.iter().filter(|f| f.0).map(|f| f.1).collect();
        match set.as_slice() {
            [] => Ok(Preset::Plain),
            [p] => Ok(*p),
            _ => Err(ExperimentError::config(format!(
                "memory_off, safe_in_u and policy.enabled are exclusive; got {}",
                set.iter().map(|p| p.as_str()).collect::<Vec<_>>().join(" + ")
            ))),
        }
    }

    /// Checks every sub-configuration, without building operators.
    pub fn validate(&self) -> Result<()> {
        if self.ensemble == 0 {
            return Err(ExperimentError::config("ensemble size must be at least 1"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(ExperimentError::config(format!("horizon {} must be positive", self.horizon)));
        }
        if self.network.regimes.len() != 2 {
            return Err(ExperimentError::config("network.regimes must list exactly the S and U regimes"));
        }
        self.preset()?;
        self.design.validate()?;
        self.policy.validate()?;
        self.solver.validate()?;
        self.tail.validate()?;
        let e = &self.estimators;
        if !(e.q_gamma > 0.0 && e.q_gamma < 1.0) || !(-1.0..=1.0).contains(&e.cone_alpha) || e.window_steps == 0 {
            return Err(ExperimentError::config(
                "estimators need q_gamma in (0, 1), cone_alpha in [-1, 1] and window_steps >= 1",
            ));
        }
        if self.kernel.memory {
            let (lo, hi) = self.kernel.rate_bounds(self.horizon, self.solver.max_step);
            if !(lo > 0.0 && hi > lo) {
                return Err(ExperimentError::config(format!("kernel rate bounds [{lo}, {hi}] invalid")));
            }
        }
        self.regimes.generator()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Operators, kernel and derived constants of a scenario.
#[derive(Debug, Clone)]
pub struct ScenarioModel {
    pub preset: Preset,
    pub spec: NetworkSpec,
    pub spectral_radius: f64,
    pub kernel: Option<KernelFit>,
    pub table: OperatorTable,
    pub forcing: Forcing,
    pub generator: GeneratorSpec,
    /// Top direction of the symmetric part of `A_U^(0)`.
    pub v_u: Vec<f64>,
    pub gamma_op: f64,
    pub f_sup: f64,
    pub contraction: ContractionCheck,
    /// Truncation bound for policy-enabled scenarios (error text when unavailable).
    pub truncation: Option<std::result::Result<TruncationBound, String>>,
}

impl ScenarioModel {
    pub fn build(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let preset = cfg.preset()?;
        let spec = cfg.network.spec()?;
        let spectral_radius = linalg::spectral_radius(&spec.adjacency)?;
        let kernel = if cfg.kernel.memory {
            Some(cfg.kernel.fit(cfg.horizon, cfg.solver.max_step)?)
        } else {
            None
        };
        let soe = kernel.as_ref().map_or_else(SoeKernel::empty, |k| k.soe.clone());
        let overrides: Vec<(usize, ModeDesign)> = if cfg.safe_in_u {
            vec![(STATE_U, cfg.design)]
        } else {
            Vec::new()
        };
        let table = OperatorTable::build(&spec, &soe, &cfg.design, &overrides)?;
        let u0 = table.get(STATE_U, crate::model::Mode::Normal);
        let contraction = check_mitigation_contraction(table.get(STATE_U, crate::model::Mode::Mitigate));
        if cfg.safe_in_u && !contraction.certified {
            return Err(ExperimentError::config(format!(
                "safe_in_u operator is not contracting (mu2 = {})",
                u0.susceptibility
            )));
        }
        let forcing = Forcing::from_spec(&spec);
        let f_sup = forcing.sup_norm();
        let truncation = (preset == Preset::Dddas).then(|| match contraction.kappa {
            Some(kappa) => {
                let m_c = 1.0;
                let inputs = TruncationInputs {
                    a_star: table.a_star,
                    rho: m_c * (-kappa * cfg.policy.min_dwell).exp(),
                    kappa,
                    m_c,
                    horizon: cfg.horizon,
                    min_dwell: cfg.policy.min_dwell,
                    x0_norm: 0.0,
                    f_sup,
                };
                truncation_bound(&inputs).map_err(|e| e.to_string())
            }
            None => Err("mitigation contraction not certified".to_string()),
        });
        Ok(Self {
            preset,
            spectral_radius,
            kernel,
            v_u: u0.top_direction.clone(),
            gamma_op: u0.susceptibility,
            table,
            forcing,
            generator: cfg.regimes.generator()?,
            f_sup,
            contraction,
            truncation,
            spec,
        })
    }

    /// Regime path and trajectory for one ensemble member.
    pub fn simulate(&self, cfg: &ScenarioConfig, index: usize, snapshots: bool) -> Result<(RegimePath, Trajectory)> {
        let path = sample_path_seeded(&self.generator, cfg.horizon, cfg.seed, index as u64)?;
        let x0 = vec![0.0; self.table.dim()];
        let record = RecordOptions {
            snapshots,
            alignment: Some(self.v_u.clone()),
        };
        let traj = integrate_trajectory(&self.table, &self.forcing, &path, &cfg.policy, &x0, &cfg.solver, &record)?;
        Ok((path, traj))
    }

    /// Largest `‖x‖` on the steady periodic response of `A_U^(0)` to the forcing.
    pub fn periodic_response_amplitude(&self) -> Result<f64> {
        let op = self.table.get(STATE_U, crate::model::Mode::Normal);
        periodic_amplitude(&op.matrix, &self.forcing, self.table.n())
    }
}

/// Max over the period of `‖x‖` for the particular solution of `X' = A X + e A sin(ωt)`.
pub fn periodic_amplitude(a: &Matrix, forcing: &Forcing, n: usize) -> Result<f64> {
    let d = a.rows();
    let w = forcing.omega;
    // (iω − A)(p + iq) = f  ⇔  [[−A, −ωI], [ωI, −A]] [p; q] = [f; 0].
    let mut m = Matrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = -a[(i, j)];
            m[(d + i, d + j)] = -a[(i, j)];
        }
        m[(i, d + i)] = -w;
        m[(d + i, i)] = w;
    }
    let mut rhs = vec![0.0; 2 * d];
    rhs[forcing.node] = forcing.amplitude;
    let sol = linalg::solve(&m, &rhs)?;
    let (p, q) = (&sol[..n], &sol[d..d + n]);
    // x(t) = p sin(ωt) + q cos(ωt); max norm is the top singular value of [p q].
    let (pp, qq, pq) = (linalg::dot(p, p), linalg::dot(q, q), linalg::dot(p, q));
    let mean = 0.5 * (pp + qq);
    let disc = (0.25 * (pp - qq) * (pp - qq) + pq * pq).sqrt();
    Ok((mean + disc).sqrt())
}

/// Outcome of one ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub index: usize,
    /// Empty when the trajectory completed.
    pub error: String,
    pub burst: f64,
    pub max_norm: f64,
    pub energy_violation: f64,
    pub energy_tolerance: f64,
    pub pathwise_ok: bool,
    pub chattering: usize,
    pub release: usize,
    pub mode_changes: usize,
    pub max_mode: u8,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Completed dwells and their total time, per regime.
    pub dwells_s: usize,
    pub time_s: f64,
    pub dwells_u: usize,
    pub time_u: f64,
}

impl TrajectorySummary {
    pub fn completed(&self) -> bool {
        self.error.is_empty()
    }
}

/// Annealed bands of `E(t)` on the output grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub t: Vec<f64>,
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    pub q90: Vec<f64>,
    pub q99: Vec<f64>,
}

/// Mean, median, q0.9 and q0.99 across curves sampled on the common grid `t`.
pub fn quantile_bands(t: &[f64], curves: &[Vec<f64>]) -> Result<Bands> {
    if curves.is_empty() {
        return Err(ExperimentError::config("bands need at least one trajectory"));
    }
    if curves.iter().any(|c| c.len() != t.len()) {
        return Err(ExperimentError::config("band curves differ in length from the grid"));
    }
    let mut bands = Bands {
        t: t.to_vec(),
        ..Bands::default()
    };
    let mut column = vec![0.0; curves.len()];
    for g in 0..t.len() {
        for (slot, c) in column.iter_mut().zip(curves) {
            *slot = c[g];
        }
        bands.mean.push(column.iter().sum::<f64>() / column.len() as f64);
        column.sort_by(f64::total_cmp);
        bands.median.push(quantile_sorted(&column, 0.5));
        bands.q90.push(quantile_sorted(&column, 0.9));
        bands.q99.push(quantile_sorted(&column, 0.99));
    }
    Ok(bands)
}

/// Persistable per-trajectory outputs of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawOutputs {
    pub trajectories: Vec<TrajectorySummary>,
    pub bands: Bands,
    pub dwells: Vec<DwellInterval>,
    pub cone_rates: Vec<f64>,
}

impl RawOutputs {
    /// Bursts of completed trajectories, in index order.
    pub fn bursts(&self) -> Vec<f64> {
        self.trajectories.iter().filter(|t| t.completed()).map(|t| t.burst).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub config: ScenarioConfig,
    pub raw: RawOutputs,
    pub report: Report,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
    /// Corrupt the cached susceptibilities (negative control for the audits).
    pub inject_fault: bool,
}

struct Member {
    summary: TrajectorySummary,
    grid_energy: Option<Vec<f64>>,
    dwells: Vec<DwellInterval>,
    cone: Vec<f64>,
}

fn run_member(cfg: &ScenarioConfig, model: &ScenarioModel, index: usize) -> Member {
    let mut summary = TrajectorySummary {
        index,
        error: String::new(),
        burst: f64::NAN,
        max_norm: f64::NAN,
        energy_violation: f64::NAN,
        energy_tolerance: f64::NAN,
        pathwise_ok: false,
        chattering: 0,
        release: 0,
        mode_changes: 0,
        max_mode: 0,
        accepted_steps: 0,
        rejected_steps: 0,
        dwells_s: 0,
        time_s: 0.0,
        dwells_u: 0,
        time_u: 0.0,
    };
    let (path, traj) = match model.simulate(cfg, index, false) {
        Ok(v) => v,
        Err(e) => {
            summary.error = e.to_string();
            return Member {
                summary,
                grid_energy: None,
                dwells: Vec::new(),
                cone: Vec::new(),
            };
        }
    };
    let tally = dwell_tally(&path, 2);
    let hygiene = audit_event_log(&traj.events, &cfg.policy);
    summary.burst = traj.burst;
    summary.max_norm = traj.max_norm();
    summary.energy_violation = energy_inequality_audit(&traj, &model.forcing);
    summary.energy_tolerance = energy_audit_tolerance(&traj);
    summary.pathwise_ok = pathwise_bound_audit(&traj, model.table.a_star, model.f_sup, 0.0, cfg.horizon);
    summary.chattering = hygiene.chattering;
    summary.release = hygiene.release;
    summary.mode_changes = traj.events.len();
    summary.max_mode = traj.samples.iter().map(|s| s.m.level()).max().unwrap_or(0);
    summary.accepted_steps = traj.accepted_steps;
    summary.rejected_steps = traj.rejected_steps;
    (summary.dwells_s, summary.time_s) = tally[0];
    (summary.dwells_u, summary.time_u) = tally[1];
    let est = &cfg.estimators;
    Member {
        grid_energy: Some(traj.samples.iter().filter(|s| !s.event).map(|s| s.e).collect()),
        dwells: detect_uncontrolled_dwells(&traj, index, STATE_U, est.min_dwell_length),
        cone: cone_window_rates(&traj, STATE_U, est.cone_alpha, est.window_steps),
        summary,
    }
}

/// Output grid `t_j = jT/(P−1)`.
pub fn output_grid(cfg: &ScenarioConfig) -> Vec<f64> {
    let p = cfg.solver.output_points;
    (0..p).map(|j| cfg.horizon * j as f64 / (p - 1) as f64).collect()
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ExperimentError::config(format!("worker pool: {e}")))
}

/// Runs the ensemble for a validated config.
///
/// Members are simulated in parallel and collected in index order, so the
/// result does not depend on the worker count.
pub fn run_ensemble(cfg: &ScenarioConfig, opts: RunOptions) -> Result<EnsembleResult> {
    let mut model = ScenarioModel::build(cfg)?;
    if opts.inject_fault {
        model.table.corrupt_susceptibilities(-5.0);
    }
    let pool = thread_pool(opts.workers)?;
    let members: Vec<Member> = pool.install(|| {
        (0..cfg.ensemble)
            .into_par_iter()
            .map(|i| run_member(cfg, &model, i))
            .collect()
    });
    let grid = output_grid(cfg);
    let mut curves = Vec::with_capacity(members.len());
    let mut raw = RawOutputs {
        trajectories: Vec::with_capacity(members.len()),
        bands: Bands::default(),
        dwells: Vec::new(),
        cone_rates: Vec::new(),
    };
    for m in members {
        if let Some(c) = m.grid_energy {
            curves.push(c);
        }
        raw.trajectories.push(m.summary);
        raw.dwells.extend(m.dwells);
        raw.cone_rates.extend(m.cone);
    }
    if !curves.is_empty() {
        raw.bands = quantile_bands(&grid, &curves)?;
    }
    drop(curves);
    let report = pool.install(|| report::summarize_with_model(cfg, &model, &raw))?;
    Ok(EnsembleResult {
        config: cfg.clone(),
        raw,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config() -> ScenarioConfig {
        ScenarioConfig::from_toml_str(SMALL).unwrap()
    }

    pub(crate) const SMALL: &str = r#"
name = "small"
seed = 7
horizon = 10.0
ensemble = 6

[network]
nodes = 4
chords = [[0, 2, 0.3]]
forced_node = 0
amplitude = 1.0
omega = 1.0
regimes = [{ gamma = 6.0, beta = 0.5 }, { gamma = 2.0, beta = 1.0 }]

[kernel]
target = { kind = "power_law", exponent = 1.5, offset = 1.0 }
gain = 1.5
terms = 4
r_min = 0.5
r_max = 10.0

[regimes]
lambda_su = 0.5
lambda_us = 1.0

[design]
verify_gain = 0.7
mitigate_damping = 1.0
mitigate_decay = 1.0

[solver]
rtol = 1e-7
atol = 1e-9
max_step = 0.1
output_points = 101

[tail]
q_b = 0.5
stability = 0.05
stability_step = 5
min_exceedances = 1
min_points = 2
bootstrap = 200
level = 0.95
"#;

    #[test]
    fn config_round_trip_and_presets() {
        let cfg = small_config();
        assert_eq!(cfg.preset().unwrap(), Preset::Plain);
        let again = ScenarioConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
        let mut both = cfg.clone();
        both.kernel.memory = false;
        both.safe_in_u = true;
        assert!(both.validate().is_err());
    }

    #[test]
    fn config_errors_are_line_anchored() {
        let text = SMALL.replace("omega = 1.0", "omega = 1.0\nbogus = 3");
        match ScenarioConfig::from_toml_str(&text) {
            Err(ExperimentError::Config { line: Some(l), .. }) => {
                assert_eq!(text.lines().nth(l - 1).unwrap().trim(), "bogus = 3");
            }
            other => panic!("{other:?}"),
        }
        let zero = SMALL.replace("ensemble = 6", "ensemble = 0");
        assert!(matches!(ScenarioConfig::from_toml_str(&zero), Err(ExperimentError::Config { .. })));
    }

    #[test]
    fn bands_examples() {
        let t = vec![0.0, 1.0];
        let same = vec![vec![1.0, 2.0]; 5];
        let b = quantile_bands(&t, &same).unwrap();
        assert_eq!((b.mean.clone(), b.median.clone(), b.q90.clone(), b.q99.clone()), (vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]));
        let mut mixed = vec![vec![1.0, 1.0]; 90];
        mixed.extend(vec![vec![10.0, 10.0]; 10]);
        let b = quantile_bands(&t, &mixed).unwrap();
        assert_eq!(b.q90, vec![10.0, 10.0]);
        assert_eq!(b.median, vec![1.0, 1.0]);
        assert!(quantile_bands(&t, &[]).is_err());
    }

    #[test]
    fn periodic_amplitude_of_scalar_system() {
        // x' = −a x + A sin(ωt) has amplitude A / sqrt(a² + ω²).
        let f = Forcing {
            node: 0,
            amplitude: 2.0,
            omega: 3.0,
            bias: 0.0,
        };
        let amp = periodic_amplitude(&Matrix::diagonal(&[-4.0]), &f, 1).unwrap();
        assert!((amp - 2.0 / 5.0).abs() < 1e-14);
    }

    #[test]
    fn ensemble_is_independent_of_workers() {
        let cfg = small_config();
        let a = run_ensemble(&cfg, RunOptions { workers: 1, ..Default::default() }).unwrap();
        let b = run_ensemble(&cfg, RunOptions { workers: 3, ..Default::default() }).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.raw.trajectories.len(), 6);
        assert!(a.report.audits.energy_pass == 6 && a.report.audits.pathwise_pass == 6);
    }

    #[test]
    fn fault_injection_breaks_the_energy_audit() {
        let cfg = small_config();
        let r = run_ensemble(&cfg, RunOptions { workers: 1, inject_fault: true }).unwrap();
        assert!(r.report.audits.energy_pass < cfg.ensemble);
        assert!(!r.report.failures().is_empty());
    }
}
