//! Structured per-scenario report.

use serde::{Deserialize, Serialize};

use super::{Preset, RawOutputs, Result, ScenarioConfig, ScenarioModel};
use crate::estimators::{forcing_projection_diagnostic, gamma_dwell, quantile, quantile_sorted, GammaEstimates};
use crate::model::RegimeDynamics;
use crate::regime::{rates_from_tally, DwellRateEstimate, STATE_U};
use crate::tailfit::{beyond_validity_window, fit_tail, theoretical_index, TailFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub lambda_su: f64,
    pub lambda_us: f64,
    pub dwell: Vec<DwellRateEstimate>,
    /// Estimated exit rate of `U`.
    pub lambda_u_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkReport {
    pub nodes: usize,
    pub spectral_radius: f64,
    pub regimes: Vec<RegimeDynamics>,
    pub forced_nodes: Vec<usize>,
    pub amplitude: f64,
    pub omega: f64,
    pub a_star: f64,
    /// Minimum and mean of `v_Uᵀ f̃(t)` over the horizon.
    pub forcing_projection: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub memory: bool,
    pub terms: usize,
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
    pub eps_rel: Option<f64>,
    pub gain: f64,
    pub weights: Vec<f64>,
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub certified: bool,
    pub kappa: Option<f64>,
    pub rho: Option<f64>,
    pub rounds: Option<usize>,
    pub log_m_t: Option<f64>,
    pub m_t: Option<f64>,
    /// Bursts above `M_T`.
    pub exceedances: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstSummary {
    pub mean: f64,
    pub median: f64,
    pub q90: f64,
    pub q99: f64,
    pub q999: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub energy_pass: usize,
    pub pathwise_pass: usize,
    /// Largest energy violation relative to its tolerance.
    pub worst_energy_ratio: f64,
    pub chattering: usize,
    pub release: usize,
    pub mode_changes: usize,
    /// Trajectories with at least one mode change.
    pub intervened: usize,
    pub reached_mitigate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub preset: Preset,
    pub config_hash: String,
    pub seed: u64,
    pub horizon: f64,
    pub ensemble: usize,
    pub completed: usize,
    /// `(index, error)` of trajectories excluded after a solver failure.
    pub excluded: Vec<(usize, String)>,
    pub regimes: RegimeReport,
    pub network: NetworkReport,
    pub kernel: KernelReport,
    pub gamma: GammaEstimates,
    pub tail: Option<TailFit>,
    pub tail_error: Option<String>,
    pub bursts: BurstSummary,
    pub truncation: Option<TruncationReport>,
    pub audits: AuditSummary,
}

impl Report {
    /// Machine-readable list of failed audits.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        let a = &self.audits;
        if a.energy_pass < self.completed {
            out.push(format!("energy_inequality: {} of {} trajectories fail", self.completed - a.energy_pass, self.completed));
        }
        if a.pathwise_pass < self.completed {
            out.push(format!("pathwise_bound: {} of {} trajectories fail", self.completed - a.pathwise_pass, self.completed));
        }
        if a.chattering > 0 {
            out.push(format!("chattering: {} violations", a.chattering));
        }
        if a.release > 0 {
            out.push(format!("release: {} violations", a.release));
        }
        if let Some(t) = &self.truncation {
            if t.exceedances > 0 {
                out.push(format!("truncation: {} bursts exceed M_T", t.exceedances));
            }
        }
        out
    }

    /// Whether any trajectory was excluded after a solver failure.
    pub fn diverged(&self) -> bool {
        !self.excluded.is_empty()
    }
}

/// Rebuilds the model and summarizes raw outputs.
pub fn summarize(cfg: &ScenarioConfig, raw: &RawOutputs) -> Result<Report> {
    let model = ScenarioModel::build(cfg)?;
    summarize_with_model(cfg, &model, raw)
}

pub(super) fn summarize_with_model(cfg: &ScenarioConfig, model: &ScenarioModel, raw: &RawOutputs) -> Result<Report> {
    let done: Vec<_> = raw.trajectories.iter().filter(|t| t.completed()).collect();
    let excluded = raw
        .trajectories
        .iter()
        .filter(|t| !t.completed())
        .map(|t| (t.index, t.error.clone()))
        .collect();

    let mut tally = [(0usize, 0.0f64); 2];
    for t in &done {
        tally[0].0 += t.dwells_s;
        tally[0].1 += t.time_s;
        tally[1].0 += t.dwells_u;
        tally[1].1 += t.time_u;
    }
    let dwell = rates_from_tally(&tally, &model.generator.labels);
    let lambda_u_hat = dwell[STATE_U].rate;

    let est = &cfg.estimators;
    let dwell_rates = gamma_dwell(&raw.dwells, est.q_gamma);
    let gamma_cone = quantile(&raw.cone_rates, est.q_gamma);
    let gamma = GammaEstimates {
        gamma_op: model.gamma_op,
        dwell_count: dwell_rates.samples.len(),
        dwell_skipped: dwell_rates.skipped,
        dwell_q: est.q_gamma,
        gamma_dwell: dwell_rates.quantile,
        cone_alpha: est.cone_alpha,
        cone_window_steps: est.window_steps,
        cone_q: est.q_gamma,
        cone_count: raw.cone_rates.len(),
        gamma_cone,
        gamma_hybrid: GammaEstimates::hybrid(model.gamma_op, gamma_cone),
    };

    let bursts: Vec<f64> = done.iter().map(|t| t.burst).collect();
    let (tail, tail_error) = match fit_tail(&bursts, &cfg.tail, cfg.seed) {
        Ok((fit, ci)) => {
            let alpha_th = lambda_u_hat.and_then(|l| theoretical_index(l, gamma.gamma_hybrid).ok());
            let source = if gamma.gamma_cone.is_some_and(|c| c < model.gamma_op) {
                "gamma_cone"
            } else {
                "gamma_op"
            };
            let t0 = est.validity_window.unwrap_or(cfg.horizon);
            (
                Some(TailFit {
                    samples: bursts.len(),
                    b_min: fit.b_min,
                    b_quantile: fit.b_quantile,
                    alpha_hat: fit.alpha,
                    intercept: fit.intercept,
                    ci,
                    points_used: fit.points,
                    reliable: fit.points_at_quantile >= cfg.tail.min_points,
                    alpha_th,
                    gamma_source: source.to_string(),
                    beyond_window: beyond_validity_window(&bursts, fit.b_min, gamma.gamma_hybrid, t0),
                }),
                None,
            )
        }
        Err(e) => (None, Some(e.to_string())),
    };

    let mut sorted = bursts.clone();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| if sorted.is_empty() { f64::NAN } else { quantile_sorted(&sorted, p) };
    let burst_summary = BurstSummary {
        mean: if sorted.is_empty() { f64::NAN } else { sorted.iter().sum::<f64>() / sorted.len() as f64 },
        median: q(0.5),
        q90: q(0.9),
        q99: q(0.99),
        q999: q(0.999),
        max: sorted.last().copied().unwrap_or(f64::NAN),
    };

    let truncation = model.truncation.as_ref().map(|t| match t {
        Ok(b) => TruncationReport {
            certified: true,
            kappa: model.contraction.kappa,
            rho: model.contraction.kappa.map(|k| (-k * cfg.policy.min_dwell).exp()),
            rounds: Some(b.rounds),
            log_m_t: Some(b.log_m_t),
            m_t: Some(b.m_t),
            exceedances: bursts.iter().filter(|&&v| v > 0.0 && v.ln() > b.log_m_t).count(),
            error: None,
        },
        Err(e) => TruncationReport {
            certified: model.contraction.certified,
            kappa: model.contraction.kappa,
            rho: None,
            rounds: None,
            log_m_t: None,
            m_t: None,
            exceedances: 0,
            error: Some(e.clone()),
        },
    });

    let audits = AuditSummary {
        energy_pass: done.iter().filter(|t| t.energy_violation <= t.energy_tolerance).count(),
        pathwise_pass: done.iter().filter(|t| t.pathwise_ok).count(),
        worst_energy_ratio: done
            .iter()
            .map(|t| t.energy_violation / t.energy_tolerance)
            .fold(f64::NEG_INFINITY, f64::max),
        chattering: done.iter().map(|t| t.chattering).sum(),
        release: done.iter().map(|t| t.release).sum(),
        mode_changes: done.iter().map(|t| t.mode_changes).sum(),
        intervened: done.iter().filter(|t| t.mode_changes > 0).count(),
        reached_mitigate: done.iter().filter(|t| t.max_mode == 2).count(),
    };

    let kernel = match &model.kernel {
        Some(k) => KernelReport {
            memory: true,
            terms: k.soe.len(),
            r_min: Some(k.r_min),
            r_max: Some(k.r_max),
            eps_rel: Some(k.soe.eps_rel),
            gain: k.gain,
            weights: k.soe.weights.clone(),
            rates: k.soe.rates.clone(),
        },
        None => KernelReport {
            memory: false,
            terms: 0,
            r_min: None,
            r_max: None,
            eps_rel: None,
            gain: 0.0,
            weights: Vec::new(),
            rates: Vec::new(),
        },
    };

    Ok(Report {
        scenario: cfg.name.clone(),
        preset: model.preset,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        horizon: cfg.horizon,
        ensemble: cfg.ensemble,
        completed: done.len(),
        excluded,
        regimes: RegimeReport {
            lambda_su: cfg.regimes.lambda_su,
            lambda_us: cfg.regimes.lambda_us,
            dwell,
            lambda_u_hat,
        },
        network: NetworkReport {
            nodes: model.spec.n(),
            spectral_radius: model.spectral_radius,
            regimes: model.spec.regimes.clone(),
            forced_nodes: vec![model.forcing.node],
            amplitude: model.forcing.amplitude,
            omega: model.forcing.omega,
            a_star: model.table.a_star,
            forcing_projection: forcing_projection_diagnostic(
                &model.forcing,
                &model.v_u,
                cfg.horizon,
                cfg.solver.output_points,
            ),
        },
        kernel,
        gamma,
        tail,
        tail_error,
        bursts: burst_summary,
        truncation,
        audits,
    })
}
