//! One-axis sensitivity sweeps on paired seeds.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{run_ensemble, EnsembleResult, ExperimentError, Result, RunOptions, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Number of kernel terms `K`.
    SoeK,
    /// Exit rate `λ_US` of the unfavourable regime.
    RegimeRates,
    /// Reverse ring weight (equal to the forward weight gives a normal network).
    NetworkNonnormality,
    /// Forcing amplitude.
    Forcing,
    /// Multiplier on the load thresholds.
    DddasThresholds,
    /// Mitigate-mode damping `δ`.
    MitigationStrength,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 6] = [
        SweepAxis::SoeK,
        SweepAxis::RegimeRates,
        SweepAxis::NetworkNonnormality,
        SweepAxis::Forcing,
        SweepAxis::DddasThresholds,
        SweepAxis::MitigationStrength,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::SoeK => "soe_k",
            SweepAxis::RegimeRates => "regime_rates",
            SweepAxis::NetworkNonnormality => "network_nonnormality",
            SweepAxis::Forcing => "forcing",
            SweepAxis::DddasThresholds => "dddas_thresholds",
            SweepAxis::MitigationStrength => "mitigation_strength",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::SoeK => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(ExperimentError::config(format!("kernel terms must be a positive integer, got {value}")));
                }
                cfg.kernel.terms = value as usize;
            }
            SweepAxis::RegimeRates => cfg.regimes.lambda_us = value,
            SweepAxis::NetworkNonnormality => cfg.network.reverse_weight = value,
            SweepAxis::Forcing => cfg.network.amplitude = value,
            SweepAxis::DddasThresholds => {
                if !cfg.policy.enabled {
                    return Err(ExperimentError::config("threshold sweep needs an enabled policy"));
                }
                cfg.policy.tau_l = [base.policy.tau_l[0] * value, base.policy.tau_l[1] * value];
            }
            SweepAxis::MitigationStrength => cfg.design.mitigate_damping = value,
        }
        cfg.name = format!("{}-{}-{}", base.name, self.as_str(), value);
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromStr for SweepAxis {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| ExperimentError::config(format!("unknown sweep axis {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub alpha_hat: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub alpha_th: Option<f64>,
    pub lambda_u_hat: Option<f64>,
    pub gamma_op: Option<f64>,
    pub gamma_hybrid: Option<f64>,
    pub eps_rel: Option<f64>,
    /// Log–log intercept (prefactor) of the tail fit.
    pub intercept: Option<f64>,
    pub max_burst: Option<f64>,
    /// Fraction of trajectories with at least one mode change.
    pub intervention_rate: Option<f64>,
    /// Largest median-band gap to the policy-free baseline, relative to its peak.
    pub band_distortion: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub base_hash: String,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
    /// OLS of `α̂` on the swept value: `(slope, intercept, R²)`.
    pub linear_fit: Option<(f64, f64, f64)>,
    /// Spearman correlation between the swept value and `α̂`.
    pub rank_correlation: Option<f64>,
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation; `None` for fewer than two points or constant input.
pub fn rank_correlation(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    pearson(&ranks(x), &ranks(y))
}

fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    if x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx;
    let r = pearson(x, y).unwrap_or(0.0);
    Some((slope, my - slope * mx, r * r))
}

fn median_gap(a: &EnsembleResult, base: &EnsembleResult) -> f64 {
    let peak = base.raw.bands.median.iter().copied().fold(0.0f64, f64::max);
    let gap = a
        .raw
        .bands
        .median
        .iter()
        .zip(&base.raw.bands.median)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    if peak > 0.0 {
        gap / peak
    } else {
        gap
    }
}

fn row_from(value: f64, r: &EnsembleResult, baseline: Option<&EnsembleResult>) -> SweepRow {
    let rep = &r.report;
    let tail = rep.tail.as_ref();
    let done = rep.completed.max(1) as f64;
    SweepRow {
        value,
        alpha_hat: tail.map(|t| t.alpha_hat),
        ci_lo: tail.map(|t| t.ci.lo),
        ci_hi: tail.map(|t| t.ci.hi),
        alpha_th: tail.and_then(|t| t.alpha_th),
        lambda_u_hat: rep.regimes.lambda_u_hat,
        gamma_op: Some(rep.gamma.gamma_op),
        gamma_hybrid: Some(rep.gamma.gamma_hybrid),
        eps_rel: rep.kernel.eps_rel,
        intercept: tail.map(|t| t.intercept),
        max_burst: Some(rep.bursts.max),
        intervention_rate: Some(rep.audits.intervened as f64 / done),
        band_distortion: baseline.map(|b| median_gap(r, b)),
        error: None,
    }
}

fn failed_row(value: f64, e: &ExperimentError) -> SweepRow {
    SweepRow {
        value,
        alpha_hat: None,
        ci_lo: None,
        ci_hi: None,
        alpha_th: None,
        lambda_u_hat: None,
        gamma_op: None,
        gamma_hybrid: None,
        eps_rel: None,
        intercept: None,
        max_burst: None,
        intervention_rate: None,
        band_distortion: None,
        error: Some(e.to_string()),
    }
}

/// Runs one ensemble per grid value; failures are recorded and the sweep continues.
pub fn sensitivity_sweep(base: &ScenarioConfig, axis: SweepAxis, grid: &[f64], opts: RunOptions) -> Result<SweepTable> {
    if grid.is_empty() {
        return Err(ExperimentError::config("sweep grid is empty"));
    }
    base.validate()?;
    let policy_axis = matches!(axis, SweepAxis::DddasThresholds | SweepAxis::MitigationStrength);
    let baseline = if policy_axis && base.policy.enabled {
        let mut b = base.clone();
        b.policy.enabled = false;
        b.name = format!("{}-baseline", base.name);
        Some(run_ensemble(&b, opts)?)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(grid.len());
    for &value in grid {
        let row = axis
            .apply(base, value)
            .and_then(|cfg| run_ensemble(&cfg, opts))
            .map(|r| row_from(value, &r, baseline.as_ref()));
        rows.push(row.unwrap_or_else(|e| failed_row(value, &e)));
    }
    let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.alpha_hat.map(|a| (r.value, a))).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Ok(SweepTable {
        axis,
        base_hash: base.hash(),
        seed: base.seed,
        linear_fit: linear_fit(&x, &y),
        rank_correlation: rank_correlation(&x, &y),
        rows,
    })
}
