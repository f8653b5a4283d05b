//! Growth-rate estimators, dwell detection and alignment diagnostics.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::integrator::{Sample, Trajectory};
use crate::linalg::{dot, norm2};
use crate::model::{Forcing, LiftedOperator, Mode};

/// Maximal interval with a fixed regime in normal mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellInterval {
    pub trajectory: usize,
    pub t0: f64,
    pub t1: f64,
    pub regime: usize,
    pub mode: Mode,
    pub norm0: f64,
    pub norm1: f64,
}

impl DwellInterval {
    /// `(1/τ) ln(‖X(t₁)‖/‖X(t₀)‖)`, or `None` when `‖X(t₀)‖ = 0`.
    pub fn growth_rate(&self) -> Option<f64> {
        (self.norm0 > 0.0).then(|| (self.norm1 / self.norm0).ln() / (self.t1 - self.t0))
    }
}

/// Empirical quantile on the sorted sample: the order statistic of rank
/// `min(N, ⌊qN⌋ + 1)` (one-based).
///
/// This is the smallest value whose empirical CDF strictly exceeds `q`; for
/// `qN` non-integer it coincides with the nearest-rank (ceiling) rule.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(quantile_sorted(&sorted, q))
}

/// [`quantile`] on already sorted input.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64 + 1e-9).floor() as usize + 1).min(n);
    sorted[rank - 1]
}

fn in_state(s: &Sample, regime: usize) -> bool {
    s.z == regime && s.m == Mode::Normal
}

/// Maximal intervals with `z = regime` and `m = 0`, of length at least `min_len`.
///
/// Intervals still open at the horizon end at the last sample.
pub fn detect_uncontrolled_dwells(traj: &Trajectory, trajectory: usize, regime: usize, min_len: f64) -> Vec<DwellInterval> {
    let mut out = Vec::new();
    let samples = &traj.samples;
    let mut start: Option<usize> = None;
    for (i, s) in samples.iter().enumerate() {
        let inside = in_state(s, regime);
        match (start, inside) {
            (None, true) => start = Some(i),
            (Some(a), false) => {
                push_interval(&mut out, &samples[a], s, trajectory, regime, min_len);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(a) = start {
        if let Some(last) = samples.last() {
            push_interval(&mut out, &samples[a], last, trajectory, regime, min_len);
        }
    }
    out
}

fn push_interval(out: &mut Vec<DwellInterval>, a: &Sample, b: &Sample, trajectory: usize, regime: usize, min_len: f64) {
    if b.t - a.t >= min_len && b.t > a.t {
        out.push(DwellInterval {
            trajectory,
            t0: a.t,
            t1: b.t,
            regime,
            mode: Mode::Normal,
            norm0: a.norm,
            norm1: b.norm,
        });
    }
}

/// Dwell-level growth rates and their `q`-quantile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellSummary {
    pub samples: Vec<f64>,
    pub skipped: usize,
    pub q: f64,
    pub quantile: Option<f64>,
}

pub fn gamma_dwell(intervals: &[DwellInterval], q: f64) -> DwellSummary {
    let mut samples = Vec::with_capacity(intervals.len());
    let mut skipped = 0;
    for iv in intervals {
        match iv.growth_rate() {
            Some(g) => samples.push(g),
            None => {
                skipped += 1;
                warn!(
                    "trajectory {}: dwell [{}, {}] starts at the zero state; skipped",
                    iv.trajectory, iv.t0, iv.t1
                );
            }
        }
    }
    DwellSummary {
        quantile: quantile(&samples, q),
        samples,
        skipped,
        q,
    }
}

/// `μ₂(A_U^(0))`.
pub fn gamma_operator(op_u0: &LiftedOperator) -> f64 {
    op_u0.susceptibility
}

/// `v_Uᵀ X / ‖X‖`, or `None` for the zero state.
pub fn alignment_ratio(x: &[f64], v_u: &[f64]) -> Option<f64> {
    let norm = norm2(x);
    (norm > 0.0).then(|| dot(v_u, x) / norm)
}

/// Window growth rates `(1/Δ) ln(‖X(t+Δ)‖/‖X(t)‖)` from one trajectory.
///
/// A window starts at an output-grid sample with alignment at least `alpha`
/// and spans `window_steps` grid steps; every sample inside it must be in
/// `regime` and normal mode. The trajectory must have been recorded with the
/// alignment direction `v_U`.
pub fn cone_window_rates(traj: &Trajectory, regime: usize, alpha: f64, window_steps: usize) -> Vec<f64> {
    let samples = &traj.samples;
    let grid: Vec<usize> = (0..samples.len()).filter(|&i| !samples[i].event).collect();
    let mut rates = Vec::new();
    if window_steps == 0 {
        return rates;
    }
    // Running count of out-of-state samples for O(1) window checks.
    let mut bad_prefix = Vec::with_capacity(samples.len() + 1);
    bad_prefix.push(0usize);
    for s in samples {
        let last = *bad_prefix.last().unwrap_or(&0);
        bad_prefix.push(last + usize::from(!in_state(s, regime)));
    }
    for w in 0..grid.len().saturating_sub(window_steps) {
        let (p0, p1) = (grid[w], grid[w + window_steps]);
        let (a, b) = (&samples[p0], &samples[p1]);
        if !(a.alignment >= alpha) || a.norm <= 0.0 || b.norm <= 0.0 {
            continue;
        }
        if bad_prefix[p1 + 1] - bad_prefix[p0] > 0 {
            continue;
        }
        rates.push((b.norm / a.norm).ln() / (b.t - a.t));
    }
    rates
}

/// Cone-restricted rate: `q`-quantile of the pooled window rates, `None` if no window qualifies.
pub fn gamma_cone(trajs: &[Trajectory], regime: usize, alpha: f64, window_steps: usize, q: f64) -> Option<f64> {
    let pooled: Vec<f64> = trajs
        .iter()
        .flat_map(|t| cone_window_rates(t, regime, alpha, window_steps))
        .collect();
    quantile(&pooled, q)
}

/// Minimum and mean of `v_Uᵀ f̃(t)` on a uniform grid over `[0, T]`.
pub fn forcing_projection_diagnostic(forcing: &Forcing, v_u: &[f64], horizon: f64, points: usize) -> (f64, f64) {
    let points = points.max(2);
    let weight = v_u.get(forcing.node).copied().unwrap_or(0.0);
    let mut min = f64::INFINITY;
    let mut sum = 0.0;
    for i in 0..points {
        let t = horizon * i as f64 / (points - 1) as f64;
        let p = weight * forcing.value(t);
        min = min.min(p);
        sum += p;
    }
    (min, sum / points as f64)
}

/// All three growth estimates plus the hybrid used for the theoretical index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaEstimates {
    pub gamma_op: f64,
    pub dwell_count: usize,
    pub dwell_skipped: usize,
    pub dwell_q: f64,
    pub gamma_dwell: Option<f64>,
    pub cone_alpha: f64,
    pub cone_window_steps: usize,
    pub cone_q: f64,
    pub cone_count: usize,
    pub gamma_cone: Option<f64>,
    /// `min(γ_op, γ_cone)`, falling back to `γ_op` when the cone is empty.
    pub gamma_hybrid: f64,
}

impl GammaEstimates {
    pub fn hybrid(gamma_op: f64, gamma_cone: Option<f64>) -> f64 {
        gamma_cone.map_or(gamma_op, |c| c.min(gamma_op))
    }
}
