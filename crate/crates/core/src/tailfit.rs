//! Burst-tail statistics: empirical CCDF, cutoff selection, log–log slope,
//! bootstrap intervals, the theoretical index and the truncation bound.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::quantile_sorted;
use crate::rng::keyed_rng;

#[derive(Debug, Error, PartialEq)]
pub enum TailError {
    #[error("invalid tail-fit input: {0}")]
    Parameter(String),
    #[error("degenerate tail: {0}")]
    Degenerate(String),
    #[error("no growth channel (gamma_U = {gamma}); heavy-tail mechanism inactive")]
    NoGrowthChannel { gamma: f64 },
    #[error("mitigation contraction rho = {rho} >= 1; truncation unavailable, exponent improvement only")]
    TruncationUnavailable { rho: f64 },
}

pub type Result<T> = std::result::Result<T, TailError>;

/// One step of the empirical CCDF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcdfPoint {
    pub value: f64,
    /// Fraction of samples strictly greater than `value`.
    pub prob: f64,
    pub exceedances: usize,
}

/// CCDF evaluated at each distinct sample value, in increasing order.
pub fn empirical_ccdf(samples: &[f64]) -> Result<Vec<CcdfPoint>> {
    if samples.is_empty() {
        return Err(TailError::Parameter("empty sample".into()));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(TailError::Parameter("sample contains NaN".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(ccdf_sorted(&sorted))
}

fn ccdf_sorted(sorted: &[f64]) -> Vec<CcdfPoint> {
    let n = sorted.len();
    let mut out: Vec<CcdfPoint> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        if i + 1 < n && sorted[i + 1] == v {
            continue;
        }
        let exceedances = n - i - 1;
        out.push(CcdfPoint {
            value: v,
            prob: exceedances as f64 / n as f64,
            exceedances,
        });
    }
    out
}

/// OLS of `ln P̂` on `ln b` over points with `b ≥ b_min` and `P̂ > 0`.
///
/// Returns `(α̂, intercept, points used)` with `α̂` the negated slope.
pub fn fit_slope(points: &[(f64, f64)], b_min: f64) -> Result<(f64, f64, usize)> {
    let xy: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(b, p)| b >= b_min && b > 0.0 && p > 0.0)
        .map(|&(b, p)| (b.ln(), p.ln()))
        .collect();
    if xy.len() < 2 {
        return Err(TailError::Degenerate(format!(
            "{} usable points at or above b_min = {b_min}",
            xy.len()
        )));
    }
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in &xy {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 {
        return Err(TailError::Degenerate("all tail points share one value".into()));
    }
    let slope = sxy / sxx;
    Ok((-slope, my - slope * mx, xy.len()))
}

/// Cutoff selection and fit options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TailOptions {
    pub q_b: f64,
    /// Relative slope tolerance for the stability rule.
    pub stability: f64,
    /// Order statistics skipped per stability step.
    pub stability_step: usize,
    pub min_exceedances: usize,
    pub min_points: usize,
    pub bootstrap: usize,
    pub level: f64,
}

impl Default for TailOptions {
    fn default() -> Self {
        Self {
            q_b: 0.9,
            stability: 0.05,
            stability_step: 5,
            min_exceedances: 3,
            min_points: 10,
            bootstrap: 1000,
            level: 0.95,
        }
    }
}

impl TailOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.q_b > 0.0 && self.q_b < 1.0) {
            return Err(TailError::Parameter(format!("q_b = {} outside (0, 1)", self.q_b)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(TailError::Parameter(format!("level = {} outside (0, 1)", self.level)));
        }
        if !(self.stability >= 0.0) || self.stability_step == 0 {
            return Err(TailError::Parameter("stability rule needs a nonnegative tolerance and a positive step".into()));
        }
        if self.bootstrap > 0 && self.bootstrap < 200 {
            return Err(TailError::Parameter(format!("{} bootstrap resamples; need at least 200", self.bootstrap)));
        }
        Ok(())
    }
}

/// Point fit at a selected cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub b_min: f64,
    /// Cutoff given by the quantile rule alone.
    pub b_quantile: f64,
    pub alpha: f64,
    pub intercept: f64,
    pub points: usize,
    /// Tail points available at the quantile cutoff.
    pub points_at_quantile: usize,
}

/// Suffix sums over CCDF points in log coordinates, for O(1) refits.
struct TailSums {
    values: Vec<f64>,
    origin: (f64, f64),
    // Suffix sums of 1, x, y, x², xy (shifted to the first point).
    s: Vec<[f64; 5]>,
}

impl TailSums {
    fn new(sorted: &[f64], min_exceedances: usize) -> Self {
        let pts: Vec<CcdfPoint> = ccdf_sorted(sorted)
            .into_iter()
            .filter(|p| p.exceedances >= min_exceedances.max(1) && p.value > 0.0)
            .collect();
        let (x0, y0) = pts.first().map_or((0.0, 0.0), |p| (p.value.ln(), p.prob.ln()));
        let mut s = vec![[0.0; 5]; pts.len() + 1];
        for i in (0..pts.len()).rev() {
            let x = pts[i].value.ln() - x0;
            let y = pts[i].prob.ln() - y0;
            let next = s[i + 1];
            s[i] = [next[0] + 1.0, next[1] + x, next[2] + y, next[3] + x * x, next[4] + x * y];
        }
        Self {
            values: pts.iter().map(|p| p.value).collect(),
            origin: (x0, y0),
            s,
        }
    }

    fn start(&self, b_min: f64) -> usize {
        self.values.partition_point(|&v| v < b_min)
    }

    /// `(α̂, intercept, points)` over points from `start` on.
    fn fit(&self, start: usize) -> Option<(f64, f64, usize)> {
        let [n, sx, sy, sxx, sxy] = self.s[start];
        if n < 2.0 {
            return None;
        }
        let den = n * sxx - sx * sx;
        if !(den > 1e-12 * n * sxx.max(f64::MIN_POSITIVE)) {
            return None;
        }
        let slope = (n * sxy - sx * sy) / den;
        let (x0, y0) = self.origin;
        let intercept = (sy - slope * sx) / n + y0 - slope * x0;
        Some((-slope, intercept, n as usize))
    }
}

/// Quantile cutoff, refined by the stability rule when `N ≥ 50`.
pub fn select_bmin(samples: &[f64], opts: &TailOptions) -> Result<SlopeFit> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    fit_sorted(&sorted, opts)
}

fn fit_sorted(sorted: &[f64], opts: &TailOptions) -> Result<SlopeFit> {
    if sorted.is_empty() {
        return Err(TailError::Parameter("empty sample".into()));
    }
    let sums = TailSums::new(sorted, opts.min_exceedances);
    let n = sorted.len();
    let rank0 = ((opts.q_b * n as f64 + 1e-9).floor() as usize + 1).min(n);
    let b0 = quantile_sorted(sorted, opts.q_b);
    let i0 = sums.start(b0);
    let (alpha0, intercept0, points0) = sums.fit(i0).ok_or_else(|| {
        TailError::Degenerate(format!("fewer than two distinct tail points above b = {b0}"))
    })?;
    let mut best = b0;
    if n >= 50 {
        let mut rank = rank0;
        while rank > opts.stability_step {
            rank -= opts.stability_step;
            let cand = sorted[rank - 1];
            match sums.fit(sums.start(cand)) {
                Some((a, _, _)) if (a - alpha0).abs() <= opts.stability * alpha0.abs() => best = best.min(cand),
                _ => break,
            }
        }
    }
    let (alpha, intercept, points) = sums.fit(sums.start(best)).unwrap_or((alpha0, intercept0, points0));
    Ok(SlopeFit {
        b_min: best,
        b_quantile: b0,
        alpha,
        intercept,
        points,
        points_at_quantile: points0,
    })
}

/// Percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub level: f64,
    pub lo: f64,
    pub hi: f64,
    pub replicates: usize,
    pub skipped: usize,
}

/// Resamples trajectories with replacement and refits with `fit`.
///
/// Replicate `r` draws from the keyed stream `(seed, "bootstrap", r)`.
/// Degenerate resamples (all values equal, or `fit` returning `None`) are
/// skipped and counted. The interval is widened, if needed, to contain the
/// estimate on the full sample.
pub fn bootstrap_ci<F>(samples: &[f64], fit: F, replicates: usize, level: f64, seed: u64) -> Result<BootstrapCi>
where
    F: Fn(&[f64]) -> Option<f64> + Sync,
{
    if samples.is_empty() {
        return Err(TailError::Parameter("empty sample".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(TailError::Parameter(format!("level = {level} outside (0, 1)")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let point = fit(&sorted);
    let n = sorted.len();
    let mut stats: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .filter_map(|r| {
            let mut rng = keyed_rng(seed, "bootstrap", r, 0);
            let mut counts = vec![0u32; n];
            for _ in 0..n {
                counts[rng.random_range(0..n)] += 1;
            }
            let resample: Vec<f64> = counts
                .iter()
                .zip(&sorted)
                .flat_map(|(&c, &v)| std::iter::repeat_n(v, c as usize))
                .collect();
            if resample.first() == resample.last() {
                return None;
            }
            fit(&resample).filter(|v| v.is_finite())
        })
        .collect();
    let skipped = replicates - stats.len();
    stats.sort_by(f64::total_cmp);
    let (mut lo, mut hi) = if stats.is_empty() {
        let p = point.unwrap_or(f64::NAN);
        (p, p)
    } else {
        (
            quantile_sorted(&stats, (1.0 - level) / 2.0),
            quantile_sorted(&stats, (1.0 + level) / 2.0),
        )
    };
    if let Some(p) = point.filter(|p| p.is_finite()) {
        lo = lo.min(p);
        hi = hi.max(p);
    }
    Ok(BootstrapCi {
        level,
        lo,
        hi,
        replicates,
        skipped,
    })
}

/// `λ_U / γ_U`.
pub fn theoretical_index(lambda_u: f64, gamma_u: f64) -> Result<f64> {
    if !(lambda_u > 0.0) {
        return Err(TailError::Parameter(format!("exit rate {lambda_u} must be positive")));
    }
    if !(gamma_u > 0.0) {
        return Err(TailError::NoGrowthChannel { gamma: gamma_u });
    }
    Ok(lambda_u / gamma_u)
}

/// Inputs to the worst-case finite-horizon iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationInputs {
    pub a_star: f64,
    pub rho: f64,
    pub kappa: f64,
    pub m_c: f64,
    pub horizon: f64,
    pub min_dwell: f64,
    pub x0_norm: f64,
    pub f_sup: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationBound {
    pub rounds: usize,
    pub log_m_t: f64,
    /// `e^{log_m_t}`; infinite when it overflows.
    pub m_t: f64,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Composed growth-then-contract iteration over `⌈T/Δ_min⌉` rounds.
///
/// Each round maps `u ↦ e^{A⋆T}(u + T f_sup)` (the round peak) and then
/// `peak ↦ ρ·peak + (M_c/κ) f_sup`. The bound is the largest of `‖X0‖` and
/// all round peaks, carried in log space.
pub fn truncation_bound(inp: &TruncationInputs) -> Result<TruncationBound> {
    let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
    if !(inp.horizon > 0.0 && inp.min_dwell > 0.0 && inp.horizon.is_finite()) {
        return Err(TailError::Parameter("horizon and minimum dwell must be positive".into()));
    }
    if !(finite_nonneg(inp.x0_norm) && finite_nonneg(inp.f_sup) && inp.a_star.is_finite() && inp.m_c >= 0.0) {
        return Err(TailError::Parameter("norms must be finite and nonnegative".into()));
    }
    if !(inp.rho >= 0.0) || inp.rho >= 1.0 {
        return Err(TailError::TruncationUnavailable { rho: inp.rho });
    }
    if inp.f_sup > 0.0 && !(inp.kappa > 0.0) {
        return Err(TailError::Parameter(format!("contraction rate {} must be positive", inp.kappa)));
    }
    let rounds = (inp.horizon / inp.min_dwell - 1e-12).ceil().max(1.0) as usize;
    let ln = |v: f64| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY };
    let growth = inp.a_star * inp.horizon;
    let ln_forcing = ln(inp.horizon * inp.f_sup);
    let ln_reset = if inp.f_sup > 0.0 {
        ln(inp.m_c * inp.f_sup / inp.kappa)
    } else {
        f64::NEG_INFINITY
    };
    let ln_rho = ln(inp.rho);
    let mut u = ln(inp.x0_norm);
    let mut best = u;
    for _ in 0..rounds {
        let peak = growth + log_add(u, ln_forcing);
        best = best.max(peak);
        u = log_add(ln_rho + peak, ln_reset);
    }
    Ok(TruncationBound {
        rounds,
        log_m_t: best,
        m_t: best.exp(),
    })
}

/// Complete tail summary for one burst sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub samples: usize,
    pub b_min: f64,
    pub b_quantile: f64,
    pub alpha_hat: f64,
    pub intercept: f64,
    pub ci: BootstrapCi,
    pub points_used: usize,
    pub reliable: bool,
    pub alpha_th: Option<f64>,
    pub gamma_source: String,
    /// Fit points with `(1/γ_U) ln b` beyond the validity window `T₀`.
    pub beyond_window: usize,
}

/// Point fit and bootstrap interval at the given options.
pub fn fit_tail(samples: &[f64], opts: &TailOptions, seed: u64) -> Result<(SlopeFit, BootstrapCi)> {
    opts.validate()?;
    if samples.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(TailError::Parameter("burst samples must be finite and nonnegative".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let fit = fit_sorted(&sorted, opts)?;
    let ci = bootstrap_ci(
        &sorted,
        |s| fit_sorted(s, opts).ok().map(|f| f.alpha),
        opts.bootstrap,
        opts.level,
        seed,
    )?;
    Ok((fit, ci))
}

/// Number of CCDF fit points whose growth time `(1/γ) ln b` exceeds `t0`.
pub fn beyond_validity_window(samples: &[f64], b_min: f64, gamma: f64, t0: f64) -> usize {
    if !(gamma > 0.0) {
        return 0;
    }
    empirical_ccdf(samples)
        .map(|pts| {
            pts.iter()
                .filter(|p| p.value >= b_min && p.prob > 0.0 && p.value > 0.0 && p.value.ln() / gamma > t0)
                .count()
        })
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pareto(alpha: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u: f64 = 1.0 - rng.random::<f64>();
                u.powf(-1.0 / alpha)
            })
            .collect()
    }

    #[test]
    fn ccdf_examples() {
        let pts = empirical_ccdf(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(pts.len(), 3);
        // P(B > 1.5) is the value on the step starting at 1.
        assert!((pts[0].prob - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(pts[2].prob, 0.0);
        let flat = empirical_ccdf(&[4.0; 7]).unwrap();
        assert_eq!(flat.len(), 1);
        assert_eq!(flat[0].prob, 0.0);
        assert!(empirical_ccdf(&[]).is_err());
    }

    #[test]
    fn exact_log_linear_slopes() {
        let pts: Vec<(f64, f64)> = (1..30).map(|i| (i as f64, (i as f64).powf(-2.0))).collect();
        let (a, c, used) = fit_slope(&pts, 1.0).unwrap();
        assert!((a - 2.0).abs() < 1e-13 && c.abs() < 1e-12 && used == 29);
        let pts: Vec<(f64, f64)> = (1..30).map(|i| (i as f64, 0.3 / i as f64)).collect();
        let (a, c, _) = fit_slope(&pts, 1.0).unwrap();
        assert!((a - 1.0).abs() < 1e-13 && (c - 0.3f64.ln()).abs() < 1e-12);
        assert!(fit_slope(&[(1.0, 0.0), (2.0, 0.0)], 0.0).is_err());
    }

    #[test]
    fn quantile_rule_cutoff() {
        let samples: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let opts = TailOptions {
            stability: 0.0,
            ..TailOptions::default()
        };
        let fit = select_bmin(&samples, &opts).unwrap();
        assert_eq!(fit.b_quantile, 91.0);
    }

    #[test]
    fn power_law_stability_reaches_smallest_sample() {
        // Order statistics whose strict-exceedance CCDF equals b^-2 exactly.
        let samples = exact_sample(400, |p| p.powf(-0.5));
        let fit = select_bmin(&samples, &TailOptions::default()).unwrap();
        assert_eq!(fit.b_min, samples[0], "{:?}", fit);
        assert!((fit.alpha - 2.0).abs() < 1e-9);
    }

    /// Sorted sample whose strict-exceedance CCDF matches `inv_ccdf` at every point.
    fn exact_sample(n: usize, inv_ccdf: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut s: Vec<f64> = (0..n - 1).map(|i| inv_ccdf((n - i - 1) as f64 / n as f64)).collect();
        s.push(2.0 * s[n - 2]);
        s
    }

    #[test]
    fn slope_break_stops_the_descent() {
        // Slope 3 above b = 10, slope 0.1 below.
        let q = |p: f64| {
            let slope = if p <= 0.2 { 3.0 } else { 0.1 };
            10.0 * (p / 0.2).powf(-1.0 / slope)
        };
        let samples = exact_sample(1000, q);
        let opts = TailOptions {
            q_b: 0.85,
            ..TailOptions::default()
        };
        let fit = select_bmin(&samples, &opts).unwrap();
        let break_rank = samples.partition_point(|&v| v < 10.0 - 1e-9);
        let one_step_below = samples[break_rank - opts.stability_step];
        assert!(fit.b_min >= one_step_below && fit.b_min <= 10.0 + 1e-9, "{:?}", fit);
    }

    #[test]
    fn large_pareto_sample_recovers_index() {
        let fit = select_bmin(&pareto(2.0, 100_000, 11), &TailOptions::default()).unwrap();
        assert!((1.9..=2.1).contains(&fit.alpha), "{}", fit.alpha);
    }

    #[test]
    fn identical_samples_give_zero_width_interval() {
        let mean = |s: &[f64]| Some(s.iter().sum::<f64>() / s.len() as f64);
        let ci = bootstrap_ci(&[2.5; 40], mean, 300, 0.95, 1).unwrap();
        assert_eq!((ci.lo, ci.hi, ci.skipped), (2.5, 2.5, 300));
    }

    #[test]
    fn bootstrap_is_deterministic_and_contains_estimate() {
        let s = pareto(2.0, 2000, 5);
        let opts = TailOptions {
            bootstrap: 200,
            ..TailOptions::default()
        };
        let (fit, ci) = fit_tail(&s, &opts, 9).unwrap();
        let (_, ci2) = fit_tail(&s, &opts, 9).unwrap();
        assert_eq!(ci, ci2);
        assert!(ci.lo <= fit.alpha && fit.alpha <= ci.hi);
    }

    #[test]
    fn theoretical_index_examples() {
        assert_eq!(theoretical_index(1.0, 0.5), Ok(2.0));
        assert_eq!(theoretical_index(2.0, 2.0), Ok(1.0));
        assert_eq!(
            theoretical_index(1.0, -0.3),
            Err(TailError::NoGrowthChannel { gamma: -0.3 })
        );
        let (a, b) = (theoretical_index(0.7, 0.3).unwrap(), theoretical_index(7.0, 3.0).unwrap());
        assert!((a - b).abs() < 1e-15);
    }

    fn inputs() -> TruncationInputs {
        TruncationInputs {
            a_star: 0.0,
            rho: 0.5,
            kappa: 1.0,
            m_c: 1.0,
            horizon: 1.0,
            min_dwell: 1.0,
            x0_norm: 2.0,
            f_sup: 0.0,
        }
    }

    #[test]
    fn truncation_examples() {
        let zero = TruncationInputs {
            x0_norm: 0.0,
            a_star: 0.7,
            ..inputs()
        };
        assert_eq!(truncation_bound(&zero).unwrap().m_t, 0.0);
        let b = truncation_bound(&inputs()).unwrap();
        assert_eq!((b.rounds, b.m_t), (1, 2.0));
        let many = TruncationInputs {
            horizon: 10.0,
            min_dwell: 0.3,
            rho: 0.1,
            ..inputs()
        };
        assert!((truncation_bound(&many).unwrap().m_t - 2.0).abs() < 1e-15);
        let bad = TruncationInputs { rho: 1.0, ..inputs() };
        assert_eq!(truncation_bound(&bad), Err(TailError::TruncationUnavailable { rho: 1.0 }));
    }

    #[test]
    fn truncation_matches_direct_iteration() {
        let inp = TruncationInputs {
            a_star: 0.4,
            rho: 0.6,
            kappa: 0.8,
            m_c: 1.3,
            horizon: 2.0,
            min_dwell: 0.5,
            x0_norm: 0.7,
            f_sup: 1.1,
        };
        let g = (inp.a_star * inp.horizon).exp();
        let mut u = inp.x0_norm;
        let mut best = u;
        for _ in 0..4 {
            let peak = g * (u + inp.horizon * inp.f_sup);
            best = f64::max(best, peak);
            u = inp.rho * peak + inp.m_c * inp.f_sup / inp.kappa;
        }
        let b = truncation_bound(&inp).unwrap();
        assert_eq!(b.rounds, 4);
        assert!((b.m_t - best).abs() <= 1e-12 * best);
    }

    proptest::proptest! {
        #[test]
        fn ccdf_is_monotone_and_bounded(v in proptest::collection::vec(0.0f64..100.0, 1..200)) {
            let pts = empirical_ccdf(&v).unwrap();
            proptest::prop_assert_eq!(pts.last().unwrap().prob, 0.0);
            for w in pts.windows(2) {
                proptest::prop_assert!(w[1].prob <= w[0].prob);
                proptest::prop_assert!(w[0].value < w[1].value);
            }
            proptest::prop_assert!(pts.iter().all(|p| (0.0..=1.0).contains(&p.prob)));
        }

        #[test]
        fn exact_power_law_slope_is_recovered(alpha in 0.3f64..5.0, c in 0.01f64..1.0) {
            let pts: Vec<(f64, f64)> = (1..40).map(|i| {
                let b = 1.0 + 0.5 * i as f64;
                (b, c * b.powf(-alpha))
            }).collect();
            let (a, _, _) = fit_slope(&pts, 0.0).unwrap();
            proptest::prop_assert!((a - alpha).abs() < 1e-10 * (1.0 + alpha));
        }
    }
}
