//! Cross-scenario comparison on paired seeds.

use serde::{Deserialize, Serialize};

use super::{EnsembleResult, ExperimentError, Preset, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareOptions {
    /// Binomial standard errors tolerated in the CCDF dominance check.
    pub noise_sigmas: f64,
    /// Largest median-band gap, relative to the reference peak median.
    pub typical_tolerance: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            noise_sigmas: 2.0,
            typical_tolerance: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub label: String,
    pub preset: Preset,
    pub config_hash: String,
    pub alpha_hat: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub alpha_th: Option<f64>,
    pub b_min: Option<f64>,
    pub median_burst: f64,
    pub max_burst: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceCheck {
    pub scenario: String,
    pub reference: String,
    pub b_min: f64,
    pub points: usize,
    pub violations: usize,
    /// Largest `P̂_s(b) − P̂_ref(b)` over the checked points.
    pub max_excess: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalCheck {
    pub scenario: String,
    pub reference: String,
    pub max_median_gap: f64,
    pub tolerance: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reference: String,
    pub scenarios: Vec<ScenarioRow>,
    pub dominance: Vec<DominanceCheck>,
    pub typical: Vec<TypicalCheck>,
}

impl Comparison {
    pub fn all_hold(&self) -> bool {
        self.dominance.iter().all(|d| d.holds) && self.typical.iter().all(|t| t.holds)
    }
}

fn exceed_fraction(sorted: &[f64], b: f64) -> f64 {
    (sorted.len() - sorted.partition_point(|&v| v <= b)) as f64 / sorted.len() as f64
}

/// Checks `P̂_s(b) ≤ P̂_ref(b) + z·se_ref(b)` at every distinct sample value `b ≥ b_min`.
pub fn ccdf_dominance(samples: &[f64], reference: &[f64], b_min: f64, noise_sigmas: f64) -> (usize, usize, f64) {
    let mut s = samples.to_vec();
    let mut r = reference.to_vec();
    s.sort_by(f64::total_cmp);
    r.sort_by(f64::total_cmp);
    let mut points: Vec<f64> = s.iter().chain(&r).copied().filter(|&b| b >= b_min).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    if s.is_empty() || r.is_empty() {
        return (0, 0, 0.0);
    }
    let mut violations = 0;
    let mut max_excess = f64::NEG_INFINITY;
    for &b in &points {
        let (ps, pr) = (exceed_fraction(&s, b), exceed_fraction(&r, b));
        let se = (pr * (1.0 - pr) / r.len() as f64).sqrt();
        max_excess = max_excess.max(ps - pr);
        if ps > pr + noise_sigmas * se {
            violations += 1;
        }
    }
    (points.len(), violations, if points.is_empty() { 0.0 } else { max_excess })
}

fn check_shared(a: &EnsembleResult, b: &EnsembleResult) -> Result<()> {
    let (x, y) = (&a.config, &b.config);
    let mut diffs = Vec::new();
    if x.horizon != y.horizon {
        diffs.push("horizon");
    }
    if x.network != y.network {
        diffs.push("network/forcing");
    }
    if x.regimes != y.regimes {
        diffs.push("regime rates");
    }
    if x.seed != y.seed {
        diffs.push("seed");
    }
    if x.ensemble != y.ensemble {
        diffs.push("ensemble size");
    }
    if x.solver.output_points != y.solver.output_points {
        diffs.push("output grid");
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(ExperimentError::Comparison(format!(
            "{} and {} differ in {}",
            x.name,
            y.name,
            diffs.join(", ")
        )))
    }
}

/// Compares labelled ensembles against the first policy-free memory-ON scenario (or the first one).
pub fn compare_scenarios(items: &[(String, &EnsembleResult)], opts: &CompareOptions) -> Result<Comparison> {
    let Some(first) = items.first() else {
        return Err(ExperimentError::Comparison("nothing to compare".into()));
    };
    for (_, r) in &items[1..] {
        check_shared(first.1, r)?;
    }
    let ref_idx = items.iter().position(|(_, r)| r.report.preset == Preset::Plain).unwrap_or(0);
    let (ref_label, reference) = (&items[ref_idx].0, items[ref_idx].1);
    let ref_bursts = reference.raw.bursts();
    let b_min = reference.report.tail.as_ref().map_or(f64::NEG_INFINITY, |t| t.b_min);
    let ref_median = &reference.raw.bands.median;
    let ref_peak = ref_median.iter().copied().fold(0.0f64, f64::max);

    let mut cmp = Comparison {
        reference: ref_label.clone(),
        scenarios: Vec::new(),
        dominance: Vec::new(),
        typical: Vec::new(),
    };
    for (i, (label, r)) in items.iter().enumerate() {
        let tail = r.report.tail.as_ref();
        cmp.scenarios.push(ScenarioRow {
            label: label.clone(),
            preset: r.report.preset,
            config_hash: r.report.config_hash.clone(),
            alpha_hat: tail.map(|t| t.alpha_hat),
            ci_lo: tail.map(|t| t.ci.lo),
            ci_hi: tail.map(|t| t.ci.hi),
            alpha_th: tail.and_then(|t| t.alpha_th),
            b_min: tail.map(|t| t.b_min),
            median_burst: r.report.bursts.median,
            max_burst: r.report.bursts.max,
        });
        if i == ref_idx {
            continue;
        }
        let (points, violations, max_excess) = ccdf_dominance(&r.raw.bursts(), &ref_bursts, b_min, opts.noise_sigmas);
        cmp.dominance.push(DominanceCheck {
            scenario: label.clone(),
            reference: ref_label.clone(),
            b_min,
            points,
            violations,
            max_excess,
            holds: violations == 0,
        });
        if r.report.preset == Preset::Dddas || r.report.preset == reference.report.preset {
            let gap = r
                .raw
                .bands
                .median
                .iter()
                .zip(ref_median)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            let rel = if ref_peak > 0.0 { gap / ref_peak } else { gap };
            cmp.typical.push(TypicalCheck {
                scenario: label.clone(),
                reference: ref_label.clone(),
                max_median_gap: rel,
                tolerance: opts.typical_tolerance,
                holds: rel <= opts.typical_tolerance,
            });
        }
    }
    Ok(cmp)
}
