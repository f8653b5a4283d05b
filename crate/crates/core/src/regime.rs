//! Continuous-time Markov regime paths and dwell statistics.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Matrix};
use crate::rng;

#[derive(Debug, Error)]
pub enum RegimeError {
    #[error("invalid generator: {0}")]
    Parameter(String),
    #[error("generator is not irreducible: {0}")]
    Reducible(String),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
}

pub type Result<T> = std::result::Result<T, RegimeError>;

/// Regime id of the favorable state in two-state presets.
pub const STATE_S: usize = 0;
/// Regime id of the unfavorable state in two-state presets.
pub const STATE_U: usize = 1;

/// CTMC generator given by its off-diagonal rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub labels: Vec<String>,
    /// `rates[i][j]` is `q_ij` for `i != j`; diagonal entries are ignored.
    pub rates: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
}

impl GeneratorSpec {
    /// Two states `S` and `U` with rates `λ_SU` and `λ_US`.
    pub fn two_state(lambda_su: f64, lambda_us: f64, initial: [f64; 2]) -> Result<Self> {
        let spec = Self {
            labels: vec!["S".into(), "U".into()],
            rates: vec![vec![0.0, lambda_su], vec![lambda_us, 0.0]],
            initial: initial.to_vec(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn states(&self) -> usize {
        self.labels.len()
    }

    /// Exit rate `λ_i = Σ_{j≠i} q_ij`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        self.rates[i]
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, q)| q)
            .sum()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    /// Full generator matrix with `q_ii = −λ_i`.
    pub fn generator(&self) -> Result<Matrix> {
        let m = self.states();
        let mut q = Matrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                q[(i, j)] = if i == j { -self.exit_rate(i) } else { self.rates[i][j] };
            }
        }
        Ok(q)
    }

    /// Structural checks. Absorbing states (`λ_i = 0`) are allowed here;
    /// [`GeneratorSpec::validate_ergodic`] rejects them.
    pub fn validate(&self) -> Result<()> {
        let m = self.states();
        if m == 0 {
            return Err(RegimeError::Parameter("no states".into()));
        }
        if self.rates.len() != m || self.rates.iter().any(|r| r.len() != m) {
            return Err(RegimeError::Parameter(format!("rate table must be {m}x{m}")));
        }
        if self.rates.iter().flatten().any(|q| !q.is_finite() || *q < 0.0) {
            return Err(RegimeError::Parameter("rates must be finite and nonnegative".into()));
        }
        if self.initial.len() != m || self.initial.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(RegimeError::Parameter("initial distribution malformed".into()));
        }
        let total: f64 = self.initial.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(RegimeError::Parameter(format!(
                "initial distribution sums to {total}"
            )));
        }
        Ok(())
    }

    /// Structural checks plus `λ_i > 0` for every state.
    pub fn validate_ergodic(&self) -> Result<()> {
        self.validate()?;
        for i in 0..self.states() {
            if self.exit_rate(i) <= 0.0 {
                return Err(RegimeError::Parameter(format!(
                    "state {} has zero exit rate",
                    self.label(i)
                )));
            }
        }
        Ok(())
    }
}

/// One realization of the regime process on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimePath {
    pub jump_times: Vec<f64>,
    /// One more entry than `jump_times`; `states[0]` is `z(0)`.
    pub states: Vec<usize>,
    pub horizon: f64,
}

/// A maximal constant-regime piece of a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub state: usize,
    /// The segment was cut by the horizon rather than by a jump.
    pub censored: bool,
}

impl RegimePath {
    /// Path that stays in `state` for the whole horizon.
    pub fn constant(state: usize, horizon: f64) -> Self {
        Self {
            jump_times: Vec::new(),
            states: vec![state],
            horizon,
        }
    }

    pub fn state_at(&self, t: f64) -> usize {
        let idx = self.jump_times.partition_point(|&s| s <= t);
        self.states[idx]
    }

    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::with_capacity(self.states.len());
        let mut start = 0.0;
        for (i, &state) in self.states.iter().enumerate() {
            let (end, censored) = match self.jump_times.get(i) {
                Some(&t) => (t, false),
                None => (self.horizon, true),
            };
            out.push(Segment {
                start,
                end,
                state,
                censored,
            });
            start = end;
        }
        out
    }

    /// Total time spent in `state`.
    pub fn occupancy(&self, state: usize) -> f64 {
        self.segments()
            .iter()
            .filter(|s| s.state == state)
            .map(|s| s.end - s.start)
            .sum()
    }

    /// `jump_time,state` rows; the first row is `0,z(0)`.
    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut out = String::from("jump_time,state\n");
        let name = |s: usize| labels.get(s).cloned().unwrap_or_else(|| s.to_string());
        out.push_str(&format!("{:.16e},{}\n", 0.0, name(self.states[0])));
        for (t, &s) in self.jump_times.iter().zip(&self.states[1..]) {
            out.push_str(&format!("{t:.16e},{}\n", name(s)));
        }
        out
    }
}

/// Jump-chain sampling on `[0, T]`.
pub fn sample_path<R: Rng + ?Sized>(gen: &GeneratorSpec, horizon: f64, rng: &mut R) -> Result<RegimePath> {
    gen.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(RegimeError::Parameter(format!("horizon {horizon}")));
    }
    let mut state = draw_categorical(&gen.initial, rng);
    let mut states = vec![state];
    let mut jump_times = Vec::new();
    let mut t = 0.0;
    loop {
        let exit = gen.exit_rate(state);
        if exit <= 0.0 {
            break;
        }
        let dwell: f64 = Exp::new(exit)
            .map_err(|e| RegimeError::Parameter(e.to_string()))?
            .sample(rng);
        t += dwell;
        if t >= horizon {
            break;
        }
        let weights: Vec<f64> = gen.rates[state]
            .iter()
            .enumerate()
            .map(|(j, &q)| if j == state { 0.0 } else { q / exit })
            .collect();
        state = draw_categorical(&weights, rng);
        jump_times.push(t);
        states.push(state);
    }
    Ok(RegimePath {
        jump_times,
        states,
        horizon,
    })
}

/// Path for trajectory `index`, drawn from its regime stream.
pub fn sample_path_seeded(gen: &GeneratorSpec, horizon: f64, master_seed: u64, index: u64) -> Result<RegimePath> {
    let mut r = rng::trajectory_rng(master_seed, index, rng::REGIME_STREAM);
    sample_path(gen, horizon, &mut r)
}

fn draw_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let total: f64 = probs.iter().sum();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = i;
        acc += p / total;
        if u < acc {
            return i;
        }
    }
    last
}

/// Solves `π Q = 0`, `Σ π = 1` for an irreducible generator.
pub fn stationary_distribution(gen: &GeneratorSpec) -> Result<Vec<f64>> {
    gen.validate()?;
    let m = gen.states();
    // Every state must reach every other one.
    for src in 0..m {
        let mut seen = vec![false; m];
        seen[src] = true;
        let mut stack = vec![src];
        while let Some(i) = stack.pop() {
            for j in 0..m {
                if j != i && gen.rates[i][j] > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        let missing: Vec<&str> = (0..m).filter(|&j| !seen[j]).map(|j| gen.label(j)).collect();
        if !missing.is_empty() {
            return Err(RegimeError::Reducible(format!(
                "from {} the states {} are unreachable",
                gen.label(src),
                missing.join(", ")
            )));
        }
    }
    if m == 1 {
        return Ok(vec![1.0]);
    }
    // Qᵀ πᵀ = 0 with the last balance equation replaced by normalization.
    let q = gen.generator()?;
    let mut a = q.transpose();
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut rhs = vec![0.0; m];
    rhs[m - 1] = 1.0;
    Ok(linalg::solve(&a, &rhs)?)
}

/// Exit-rate estimate for one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellRateEstimate {
    pub state: usize,
    pub label: String,
    pub completed_dwells: usize,
    pub total_time: f64,
    /// `None` when the state has no completed dwell.
    pub rate: Option<f64>,
    pub std_err: Option<f64>,
}

/// Durations of all completed (jump-terminated) dwells in `state`.
pub fn completed_dwells(paths: &[RegimePath], state: usize) -> Vec<f64> {
    paths
        .iter()
        .flat_map(|p| p.segments())
        .filter(|s| s.state == state && !s.censored)
        .map(|s| s.end - s.start)
        .collect()
}

/// Dwell tally `(count, total time)` of completed dwells in each state.
pub fn dwell_tally(path: &RegimePath, states: usize) -> Vec<(usize, f64)> {
    let mut tally = vec![(0usize, 0.0f64); states];
    for s in path.segments() {
        if !s.censored && s.state < states {
            tally[s.state].0 += 1;
            tally[s.state].1 += s.end - s.start;
        }
    }
    tally
}

/// Exit-rate estimates from pooled `(count, time)` tallies.
pub fn rates_from_tally(tally: &[(usize, f64)], labels: &[String]) -> Vec<DwellRateEstimate> {
    tally
        .iter()
        .enumerate()
        .map(|(state, &(count, total))| {
            let rate = (count > 0 && total > 0.0).then(|| count as f64 / total);
            DwellRateEstimate {
                state,
                label: labels.get(state).cloned().unwrap_or_else(|| state.to_string()),
                completed_dwells: count,
                total_time: total,
                rate,
                std_err: rate.map(|r| r / (count as f64).sqrt()),
            }
        })
        .collect()
}

/// Maximum-likelihood exit rates, excluding the censored final dwell of each path.
pub fn estimate_dwell_rates(paths: &[RegimePath], labels: &[String]) -> Vec<DwellRateEstimate> {
    let states = labels
        .len()
        .max(paths.iter().flat_map(|p| p.states.iter()).map(|s| s + 1).max().unwrap_or(0));
    let mut pooled = vec![(0usize, 0.0f64); states];
    for p in paths {
        for (acc, (c, t)) in pooled.iter_mut().zip(dwell_tally(p, states)) {
            acc.0 += c;
            acc.1 += t;
        }
    }
    rates_from_tally(&pooled, labels)
}

/// Kolmogorov–Smirnov distance between the sample CDF and `Exp(rate)`.
pub fn ks_distance_exponential(samples: &[f64], rate: f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = 1.0 - (-rate * x).exp();
            let above = (i + 1) as f64 / n - cdf;
            let below = cdf - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}
