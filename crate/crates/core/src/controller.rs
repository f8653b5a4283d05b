//! Threshold-and-hysteresis mode controller.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Mode;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("invalid policy: {0}")]
    Parameter(String),
}

/// Thresholds, minimum dwell and release behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub enabled: bool,
    /// `(τ_L^(1), τ_L^(2))`.
    pub tau_l: [f64; 2],
    /// `(τ_S^(1), τ_S^(2))`.
    pub tau_s: [f64; 2],
    pub min_dwell: f64,
    /// Release straight to the demanded level instead of one level per decision.
    #[serde(default)]
    pub direct_release: bool,
}

impl PolicyConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            tau_l: [f64::INFINITY, f64::INFINITY],
            tau_s: [f64::INFINITY, f64::INFINITY],
            min_dwell: 1.0,
            direct_release: false,
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        let ordered = |p: [f64; 2]| p[0] < p[1] && !p[0].is_nan();
        if self.enabled && !(ordered(self.tau_l) && ordered(self.tau_s)) {
            return Err(ControllerError::Parameter(format!(
                "thresholds must satisfy lower < upper, got L {:?}, S {:?}",
                self.tau_l, self.tau_s
            )));
        }
        if !(self.min_dwell > 0.0 && self.min_dwell.is_finite()) {
            return Err(ControllerError::Parameter(format!(
                "minimum dwell {} must be positive",
                self.min_dwell
            )));
        }
        Ok(())
    }

    /// Level demanded by the two threshold rules (maximum of the two).
    pub fn demanded(&self, l: f64, s: f64) -> (Mode, Trigger) {
        let level = |v: f64, tau: [f64; 2]| {
            if v > tau[1] {
                2
            } else if v > tau[0] {
                1
            } else {
                0
            }
        };
        let (dl, ds) = (level(l, self.tau_l), level(s, self.tau_s));
        let trigger = if dl >= ds { Trigger::L } else { Trigger::S };
        (Mode::from_level(dl.max(ds)).unwrap_or(Mode::Mitigate), trigger)
    }

    /// Both indicators strictly below their lower thresholds.
    pub fn release_allowed(&self, l: f64, s: f64) -> bool {
        l < self.tau_l[0] && s < self.tau_s[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trigger {
    L,
    S,
    #[serde(rename = "release")]
    Release,
}

impl Trigger {
    pub fn as_str(self) -> &'static str {
        match self {
            Trigger::L => "L",
            Trigger::S => "S",
            Trigger::Release => "release",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub mode: Mode,
    /// Time of the last mode change; `-inf` before the first one.
    pub t_last: f64,
}

impl Default for ControllerState {
    fn default() -> Self {
        Self {
            mode: Mode::Normal,
            t_last: f64::NEG_INFINITY,
        }
    }
}

/// One logged mode change, with the indicator values that caused it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeChange {
    pub t: f64,
    pub old: Mode,
    pub new: Mode,
    pub trigger: Trigger,
    pub l: f64,
    pub s: f64,
}

/// Applies the mode rule at time `t`.
pub fn decide(
    state: ControllerState,
    t: f64,
    l: f64,
    s: f64,
    cfg: &PolicyConfig,
) -> (ControllerState, Option<ModeChange>) {
    if !cfg.enabled || t - state.t_last < cfg.min_dwell {
        return (state, None);
    }
    let (desired, trigger) = cfg.demanded(l, s);
    let (new, trigger) = if desired > state.mode {
        (desired, trigger)
    } else if desired < state.mode && cfg.release_allowed(l, s) {
        let next = if cfg.direct_release {
            desired
        } else {
            Mode::from_level(state.mode.level() - 1).unwrap_or(Mode::Normal)
        };
        (next, Trigger::Release)
    } else {
        return (state, None);
    };
    let change = ModeChange {
        t,
        old: state.mode,
        new,
        trigger,
        l,
        s,
    };
    (ControllerState { mode: new, t_last: t }, Some(change))
}

/// Up-crossings of `threshold` by `trace` on `[t0, t1]`.
///
/// The trace is scanned on `samples` equal subintervals; each bracketed
/// crossing is refined by bisection to width `tol`. The returned time is the
/// right end of the final bracket, where the trace is above the threshold.
pub fn crossing_times<F: Fn(f64) -> f64>(
    trace: F,
    t0: f64,
    t1: f64,
    threshold: f64,
    tol: f64,
    samples: usize,
) -> Vec<f64> {
    let samples = samples.max(1);
    let mut out = Vec::new();
    let mut prev_t = t0;
    let mut prev_v = trace(t0);
    for i in 1..=samples {
        let t = if i == samples {
            t1
        } else {
            t0 + (t1 - t0) * i as f64 / samples as f64
        };
        let v = trace(t);
        if prev_v <= threshold && v > threshold {
            let (mut lo, mut hi) = (prev_t, t);
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                if trace(mid) > threshold {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            out.push(hi);
        }
        prev_t = t;
        prev_v = v;
    }
    out
}

/// Hygiene counts over an event log.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HygieneReport {
    /// Consecutive changes closer than the minimum dwell.
    pub chattering: usize,
    /// Decreases by more than one level (when single-step release is
    /// configured) or without both indicators below the lower thresholds.
    pub release: usize,
}

pub fn audit_event_log(log: &[ModeChange], cfg: &PolicyConfig) -> HygieneReport {
    let mut report = HygieneReport::default();
    for pair in log.windows(2) {
        if pair[1].t - pair[0].t < cfg.min_dwell {
            report.chattering += 1;
        }
    }
    for e in log.iter().filter(|e| e.new < e.old) {
        let too_far = !cfg.direct_release && e.old.level() - e.new.level() > 1;
        if too_far || !cfg.release_allowed(e.l, e.s) {
            report.release += 1;
        }
    }
    report
}

/// `t,old_mode,new_mode,trigger` rows.
pub fn event_log_csv(log: &[ModeChange]) -> String {
    let mut out = String::from("t,old_mode,new_mode,trigger\n");
    for e in log {
        out.push_str(&format!(
            "{:.16e},{},{},{}\n",
            e.t,
            e.old.level(),
            e.new.level(),
            e.trigger.as_str()
        ));
    }
    out
}
