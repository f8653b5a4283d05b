//! Result directories: CSV and JSON outputs plus a checksummed manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Bands, Comparison, EnsembleResult, ExperimentError, KernelFit, RawOutputs, Result, ScenarioConfig, SweepTable, TrajectorySummary};
use crate::estimators::DwellInterval;
use crate::integrator::Trajectory;
use crate::model::Mode;
use crate::regime::RegimePath;
use crate::soe_kernel::{default_check_times, evaluate_soe, KernelTarget};
use crate::tailfit::empirical_ccdf;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub toolkit_version: String,
    pub kind: String,
    pub config_hashes: Vec<String>,
    pub seed: Option<u64>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub complete: bool,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    /// Files whose current checksum differs from the recorded one.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for f in &self.files {
            let bytes = fs::read(dir.join(&f.name)).map_err(|e| io_err(&dir.join(&f.name), e))?;
            if hex::encode(Sha256::digest(&bytes)) != f.sha256 {
                bad.push(f.name.clone());
            }
        }
        Ok(bad)
    }
}

pub const MANIFEST: &str = "manifest.json";

fn io_err(path: &Path, source: std::io::Error) -> ExperimentError {
    ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn f17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Single-writer output directory that records every file it writes.
struct OutputDir {
    dir: PathBuf,
    manifest: Manifest,
}

impl OutputDir {
    fn create(dir: &Path, kind: &str, config_hashes: Vec<String>, seed: Option<u64>) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let out = Self {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
                kind: kind.to_string(),
                config_hashes,
                seed,
                started_unix: now(),
                finished_unix: None,
                complete: false,
                files: Vec::new(),
            },
        };
        out.write_manifest()?;
        Ok(out)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.manifest.files.push(ManifestEntry {
            name: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn write_csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fmt_err = |e: csv::Error| ExperimentError::Format {
            path: name.to_string(),
            message: e.to_string(),
        };
        w.write_record(header).map_err(fmt_err)?;
        for row in rows {
            w.write_record(&row).map_err(fmt_err)?;
        }
        let bytes = w.into_inner().map_err(|e| ExperimentError::Format {
            path: name.to_string(),
            message: e.to_string(),
        })?;
        self.write(name, &bytes)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| ExperimentError::Format {
            path: name.to_string(),
            message: e.to_string(),
        })?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn write_manifest(&self) -> Result<()> {
        let tmp = self.dir.join(format!("{MANIFEST}.tmp"));
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| ExperimentError::Format {
            path: MANIFEST.into(),
            message: e.to_string(),
        })?;
        fs::write(&tmp, text + "\n").map_err(|e| io_err(&tmp, e))?;
        let path = self.dir.join(MANIFEST);
        fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))
    }

    fn finish(mut self) -> Result<Manifest> {
        self.manifest.complete = true;
        self.manifest.finished_unix = Some(now());
        self.write_manifest()?;
        Ok(self.manifest)
    }
}

const BURSTS_HEADER: [&str; 17] = [
    "index",
    "error",
    "burst",
    "max_norm",
    "energy_violation",
    "energy_tolerance",
    "pathwise_ok",
    "chattering",
    "release",
    "mode_changes",
    "max_mode",
    "accepted_steps",
    "rejected_steps",
    "dwells_s",
    "time_s",
    "dwells_u",
    "time_u",
];

fn ccdf_rows(samples: &[f64]) -> Vec<Vec<String>> {
    empirical_ccdf(samples)
        .map(|pts| {
            pts.iter()
                .map(|p| {
                    vec![
                        f17(p.value),
                        f17(p.prob),
                        p.exceedances.to_string(),
                        f17(p.value.log10()),
                        f17(p.prob.log10()),
                    ]
                })
                .collect()
        })
        .unwrap_or_default()
}

const CCDF_HEADER: [&str; 5] = ["b", "ccdf", "exceedances", "log10_b", "log10_ccdf"];

/// Writes an ensemble directory. `config_text` is stored verbatim when given.
pub fn persist_ensemble(dir: &Path, result: &EnsembleResult, config_text: Option<&str>) -> Result<Manifest> {
    let cfg = &result.config;
    let mut out = OutputDir::create(dir, "ensemble", vec![cfg.hash()], Some(cfg.seed))?;
    let effective = cfg.to_toml_string()?;
    out.write("config.toml", config_text.unwrap_or(&effective).as_bytes())?;
    out.write("effective_config.toml", effective.as_bytes())?;
    let raw = &result.raw;
    out.write_csv(
        "bursts.csv",
        &BURSTS_HEADER,
        raw.trajectories.iter().map(|t| {
            vec![
                t.index.to_string(),
                t.error.clone(),
                f17(t.burst),
                f17(t.max_norm),
                f17(t.energy_violation),
                f17(t.energy_tolerance),
                t.pathwise_ok.to_string(),
                t.chattering.to_string(),
                t.release.to_string(),
                t.mode_changes.to_string(),
                t.max_mode.to_string(),
                t.accepted_steps.to_string(),
                t.rejected_steps.to_string(),
                t.dwells_s.to_string(),
                f17(t.time_s),
                t.dwells_u.to_string(),
                f17(t.time_u),
            ]
        }),
    )?;
    let b = &raw.bands;
    out.write_csv(
        "bands.csv",
        &["t", "mean", "median", "q90", "q99"],
        (0..b.t.len()).map(|i| vec![f17(b.t[i]), f17(b.mean[i]), f17(b.median[i]), f17(b.q90[i]), f17(b.q99[i])]),
    )?;
    out.write_csv(
        "dwell.csv",
        &["trajectory", "t0", "t1", "regime", "mode", "norm0", "norm1", "growth_rate"],
        raw.dwells.iter().map(|d| {
            vec![
                d.trajectory.to_string(),
                f17(d.t0),
                f17(d.t1),
                d.regime.to_string(),
                d.mode.level().to_string(),
                f17(d.norm0),
                f17(d.norm1),
                d.growth_rate().map(f17).unwrap_or_default(),
            ]
        }),
    )?;
    out.write_csv("cone.csv", &["rate"], raw.cone_rates.iter().map(|r| vec![f17(*r)]))?;
    out.write_csv("ccdf.csv", &CCDF_HEADER, ccdf_rows(&raw.bursts()))?;
    out.write_json("report.json", &result.report)?;
    let mut log = format!("scenario {} config {}\n", cfg.name, cfg.hash());
    let failures = result.report.failures();
    if failures.is_empty() {
        log.push_str("all audits passed\n");
    }
    for f in failures {
        log.push_str(&format!("FAIL {f}\n"));
    }
    for (i, e) in &result.report.excluded {
        log.push_str(&format!("EXCLUDED {i}: {e}\n"));
    }
    out.write("audit.log", log.as_bytes())?;
    out.finish()
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn read_rows(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| ExperimentError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    r.records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| ExperimentError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ExperimentError::Format {
            path: path.display().to_string(),
            message: format!("bad field {i} in line {}", rec.position().map_or(0, |p| p.line())),
        })
}

/// Reads the effective config and raw outputs back from an ensemble directory.
pub fn load_raw(dir: &Path) -> Result<(ScenarioConfig, RawOutputs)> {
    let cfg_path = dir.join("effective_config.toml");
    let text = fs::read_to_string(&cfg_path).map_err(|e| io_err(&cfg_path, e))?;
    let cfg = ScenarioConfig::from_toml_str(&text)?;

    let p = dir.join("bursts.csv");
    let mut trajectories = Vec::new();
    for rec in read_rows(&p)? {
        trajectories.push(TrajectorySummary {
            index: field(&p, &rec, 0)?,
            error: rec.get(1).unwrap_or_default().to_string(),
            burst: field(&p, &rec, 2)?,
            max_norm: field(&p, &rec, 3)?,
            energy_violation: field(&p, &rec, 4)?,
            energy_tolerance: field(&p, &rec, 5)?,
            pathwise_ok: field(&p, &rec, 6)?,
            chattering: field(&p, &rec, 7)?,
            release: field(&p, &rec, 8)?,
            mode_changes: field(&p, &rec, 9)?,
            max_mode: field(&p, &rec, 10)?,
            accepted_steps: field(&p, &rec, 11)?,
            rejected_steps: field(&p, &rec, 12)?,
            dwells_s: field(&p, &rec, 13)?,
            time_s: field(&p, &rec, 14)?,
            dwells_u: field(&p, &rec, 15)?,
            time_u: field(&p, &rec, 16)?,
        });
    }

    let p = dir.join("bands.csv");
    let mut bands = Bands::default();
    for rec in read_rows(&p)? {
        bands.t.push(field(&p, &rec, 0)?);
        bands.mean.push(field(&p, &rec, 1)?);
        bands.median.push(field(&p, &rec, 2)?);
        bands.q90.push(field(&p, &rec, 3)?);
        bands.q99.push(field(&p, &rec, 4)?);
    }

    let p = dir.join("dwell.csv");
    let mut dwells = Vec::new();
    for rec in read_rows(&p)? {
        let level: u8 = field(&p, &rec, 4)?;
        dwells.push(DwellInterval {
            trajectory: field(&p, &rec, 0)?,
            t0: field(&p, &rec, 1)?,
            t1: field(&p, &rec, 2)?,
            regime: field(&p, &rec, 3)?,
            mode: Mode::from_level(level).unwrap_or(Mode::Normal),
            norm0: field(&p, &rec, 5)?,
            norm1: field(&p, &rec, 6)?,
        });
    }

    let p = dir.join("cone.csv");
    let cone_rates = read_rows(&p)?
        .iter()
        .map(|rec| field(&p, rec, 0))
        .collect::<Result<Vec<f64>>>()?;

    Ok((
        cfg,
        RawOutputs {
            trajectories,
            bands,
            dwells,
            cone_rates,
        },
    ))
}

/// Writes the comparison report and the overlaid CCDF file.
pub fn persist_comparison(dir: &Path, cmp: &Comparison, bursts: &[(String, Vec<f64>)]) -> Result<Manifest> {
    let hashes = cmp.scenarios.iter().map(|s| s.config_hash.clone()).collect();
    let mut out = OutputDir::create(dir, "comparison", hashes, None)?;
    out.write_json("comparison.json", cmp)?;
    let mut rows = Vec::new();
    for (label, samples) in bursts {
        for mut r in ccdf_rows(samples) {
            r.insert(0, label.clone());
            rows.push(r);
        }
    }
    let mut header = vec!["scenario"];
    header.extend(CCDF_HEADER);
    out.write_csv("ccdf_overlay.csv", &header, rows)?;
    out.finish()
}

/// Writes a sweep table as CSV and JSON.
pub fn persist_sweep(dir: &Path, table: &SweepTable) -> Result<Manifest> {
    let mut out = OutputDir::create(dir, "sweep", vec![table.base_hash.clone()], Some(table.seed))?;
    out.write_json("sweep.json", table)?;
    let opt = |v: Option<f64>| v.map(f17).unwrap_or_default();
    out.write_csv(
        "sweep.csv",
        &[
            "value",
            "alpha_hat",
            "ci_lo",
            "ci_hi",
            "alpha_th",
            "lambda_u_hat",
            "gamma_op",
            "gamma_hybrid",
            "eps_rel",
            "intercept",
            "max_burst",
            "intervention_rate",
            "band_distortion",
            "error",
        ],
        table.rows.iter().map(|r| {
            vec![
                f17(r.value),
                opt(r.alpha_hat),
                opt(r.ci_lo),
                opt(r.ci_hi),
                opt(r.alpha_th),
                opt(r.lambda_u_hat),
                opt(r.gamma_op),
                opt(r.gamma_hybrid),
                opt(r.eps_rel),
                opt(r.intercept),
                opt(r.max_burst),
                opt(r.intervention_rate),
                opt(r.band_distortion),
                r.error.clone().unwrap_or_default(),
            ]
        }),
    )?;
    out.finish()
}

/// Writes one realization: state summary, mode-change log and regime path.
pub fn persist_trajectory(
    dir: &Path,
    cfg: &ScenarioConfig,
    index: usize,
    path: &RegimePath,
    traj: &Trajectory,
    labels: &[String],
    config_text: Option<&str>,
) -> Result<Manifest> {
    let mut out = OutputDir::create(dir, "trajectory", vec![cfg.hash()], Some(cfg.seed))?;
    let effective = cfg.to_toml_string()?;
    out.write("config.toml", config_text.unwrap_or(&effective).as_bytes())?;
    out.write("trajectory.csv", traj.to_csv().as_bytes())?;
    out.write_csv(
        "events.csv",
        &["t", "old_mode", "new_mode", "trigger", "L", "S"],
        traj.events.iter().map(|e| {
            vec![
                f17(e.t),
                e.old.level().to_string(),
                e.new.level().to_string(),
                e.trigger.as_str().to_string(),
                f17(e.l),
                f17(e.s),
            ]
        }),
    )?;
    out.write("regime_path.csv", path.to_csv(labels).as_bytes())?;
    out.write_json(
        "summary.json",
        &serde_json::json!({
            "scenario": cfg.name,
            "index": index,
            "burst": traj.burst,
            "accepted_steps": traj.accepted_steps,
            "rejected_steps": traj.rejected_steps,
            "mode_changes": traj.events.len(),
        }),
    )?;
    out.finish()
}

/// Writes a kernel fit: terms, diagnostics and residuals on the check grid.
pub fn persist_kernel_fit(dir: &Path, cfg: &ScenarioConfig, fit: &KernelFit, config_text: Option<&str>) -> Result<Manifest> {
    let mut out = OutputDir::create(dir, "kernel_fit", vec![cfg.hash()], Some(cfg.seed))?;
    let effective = cfg.to_toml_string()?;
    out.write("config.toml", config_text.unwrap_or(&effective).as_bytes())?;
    let soe = &fit.soe;
    out.write_csv(
        "soe.csv",
        &["k", "weight", "rate"],
        soe.weights.iter().zip(&soe.rates).enumerate().map(|(k, (w, r))| vec![k.to_string(), f17(*w), f17(*r)]),
    )?;
    let target = KernelTarget::new(cfg.kernel.target.clone(), cfg.horizon)?;
    let mut rows = Vec::new();
    for t in default_check_times(cfg.horizon) {
        let g = fit.gain * target.eval(t);
        let gk = evaluate_soe(soe, t)?;
        rows.push(vec![f17(t), f17(g), f17(gk), f17((g - gk).abs())]);
    }
    out.write_csv("residuals.csv", &["t", "target", "soe", "abs_error"], rows)?;
    out.write_json("fit.json", fit)?;
    out.finish()
}
