//! `burstkit` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use burstkit::experiment::{
    compare_scenarios, load_raw, persist_comparison, persist_ensemble, persist_kernel_fit, persist_sweep,
    persist_trajectory, run_ensemble, sensitivity_sweep, summarize, CompareOptions, EnsembleResult, ExperimentError,
    RunOptions, ScenarioConfig, ScenarioModel, SweepAxis,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "burstkit", version, about = "Bursts in regime-switching networks with lifted memory")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Ensemble size N.
    #[arg(long = "ensemble", short = 'n')]
    ensemble: Option<usize>,
}

#[derive(Args, Clone)]
struct Exec {
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Corrupt the operator table before running (audit negative control).
    #[arg(long, hide = true)]
    inject_fault: bool,
}

impl Exec {
    fn options(&self) -> RunOptions {
        RunOptions {
            workers: self.workers,
            inject_fault: self.inject_fault,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit the sum-of-exponentials kernel of a scenario.
    FitKernel {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one realization of the ensemble.
    Simulate {
        config: PathBuf,
        /// Trajectory index within the ensemble.
        #[arg(long, default_value_t = 0)]
        trajectory: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run an ensemble and persist its outputs.
    Ensemble {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[command(flatten)]
        exec: Exec,
    },
    /// Run several scenarios on paired seeds and compare their tails.
    Compare {
        #[arg(required = true, num_args = 1..)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[command(flatten)]
        exec: Exec,
    },
    /// Sweep one parameter and tabulate the tail index.
    Sweep {
        config: PathBuf,
        /// soe_k, regime_rates, network_nonnormality, forcing, dddas_thresholds or mitigation_strength.
        #[arg(long)]
        axis: String,
        /// Comma-separated grid.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[command(flatten)]
        exec: Exec,
    },
    /// Rebuild the report of a persisted ensemble from its raw outputs.
    Report {
        dir: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Audit(Vec<String>),
    Divergence(Vec<String>),
    Other(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        use ExperimentError::*;
        match e {
            Config { .. } | Model(_) | Kernel(_) | Regime(_) | Controller(_) | Tail(_) | Comparison(_) => {
                Failure::Config(e.to_string())
            }
            Integrator(_) | Linalg(_) => Failure::Divergence(vec![e.to_string()]),
            Io { .. } | Format { .. } => Failure::Other(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn load(path: &Path, overrides: &Overrides) -> Result<(ScenarioConfig, String), Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = ScenarioConfig::from_toml_str(&text)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(n) = overrides.ensemble {
        cfg.ensemble = n;
    }
    cfg.validate().map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok((cfg, text))
}

fn out_dir(out: Option<PathBuf>, name: &str) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from("results").join(name))
}

/// Divergence takes precedence over audit failures.
fn verdict(results: &[&EnsembleResult], extra: Vec<String>) -> CmdResult {
    let diverged: Vec<String> = results
        .iter()
        .flat_map(|r| {
            r.report
                .excluded
                .iter()
                .map(move |(i, e)| format!("{}: trajectory {i}: {e}", r.config.name))
        })
        .collect();
    if !diverged.is_empty() {
        return Err(Failure::Divergence(diverged));
    }
    let mut failures: Vec<String> = results
        .iter()
        .flat_map(|r| r.report.failures().into_iter().map(move |f| format!("{}: {f}", r.config.name)))
        .collect();
    failures.extend(extra);
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Audit(failures))
    }
}

fn cmd_fit_kernel(config: &Path, out: Option<PathBuf>) -> CmdResult {
    let (cfg, text) = load(config, &Overrides::default())?;
    if !cfg.kernel.memory {
        return Err(Failure::Config(format!("{}: kernel memory is disabled", config.display())));
    }
    let fit = cfg.kernel.fit(cfg.horizon, cfg.solver.max_step)?;
    let dir = out_dir(out, &format!("{}-kernel", cfg.name));
    persist_kernel_fit(&dir, &cfg, &fit, Some(&text))?;
    println!(
        "{}: K = {}, rates [{:.4e}, {:.4e}], eps_rel = {:.3e}",
        dir.display(),
        fit.soe.len(),
        fit.r_min,
        fit.r_max,
        fit.soe.eps_rel
    );
    Ok(())
}

fn cmd_simulate(config: &Path, index: usize, out: Option<PathBuf>, overrides: &Overrides) -> CmdResult {
    let (cfg, text) = load(config, overrides)?;
    if index >= cfg.ensemble {
        return Err(Failure::Config(format!(
            "trajectory index {index} is outside the ensemble of {}",
            cfg.ensemble
        )));
    }
    let model = ScenarioModel::build(&cfg)?;
    let (path, traj) = model.simulate(&cfg, index, false)?;
    let dir = out_dir(out, &format!("{}-trajectory-{index}", cfg.name));
    persist_trajectory(&dir, &cfg, index, &path, &traj, &model.generator.labels, Some(&text))?;
    println!("{}: burst {:.6e}, {} mode changes", dir.display(), traj.burst, traj.events.len());
    Ok(())
}

fn cmd_ensemble(config: &Path, out: Option<PathBuf>, overrides: &Overrides, exec: &Exec) -> CmdResult {
    let (cfg, text) = load(config, overrides)?;
    let result = run_ensemble(&cfg, exec.options())?;
    let dir = out_dir(out, &cfg.name);
    persist_ensemble(&dir, &result, Some(&text))?;
    print_summary(&dir, &result);
    verdict(&[&result], Vec::new())
}

fn print_summary(dir: &Path, r: &EnsembleResult) {
    let rep = &r.report;
    let tail = rep.tail.as_ref().map_or_else(
        || format!("no tail fit ({})", rep.tail_error.as_deref().unwrap_or("unknown")),
        |t| {
            format!(
                "alpha_hat {:.3} [{:.3}, {:.3}], alpha_th {}",
                t.alpha_hat,
                t.ci.lo,
                t.ci.hi,
                t.alpha_th.map_or("n/a".to_string(), |a| format!("{a:.3}"))
            )
        },
    );
    println!(
        "{} ({}): {}/{} completed, median burst {:.4e}, max {:.4e}, {tail}",
        dir.display(),
        rep.preset.as_str(),
        rep.completed,
        rep.ensemble,
        rep.bursts.median,
        rep.bursts.max
    );
}

fn cmd_compare(configs: &[PathBuf], out: Option<PathBuf>, overrides: &Overrides, exec: &Exec) -> CmdResult {
    let loaded = configs.iter().map(|p| load(p, overrides)).collect::<Result<Vec<_>, _>>()?;
    let root = out_dir(out, "comparison");
    let mut results = Vec::new();
    for (cfg, text) in &loaded {
        let r = run_ensemble(cfg, exec.options())?;
        let dir = root.join(&cfg.name);
        persist_ensemble(&dir, &r, Some(text))?;
        print_summary(&dir, &r);
        results.push(r);
    }
    let items: Vec<(String, &EnsembleResult)> = results.iter().map(|r| (r.config.name.clone(), r)).collect();
    let cmp = compare_scenarios(&items, &CompareOptions::default())?;
    let bursts: Vec<(String, Vec<f64>)> = results.iter().map(|r| (r.config.name.clone(), r.raw.bursts())).collect();
    persist_comparison(&root.join("comparison"), &cmp, &bursts)?;
    let mut extra = Vec::new();
    for d in cmp.dominance.iter().filter(|d| !d.holds) {
        extra.push(format!(
            "{}: ccdf_dominance over {}: {} of {} points violate",
            d.scenario, d.reference, d.violations, d.points
        ));
    }
    for t in cmp.typical.iter().filter(|t| !t.holds) {
        extra.push(format!(
            "{}: typical_behaviour vs {}: median gap {:.3} > {:.3}",
            t.scenario, t.reference, t.max_median_gap, t.tolerance
        ));
    }
    let refs: Vec<&EnsembleResult> = results.iter().collect();
    verdict(&refs, extra)
}

fn cmd_sweep(config: &Path, axis: &str, values: &[f64], out: Option<PathBuf>, overrides: &Overrides, exec: &Exec) -> CmdResult {
    let (cfg, _) = load(config, overrides)?;
    let axis: SweepAxis = axis.parse()?;
    let table = sensitivity_sweep(&cfg, axis, values, exec.options())?;
    let dir = out_dir(out, &format!("{}-sweep-{}", cfg.name, axis.as_str()));
    persist_sweep(&dir, &table)?;
    for r in &table.rows {
        match (&r.error, r.alpha_hat) {
            (Some(e), _) => println!("{} = {}: error: {e}", axis.as_str(), r.value),
            (None, Some(a)) => println!("{} = {}: alpha_hat {a:.4}", axis.as_str(), r.value),
            (None, None) => println!("{} = {}: no tail fit", axis.as_str(), r.value),
        }
    }
    if let Some(rho) = table.rank_correlation {
        println!("rank correlation {rho:.3}");
    }
    println!("{}", dir.display());
    Ok(())
}

fn cmd_report(dir: &Path, out: Option<PathBuf>) -> CmdResult {
    let (cfg, raw) = load_raw(dir)?;
    let report = summarize(&cfg, &raw)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Other(e.to_string()))? + "\n";
    match out {
        Some(p) => fs::write(&p, text).map_err(|e| Failure::Other(format!("{}: {e}", p.display())))?,
        None => print!("{text}"),
    }
    let failures = report.failures();
    if report.diverged() {
        Err(Failure::Divergence(report.excluded.iter().map(|(i, e)| format!("trajectory {i}: {e}")).collect()))
    } else if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Audit(failures))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::FitKernel { config, out } => cmd_fit_kernel(&config, out),
        Command::Simulate {
            config,
            trajectory,
            out,
            overrides,
        } => cmd_simulate(&config, trajectory, out, &overrides),
        Command::Ensemble {
            config,
            out,
            overrides,
            exec,
        } => cmd_ensemble(&config, out, &overrides, &exec),
        Command::Compare {
            configs,
            out,
            overrides,
            exec,
        } => cmd_compare(&configs, out, &overrides, &exec),
        Command::Sweep {
            config,
            axis,
            values,
            out,
            overrides,
            exec,
        } => cmd_sweep(&config, &axis, &values, out, &overrides, &exec),
        Command::Report { dir, out } => cmd_report(&dir, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Audit(list)) => {
            println!("{}", serde_json::json!({ "status": "audit_failure", "failures": list }));
            ExitCode::from(3)
        }
        Err(Failure::Divergence(list)) => {
            println!("{}", serde_json::json!({ "status": "divergence", "failures": list }));
            ExitCode::from(4)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
