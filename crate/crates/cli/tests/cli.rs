use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use burstkit::experiment::read_manifest;

const SMALL: &str = r#"
name = "small"
seed = 11
horizon = 10.0
ensemble = 8

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
mitigate_damping = 2.0
mitigate_decay = 2.0

[solver]
rtol = 1e-7
atol = 1e-9
max_step = 0.1
output_points = 101

[tail]
q_b = 0.5
min_exceedances = 1
min_points = 2
bootstrap = 200
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_burstkit"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn variant(name: &str, edit: impl Fn(&str) -> String) -> String {
    edit(SMALL).replacen("name = \"small\"", &format!("name = \"{name}\""), 1)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn preset_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_manifest_ok(dir: &Path) {
    let m = read_manifest(dir).unwrap();
    assert!(m.complete);
    assert!(!m.files.is_empty());
    assert!(m.verify(dir).unwrap().is_empty());
}

#[test]
fn fit_kernel_recovers_representable_target() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace(
            "target = { kind = \"power_law\", exponent = 1.5, offset = 1.0 }",
            "target = { kind = \"exp_sum\", terms = [[1.0, 1.0], [0.5, 2.0], [0.25, 4.0]] }",
        )
        .replace("gain = 1.5", "gain = 1.0")
        .replace("terms = 4\n", "terms = 3\n")
        .replace("r_min = 0.5", "r_min = 1.0")
        .replace("r_max = 10.0", "r_max = 4.0");
    let cfg = write_config(tmp.path(), "k.toml", &text);
    let out = tmp.path().join("fit");
    let o = run(&["fit-kernel", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fit = json(&out.join("fit.json"));
    assert!(fit["soe"]["eps_rel"].as_f64().unwrap() <= 1e-12);
    assert_manifest_ok(&out);
    assert!(fs::read_to_string(out.join("residuals.csv")).unwrap().starts_with("t,target,soe,abs_error\n"));
}

#[test]
fn fit_kernel_power_law_preset_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fit");
    let o = run(&["fit-kernel", s(&preset_path("heavy_tail.toml")), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let eps = json(&out.join("fit.json"))["soe"]["eps_rel"].as_f64().unwrap();
    assert!((eps - 0.029_047_594_260_349).abs() < 1e-9 * 0.029, "eps_rel {eps}");
}

#[test]
fn missing_kernel_section_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let start = SMALL.find("[kernel]").unwrap();
    let end = SMALL.find("[regimes]").unwrap();
    let text = format!("{}{}", &SMALL[..start], &SMALL[end..]);
    let cfg = write_config(tmp.path(), "nokernel.toml", &text);
    let o = run(&["fit-kernel", s(&cfg), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("kernel"));
}

#[test]
fn config_errors_are_line_anchored() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace("omega = 1.0", "omega = 1.0\nunknown_key = 3");
    let cfg = write_config(tmp.path(), "bad.toml", &text);
    let o = run(&["ensemble", s(&cfg), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 2);
    let line = text.lines().position(|l| l.starts_with("unknown_key")).unwrap() + 1;
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(&format!("line {line}")), "{err}");
}

#[test]
fn simulate_is_reproducible_and_rejects_bad_index() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(code(&run(&["simulate", s(&cfg), "--trajectory", "0", "--out", s(d)])), 0);
    }
    for f in ["trajectory.csv", "events.csv", "regime_path.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_manifest_ok(&a);
    assert_eq!(code(&run(&["simulate", s(&cfg), "--trajectory", "8"])), 2);
}

fn csv_column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].to_string()).collect()
}

#[test]
fn memory_off_has_no_memory_load() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "off.toml", &SMALL.replace("[kernel]\n", "[kernel]\nmemory = false\n"));
    let out = tmp.path().join("t");
    assert_eq!(code(&run(&["simulate", s(&cfg), "--out", s(&out)])), 0);
    let l = csv_column(&out.join("trajectory.csv"), "L");
    assert!(!l.is_empty());
    assert!(l.iter().all(|v| v.parse::<f64>().unwrap() == 0.0));
}

#[test]
fn low_thresholds_drive_the_mode_to_mitigate() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace(
        "[design]",
        "[policy]\nenabled = true\ntau_l = [0.01, 0.02]\ntau_s = [50.0, 100.0]\nmin_dwell = 0.2\n\n[design]",
    );
    let cfg = write_config(tmp.path(), "dddas.toml", &text);
    let out = tmp.path().join("t");
    assert_eq!(code(&run(&["simulate", s(&cfg), "--out", s(&out)])), 0);
    let modes = csv_column(&out.join("trajectory.csv"), "m");
    assert!(modes.iter().any(|m| m == "2"));
    assert!(csv_column(&out.join("events.csv"), "new_mode").iter().any(|m| m == "2"));
}

#[test]
fn ensemble_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("e");
    let o = run(&["ensemble", s(&cfg), "--out", s(&out), "--workers", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_manifest_ok(&out);
    assert_eq!(fs::read_to_string(out.join("config.toml")).unwrap(), SMALL);
    let rebuilt = tmp.path().join("report.json");
    assert_eq!(code(&run(&["report", s(&out), "--out", s(&rebuilt)])), 0);
    assert_eq!(fs::read(&rebuilt).unwrap(), fs::read(out.join("report.json")).unwrap());
}

#[test]
fn flags_override_seed_and_size() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("e");
    assert_eq!(code(&run(&["ensemble", s(&cfg), "--out", s(&out), "--seed", "99", "-n", "3"])), 0);
    let report = json(&out.join("report.json"));
    assert_eq!(report["seed"], 99);
    assert_eq!(report["ensemble"], 3);
    assert_eq!(read_manifest(&out).unwrap().seed, Some(99));
}

#[test]
fn fault_injection_exits_with_audit_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let o = run(&["ensemble", s(&cfg), "--out", s(&tmp.path().join("e")), "--inject-fault"]);
    assert_eq!(code(&o), 3);
    let stdout = String::from_utf8(o.stdout.clone()).unwrap();
    let v: serde_json::Value = serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
    assert_eq!(v["status"], "audit_failure");
    assert!(v["failures"][0].as_str().unwrap().contains("energy_inequality"));
    let log = fs::read_to_string(tmp.path().join("e/audit.log")).unwrap();
    assert!(log.contains("FAIL energy_inequality"));
}

#[test]
fn compare_writes_one_directory_per_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let plain = write_config(tmp.path(), "plain.toml", SMALL);
    let safe = write_config(
        tmp.path(),
        "safe.toml",
        &variant("safe", |t| t.replace("ensemble = 8", "ensemble = 8\nsafe_in_u = true")),
    );
    let off = write_config(
        tmp.path(),
        "off.toml",
        &variant("off", |t| t.replace("[kernel]\n", "[kernel]\nmemory = false\n")),
    );
    let out = tmp.path().join("cmp");
    let o = run(&["compare", s(&plain), s(&safe), s(&off), "--out", s(&out)]);
    assert!(matches!(code(&o), 0 | 3), "{}", String::from_utf8_lossy(&o.stderr));
    for d in ["small", "safe", "off", "comparison"] {
        assert_manifest_ok(&out.join(d));
    }
    let cmp = json(&out.join("comparison/comparison.json"));
    assert_eq!(cmp["reference"], "small");
    assert_eq!(cmp["scenarios"].as_array().unwrap().len(), 3);
    let overlay = csv_column(&out.join("comparison/ccdf_overlay.csv"), "scenario");
    for label in ["small", "safe", "off"] {
        assert!(overlay.iter().any(|l| l == label));
    }
}

#[test]
fn compare_refuses_mismatched_scenarios() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write_config(tmp.path(), "a.toml", SMALL);
    let b = write_config(tmp.path(), "b.toml", &variant("b", |t| t.replace("horizon = 10.0", "horizon = 12.0")));
    let o = run(&["compare", s(&a), s(&b), "--out", s(&tmp.path().join("c"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizon"));
}

#[test]
fn sweep_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("sw");
    let o = run(&["sweep", s(&cfg), "--axis", "forcing", "--values", "0.5,1,2", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_manifest_ok(&out);
    assert_eq!(csv_column(&out.join("sweep.csv"), "value").len(), 3);
    assert_eq!(code(&run(&["sweep", s(&cfg), "--axis", "bogus", "--values", "1"])), 2);
}
