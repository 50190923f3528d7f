use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn default_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json")
}

fn run(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_repeaterlab"));
    cmd.args(args);
    match seed_env {
        Some(s) => cmd.env("REPEATERLAB_SEED", s),
        None => cmd.env_remove("REPEATERLAB_SEED"),
    };
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"{
    "seed": 11,
    "sweeps": {
        "nodes": {
            "kind": "FixedDistanceNodeSweep",
            "profile": "swap-limited",
            "total_distance_km": 1000,
            "routers": {"min": 2, "max": 19},
            "f_threshold": 0.8
        }
    }
}"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("cfg.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn seeds(csv: &Path) -> Vec<String> {
    std::fs::read_to_string(csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().to_string())
        .collect()
}

#[test]
fn validate_accepts_shipped_config() {
    let o = run(&["validate", "--config", default_config().to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("config ok"));
}

#[test]
fn config_errors_exit_one_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"profiles": {"p": {"memory": {"tau_coh_s": -2}, "quantum_channel": {"attenuation_db_per_km": 0.2}}}}"#,
    );
    let o = run(&["validate", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("tau_coh_s must be > 0"), "{}", stderr(&o));

    let o = run(&["validate", "--config", "/nonexistent/cfg.json"], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["run"], None).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"], None).status.code(), Some(1));
    let o = run(&["chart", "--input", "x.csv", "--kind", "pie", "--out", "x.svg"], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unwritable_output_is_a_runtime_fault() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let o = run(
        &["run", "--config", cfg.to_str().unwrap(), "--out", blocker.join("sub").to_str().unwrap()],
        None,
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn seed_precedence_flag_then_env_then_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let cfg = cfg.to_str().unwrap();
    let go = |name: &str, extra: &[&str], env: Option<&str>| {
        let out = dir.path().join(name);
        let mut args = vec!["run", "--config", cfg, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = run(&args, env);
        assert!(o.status.success(), "{}", stderr(&o));
        seeds(&out.join("nodes.csv"))
    };
    let base = go("base", &[], None);
    let env = go("env", &[], Some("12345"));
    let env_again = go("env2", &[], Some("12345"));
    let flag = go("flag", &["--seed", "12345"], Some("999"));
    assert_eq!(base.len(), 18);
    assert_ne!(base, env);
    assert_eq!(env, env_again);
    assert_eq!(env, flag);

    let o = run(&["run", "--config", cfg, "--out", dir.path().join("bad").to_str().unwrap()], Some("abc"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn run_then_chart_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = out.join("nodes.csv");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 19);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("nodes.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rows"], 18);
    assert_eq!(summary["invariant_violations"], 0);

    let svg = dir.path().join("rate.svg");
    let o = run(
        &["chart", "--input", csv.to_str().unwrap(), "--kind", "rate_vs_nodes", "--out", svg.to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches("<circle").count(), 18);

    // header-only input has nothing to draw
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, std::fs::read_to_string(&csv).unwrap().lines().next().unwrap().to_string() + "\n").unwrap();
    let o = run(
        &["chart", "--input", empty.to_str().unwrap(), "--kind", "rate_vs_nodes", "--out", svg.to_str().unwrap()],
        None,
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn min_repeaters_accepts_distance_list() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "min-repeaters",
            "--config",
            default_config().to_str().unwrap(),
            "--distances",
            "2000,12000,20000",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "distance_km,replicate,min_repeaters");
    assert_eq!(lines[1], "2000,0,0");
    assert!(lines.iter().any(|l| l.starts_with("fit:")));
}
