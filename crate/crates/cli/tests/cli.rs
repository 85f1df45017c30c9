//! End-to-end checks of the `opdyn` binary: exit codes, artifact contents,
//! and the report rendering.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn opdyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opdyn"))
        .args(args)
        .current_dir(repo_root())
        .output()
        .unwrap()
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().unwrap()
}

#[test]
fn validate_chain_reports_lambda() {
    let output = opdyn(&["validate", "--config", "configs/degroot_chain.toml"]);
    assert_eq!(exit_code(&output), 0);
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("lambda = rho(Q) = 0.7000"), "{stdout}");
    assert!(stdout.contains("trust layer 0: {1}"), "{stdout}");
    assert!(stdout.contains("valid"), "{stdout}");
}

#[test]
fn validate_rejects_reducible_network_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("reducible.toml");
    fs::write(
        &config,
        r#"
model = "ra"
[network]
inline = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.8, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 1.0],
    [0.0, 0.0, 0.0, 1.0, 0.0],
]
stubborn = 0
[role]
kind = "stubborn"
[sim]
alpha = 0.3
horizon = 10
replicas = 2
seed = 1
"#,
    )
    .unwrap();
    let output = opdyn(&["validate", "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 2);
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("\"errors\""), "{stdout}");
    assert!(stdout.contains("not irreducible"), "{stdout}");
}

#[test]
fn validate_rejects_missing_seed_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("noseed.toml");
    let edges = repo_root().join("configs/networks/chain_k2.edges");
    fs::write(
        &config,
        format!(
            r#"
model = "ra"
[network]
edge_list = "{}"
[role]
kind = "stubborn"
[sim]
alpha = 0.3
horizon = 10
replicas = 2
"#,
            edges.display()
        ),
    )
    .unwrap();
    let output = opdyn(&["validate", "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 2);
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("seed is mandatory"), "{stdout}");
}

#[test]
fn run_degroot_chain_converges_in_stats_csv() {
    let dir = tempfile::tempdir().unwrap();
    let output = opdyn(&[
        "run",
        "--config",
        "configs/degroot_chain.toml",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&output), 0);
    let stats = fs::read_to_string(dir.path().join("stats.csv")).unwrap();
    let last = stats.lines().last().unwrap();
    let err: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!(err <= 1e-10, "final err_inf {err}");
    assert!(stats.starts_with("# schema_version=1\nn,err_inf\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["pass"], serde_json::json!(true));
    assert_eq!(summary["network"]["lambda"], serde_json::json!(0.7));
}

#[test]
fn failing_assertion_exits_1_and_still_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("failing.toml");
    let edges = repo_root().join("configs/networks/chain_k2.edges");
    // an impossible decay threshold forces the diagnostic to fail
    fs::write(
        &config,
        format!(
            r#"
model = "ra"
[network]
edge_list = "{}"
[role]
kind = "stubborn"
[sim]
alpha = 0.5
horizon = 50
replicas = 20
seed = 9
[sim.init]
kind = "constant"
value = 1.0
[[diagnostics]]
name = "increment_moment_decay"
order = 2
threshold = 0.0
"#,
            edges.display()
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let output = opdyn(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&output), 1);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["pass"], serde_json::json!(false));
    assert_eq!(summary["diagnostics"][0]["pass"], serde_json::json!(false));
}

#[test]
fn every_configured_diagnostic_appears_once_in_summary() {
    let dir = tempfile::tempdir().unwrap();
    let output = opdyn(&[
        "run",
        "--config",
        "configs/ra_star_stubborn.toml",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&output), 0);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    let names: Vec<&str> = summary["diagnostics"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["name"].as_str().unwrap())
        .collect();
    assert_eq!(
        names,
        vec![
            "supermartingale",
            "conditional_variance",
            "increment_moment_decay",
            "increment_moment_decay",
            "tail_concentration",
            "trust_layers",
            "layer_herding",
            "rowsum_contraction"
        ]
    );
}

#[test]
fn report_renders_golden_table_and_never_gates() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/summary_sample.json");
    let output = opdyn(&["report", fixture.to_str().unwrap()]);
    // a FAIL row is highlighted but the report itself exits 0
    assert_eq!(exit_code(&output), 0);
    let stdout = String::from_utf8(output.stdout).unwrap();
    let expected = "\
model: ra    overall: FAIL
check                       status  detail
model                       PASS    final_mean_x=[2 entries] final_step=10 recorded_steps=11 replicas=4
supermartingale             PASS    contraction=0.85 max_residual=1.1e-16 strict_decrease=true
increment_moment_decay      FAIL    below_threshold=false decayed=false initial_window_mean=0.2 order=2 terminal_window_mean=0.5 threshold=0.001
";
    assert_eq!(stdout, expected);
}

#[test]
fn report_on_empty_diagnostics_prints_header_only_table() {
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("summary.json");
    fs::write(
        &summary,
        r#"{"model":"degroot","pass":true,"diagnostics":[]}"#,
    )
    .unwrap();
    let output = opdyn(&["report", summary.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 0);
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert_eq!(
        stdout,
        "model: degroot    overall: PASS\ncheck                       status  detail\n"
    );
}

#[test]
fn report_rejects_malformed_summary_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("summary.json");
    fs::write(&bad, "{not json").unwrap();
    let output = opdyn(&["report", bad.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 2);
}
