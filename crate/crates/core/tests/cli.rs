mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aci-consensus"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn benchmark_json() -> Value {
    serde_json::from_str(&std::fs::read_to_string(common::config_path("benchmark5.json")).unwrap()).unwrap()
}

fn write_json(dir: &Path, name: &str, v: &Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.display().to_string()
}

#[test]
fn missing_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["run", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));
}

#[test]
fn unknown_key_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = benchmark_json();
    v["sim"]["stepsize"] = json!(0.1);
    let path = write_json(dir.path(), "bad.json", &v);
    assert_eq!(cli(&["run", &path], dir.path()).status.code(), Some(2));
    assert_eq!(cli(&["check", &path], dir.path()).status.code(), Some(2));
}

#[test]
fn short_run_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::config_path("benchmark5.json").display().to_string();
    let o = cli(&["run", &config, "--set", "sim.T=1", "--seed", "3"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let mut reader = csv::Reader::from_path(dir.path().join("benchmark5_trace.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(&header[..4], &["t", "x1_1", "x1_2", "xhat1_1"]);
    assert_eq!(header.last().unwrap(), "xtilde_norm_5");
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 101);
    assert_eq!(rows.last().unwrap()[0].parse::<f64>().unwrap(), 1.0);
    for r in &rows {
        assert_eq!(r.len(), header.len());
        assert!(r.iter().all(|f| f.parse::<f64>().unwrap().is_finite()));
    }

    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("benchmark5_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["completed"], json!(true));
    assert_eq!(summary["audit"]["pass"], json!(true));
    assert_eq!(summary["agents"].as_array().unwrap().len(), 5);
    for key in ["x_norm_final", "delta_abs_max", "gamma_min_min"] {
        assert!(summary["agents"][0][key].is_number(), "{key}");
    }
}

#[test]
fn seed_flag_changes_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::config_path("benchmark5.json").display().to_string();
    let mut traces = Vec::new();
    for seed in ["1", "1", "2"] {
        let o = cli(&["run", &config, "--set", "sim.T=0.1", "--seed", seed, "--trace", "t.csv", "--summary", "s.json"], dir.path());
        assert_eq!(o.status.code(), Some(0));
        traces.push(std::fs::read(dir.path().join("t.csv")).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
    assert_ne!(traces[0], traces[2]);
}

#[test]
fn diverging_run_exits_with_3_and_keeps_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::config_path("benchmark5.json").display().to_string();
    let o = cli(&["run", &config], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("benchmark5_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["completed"], json!(false));
    assert!(summary["t_final"].as_f64().unwrap() > 1.0);
}

#[test]
fn check_reports_the_benchmark_graph() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::config_path("benchmark5.json").display().to_string();
    let o = cli(&["check", &config], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("N = 5"));
    assert!(out.contains("spanning tree: YES"));
    assert!(out.contains("s = "));
    assert!(out.contains("M_1 = 6") && out.contains("M_2 = 3") && out.contains("M_3 = 10"));
}

#[test]
fn check_fails_when_an_agent_is_unreachable() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = benchmark_json();
    v["topology"]["edges"] = json!([[3, 1, 1.0], [1, 4, 1.0], [2, 5, 1.0]]);
    v["agents"][2]["cost"]["Q_ij"] = json!({});
    let path = write_json(dir.path(), "cut.json", &v);
    let o = cli(&["check", &path], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("spanning tree: NO"));
}

#[test]
fn check_single_pinned_agent_gain_is_the_pinning_gain() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = aci_consensus::oracle::config_value(false);
    v["topology"]["pinning"] = json!({"1": 0.7});
    let path = write_json(dir.path(), "one.json", &v);
    let o = cli(&["check", &path], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("s = 0.7\n"), "{}", stdout(&o));
}

#[test]
fn oracle_passes_and_fails_without_probing() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["oracle-lqr"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("PASS"));
    let o = cli(&["oracle-lqr", "--exact-model"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let o = cli(&["oracle-lqr", "--set", "sim.probing.A=0"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}
