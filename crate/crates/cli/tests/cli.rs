use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lyapca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lyapca")).args(args).output().expect("binary runs")
}

fn json_file(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn stderr_line(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).lines().last().unwrap_or("").to_string()
}

#[test]
fn periodic_ether_mle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ether.json");
    let o = lyapca(&["periodic", "--rule", "eca:110", "--tile", "11111000100110", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr_line(&o));
    let v = json_file(&out);
    assert_eq!(v["command"], "periodic");
    assert_eq!(v["config"]["tile"], "11111000100110");
    let mle = v["result"]["mle"]["lambda"].as_f64().unwrap();
    assert!((mle - 0.647).abs() < 0.005, "{mle}");
    assert_eq!(v["result"]["graph"]["edges"].as_array().unwrap().len(), 26);
}

#[test]
fn classify_rule0_collapses() {
    let o = lyapca(&["classify", "--rule", "eca:0", "--t", "100", "--seeds", "3"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"]["class"], "C");
    assert_eq!(v["config"]["t"], 100);
    assert_eq!(v["config"]["p"], 0.5);
}

#[test]
fn profile_rule150_reaches_log3() {
    let dir = tempfile::tempdir().unwrap();
    let (out, csv, svg) = (dir.path().join("p.json"), dir.path().join("p.csv"), dir.path().join("p.svg"));
    let o = lyapca(&[
        "profile", "--rule", "eca:150", "--t", "1000", "--init", "uniform:0.5", "--defects", "interval:21",
        "--out", out.to_str().unwrap(), "--csv", csv.to_str().unwrap(), "--svg", svg.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr_line(&o));
    let v = json_file(&out);
    let m = v["result"]["mle"]["value"].as_f64().unwrap();
    assert!((m - 3f64.ln()).abs() < 0.01, "{m}");
    assert_eq!(v["seed"], 1);
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("alpha,value\n"));
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<polyline"));
}

#[test]
fn identical_config_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for (p, threads) in [(&a, "1"), (&b, "3")] {
        let o = lyapca(&["--threads", threads, "profile", "--rule", "eca:22", "--t", "200", "--defects", "interval:5", "--out", p.to_str().unwrap()]);
        assert!(o.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn usage_error_exits_2() {
    let o = lyapca(&["profile", "--rule", "eca:999"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("error: code=2 kind=usage msg="));
    let o = lyapca(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("error: code=2 kind=usage"));
}

#[test]
fn budget_refusal_exits_3() {
    let o = lyapca(&["profile", "--rule", "eca:30", "--t", "5000", "--max-cells", "1000"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr_line(&o).starts_with("error: code=3 kind=budget"));
}

#[test]
fn missing_recurrence_exits_4() {
    let o = lyapca(&["shape2d", "--rule", "tot2d:moore:7", "--tile", "0111/1011/1110/1101"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr_line(&o).starts_with("error: code=4 kind=numerical"));
}

#[test]
fn transient_tile_names_its_cycle() {
    let o = lyapca(&["periodic", "--rule", "eca:0", "--tile", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).contains("cycle of tile 0"));
}

#[test]
fn certificate_tables_hold() {
    let o = lyapca(&["certify-upper", "--table"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"]["all_hold"], true);
    assert_eq!(v["result"]["certificates"].as_array().unwrap().len(), 48);
    let o = lyapca(&["certify-lower", "--rule", "eca:30", "--m", "1,3", "--t-m", "3"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"]["kind"], "lower");
    assert_eq!(v["result"]["verdict"], true);
    let o = lyapca(&["certify-upper", "--rule", "eca:30", "--b", "0", "--t-b", "1"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"]["verdict"], false);
}

#[test]
fn shape2d_polygon_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("w.svg");
    let o = lyapca(&["shape2d", "--rule", "tot2d:moore:1", "--tile", "0000/0000/0011/0011", "--svg", svg.to_str().unwrap()]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"]["kind"], "polygon");
    assert_eq!(v["result"]["W_vertices"].as_array().unwrap().len(), 8);
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<polygon"));
}

#[test]
fn rule38_reports_exact_constants() {
    let o = lyapca(&["rule38"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"]["states"], 24);
    assert_eq!(v["result"]["rows_stochastic"], true);
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let o = lyapca(&["sweep", "--rule", "eca:0", "--t", "50", "--ps", "0.2,0.8", "--csv", csv.to_str().unwrap()]);
    assert!(o.status.success());
    let s = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(s.lines().count(), 3);
    assert!(s.lines().nth(1).unwrap().starts_with("0.2,C,"));
}

#[test]
fn damage_compare_on_identity_rule() {
    let o = lyapca(&["damage-compare", "--rule", "eca:204", "--t", "20", "--defects", "interval:3"]);
    assert!(o.status.success(), "{}", stderr_line(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"]["damage"]["edges"], serde_json::json!([-0.05, 0.05]));
}
