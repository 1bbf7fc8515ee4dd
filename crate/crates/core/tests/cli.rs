use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pcbf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcbf")).args(args).output().unwrap()
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name).display().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn build(dir: &Path, name: &str, threads: &str) -> PathBuf {
    let out = dir.join(name);
    let o = pcbf(&["build", "--scenario", &scenario("tiny.json"), "--out", s(&out), "--threads", threads]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn build_is_deterministic_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let a = build(dir.path(), "a.cbf", "1");
    let b = build(dir.path(), "b.cbf", "8");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(a.with_extension("meta.json")).unwrap(),
        std::fs::read(b.with_extension("meta.json")).unwrap()
    );
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("tiny.json")).unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, text.replace("\"v_min_mps\": 1.0", "\"v_min_mps\": 0.0")).unwrap();
    let o = pcbf(&["build", "--scenario", s(&bad), "--out", s(&dir.path().join("x.cbf"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("v_min_mps"));

    let bad_dt = dir.path().join("dt.json");
    std::fs::write(&bad_dt, text.replace("\"apply_dt_s\": 0.25", "\"apply_dt_s\": 0.3")).unwrap();
    let o = pcbf(&["mpc", "--scenario", s(&bad_dt), "--mode", "maxmin", "--out", s(&dir.path().join("m.csv"))]);
    assert_eq!(o.status.code(), Some(2));

    let o = pcbf(&["build", "--scenario", "/nonexistent.json", "--out", s(&dir.path().join("x.cbf"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = pcbf(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn provenance_mismatch_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let field = build(dir.path(), "f.cbf", "1");
    let csv = dir.path().join("run.csv");
    let o = pcbf(&["simulate", "--scenario", &scenario("example4.json"), "--field", s(&field), "--out", s(&csv)]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn simulate_and_plot_are_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let field = build(dir.path(), "f.cbf", "1");
    let mut outputs = Vec::new();
    for k in 0..2 {
        let csv = dir.path().join(format!("run{k}.csv"));
        let svg = dir.path().join(format!("run{k}.svg"));
        let o = pcbf(&[
            "simulate", "--scenario", &scenario("tiny.json"), "--field", s(&field), "--out", s(&csv),
            "--svg", s(&svg), "--baseline-h",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let stdout = String::from_utf8_lossy(&o.stdout).to_string();
        assert!(stdout.contains("min_h=") && stdout.contains("collision="));
        let plot = dir.path().join(format!("plot{k}.svg"));
        let o = pcbf(&["plot", "--scenario", &scenario("tiny.json"), "--csv", s(&csv), "--out", s(&plot)]);
        assert_eq!(o.status.code(), Some(0));
        let mcsv = dir.path().join(format!("mpc{k}.csv"));
        let o = pcbf(&["mpc", "--scenario", &scenario("tiny.json"), "--mode", "cost", "--out", s(&mcsv)]);
        assert_eq!(o.status.code(), Some(0));
        outputs.push([csv, svg, plot, mcsv].map(|p| std::fs::read(p).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert!(String::from_utf8_lossy(&outputs[0][1]).contains("<polyline"));
}

#[test]
fn corrupted_field_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let field = build(dir.path(), "f.cbf", "1");
    let mut bytes = std::fs::read(&field).unwrap();
    // first record whose flag is COMPUTED
    let header = 4 + 16 + 56;
    let idx = (0..(bytes.len() - header) / 9).find(|i| bytes[header + 9 * i] == 0).unwrap();
    let at = header + 9 * idx + 1;
    bytes[at..at + 8].copy_from_slice(&100.0f64.to_le_bytes());
    std::fs::write(&field, bytes).unwrap();
    let o = pcbf(&["validate", "--scenario", &scenario("tiny.json"), "--field", s(&field), "--quick"]);
    assert_eq!(o.status.code(), Some(1));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.lines().any(|l| l.starts_with("node_bound") && l.contains("FAIL")), "{table}");
}
