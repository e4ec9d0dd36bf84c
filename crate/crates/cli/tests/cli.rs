use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn case(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/cases").join(format!("{name}.json"))
}

fn gridweld(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridweld"))
        .arg("solve")
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn q_only_study_writes_reactive_totals() {
    let dir = tempfile::tempdir().unwrap();
    let c = case("micro_td_stressed");
    let out = gridweld(
        &["--case", c.to_str().unwrap(), "--mode", "central", "--norm", "l2", "--source", "power", "--q-only"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    assert_eq!(r["components"], serde_json::json!(["p", "q"]));
    assert_eq!(r["totals"]["components"][0].as_f64(), Some(0.0));
    assert!(r["totals"]["components"][1].as_f64().unwrap() > 0.0);
    assert!(dir.path().join("heatmap.csv").exists());
}

#[test]
fn compare_prints_the_method_table() {
    let dir = tempfile::tempdir().unwrap();
    let c = case("micro_td_stressed");
    let out = gridweld(&["--case", c.to_str().unwrap(), "--mode", "compare"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert!(lines[0].contains("OF (pu)") && lines[0].contains("outer"), "{stdout}");
    for (line, label) in lines[1..].iter().zip(["C-PDIP", "D-PDIP", "ADMM"]) {
        assert!(line.starts_with(label), "{stdout}");
    }
    assert_eq!(report(dir.path())["runs"].as_array().unwrap().len(), 3);
}

#[test]
fn missing_case_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gridweld(&["--case", "missing.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("case file not found"));
}

#[test]
fn bad_flags_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let c = case("micro_td");
    let c = c.to_str().unwrap();
    for args in [
        vec!["--case", c, "--bogus"],
        vec!["--case", c, "--q-only"],
        vec!["--case", c, "--mode", "fast"],
        vec!["--case", c, "--norm", "l3"],
        vec!["--case", c, "--workers", "0"],
    ] {
        let out = gridweld(&args, dir.path());
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn non_convergence_exits_2_with_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let c = case("td_3feeder_stressed");
    let out = gridweld(&["--case", c.to_str().unwrap(), "--mode", "dpdip", "--trace"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let r = report(dir.path());
    assert_eq!(r["converged"], serde_json::json!(false));
    let trace = std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    assert!(trace.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
    assert!(trace.lines().last().unwrap().contains("\"summary\""));
}

#[test]
fn worker_count_does_not_change_the_report() {
    let c = case("td_3feeder");
    let mut reports = Vec::new();
    for workers in ["1", "2", "8"] {
        let dir = tempfile::tempdir().unwrap();
        let out = gridweld(&["--case", c.to_str().unwrap(), "--mode", "dpdip", "--workers", workers], dir.path());
        assert_eq!(out.status.code(), Some(0));
        reports.push(std::fs::read(dir.path().join("report.json")).unwrap());
    }
    assert!(reports.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn partition_file_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let c = case("td_3feeder");
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/cases/td_3feeder.partition.json");
    let out = gridweld(
        &["--case", c.to_str().unwrap(), "--partition", p.to_str().unwrap(), "--mode", "dpdip"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let names: Vec<String> = report(dir.path())["subproblems"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["name"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(names, ["transmission", "feeder_a", "feeder_b", "feeder_c"]);
}
