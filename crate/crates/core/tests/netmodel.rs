mod common;

use std::path::PathBuf;

use common::case;
use gridweld::netmodel::{load_partition, synth, Case, CaseError, Partition};

fn cases_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("cases")
}

#[test]
fn micro_default_partition_tears_one_port() {
    let c = case("micro_td");
    let p = Partition::per_network(&c);
    assert_eq!(p.subproblems.len(), 2);
    assert_eq!(p.torn_ports().count(), 1);
    assert!(p.warnings.is_empty());
}

#[test]
fn single_subproblem_partition_is_degenerate() {
    let c = case("micro_td");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.json");
    std::fs::write(&path, r#"{"subproblems": [{"name": "all", "networks": ["t", "fa"]}]}"#).unwrap();
    let p = load_partition(&path, &c).unwrap();
    assert_eq!(p.subproblems.len(), 1);
    assert_eq!(p.torn_ports().count(), 0);
    assert_eq!(p.warnings.len(), 1);
    assert!(p.warnings[0].contains("degenerate tearing"), "{}", p.warnings[0]);
}

#[test]
fn three_feeder_partition_file() {
    let c = case("td_3feeder");
    let p = load_partition(cases_dir().join("td_3feeder.partition.json"), &c).unwrap();
    assert_eq!(p.subproblems.len(), 4);
    assert_eq!(p.torn_ports().count(), 3);
    for pl in p.torn_ports() {
        assert_eq!(pl.t_sub, 0);
    }
}

#[test]
fn grouped_partition_keeps_one_port_internal() {
    let c = case("td_2feeder");
    let p = load_partition(cases_dir().join("td_2feeder.grouped.partition.json"), &c).unwrap();
    assert_eq!(p.subproblems.len(), 2);
    assert_eq!(p.torn_ports().count(), 1);
    assert_eq!(p.warnings.len(), 1);
}

#[test]
fn partition_errors_are_specific() {
    let c = case("micro_td");
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let path = dir.path().join(name);
        std::fs::write(&path, text).unwrap();
        path
    };
    let twice = write("twice.json", r#"{"subproblems": [{"name": "a", "networks": ["t", "fa"]}, {"name": "b", "networks": ["fa"]}]}"#);
    let err = load_partition(&twice, &c).unwrap_err();
    assert!(err.to_string().contains("assigned twice"), "{err}");
    let missing = write("missing.json", r#"{"subproblems": [{"name": "a", "networks": ["t"]}]}"#);
    let err = load_partition(&missing, &c).unwrap_err();
    assert!(err.to_string().contains("not assigned"), "{err}");
    let unknown = write("unknown.json", r#"{"subproblems": [{"name": "a", "networks": ["t", "zz"]}]}"#);
    let err = load_partition(&unknown, &c).unwrap_err();
    assert!(err.to_string().contains("\"zz\""), "{err}");
    assert!(matches!(load_partition(dir.path().join("nope.json"), &c), Err(CaseError::NotFound(_))));
}

#[test]
fn cases_round_trip_through_documents() {
    for (name, doc) in synth::shipped() {
        let c = Case::from_document(&doc).unwrap();
        let text = serde_json::to_string(&c.to_document()).unwrap();
        let back = Case::from_document(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, c, "{name}");
    }
}

#[test]
fn three_feeder_case_shape() {
    let c = case("td_3feeder");
    assert_eq!(c.networks.len(), 4);
    assert_eq!(c.couplings.len(), 3);
    assert!(c.couplings.iter().all(|k| k.t_network == 0));
}
