//! Shipped case files must match the generator. Set GRIDWELD_REGENERATE_CASES=1
//! to rewrite them.

use std::path::PathBuf;

use gridweld::netmodel::{load_case, synth, Case, CaseDocument};

fn case_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("cases")
}

#[test]
fn shipped_files_match_generator() {
    let regenerate = std::env::var_os("GRIDWELD_REGENERATE_CASES").is_some();
    for (name, doc) in synth::shipped() {
        let path = case_dir().join(format!("{name}.json"));
        let text = serde_json::to_string_pretty(&doc).unwrap() + "\n";
        if regenerate {
            std::fs::write(&path, &text).unwrap();
        }
        let on_disk = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let parsed: CaseDocument = serde_json::from_str(&on_disk).unwrap();
        assert_eq!(parsed, doc, "{name} differs from the generator");
        let loaded = load_case(&path).unwrap();
        assert_eq!(loaded, Case::from_document(&doc).unwrap(), "{name}");
    }
}

#[test]
fn micro_case_counts() {
    let case = load_case(case_dir().join("micro_td.json")).unwrap();
    assert_eq!(case.networks.len(), 2);
    assert_eq!(case.couplings.len(), 1);
    assert_eq!(case.networks[0].buses.len(), 4);
    assert_eq!(case.networks[1].buses.len(), 3);
}
