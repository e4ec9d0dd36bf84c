mod common;

use std::collections::HashMap;
use std::path::PathBuf;

use common::case;
use gridweld::ecf::{FormulationOptions, Norm, SourceKind};
use gridweld::netmodel::{synth, Case, CaseDocument, Partition};
use gridweld::report::{
    heatmap_rows, localize_weak_nodes, read_heatmap, run_study, totals, write_heatmap, Mode, NodeValue, SolveReport,
    StudyOptions, NONZERO_THRESHOLD,
};
use proptest::prelude::*;

fn central(c: &Case, norm: Norm) -> SolveReport {
    let opts = StudyOptions {
        formulation: FormulationOptions { norm, source: SourceKind::Current, q_only: false },
        ..StudyOptions::default()
    };
    run_study(c, &Partition::per_network(c), Mode::Central, &opts).report
}

fn doc(name: &str) -> CaseDocument {
    synth::shipped().into_iter().find(|(n, _)| n == name).unwrap().1
}

#[test]
fn micro_heatmap_has_one_row_per_node() {
    let c = case("micro_td_stressed");
    let r = central(&c, Norm::L2);
    let nodes: usize = c.networks.iter().flat_map(|n| &n.buses).map(|b| b.phases.len()).sum();
    assert_eq!(nodes, 13);
    assert_eq!(heatmap_rows(&r).len(), nodes);
}

#[test]
fn heatmap_round_trips() {
    let r = central(&case("feeder240_stressed"), Norm::L2);
    let mut buf = Vec::new();
    write_heatmap(&r, &mut buf).unwrap();
    let back = read_heatmap(std::str::from_utf8(&buf).unwrap()).unwrap();
    let rows = heatmap_rows(&r);
    assert_eq!(back.len(), rows.len());
    for (a, b) in rows.iter().zip(&back) {
        assert_eq!((&a.bus, a.phase), (&b.bus, b.phase));
        assert!((a.magnitude - b.magnitude).abs() <= 1e-12);
        assert_eq!(a.x.is_some(), b.x.is_some());
    }
}

#[test]
fn report_json_round_trips() {
    let r = central(&case("micro_td_stressed"), Norm::L1);
    let back: SolveReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert_eq!(back, r);
}

/// Set GRIDWELD_REGENERATE_GOLDEN=1 to rewrite.
#[test]
fn golden_report() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/micro_td_stressed.central.l2.json");
    let text = central(&case("micro_td_stressed"), Norm::L2).to_json().unwrap();
    if std::env::var_os("GRIDWELD_REGENERATE_GOLDEN").is_some() {
        std::fs::write(&path, &text).unwrap();
    }
    let golden = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, golden);
}

#[test]
fn one_eligible_bus_is_the_only_weak_node() {
    let mut d = doc("micro_td_stressed");
    for net in &mut d.networks {
        for b in &mut net.buses {
            if b.infeasibility_eligible != Some(false) && b.id != "fa_2" && b.kind != gridweld::netmodel::BusKind::Slack {
                b.infeasibility_eligible = Some(false);
            }
        }
    }
    let c = Case::from_document(&d).unwrap();
    let r = central(&c, Norm::L1);
    assert!(r.converged, "{}", r.status);
    let weak = localize_weak_nodes(&r, NONZERO_THRESHOLD);
    assert!(!weak.is_empty());
    assert!(weak.iter().all(|w| w.bus == "fa_2"), "{weak:?}");
}

#[test]
fn l1_lists_fewer_nodes_on_the_large_feeder() {
    let c = case("feeder240_stressed");
    let (r1, r2) = (central(&c, Norm::L1), central(&c, Norm::L2));
    assert!(localize_weak_nodes(&r1, NONZERO_THRESHOLD).len() < localize_weak_nodes(&r2, NONZERO_THRESHOLD).len());
}

fn relabel(d: &CaseDocument, perm: &[usize]) -> CaseDocument {
    let mut ids: Vec<String> = d.networks.iter().flat_map(|n| n.buses.iter().map(|b| b.id.clone())).collect();
    ids.sort();
    let map: HashMap<String, String> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), format!("n{:03}", perm[i])))
        .collect();
    let mut out = d.clone();
    for net in &mut out.networks {
        net.buses.iter_mut().for_each(|b| b.id = map[&b.id].clone());
        for br in &mut net.branches {
            br.from = map[&br.from].clone();
            br.to = map[&br.to].clone();
        }
        net.loads.iter_mut().for_each(|l| l.bus = map[&l.bus].clone());
        net.generators.iter_mut().for_each(|g| g.bus = map[&g.bus].clone());
    }
    for c in &mut out.couplings {
        c.t_bus = map[&c.t_bus].clone();
        c.d_bus = map[&c.d_bus].clone();
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn totals_ignore_bus_ids(perm in Just((0..7).collect::<Vec<usize>>()).prop_shuffle()) {
        let d = doc("micro_td_stressed");
        let base = central(&Case::from_document(&d).unwrap(), Norm::L2);
        let moved = central(&Case::from_document(&relabel(&d, &perm)).unwrap(), Norm::L2);
        prop_assert!((base.totals.magnitude - moved.totals.magnitude).abs() < 1e-10);
        prop_assert!((base.totals.components[0] - moved.totals.components[0]).abs() < 1e-10);
        prop_assert!((base.totals.components[1] - moved.totals.components[1]).abs() < 1e-10);
    }
}

fn node(m: (f64, f64)) -> NodeValue {
    NodeValue {
        network: "d".into(),
        side: gridweld::netmodel::Side::Distribution,
        bus: "b".into(),
        phase: gridweld::netmodel::Phase::A,
        eligible: true,
        coords: None,
        components: [m.0, m.1],
        magnitude: m.0.hypot(m.1),
    }
}

proptest! {
    #[test]
    fn totals_are_sums_of_node_values(vals in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 0..200)) {
        let nodes: Vec<NodeValue> = vals.iter().copied().map(node).collect();
        let t = totals(&nodes);
        let s: f64 = nodes.iter().map(|n| n.magnitude).sum();
        let q: f64 = nodes.iter().map(|n| n.components[1].abs()).sum();
        prop_assert!((t.magnitude - s).abs() <= 1e-12);
        prop_assert!((t.components[1] - q).abs() <= 1e-12);
    }
}
