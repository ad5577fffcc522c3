use std::path::{Path, PathBuf};

use proptest::prelude::*;

use tclgrid::engine::scan_peak;
use tclgrid::netmodel::{
    check_radial, load_feeder, populate_houses, synthetic_feeder, Bus, FeederModel, LineSegment, Phase, PopulatorConfig,
    SynthSpec, SCHEMA_VERSION,
};
use tclgrid::series::TimeSeries;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn graph(n: usize, edges: &[(usize, usize)]) -> FeederModel {
    let abc = Phase::ALL.to_vec();
    FeederModel {
        schema_version: SCHEMA_VERSION,
        name: "graph".into(),
        nominal_voltage_v: 7200.0,
        slack_bus: "b0".into(),
        slack_voltage_pu: 1.0,
        buses: (0..n).map(|k| Bus { id: format!("b{k}"), phases: abc.clone(), is_service_node: false }).collect(),
        lines: edges
            .iter()
            .enumerate()
            .map(|(k, &(a, b))| LineSegment {
                id: format!("l{k}"),
                from_bus: format!("b{a}"),
                to_bus: format!("b{b}"),
                phases: abc.clone(),
                r_ohm: 0.1,
                x_ohm: 0.1,
                ampacity_a: 100.0,
                length_m: 100.0,
            })
            .collect(),
        transformers: vec![],
        capacitors: vec![],
        fuses: vec![],
        loads: vec![],
        houses: vec![],
    }
}

/// Radial iff every bus is reached from the slack by exactly one simple path,
/// counting parallel edges as distinct paths.
fn radial_by_path_count(n: usize, edges: &[(usize, usize)]) -> bool {
    fn walk(at: usize, edges: &[(usize, usize)], visited: &mut Vec<bool>, counts: &mut Vec<usize>) {
        counts[at] += 1;
        for &(a, b) in edges {
            let next = if a == at { b } else if b == at { a } else { continue };
            if !visited[next] {
                visited[next] = true;
                walk(next, edges, visited, counts);
                visited[next] = false;
            }
        }
    }
    let mut visited = vec![false; n];
    let mut counts = vec![0; n];
    visited[0] = true;
    walk(0, edges, &mut visited, &mut counts);
    counts.iter().all(|&c| c == 1)
}

fn arb_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..10).prop_flat_map(|n| {
        // Mostly trees, plus a few extra or missing edges.
        let tree = proptest::collection::vec(any::<prop::sample::Index>(), n - 1);
        let extra = proptest::collection::vec((0..n, 0..n), 0..3);
        (Just(n), tree, extra, any::<bool>()).prop_map(|(n, parents, extra, drop_one)| {
            let mut edges: Vec<(usize, usize)> = parents.iter().enumerate().map(|(k, p)| (p.index(k + 1), k + 1)).collect();
            edges.extend(extra.into_iter().filter(|(a, b)| a != b));
            if drop_one && edges.len() > 1 {
                edges.remove(0);
            }
            (n, edges)
        })
    })
}

proptest! {
    #[test]
    fn radiality_agrees_with_path_counting((n, edges) in arb_graph()) {
        let feeder = graph(n, &edges);
        prop_assert_eq!(check_radial(&feeder).is_ok(), radial_by_path_count(n, &edges));
    }

    #[test]
    fn synthetic_feeders_round_trip_through_json(nodes in 1usize..6, xfmrs in 1usize..30, slack in 0.95f64..1.05) {
        let spec = SynthSpec { trunk_nodes: nodes, transformers: xfmrs, slack_voltage_pu: slack, ..SynthSpec::default() };
        let feeder = synthetic_feeder(&spec);
        feeder.validate().unwrap();
        let back = FeederModel::from_json_str(&feeder.to_json_string()).unwrap();
        prop_assert_eq!(back, feeder);
    }
}

#[test]
fn shipped_fixtures_are_valid() {
    let f = load_feeder(&fixture("synth-r1.json")).unwrap();
    assert_eq!((f.houses.len(), f.transformers.len()), (120, 40));
    check_radial(&f).unwrap();
    let s = load_feeder(&fixture("synth-stressed.json")).unwrap();
    assert_eq!((s.houses.len(), s.transformers.len()), (120, 24));
}

#[test]
fn populate_to_target_lands_in_band() {
    let weather = TimeSeries::load_weather(&fixture("weather.csv")).unwrap();
    let spec = SynthSpec { transformers: 12, capacitor_kvar_per_phase: 0.0, ..SynthSpec::default() };
    let empty = synthetic_feeder(&spec);
    let config = PopulatorConfig::default();
    let out = populate_houses(&empty, 100.0, &config, &weather).unwrap();
    let peak = scan_peak(&out.feeder, &weather, config.seed).unwrap().peak_kva;
    assert!((90.0..=100.0).contains(&peak), "peak {peak:.2} kVA");
    assert!((peak - out.achieved_peak_kva).abs() < 1e-9);

    let again = populate_houses(&empty, 100.0, &config, &weather).unwrap();
    assert_eq!(again.feeder.to_json_string(), out.feeder.to_json_string());

    let identity = populate_houses(&out.feeder, peak, &config, &weather).unwrap();
    assert_eq!(identity.houses_added, 0);
    assert_eq!(identity.feeder, out.feeder);
}
