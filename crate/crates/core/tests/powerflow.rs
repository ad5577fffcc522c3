//! Sweep solver against a dense Newton solve of the nodal current-balance
//! equations, and an independent power-balance residual on the shipped fixture.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tclgrid::netmodel::{load_feeder, Bus, DistributionTransformer, FeederModel, LineSegment, Phase, SCHEMA_VERSION};
use tclgrid::powerflow::{BusLoad, Network, PhaseLoad, PowerFlowSolution, SolveOptions, S_BASE_KVA};

/// One branch as the oracle sees it: per-unit series impedance and ideal ratio.
struct Edge {
    from: usize,
    to: usize,
    z: Complex64,
    tap: f64,
    phases: Vec<usize>,
}

/// Edges rebuilt from the raw feeder data with the documented per-unit conventions.
fn oracle_edges(feeder: &FeederModel, net: &Network) -> Vec<Edge> {
    let mut base_v = vec![0.0; feeder.buses.len()];
    let slack = net.bus_index(&feeder.slack_bus).unwrap();
    base_v[slack] = feeder.nominal_voltage_v;
    let mut edges = Vec::new();
    // Buses are visited root-first so the sending-side base is always known.
    let mut pending: Vec<Edge> = Vec::new();
    for l in &feeder.lines {
        pending.push(Edge {
            from: net.bus_index(&l.from_bus).unwrap(),
            to: net.bus_index(&l.to_bus).unwrap(),
            z: Complex64::new(l.r_ohm, l.x_ohm),
            tap: 1.0,
            phases: l.phases.iter().map(|p| p.index()).collect(),
        });
    }
    for t in &feeder.transformers {
        let to = net.bus_index(&t.bus_secondary).unwrap();
        let n_ph = feeder.buses[to].phases.len() as f64;
        base_v[to] = t.secondary_voltage_v;
        edges.push(Edge {
            from: net.bus_index(&t.bus_primary).unwrap(),
            to,
            z: Complex64::new(t.r_pu, t.x_pu) * (S_BASE_KVA * n_ph / t.rating_kva),
            tap: t.tap,
            phases: feeder.buses[to].phases.iter().map(|p| p.index()).collect(),
        });
    }
    while !pending.is_empty() {
        let before = pending.len();
        pending.retain_mut(|e| {
            if base_v[e.from] > 0.0 {
                let z_base = base_v[e.from].powi(2) / (S_BASE_KVA * 1000.0);
                base_v[e.to] = base_v[e.from];
                e.z /= z_base;
                edges.push(Edge { from: e.from, to: e.to, z: e.z, tap: 1.0, phases: e.phases.clone() });
                false
            } else {
                true
            }
        });
        assert!(pending.len() < before, "lines unreachable from the slack");
    }
    edges
}

fn slack_voltages(feeder: &FeederModel) -> [Complex64; 3] {
    [0.0, -120.0, 120.0].map(|deg: f64| Complex64::from_polar(feeder.slack_voltage_pu, deg.to_radians()))
}

/// Complex power mismatch (p.u.) at every non-slack bus-phase for voltages `v`.
fn mismatch(
    edges: &[Edge],
    loads: &[BusLoad],
    v: &[[Complex64; 3]],
    slack: usize,
    present: &[[bool; 3]],
) -> Vec<(usize, usize, Complex64)> {
    let n = v.len();
    let mut injected = vec![[Complex64::new(0.0, 0.0); 3]; n];
    for e in edges {
        for &p in &e.phases {
            let i = (v[e.from][p] * e.tap - v[e.to][p]) / e.z;
            injected[e.to][p] += i;
            injected[e.from][p] -= i * e.tap;
        }
    }
    let mut out = Vec::new();
    for b in 0..n {
        if b == slack {
            continue;
        }
        for p in 0..3 {
            if !present[b][p] {
                continue;
            }
            let demand = loads[b][p].demand_kva(v[b][p].norm()) / S_BASE_KVA;
            out.push((b, p, v[b][p] * injected[b][p].conj() - demand));
        }
    }
    out
}

fn presence(feeder: &FeederModel, net: &Network) -> Vec<[bool; 3]> {
    let mut present = vec![[false; 3]; feeder.buses.len()];
    for b in &feeder.buses {
        let k = net.bus_index(&b.id).unwrap();
        for p in &b.phases {
            present[k][p.index()] = true;
        }
    }
    present
}

/// Dense Newton solve in rectangular coordinates with a finite-difference Jacobian.
fn newton_oracle(feeder: &FeederModel, net: &Network, loads: &[BusLoad]) -> Vec<[Complex64; 3]> {
    let edges = oracle_edges(feeder, net);
    let present = presence(feeder, net);
    let slack = net.bus_index(&feeder.slack_bus).unwrap();
    let sv = slack_voltages(feeder);
    let n = feeder.buses.len();
    let mut v = vec![[Complex64::new(0.0, 0.0); 3]; n];
    for b in 0..n {
        for p in 0..3 {
            if present[b][p] {
                v[b][p] = sv[p];
            }
        }
    }
    let unknowns: Vec<(usize, usize)> =
        (0..n).filter(|&b| b != slack).flat_map(|b| (0..3).map(move |p| (b, p))).filter(|&(b, p)| present[b][p]).collect();
    let m = unknowns.len();
    let residual = |v: &[[Complex64; 3]]| -> DVector<f64> {
        let r = mismatch(&edges, loads, v, slack, &present);
        DVector::from_iterator(2 * m, r.iter().flat_map(|(_, _, s)| [s.re, s.im]))
    };
    for _ in 0..50 {
        let f = residual(&v);
        if f.amax() < 1e-14 {
            break;
        }
        let mut jac = DMatrix::<f64>::zeros(2 * m, 2 * m);
        let h = 1e-7;
        for (col, &(b, p)) in unknowns.iter().enumerate() {
            for (part, delta) in [(0, Complex64::new(h, 0.0)), (1, Complex64::new(0.0, h))] {
                let mut vp = v.clone();
                vp[b][p] += delta;
                let mut vm = v.clone();
                vm[b][p] -= delta;
                let d = (residual(&vp) - residual(&vm)) / (2.0 * h);
                jac.set_column(2 * col + part, &d);
            }
        }
        let step = jac.lu().solve(&(-f)).expect("nonsingular Jacobian");
        for (col, &(b, p)) in unknowns.iter().enumerate() {
            v[b][p] += Complex64::new(step[2 * col], step[2 * col + 1]);
        }
    }
    v
}

fn small_feeder(tap: f64) -> FeederModel {
    let abc = Phase::ALL.to_vec();
    let bus = |id: &str, phases: Vec<Phase>, svc: bool| Bus { id: id.into(), phases, is_service_node: svc };
    let line = |id: &str, from: &str, to: &str, phases: Vec<Phase>, r: f64, x: f64| LineSegment {
        id: id.into(),
        from_bus: from.into(),
        to_bus: to.into(),
        phases,
        r_ohm: r,
        x_ohm: x,
        ampacity_a: 400.0,
        length_m: 1000.0,
    };
    let xfmr = |id: &str, from: &str, to: &str, kva: f64| DistributionTransformer {
        id: id.into(),
        bus_primary: from.into(),
        bus_secondary: to.into(),
        rating_kva: kva,
        secondary_voltage_v: 240.0,
        r_pu: 0.015,
        x_pu: 0.025,
        tap,
        thermal: None,
        planning_load_kva: None,
    };
    FeederModel {
        schema_version: SCHEMA_VERSION,
        name: "eight-bus".into(),
        nominal_voltage_v: 7200.0,
        slack_bus: "sub".into(),
        slack_voltage_pu: 1.02,
        buses: vec![
            bus("sub", abc.clone(), false),
            bus("n1", abc.clone(), false),
            bus("n2", abc.clone(), false),
            bus("la", vec![Phase::A], false),
            bus("lc", vec![Phase::C], false),
            bus("sa", vec![Phase::A], true),
            bus("sc", vec![Phase::C], true),
            bus("n3", vec![Phase::B, Phase::C], false),
        ],
        lines: vec![
            line("t1", "sub", "n1", abc.clone(), 0.6, 1.1),
            line("t2", "n1", "n2", abc, 0.8, 0.9),
            line("l1", "n1", "la", vec![Phase::A], 1.2, 0.6),
            line("l2", "n2", "lc", vec![Phase::C], 0.9, 0.5),
            line("l3", "n2", "n3", vec![Phase::B, Phase::C], 1.5, 0.7),
        ],
        transformers: vec![xfmr("xa", "la", "sa", 25.0), xfmr("xc", "lc", "sc", 37.5)],
        capacitors: vec![],
        fuses: vec![],
        loads: vec![],
        houses: vec![],
    }
}

fn random_loads(feeder: &FeederModel, net: &Network, rng: &mut ChaCha8Rng) -> Vec<BusLoad> {
    let mut loads = vec![[PhaseLoad::default(); 3]; feeder.buses.len()];
    for b in &feeder.buses {
        let k = net.bus_index(&b.id).unwrap();
        if k == net.bus_index(&feeder.slack_bus).unwrap() {
            continue;
        }
        for p in &b.phases {
            let scale = if b.is_service_node { 20.0 } else { 60.0 };
            let mut s = || Complex64::new(rng.random_range(0.0..scale), rng.random_range(-0.2 * scale..0.5 * scale));
            loads[k][p.index()] = PhaseLoad { power: s(), current: s() * 0.3, impedance: s() * 0.3 };
        }
    }
    loads
}

fn max_voltage_gap(sol: &PowerFlowSolution, oracle: &[[Complex64; 3]]) -> f64 {
    sol.voltages.iter().zip(oracle).flat_map(|(a, b)| (0..3).map(move |p| (a[p] - b[p]).norm())).fold(0.0, f64::max)
}

#[test]
fn sweep_matches_dense_newton_on_small_feeders() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let opts = SolveOptions { tolerance: 1e-12, max_iter: 200 };
    for case in 0..20 {
        let tap = [1.0, 1.025, 0.975][case % 3];
        let feeder = small_feeder(tap);
        feeder.validate().unwrap();
        let net = Network::new(&feeder).unwrap();
        let loads = random_loads(&feeder, &net, &mut rng);
        let sol = net.solve(&loads, &opts).unwrap();
        assert!(sol.converged);
        let oracle = newton_oracle(&feeder, &net, &loads);
        let gap = max_voltage_gap(&sol, &oracle);
        assert!(gap < 1e-8, "case {case}: sweep and Newton differ by {gap:.3e} p.u.");
    }
}

#[test]
fn fixture_solution_balances_power_at_every_bus() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synth-r1.json");
    let feeder = load_feeder(&path).unwrap();
    let net = Network::new(&feeder).unwrap();
    let mut loads = vec![[PhaseLoad::default(); 3]; feeder.buses.len()];
    for h in &feeder.houses {
        let k = net.bus_index(&h.bus).unwrap();
        let (p, q) = h.zip.nominal_pq();
        let l = &mut loads[k][h.phase.index()];
        l.add(&PhaseLoad::constant_power(h.hvac.p_elec, h.hvac.q_elec()));
        l.add(&PhaseLoad { impedance: Complex64::new(p, q), ..PhaseLoad::default() });
    }
    let opts = SolveOptions::default();
    let sol = net.solve(&loads, &opts).unwrap();
    let edges = oracle_edges(&feeder, &net);
    let slack = net.bus_index(&feeder.slack_bus).unwrap();
    let worst = mismatch(&edges, &loads, &sol.voltages, slack, &presence(&feeder, &net))
        .iter()
        .map(|(_, _, s)| s.norm())
        .fold(0.0, f64::max);
    assert!(worst < 10.0 * opts.tolerance, "worst bus mismatch {worst:.3e} p.u.");
}
