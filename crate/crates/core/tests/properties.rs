use std::path::Path;

use proptest::prelude::*;

use tclgrid::dispatch::{apply_dispatch, Candidate, DispatchCommand, DispatchMode};
use tclgrid::hvac::{natural_duty_cycle, step_house, HouseState};
use tclgrid::monitor::{unbalance_pct, Clock, ConstraintLimits, ViolationKind, ViolationLog};
use tclgrid::netmodel::load_feeder;
use tclgrid::transformer::{
    accumulate_aging, aging_rate, OilTimeConstant, ThermalModel, TransformerThermalState, XfmrThermalParams,
};

/// Maximal runs of `flags` as `(first, len)`.
fn runs(flags: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut k = 0;
    while k < flags.len() {
        if flags[k] {
            let start = k;
            while k < flags.len() && flags[k] {
                k += 1;
            }
            out.push((start, k - start));
        } else {
            k += 1;
        }
    }
    out
}

fn voltage_trace() -> impl Strategy<Value = Vec<f64>> {
    // Long blocks so that some excursions outlast the dwell time.
    proptest::collection::vec((prop_oneof![Just(1.0), Just(1.06), Just(0.93), Just(1.09), Just(0.88)], 1usize..90), 1..12)
        .prop_map(|blocks| blocks.into_iter().flat_map(|(v, n)| std::iter::repeat_n(v, n)).collect())
}

proptest! {
    #[test]
    fn continuous_violations_match_run_scan(trace in voltage_trace()) {
        let limits = ConstraintLimits::default();
        let dt = 2.0;
        let mut log = ViolationLog::new();
        for (k, &v) in trace.iter().enumerate() {
            log.check_voltage("n", v, &limits, Clock { time_s: k as f64 * dt, dt_s: dt });
        }
        for (kind, outside) in [
            (ViolationKind::VoltageContinuousHigh, trace.iter().map(|&v| v > limits.v_cont_hi).collect::<Vec<_>>()),
            (ViolationKind::VoltageContinuousLow, trace.iter().map(|&v| v < limits.v_cont_lo).collect()),
        ] {
            let expected: Vec<(f64, f64)> = runs(&outside)
                .into_iter()
                .filter(|&(_, len)| len as f64 * dt > limits.v_cont_duration_s)
                .map(|(s, len)| (s as f64 * dt, (s + len) as f64 * dt))
                .collect();
            let got: Vec<(f64, f64)> =
                log.records.iter().filter(|r| r.kind == kind).map(|r| (r.start_s, r.end_s)).collect();
            prop_assert_eq!(got, expected);
        }
        let emergency: Vec<(f64, f64)> = runs(&trace.iter().map(|&v| v > limits.v_emerg_hi).collect::<Vec<_>>())
            .into_iter()
            .map(|(s, len)| (s as f64 * dt, (s + len) as f64 * dt))
            .collect();
        let got: Vec<(f64, f64)> = log
            .records
            .iter()
            .filter(|r| r.kind == ViolationKind::VoltageEmergencyHigh)
            .map(|r| (r.start_s, r.end_s))
            .collect();
        prop_assert_eq!(got, emergency);
    }

    #[test]
    fn unbalance_is_permutation_and_scale_invariant(a in 0.8f64..1.2, b in 0.8f64..1.2, c in 0.8f64..1.2, s in 0.5f64..2.0) {
        let u = unbalance_pct([a, b, c]);
        for perm in [[b, a, c], [c, b, a], [a, c, b], [b, c, a], [c, a, b]] {
            prop_assert!((unbalance_pct(perm) - u).abs() < 1e-12);
        }
        prop_assert!((unbalance_pct([a * s, b * s, c * s]) - u).abs() < 1e-9);
        prop_assert!(u >= 0.0);
    }

    #[test]
    fn probabilistic_dispatch_selects_exactly_eligible_low_draws(
        units in proptest::collection::vec((any::<bool>(), any::<bool>(), 0.0f64..1.0), 0..200),
        u in -1.0f64..1.0,
    ) {
        let cands: Vec<Candidate> =
            units.iter().map(|&(on, available, draw)| Candidate { on, available, draw, margin: 0.0 }).collect();
        let chosen = apply_dispatch(&cands, &DispatchCommand { u, time_s: 0.0 }, DispatchMode::Probabilistic);
        let expected: Vec<usize> = cands
            .iter()
            .enumerate()
            .filter(|(_, c)| u != 0.0 && c.available && c.on != (u > 0.0) && c.draw < u.abs())
            .map(|(k, _)| k)
            .collect();
        prop_assert_eq!(chosen, expected);
    }

    #[test]
    fn aging_factor_is_monotone(a in -20.0f64..250.0, d in 1e-3f64..50.0) {
        prop_assert!(aging_rate(a + d) > aging_rate(a));
    }
}

#[test]
fn aging_rate_reference_values() {
    assert!((aging_rate(110.0) - 1.0).abs() < 1e-15);
    assert!((aging_rate(120.0) - 1.104_8).abs() < 1e-4);
}

#[test]
fn aging_accumulation_matches_trapezoidal_quadrature() {
    // Hot-spot trace sweeping through the reference temperature twice an hour.
    let theta = |t: f64| 105.0 + 12.0 * (t / 600.0).sin() + 4.0 * (t / 97.0).cos();
    let dt = 2.0;
    let mut state = TransformerThermalState::default();
    let mut trapezoid = 0.0;
    for k in 1..=1800 {
        let (t0, t1) = ((k - 1) as f64 * dt, k as f64 * dt);
        state = accumulate_aging(&state, aging_rate(theta(t1)), dt);
        trapezoid += 0.5 * (aging_rate(theta(t0)) + aging_rate(theta(t1))) * dt / 60.0;
    }
    assert!((state.minutes_aged / trapezoid - 1.0).abs() < 1e-3);
}

#[test]
fn cool_transformer_ages_slower_than_the_clock() {
    let params = XfmrThermalParams::for_rating(25.0).unwrap();
    let model = ThermalModel::new(params.clone(), 25.0, OilTimeConstant::LoadDependent).unwrap();
    let mut state = TransformerThermalState::steady(&params, 0.4, 25.0);
    for _ in 0..1800 {
        state = model.step(&state, 0.4, 25.0, 2.0).unwrap();
        assert!(state.hot_spot(25.0) < 110.0);
    }
    assert!(state.minutes_aged < 60.0);
}

#[test]
fn square_wave_load_matches_fine_step_reference() {
    for rating in [15.0, 25.0, 50.0] {
        let params = XfmrThermalParams::for_rating(rating).unwrap();
        let model = ThermalModel::new(params, rating, OilTimeConstant::LoadDependent).unwrap();
        let load = |t: f64| if ((t / 900.0).floor() as i64) % 2 == 0 { 0.5 } else { 1.5 };
        let (coarse_dt, fine_dt) = (60.0, 6.0);
        let mut coarse = TransformerThermalState::default();
        let mut fine = TransformerThermalState::default();
        let mut worst: f64 = 0.0;
        for k in 0..(6 * 60) {
            let t = k as f64 * coarse_dt;
            coarse = model.step(&coarse, load(t), 32.0, coarse_dt).unwrap();
            for j in 0..10 {
                fine = model.step(&fine, load(t + j as f64 * fine_dt), 32.0, fine_dt).unwrap();
            }
            worst = worst.max((coarse.hot_spot(32.0) - fine.hot_spot(32.0)).abs());
        }
        assert!(worst < 0.05, "{rating} kVA: {worst:.4} °C");
    }
}

#[test]
fn duty_cycle_matches_long_uncontrolled_run() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synth-r1.json");
    let feeder = load_feeder(&path).unwrap();
    let amb = 35.0;
    for house in feeder.houses.iter().step_by(15) {
        let p = &house.hvac;
        let gain = house.internal_gain_kw;
        let d = natural_duty_cycle(p, amb, gain).unwrap().duty;
        let (theta, theta_m) = (p.deadband_mid(), p.deadband_mid() + (1.0 - p.r_gain) * gain / p.h_m);
        let mut s = HouseState::new(theta, theta_m, false);
        let dt = 1.0;
        // Settle for two hours, then measure four.
        for k in 0..7200 {
            s = step_house(p, &s, amb, gain, dt, k as f64).unwrap();
        }
        let mut on = 0usize;
        let n = 4 * 3600;
        for k in 0..n {
            s = step_house(p, &s, amb, gain, dt, k as f64).unwrap();
            on += s.on as usize;
        }
        let measured = on as f64 / n as f64;
        assert!((measured - d).abs() < 0.02, "{}: analytic {d:.4}, simulated {measured:.4}", house.id);
    }
}
