//! Scenario orchestration: warm-up, base and regulation cases, signal
//! scaling, peak-hour selection, EV overlays and the randomized-trial study.
//!
//! Time runs on the weather series' axis (seconds). A case simulates the
//! warm-up window before the test hour, with the coarse step first and the
//! test step for the final part, then the test hour itself. Only the test
//! hour is monitored and recorded.

mod config;
mod sim;
mod studies;

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

pub use config::{Case, ControllerConfig, EvMode, Scenario, ScenarioConfig};
pub use sim::Event;
pub use studies::{
    find_test_hour, run_ev_study, run_pair, run_randomization_study, run_randomization_with_seeds, trial_seeds,
    EvRow, EvStudy, Pair, RandomizationSummary,
};

use crate::hvac::HvacError;
use crate::monitor::{Clock, ConstraintLimits, NodeExcursions, Violation, ViolationLog};
use crate::netmodel::{FeederModel, ModelError};
use crate::powerflow::{voltage_sensitivity, DistFlowLine, PowerFlowError, PowerFlowSolution};
use crate::rng::{self, Domain};
use crate::series::{SeriesError, TimeSeries};
use crate::transformer::{average_aging_rate, ThermalError};
use sim::{saturated_duty, Simulator};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("scenario config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("network: {0}")]
    Network(#[from] PowerFlowError),
    #[error("regulation signal: {0}")]
    Signal(String),
    #[error("house model: {0}")]
    Hvac(#[from] HvacError),
    #[error("transformer model: {0}")]
    Thermal(#[from] ThermalError),
    #[error("power flow failed at step {step} (t = {time_s} s): {source}")]
    PowerFlow {
        step: usize,
        time_s: f64,
        #[source]
        source: PowerFlowError,
    },
}

impl EngineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    /// True for problems with the inputs rather than with the simulation itself.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Self::PowerFlow { .. } | Self::Hvac(_) | Self::Thermal(_))
    }
}

/// One recorded test-hour step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    /// End of the step, weather time, seconds.
    pub time_s: f64,
    /// Aggregate AC real power after dispatch, kW.
    pub ac_kw: f64,
    pub desired_kw: Option<f64>,
    pub u: f64,
    /// Units eligible to switch in the commanded direction.
    pub available: usize,
    pub switched: usize,
    pub head_kw: f64,
    pub head_kva: f64,
}

/// Voltage magnitude samples at one monitored node-phase, p.u.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSeries {
    pub id: String,
    pub samples: Vec<f64>,
}

impl NodeSeries {
    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Population standard deviation.
    pub fn std_dev(&self) -> f64 {
        let m = self.mean();
        (self.samples.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformerSummary {
    pub id: String,
    pub rating_kva: f64,
    pub mean_load_pu: f64,
    /// Test-hour average aging acceleration factor.
    pub mean_aging_factor: f64,
    pub max_hot_spot_c: f64,
    /// Mean natural duty cycle of the attached air conditioners.
    pub mean_duty: f64,
    pub houses: usize,
}

/// DistFlow sensitivity of the monitored line at one step, averaged over its phases.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivitySample {
    pub time_s: f64,
    pub p_pu: f64,
    pub q_pu: f64,
    pub v_send_pu: f64,
    pub q_term: f64,
    pub p_term: f64,
    pub v_term: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub case: Case,
    pub ev_mode: EvMode,
    pub seed: u64,
    pub test_hour_start_s: f64,
    pub dt_s: f64,
    pub baseline_kw: Option<f64>,
    pub mean_on_power_kw: f64,
    pub steps: Vec<StepRecord>,
    pub nodes: Vec<NodeSeries>,
    pub transformers: Vec<TransformerSummary>,
    pub violations: Vec<Violation>,
    pub node_excursions: BTreeMap<String, NodeExcursions>,
    pub max_unbalance_pct: BTreeMap<String, f64>,
    pub events: Vec<Event>,
    pub monitored_line: Option<String>,
    pub sensitivity: Vec<SensitivitySample>,
    pub ev_houses: Vec<String>,
    pub house_duty: Vec<f64>,
}

impl TrialResult {
    pub fn mean_ac_kw(&self) -> f64 {
        self.steps.iter().map(|s| s.ac_kw).sum::<f64>() / self.steps.len() as f64
    }

    /// AC energy over the test hour, kWh.
    pub fn energy_kwh(&self) -> f64 {
        self.steps.iter().map(|s| s.ac_kw).sum::<f64>() * self.dt_s / 3600.0
    }

    /// RMS tracking error as a percentage of the baseline; `None` for base cases.
    pub fn tracking_rms_pct(&self) -> Option<f64> {
        let base = self.baseline_kw?;
        let sq: f64 = self.steps.iter().filter_map(|s| s.desired_kw.map(|d| (s.ac_kw - d).powi(2))).sum();
        Some(100.0 * (sq / self.steps.len() as f64).sqrt() / base)
    }

    /// Percentage of monitored nodes outside the continuous band at any step.
    pub fn over_limit_pct_any(&self) -> f64 {
        let n = self.node_excursions.values().filter(|e| e.steps_above + e.steps_below > 0).count();
        100.0 * n as f64 / self.node_excursions.len().max(1) as f64
    }

    /// Percentage of monitored nodes outside the continuous band for longer than the dwell time.
    pub fn over_limit_pct_sustained(&self, limits: &ConstraintLimits) -> f64 {
        let d = limits.v_cont_duration_s;
        let n = self.node_excursions.values().filter(|e| e.longest_above_s > d || e.longest_below_s > d).count();
        100.0 * n as f64 / self.node_excursions.len().max(1) as f64
    }

    pub fn mean_sensitivity(&self) -> Option<f64> {
        if self.sensitivity.is_empty() {
            return None;
        }
        Some(self.sensitivity.iter().map(|s| s.total).sum::<f64>() / self.sensitivity.len() as f64)
    }
}

/// Desired aggregate power for each of `times` (relative to the test-hour start).
///
/// The signal is sampled at `times`, shifted to zero mean over those samples
/// and scaled so its largest magnitude is `scale`; the mean of the result is
/// therefore exactly `baseline_kw`.
pub fn scale_regulation_signal(
    raw: &TimeSeries,
    baseline_kw: f64,
    scale: f64,
    times: &[f64],
) -> Result<Vec<f64>, EngineError> {
    if !(baseline_kw > 0.0) {
        return Err(EngineError::Signal(format!("baseline must be > 0 kW, got {baseline_kw}")));
    }
    if !(scale > 0.0) {
        return Err(EngineError::Signal(format!("scale must be > 0, got {scale}")));
    }
    if times.is_empty() {
        return Err(EngineError::Signal("no sample times".into()));
    }
    let s: Vec<f64> = times.iter().map(|&t| raw.at(t)).collect();
    if s.iter().all(|v| *v == 0.0) {
        return Err(EngineError::Signal("signal is identically zero over the test hour".into()));
    }
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let peak = s.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    let raw_peak = s.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if peak <= 1e-12 * raw_peak {
        return Ok(vec![baseline_kw; s.len()]);
    }
    Ok(s.iter().map(|v| baseline_kw * (1.0 + scale * (v - mean) / peak)).collect())
}

/// Outcome of an uncontrolled peak-hour scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakScan {
    pub hour_start_s: f64,
    pub peak_kva: f64,
    /// Hour-mean feeder-head apparent power for each whole hour of the series.
    pub hourly_kva: Vec<f64>,
}

pub const SCAN_STEP_S: f64 = 30.0;

/// Uncontrolled scan over the whole weather series with 30 s steps; the
/// hour with the largest mean feeder-head apparent power wins, earliest on ties.
pub fn scan_peak(feeder: &FeederModel, weather: &TimeSeries, seed: u64) -> Result<PeakScan, EngineError> {
    let config = ScenarioConfig::default();
    let start = weather.start();
    let hours = ((weather.end() - start) / 3600.0 + 1e-9).floor() as usize;
    if hours == 0 {
        return Err(EngineError::Config("weather series must cover at least one hour".into()));
    }
    let mut sim = Simulator::new(feeder, &config, seed, weather.at(start))?;
    let per_hour = (3600.0 / SCAN_STEP_S).round() as usize;
    let mut hourly_kva = Vec::with_capacity(hours);
    for h in 0..hours {
        let mut sum = 0.0;
        for k in 0..per_hour {
            let t_end = start + h as f64 * 3600.0 + (k + 1) as f64 * SCAN_STEP_S;
            let amb = weather.at(t_end);
            sim.step_houses(SCAN_STEP_S, t_end, amb)?;
            let sol = sim.solve(t_end)?;
            sim.after_solve(&sol, t_end, SCAN_STEP_S, amb, false)?;
            sum += sol.head_power_kva.norm();
            sim.step_index += 1;
        }
        hourly_kva.push(sum / per_hour as f64);
    }
    let mut best = 0;
    for (h, &v) in hourly_kva.iter().enumerate() {
        if v > hourly_kva[best] {
            best = h;
        }
    }
    Ok(PeakScan { hour_start_s: start + best as f64 * 3600.0, peak_kva: hourly_kva[best], hourly_kva })
}

/// Start of the peak hour, weather time.
pub fn find_peak_hour(feeder: &FeederModel, weather: &TimeSeries, seed: u64) -> Result<f64, EngineError> {
    scan_peak(feeder, weather, seed).map(|s| s.hour_start_s)
}

/// Houses owning an EV: the `round(penetration * N)` houses with the smallest seeded draws.
pub fn select_ev_houses(feeder: &FeederModel, penetration: f64, seed: u64) -> Vec<usize> {
    let n = feeder.houses.len();
    let count = (penetration * n as f64).round() as usize;
    let mut order: Vec<(f64, usize)> =
        (0..n).map(|i| (rng::uniform_at(seed, Domain::EvSelection, i as u64, 0), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = order.into_iter().take(count).map(|(_, i)| i).collect();
    chosen.sort_unstable();
    chosen
}

/// What to run: the case, trial seed and, for regulation, the desired power per test step.
#[derive(Debug, Clone)]
pub struct CaseSpec {
    pub case: Case,
    pub trial_seed: u64,
    pub test_hour_start_s: f64,
    pub baseline_kw: Option<f64>,
    pub desired_kw: Option<Vec<f64>>,
}

/// Test-hour step end times relative to the hour start.
pub fn test_step_times(dt: f64) -> Vec<f64> {
    let n = (3600.0 / dt).round() as usize;
    (1..=n).map(|k| k as f64 * dt).collect()
}

/// Simulate one case. Regulation cases need `desired_kw`.
pub fn simulate(scenario: &Scenario, spec: &CaseSpec) -> Result<TrialResult, EngineError> {
    let cfg = &scenario.config;
    let feeder = &scenario.feeder;
    let weather = &scenario.weather;
    let t0 = spec.test_hour_start_s;
    let warm_coarse = cfg.warmup_coarse_h * 3600.0;
    let warm_fine = cfg.warmup_fine_h * 3600.0;
    let warm_start = t0 - warm_coarse - warm_fine;

    let mut sim = Simulator::new(feeder, cfg, spec.trial_seed, weather.at(warm_start))?;
    let ev_houses = select_ev_houses(feeder, cfg.ev_penetration, cfg.seed);
    if cfg.ev_mode != EvMode::None {
        for &i in &ev_houses {
            sim.houses[i].ev = true;
        }
    }

    // Warm-up: natural thermostat operation, thermals running, nothing recorded.
    let mut on_power_sum = 0.0;
    let mut on_power_weight = 0.0;
    let segments = [(warm_start, warm_coarse, cfg.dt_warmup_s), (warm_start + warm_coarse, warm_fine, cfg.dt_test_s)];
    for (seg_start, length, dt) in segments {
        let n = (length / dt).round() as usize;
        for k in 0..n {
            let t_end = seg_start + (k + 1) as f64 * dt;
            let amb = weather.at(t_end);
            sim.step_houses(dt, t_end, amb)?;
            let sol = sim.solve(t_end)?;
            sim.after_solve(&sol, t_end, dt, amb, true)?;
            if t_end > t0 - 3600.0 {
                let (p, n_on) = sim.ac_power();
                if n_on > 0 {
                    on_power_sum += dt * p / n_on as f64;
                    on_power_weight += dt;
                }
            }
            sim.step_index += 1;
        }
    }
    let mean_on_power_kw = if on_power_weight > 0.0 {
        on_power_sum / on_power_weight
    } else {
        sim.houses.iter().map(|h| h.params.p_elec).sum::<f64>() / sim.houses.len().max(1) as f64
    };

    let amb0 = weather.at(t0);
    let house_duty = sim
        .houses
        .iter()
        .map(|h| saturated_duty(&h.params, amb0, h.gain_kw))
        .collect::<Result<Vec<f64>, HvacError>>()?;

    sim.ev_kw = cfg.ev_mode.sign() * cfg.ev_power_kw;
    if spec.case == Case::Regulation && spec.desired_kw.is_none() {
        return Err(EngineError::Config("regulation case requires a desired-power trajectory".into()));
    }

    // Monitored node-phases: service nodes.
    let net = &sim.net;
    let mut monitored: Vec<(usize, usize, String)> = Vec::new();
    for b in feeder.buses.iter().filter(|b| b.is_service_node) {
        let k = net.bus_index(&b.id).expect("bus");
        for p in &b.phases {
            let id = if b.phases.len() == 1 { b.id.clone() } else { format!("{}.{}", b.id, p) };
            monitored.push((k, p.index(), id));
        }
    }
    let three_phase: Vec<(usize, String)> = feeder
        .buses
        .iter()
        .filter(|b| b.phases.len() == 3)
        .map(|b| (net.bus_index(&b.id).expect("bus"), b.id.clone()))
        .collect();
    let monitored_line = cfg
        .monitored_line
        .as_ref()
        .map(|id| feeder.lines.iter().position(|l| &l.id == id).expect("validated monitored line"));

    let aged_start: Vec<f64> = sim.xfmrs.iter().map(|x| x.state.as_ref().map_or(0.0, |s| s.minutes_aged)).collect();
    let dt = cfg.dt_test_s;
    let rel_times = test_step_times(dt);
    let n_steps = rel_times.len();
    let mut log = ViolationLog::new();
    let mut steps = Vec::with_capacity(n_steps);
    let mut nodes: Vec<NodeSeries> =
        monitored.iter().map(|m| NodeSeries { id: m.2.clone(), samples: Vec::with_capacity(n_steps) }).collect();
    let mut load_sum = vec![0.0; sim.xfmrs.len()];
    let mut hot_spot_max = vec![f64::NEG_INFINITY; sim.xfmrs.len()];
    let mut sensitivity = Vec::new();

    for (k, rel) in rel_times.iter().enumerate() {
        let t_end = t0 + rel;
        let amb = weather.at(t_end);
        sim.step_houses(dt, t_end, amb)?;
        let (u, available, switched, desired) = match (&spec.case, &spec.desired_kw) {
            (Case::Regulation, Some(d)) => {
                let (cmd, avail, sw) = sim.dispatch(
                    cfg.controller.gain,
                    mean_on_power_kw,
                    d[k],
                    t_end,
                    amb,
                    spec.trial_seed,
                    cfg.controller.mode,
                );
                (cmd.u, avail, sw, Some(d[k]))
            }
            _ => (0.0, 0, 0, None),
        };
        let (ac_kw, _) = sim.ac_power();
        let sol = sim.solve(t_end)?;
        let opened = sim.after_solve(&sol, t_end, dt, amb, true)?;

        let clock = Clock { time_s: t_end - dt, dt_s: dt };
        for (m, series) in monitored.iter().zip(nodes.iter_mut()) {
            let v = sol.voltage_magnitude(m.0, m.1);
            series.samples.push(v);
            if sol.energized[m.0] {
                log.check_voltage(&m.2, v, &cfg.limits, clock);
            }
        }
        for (bus, id) in &three_phase {
            if sol.energized[*bus] {
                let mags = [0, 1, 2].map(|p| sol.voltage_magnitude(*bus, p));
                log.check_unbalance(id, mags, &cfg.limits, clock);
            }
        }
        let xfmr_loads: Vec<(&str, f64)> = sim
            .xfmrs
            .iter()
            .enumerate()
            .map(|(j, x)| (x.id.as_str(), sol.transformer_kva[j] / x.rating_kva))
            .collect();
        for (j, (_, l)) in xfmr_loads.iter().enumerate() {
            load_sum[j] += l;
            if let Some(s) = &sim.xfmrs[j].state {
                hot_spot_max[j] = hot_spot_max[j].max(s.hot_spot(amb));
            }
        }
        let line_loads: Vec<(&str, f64)> = feeder
            .lines
            .iter()
            .enumerate()
            .map(|(j, l)| (l.id.as_str(), sol.line_currents_a[j].iter().cloned().fold(0.0, f64::max) / l.ampacity_a))
            .collect();
        log.check_thermal(xfmr_loads, line_loads, &cfg.limits, clock);
        for (id, pu) in opened {
            log.record_fuse_open(&id, pu, t_end);
        }
        if let Some(line) = monitored_line {
            if let Some(s) = line_sensitivity(&sim.net, &sol, line, cfg.sensitivity_power_factor, t_end) {
                sensitivity.push(s);
            }
        }

        steps.push(StepRecord {
            time_s: t_end,
            ac_kw,
            desired_kw: desired,
            u,
            available,
            switched,
            head_kw: sol.head_power_kva.re,
            head_kva: sol.head_power_kva.norm(),
        });
        sim.step_index += 1;
    }

    let by_xfmr = feeder.houses_by_transformer();
    let mut transformers = Vec::with_capacity(sim.xfmrs.len());
    for (j, x) in sim.xfmrs.iter().enumerate() {
        let end = x.state.as_ref().map_or(0.0, |s| s.minutes_aged);
        let mean_aging = average_aging_rate(aged_start[j], end, 3600.0);
        log.check_transformer_aging(&x.id, mean_aging, t0, t0 + 3600.0, &cfg.limits);
        let attached = &by_xfmr[j];
        let mean_duty = if attached.is_empty() {
            f64::NAN
        } else {
            attached.iter().map(|&i| house_duty[i]).sum::<f64>() / attached.len() as f64
        };
        transformers.push(TransformerSummary {
            id: x.id.clone(),
            rating_kva: x.rating_kva,
            mean_load_pu: load_sum[j] / n_steps as f64,
            mean_aging_factor: mean_aging,
            max_hot_spot_c: hot_spot_max[j],
            mean_duty,
            houses: attached.len(),
        });
    }

    Ok(TrialResult {
        case: spec.case,
        ev_mode: cfg.ev_mode,
        seed: spec.trial_seed,
        test_hour_start_s: t0,
        dt_s: dt,
        baseline_kw: spec.baseline_kw,
        mean_on_power_kw,
        steps,
        nodes,
        transformers,
        violations: log.records.clone(),
        node_excursions: log.node_excursions.clone().into_iter().collect(),
        max_unbalance_pct: log.max_unbalance_pct.clone().into_iter().collect(),
        events: sim.events.into_iter().filter(|e| e.time_s > t0).collect(),
        monitored_line: cfg.monitored_line.clone(),
        sensitivity,
        ev_houses: if cfg.ev_mode == EvMode::None {
            Vec::new()
        } else {
            ev_houses.iter().map(|&i| feeder.houses[i].id.clone()).collect()
        },
        house_duty,
    })
}

/// Per-phase DistFlow sensitivity of a line at the solved operating point, averaged over phases.
fn line_sensitivity(
    net: &crate::powerflow::Network,
    sol: &PowerFlowSolution,
    line: usize,
    pf: f64,
    time_s: f64,
) -> Option<SensitivitySample> {
    let to = net.line_downstream(line);
    let from = net.upstream(to)?;
    let z = net.branch_impedance(to)?;
    if !sol.energized[to] {
        return None;
    }
    let mut acc = [0.0; 7];
    let mut n = 0.0;
    for p in 0..3 {
        if !net.has_phase(to, p) {
            continue;
        }
        let s = sol.voltages[to][p] * sol.branch_currents[to][p].conj();
        let dl = DistFlowLine { v_send: sol.voltage_magnitude(from, p), r: z.re, x: z.im, p: s.re, q: s.im };
        let Ok(terms) = voltage_sensitivity(&dl, pf) else { continue };
        for (a, v) in acc.iter_mut().zip([s.re, s.im, dl.v_send, terms.q_term, terms.p_term, terms.v_term, terms.total()]) {
            *a += v;
        }
        n += 1.0;
    }
    if n == 0.0 {
        return None;
    }
    let m = acc.map(|a| a / n);
    Some(SensitivitySample {
        time_s,
        p_pu: m[0],
        q_pu: m[1],
        v_send_pu: m[2],
        q_term: m[3],
        p_term: m[4],
        v_term: m[5],
        total: m[6],
    })
}
