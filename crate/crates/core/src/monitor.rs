//! Network constraint monitoring with duration-aware violation logs.
//!
//! Continuous voltage limits only count as violated after an uninterrupted
//! excursion longer than the dwell time; every other limit is instantaneous.
//! Consecutive over-limit steps of one component and kind are merged into a
//! single record whose end time and worst value are extended in place, so the
//! log only ever grows.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintLimits {
    pub v_cont_lo: f64,
    pub v_cont_hi: f64,
    /// Continuous-band excursions must exceed this to count, seconds.
    pub v_cont_duration_s: f64,
    pub v_emerg_lo: f64,
    pub v_emerg_hi: f64,
    /// Maximum voltage unbalance, percent.
    pub unbalance_max_pct: f64,
    /// Transformer apparent power limit, per unit of rating.
    pub xfmr_power_max_pu: f64,
    /// Limit on the window-average aging factor.
    pub xfmr_aging_avg_max: f64,
    /// Line current limit, per unit of ampacity.
    pub line_current_max_pu: f64,
}

impl Default for ConstraintLimits {
    fn default() -> Self {
        Self {
            v_cont_lo: 0.95,
            v_cont_hi: 1.05,
            v_cont_duration_s: 120.0,
            v_emerg_lo: 0.90,
            v_emerg_hi: 1.083,
            unbalance_max_pct: 3.0,
            xfmr_power_max_pu: 2.0,
            xfmr_aging_avg_max: 1.0,
            line_current_max_pu: 1.0,
        }
    }
}

impl ConstraintLimits {
    /// The emergency band must strictly contain the continuous band.
    pub fn is_consistent(&self) -> bool {
        self.v_emerg_lo < self.v_cont_lo && self.v_cont_lo < self.v_cont_hi && self.v_cont_hi < self.v_emerg_hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    VoltageContinuousHigh,
    VoltageContinuousLow,
    VoltageEmergencyHigh,
    VoltageEmergencyLow,
    Unbalance,
    TransformerPower,
    TransformerAging,
    LineCurrent,
    FuseOpen,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::VoltageContinuousHigh => "voltage_continuous_high",
            Self::VoltageContinuousLow => "voltage_continuous_low",
            Self::VoltageEmergencyHigh => "voltage_emergency_high",
            Self::VoltageEmergencyLow => "voltage_emergency_low",
            Self::Unbalance => "unbalance",
            Self::TransformerPower => "transformer_power",
            Self::TransformerAging => "transformer_aging",
            Self::LineCurrent => "line_current",
            Self::FuseOpen => "fuse_open",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub component_id: String,
    pub kind: ViolationKind,
    pub start_s: f64,
    pub end_s: f64,
    /// Worst value seen: p.u. voltage, percent unbalance, per-unit loading or aging factor.
    pub worst_value: f64,
}

impl Violation {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Simulation clock for one sample: the sample covers `[time_s, time_s + dt_s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clock {
    pub time_s: f64,
    pub dt_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Excursion {
    start_s: f64,
    steps: usize,
    worst: f64,
    /// Index into the log once the excursion qualifies as a violation.
    record: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Band {
    High,
    Low,
}

/// Per-node summary of voltage excursions, used for the over-limit node tables.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeExcursions {
    pub steps_above: usize,
    pub steps_below: usize,
    /// Longest uninterrupted run above the continuous upper limit, seconds.
    pub longest_above_s: f64,
    pub longest_below_s: f64,
}

/// Violation log plus the open dwell timers and merge state behind it.
#[derive(Debug, Clone, Default)]
pub struct ViolationLog {
    pub records: Vec<Violation>,
    continuous: HashMap<(String, Band), Excursion>,
    instantaneous: HashMap<(String, ViolationKind), (usize, f64)>,
    pub node_excursions: HashMap<String, NodeExcursions>,
    pub max_unbalance_pct: HashMap<String, f64>,
}

impl ViolationLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    /// Record or extend an instantaneous violation for this step.
    fn instant(&mut self, id: &str, kind: ViolationKind, clock: Clock, value: f64, worse: fn(f64, f64) -> bool) {
        let end = clock.time_s + clock.dt_s;
        let key = (id.to_string(), kind);
        if let Some(&(k, last_end)) = self.instantaneous.get(&key) {
            if (last_end - clock.time_s).abs() <= 1e-9 * clock.dt_s.max(1.0) {
                let rec = &mut self.records[k];
                rec.end_s = end;
                if worse(value, rec.worst_value) {
                    rec.worst_value = value;
                }
                self.instantaneous.insert(key, (k, end));
                return;
            }
        }
        self.records.push(Violation {
            component_id: id.to_string(),
            kind,
            start_s: clock.time_s,
            end_s: end,
            worst_value: value,
        });
        self.instantaneous.insert(key, (self.records.len() - 1, end));
    }

    /// Voltage checks for one node-phase sample `v` (p.u.).
    pub fn check_voltage(&mut self, node: &str, v: f64, limits: &ConstraintLimits, clock: Clock) {
        let high = v > limits.v_cont_hi;
        let low = v < limits.v_cont_lo;
        let summary = self.node_excursions.entry(node.to_string()).or_default();
        if high {
            summary.steps_above += 1;
        }
        if low {
            summary.steps_below += 1;
        }
        self.dwell(node, Band::High, high, v, limits, clock);
        self.dwell(node, Band::Low, low, v, limits, clock);
        if v > limits.v_emerg_hi {
            self.instant(node, ViolationKind::VoltageEmergencyHigh, clock, v, |a, b| a > b);
        }
        if v < limits.v_emerg_lo {
            self.instant(node, ViolationKind::VoltageEmergencyLow, clock, v, |a, b| a < b);
        }
    }

    fn dwell(&mut self, node: &str, band: Band, outside: bool, v: f64, limits: &ConstraintLimits, clock: Clock) {
        let key = (node.to_string(), band);
        if !outside {
            self.continuous.remove(&key);
            return;
        }
        let worse = |a: f64, b: f64| if band == Band::High { a > b } else { a < b };
        let exc = self.continuous.entry(key).or_insert(Excursion {
            start_s: clock.time_s,
            steps: 0,
            worst: v,
            record: None,
        });
        exc.steps += 1;
        if worse(v, exc.worst) {
            exc.worst = v;
        }
        let duration = exc.steps as f64 * clock.dt_s;
        let end = clock.time_s + clock.dt_s;
        let summary = self.node_excursions.get_mut(node).expect("summary created above");
        let longest = if band == Band::High { &mut summary.longest_above_s } else { &mut summary.longest_below_s };
        *longest = longest.max(duration);
        if duration > limits.v_cont_duration_s {
            let kind = if band == Band::High {
                ViolationKind::VoltageContinuousHigh
            } else {
                ViolationKind::VoltageContinuousLow
            };
            match exc.record {
                Some(k) => {
                    self.records[k].end_s = end;
                    self.records[k].worst_value = exc.worst;
                }
                None => {
                    self.records.push(Violation {
                        component_id: node.to_string(),
                        kind,
                        start_s: exc.start_s,
                        end_s: end,
                        worst_value: exc.worst,
                    });
                    exc.record = Some(self.records.len() - 1);
                }
            }
        }
    }

    /// Unbalance check for a three-phase node given its phase magnitudes.
    pub fn check_unbalance(&mut self, node: &str, magnitudes: [f64; 3], limits: &ConstraintLimits, clock: Clock) {
        let pct = unbalance_pct(magnitudes);
        let max = self.max_unbalance_pct.entry(node.to_string()).or_insert(0.0);
        *max = max.max(pct);
        if pct > limits.unbalance_max_pct {
            self.instant(node, ViolationKind::Unbalance, clock, pct, |a, b| a > b);
        }
    }

    /// Instantaneous transformer apparent-power check; `loading_pu` is kVA over rating.
    pub fn check_transformer_power(&mut self, id: &str, loading_pu: f64, limits: &ConstraintLimits, clock: Clock) {
        if loading_pu > limits.xfmr_power_max_pu {
            self.instant(id, ViolationKind::TransformerPower, clock, loading_pu, |a, b| a > b);
        }
    }

    /// Window-average aging check, applied once at the end of the window.
    pub fn check_transformer_aging(
        &mut self,
        id: &str,
        average_factor: f64,
        window_start_s: f64,
        window_end_s: f64,
        limits: &ConstraintLimits,
    ) {
        if average_factor > limits.xfmr_aging_avg_max {
            self.records.push(Violation {
                component_id: id.to_string(),
                kind: ViolationKind::TransformerAging,
                start_s: window_start_s,
                end_s: window_end_s,
                worst_value: average_factor,
            });
        }
    }

    /// Line over-current check; `loading_pu` is the worst phase current over ampacity.
    pub fn check_line_current(&mut self, id: &str, loading_pu: f64, limits: &ConstraintLimits, clock: Clock) {
        if loading_pu > limits.line_current_max_pu {
            self.instant(id, ViolationKind::LineCurrent, clock, loading_pu, |a, b| a > b);
        }
    }

    pub fn record_fuse_open(&mut self, id: &str, current_pu: f64, time_s: f64) {
        self.records.push(Violation {
            component_id: id.to_string(),
            kind: ViolationKind::FuseOpen,
            start_s: time_s,
            end_s: time_s,
            worst_value: current_pu,
        });
    }

    /// Thermal checks for one step across transformers and lines.
    pub fn check_thermal<'a>(
        &mut self,
        transformers: impl IntoIterator<Item = (&'a str, f64)>,
        lines: impl IntoIterator<Item = (&'a str, f64)>,
        limits: &ConstraintLimits,
        clock: Clock,
    ) {
        for (id, loading) in transformers {
            self.check_transformer_power(id, loading, limits, clock);
        }
        for (id, loading) in lines {
            self.check_line_current(id, loading, limits, clock);
        }
    }

    /// Nodes with any sample above the continuous upper limit.
    pub fn nodes_ever_above(&self) -> usize {
        self.node_excursions.values().filter(|e| e.steps_above > 0).count()
    }

    /// Nodes whose longest run above the upper limit exceeded the dwell time.
    pub fn nodes_continuously_above(&self, limits: &ConstraintLimits) -> usize {
        self.node_excursions.values().filter(|e| e.longest_above_s > limits.v_cont_duration_s).count()
    }
}

/// Largest deviation of the phase magnitudes from their mean, as a percentage of the mean.
pub fn unbalance_pct(magnitudes: [f64; 3]) -> f64 {
    let mean = magnitudes.iter().sum::<f64>() / 3.0;
    if mean <= 0.0 {
        return 0.0;
    }
    let dev = magnitudes.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    100.0 * dev / mean
}
