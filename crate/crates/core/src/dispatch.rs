//! Probabilistic dispatch of an air-conditioner population.
//!
//! A proportional controller turns the tracking error into one signed
//! switching probability `u` per step, broadcast to every unit. An available
//! unit whose state opposes the direction of `u` switches when its private
//! uniform draw falls below `|u|`. Positive `u` switches units on, negative
//! switches them off.
//!
//! The second half of the module holds the natural-cycle analytics that
//! predict which units are more likely to be dispatch-switched on than off.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hvac::{EtpPropagator, HouseParams, HouseState};

/// Minimum time between switches of one compressor, seconds.
pub const LOCKOUT_S: f64 = 120.0;
/// Look-ahead horizon for the predicted-safe check, seconds.
pub const PREDICTION_HORIZON_S: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub gain: f64,
    /// Average draw of a running unit in steady state, kW.
    pub mean_on_power_kw: f64,
    pub desired_kw: f64,
    pub measured_kw: f64,
    /// Units available to switch.
    pub available: usize,
}

/// Signed broadcast probability; the sign gives the switching direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispatchCommand {
    pub u: f64,
    pub time_s: f64,
}

impl DispatchCommand {
    pub fn idle(time_s: f64) -> Self {
        Self { u: 0.0, time_s }
    }

    /// Target compressor state for units this command may switch.
    pub fn direction(&self) -> Option<bool> {
        if self.u > 0.0 {
            Some(true)
        } else if self.u < 0.0 {
            Some(false)
        } else {
            None
        }
    }
}

/// Proportional switching probability, clamped to `[-1, 1]`; zero when no
/// unit is available.
pub fn control_signal(ctrl: &ControllerState, time_s: f64) -> DispatchCommand {
    if ctrl.available == 0 || !(ctrl.mean_on_power_kw > 0.0) {
        return DispatchCommand::idle(time_s);
    }
    let u = ctrl.gain * (ctrl.desired_kw - ctrl.measured_kw) / (ctrl.mean_on_power_kw * ctrl.available as f64);
    let u = if u.is_finite() { u.clamp(-1.0, 1.0) } else { 0.0 };
    DispatchCommand { u, time_s }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvailabilityFlags {
    pub in_deadband: bool,
    pub lockout_clear: bool,
    pub predicted_safe: bool,
}

impl AvailabilityFlags {
    pub fn available(&self) -> bool {
        self.in_deadband && self.lockout_clear && self.predicted_safe
    }
}

/// Whether a unit may be switched externally at time `now`.
///
/// The predicted-safe check evaluates the exact trajectory with the
/// compressor flipped and requires the air temperature to stay inside the
/// deadband for the whole look-ahead horizon.
pub fn availability(
    params: &HouseParams,
    state: &HouseState,
    theta_amb: f64,
    q_gain: f64,
    now: f64,
) -> AvailabilityFlags {
    let in_deadband = params.theta_low <= state.theta && state.theta <= params.theta_high;
    let lockout_clear = state.last_switch_s.is_none_or(|t| now - t > LOCKOUT_S);
    let predicted_safe = in_deadband && flip_is_safe(params, state, theta_amb, q_gain);
    AvailabilityFlags { in_deadband, lockout_clear, predicted_safe }
}

const PREDICTION_SAMPLES: usize = 12;

fn flip_is_safe(params: &HouseParams, state: &HouseState, theta_amb: f64, q_gain: f64) -> bool {
    let flipped = !state.on;
    let prop = EtpPropagator::new(params, PREDICTION_HORIZON_S / PREDICTION_SAMPLES as f64);
    let (mut theta, mut theta_m) = (state.theta, state.theta_m);
    for _ in 0..PREDICTION_SAMPLES {
        (theta, theta_m) = prop.advance(params, theta, theta_m, flipped, theta_amb, q_gain);
        // Switching on drives the air toward the lower limit, off toward the upper.
        let crossed = if flipped { theta < params.theta_low } else { theta > params.theta_high };
        if crossed {
            return false;
        }
    }
    true
}

/// One unit as seen by the dispatcher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub on: bool,
    pub available: bool,
    /// Uniform draw in `[0, 1)` for this unit and step.
    pub draw: f64,
    /// Temperature margin to the deadband edge the unit is drifting toward;
    /// smaller means closer to switching naturally.
    pub margin: f64,
}

impl Candidate {
    fn eligible(&self, direction: bool) -> bool {
        self.available && self.on != direction
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchMode {
    /// Each eligible unit switches iff its draw is below `|u|`.
    #[default]
    Probabilistic,
    /// Switch the `round(|u| * eligible)` units closest to switching naturally.
    PriorityStack,
}

/// Indices of units that switch under `cmd`.
pub fn apply_dispatch(candidates: &[Candidate], cmd: &DispatchCommand, mode: DispatchMode) -> Vec<usize> {
    let Some(direction) = cmd.direction() else {
        return Vec::new();
    };
    let p = cmd.u.abs().min(1.0);
    match mode {
        DispatchMode::Probabilistic => candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.eligible(direction) && c.draw < p)
            .map(|(k, _)| k)
            .collect(),
        DispatchMode::PriorityStack => {
            let mut eligible: Vec<usize> =
                (0..candidates.len()).filter(|&k| candidates[k].eligible(direction)).collect();
            let count = (p * eligible.len() as f64).round() as usize;
            eligible.sort_by(|&a, &b| candidates[a].margin.total_cmp(&candidates[b].margin).then(a.cmp(&b)));
            eligible.truncate(count);
            eligible.sort_unstable();
            eligible
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DutyCycleError {
    #[error("{name} must lie strictly between 0 and 1, got {value}")]
    Fraction { name: &'static str, value: f64 },
    #[error("switched count {switched} leaves a non-positive base for the {direction} probability")]
    Oversized { switched: f64, direction: &'static str },
    #[error("population size and period must be positive")]
    Size,
}

/// Natural-cycle and population quantities for the dispatch-switching estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DutyCycleStats {
    /// Natural duty cycle of the unit.
    pub d: f64,
    /// Natural period in time steps.
    pub period_steps: f64,
    /// Population mean duty cycle.
    pub mean_duty: f64,
    /// Population size.
    pub population: f64,
    /// Units switched per step.
    pub switched_per_step: f64,
}

impl DutyCycleStats {
    pub fn on_steps(&self) -> f64 {
        self.d * self.period_steps
    }

    pub fn off_steps(&self) -> f64 {
        (1.0 - self.d) * self.period_steps
    }

    fn check(&self) -> Result<(f64, f64), DutyCycleError> {
        for (name, value) in [("d", self.d), ("D", self.mean_duty)] {
            if !(value > 0.0 && value < 1.0) {
                return Err(DutyCycleError::Fraction { name, value });
            }
        }
        if !(self.population > 0.0 && self.period_steps > 0.0 && self.switched_per_step >= 0.0) {
            return Err(DutyCycleError::Size);
        }
        let u_off = self.switched_per_step / (self.mean_duty * self.population);
        let u_on = self.switched_per_step / ((1.0 - self.mean_duty) * self.population);
        if 1.0 - u_off <= 0.0 {
            return Err(DutyCycleError::Oversized { switched: self.switched_per_step, direction: "off" });
        }
        if 1.0 - u_on <= 0.0 {
            return Err(DutyCycleError::Oversized { switched: self.switched_per_step, direction: "on" });
        }
        Ok((u_off, u_on))
    }
}

/// Probabilities of being dispatch-switched at least once during the on and
/// off parts of a natural cycle, `(P_off, P_on)`, under constant commands.
pub fn switching_probabilities(stats: &DutyCycleStats) -> Result<(f64, f64), DutyCycleError> {
    let (u_off, u_on) = stats.check()?;
    let p_off = 1.0 - (1.0 - u_off).powf(stats.on_steps());
    let p_on = 1.0 - (1.0 - u_on).powf(stats.off_steps());
    Ok((p_off, p_on))
}

/// `1 - prod(1 - u_k)`: probability of at least one switch over a command trace.
pub fn switch_at_least_once(commands: &[f64]) -> f64 {
    1.0 - commands.iter().map(|u| 1.0 - u.clamp(0.0, 1.0)).product::<f64>()
}

/// True when the unit is more likely to be dispatch-switched on than off:
/// `d / (1 - d) < ln(1 - N_S/((1-D)N)) / ln(1 - N_S/(D N))`.
pub fn bias_threshold(stats: &DutyCycleStats) -> Result<bool, DutyCycleError> {
    let (u_off, u_on) = stats.check()?;
    if stats.switched_per_step == 0.0 {
        return Ok(false);
    }
    let lhs = stats.d / (1.0 - stats.d);
    let rhs = (1.0 - u_on).ln() / (1.0 - u_off).ln();
    Ok(lhs < rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hvac::tests::sample_params;

    fn ctrl(err: f64, available: usize) -> ControllerState {
        ControllerState { gain: 1.0, mean_on_power_kw: 5.0, desired_kw: 100.0 + err, measured_kw: 100.0, available }
    }

    #[test]
    fn control_signal_cases() {
        assert_eq!(control_signal(&ctrl(0.0, 100), 0.0).u, 0.0);
        assert!((control_signal(&ctrl(10.0, 100), 0.0).u - 0.02).abs() < 1e-15);
        assert_eq!(control_signal(&ctrl(10.0, 0), 0.0).u, 0.0);
        assert_eq!(control_signal(&ctrl(1e6, 10), 0.0).u, 1.0);
        assert_eq!(control_signal(&ctrl(-1e6, 10), 0.0).u, -1.0);
    }

    fn off_units(n: usize) -> Vec<Candidate> {
        (0..n).map(|k| Candidate { on: false, available: true, draw: k as f64 / n as f64, margin: 0.0 }).collect()
    }

    #[test]
    fn dispatch_boundaries() {
        let units = off_units(50);
        assert!(apply_dispatch(&units, &DispatchCommand::idle(0.0), DispatchMode::Probabilistic).is_empty());
        let all = apply_dispatch(&units, &DispatchCommand { u: 1.0, time_s: 0.0 }, DispatchMode::Probabilistic);
        assert_eq!(all.len(), 50);
        // Off units cannot be switched off.
        let none = apply_dispatch(&units, &DispatchCommand { u: -1.0, time_s: 0.0 }, DispatchMode::Probabilistic);
        assert!(none.is_empty());
        let mut blocked = units.clone();
        blocked.iter_mut().for_each(|c| c.available = false);
        assert!(apply_dispatch(&blocked, &DispatchCommand { u: 1.0, time_s: 0.0 }, DispatchMode::Probabilistic).is_empty());
    }

    #[test]
    fn priority_stack_switches_closest_first() {
        let units: Vec<Candidate> = [0.4, 0.1, 0.3, 0.2]
            .iter()
            .map(|&m| Candidate { on: true, available: true, draw: 0.99, margin: m })
            .collect();
        let chosen = apply_dispatch(&units, &DispatchCommand { u: -0.5, time_s: 0.0 }, DispatchMode::PriorityStack);
        assert_eq!(chosen, vec![1, 3]);
    }

    #[test]
    fn availability_rules() {
        let p = sample_params();
        let mut s = HouseState::new(22.3, 22.3, false);
        let flags = availability(&p, &s, 32.0, 1.0, 1000.0);
        assert!(flags.available(), "{flags:?}");

        s.last_switch_s = Some(940.0);
        let flags = availability(&p, &s, 32.0, 1.0, 1000.0);
        assert!(!flags.lockout_clear && !flags.available());

        let outside = HouseState::new(p.theta_high + 0.2, 22.0, false);
        let flags = availability(&p, &outside, 32.0, 1.0, 1000.0);
        assert!(!flags.in_deadband && !flags.available());
    }

    #[test]
    fn switching_off_near_upper_limit_is_unsafe() {
        let p = sample_params();
        let s = HouseState::new(p.theta_high - 0.01, p.theta_high, true);
        let flags = availability(&p, &s, 35.0, 1.0, 1e4);
        assert!(flags.in_deadband && flags.lockout_clear);
        assert!(!flags.predicted_safe);
    }

    #[test]
    fn duty_analytics_cases() {
        let base = DutyCycleStats { d: 0.4, period_steps: 900.0, mean_duty: 0.5, population: 1000.0, switched_per_step: 10.0 };
        let zero = DutyCycleStats { switched_per_step: 0.0, ..base };
        assert_eq!(switching_probabilities(&zero).unwrap(), (0.0, 0.0));

        let sym = DutyCycleStats { d: 0.5, ..base };
        let (off, on) = switching_probabilities(&sym).unwrap();
        assert_eq!(off, on);

        let (off, on) = switching_probabilities(&base).unwrap();
        assert!(on > off);
        assert!(bias_threshold(&base).unwrap());
        assert!(!bias_threshold(&DutyCycleStats { d: 0.6, ..base }).unwrap());

        let oversized = DutyCycleStats { switched_per_step: 600.0, ..base };
        assert!(matches!(switching_probabilities(&oversized), Err(DutyCycleError::Oversized { .. })));
        assert!(matches!(bias_threshold(&DutyCycleStats { d: 1.0, ..base }), Err(DutyCycleError::Fraction { .. })));
    }

    #[test]
    fn at_least_once_product() {
        assert_eq!(switch_at_least_once(&[]), 0.0);
        assert!((switch_at_least_once(&[0.5, 0.5]) - 0.75).abs() < 1e-15);
    }
}
