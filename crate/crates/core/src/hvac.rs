//! Two-state equivalent-thermal-parameter (ETP) house model with a hysteretic
//! cooling thermostat.
//!
//! States are indoor air temperature `theta`, mass temperature `theta_m` and the
//! compressor status. With the inputs held over a step the thermal part is a
//! linear time-invariant system, so each step is advanced with its exact
//! discretisation `x(t+dt) = x* + exp(A dt) (x(t) - x*)`.
//!
//! Units: temperatures in °C, heat flows in kW, thermal masses in kJ/°C,
//! time in seconds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HvacError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("invalid house parameters: {0}")]
    InvalidParams(String),
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("cooling capacity cannot hold the deadband: steady on-temperature {steady_on_c:.3} °C >= lower limit {theta_low_c:.3} °C")]
    Capacity { steady_on_c: f64, theta_low_c: f64 },
    #[error("no cooling demand: steady off-temperature {steady_off_c:.3} °C <= upper limit {theta_high_c:.3} °C")]
    NoCoolingDemand { steady_off_c: f64, theta_high_c: f64 },
    #[error("natural cycle did not settle after {cycles} cycles")]
    NoLimitCycle { cycles: usize },
}

/// Per-house ETP and air-conditioner parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseParams {
    /// Thermal mass of indoor air, kJ/°C.
    pub c_a: f64,
    /// Thermal mass of the building interior mass, kJ/°C.
    pub c_m: f64,
    /// Envelope heat-transfer coefficient, kW/°C.
    pub u_a: f64,
    /// Mass-to-air heat-transfer coefficient, kW/°C.
    pub h_m: f64,
    /// Fraction of internal gains absorbed by the air node.
    pub r_gain: f64,
    pub theta_low: f64,
    pub theta_high: f64,
    /// Thermal cooling capacity, kW.
    pub q_ac: f64,
    /// Real electrical draw while running, kW.
    pub p_elec: f64,
    #[serde(default = "default_power_factor")]
    pub power_factor: f64,
}

fn default_power_factor() -> f64 {
    0.97
}

impl HouseParams {
    pub fn validate(&self) -> Result<(), HvacError> {
        let fields = [
            ("c_a", self.c_a),
            ("c_m", self.c_m),
            ("u_a", self.u_a),
            ("h_m", self.h_m),
            ("q_ac", self.q_ac),
            ("p_elec", self.p_elec),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(HvacError::NonFinite(name));
            }
            if v <= 0.0 {
                return Err(HvacError::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.r_gain) {
            return Err(HvacError::InvalidParams(format!("r_gain must lie in [0, 1], got {}", self.r_gain)));
        }
        if !(self.theta_low.is_finite() && self.theta_high.is_finite()) {
            return Err(HvacError::NonFinite("deadband"));
        }
        if self.theta_low >= self.theta_high {
            return Err(HvacError::InvalidParams(format!(
                "theta_low {} must be below theta_high {}",
                self.theta_low, self.theta_high
            )));
        }
        if !(self.power_factor > 0.0 && self.power_factor <= 1.0) {
            return Err(HvacError::InvalidParams(format!(
                "power_factor must lie in (0, 1], got {}",
                self.power_factor
            )));
        }
        Ok(())
    }

    /// Reactive draw while running, kvar (lagging).
    pub fn q_elec(&self) -> f64 {
        self.p_elec * self.power_factor.acos().tan()
    }

    pub fn deadband_mid(&self) -> f64 {
        0.5 * (self.theta_low + self.theta_high)
    }

    /// Steady-state `(theta, theta_m)` the house would settle at with the
    /// compressor held in state `on`.
    pub fn equilibrium(&self, on: bool, theta_amb: f64, q_gain: f64) -> (f64, f64) {
        let s = if on { 1.0 } else { 0.0 };
        let theta = theta_amb + (q_gain - s * self.q_ac) / self.u_a;
        let theta_m = theta + (1.0 - self.r_gain) * q_gain / self.h_m;
        (theta, theta_m)
    }

    fn system_matrix(&self) -> [[f64; 2]; 2] {
        [
            [-(self.u_a + self.h_m) / self.c_a, self.h_m / self.c_a],
            [self.h_m / self.c_m, -self.h_m / self.c_m],
        ]
    }
}

/// Thermal and compressor state of one house.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseState {
    pub theta: f64,
    pub theta_m: f64,
    pub on: bool,
    /// Time of the most recent switch (natural or commanded), if any.
    pub last_switch_s: Option<f64>,
    pub natural_duty_cycle: f64,
}

impl HouseState {
    pub fn new(theta: f64, theta_m: f64, on: bool) -> Self {
        Self { theta, theta_m, on, last_switch_s: None, natural_duty_cycle: f64::NAN }
    }

    /// Electrical demand `(kW, kvar)` in the current compressor state.
    pub fn demand(&self, params: &HouseParams) -> (f64, f64) {
        if self.on {
            (params.p_elec, params.q_elec())
        } else {
            (0.0, 0.0)
        }
    }
}

/// `exp(A dt)` for the 2x2 ETP system matrix.
///
/// `A` has a positive off-diagonal product, so its eigenvalues are real and
/// distinct and the exponential has the closed form
/// `e^{m dt} [cosh(s dt) I + sinh(s dt)/s (A - m I)]` with `m = tr(A)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtpPropagator {
    pub phi: [[f64; 2]; 2],
    pub dt: f64,
}

impl EtpPropagator {
    pub fn new(params: &HouseParams, dt: f64) -> Self {
        let a = params.system_matrix();
        let m = 0.5 * (a[0][0] + a[1][1]);
        let half_diff = 0.5 * (a[0][0] - a[1][1]);
        let s = (half_diff * half_diff + a[0][1] * a[1][0]).sqrt();
        let scale = (m * dt).exp();
        let cosh = (s * dt).cosh();
        let sinh_over_s = if s * dt > 1e-8 { (s * dt).sinh() / s } else { dt };
        let phi = [
            [
                scale * (cosh + sinh_over_s * (a[0][0] - m)),
                scale * sinh_over_s * a[0][1],
            ],
            [
                scale * sinh_over_s * a[1][0],
                scale * (cosh + sinh_over_s * (a[1][1] - m)),
            ],
        ];
        Self { phi, dt }
    }

    /// Advance `(theta, theta_m)` with the compressor held at `on`.
    pub fn advance(
        &self,
        params: &HouseParams,
        theta: f64,
        theta_m: f64,
        on: bool,
        theta_amb: f64,
        q_gain: f64,
    ) -> (f64, f64) {
        let (eq_a, eq_m) = params.equilibrium(on, theta_amb, q_gain);
        let (da, dm) = (theta - eq_a, theta_m - eq_m);
        (
            eq_a + self.phi[0][0] * da + self.phi[0][1] * dm,
            eq_m + self.phi[1][0] * da + self.phi[1][1] * dm,
        )
    }
}

/// Hysteretic thermostat rule: off below the lower limit, on above the upper.
pub fn thermostat(params: &HouseParams, theta: f64, on: bool) -> bool {
    if theta < params.theta_low {
        false
    } else if theta > params.theta_high {
        true
    } else {
        on
    }
}

/// Advance one house by `dt` seconds ending at time `t_end`, holding the
/// compressor state over the step and then applying the thermostat.
pub fn step_house(
    params: &HouseParams,
    state: &HouseState,
    theta_amb: f64,
    q_gain: f64,
    dt: f64,
    t_end: f64,
) -> Result<HouseState, HvacError> {
    if !(dt > 0.0) {
        return Err(HvacError::InvalidStep(dt));
    }
    check_finite(state, theta_amb, q_gain)?;
    let prop = EtpPropagator::new(params, dt);
    Ok(step_with(&prop, params, state, theta_amb, q_gain, t_end))
}

/// As [`step_house`] with a precomputed propagator for the step length.
pub fn step_with(
    prop: &EtpPropagator,
    params: &HouseParams,
    state: &HouseState,
    theta_amb: f64,
    q_gain: f64,
    t_end: f64,
) -> HouseState {
    let (theta, theta_m) = prop.advance(params, state.theta, state.theta_m, state.on, theta_amb, q_gain);
    let on = thermostat(params, theta, state.on);
    let last_switch_s = if on != state.on { Some(t_end) } else { state.last_switch_s };
    HouseState { theta, theta_m, on, last_switch_s, natural_duty_cycle: state.natural_duty_cycle }
}

fn check_finite(state: &HouseState, theta_amb: f64, q_gain: f64) -> Result<(), HvacError> {
    if !state.theta.is_finite() {
        return Err(HvacError::NonFinite("theta"));
    }
    if !state.theta_m.is_finite() {
        return Err(HvacError::NonFinite("theta_m"));
    }
    if !theta_amb.is_finite() {
        return Err(HvacError::NonFinite("theta_amb"));
    }
    if !q_gain.is_finite() {
        return Err(HvacError::NonFinite("q_gain"));
    }
    Ok(())
}

/// Limit cycle of an uncontrolled air conditioner under steady conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaturalCycle {
    /// On-time fraction of the period.
    pub duty: f64,
    pub period_s: f64,
    pub on_s: f64,
    pub off_s: f64,
}

const CYCLE_TOLERANCE_S: f64 = 1e-3;
const MAX_CYCLES: usize = 1000;
const HALF_CYCLE_HORIZON_S: f64 = 48.0 * 3600.0;

/// Duty cycle and period of the natural (thermostat-only) limit cycle, found
/// by event-driven simulation of the exact trajectory until two consecutive
/// cycles agree.
pub fn natural_duty_cycle(params: &HouseParams, theta_amb: f64, q_gain: f64) -> Result<NaturalCycle, HvacError> {
    params.validate()?;
    if !theta_amb.is_finite() {
        return Err(HvacError::NonFinite("theta_amb"));
    }
    if !q_gain.is_finite() {
        return Err(HvacError::NonFinite("q_gain"));
    }
    let (steady_on, _) = params.equilibrium(true, theta_amb, q_gain);
    if steady_on >= params.theta_low {
        return Err(HvacError::Capacity { steady_on_c: steady_on, theta_low_c: params.theta_low });
    }
    let (steady_off, _) = params.equilibrium(false, theta_amb, q_gain);
    if steady_off <= params.theta_high {
        return Err(HvacError::NoCoolingDemand { steady_off_c: steady_off, theta_high_c: params.theta_high });
    }

    // Start at the top of the deadband, compressor just switched on.
    let mut theta = params.theta_high;
    let mut theta_m = params.deadband_mid() + (1.0 - params.r_gain) * q_gain / params.h_m;
    let mut previous: Option<(f64, f64)> = None;
    for _ in 0..MAX_CYCLES {
        let (t_on, m_after_on) = time_to_limit(params, theta, theta_m, true, theta_amb, q_gain)?;
        theta = params.theta_low;
        let (t_off, m_after_off) = time_to_limit(params, theta, m_after_on, false, theta_amb, q_gain)?;
        theta = params.theta_high;
        theta_m = m_after_off;
        if let Some((prev_on, prev_off)) = previous {
            if (t_on - prev_on).abs() < CYCLE_TOLERANCE_S && (t_off - prev_off).abs() < CYCLE_TOLERANCE_S {
                let period = t_on + t_off;
                return Ok(NaturalCycle { duty: t_on / period, period_s: period, on_s: t_on, off_s: t_off });
            }
        }
        previous = Some((t_on, t_off));
    }
    Err(HvacError::NoLimitCycle { cycles: MAX_CYCLES })
}

/// Time for the air temperature to reach the deadband limit in the direction
/// of travel, and the mass temperature at that instant.
fn time_to_limit(
    params: &HouseParams,
    theta: f64,
    theta_m: f64,
    on: bool,
    theta_amb: f64,
    q_gain: f64,
) -> Result<(f64, f64), HvacError> {
    let target = if on { params.theta_low } else { params.theta_high };
    let reached = |t: f64| {
        let (a, _) = EtpPropagator::new(params, t).advance(params, theta, theta_m, on, theta_amb, q_gain);
        if on {
            a <= target
        } else {
            a >= target
        }
    };
    let coarse = 5.0;
    let mut lo = 0.0;
    let mut hi = coarse;
    while !reached(hi) {
        lo = hi;
        hi += coarse;
        if hi > HALF_CYCLE_HORIZON_S {
            let (steady_on, _) = params.equilibrium(true, theta_amb, q_gain);
            return Err(HvacError::Capacity { steady_on_c: steady_on, theta_low_c: params.theta_low });
        }
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if reached(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-9 {
            break;
        }
    }
    let (_, m) = EtpPropagator::new(params, hi).advance(params, theta, theta_m, on, theta_amb, q_gain);
    Ok((hi, m))
}
