//! Distribution-transformer thermal model and insulation aging.
//!
//! Two first-order states are tracked: the top-oil rise over ambient and the
//! winding hot-spot rise over top oil. Each relaxes toward the ultimate rise
//! implied by the present load. The hot-spot temperature drives the aging
//! acceleration factor, which is integrated into equivalent minutes aged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hot-spot temperature (°C) at which aging proceeds at the nominal rate.
pub const REFERENCE_HOT_SPOT_C: f64 = 110.0;
/// Oil exponent for natural-oil, natural-air cooling.
pub const OIL_EXPONENT: f64 = 0.8;
/// Winding exponent; the ultimate winding rise scales as `L^(2m)`.
pub const WINDING_EXPONENT: f64 = 0.8;

pub const RATING_MIN_KVA: f64 = 5.0;
pub const RATING_MAX_KVA: f64 = 175.0;

#[derive(Debug, Error, PartialEq)]
pub enum ThermalError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("rating {0} kVA is outside the tabulated 5-175 kVA range")]
    RatingOutOfRange(f64),
    #[error("invalid thermal parameter: {0}")]
    InvalidParams(String),
}

/// Single-phase transformer thermal parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XfmrThermalParams {
    /// Winding time constant, minutes.
    pub tau_w_min: f64,
    /// Rated hot-spot rise over top oil, °C.
    pub rise_w_rated: f64,
    /// Rated top-oil rise over ambient, °C.
    pub rise_oil_rated: f64,
    /// Full-load (load) loss, per unit of rating.
    pub loss_full_load: f64,
    /// No-load loss, per unit of rating.
    pub loss_no_load: f64,
    pub oil_volume_gal: f64,
    pub core_coil_weight_lb: f64,
    pub tank_fittings_weight_lb: f64,
}

// Endpoints of the tabulated ranges, at 5 kVA and 175 kVA respectively.
const LOSS_FULL_LOAD: (f64, f64) = (0.0232, 0.0112);
const LOSS_NO_LOAD: (f64, f64) = (0.0065, 0.0042);
const OIL_VOLUME_GAL: (f64, f64) = (5.7, 62.7);
const CORE_COIL_LB: (f64, f64) = (56.6, 484.9);
const TANK_FITTINGS_LB: (f64, f64) = (67.9, 581.9);

impl XfmrThermalParams {
    /// Parameters for a given rating, linearly interpolated between the
    /// tabulated values at 5 kVA and 175 kVA.
    pub fn for_rating(rating_kva: f64) -> Result<Self, ThermalError> {
        if !rating_kva.is_finite() {
            return Err(ThermalError::NonFinite("rating_kva"));
        }
        if !(RATING_MIN_KVA..=RATING_MAX_KVA).contains(&rating_kva) {
            return Err(ThermalError::RatingOutOfRange(rating_kva));
        }
        let w = (rating_kva - RATING_MIN_KVA) / (RATING_MAX_KVA - RATING_MIN_KVA);
        let lerp = |(a, b): (f64, f64)| a + w * (b - a);
        Ok(Self {
            tau_w_min: 5.0,
            rise_w_rated: 80.0,
            rise_oil_rated: 60.0,
            loss_full_load: lerp(LOSS_FULL_LOAD),
            loss_no_load: lerp(LOSS_NO_LOAD),
            oil_volume_gal: lerp(OIL_VOLUME_GAL),
            core_coil_weight_lb: lerp(CORE_COIL_LB),
            tank_fittings_weight_lb: lerp(TANK_FITTINGS_LB),
        })
    }

    pub fn validate(&self) -> Result<(), ThermalError> {
        let fields = [
            ("tau_w_min", self.tau_w_min),
            ("rise_w_rated", self.rise_w_rated),
            ("rise_oil_rated", self.rise_oil_rated),
            ("loss_full_load", self.loss_full_load),
            ("loss_no_load", self.loss_no_load),
            ("oil_volume_gal", self.oil_volume_gal),
            ("core_coil_weight_lb", self.core_coil_weight_lb),
            ("tank_fittings_weight_lb", self.tank_fittings_weight_lb),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(ThermalError::NonFinite(name));
            }
            if v <= 0.0 {
                return Err(ThermalError::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.loss_full_load <= self.loss_no_load {
            return Err(ThermalError::InvalidParams(
                "full-load loss must exceed no-load loss".into(),
            ));
        }
        Ok(())
    }

    /// Ratio of load loss to no-load loss at rated load.
    pub fn loss_ratio(&self) -> f64 {
        self.loss_full_load / self.loss_no_load
    }

    /// Lumped thermal capacity of core, coil, tank and oil, Wh/°C.
    pub fn thermal_capacity_wh_per_c(&self) -> f64 {
        0.06 * self.core_coil_weight_lb + 0.04 * self.tank_fittings_weight_lb + 1.33 * self.oil_volume_gal
    }

    /// Rated top-oil time constant in minutes: capacity times rated rise over
    /// total rated losses.
    pub fn tau_oil_rated_min(&self, rating_kva: f64) -> f64 {
        let total_loss_w = (self.loss_full_load + self.loss_no_load) * rating_kva * 1000.0;
        60.0 * self.thermal_capacity_wh_per_c() * self.rise_oil_rated / total_loss_w
    }
}

/// Ultimate `(hot-spot rise, top-oil rise)` for a sustained load `load_pu`.
pub fn ultimate_rises(params: &XfmrThermalParams, load_pu: f64) -> (f64, f64) {
    let load = load_pu.max(0.0);
    let rise_w = params.rise_w_rated * load.powf(2.0 * WINDING_EXPONENT);
    let ratio = params.loss_ratio();
    let rise_oil = params.rise_oil_rated * ((load * load * ratio + 1.0) / (ratio + 1.0)).powf(OIL_EXPONENT);
    (rise_w, rise_oil)
}

/// How the top-oil time constant is evaluated each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OilTimeConstant {
    /// Rated constant corrected for the initial and ultimate rises of the step.
    #[default]
    LoadDependent,
    /// Rated constant only.
    Fixed,
}

/// Thermal state of one transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerThermalState {
    /// Top-oil rise over ambient, °C.
    pub rise_oil: f64,
    /// Hot-spot rise over top oil, °C.
    pub rise_w: f64,
    /// Equivalent minutes of aging accumulated.
    pub minutes_aged: f64,
    /// Aging acceleration factor at the last step.
    pub aging_factor: f64,
}

impl Default for TransformerThermalState {
    fn default() -> Self {
        Self { rise_oil: 0.0, rise_w: 0.0, minutes_aged: 0.0, aging_factor: f64::MIN_POSITIVE }
    }
}

impl TransformerThermalState {
    /// State at the ultimate rises for `load_pu`, with no accumulated aging.
    pub fn steady(params: &XfmrThermalParams, load_pu: f64, theta_amb: f64) -> Self {
        let (rise_w, rise_oil) = ultimate_rises(params, load_pu);
        Self { rise_oil, rise_w, minutes_aged: 0.0, aging_factor: aging_rate(theta_amb + rise_oil + rise_w) }
    }

    /// Hot-spot temperature.
    pub fn hot_spot(&self, theta_amb: f64) -> f64 {
        theta_amb + self.rise_oil + self.rise_w
    }
}

/// Thermal model of one transformer: parameters plus rating-dependent constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalModel {
    pub params: XfmrThermalParams,
    pub tau_oil_rated_min: f64,
    pub oil_mode: OilTimeConstant,
}

impl ThermalModel {
    pub fn new(params: XfmrThermalParams, rating_kva: f64, oil_mode: OilTimeConstant) -> Result<Self, ThermalError> {
        params.validate()?;
        if !(rating_kva > 0.0) || !rating_kva.is_finite() {
            return Err(ThermalError::InvalidParams(format!("rating must be > 0, got {rating_kva}")));
        }
        let tau_oil_rated_min = params.tau_oil_rated_min(rating_kva);
        Ok(Self { params, tau_oil_rated_min, oil_mode })
    }

    /// Top-oil time constant (minutes) for a step from `initial` toward `ultimate` rise.
    pub fn tau_oil_min(&self, initial: f64, ultimate: f64) -> f64 {
        match self.oil_mode {
            OilTimeConstant::Fixed => self.tau_oil_rated_min,
            OilTimeConstant::LoadDependent => {
                let rated = self.params.rise_oil_rated;
                let (u, i) = (ultimate.max(0.0) / rated, initial.max(0.0) / rated);
                let inv_n = 1.0 / OIL_EXPONENT;
                let num = u - i;
                let den = u.powf(inv_n) - i.powf(inv_n);
                if num.abs() < 1e-9 || den.abs() < 1e-12 {
                    // Limit of the ratio as the initial rise approaches the ultimate.
                    let x = 0.5 * (u + i);
                    if x <= 1e-12 {
                        return self.tau_oil_rated_min;
                    }
                    self.tau_oil_rated_min * OIL_EXPONENT * x.powf(1.0 - inv_n)
                } else {
                    self.tau_oil_rated_min * num / den
                }
            }
        }
    }

    /// Advance both rises by `dt` seconds under constant load and ambient,
    /// then update the aging factor and accumulated aging.
    pub fn step(
        &self,
        state: &TransformerThermalState,
        load_pu: f64,
        theta_amb: f64,
        dt: f64,
    ) -> Result<TransformerThermalState, ThermalError> {
        step_thermal(self, state, load_pu, theta_amb, dt)
    }
}

/// Exact exponential step of both first-order rises, followed by aging accumulation.
pub fn step_thermal(
    model: &ThermalModel,
    state: &TransformerThermalState,
    load_pu: f64,
    theta_amb: f64,
    dt: f64,
) -> Result<TransformerThermalState, ThermalError> {
    if !(dt > 0.0) {
        return Err(ThermalError::InvalidStep(dt));
    }
    for (name, v) in [
        ("load_pu", load_pu),
        ("theta_amb", theta_amb),
        ("rise_oil", state.rise_oil),
        ("rise_w", state.rise_w),
    ] {
        if !v.is_finite() {
            return Err(ThermalError::NonFinite(name));
        }
    }
    let (ult_w, ult_oil) = ultimate_rises(&model.params, load_pu);
    let tau_oil_s = 60.0 * model.tau_oil_min(state.rise_oil, ult_oil);
    let tau_w_s = 60.0 * model.params.tau_w_min;
    let relax = |x: f64, target: f64, tau: f64| target + (x - target) * (-dt / tau).exp();
    let mut next = TransformerThermalState {
        rise_oil: relax(state.rise_oil, ult_oil, tau_oil_s),
        rise_w: relax(state.rise_w, ult_w, tau_w_s),
        minutes_aged: state.minutes_aged,
        aging_factor: state.aging_factor,
    };
    let factor = aging_rate(next.hot_spot(theta_amb));
    next = accumulate_aging(&next, factor, dt);
    Ok(next)
}

/// Aging acceleration factor for hot-spot temperature `theta_w` (°C).
pub fn aging_rate(theta_w: f64) -> f64 {
    (1500.0 / 383.0 - 1500.0 / (theta_w + 273.0)).exp()
}

/// Add `factor * dt` of equivalent aging; `dt` in seconds, aging in minutes.
pub fn accumulate_aging(state: &TransformerThermalState, factor: f64, dt: f64) -> TransformerThermalState {
    TransformerThermalState {
        minutes_aged: state.minutes_aged + factor * dt / 60.0,
        aging_factor: factor,
        ..state.clone()
    }
}

/// Average aging factor over a window: aged minutes divided by elapsed minutes.
pub fn average_aging_rate(minutes_aged_start: f64, minutes_aged_end: f64, elapsed_s: f64) -> f64 {
    (minutes_aged_end - minutes_aged_start) / (elapsed_s / 60.0)
}
