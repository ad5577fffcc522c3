//! Attach randomized houses under distribution transformers until the feeder's
//! simulated peak-hour demand lands in the planning band.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FeederModel, House, ModelError, Phase, ZipFractions, ZipLoad};
use crate::engine::{scan_peak, EngineError};
use crate::hvac::HouseParams;
use crate::rng::{self, Domain};
use crate::series::TimeSeries;

/// Inclusive uniform range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    /// `nominal` ± `fraction`.
    pub fn around(nominal: f64, fraction: f64) -> Self {
        Self { min: nominal * (1.0 - fraction), max: nominal * (1.0 + fraction) }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        self.min + (self.max - self.min) * rng.random::<f64>()
    }

    pub fn mean(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    fn check(&self, field: &str) -> Result<(), PopulateError> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(PopulateError::Config(format!("{field}: need finite min <= max")));
        }
        Ok(())
    }
}

/// Parameter ranges for generated houses. Every draw is uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulatorConfig {
    pub seed: u64,
    pub c_a: Range,
    pub c_m: Range,
    pub u_a: Range,
    pub h_m: Range,
    pub r_gain: Range,
    pub setpoint_c: Range,
    pub deadband_c: Range,
    /// Coefficient of performance: cooling delivered per unit electrical input.
    pub cop: Range,
    /// Cooling capacity is sized to hold the setpoint at this ambient, times `oversize`.
    pub design_ambient_c: f64,
    pub oversize: Range,
    pub ac_power_factor: f64,
    pub internal_gain_kw: Range,
    pub zip_kva: Range,
    pub zip_power_factor: Range,
    pub zip_real: ZipFractions,
    pub zip_reactive: ZipFractions,
    /// Acceptable peak band as fractions of the target.
    pub band: Range,
    pub max_iterations: usize,
}

impl Default for PopulatorConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            c_a: Range::around(1600.0, 0.2),
            c_m: Range::around(7600.0, 0.2),
            u_a: Range::around(0.30, 0.2),
            h_m: Range::around(3.7, 0.2),
            r_gain: Range::new(0.5, 0.5),
            setpoint_c: Range::new(20.0, 24.0),
            deadband_c: Range::new(0.5, 1.5),
            cop: Range::new(2.8, 3.4),
            design_ambient_c: 38.0,
            oversize: Range::new(1.3, 1.7),
            ac_power_factor: 0.97,
            internal_gain_kw: Range::new(0.4, 0.9),
            zip_kva: Range::new(0.8, 1.6),
            zip_power_factor: Range::new(0.90, 0.98),
            zip_real: ZipFractions { z: 0.3, i: 0.3, p: 0.4 },
            zip_reactive: ZipFractions { z: 0.3, i: 0.3, p: 0.4 },
            band: Range::new(0.9, 1.0),
            max_iterations: 20,
        }
    }
}

impl PopulatorConfig {
    pub fn load(path: &Path) -> Result<Self, PopulateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PopulateError::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| PopulateError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PopulateError> {
        for (name, r) in [
            ("c_a", self.c_a),
            ("c_m", self.c_m),
            ("u_a", self.u_a),
            ("h_m", self.h_m),
            ("r_gain", self.r_gain),
            ("setpoint_c", self.setpoint_c),
            ("deadband_c", self.deadband_c),
            ("cop", self.cop),
            ("oversize", self.oversize),
            ("internal_gain_kw", self.internal_gain_kw),
            ("zip_kva", self.zip_kva),
            ("zip_power_factor", self.zip_power_factor),
            ("band", self.band),
        ] {
            r.check(name)?;
        }
        if !(self.c_a.min > 0.0 && self.c_m.min > 0.0 && self.u_a.min > 0.0 && self.h_m.min > 0.0) {
            return Err(PopulateError::Config("thermal parameters must be positive".into()));
        }
        if !(self.cop.min > 0.0 && self.oversize.min > 1.0 && self.deadband_c.min > 0.0) {
            return Err(PopulateError::Config("cop > 0, oversize > 1 and deadband > 0 required".into()));
        }
        if !(self.band.min > 0.0 && self.max_iterations > 0) {
            return Err(PopulateError::Config("band must be positive and max_iterations > 0".into()));
        }
        Ok(())
    }

    /// Parameters of the `index`-th generated house; depends only on seed and index.
    pub fn house_params(&self, index: u64) -> (HouseParams, f64, f64, f64) {
        let mut r = rng::stream(self.seed, Domain::HouseParams, index);
        let c_a = self.c_a.sample(&mut r);
        let c_m = self.c_m.sample(&mut r);
        let u_a = self.u_a.sample(&mut r);
        let h_m = self.h_m.sample(&mut r);
        let r_gain = self.r_gain.sample(&mut r);
        let setpoint = self.setpoint_c.sample(&mut r);
        let deadband = self.deadband_c.sample(&mut r);
        let cop = self.cop.sample(&mut r);
        let oversize = self.oversize.sample(&mut r);
        let gain = self.internal_gain_kw.sample(&mut r);
        let zip_kva = self.zip_kva.sample(&mut r);
        let zip_pf = self.zip_power_factor.sample(&mut r);
        let q_ac = oversize * (u_a * (self.design_ambient_c - setpoint) + gain);
        let params = HouseParams {
            c_a,
            c_m,
            u_a,
            h_m,
            r_gain,
            theta_low: setpoint - 0.5 * deadband,
            theta_high: setpoint + 0.5 * deadband,
            q_ac,
            p_elec: q_ac / cop,
            power_factor: self.ac_power_factor,
        };
        (params, gain, zip_kva, zip_pf)
    }
}

#[derive(Debug, Error)]
pub enum PopulateError {
    #[error("populator config: {0}")]
    Config(String),
    #[error("feeder has no distribution transformers with a planning load")]
    NoTransformers,
    #[error("peak {achieved_kva:.2} kVA outside [{lo:.2}, {hi:.2}] kVA after {iterations} iterations ({houses} houses)")]
    Sizing { achieved_kva: f64, lo: f64, hi: f64, iterations: usize, houses: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("peak scan failed: {0}")]
    Scan(#[source] Box<EngineError>),
}

#[derive(Debug, Clone)]
pub struct PopulateOutcome {
    pub feeder: FeederModel,
    pub houses_added: usize,
    pub achieved_peak_kva: f64,
    pub iterations: usize,
}

/// Attach `count` generated houses. Houses are dealt to phases in turn, then
/// to the transformers of each phase in proportion to their planning loads.
pub fn attach_houses(feeder: &FeederModel, count: usize, config: &PopulatorConfig) -> Result<FeederModel, PopulateError> {
    let mut by_phase: [Vec<(usize, f64)>; 3] = Default::default();
    for (k, t) in feeder.transformers.iter().enumerate() {
        let Some(planning) = t.planning_load_kva.filter(|p| *p > 0.0) else { continue };
        let bus = feeder.bus(&t.bus_secondary).ok_or(PopulateError::NoTransformers)?;
        by_phase[bus.phases[0].index()].push((k, planning));
    }
    let phases: Vec<usize> = (0..3).filter(|&p| !by_phase[p].is_empty()).collect();
    if phases.is_empty() {
        return Err(PopulateError::NoTransformers);
    }

    let mut per_phase_count = vec![0usize; 3];
    for i in 0..count {
        per_phase_count[phases[i % phases.len()]] += 1;
    }

    let mut out = feeder.clone();
    let offset = feeder.houses.len() as u64;
    let mut index = 0u64;
    for &p in &phases {
        for (k, n) in largest_remainder(&by_phase[p], per_phase_count[p]) {
            let t = &feeder.transformers[k];
            for _ in 0..n {
                let id_num = offset + index + 1;
                let (hvac, gain, zip_kva, zip_pf) = config.house_params(offset + index);
                let phase = Phase::ALL[p];
                out.houses.push(House {
                    id: format!("h{id_num}"),
                    bus: t.bus_secondary.clone(),
                    phase,
                    hvac,
                    internal_gain_kw: gain,
                    zip: ZipLoad {
                        id: format!("h{id_num}-zip"),
                        bus: t.bus_secondary.clone(),
                        phase,
                        base_kva: zip_kva,
                        power_factor: zip_pf,
                        real: config.zip_real,
                        reactive: config.zip_reactive,
                    },
                });
                index += 1;
            }
        }
    }
    out.validate()?;
    Ok(out)
}

/// Split `total` over weighted slots, largest remainders first, ties to the lower index.
fn largest_remainder(weights: &[(usize, f64)], total: usize) -> Vec<(usize, usize)> {
    let sum: f64 = weights.iter().map(|w| w.1).sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w.1 / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    weights.iter().zip(counts).map(|(w, c)| (w.0, c)).collect()
}

/// Add houses until the simulated peak-hour head demand lies in
/// `band * target_peak_kva`. The peak oracle is the uncontrolled peak-hour scan.
pub fn populate_houses(
    feeder: &FeederModel,
    target_peak_kva: f64,
    config: &PopulatorConfig,
    weather: &TimeSeries,
) -> Result<PopulateOutcome, PopulateError> {
    config.validate()?;
    if !(target_peak_kva > 0.0) {
        return Err(PopulateError::Config(format!("target peak must be > 0, got {target_peak_kva}")));
    }
    let (lo, hi) = (config.band.min * target_peak_kva, config.band.max * target_peak_kva);
    let peak_of = |f: &FeederModel| -> Result<f64, PopulateError> {
        Ok(scan_peak(f, weather, config.seed).map_err(|e| PopulateError::Scan(Box::new(e)))?.peak_kva)
    };
    let within = |p: f64| lo <= p && p <= hi;

    let existing = peak_of(feeder)?;
    if within(existing) {
        return Ok(PopulateOutcome { feeder: feeder.clone(), houses_added: 0, achieved_peak_kva: existing, iterations: 0 });
    }
    if existing > hi {
        return Err(PopulateError::Sizing { achieved_kva: existing, lo, hi, iterations: 0, houses: 0 });
    }

    let aim = 0.5 * (lo + hi);
    let per_house_guess = {
        let (p, _, zip, _) = config.house_params(0);
        0.6 * p.p_elec / p.power_factor + zip
    };
    let mut n = (((aim - existing) / per_house_guess).round() as usize).max(1);
    let mut last = (existing, 0usize);
    for iteration in 1..=config.max_iterations {
        let candidate = attach_houses(feeder, n, config)?;
        let peak = peak_of(&candidate)?;
        if within(peak) {
            return Ok(PopulateOutcome { feeder: candidate, houses_added: n, achieved_peak_kva: peak, iterations: iteration });
        }
        last = (peak, n);
        let added = peak - existing;
        let mut next = if added > 0.0 {
            ((n as f64) * (aim - existing) / added).round().max(1.0) as usize
        } else {
            n * 2
        };
        if next == n {
            next = if peak > hi { n.saturating_sub(1).max(1) } else { n + 1 };
        }
        n = next;
    }
    Err(PopulateError::Sizing { achieved_kva: last.0, lo, hi, iterations: config.max_iterations, houses: last.1 })
}
