use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EngineError;
use crate::dispatch::DispatchMode;
use crate::monitor::ConstraintLimits;
use crate::netmodel::{load_feeder, FeederModel};
use crate::series::TimeSeries;
use crate::transformer::OilTimeConstant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Base,
    Regulation,
}

impl Case {
    pub fn name(self) -> &'static str {
        match self {
            Case::Base => "base",
            Case::Regulation => "regulation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvMode {
    #[default]
    None,
    Charge,
    Discharge,
}

impl EvMode {
    pub fn name(self) -> &'static str {
        match self {
            EvMode::None => "none",
            EvMode::Charge => "charge",
            EvMode::Discharge => "discharge",
        }
    }

    /// Sign of the EV demand: +1 charging, -1 discharging.
    pub fn sign(self) -> f64 {
        match self {
            EvMode::None => 0.0,
            EvMode::Charge => 1.0,
            EvMode::Discharge => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Proportional gain on the tracking error.
    pub gain: f64,
    pub mode: DispatchMode,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { gain: 1.0, mode: DispatchMode::Probabilistic }
    }
}

/// Scenario description. Input paths are relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub feeder: PathBuf,
    pub weather: PathBuf,
    pub regulation_signal: Option<PathBuf>,
    pub case: Case,
    /// Start of the test hour in weather time, seconds; found by peak scan when absent.
    pub test_hour_start_s: Option<f64>,
    pub dt_test_s: f64,
    pub dt_warmup_s: f64,
    pub warmup_coarse_h: f64,
    pub warmup_fine_h: f64,
    /// Peak magnitude of the scaled signal, per unit of the baseline.
    pub signal_scale: f64,
    pub ev_mode: EvMode,
    /// Fraction of houses that own an EV.
    pub ev_penetration: f64,
    pub ev_power_kw: f64,
    pub seed: u64,
    pub controller: ControllerConfig,
    /// Overrides the feeder's slack voltage.
    pub slack_voltage_pu: Option<f64>,
    /// Line whose DistFlow voltage sensitivity is tracked.
    pub monitored_line: Option<String>,
    pub sensitivity_power_factor: f64,
    pub limits: ConstraintLimits,
    pub oil_time_constant: OilTimeConstant,
    /// Capacitor switching delay, seconds.
    pub capacitor_delay_s: f64,
    pub n_trials: usize,
    pub powerflow_tolerance: f64,
    pub powerflow_max_iter: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            feeder: PathBuf::new(),
            weather: PathBuf::new(),
            regulation_signal: None,
            case: Case::Regulation,
            test_hour_start_s: None,
            dt_test_s: 2.0,
            dt_warmup_s: 30.0,
            warmup_coarse_h: 23.5,
            warmup_fine_h: 0.5,
            signal_scale: 0.4,
            ev_mode: EvMode::None,
            ev_penetration: 0.2,
            ev_power_kw: 3.3,
            seed: 1,
            controller: ControllerConfig::default(),
            slack_voltage_pu: None,
            monitored_line: None,
            sensitivity_power_factor: 0.97,
            limits: ConstraintLimits::default(),
            oil_time_constant: OilTimeConstant::LoadDependent,
            capacitor_delay_s: 30.0,
            n_trials: 6,
            powerflow_tolerance: 1e-8,
            powerflow_max_iter: 50,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(m));
        if !(self.dt_test_s > 0.0 && self.dt_warmup_s > 0.0) {
            return bad("time steps must be positive".into());
        }
        if !(self.warmup_coarse_h >= 0.0 && self.warmup_fine_h >= 0.0) {
            return bad("warm-up durations must be nonnegative".into());
        }
        let fine = self.warmup_fine_h * 3600.0;
        if !divides(self.dt_test_s, fine) || !divides(self.dt_test_s, 3600.0) {
            return bad(format!("dt_test_s {} must divide the fine warm-up window and the hour", self.dt_test_s));
        }
        if !divides(self.dt_warmup_s, self.warmup_coarse_h * 3600.0) {
            return bad(format!("dt_warmup_s {} must divide the coarse warm-up window", self.dt_warmup_s));
        }
        if !(self.signal_scale > 0.0) {
            return bad("signal_scale must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.ev_penetration) || !(self.ev_power_kw >= 0.0) {
            return bad("ev_penetration must lie in [0, 1] and ev_power_kw >= 0".into());
        }
        if !self.limits.is_consistent() {
            return bad("emergency voltage band must strictly contain the continuous band".into());
        }
        if !(self.sensitivity_power_factor > 0.0 && self.sensitivity_power_factor <= 1.0) {
            return bad("sensitivity_power_factor must lie in (0, 1]".into());
        }
        if !(self.controller.gain.is_finite() && self.capacitor_delay_s >= 0.0) {
            return bad("controller gain must be finite and capacitor delay nonnegative".into());
        }
        if let Some(v) = self.slack_voltage_pu {
            if !(v > 0.0) {
                return bad("slack_voltage_pu must be > 0".into());
            }
        }
        Ok(())
    }
}

fn divides(step: f64, window: f64) -> bool {
    let n = (window / step).round();
    (n * step - window).abs() <= 1e-9 * window.max(1.0)
}

/// A configuration with all inputs loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub feeder: FeederModel,
    pub weather: TimeSeries,
    pub signal: Option<TimeSeries>,
    /// SHA-256 over the effective config and the raw bytes of every input file.
    pub input_digest: String,
    input_bytes: Vec<Vec<u8>>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = std::fs::read_to_string(path).map_err(|e| EngineError::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let config: ScenarioConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| EngineError::Config(format!("{}: at `{}`: {}", path.display(), e.path(), e.inner())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_config(config, dir)
    }

    /// Resolve input paths against `dir` and load them.
    pub fn from_config(config: ScenarioConfig, dir: &Path) -> Result<Self, EngineError> {
        config.validate()?;
        let read = |p: &Path| -> Result<(PathBuf, Vec<u8>), EngineError> {
            let full = dir.join(p);
            let bytes = std::fs::read(&full).map_err(|e| EngineError::io(&full, e))?;
            Ok((full, bytes))
        };
        let (feeder_path, feeder_bytes) = read(&config.feeder)?;
        let feeder = load_feeder(&feeder_path)?;
        let (weather_path, weather_bytes) = read(&config.weather)?;
        let weather = TimeSeries::load_weather(&weather_path)?;
        let mut input_bytes = vec![feeder_bytes, weather_bytes];
        let signal = match &config.regulation_signal {
            Some(p) => {
                let (full, bytes) = read(p)?;
                input_bytes.push(bytes);
                Some(TimeSeries::load_signal(&full)?)
            }
            None => None,
        };
        Self::assemble(config, feeder, weather, signal, input_bytes)
    }

    /// Build from in-memory inputs.
    pub fn from_parts(
        config: ScenarioConfig,
        feeder: FeederModel,
        weather: TimeSeries,
        signal: Option<TimeSeries>,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        feeder.validate()?;
        let mut input_bytes = vec![feeder.to_json_string().into_bytes(), series_bytes(&weather)];
        if let Some(s) = &signal {
            input_bytes.push(series_bytes(s));
        }
        Self::assemble(config, feeder, weather, signal, input_bytes)
    }

    fn assemble(
        config: ScenarioConfig,
        feeder: FeederModel,
        weather: TimeSeries,
        signal: Option<TimeSeries>,
        input_bytes: Vec<Vec<u8>>,
    ) -> Result<Self, EngineError> {
        if let Some(line) = &config.monitored_line {
            if feeder.line(line).is_none() {
                return Err(EngineError::Config(format!("monitored_line `{line}` is not a line of the feeder")));
            }
        }
        let mut s = Self { config, feeder, weather, signal, input_digest: String::new(), input_bytes };
        s.input_digest = s.digest();
        Ok(s)
    }

    fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for b in &self.input_bytes {
            h.update((b.len() as u64).to_le_bytes());
            h.update(b);
        }
        hex::encode(h.finalize())
    }

    /// Copy with a different seed; the digest is recomputed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.config.seed = seed;
        s.input_digest = s.digest();
        s
    }

    /// Copy with a modified config; inputs are kept.
    pub fn with_config(&self, f: impl FnOnce(&mut ScenarioConfig)) -> Self {
        let mut s = self.clone();
        f(&mut s.config);
        s.input_digest = s.digest();
        s
    }
}

fn series_bytes(s: &TimeSeries) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 * s.times().len());
    for (t, v) in s.times().iter().zip(s.values()) {
        out.extend_from_slice(&t.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}
