//! Feeder data model, invariant checks and the native JSON feeder schema.
//!
//! A feeder is a radial graph of buses connected by line segments and
//! distribution transformers, with capacitor banks, fuses, ZIP loads and
//! houses attached. Everything is in physical units; per-unit conversion
//! happens in [`crate::powerflow`].

mod populate;
mod synth;
mod topology;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hvac::HouseParams;
use crate::transformer::{XfmrThermalParams, RATING_MAX_KVA, RATING_MIN_KVA};

pub use populate::{attach_houses, populate_houses, PopulateError, PopulateOutcome, PopulatorConfig, Range};
pub use synth::{synthetic_feeder, SynthSpec};
pub use topology::{check_radial, EdgeRef, Topology};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{path}: cannot read feeder file: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation at `{field}` (line {line}, column {column}): {message}")]
    Schema { field: String, line: usize, column: usize, message: String },
    #[error("unsupported schema_version {found}; expected {SCHEMA_VERSION}")]
    Version { found: u32 },
    #[error("invalid value at `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("topology: network contains a cycle through buses [{}]", cycle.join(", "))]
    Cycle { cycle: Vec<String> },
    #[error("topology: buses unreachable from the slack bus: [{}]", buses.join(", "))]
    Disconnected { buses: Vec<String> },
}

impl ModelError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Invalid { field: field.into(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Nominal angle of the phase voltage, radians.
    pub fn angle(self) -> f64 {
        -(self.index() as f64) * 2.0 * std::f64::consts::PI / 3.0
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::A => "A",
            Phase::B => "B",
            Phase::C => "C",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub phases: Vec<Phase>,
    /// Secondary-side bus where service lines meet a distribution transformer.
    #[serde(default)]
    pub is_service_node: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub phases: Vec<Phase>,
    /// Series resistance of each phase conductor, ohms.
    pub r_ohm: f64,
    /// Series reactance of each phase conductor, ohms.
    pub x_ohm: f64,
    pub ampacity_a: f64,
    pub length_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionTransformer {
    pub id: String,
    pub bus_primary: String,
    pub bus_secondary: String,
    pub rating_kva: f64,
    /// Line-to-neutral base voltage of the secondary side, volts.
    pub secondary_voltage_v: f64,
    /// Series impedance on the transformer's own base, per unit.
    pub r_pu: f64,
    pub x_pu: f64,
    /// Fixed off-nominal ratio (secondary / primary), per unit.
    #[serde(default = "unity")]
    pub tap: f64,
    /// Explicit thermal parameters; interpolated from the rating when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermal: Option<XfmrThermalParams>,
    /// Planning load used by the house populator, kVA.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planning_load_kva: Option<f64>,
}

impl DistributionTransformer {
    pub fn thermal_params(&self) -> Result<XfmrThermalParams, ModelError> {
        match &self.thermal {
            Some(p) => Ok(p.clone()),
            None => XfmrThermalParams::for_rating(self.rating_kva)
                .map_err(|e| ModelError::invalid(format!("transformers[{}].rating_kva", self.id), e.to_string())),
        }
    }
}

fn unity() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CapacitorControl {
    Fixed,
    /// Switch in when the sensed voltage falls below `v_on_pu`, out above `v_off_pu`.
    Voltage { v_on_pu: f64, v_off_pu: f64, sense_bus: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitorBank {
    pub id: String,
    pub bus: String,
    pub phases: Vec<Phase>,
    pub kvar_per_phase: f64,
    pub control: CapacitorControl,
    /// Initial switch state; all phases switch together.
    #[serde(default = "yes")]
    pub closed: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuseStatus {
    Closed,
    Open,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fuse {
    pub id: String,
    pub line: String,
    pub current_limit_a: f64,
    pub status: FuseStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZipFractions {
    pub z: f64,
    pub i: f64,
    pub p: f64,
}

impl ZipFractions {
    pub const CONSTANT_POWER: ZipFractions = ZipFractions { z: 0.0, i: 0.0, p: 1.0 };

    fn check(&self, field: &str) -> Result<(), ModelError> {
        for v in [self.z, self.i, self.p] {
            if !v.is_finite() || v < 0.0 {
                return Err(ModelError::invalid(field, "fractions must be finite and nonnegative"));
            }
        }
        let sum = self.z + self.i + self.p;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ModelError::invalid(field, format!("z + i + p must equal 1, got {sum}")));
        }
        Ok(())
    }
}

/// Aggregate ZIP load on one phase of a bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipLoad {
    pub id: String,
    pub bus: String,
    pub phase: Phase,
    /// Apparent power at nominal voltage, kVA.
    pub base_kva: f64,
    pub power_factor: f64,
    pub real: ZipFractions,
    pub reactive: ZipFractions,
}

impl ZipLoad {
    /// Nominal-voltage demand `(kW, kvar)`.
    pub fn nominal_pq(&self) -> (f64, f64) {
        let p = self.base_kva * self.power_factor;
        let q = self.base_kva * (1.0 - self.power_factor * self.power_factor).max(0.0).sqrt();
        (p, q)
    }
}

/// Residential house: an air conditioner with its ETP thermal model, plus a
/// ZIP load for everything else. Each house sits on one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct House {
    pub id: String,
    pub bus: String,
    pub phase: Phase,
    pub hvac: HouseParams,
    /// Constant internal heat gain, kW.
    pub internal_gain_kw: f64,
    pub zip: ZipLoad,
}

/// Complete feeder description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederModel {
    pub schema_version: u32,
    pub name: String,
    /// Line-to-neutral nominal voltage at the slack bus, volts.
    pub nominal_voltage_v: f64,
    pub slack_bus: String,
    /// Slack (substation) voltage magnitude, per unit.
    #[serde(default = "unity")]
    pub slack_voltage_pu: f64,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub lines: Vec<LineSegment>,
    #[serde(default)]
    pub transformers: Vec<DistributionTransformer>,
    #[serde(default)]
    pub capacitors: Vec<CapacitorBank>,
    #[serde(default)]
    pub fuses: Vec<Fuse>,
    #[serde(default)]
    pub loads: Vec<ZipLoad>,
    #[serde(default)]
    pub houses: Vec<House>,
}

impl FeederModel {
    pub fn bus(&self, id: &str) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn line(&self, id: &str) -> Option<&LineSegment> {
        self.lines.iter().find(|l| l.id == id)
    }

    /// Houses attached to `bus`.
    pub fn houses_at<'a>(&'a self, bus: &'a str) -> impl Iterator<Item = &'a House> + 'a {
        self.houses.iter().filter(move |h| h.bus == bus)
    }

    /// For each transformer, the indices of houses on its secondary bus.
    pub fn houses_by_transformer(&self) -> Vec<Vec<usize>> {
        let mut by_bus: HashMap<&str, Vec<usize>> = HashMap::new();
        for (k, h) in self.houses.iter().enumerate() {
            by_bus.entry(h.bus.as_str()).or_default().push(k);
        }
        self.transformers
            .iter()
            .map(|t| by_bus.get(t.bus_secondary.as_str()).cloned().unwrap_or_default())
            .collect()
    }

    /// Parse a feeder document and check every invariant.
    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let model: FeederModel = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            ModelError::Schema { field, line: inner.line(), column: inner.column(), message: inner.to_string() }
        })?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("feeder model serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json_string() + "\n")
            .map_err(|source| ModelError::Io { path: path.display().to_string(), source })
    }

    /// Check all type invariants, including radiality.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ModelError::Version { found: self.schema_version });
        }
        positive("nominal_voltage_v", self.nominal_voltage_v)?;
        positive("slack_voltage_pu", self.slack_voltage_pu)?;

        let mut buses: HashMap<&str, &Bus> = HashMap::new();
        for (k, bus) in self.buses.iter().enumerate() {
            let field = format!("buses[{k}]");
            check_phases(&format!("{field}.phases"), &bus.phases)?;
            if buses.insert(bus.id.as_str(), bus).is_some() {
                return Err(ModelError::invalid(format!("{field}.id"), format!("duplicate bus id `{}`", bus.id)));
            }
        }
        let bus_ref = |field: String, id: &str| -> Result<&Bus, ModelError> {
            buses.get(id).copied().ok_or_else(|| ModelError::invalid(field, format!("unknown bus `{id}`")))
        };
        let slack = bus_ref("slack_bus".into(), &self.slack_bus)?;
        if slack.phases.len() != 3 {
            return Err(ModelError::invalid("slack_bus", "slack bus must carry all three phases"));
        }

        let mut ids = HashSet::new();
        let mut line_ids = HashSet::new();
        for (k, line) in self.lines.iter().enumerate() {
            let field = format!("lines[{k}]");
            unique(&mut ids, &field, &line.id)?;
            line_ids.insert(line.id.as_str());
            check_phases(&format!("{field}.phases"), &line.phases)?;
            for (end, id) in [("from_bus", &line.from_bus), ("to_bus", &line.to_bus)] {
                let bus = bus_ref(format!("{field}.{end}"), id)?;
                if !subset(&line.phases, &bus.phases) {
                    return Err(ModelError::invalid(
                        format!("{field}.phases"),
                        format!("line phases not present on bus `{id}`"),
                    ));
                }
            }
            nonnegative(&format!("{field}.r_ohm"), line.r_ohm)?;
            finite(&format!("{field}.x_ohm"), line.x_ohm)?;
            positive(&format!("{field}.ampacity_a"), line.ampacity_a)?;
            nonnegative(&format!("{field}.length_m"), line.length_m)?;
        }

        for (k, t) in self.transformers.iter().enumerate() {
            let field = format!("transformers[{k}]");
            unique(&mut ids, &field, &t.id)?;
            let primary = bus_ref(format!("{field}.bus_primary"), &t.bus_primary)?;
            let secondary = bus_ref(format!("{field}.bus_secondary"), &t.bus_secondary)?;
            if !subset(&secondary.phases, &primary.phases) {
                return Err(ModelError::invalid(
                    format!("{field}.bus_secondary"),
                    "secondary bus phases must be present on the primary bus",
                ));
            }
            positive(&format!("{field}.rating_kva"), t.rating_kva)?;
            positive(&format!("{field}.secondary_voltage_v"), t.secondary_voltage_v)?;
            nonnegative(&format!("{field}.r_pu"), t.r_pu)?;
            finite(&format!("{field}.x_pu"), t.x_pu)?;
            positive(&format!("{field}.tap"), t.tap)?;
            match &t.thermal {
                Some(p) => p
                    .validate()
                    .map_err(|e| ModelError::invalid(format!("{field}.thermal"), e.to_string()))?,
                None if !(RATING_MIN_KVA..=RATING_MAX_KVA).contains(&t.rating_kva) => {
                    return Err(ModelError::invalid(
                        format!("{field}.rating_kva"),
                        "rating outside 5-175 kVA requires explicit thermal parameters",
                    ))
                }
                None => {}
            }
            if let Some(p) = t.planning_load_kva {
                nonnegative(&format!("{field}.planning_load_kva"), p)?;
            }
        }

        for (k, c) in self.capacitors.iter().enumerate() {
            let field = format!("capacitors[{k}]");
            unique(&mut ids, &field, &c.id)?;
            let bus = bus_ref(format!("{field}.bus"), &c.bus)?;
            check_phases(&format!("{field}.phases"), &c.phases)?;
            if !subset(&c.phases, &bus.phases) {
                return Err(ModelError::invalid(format!("{field}.phases"), "capacitor phases not on bus"));
            }
            nonnegative(&format!("{field}.kvar_per_phase"), c.kvar_per_phase)?;
            if let CapacitorControl::Voltage { v_on_pu, v_off_pu, sense_bus } = &c.control {
                bus_ref(format!("{field}.control.sense_bus"), sense_bus)?;
                positive(&format!("{field}.control.v_on_pu"), *v_on_pu)?;
                if !(v_on_pu < v_off_pu) {
                    return Err(ModelError::invalid(
                        format!("{field}.control"),
                        format!("v_on_pu {v_on_pu} must be below v_off_pu {v_off_pu}"),
                    ));
                }
            }
        }

        for (k, f) in self.fuses.iter().enumerate() {
            let field = format!("fuses[{k}]");
            unique(&mut ids, &field, &f.id)?;
            if !line_ids.contains(f.line.as_str()) {
                return Err(ModelError::invalid(format!("{field}.line"), format!("unknown line `{}`", f.line)));
            }
            positive(&format!("{field}.current_limit_a"), f.current_limit_a)?;
        }

        for (k, l) in self.loads.iter().enumerate() {
            let field = format!("loads[{k}]");
            unique(&mut ids, &field, &l.id)?;
            check_zip(&field, l, &buses)?;
        }

        for (k, h) in self.houses.iter().enumerate() {
            let field = format!("houses[{k}]");
            unique(&mut ids, &field, &h.id)?;
            let bus = bus_ref(format!("{field}.bus"), &h.bus)?;
            if !bus.phases.contains(&h.phase) {
                return Err(ModelError::invalid(format!("{field}.phase"), "house phase not on bus"));
            }
            h.hvac.validate().map_err(|e| ModelError::invalid(format!("{field}.hvac"), e.to_string()))?;
            nonnegative(&format!("{field}.internal_gain_kw"), h.internal_gain_kw)?;
            if h.zip.bus != h.bus || h.zip.phase != h.phase {
                return Err(ModelError::invalid(format!("{field}.zip"), "house ZIP load must share the house bus and phase"));
            }
            check_zip(&format!("{field}.zip"), &h.zip, &buses)?;
        }

        Topology::build(self)?;
        Ok(())
    }
}

/// Read and validate a feeder file.
pub fn load_feeder(path: &Path) -> Result<FeederModel, ModelError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    FeederModel::from_json_str(&text)
}

fn check_zip(field: &str, l: &ZipLoad, buses: &HashMap<&str, &Bus>) -> Result<(), ModelError> {
    let bus = buses
        .get(l.bus.as_str())
        .ok_or_else(|| ModelError::invalid(format!("{field}.bus"), format!("unknown bus `{}`", l.bus)))?;
    if !bus.phases.contains(&l.phase) {
        return Err(ModelError::invalid(format!("{field}.phase"), "load phase not on bus"));
    }
    finite(&format!("{field}.base_kva"), l.base_kva)?;
    if !(l.power_factor > 0.0 && l.power_factor <= 1.0) {
        return Err(ModelError::invalid(format!("{field}.power_factor"), "must lie in (0, 1]"));
    }
    l.real.check(&format!("{field}.real"))?;
    l.reactive.check(&format!("{field}.reactive"))?;
    Ok(())
}

fn unique<'a>(seen: &mut HashSet<&'a str>, field: &str, id: &'a str) -> Result<(), ModelError> {
    if !seen.insert(id) {
        return Err(ModelError::invalid(format!("{field}.id"), format!("duplicate component id `{id}`")));
    }
    Ok(())
}

fn check_phases(field: &str, phases: &[Phase]) -> Result<(), ModelError> {
    if phases.is_empty() {
        return Err(ModelError::invalid(field, "at least one phase required"));
    }
    if phases.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ModelError::invalid(field, "phases must be listed once each in A, B, C order"));
    }
    Ok(())
}

fn subset(inner: &[Phase], outer: &[Phase]) -> bool {
    inner.iter().all(|p| outer.contains(p))
}

fn finite(field: &str, v: f64) -> Result<(), ModelError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(ModelError::invalid(field, "must be finite"))
    }
}

fn positive(field: &str, v: f64) -> Result<(), ModelError> {
    finite(field, v)?;
    if v > 0.0 {
        Ok(())
    } else {
        Err(ModelError::invalid(field, format!("must be > 0, got {v}")))
    }
}

fn nonnegative(field: &str, v: f64) -> Result<(), ModelError> {
    finite(field, v)?;
    if v >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::invalid(field, format!("must be >= 0, got {v}")))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn two_bus_json() -> String {
        r#"{
  "schema_version": 1,
  "name": "two-bus",
  "nominal_voltage_v": 7200.0,
  "slack_bus": "0",
  "buses": [
    { "id": "0", "phases": ["A", "B", "C"] },
    { "id": "1", "phases": ["A", "B", "C"] }
  ],
  "lines": [
    { "id": "L1", "from_bus": "0", "to_bus": "1", "phases": ["A", "B", "C"],
      "r_ohm": 0.3, "x_ohm": 0.6, "ampacity_a": 400.0, "length_m": 1000.0 }
  ]
}"#
        .to_string()
    }

    #[test]
    fn loads_minimal_feeder() {
        let f = FeederModel::from_json_str(&two_bus_json()).unwrap();
        assert_eq!(f.lines.len(), 1);
        assert_eq!(f.slack_bus, "0");
        assert_eq!(f.slack_voltage_pu, 1.0);
    }

    #[test]
    fn schema_error_names_field() {
        let text = two_bus_json().replace("\"ampacity_a\": 400.0", "\"ampacity_a\": \"big\"");
        match FeederModel::from_json_str(&text) {
            Err(ModelError::Schema { field, line, .. }) => {
                assert_eq!(field, "lines[0].ampacity_a");
                assert!(line > 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = two_bus_json().replace("\"r_ohm\": 0.3, ", "");
        let err = FeederModel::from_json_str(&text).unwrap_err();
        assert!(err.to_string().contains("r_ohm"), "{err}");
    }

    #[test]
    fn rejects_invalid_values() {
        let text = two_bus_json().replace("\"ampacity_a\": 400.0", "\"ampacity_a\": 0.0");
        match FeederModel::from_json_str(&text) {
            Err(ModelError::Invalid { field, .. }) => assert_eq!(field, "lines[0].ampacity_a"),
            other => panic!("unexpected {other:?}"),
        }
        let text = two_bus_json().replace("\"r_ohm\": 0.3", "\"r_ohm\": -0.3");
        assert!(matches!(FeederModel::from_json_str(&text), Err(ModelError::Invalid { .. })));
        let text = two_bus_json().replace("\"to_bus\": \"1\"", "\"to_bus\": \"9\"");
        assert!(matches!(FeederModel::from_json_str(&text), Err(ModelError::Invalid { .. })));
        let text = two_bus_json().replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(FeederModel::from_json_str(&text), Err(ModelError::Version { found: 2 })));
    }

    #[test]
    fn rejects_cycle_with_listing() {
        let text = r#"{
  "schema_version": 1, "name": "loop", "nominal_voltage_v": 7200.0, "slack_bus": "0",
  "buses": [
    { "id": "0", "phases": ["A", "B", "C"] },
    { "id": "1", "phases": ["A", "B", "C"] },
    { "id": "2", "phases": ["A", "B", "C"] }
  ],
  "lines": [
    { "id": "L1", "from_bus": "0", "to_bus": "1", "phases": ["A","B","C"], "r_ohm": 0.1, "x_ohm": 0.1, "ampacity_a": 100.0, "length_m": 10.0 },
    { "id": "L2", "from_bus": "1", "to_bus": "2", "phases": ["A","B","C"], "r_ohm": 0.1, "x_ohm": 0.1, "ampacity_a": 100.0, "length_m": 10.0 },
    { "id": "L3", "from_bus": "2", "to_bus": "0", "phases": ["A","B","C"], "r_ohm": 0.1, "x_ohm": 0.1, "ampacity_a": 100.0, "length_m": 10.0 }
  ]
}"#;
        match FeederModel::from_json_str(text) {
            Err(ModelError::Cycle { mut cycle }) => {
                cycle.sort();
                assert_eq!(cycle, vec!["0", "1", "2"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zip_fractions_must_sum_to_one() {
        let bad = ZipFractions { z: 0.3, i: 0.3, p: 0.3 };
        assert!(bad.check("x").is_err());
        ZipFractions { z: 0.2, i: 0.3, p: 0.5 }.check("x").unwrap();
    }
}
