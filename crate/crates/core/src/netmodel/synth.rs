//! Synthetic radial test feeders.
//!
//! A three-phase trunk leaves the substation; each trunk node feeds one fused
//! single-phase lateral per phase, and single-phase distribution transformers
//! hang off the laterals round-robin. Transformer secondaries are the service
//! nodes where houses attach.

use serde::{Deserialize, Serialize};

use super::{
    Bus, CapacitorBank, CapacitorControl, DistributionTransformer, FeederModel, Fuse, FuseStatus, LineSegment,
    Phase, SCHEMA_VERSION,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub name: String,
    /// Line-to-neutral primary voltage, volts.
    pub nominal_voltage_v: f64,
    pub slack_voltage_pu: f64,
    pub trunk_nodes: usize,
    pub trunk_segment_m: f64,
    /// Trunk conductor resistance and reactance, ohm/km.
    pub trunk_r_ohm_per_km: f64,
    pub trunk_x_ohm_per_km: f64,
    pub trunk_ampacity_a: f64,
    pub lateral_length_m: f64,
    pub lateral_r_ohm_per_km: f64,
    pub lateral_x_ohm_per_km: f64,
    pub lateral_ampacity_a: f64,
    pub fuse_limit_a: f64,
    pub transformers: usize,
    /// Ratings cycled over the transformers, kVA.
    pub ratings_kva: Vec<f64>,
    pub secondary_voltage_v: f64,
    pub xfmr_r_pu: f64,
    pub xfmr_x_pu: f64,
    /// Planning load as a fraction of rating.
    pub planning_fraction: f64,
    /// Three-phase switched capacitor at the middle of the trunk; zero disables it.
    pub capacitor_kvar_per_phase: f64,
    pub capacitor_v_on_pu: f64,
    pub capacitor_v_off_pu: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "synth-r1".into(),
            nominal_voltage_v: 7200.0,
            slack_voltage_pu: 1.03,
            trunk_nodes: 4,
            trunk_segment_m: 1500.0,
            trunk_r_ohm_per_km: 0.35,
            trunk_x_ohm_per_km: 0.70,
            trunk_ampacity_a: 400.0,
            lateral_length_m: 1000.0,
            lateral_r_ohm_per_km: 1.0,
            lateral_x_ohm_per_km: 0.5,
            lateral_ampacity_a: 100.0,
            fuse_limit_a: 140.0,
            transformers: 40,
            ratings_kva: vec![15.0, 25.0, 25.0, 37.5],
            secondary_voltage_v: 240.0,
            xfmr_r_pu: 0.012,
            xfmr_x_pu: 0.018,
            planning_fraction: 0.6,
            capacitor_kvar_per_phase: 100.0,
            capacitor_v_on_pu: 0.99,
            capacitor_v_off_pu: 1.045,
        }
    }
}

/// Build the network described by `spec`, with no houses attached.
pub fn synthetic_feeder(spec: &SynthSpec) -> FeederModel {
    let abc = Phase::ALL.to_vec();
    let mut buses = vec![Bus { id: "sub".into(), phases: abc.clone(), is_service_node: false }];
    let mut lines = Vec::new();
    let mut fuses = Vec::new();
    let mut laterals = Vec::new();

    let mut upstream = "sub".to_string();
    for k in 1..=spec.trunk_nodes {
        let id = format!("n{k}");
        buses.push(Bus { id: id.clone(), phases: abc.clone(), is_service_node: false });
        let km = spec.trunk_segment_m / 1000.0;
        lines.push(LineSegment {
            id: format!("trunk{k}"),
            from_bus: upstream.clone(),
            to_bus: id.clone(),
            phases: abc.clone(),
            r_ohm: spec.trunk_r_ohm_per_km * km,
            x_ohm: spec.trunk_x_ohm_per_km * km,
            ampacity_a: spec.trunk_ampacity_a,
            length_m: spec.trunk_segment_m,
        });
        for phase in Phase::ALL {
            let lat = format!("lat{k}{phase}");
            buses.push(Bus { id: lat.clone(), phases: vec![phase], is_service_node: false });
            let km = spec.lateral_length_m / 1000.0;
            let line_id = format!("lat{k}{phase}-line");
            lines.push(LineSegment {
                id: line_id.clone(),
                from_bus: id.clone(),
                to_bus: lat.clone(),
                phases: vec![phase],
                r_ohm: spec.lateral_r_ohm_per_km * km,
                x_ohm: spec.lateral_x_ohm_per_km * km,
                ampacity_a: spec.lateral_ampacity_a,
                length_m: spec.lateral_length_m,
            });
            fuses.push(Fuse {
                id: format!("fuse{k}{phase}"),
                line: line_id,
                current_limit_a: spec.fuse_limit_a,
                status: FuseStatus::Closed,
            });
            laterals.push((lat, phase));
        }
        upstream = id;
    }

    // Interleave by phase so consecutive transformers land on different phases.
    let mut transformers = Vec::new();
    let order: Vec<usize> = {
        let per_phase = spec.trunk_nodes;
        (0..per_phase).flat_map(|k| (0..3).map(move |p| k * 3 + p)).collect()
    };
    for j in 0..spec.transformers {
        let (lat, phase) = &laterals[order[j % order.len()]];
        let secondary = format!("svc{}", j + 1);
        buses.push(Bus { id: secondary.clone(), phases: vec![*phase], is_service_node: true });
        let rating = spec.ratings_kva[j % spec.ratings_kva.len()];
        transformers.push(DistributionTransformer {
            id: format!("xf{}", j + 1),
            bus_primary: lat.clone(),
            bus_secondary: secondary,
            rating_kva: rating,
            secondary_voltage_v: spec.secondary_voltage_v,
            r_pu: spec.xfmr_r_pu,
            x_pu: spec.xfmr_x_pu,
            tap: 1.0,
            thermal: None,
            planning_load_kva: Some(spec.planning_fraction * rating),
        });
    }

    let mut capacitors = Vec::new();
    if spec.capacitor_kvar_per_phase > 0.0 && spec.trunk_nodes > 0 {
        let mid = format!("n{}", spec.trunk_nodes.div_ceil(2));
        capacitors.push(CapacitorBank {
            id: "cap1".into(),
            bus: mid,
            phases: abc.clone(),
            kvar_per_phase: spec.capacitor_kvar_per_phase,
            control: CapacitorControl::Voltage {
                v_on_pu: spec.capacitor_v_on_pu,
                v_off_pu: spec.capacitor_v_off_pu,
                sense_bus: format!("n{}", spec.trunk_nodes),
            },
            closed: true,
        });
    }

    FeederModel {
        schema_version: SCHEMA_VERSION,
        name: spec.name.clone(),
        nominal_voltage_v: spec.nominal_voltage_v,
        slack_bus: "sub".into(),
        slack_voltage_pu: spec.slack_voltage_pu,
        buses,
        lines,
        transformers,
        capacitors,
        fuses,
        loads: Vec::new(),
        houses: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_feeder_is_valid() {
        let f = synthetic_feeder(&SynthSpec::default());
        f.validate().unwrap();
        assert_eq!(f.transformers.len(), 40);
        assert_eq!(f.buses.iter().filter(|b| b.is_service_node).count(), 40);
        assert_eq!(f.lines.len(), f.buses.len() - 1 - f.transformers.len());
        let per_phase = Phase::ALL.map(|p| {
            f.transformers.iter().filter(|t| f.bus(&t.bus_secondary).unwrap().phases == vec![p]).count()
        });
        assert_eq!(per_phase, [14, 13, 13]);
    }
}
