//! Three-phase unbalanced power flow on radial feeders.
//!
//! The feeder is compiled once into a per-unit tree ([`Network`]); each time
//! step is then solved by backward/forward sweep. Phases are carried
//! independently: line segments have equal self impedance per phase and no
//! mutual coupling, so unbalance arises from unequal phase loading.
//!
//! Per-unit system: a single power base [`S_BASE_KVA`] per phase, and a
//! voltage base per bus inherited from the slack through lines and reset by
//! each transformer's secondary voltage.

mod distflow;

use num_complex::Complex64;
use thiserror::Error;

use crate::netmodel::{EdgeRef, FeederModel, ModelError, Topology};

pub use distflow::{distflow_voltage, voltage_sensitivity, DistFlowError, DistFlowLine, SensitivityTerms};

/// Per-phase power base, kVA.
pub const S_BASE_KVA: f64 = 100.0;

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("degenerate impedance on {component}: series impedance must be nonzero")]
    DegenerateImpedance { component: String },
    #[error("load vector has {got} buses, network has {expected}")]
    LoadShape { got: usize, expected: usize },
    #[error("power flow did not converge after {iterations} iterations; worst mismatch {mismatch:.3e} p.u. at bus `{bus}` phase {phase}")]
    NonConvergence { iterations: usize, bus: String, phase: usize, mismatch: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Per-unit complex-power mismatch tolerance.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iter: 50 }
    }
}

/// ZIP demand on one phase, each component in kVA at 1 p.u. voltage.
/// Demand at voltage `v` is `power + current |v| + impedance |v|^2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseLoad {
    pub power: Complex64,
    pub current: Complex64,
    pub impedance: Complex64,
}

impl PhaseLoad {
    pub fn constant_power(p_kw: f64, q_kvar: f64) -> Self {
        Self { power: Complex64::new(p_kw, q_kvar), ..Self::default() }
    }

    pub fn demand_kva(&self, v_mag: f64) -> Complex64 {
        self.power + self.current * v_mag + self.impedance * (v_mag * v_mag)
    }

    pub fn add(&mut self, other: &PhaseLoad) {
        self.power += other.power;
        self.current += other.current;
        self.impedance += other.impedance;
    }
}

pub type BusLoad = [PhaseLoad; 3];

#[derive(Debug, Clone)]
struct Branch {
    edge: EdgeRef,
    from: usize,
    z: Complex64,
    tap: f64,
}

/// Per-unit radial network compiled from a feeder model.
#[derive(Debug, Clone)]
pub struct Network {
    pub topology: Topology,
    bus_ids: Vec<String>,
    phases: Vec<[bool; 3]>,
    base_v: Vec<f64>,
    branch: Vec<Option<Branch>>,
    children: Vec<Vec<usize>>,
    /// Downstream bus of each line, by line index.
    line_to: Vec<usize>,
    /// Secondary bus of each transformer, by transformer index.
    xfmr_to: Vec<usize>,
    slack_v: [Complex64; 3],
}

/// Result of one power-flow solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    /// Per-bus per-phase voltage, p.u. (zero on absent phases and de-energized buses).
    pub voltages: Vec<[Complex64; 3]>,
    /// Current delivered into each bus by its feeding branch, p.u. on that bus's base.
    pub branch_currents: Vec<[Complex64; 3]>,
    /// Per-line per-phase current magnitude, amperes.
    pub line_currents_a: Vec<[f64; 3]>,
    /// Apparent power delivered at each transformer's secondary terminals, kVA.
    pub transformer_kva: Vec<f64>,
    /// Complex power drawn from the slack bus, summed over phases, kVA.
    pub head_power_kva: Complex64,
    pub energized: Vec<bool>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn voltage_magnitude(&self, bus: usize, phase: usize) -> f64 {
        self.voltages[bus][phase].norm()
    }
}

impl Network {
    pub fn new(feeder: &FeederModel) -> Result<Self, PowerFlowError> {
        let topology = Topology::build(feeder)?;
        let n = feeder.buses.len();
        let phases: Vec<[bool; 3]> = feeder
            .buses
            .iter()
            .map(|b| {
                let mut mask = [false; 3];
                for p in &b.phases {
                    mask[p.index()] = true;
                }
                mask
            })
            .collect();

        let mut base_v = vec![0.0; n];
        let mut branch: Vec<Option<Branch>> = vec![None; n];
        let mut children = vec![Vec::new(); n];
        base_v[topology.slack] = feeder.nominal_voltage_v;
        for &bus in &topology.order {
            let Some((edge, up)) = topology.parent[bus] else { continue };
            children[up].push(bus);
            let (z, tap, base, name) = match edge {
                EdgeRef::Line(k) => {
                    let l = &feeder.lines[k];
                    let base = base_v[up];
                    let z_base = base * base / (S_BASE_KVA * 1000.0);
                    (Complex64::new(l.r_ohm, l.x_ohm) / z_base, 1.0, base, &l.id)
                }
                EdgeRef::Transformer(k) => {
                    let t = &feeder.transformers[k];
                    let per_phase_kva = t.rating_kva / feeder.buses[bus].phases.len() as f64;
                    let z = Complex64::new(t.r_pu, t.x_pu) * (S_BASE_KVA / per_phase_kva);
                    (z, t.tap, t.secondary_voltage_v, &t.id)
                }
            };
            if z.norm() == 0.0 {
                return Err(PowerFlowError::DegenerateImpedance { component: name.clone() });
            }
            base_v[bus] = base;
            branch[bus] = Some(Branch { edge, from: up, z, tap });
        }

        let idx = |id: &str| topology.bus_index[id];
        let line_to = feeder.lines.iter().map(|l| {
            let (a, b) = (idx(&l.from_bus), idx(&l.to_bus));
            if matches!(topology.parent[b], Some((_, up)) if up == a) { b } else { a }
        });
        let line_to = line_to.collect();
        let xfmr_to = feeder.transformers.iter().map(|t| idx(&t.bus_secondary)).collect();

        let v0 = feeder.slack_voltage_pu;
        let slack_v = [0, 1, 2].map(|p| {
            let angle = crate::netmodel::Phase::ALL[p].angle();
            Complex64::from_polar(v0, angle)
        });
        Ok(Self {
            topology,
            bus_ids: feeder.buses.iter().map(|b| b.id.clone()).collect(),
            phases,
            base_v,
            branch,
            children,
            line_to,
            xfmr_to,
            slack_v,
        })
    }

    pub fn bus_count(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.topology.bus_index.get(id).copied()
    }

    pub fn bus_id(&self, bus: usize) -> &str {
        &self.bus_ids[bus]
    }

    pub fn has_phase(&self, bus: usize, phase: usize) -> bool {
        self.phases[bus][phase]
    }

    /// Line-to-neutral base voltage of a bus, volts.
    pub fn base_voltage(&self, bus: usize) -> f64 {
        self.base_v[bus]
    }

    /// Per-unit series impedance of the branch feeding `bus`.
    pub fn branch_impedance(&self, bus: usize) -> Option<Complex64> {
        self.branch[bus].as_ref().map(|b| b.z)
    }

    /// Upstream bus of `bus`.
    pub fn upstream(&self, bus: usize) -> Option<usize> {
        self.branch[bus].as_ref().map(|b| b.from)
    }

    /// Downstream bus of a line.
    pub fn line_downstream(&self, line: usize) -> usize {
        self.line_to[line]
    }

    pub fn transformer_secondary(&self, xfmr: usize) -> usize {
        self.xfmr_to[xfmr]
    }

    pub fn slack_voltage(&self) -> [Complex64; 3] {
        self.slack_v
    }

    /// Solve with every line in service.
    pub fn solve(&self, loads: &[BusLoad], opts: &SolveOptions) -> Result<PowerFlowSolution, PowerFlowError> {
        self.solve_with_outages(loads, &[], opts)
    }

    /// Solve with the lines flagged in `open_lines` out of service; buses
    /// downstream of an open line are de-energized and their loads dropped.
    pub fn solve_with_outages(
        &self,
        loads: &[BusLoad],
        open_lines: &[bool],
        opts: &SolveOptions,
    ) -> Result<PowerFlowSolution, PowerFlowError> {
        let n = self.bus_count();
        if loads.len() != n {
            return Err(PowerFlowError::LoadShape { got: loads.len(), expected: n });
        }
        let order = &self.topology.order;
        let slack = self.topology.slack;

        let mut energized = vec![false; n];
        for &bus in order {
            energized[bus] = match &self.branch[bus] {
                None => true,
                Some(br) => {
                    let open = matches!(br.edge, EdgeRef::Line(k) if open_lines.get(k).copied().unwrap_or(false));
                    energized[br.from] && !open
                }
            };
        }
        let active = |bus: usize, p: usize| energized[bus] && self.phases[bus][p];
        let loads_pu: Vec<BusLoad> = loads
            .iter()
            .map(|l| {
                l.map(|ph| PhaseLoad {
                    power: ph.power / S_BASE_KVA,
                    current: ph.current / S_BASE_KVA,
                    impedance: ph.impedance / S_BASE_KVA,
                })
            })
            .collect();

        let zero = Complex64::new(0.0, 0.0);
        let mut v = vec![[zero; 3]; n];
        for &bus in order {
            for p in 0..3 {
                if !active(bus, p) {
                    continue;
                }
                v[bus][p] = match &self.branch[bus] {
                    None => self.slack_v[p],
                    Some(br) => v[br.from][p] * br.tap,
                };
            }
        }

        let mut j = vec![[zero; 3]; n];
        let mut iterations = 0;
        let mut worst = (0.0, slack, 0);
        let mut converged = false;
        while iterations < opts.max_iter {
            iterations += 1;
            self.backward(&v, &loads_pu, &energized, &mut j);
            // Forward: update voltages down the tree.
            for &bus in order {
                let Some(br) = &self.branch[bus] else { continue };
                for p in 0..3 {
                    if active(bus, p) {
                        v[bus][p] = v[br.from][p] * br.tap - br.z * j[bus][p];
                    }
                }
            }
            if v.iter().flatten().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
                break;
            }
            worst = self.worst_mismatch(&v, &loads_pu, &energized);
            if worst.0 < opts.tolerance {
                converged = true;
                break;
            }
        }
        if !converged {
            let (mismatch, bus, phase) = worst;
            return Err(PowerFlowError::NonConvergence {
                iterations,
                bus: self.bus_ids[bus].clone(),
                phase,
                mismatch: if mismatch.is_finite() { mismatch } else { f64::INFINITY },
            });
        }
        self.backward(&v, &loads_pu, &energized, &mut j);

        let line_currents_a = self
            .line_to
            .iter()
            .map(|&bus| {
                let i_base = S_BASE_KVA * 1000.0 / self.base_v[bus];
                [0, 1, 2].map(|p| j[bus][p].norm() * i_base)
            })
            .collect();
        let transformer_kva = self
            .xfmr_to
            .iter()
            .map(|&bus| {
                let s: Complex64 = (0..3).map(|p| v[bus][p] * j[bus][p].conj()).sum();
                s.norm() * S_BASE_KVA
            })
            .collect();
        let mut head = zero;
        for p in 0..3 {
            let mut i_out = loads_pu[slack][p].demand_kva(v[slack][p].norm()) / v[slack][p];
            i_out = i_out.conj();
            for &c in &self.children[slack] {
                if let Some(br) = &self.branch[c] {
                    i_out += j[c][p] * br.tap;
                }
            }
            head += v[slack][p] * i_out.conj();
        }

        Ok(PowerFlowSolution {
            voltages: v,
            branch_currents: j,
            line_currents_a,
            transformer_kva,
            head_power_kva: head * S_BASE_KVA,
            energized,
            converged,
            iterations,
            max_mismatch: worst.0,
        })
    }

    /// Backward sweep: branch currents from load currents at the present voltages.
    fn backward(&self, v: &[[Complex64; 3]], loads: &[BusLoad], energized: &[bool], j: &mut [[Complex64; 3]]) {
        let zero = Complex64::new(0.0, 0.0);
        for x in j.iter_mut() {
            *x = [zero; 3];
        }
        for &bus in self.topology.order.iter().rev() {
            if !energized[bus] {
                continue;
            }
            for p in 0..3 {
                if !self.phases[bus][p] {
                    continue;
                }
                let vm = v[bus][p].norm();
                if vm > 0.0 {
                    j[bus][p] += (loads[bus][p].demand_kva(vm) / v[bus][p]).conj();
                }
            }
            if let Some(br) = &self.branch[bus] {
                let up = br.from;
                for p in 0..3 {
                    let contribution = j[bus][p] * br.tap;
                    j[up][p] += contribution;
                }
            }
        }
        // `j[bus]` now holds the total current leaving each bus downward plus
        // its own load, i.e. the current delivered by its feeding branch.
    }

    /// Largest per-bus complex-power mismatch, evaluated from voltages alone:
    /// branch currents are `(tap * V_up - V) / z`.
    fn worst_mismatch(&self, v: &[[Complex64; 3]], loads: &[BusLoad], energized: &[bool]) -> (f64, usize, usize) {
        let n = self.bus_count();
        let zero = Complex64::new(0.0, 0.0);
        let mut inflow = vec![[zero; 3]; n];
        for bus in 0..n {
            let Some(br) = &self.branch[bus] else { continue };
            if !energized[bus] {
                continue;
            }
            for p in 0..3 {
                if !self.phases[bus][p] {
                    continue;
                }
                let i = (v[br.from][p] * br.tap - v[bus][p]) / br.z;
                inflow[bus][p] += i;
                inflow[br.from][p] -= i * br.tap;
            }
        }
        let mut worst = (0.0, self.topology.slack, 0);
        for bus in 0..n {
            if bus == self.topology.slack || !energized[bus] {
                continue;
            }
            for p in 0..3 {
                if !self.phases[bus][p] {
                    continue;
                }
                let s_in = v[bus][p] * inflow[bus][p].conj();
                let s_load = loads[bus][p].demand_kva(v[bus][p].norm());
                let mis = (s_in - s_load).norm();
                if !(mis <= worst.0) {
                    worst = (mis, bus, p);
                }
            }
        }
        worst
    }
}

/// Compile and solve in one call.
pub fn solve(
    feeder: &FeederModel,
    loads: &[BusLoad],
    tolerance: f64,
    max_iter: usize,
) -> Result<PowerFlowSolution, PowerFlowError> {
    Network::new(feeder)?.solve(loads, &SolveOptions { tolerance, max_iter })
}
