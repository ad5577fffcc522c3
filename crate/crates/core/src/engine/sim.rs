//! Time stepping of one feeder: houses, dispatch, power flow, capacitor
//! control, transformer thermals and fuses.

use num_complex::Complex64;
use rayon::prelude::*;
use rand::Rng;
use serde::Serialize;

use super::{EngineError, ScenarioConfig};
use crate::dispatch::{self, Candidate, ControllerState, DispatchCommand, DispatchMode};
use crate::hvac::{natural_duty_cycle, step_with, EtpPropagator, HouseParams, HouseState, HvacError};
use crate::netmodel::{CapacitorControl, FeederModel, FuseStatus, ZipLoad};
use crate::powerflow::{BusLoad, Network, PhaseLoad, PowerFlowSolution, SolveOptions};
use crate::rng::{self, Domain};
use crate::transformer::{ThermalModel, TransformerThermalState};

/// Capacitor switching or fuse operation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub time_s: f64,
    pub component_id: String,
    pub kind: String,
}

#[derive(Debug, Clone)]
pub(crate) struct HouseSlot {
    pub params: HouseParams,
    pub gain_kw: f64,
    pub bus: usize,
    pub phase: usize,
    pub state: HouseState,
    pub ev: bool,
}

#[derive(Debug, Clone)]
struct CapSlot {
    id: String,
    bus: usize,
    phases: [bool; 3],
    kvar: f64,
    control: Option<(f64, f64, usize)>,
    closed: bool,
    pending_since: Option<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct XfmrSlot {
    pub id: String,
    pub rating_kva: f64,
    pub model: ThermalModel,
    pub state: Option<TransformerThermalState>,
}

#[derive(Debug, Clone)]
struct FuseSlot {
    id: String,
    line: usize,
    limit_a: f64,
    open: bool,
}

/// Natural duty cycle, saturated to 1 or 0 when the house cannot cycle.
pub(crate) fn saturated_duty(params: &HouseParams, theta_amb: f64, gain: f64) -> Result<f64, HvacError> {
    match natural_duty_cycle(params, theta_amb, gain) {
        Ok(c) => Ok(c.duty),
        Err(HvacError::Capacity { .. }) => Ok(1.0),
        Err(HvacError::NoCoolingDemand { .. }) => Ok(0.0),
        Err(e) => Err(e),
    }
}

pub(crate) struct Simulator {
    pub net: Network,
    pub houses: Vec<HouseSlot>,
    static_loads: Vec<BusLoad>,
    caps: Vec<CapSlot>,
    pub xfmrs: Vec<XfmrSlot>,
    fuses: Vec<FuseSlot>,
    open_lines: Vec<bool>,
    pub house_energized: Vec<bool>,
    pub events: Vec<Event>,
    pub ev_kw: f64,
    opts: SolveOptions,
    cap_delay_s: f64,
    props: Vec<(f64, Vec<EtpPropagator>)>,
    pub step_index: usize,
}

fn zip_phase_load(z: &ZipLoad) -> PhaseLoad {
    let (p, q) = z.nominal_pq();
    PhaseLoad {
        power: Complex64::new(p * z.real.p, q * z.reactive.p),
        current: Complex64::new(p * z.real.i, q * z.reactive.i),
        impedance: Complex64::new(p * z.real.z, q * z.reactive.z),
    }
}

impl Simulator {
    /// Build with initial house states drawn from `trial_seed` at ambient `theta_amb0`.
    pub fn new(
        feeder: &FeederModel,
        config: &ScenarioConfig,
        trial_seed: u64,
        theta_amb0: f64,
    ) -> Result<Self, EngineError> {
        let mut feeder = feeder.clone();
        if let Some(v) = config.slack_voltage_pu {
            feeder.slack_voltage_pu = v;
        }
        let net = Network::new(&feeder)?;
        let bus = |id: &str| net.bus_index(id).expect("validated bus reference");

        let mut static_loads = vec![[PhaseLoad::default(); 3]; net.bus_count()];
        for l in &feeder.loads {
            static_loads[bus(&l.bus)][l.phase.index()].add(&zip_phase_load(l));
        }
        for h in &feeder.houses {
            static_loads[bus(&h.bus)][h.phase.index()].add(&zip_phase_load(&h.zip));
        }

        let houses = feeder
            .houses
            .par_iter()
            .enumerate()
            .map(|(i, h)| {
                let d0 = saturated_duty(&h.hvac, theta_amb0, h.internal_gain_kw)?;
                let mut r = rng::stream(trial_seed, Domain::InitialState, i as u64);
                let theta = h.hvac.theta_low + (h.hvac.theta_high - h.hvac.theta_low) * r.random::<f64>();
                let on = r.random::<f64>() < d0;
                let theta_m = theta + (1.0 - h.hvac.r_gain) * h.internal_gain_kw / h.hvac.h_m;
                let mut state = HouseState::new(theta, theta_m, on);
                state.natural_duty_cycle = d0;
                Ok(HouseSlot {
                    params: h.hvac.clone(),
                    gain_kw: h.internal_gain_kw,
                    bus: bus(&h.bus),
                    phase: h.phase.index(),
                    state,
                    ev: false,
                })
            })
            .collect::<Result<Vec<_>, HvacError>>()?;

        let caps = feeder
            .capacitors
            .iter()
            .map(|c| {
                let mut phases = [false; 3];
                for p in &c.phases {
                    phases[p.index()] = true;
                }
                let control = match &c.control {
                    CapacitorControl::Fixed => None,
                    CapacitorControl::Voltage { v_on_pu, v_off_pu, sense_bus } => {
                        Some((*v_on_pu, *v_off_pu, bus(sense_bus)))
                    }
                };
                CapSlot {
                    id: c.id.clone(),
                    bus: bus(&c.bus),
                    phases,
                    kvar: c.kvar_per_phase,
                    control,
                    closed: c.closed,
                    pending_since: None,
                }
            })
            .collect();

        let xfmrs = feeder
            .transformers
            .iter()
            .map(|t| {
                let params = t.thermal_params()?;
                let model = ThermalModel::new(params, t.rating_kva, config.oil_time_constant)?;
                Ok(XfmrSlot { id: t.id.clone(), rating_kva: t.rating_kva, model, state: None })
            })
            .collect::<Result<Vec<_>, EngineError>>()?;

        let line_index = |id: &str| feeder.lines.iter().position(|l| l.id == id).expect("validated line");
        let fuses: Vec<FuseSlot> = feeder
            .fuses
            .iter()
            .map(|f| FuseSlot {
                id: f.id.clone(),
                line: line_index(&f.line),
                limit_a: f.current_limit_a,
                open: f.status == FuseStatus::Open,
            })
            .collect();
        let mut open_lines = vec![false; feeder.lines.len()];
        for f in fuses.iter().filter(|f| f.open) {
            open_lines[f.line] = true;
        }

        let n = houses.len();
        Ok(Self {
            net,
            houses,
            static_loads,
            caps,
            xfmrs,
            fuses,
            open_lines,
            house_energized: vec![true; n],
            events: Vec::new(),
            ev_kw: 0.0,
            opts: SolveOptions { tolerance: config.powerflow_tolerance, max_iter: config.powerflow_max_iter },
            cap_delay_s: config.capacitor_delay_s,
            props: Vec::new(),
            step_index: 0,
        })
    }

    fn propagators(&mut self, dt: f64) -> usize {
        if let Some(k) = self.props.iter().position(|(d, _)| *d == dt) {
            return k;
        }
        let props = self.houses.iter().map(|h| EtpPropagator::new(&h.params, dt)).collect();
        self.props.push((dt, props));
        self.props.len() - 1
    }

    /// Advance every house over `(t_end - dt, t_end]` under its own thermostat.
    pub fn step_houses(&mut self, dt: f64, t_end: f64, theta_amb: f64) -> Result<(), EngineError> {
        if !theta_amb.is_finite() {
            return Err(HvacError::NonFinite("theta_amb").into());
        }
        let k = self.propagators(dt);
        let props = &self.props[k].1;
        self.houses.par_iter_mut().with_min_len(256).zip(props.par_iter().with_min_len(256)).for_each(|(h, prop)| {
            h.state = step_with(prop, &h.params, &h.state, theta_amb, h.gain_kw, t_end);
        });
        Ok(())
    }

    /// Aggregate real AC power of energized houses and the number running.
    pub fn ac_power(&self) -> (f64, usize) {
        let mut p = 0.0;
        let mut n = 0;
        for (h, &e) in self.houses.iter().zip(&self.house_energized) {
            if e && h.state.on {
                p += h.params.p_elec;
                n += 1;
            }
        }
        (p, n)
    }

    /// Compute the switching probability and flip the selected units.
    /// Returns the command, the number of units eligible in its direction and the number switched.
    pub fn dispatch(
        &mut self,
        ctrl_gain: f64,
        mean_on_kw: f64,
        desired_kw: f64,
        now: f64,
        theta_amb: f64,
        seed: u64,
        mode: DispatchMode,
    ) -> (DispatchCommand, usize, usize) {
        let (measured, _) = self.ac_power();
        let direction_on = desired_kw > measured;
        let step = self.step_index as u64;
        let energized = &self.house_energized;
        let candidates: Vec<Candidate> = self
            .houses
            .par_iter()
            .with_min_len(256)
            .enumerate()
            .map(|(i, h)| {
                let flags = dispatch::availability(&h.params, &h.state, theta_amb, h.gain_kw, now);
                let margin = if h.state.on { h.state.theta - h.params.theta_low } else { h.params.theta_high - h.state.theta };
                Candidate {
                    on: h.state.on,
                    available: flags.available() && energized[i],
                    draw: rng::uniform_at(seed, Domain::Dispatch, i as u64, step),
                    margin,
                }
            })
            .collect();
        let eligible = candidates.iter().filter(|c| c.available && c.on != direction_on).count();
        let ctrl = ControllerState {
            gain: ctrl_gain,
            mean_on_power_kw: mean_on_kw,
            desired_kw,
            measured_kw: measured,
            available: eligible,
        };
        let cmd = dispatch::control_signal(&ctrl, now);
        let switched = dispatch::apply_dispatch(&candidates, &cmd, mode);
        for &i in &switched {
            let s = &mut self.houses[i].state;
            s.on = !s.on;
            s.last_switch_s = Some(now);
        }
        (cmd, eligible, switched.len())
    }

    fn bus_loads(&self) -> Vec<BusLoad> {
        let mut loads = self.static_loads.clone();
        for h in &self.houses {
            let (p, q) = h.state.demand(&h.params);
            let mut l = PhaseLoad::constant_power(p, q);
            if h.ev {
                l.power += Complex64::new(self.ev_kw, 0.0);
            }
            loads[h.bus][h.phase].add(&l);
        }
        for c in self.caps.iter().filter(|c| c.closed) {
            for p in 0..3 {
                if c.phases[p] {
                    loads[c.bus][p].impedance += Complex64::new(0.0, -c.kvar);
                }
            }
        }
        loads
    }

    pub fn solve(&mut self, time_s: f64) -> Result<PowerFlowSolution, EngineError> {
        let loads = self.bus_loads();
        let sol = self
            .net
            .solve_with_outages(&loads, &self.open_lines, &self.opts)
            .map_err(|source| EngineError::PowerFlow { step: self.step_index, time_s, source })?;
        for (h, e) in self.houses.iter().zip(self.house_energized.iter_mut()) {
            *e = sol.energized[h.bus];
        }
        Ok(sol)
    }

    /// Capacitor control, transformer thermals and fuse checks after a solve.
    /// Returns newly opened fuses as `(id, current over limit)`.
    pub fn after_solve(
        &mut self,
        sol: &PowerFlowSolution,
        t_end: f64,
        dt: f64,
        theta_amb: f64,
        thermal: bool,
    ) -> Result<Vec<(String, f64)>, EngineError> {
        for c in &mut self.caps {
            let Some((v_on, v_off, sense)) = c.control else { continue };
            let phases: Vec<f64> =
                (0..3).filter(|&p| self.net.has_phase(sense, p)).map(|p| sol.voltage_magnitude(sense, p)).collect();
            let v = phases.iter().sum::<f64>() / phases.len() as f64;
            let wants_change = if c.closed { v > v_off } else { v < v_on };
            if !wants_change || !sol.energized[sense] {
                c.pending_since = None;
                continue;
            }
            let since = *c.pending_since.get_or_insert(t_end - dt);
            if t_end - since >= self.cap_delay_s - 1e-9 {
                c.closed = !c.closed;
                c.pending_since = None;
                let kind = if c.closed { "capacitor_close" } else { "capacitor_open" };
                self.events.push(Event { time_s: t_end, component_id: c.id.clone(), kind: kind.into() });
            }
        }

        if thermal {
            for (k, x) in self.xfmrs.iter_mut().enumerate() {
                let load = sol.transformer_kva[k] / x.rating_kva;
                let next = match &x.state {
                    None => TransformerThermalState::steady(&x.model.params, load, theta_amb),
                    Some(s) => x.model.step(s, load, theta_amb, dt)?,
                };
                x.state = Some(next);
            }
        }

        let mut opened = Vec::new();
        for f in &mut self.fuses {
            if f.open {
                continue;
            }
            let worst = sol.line_currents_a[f.line].iter().cloned().fold(0.0, f64::max);
            if worst > f.limit_a {
                f.open = true;
                self.open_lines[f.line] = true;
                self.events.push(Event { time_s: t_end, component_id: f.id.clone(), kind: "fuse_open".into() });
                opened.push((f.id.clone(), worst / f.limit_a));
            }
        }
        Ok(opened)
    }
}
