use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;

use super::events::{Event, EventKind, Receipt};
use super::{AllocationMap, EngineError, ModelKind, OdeRhs, SimulationConfig, StateVector};
use crate::components::{DeviceModel, Sexs, Stab1, SyncMachine, Tgov1};
use crate::network::{
    branch_stamp, build_ybus, kron_reduce, AdmittanceMatrix, Delta, NetworkError,
    PowerFlowSolution, ReductionMap,
};
use crate::model_io::{BusKind, SystemDescription};

/// Extra device with its own states and no network coupling. Used for
/// synthetic test systems and diagnostics.
pub trait AuxDevice: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn state_names(&self) -> Vec<String>;
    fn initial_state(&self) -> Vec<f64>;
    fn derivatives(&self, x: &[f64], dx: &mut [f64]);
}

/// `x' = M (x - x0)`: a linear test device with a known Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDevice {
    pub name: String,
    /// Row-major `n x n`.
    pub m: Vec<f64>,
    pub x0: Vec<f64>,
}

impl LinearDevice {
    pub fn new(name: &str, n: usize, m: Vec<f64>) -> Self {
        assert_eq!(m.len(), n * n, "matrix must be n x n");
        Self { name: name.to_owned(), m, x0: vec![0.0; n] }
    }

    pub fn diagonal(name: &str, d: &[f64]) -> Self {
        let n = d.len();
        let mut m = vec![0.0; n * n];
        for (i, v) in d.iter().enumerate() {
            m[i * n + i] = *v;
        }
        Self::new(name, n, m)
    }
}

impl AuxDevice for LinearDevice {
    fn name(&self) -> &str {
        &self.name
    }

    fn state_names(&self) -> Vec<String> {
        (0..self.x0.len()).map(|i| format!("x{i}")).collect()
    }

    fn initial_state(&self) -> Vec<f64> {
        self.x0.clone()
    }

    fn derivatives(&self, x: &[f64], dx: &mut [f64]) {
        let n = self.x0.len();
        for i in 0..n {
            dx[i] = (0..n).map(|j| self.m[i * n + j] * (x[j] - self.x0[j])).sum();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvrUnit {
    pub model: Sexs,
    pub offset: usize,
    pub active: bool,
    pub v_ref: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GovUnit {
    pub model: Tgov1,
    pub offset: usize,
    pub active: bool,
    pub p_ref: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PssUnit {
    pub model: Stab1,
    pub offset: usize,
    pub active: bool,
}

/// A machine with its optional controls and manual inputs.
///
/// `e_f`, `p_m` and `v_pss` are the values used whenever the corresponding
/// control is absent or inactive.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineUnit {
    pub name: String,
    pub bus: String,
    pub machine: SyncMachine,
    pub offset: usize,
    /// Position of the machine bus in the reduced network.
    pub pos: usize,
    /// `S_n / S_base`.
    pub scale: f64,
    pub avr: Option<AvrUnit>,
    pub gov: Option<GovUnit>,
    pub pss: Option<PssUnit>,
    pub e_f: f64,
    pub p_m: f64,
    pub v_pss: f64,
    /// Load connected at the machine bus, system pu.
    pub local_load: Complex64,
}

/// Algebraic quantities of one machine at a given state.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineSignals {
    pub name: String,
    pub delta: f64,
    pub d_omega: f64,
    pub e_f: f64,
    pub p_m: f64,
    pub p_e: f64,
    pub v_pss: f64,
    /// Terminal voltage, pu.
    pub v_t: Complex64,
    /// Terminal current, machine base.
    pub i_t: Complex64,
    /// Subtransient EMF in the network frame.
    pub e_st: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signals {
    pub machines: Vec<MachineSignals>,
    /// Retained bus names and voltages.
    pub buses: Vec<(String, Complex64)>,
}

/// Full and reduced dynamic admittance matrices kept in step.
#[derive(Debug, Clone)]
struct DynamicNetwork {
    full: AdmittanceMatrix,
    keep: Vec<usize>,
    reduced: AdmittanceMatrix,
    map: ReductionMap,
    pristine: (AdmittanceMatrix, ReductionMap),
    /// Reduced positions of infinite buses and their fixed voltages.
    pinned: Vec<(usize, Complex64)>,
}

impl DynamicNetwork {
    fn new(full: AdmittanceMatrix, keep: Vec<usize>, pinned_orig: &[(usize, Complex64)]) -> Result<Self, NetworkError> {
        let (mut reduced, map) = kron_reduce(&full, &keep)?;
        let pinned: Vec<(usize, Complex64)> = pinned_orig
            .iter()
            .map(|&(i, v)| (map.retained_position(i).expect("pinned bus is retained"), v))
            .collect();
        reduced.set_pinned(pinned.iter().map(|p| p.0).collect())?;
        if reduced.dim() > 0 {
            reduced.factorize()?;
        }
        Ok(Self {
            full,
            keep,
            pristine: (reduced.clone(), map.clone()),
            reduced,
            map,
            pinned,
        })
    }

    fn rereduce(&self) -> Result<(AdmittanceMatrix, ReductionMap), NetworkError> {
        let (mut r, m) = kron_reduce(&self.full, &self.keep)?;
        r.set_pinned(self.pinned.iter().map(|p| p.0).collect())?;
        Ok((r, m))
    }

    /// Applies deltas in full-network indices; rolls back if the result
    /// cannot be factorized.
    fn apply(&mut self, deltas: &[Delta]) -> Result<(), NetworkError> {
        let saved = (self.full.clone(), self.reduced.clone(), self.map.clone());
        let res = self.apply_inner(deltas);
        if res.is_err() {
            (self.full, self.reduced, self.map) = saved;
        }
        res
    }

    fn apply_inner(&mut self, deltas: &[Delta]) -> Result<(), NetworkError> {
        self.full.modify(deltas)?;
        if !self.full.is_modified() {
            (self.reduced, self.map) = self.pristine.clone();
            return Ok(());
        }
        let mapped: Option<Vec<Delta>> = deltas
            .iter()
            .map(|&(i, j, d)| {
                Some((self.map.retained_position(i)?, self.map.retained_position(j)?, d))
            })
            .collect();
        match mapped {
            // The Schur complement is affine in Y_kk, so retained-only
            // changes carry over unchanged.
            Some(m) => self.reduced.modify(&m)?,
            None => (self.reduced, self.map) = self.rereduce()?,
        }
        self.reduced.factorize()
    }
}

/// The assembled ODE `x' = f(x)` for one grid.
#[derive(Debug, Clone)]
pub struct OdeSystem {
    allocation: AllocationMap,
    machines: Vec<MachineUnit>,
    aux: Vec<(usize, Arc<dyn AuxDevice>)>,
    network: DynamicNetwork,
    omega_s: f64,
    base_mva: f64,
    branch_names: Vec<String>,
    branch_stamps: Vec<[Delta; 4]>,
    line_in_service: Vec<bool>,
    /// Applied fault admittance per full-network bus.
    faults: Vec<Option<Complex64>>,
    fault_admittance: Complex64,
}

fn pinned_buses(sys: &SystemDescription, pf: &PowerFlowSolution) -> Vec<(usize, Complex64)> {
    sys.buses
        .iter()
        .enumerate()
        .filter(|(_, b)| b.kind == BusKind::Slack)
        .filter(|(_, b)| sys.generators.iter().all(|g| g.bus != b.name))
        .map(|(i, _)| (i, pf.v[i]))
        .collect()
}

impl OdeSystem {
    /// Stamps loads and machine shunts, reduces the network, and lays out the
    /// state vector. Call [`OdeSystem::initialize`] before integrating.
    pub fn build(
        sys: &SystemDescription,
        pf: &PowerFlowSolution,
        config: &SimulationConfig,
    ) -> Result<Self, EngineError> {
        config.check()?;
        if pf.bus_names.len() != sys.buses.len()
            || pf.bus_names.iter().zip(&sys.buses).any(|(a, b)| *a != b.name)
        {
            return Err(EngineError::Invalid(
                "power-flow solution does not match the system buses".into(),
            ));
        }
        let full = build_ybus(sys, Some(pf), true)?;
        let n = sys.buses.len();
        let mut kept = vec![false; n];
        for g in &sys.generators {
            let i = sys
                .bus_index(&g.bus)
                .ok_or_else(|| EngineError::UnknownTarget(g.bus.clone()))?;
            if kept[i] {
                return Err(EngineError::Invalid(format!(
                    "more than one generator at bus '{}'",
                    g.bus
                )));
            }
            kept[i] = true;
        }
        for name in &config.keep_buses {
            let i = sys
                .bus_index(name)
                .ok_or_else(|| EngineError::UnknownTarget(name.clone()))?;
            kept[i] = true;
        }
        let pinned = pinned_buses(sys, pf);
        for &(i, _) in &pinned {
            kept[i] = true;
        }
        let keep: Vec<usize> = (0..n).filter(|&i| kept[i]).collect();
        let network = DynamicNetwork::new(full, keep, &pinned)?;

        let mut allocation = AllocationMap::default();
        let mut machines = Vec::with_capacity(sys.generators.len());
        for g in &sys.generators {
            let offset = allocation.push(g.name.clone(), ModelKind::Machine, SyncMachine::STATE_NAMES);
            let bus = sys.bus_index(&g.bus).expect("checked above");
            machines.push(MachineUnit {
                name: g.name.clone(),
                bus: g.bus.clone(),
                machine: SyncMachine::new(g.params.clone()),
                offset,
                pos: network.map.retained_position(bus).expect("generator bus retained"),
                scale: g.s_n / sys.base_mva,
                avr: None,
                gov: None,
                pss: None,
                e_f: 0.0,
                p_m: 0.0,
                v_pss: 0.0,
                local_load: sys
                    .loads
                    .iter()
                    .filter(|l| l.bus == g.bus)
                    .map(|l| Complex64::new(l.p, l.q))
                    .sum(),
            });
        }
        for m in &mut machines {
            if let Some(r) = sys.avr_for(&m.name) {
                let offset = allocation.push(format!("{}.avr", m.name), ModelKind::Sexs, Sexs::STATE_NAMES);
                m.avr = Some(AvrUnit { model: r.into(), offset, active: true, v_ref: 0.0 });
            }
            if let Some(r) = sys.gov_for(&m.name) {
                let offset = allocation.push(format!("{}.gov", m.name), ModelKind::Tgov1, Tgov1::STATE_NAMES);
                m.gov = Some(GovUnit { model: r.into(), offset, active: true, p_ref: 0.0 });
            }
            if let Some(r) = sys.pss_for(&m.name) {
                let offset = allocation.push(format!("{}.pss", m.name), ModelKind::Stab1, Stab1::STATE_NAMES);
                m.pss = Some(PssUnit { model: r.into(), offset, active: true });
            }
        }

        let branch_stamps = sys
            .branches
            .iter()
            .map(|b| branch_stamp(sys, b))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            allocation,
            machines,
            aux: Vec::new(),
            network,
            omega_s: 2.0 * std::f64::consts::PI * sys.f_n,
            base_mva: sys.base_mva,
            branch_names: sys.branches.iter().map(|b| b.name.clone()).collect(),
            branch_stamps,
            line_in_service: sys.branches.iter().map(|b| b.in_service).collect(),
            faults: vec![None; n],
            fault_admittance: config.fault_admittance,
        })
    }

    /// A system made only of auxiliary devices, with an empty network.
    pub fn from_aux(devices: Vec<Arc<dyn AuxDevice>>, f_n: f64) -> Result<Self, EngineError> {
        let full = AdmittanceMatrix::new(Vec::new());
        let mut s = Self {
            allocation: AllocationMap::default(),
            machines: Vec::new(),
            aux: Vec::new(),
            network: DynamicNetwork::new(full, Vec::new(), &[])?,
            omega_s: 2.0 * std::f64::consts::PI * f_n,
            base_mva: 1.0,
            branch_names: Vec::new(),
            branch_stamps: Vec::new(),
            line_in_service: Vec::new(),
            faults: Vec::new(),
            fault_admittance: Complex64::new(1e5, 0.0),
        };
        for d in devices {
            s.add_aux(d);
        }
        Ok(s)
    }

    /// Auxiliary device initial states, zeros elsewhere. For systems built
    /// with [`OdeSystem::from_aux`], which have no power flow to start from.
    pub fn aux_state(&self) -> StateVector {
        let mut x = vec![0.0; self.allocation.total()];
        for (offset, dev) in &self.aux {
            let init = dev.initial_state();
            x[*offset..*offset + init.len()].copy_from_slice(&init);
        }
        StateVector::new(x)
    }

    /// Appends an auxiliary device after all existing states.
    pub fn add_aux(&mut self, device: Arc<dyn AuxDevice>) -> usize {
        let names = device.state_names();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let offset = self.allocation.push(device.name().to_owned(), ModelKind::Aux, &refs);
        self.aux.push((offset, device));
        offset
    }

    pub fn allocation(&self) -> &AllocationMap {
        &self.allocation
    }

    pub fn machines(&self) -> &[MachineUnit] {
        &self.machines
    }

    pub fn machine(&self, name: &str) -> Option<&MachineUnit> {
        self.machines.iter().find(|m| m.name == name)
    }

    pub fn omega_s(&self) -> f64 {
        self.omega_s
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn full_admittance(&self) -> &AdmittanceMatrix {
        &self.network.full
    }

    pub fn reduced_admittance(&self) -> &AdmittanceMatrix {
        &self.network.reduced
    }

    pub fn reduction(&self) -> &ReductionMap {
        &self.network.map
    }

    pub fn retained_buses(&self) -> &[String] {
        self.network.reduced.bus_names()
    }

    /// `(name, in_service)` per branch.
    pub fn line_status(&self) -> impl Iterator<Item = (&str, bool)> {
        self.branch_names.iter().map(String::as_str).zip(self.line_in_service.iter().copied())
    }

    pub fn faulted_buses(&self) -> Vec<&str> {
        self.faults
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_some())
            .map(|(i, _)| self.network.full.bus_names()[i].as_str())
            .collect()
    }

    /// Machine equilibria from the power flow, then controls chained so that
    /// each delivers the required field voltage and mechanical power.
    pub fn initialize(&mut self, pf: &PowerFlowSolution) -> Result<StateVector, EngineError> {
        let mut x = vec![0.0; self.allocation.total()];
        let full_names = self.network.full.bus_names().to_vec();
        for m in &mut self.machines {
            let bus = full_names.iter().position(|b| *b == m.bus).expect("bus exists");
            let v_t = pf.v[bus];
            // Generator output is the bus injection plus the local load,
            // which the dynamic network carries as a shunt.
            let s_gen = pf.s[bus] + m.local_load;
            let s_mach = s_gen / m.scale;
            let eq = m
                .machine
                .initialize(v_t, s_mach)
                .map_err(|source| EngineError::Component { device: m.name.clone(), source })?;
            x[m.offset..m.offset + 6].copy_from_slice(&eq.state);
            m.e_f = eq.e_f;
            m.p_m = eq.p_m;
            m.v_pss = 0.0;
            if let Some(avr) = &mut m.avr {
                let (xs, u) = avr.model.initialize(eq.e_f).map_err(|source| EngineError::Component {
                    device: format!("{}.avr", m.name),
                    source,
                })?;
                x[avr.offset..avr.offset + 2].copy_from_slice(&xs);
                avr.v_ref = u + v_t.norm();
            }
            if let Some(gov) = &mut m.gov {
                let (xs, p_ref) = gov.model.initialize(eq.p_m).map_err(|source| EngineError::Component {
                    device: format!("{}.gov", m.name),
                    source,
                })?;
                x[gov.offset..gov.offset + 2].copy_from_slice(&xs);
                gov.p_ref = p_ref;
            }
            if let Some(pss) = &m.pss {
                x[pss.offset..pss.offset + 3].copy_from_slice(&pss.model.initialize(0.0));
            }
        }
        for (offset, dev) in &self.aux {
            let init = dev.initial_state();
            x[*offset..*offset + init.len()].copy_from_slice(&init);
        }
        let mut dx = vec![0.0; x.len()];
        self.rhs(&x, &mut dx)?;
        if let Some((k, r)) = dx
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        {
            if r.abs() >= 1e-8 {
                return Err(EngineError::InitResidual {
                    state: self.allocation.label_of(k).unwrap_or_default(),
                    residual: *r,
                });
            }
        }
        Ok(StateVector::new(x))
    }

    /// Solves the reduced network for the current state.
    fn voltages(&self, x: &[f64]) -> Result<DVector<Complex64>, EngineError> {
        let net = &self.network;
        let mut rhs = DVector::from_element(net.reduced.dim(), Complex64::new(0.0, 0.0));
        if rhs.is_empty() {
            return Ok(rhs);
        }
        for m in &self.machines {
            let (i_no, _) = m.machine.norton(&x[m.offset..m.offset + 6]);
            rhs[m.pos] += i_no * m.scale;
        }
        for &(p, v) in &net.pinned {
            rhs[p] = v;
        }
        net.reduced.solve_into(&mut rhs)?;
        Ok(rhs)
    }

    fn check_len(&self, x: &[f64]) -> Result<(), EngineError> {
        if x.len() != self.allocation.total() {
            return Err(EngineError::Dimension { expected: self.allocation.total(), got: x.len() });
        }
        Ok(())
    }

    /// Algebraic signals (voltages, currents, control outputs) at state `x`.
    pub fn signals(&self, x: &[f64]) -> Result<Signals, EngineError> {
        self.check_len(x)?;
        let v = self.voltages(x)?;
        let mut dx = vec![0.0; x.len()];
        let machines = self
            .machines
            .iter()
            .map(|m| {
                let xm = &x[m.offset..m.offset + 6];
                let (i_no, z) = m.machine.norton(xm);
                let v_t = v[m.pos];
                let i_t = i_no - v_t / z;
                let (i_d, i_q) = SyncMachine::to_dq(xm[0], i_t);
                let (e_f, p_m, v_pss) = self.controls(m, x, v_t.norm(), &mut dx);
                MachineSignals {
                    name: m.name.clone(),
                    delta: xm[0],
                    d_omega: xm[1],
                    e_f,
                    p_m,
                    p_e: SyncMachine::electrical_power(xm, i_d, i_q),
                    v_pss,
                    v_t,
                    i_t,
                    e_st: SyncMachine::e_st(xm),
                }
            })
            .collect();
        let buses = self
            .retained_buses()
            .iter()
            .cloned()
            .zip(v.iter().copied())
            .collect();
        Ok(Signals { machines, buses })
    }

    /// Control derivatives into `dx`; returns `(E_f, P_m, V_pss)`.
    #[inline]
    fn controls(&self, m: &MachineUnit, x: &[f64], v_mag: f64, dx: &mut [f64]) -> (f64, f64, f64) {
        let d_omega = x[m.offset + 1];
        let v_pss = match &m.pss {
            Some(p) if p.active => {
                let r = p.offset..p.offset + 3;
                p.model.derivatives(&x[r.clone()], d_omega, &mut dx[r])
            }
            Some(p) => {
                dx[p.offset..p.offset + 3].fill(0.0);
                m.v_pss
            }
            None => m.v_pss,
        };
        let e_f = match &m.avr {
            Some(a) if a.active => {
                let r = a.offset..a.offset + 2;
                a.model.derivatives(&x[r.clone()], a.v_ref - v_mag + v_pss, &mut dx[r])
            }
            Some(a) => {
                dx[a.offset..a.offset + 2].fill(0.0);
                m.e_f
            }
            None => m.e_f,
        };
        let p_m = match &m.gov {
            Some(g) if g.active => {
                let r = g.offset..g.offset + 2;
                g.model.derivatives(&x[r.clone()], g.p_ref, d_omega, &mut dx[r])
            }
            Some(g) => {
                dx[g.offset..g.offset + 2].fill(0.0);
                m.p_m
            }
            None => m.p_m,
        };
        (e_f, p_m, v_pss)
    }

    /// Present output of a control given the state, used when freezing it.
    fn present_output(&self, m: &MachineUnit, x: &[f64], which: Control) -> f64 {
        match which {
            Control::Avr => m.avr.as_ref().filter(|a| a.active).map_or(m.e_f, |a| a.model.output(&x[a.offset..a.offset + 2])),
            Control::Gov => m.gov.as_ref().filter(|g| g.active).map_or(m.p_m, |g| g.model.output(&x[g.offset..g.offset + 2])),
            Control::Pss => m
                .pss
                .as_ref()
                .filter(|p| p.active)
                .map_or(m.v_pss, |p| p.model.output(&x[p.offset..p.offset + 3], x[m.offset + 1])),
        }
    }

    fn machine_index(&self, name: &str) -> Result<usize, EngineError> {
        self.machines
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| EngineError::UnknownTarget(name.to_owned()))
    }

    fn bus_index(&self, name: &str) -> Result<usize, EngineError> {
        if let Some(i) = self.network.full.bus_index(name) {
            return Ok(i);
        }
        match name.parse::<usize>() {
            Ok(i) if i < self.network.full.dim() => Ok(i),
            _ => Err(EngineError::UnknownTarget(name.to_owned())),
        }
    }

    fn branch_index(&self, name: &str) -> Result<usize, EngineError> {
        self.branch_names
            .iter()
            .position(|b| b == name)
            .ok_or_else(|| EngineError::UnknownTarget(name.to_owned()))
    }

    /// Current value of a parameter, setpoint or flag path.
    pub fn get_value(&self, path: &str) -> Result<f64, EngineError> {
        let (dev, rest) = path
            .split_once('.')
            .ok_or_else(|| EngineError::UnknownTarget(path.to_owned()))?;
        if let Ok(b) = self.branch_index(dev) {
            if rest.eq_ignore_ascii_case("status") {
                return Ok(if self.line_in_service[b] { 1.0 } else { 0.0 });
            }
        }
        let m = &self.machines[self.machine_index(dev)?];
        if let Some(v) = setpoint_ref(m, rest) {
            return Ok(v);
        }
        let (block, field) = rest
            .split_once('.')
            .ok_or_else(|| EngineError::UnknownTarget(path.to_owned()))?;
        if field.eq_ignore_ascii_case("active") {
            return control_flag(m, block)
                .map(|a| if a { 1.0 } else { 0.0 })
                .ok_or_else(|| EngineError::UnknownTarget(path.to_owned()));
        }
        let mut m = m.clone();
        param_mut(&mut m, block, field)
            .map(|p| *p.0)
            .ok_or_else(|| EngineError::UnknownTarget(path.to_owned()))
    }

    /// Applies an event at state `x`, returning a receipt with its inverse.
    pub fn apply_event(&mut self, ev: &Event, x: &[f64]) -> Result<Receipt, EngineError> {
        self.check_len(x)?;
        match ev.kind {
            EventKind::LineTrip | EventKind::LineClose => {
                let b = self.branch_index(&ev.target)?;
                let close = ev.kind == EventKind::LineClose;
                if self.line_in_service[b] == close {
                    return Ok(Receipt::noop(ev, format!(
                        "line '{}' is already {}",
                        ev.target,
                        if close { "closed" } else { "open" }
                    )));
                }
                let sign = if close { 1.0 } else { -1.0 };
                let deltas: Vec<Delta> = self.branch_stamps[b].iter().map(|&(i, j, v)| (i, j, v * sign)).collect();
                self.network.apply(&deltas)?;
                self.line_in_service[b] = close;
                let inv = if close { EventKind::LineTrip } else { EventKind::LineClose };
                Ok(Receipt::applied(ev, Event { kind: inv, ..ev.clone() }))
            }
            EventKind::FaultOn => {
                let i = self.bus_index(&ev.target)?;
                if self.faults[i].is_some() {
                    return Ok(Receipt::noop(ev, format!("bus '{}' is already faulted", ev.target)));
                }
                let y = match (ev.value, ev.imag) {
                    (None, None) => self.fault_admittance,
                    (v, im) => Complex64::new(v.unwrap_or(0.0), im.unwrap_or(0.0)),
                };
                self.network.apply(&[(i, i, y)])?;
                self.faults[i] = Some(y);
                Ok(Receipt::applied(ev, Event { kind: EventKind::FaultOff, value: None, imag: None, ..ev.clone() }))
            }
            EventKind::FaultOff => {
                let i = self.bus_index(&ev.target)?;
                let Some(y) = self.faults[i] else {
                    return Ok(Receipt::noop(ev, format!("bus '{}' is not faulted", ev.target)));
                };
                self.network.apply(&[(i, i, -y)])?;
                self.faults[i] = None;
                Ok(Receipt::applied(ev, Event {
                    kind: EventKind::FaultOn,
                    value: Some(y.re),
                    imag: Some(y.im),
                    ..ev.clone()
                }))
            }
            EventKind::AdmittanceDelta => {
                let (a, b) = ev
                    .target
                    .split_once(',')
                    .ok_or_else(|| EngineError::InvalidEvent(format!("admittance target '{}' is not 'i,j'", ev.target)))?;
                let i = self.bus_index(a.trim())?;
                let j = self.bus_index(b.trim())?;
                let d = Complex64::new(ev.value.unwrap_or(0.0), ev.imag.unwrap_or(0.0));
                self.network.apply(&[(i, j, d)])?;
                Ok(Receipt::applied(ev, Event { value: Some(-d.re), imag: Some(-d.im), ..ev.clone() }))
            }
            EventKind::ControlToggle => {
                let (dev, block) = ev
                    .target
                    .split_once('.')
                    .ok_or_else(|| EngineError::UnknownTarget(ev.target.clone()))?;
                let k = self.machine_index(dev)?;
                let which = Control::parse(block).ok_or_else(|| EngineError::UnknownTarget(ev.target.clone()))?;
                let was = control_flag(&self.machines[k], block)
                    .ok_or_else(|| EngineError::UnknownTarget(ev.target.clone()))?;
                let on = match ev.value {
                    Some(v) => v != 0.0,
                    None => !was,
                };
                let inverse = Event { value: Some(if was { 1.0 } else { 0.0 }), ..ev.clone() };
                if on == was {
                    return Ok(Receipt { event: ev.clone(), inverse: Some(inverse), warning: None });
                }
                if !on {
                    let y = self.present_output(&self.machines[k], x, which);
                    let m = &mut self.machines[k];
                    match which {
                        Control::Avr => m.e_f = y,
                        Control::Gov => m.p_m = y,
                        Control::Pss => m.v_pss = y,
                    }
                }
                let m = &mut self.machines[k];
                match which {
                    Control::Avr => m.avr.as_mut().expect("flag checked").active = on,
                    Control::Gov => m.gov.as_mut().expect("flag checked").active = on,
                    Control::Pss => m.pss.as_mut().expect("flag checked").active = on,
                }
                Ok(Receipt::applied(ev, inverse))
            }
            EventKind::SetpointChange | EventKind::ParamChange => {
                let value = ev
                    .value
                    .ok_or_else(|| EngineError::InvalidEvent(format!("'{}' needs a value", ev.target)))?;
                if !value.is_finite() {
                    return Err(EngineError::InvalidEvent(format!("non-finite value for '{}'", ev.target)));
                }
                let (dev, rest) = ev
                    .target
                    .split_once('.')
                    .ok_or_else(|| EngineError::UnknownTarget(ev.target.clone()))?;
                let k = self.machine_index(dev)?;
                let m = &mut self.machines[k];
                let old = if let Some(slot) = setpoint_mut(m, rest) {
                    std::mem::replace(slot, value)
                } else {
                    let (block, field) = rest
                        .split_once('.')
                        .ok_or_else(|| EngineError::UnknownTarget(ev.target.clone()))?;
                    let (slot, rule) = param_mut(m, block, field)
                        .ok_or_else(|| EngineError::UnknownTarget(ev.target.clone()))?;
                    rule.check(value).map_err(|e| EngineError::InvalidEvent(format!("{}: {e}", ev.target)))?;
                    let old = std::mem::replace(slot, value);
                    if let Err(e) = limits_ordered(m) {
                        let (slot, _) = param_mut(m, block, field).expect("resolved above");
                        *slot = old;
                        return Err(EngineError::InvalidEvent(format!("{}: {e}", ev.target)));
                    }
                    old
                };
                Ok(Receipt::applied(ev, Event { value: Some(old), ..ev.clone() }))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Control {
    Avr,
    Gov,
    Pss,
}

impl Control {
    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "avr" => Some(Control::Avr),
            "gov" => Some(Control::Gov),
            "pss" => Some(Control::Pss),
            _ => None,
        }
    }
}

fn control_flag(m: &MachineUnit, block: &str) -> Option<bool> {
    match Control::parse(block)? {
        Control::Avr => m.avr.as_ref().map(|a| a.active),
        Control::Gov => m.gov.as_ref().map(|g| g.active),
        Control::Pss => m.pss.as_ref().map(|p| p.active),
    }
}

fn setpoint_ref(m: &MachineUnit, name: &str) -> Option<f64> {
    let mut m = m.clone();
    setpoint_mut(&mut m, name).map(|v| *v)
}

fn setpoint_mut<'a>(m: &'a mut MachineUnit, name: &str) -> Option<&'a mut f64> {
    match name.to_ascii_lowercase().as_str() {
        "v_ref" => m.avr.as_mut().map(|a| &mut a.v_ref),
        "p_ref" => m.gov.as_mut().map(|g| &mut g.p_ref),
        "e_f" => Some(&mut m.e_f),
        "p_m" => Some(&mut m.p_m),
        "v_pss" => Some(&mut m.v_pss),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy)]
enum Rule {
    Positive,
    NonNegative,
    Any,
}

impl Rule {
    fn check(self, v: f64) -> Result<(), String> {
        match self {
            Rule::Positive if !(v > 0.0) => Err(format!("must be positive, got {v}")),
            Rule::NonNegative if !(v >= 0.0) => Err(format!("must be non-negative, got {v}")),
            _ => Ok(()),
        }
    }
}

/// Mutable reference to a named model parameter and its admissibility rule.
/// Stator resistance and subtransient reactance are excluded because they
/// are stamped into the network.
fn param_mut<'a>(m: &'a mut MachineUnit, block: &str, field: &str) -> Option<(&'a mut f64, Rule)> {
    use Rule::*;
    let f = field.to_ascii_lowercase();
    match block.to_ascii_lowercase().as_str() {
        "gen" => {
            let p = &mut m.machine.params;
            Some(match f.as_str() {
                "h" => (&mut p.h, Positive),
                "d" => (&mut p.d, NonNegative),
                "x_d" => (&mut p.x_d, Positive),
                "x_q" => (&mut p.x_q, Positive),
                "x_d_t" => (&mut p.x_d_t, Positive),
                "x_q_t" => (&mut p.x_q_t, Positive),
                "t_d0_t" => (&mut p.t_d0_t, Positive),
                "t_q0_t" => (&mut p.t_q0_t, Positive),
                "t_d0_st" => (&mut p.t_d0_st, Positive),
                "t_q0_st" => (&mut p.t_q0_st, Positive),
                _ => return None,
            })
        }
        "avr" => {
            let a = &mut m.avr.as_mut()?.model;
            Some(match f.as_str() {
                "k" => (&mut a.k, Any),
                "t_a" => (&mut a.t_a, NonNegative),
                "t_b" => (&mut a.t_b, Positive),
                "t_e" => (&mut a.t_e, Positive),
                "e_min" => (&mut a.e_min, Any),
                "e_max" => (&mut a.e_max, Any),
                _ => return None,
            })
        }
        "gov" => {
            let g = &mut m.gov.as_mut()?.model;
            Some(match f.as_str() {
                "r" => (&mut g.r_droop, Positive),
                "t_1" => (&mut g.t_1, Positive),
                "t_2" => (&mut g.t_2, NonNegative),
                "t_3" => (&mut g.t_3, Positive),
                "v_min" => (&mut g.v_min, Any),
                "v_max" => (&mut g.v_max, Any),
                _ => return None,
            })
        }
        "pss" => {
            let s = &mut m.pss.as_mut()?.model;
            Some(match f.as_str() {
                "k" => (&mut s.k, Any),
                "t_w" => (&mut s.t_w, Positive),
                "t_1" => (&mut s.t_1, NonNegative),
                "t_2" => (&mut s.t_2, Positive),
                "t_3" => (&mut s.t_3, NonNegative),
                "t_4" => (&mut s.t_4, Positive),
                "h_lim" => (&mut s.h_lim, NonNegative),
                _ => return None,
            })
        }
        _ => None,
    }
}

fn limits_ordered(m: &MachineUnit) -> Result<(), String> {
    if let Some(a) = &m.avr {
        if a.model.e_min >= a.model.e_max {
            return Err("E_min must be below E_max".into());
        }
    }
    if let Some(g) = &m.gov {
        if g.model.v_min >= g.model.v_max {
            return Err("V_min must be below V_max".into());
        }
    }
    let p = &m.machine.params;
    if !(p.x_d >= p.x_d_t && p.x_d_t >= p.x_d_st && p.x_q >= p.x_q_t && p.x_q_t >= p.x_q_st) {
        return Err("reactances must satisfy X >= X' >= X''".into());
    }
    Ok(())
}

impl OdeRhs for OdeSystem {
    fn dim(&self) -> usize {
        self.allocation.total()
    }

    fn rhs(&self, x: &[f64], dx: &mut [f64]) -> Result<(), EngineError> {
        self.check_len(x)?;
        let v = self.voltages(x)?;
        for m in &self.machines {
            let r = m.offset..m.offset + 6;
            let xm = &x[r.clone()];
            let (i_no, z) = m.machine.norton(xm);
            let v_t = v[m.pos];
            let i_t = i_no - v_t / z;
            let (i_d, i_q) = SyncMachine::to_dq(xm[0], i_t);
            let (e_f, p_m, _) = self.controls(m, x, v_t.norm(), dx);
            m.machine.derivatives(xm, p_m, e_f, i_d, i_q, self.omega_s, &mut dx[r]);
        }
        for (offset, dev) in &self.aux {
            let n = self.allocation.slots().iter().find(|s| s.offset == *offset).map_or(0, |s| s.len);
            dev.derivatives(&x[*offset..*offset + n], &mut dx[*offset..*offset + n]);
        }
        Ok(())
    }

    /// A limited integrator that overshot its bound within a step would
    /// otherwise hold the excess until its input reverses, delaying the
    /// release by an amount that depends on the step size.
    fn project(&self, x: &mut [f64]) -> bool {
        let mut moved = false;
        let mut clamp = |v: &mut f64, lo: f64, hi: f64| {
            let c = v.clamp(lo, hi);
            if c != *v {
                *v = c;
                moved = true;
            }
        };
        for m in &self.machines {
            if let Some(a) = m.avr.as_ref().filter(|a| a.active) {
                clamp(&mut x[a.offset + 1], a.model.e_min, a.model.e_max);
            }
            if let Some(g) = m.gov.as_ref().filter(|g| g.active) {
                clamp(&mut x[g.offset], g.model.v_min, g.model.v_max);
            }
        }
        moved
    }
}

impl StateVector {
    /// First non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }
}
