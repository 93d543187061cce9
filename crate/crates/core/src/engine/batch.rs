use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::events::{Event, Receipt};
use super::{EngineError, Integrator, OdeSystem, SimulationConfig, StateVector};

/// An event as actually applied, keyed by the step boundary it preceded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub step: u64,
    pub event: Event,
}

#[derive(Debug, Clone)]
struct Pending {
    step: u64,
    event: Event,
}

/// One owner of the system, its state and the integrator. Both batch runs
/// and the real-time loop advance through this type, which keeps their
/// trajectories identical for identical event logs.
#[derive(Debug, Clone)]
pub struct Simulation {
    system: OdeSystem,
    state: StateVector,
    integrator: Integrator,
    dt: f64,
    step_index: u64,
    pending: Vec<Pending>,
    log: Vec<LoggedEvent>,
}

impl Simulation {
    pub fn new(system: OdeSystem, x0: StateVector, config: &SimulationConfig) -> Result<Self, EngineError> {
        config.check()?;
        if x0.len() != system.allocation().total() {
            return Err(EngineError::Dimension { expected: system.allocation().total(), got: x0.len() });
        }
        Ok(Self {
            system,
            state: StateVector::new(x0.values),
            integrator: Integrator::new(config.method, config.corrector_iters, config.rtol, config.atol),
            dt: config.dt,
            step_index: 0,
            pending: Vec::new(),
            log: Vec::new(),
        })
    }

    pub fn system(&self) -> &OdeSystem {
        &self.system
    }

    pub fn state(&self) -> &StateVector {
        &self.state
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.dt
    }

    pub fn log(&self) -> &[LoggedEvent] {
        &self.log
    }

    pub fn into_parts(self) -> (OdeSystem, StateVector, Vec<LoggedEvent>) {
        (self.system, self.state, self.log)
    }

    /// Applies an event now, before the next step.
    pub fn apply(&mut self, ev: &Event) -> Result<Receipt, EngineError> {
        let mut ev = ev.clone();
        ev.t = self.time();
        let receipt = self.system.apply_event(&ev, &self.state.values)?;
        self.log.push(LoggedEvent { step: self.step_index, event: ev });
        Ok(receipt)
    }

    /// Queues an event for the step boundary nearest its time. Returns a
    /// warning when the time had to be snapped or lies in the past.
    pub fn schedule(&mut self, ev: Event) -> Option<String> {
        let exact = ev.t / self.dt;
        let mut step = exact.round().max(0.0) as u64;
        let mut warning = None;
        if (step as f64 * self.dt - ev.t).abs() > 1e-9 * ev.t.abs().max(1.0) {
            warning = Some(format!(
                "event {} {} at t = {} snapped to t = {}",
                ev.kind.as_str(),
                ev.target,
                ev.t,
                step as f64 * self.dt
            ));
        }
        if step < self.step_index {
            warning = Some(format!("event {} {} at t = {} is in the past; applied at the next step", ev.kind.as_str(), ev.target, ev.t));
            step = self.step_index;
        }
        if let Some(w) = &warning {
            log::warn!("{w}");
        }
        // Stable: later insertions at the same step run after earlier ones.
        let at = self.pending.partition_point(|p| p.step <= step);
        self.pending.insert(at, Pending { step, event: ev });
        warning
    }

    pub fn pending(&self) -> impl Iterator<Item = (u64, &Event)> {
        self.pending.iter().map(|p| (p.step, &p.event))
    }

    /// Applies due events, then integrates one step.
    pub fn advance(&mut self) -> Result<Vec<Result<Receipt, EngineError>>, EngineError> {
        let mut receipts = Vec::new();
        while self.pending.first().is_some_and(|p| p.step <= self.step_index) {
            let p = self.pending.remove(0);
            let r = self.apply(&p.event);
            if let Err(e) = &r {
                log::warn!("scheduled event {} {} failed: {e}", p.event.kind.as_str(), p.event.target);
            }
            receipts.push(r);
        }
        self.integrator.step(&self.system, &mut self.state.values, self.dt)?;
        self.step_index += 1;
        self.state.t = self.time();
        if let Some(i) = self.state.first_non_finite() {
            return Err(EngineError::NonFinite {
                index: i,
                name: self.system.allocation().label_of(i).unwrap_or_default(),
                t: self.state.t,
            });
        }
        Ok(receipts)
    }
}

/// Which quantities the recorder stores.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSelection {
    pub states: bool,
    /// Per machine: `P_e`, `P_m`, `E_f`, `V_t` (magnitude).
    pub machine_signals: bool,
    /// Per retained bus: `V_mag`, `V_ang`.
    pub bus_voltages: bool,
    /// Record every n-th step (the final step is always kept).
    pub decimation: usize,
}

impl Default for ChannelSelection {
    fn default() -> Self {
        Self { states: true, machine_signals: true, bus_voltages: false, decimation: 1 }
    }
}

impl ChannelSelection {
    pub fn states_only() -> Self {
        Self { states: true, machine_signals: false, bus_voltages: false, decimation: 1 }
    }

    pub fn all() -> Self {
        Self { states: true, machine_signals: true, bus_voltages: true, decimation: 1 }
    }
}

/// Sampled trajectory. The first column is always `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedTrajectory {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl RecordedTrajectory {
    fn new(system: &OdeSystem, sel: &ChannelSelection) -> Self {
        let mut columns = vec!["t".to_owned()];
        if sel.states {
            columns.extend(system.allocation().state_labels());
        }
        if sel.machine_signals {
            for m in system.machines() {
                for s in ["P_e", "P_m", "E_f", "V_t"] {
                    columns.push(format!("{}.{s}", m.name));
                }
            }
        }
        if sel.bus_voltages {
            for b in system.retained_buses() {
                columns.push(format!("{b}.V_mag"));
                columns.push(format!("{b}.V_ang"));
            }
        }
        Self { columns, rows: Vec::new() }
    }

    fn record(&mut self, system: &OdeSystem, x: &StateVector, sel: &ChannelSelection) -> Result<(), EngineError> {
        let mut row = Vec::with_capacity(self.columns.len());
        row.push(x.t);
        if sel.states {
            row.extend_from_slice(&x.values);
        }
        if sel.machine_signals || sel.bus_voltages {
            let s = system.signals(&x.values)?;
            if sel.machine_signals {
                for m in &s.machines {
                    row.extend_from_slice(&[m.p_e, m.p_m, m.e_f, m.v_t.norm()]);
                }
            }
            if sel.bus_voltages {
                for (_, v) in &s.buses {
                    row.extend_from_slice(&[v.norm(), v.arg()]);
                }
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[0]).collect()
    }

    /// CSV with a header row; values use the shortest exact decimal form.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        let mut line = String::new();
        for row in &self.rows {
            line.clear();
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub trajectory: RecordedTrajectory,
    pub final_state: StateVector,
    pub log: Vec<LoggedEvent>,
    pub warnings: Vec<String>,
    /// The system after all events, for inspection.
    pub system: OdeSystem,
}

/// Integrates from `x0` to `config.t_end`, applying `events` at the step
/// boundaries nearest their times.
pub fn run_batch(
    system: OdeSystem,
    x0: &StateVector,
    config: &SimulationConfig,
    events: &[Event],
    channels: &ChannelSelection,
) -> Result<BatchResult, EngineError> {
    let mut sim = Simulation::new(system, x0.clone(), config)?;
    let n_steps = (config.t_end / config.dt).round() as u64;
    let mut warnings = Vec::new();
    for ev in events {
        if ev.t > config.t_end + 0.5 * config.dt {
            warnings.push(format!("event {} {} at t = {} is after t_end and was ignored", ev.kind.as_str(), ev.target, ev.t));
            continue;
        }
        warnings.extend(sim.schedule(ev.clone()));
    }
    let mut traj = RecordedTrajectory::new(sim.system(), channels);
    let decim = channels.decimation.max(1) as u64;
    traj.record(sim.system(), sim.state(), channels)?;
    for k in 1..=n_steps {
        for r in sim.advance()? {
            match r {
                Ok(rec) => warnings.extend(rec.warning),
                Err(e) => return Err(e),
            }
        }
        if k % decim == 0 || k == n_steps {
            traj.record(sim.system(), sim.state(), channels)?;
        }
    }
    // Events landing exactly on the final boundary still take effect.
    while sim.pending().next().is_some_and(|(s, _)| s <= sim.step_index()) {
        let ev = sim.pending.remove(0).event;
        let rec = sim.apply(&ev)?;
        warnings.extend(rec.warning);
    }
    let (system, final_state, log) = sim.into_parts();
    Ok(BatchResult { trajectory: traj, final_state, log, warnings, system })
}

impl From<&LoggedEvent> for Event {
    fn from(l: &LoggedEvent) -> Self {
        l.event.clone()
    }
}
