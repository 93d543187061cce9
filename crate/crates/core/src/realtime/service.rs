use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender, TryRecvError};

use super::console::console_eval;
use super::hub::SnapshotHub;
use super::protocol::{Ack, BusVoltage, Command, CommandKind, ControlFlags, GeneratorState, LineStatus, Snapshot};
use super::timing::{StepRecord, TimingStats};
use crate::engine::{EngineError, Simulation};

pub const MIN_SPEED: f64 = 0.01;
pub const MAX_SPEED: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RealtimeConfig {
    /// Simulated seconds per wall second.
    pub speed: f64,
    /// Stop once simulation time reaches this value.
    pub t_end: Option<f64>,
    /// Final stretch before a deadline that is busy-waited rather than slept.
    pub spin: Duration,
    /// No wall-clock pacing: steps run back to back. Used for replay tests.
    pub free_run: bool,
}

impl Default for RealtimeConfig {
    fn default() -> Self {
        Self { speed: 1.0, t_end: None, spin: Duration::from_micros(500), free_run: false }
    }
}

/// A command with the channel its acknowledgment goes to.
#[derive(Debug)]
pub struct Envelope {
    pub command: Command,
    pub reply: Option<Sender<Ack>>,
}

/// Producer handle for the simulation's command queue. Cloneable; each
/// clone is one producer, and the queue is FIFO per producer.
#[derive(Debug, Clone)]
pub struct CommandSender {
    tx: Sender<Envelope>,
}

pub fn command_queue() -> (CommandSender, Receiver<Envelope>) {
    let (tx, rx) = crossbeam_channel::unbounded();
    (CommandSender { tx }, rx)
}

impl CommandSender {
    /// Queues a command; the acknowledgment arrives on the returned channel.
    pub fn submit(&self, command: Command) -> Receiver<Ack> {
        let (tx, rx) = crossbeam_channel::bounded(1);
        if let Err(e) = self.tx.send(Envelope { command, reply: Some(tx.clone()) }) {
            let cmd = e.into_inner().command;
            let _ = tx.send(Ack::rejected(cmd.id, f64::NAN, "simulation is not running"));
        }
        rx
    }

    pub fn submit_with(&self, command: Command, reply: Sender<Ack>) {
        let _ = self.tx.send(Envelope { command, reply: Some(reply) });
    }
}

#[derive(Debug)]
pub struct RealtimeOutcome {
    pub simulation: Simulation,
    pub stats: TimingStats,
    pub diverged: Option<EngineError>,
}

/// Builds the published view of the current state.
pub fn make_snapshot(sim: &Simulation, timing: Option<StepRecord>) -> Result<Snapshot, EngineError> {
    let sys = sim.system();
    let sig = sys.signals(&sim.state().values)?;
    Ok(Snapshot {
        step: sim.step_index(),
        t_sim: sim.time(),
        decimation: 1,
        generators: sig
            .machines
            .iter()
            .map(|m| GeneratorState { name: m.name.clone(), delta: m.delta, d_omega: m.d_omega, e_f: m.e_f, p_e: m.p_e })
            .collect(),
        buses: sig.buses.iter().map(|(n, v)| BusVoltage { name: n.clone(), v: [v.re, v.im] }).collect(),
        controls: sys
            .machines()
            .iter()
            .map(|m| ControlFlags {
                gen: m.name.clone(),
                avr: m.avr.as_ref().map(|c| c.active),
                gov: m.gov.as_ref().map(|c| c.active),
                pss: m.pss.as_ref().map(|c| c.active),
            })
            .collect(),
        lines: sys.line_status().map(|(n, c)| LineStatus { name: n.to_owned(), closed: c }).collect(),
        timing,
        diverged: false,
    })
}

struct Clock {
    anchor_wall: Instant,
    anchor_step: u64,
    speed: f64,
    paused: bool,
    /// Active (unpaused) wall time accumulated before the current anchor.
    active_before: Duration,
    /// Ideal wall time accumulated before the current anchor.
    ideal_before: f64,
}

impl Clock {
    fn reanchor(&mut self, now: Instant, step: u64, dt: f64) {
        if !self.paused {
            self.active_before += now - self.anchor_wall;
            self.ideal_before += (step - self.anchor_step) as f64 * dt / self.speed;
        }
        self.anchor_wall = now;
        self.anchor_step = step;
    }

    fn due(&self, step: u64, dt: f64) -> Instant {
        self.anchor_wall + Duration::from_secs_f64((step - self.anchor_step) as f64 * dt / self.speed)
    }

    fn drift(&self, now: Instant, step: u64, dt: f64) -> f64 {
        let active = (self.active_before + (now - self.anchor_wall)).as_secs_f64();
        let ideal = self.ideal_before + (step - self.anchor_step) as f64 * dt / self.speed;
        active - ideal
    }
}

/// Coarse sleep, then spin for the last `spin` before `due`.
fn wait_until(due: Instant, spin: Duration) {
    loop {
        let now = Instant::now();
        if now >= due {
            return;
        }
        let left = due - now;
        if left > spin {
            std::thread::sleep(left - spin);
        } else {
            std::hint::spin_loop();
        }
    }
}

fn handle(sim: &mut Simulation, clock: &mut Clock, cmd: &Command) -> Ack {
    let t = sim.time();
    let id = cmd.id.clone();
    match cmd.kind {
        CommandKind::Pause => {
            if !clock.paused {
                clock.reanchor(Instant::now(), sim.step_index(), sim.dt());
                clock.paused = true;
            }
            Ack::applied(id, t, None)
        }
        CommandKind::Resume => {
            if clock.paused {
                clock.anchor_wall = Instant::now();
                clock.anchor_step = sim.step_index();
                clock.paused = false;
            }
            Ack::applied(id, t, None)
        }
        CommandKind::SetSpeed => match cmd.payload.value {
            Some(v) if (MIN_SPEED..=MAX_SPEED).contains(&v) => {
                clock.reanchor(Instant::now(), sim.step_index(), sim.dt());
                clock.speed = v;
                Ack::applied(id, t, None)
            }
            Some(v) => Ack::rejected(id, t, format!("speed must lie in [{MIN_SPEED}, {MAX_SPEED}], got {v}")),
            None => Ack::rejected(id, t, "set_speed needs payload.value"),
        },
        CommandKind::Console => match cmd.payload.text.as_deref() {
            Some(text) => match console_eval(sim, text) {
                Ok(out) => Ack::applied(id, t, Some(out)),
                Err(e) => Ack::rejected(id, t, e),
            },
            None => Ack::rejected(id, t, "console needs payload.text"),
        },
        _ => match cmd.to_event(t) {
            Ok(Some(ev)) => match sim.apply(&ev) {
                Ok(r) => Ack::applied(id, t, r.warning),
                Err(e) => Ack::rejected(id, t, e.to_string()),
            },
            Ok(None) => unreachable!("event kinds handled above"),
            Err(e) => Ack::rejected(id, t, e),
        },
    }
}

fn reply(env: Envelope, ack: Ack) {
    if let Some(tx) = env.reply {
        let _ = tx.send(ack);
    }
}

/// Runs `sim` against the wall clock until `stop` is set, the command
/// channel closes while idle, `config.t_end` is reached, or the state
/// diverges. Commands are applied before the next step; every command is
/// acknowledged once. A late step is never skipped: it runs immediately and
/// the delay shows up as drift.
pub fn run_realtime(
    mut sim: Simulation,
    config: &RealtimeConfig,
    commands: &Receiver<Envelope>,
    hub: &SnapshotHub,
    stop: &Arc<AtomicBool>,
) -> Result<RealtimeOutcome, EngineError> {
    if !(MIN_SPEED..=MAX_SPEED).contains(&config.speed) {
        return Err(EngineError::Invalid(format!("speed must lie in [{MIN_SPEED}, {MAX_SPEED}]")));
    }
    let dt = sim.dt();
    let mut stats = TimingStats::new(dt);
    let start = Instant::now();
    let mut clock = Clock {
        anchor_wall: start,
        anchor_step: sim.step_index(),
        speed: config.speed,
        paused: false,
        active_before: Duration::ZERO,
        ideal_before: 0.0,
    };
    hub.publish(&make_snapshot(&sim, None)?);
    let mut loop_start = start;
    let mut diverged = None;
    let mut disconnected = false;
    'run: while !stop.load(Ordering::Relaxed) {
        if config.t_end.is_some_and(|t| sim.time() >= t - 0.5 * dt) {
            break;
        }
        loop {
            match commands.try_recv() {
                Ok(env) => {
                    let ack = handle(&mut sim, &mut clock, &env.command);
                    reply(env, ack);
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    disconnected = true;
                    break;
                }
            }
        }
        if clock.paused {
            if disconnected {
                break;
            }
            match commands.recv_timeout(Duration::from_millis(20)) {
                Ok(env) => {
                    let ack = handle(&mut sim, &mut clock, &env.command);
                    reply(env, ack);
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break 'run,
            }
            loop_start = Instant::now();
            continue;
        }

        let t0 = Instant::now();
        let step = sim.advance();
        let calc_time = t0.elapsed().as_secs_f64();
        if let Err(e) = step {
            log::error!("simulation diverged: {e}");
            let mut snap = make_snapshot(&sim, None).unwrap_or_else(|_| Snapshot {
                step: sim.step_index(),
                t_sim: sim.time(),
                decimation: 1,
                generators: vec![],
                buses: vec![],
                controls: vec![],
                lines: vec![],
                timing: None,
                diverged: true,
            });
            snap.diverged = true;
            hub.publish(&snap);
            diverged = Some(e);
            break;
        }
        let k = sim.step_index();
        let due = clock.due(k, dt);
        let overrun = Instant::now() > due;
        if !config.free_run && !overrun {
            wait_until(due, config.spin);
        }
        let now = Instant::now();
        let rec = StepRecord {
            step: k,
            t_sim: sim.time(),
            calc_time,
            loop_time: (now - loop_start).as_secs_f64(),
            overrun: overrun && !config.free_run,
            drift: clock.drift(now, k, dt),
        };
        loop_start = now;
        stats.push(rec, dt / clock.speed);
        match make_snapshot(&sim, Some(rec)) {
            Ok(s) => hub.publish(&s),
            Err(e) => log::warn!("snapshot failed: {e}"),
        }
    }
    // Commands still queued are refused rather than silently lost.
    while let Ok(env) = commands.try_recv() {
        let t = sim.time();
        let id = env.command.id.clone();
        reply(env, Ack::rejected(id, t, "simulation stopped"));
    }
    Ok(RealtimeOutcome { simulation: sim, stats, diverged })
}
