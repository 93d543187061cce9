mod common;

use std::net::TcpStream;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rmsim::engine::{run_batch, ChannelSelection, EngineError, Event, Simulation, SimulationConfig};
use rmsim::realtime::{
    command_queue, run_realtime, Ack, AckStatus, BusVoltage, ClientMessage, Command, CommandKind, CommandSender,
    ControlFlags, GeneratorState, LineStatus, Payload, RealtimeConfig, RealtimeOutcome, ServerMessage, Snapshot,
    SnapshotHub, StepRecord, Subscription, WsServer,
};
use serde_json::json;
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

const WAIT: Duration = Duration::from_secs(20);

struct Live {
    tx: CommandSender,
    stop: Arc<AtomicBool>,
    handle: JoinHandle<Result<RealtimeOutcome, EngineError>>,
}

impl Live {
    fn start(config: RealtimeConfig) -> Self {
        Self::start_with(config, SnapshotHub::new(), None)
    }

    /// Subscribe on `hub` before calling so that no snapshot is missed.
    fn start_with(config: RealtimeConfig, hub: SnapshotHub, rx_tx: Option<(CommandSender, crossbeam_channel::Receiver<rmsim::realtime::Envelope>)>) -> Self {
        let k = common::kundur();
        let sim = Simulation::new(k.ode, k.x0, &SimulationConfig::default()).unwrap();
        let (tx, rx) = rx_tx.unwrap_or_else(command_queue);
        let stop = Arc::new(AtomicBool::new(false));
        let (h, s) = (hub.clone(), stop.clone());
        let handle = std::thread::spawn(move || run_realtime(sim, &config, &rx, &h, &s));
        Self { tx, stop, handle }
    }

    fn send(&self, cmd: Command) -> Ack {
        self.tx.submit(cmd).recv_timeout(WAIT).expect("acknowledged")
    }

    fn finish(self) -> RealtimeOutcome {
        self.stop.store(true, Ordering::Relaxed);
        self.handle.join().unwrap().unwrap()
    }
}

fn next_snapshot(sub: &Subscription) -> Snapshot {
    let until = Instant::now() + WAIT;
    while Instant::now() < until {
        if let Some(ServerMessage::Snapshot(s)) = sub.next_timeout(Duration::from_millis(100)) {
            return s;
        }
    }
    panic!("no snapshot");
}

fn snapshot_after(sub: &Subscription, t: f64) -> Snapshot {
    loop {
        let s = next_snapshot(sub);
        if s.t_sim > t {
            return s;
        }
    }
}

fn paced(speed: f64) -> RealtimeConfig {
    RealtimeConfig { speed, ..Default::default() }
}

#[test]
fn golden_client_messages() {
    let cmd = ClientMessage::parse(r#"{"type":"command","id":7,"kind":"line_trip","payload":{"target":"L7-8"}}"#).unwrap();
    assert_eq!(cmd, ClientMessage::Command(Command::event(7, CommandKind::LineTrip, "L7-8", None)));
    let cmd = ClientMessage::parse(r#"{"type":"command","id":"a","kind":"set_speed","payload":{"value":0.5}}"#).unwrap();
    assert_eq!(
        cmd,
        ClientMessage::Command(Command::new("a", CommandKind::SetSpeed, Payload { value: Some(0.5), ..Default::default() }))
    );
    let cmd = ClientMessage::parse(r#"{"type":"command","id":null,"kind":"pause"}"#).unwrap();
    assert_eq!(cmd, ClientMessage::Command(Command::new(serde_json::Value::Null, CommandKind::Pause, Payload::default())));
    assert_eq!(
        ClientMessage::parse(r#"{"type":"subscribe","decimation":4}"#).unwrap(),
        ClientMessage::Subscribe { decimation: 4 }
    );
    assert!(ClientMessage::parse(r#"{"type":"command","id":1,"kind":"explode"}"#).is_err());
    assert!(ClientMessage::parse("not json").is_err());
}

#[test]
fn golden_server_messages() {
    let ack = ServerMessage::Ack(Ack::applied(json!(7), 1.25, None));
    assert_eq!(ack.to_json(), r#"{"type":"ack","id":7,"status":"applied","t_sim":1.25}"#);
    let nak = ServerMessage::Ack(Ack::rejected(json!("x"), 0.0, "unknown target 'Q'"));
    assert_eq!(nak.to_json(), r#"{"type":"ack","id":"x","status":"rejected","t_sim":0.0,"detail":"unknown target 'Q'"}"#);
    assert_eq!(ServerMessage::Dropped { count: 3 }.to_json(), r#"{"type":"dropped","count":3}"#);
    let snap = ServerMessage::Snapshot(Snapshot {
        step: 2,
        t_sim: 0.01,
        decimation: 1,
        generators: vec![GeneratorState { name: "G1".into(), delta: 0.5, d_omega: 0.0, e_f: 1.75, p_e: 7.0 }],
        buses: vec![BusVoltage { name: "B1".into(), v: [1.0, -0.25] }],
        controls: vec![ControlFlags { gen: "G1".into(), avr: Some(true), gov: None, pss: Some(false) }],
        lines: vec![LineStatus { name: "L1".into(), closed: true }],
        timing: Some(StepRecord { step: 2, t_sim: 0.01, calc_time: 0.001, loop_time: 0.005, overrun: false, drift: 0.0 }),
        diverged: false,
    });
    assert_eq!(
        snap.to_json(),
        concat!(
            r#"{"type":"snapshot","step":2,"t_sim":0.01,"decimation":1,"#,
            r#""generators":[{"name":"G1","delta":0.5,"d_omega":0.0,"e_f":1.75,"p_e":7.0}],"#,
            r#""buses":[{"name":"B1","v":[1.0,-0.25]}],"#,
            r#""controls":[{"gen":"G1","avr":true,"pss":false}],"#,
            r#""lines":[{"name":"L1","closed":true}],"#,
            r#""timing":{"step":2,"t_sim":0.01,"calc_time":0.001,"loop_time":0.005,"overrun":false,"drift":0.0},"#,
            r#""diverged":false}"#
        )
    );
    // and back
    let back: ServerMessage = serde_json::from_str(&snap.to_json()).unwrap();
    assert_eq!(back, snap);
}

#[test]
fn line_trip_is_acked_and_shows_in_the_next_snapshot() {
    let hub = SnapshotHub::new();
    let sub = hub.subscribe(1, 4096);
    let live = Live::start_with(paced(1.0), hub, None);
    let first = next_snapshot(&sub);
    assert!(first.lines.iter().all(|l| l.closed));
    let ack = live.send(Command::event(1, CommandKind::LineTrip, "L7-8", None));
    assert_eq!(ack.status, AckStatus::Applied, "{ack:?}");
    assert_eq!(ack.id, json!(1));
    let snap = snapshot_after(&sub, ack.t_sim);
    let l = snap.lines.iter().find(|l| l.name == "L7-8").unwrap();
    assert!(!l.closed);
    assert!(snap.lines.iter().filter(|l| l.name != "L7-8").all(|l| l.closed));
    let bad = live.send(Command::event(2, CommandKind::LineTrip, "L99", None));
    assert_eq!(bad.status, AckStatus::Rejected);
    assert!(bad.detail.unwrap().contains("L99"));
    live.finish();
}

#[test]
fn exciter_off_freezes_then_manual_field_takes_over() {
    let hub = SnapshotHub::new();
    let sub = hub.subscribe(1, 8192);
    let live = Live::start_with(paced(2.0), hub, None);
    // disturb so an active exciter would move
    assert!(live.send(Command::event("f", CommandKind::FaultOn, "B5", None)).is_applied());
    std::thread::sleep(Duration::from_millis(50));
    assert!(live.send(Command::event("g", CommandKind::FaultOff, "B5", None)).is_applied());
    let off = live.send(Command::event("off", CommandKind::ControlToggle, "G1.avr", Some(0.0)));
    assert!(off.is_applied(), "{off:?}");
    let frozen = snapshot_after(&sub, off.t_sim);
    assert_eq!(frozen.controls[0].avr, Some(false));
    let e_frozen = frozen.generators[0].e_f;
    for _ in 0..20 {
        assert_eq!(next_snapshot(&sub).generators[0].e_f, e_frozen);
    }
    let man = live.send(Command::event("m", CommandKind::SetpointChange, "G1.E_f", Some(2.5)));
    assert!(man.is_applied());
    let s = snapshot_after(&sub, man.t_sim);
    assert_eq!(s.generators[0].e_f, 2.5);
    // other machines keep regulating
    assert_eq!(s.controls[1].avr, Some(true));
    live.finish();
}

#[test]
fn console_read_your_write_and_errors() {
    let live = Live::start(paced(1.0));
    let get = live.send(Command::console(1, "get G1.avr.K"));
    assert_eq!(get.detail.as_deref(), Some("G1.avr.K = 200"));
    assert!(live.send(Command::console(2, "set G1.avr.K 150")).is_applied());
    assert_eq!(live.send(Command::console(3, "get G1.avr.K")).detail.as_deref(), Some("G1.avr.K = 150"));
    let junk = live.send(Command::console(4, "frobnicate now"));
    assert_eq!(junk.status, AckStatus::Rejected);
    assert!(junk.detail.unwrap().contains("parse error"));
    let path = live.send(Command::console(5, "get G1.avr.nope"));
    assert_eq!(path.status, AckStatus::Rejected);
    let ty = live.send(Command::console(6, "set G1.avr.K abc"));
    assert!(ty.detail.unwrap().contains("type mismatch"));
    let missing = live.send(Command::new(7, CommandKind::LineTrip, Payload::default()));
    assert_eq!(missing.status, AckStatus::Rejected);
    assert!(live.send(Command::console(8, "get G1.avr.K")).is_applied());
    live.finish();
}

#[test]
fn console_fault_matches_batch_run_with_same_event_times() {
    let hub = SnapshotHub::new();
    let sub = hub.subscribe(1, 100_000);
    let cfg = RealtimeConfig { speed: 10.0, t_end: Some(2.0), ..Default::default() };
    let live = Live::start_with(cfg, hub, None);
    snapshot_after(&sub, 0.3);
    let ack = live.send(Command::console("f", "fault B8 0.1"));
    assert!(ack.is_applied(), "{ack:?}");
    assert!(ack.detail.as_deref().unwrap().contains("fault_off"));
    let out = live.handle.join().unwrap().unwrap();
    let log = out.simulation.log().to_vec();
    assert_eq!(log.len(), 2);
    assert_eq!(log[1].step - log[0].step, 20);

    let mut snaps = vec![];
    while let Some(m) = sub.try_next() {
        if let ServerMessage::Snapshot(s) = m {
            snaps.push(s);
        }
    }
    let k = common::kundur();
    let bc = SimulationConfig { t_end: 2.0, ..Default::default() };
    let events: Vec<Event> = log.iter().map(Event::from).collect();
    let batch = run_batch(k.ode, &k.x0, &bc, &events, &ChannelSelection::states_only()).unwrap();
    let tr = &batch.trajectory;
    assert!(snaps.len() > 300);
    let mut worst: f64 = 0.0;
    let mut swing: f64 = 0.0;
    for (i, g) in ["G1", "G2", "G3", "G4"].iter().enumerate() {
        let col = tr.column(&format!("{g}.delta")).unwrap();
        for s in &snaps {
            let d = col[s.step as usize];
            worst = worst.max((s.generators[i].delta - d).abs());
            swing = swing.max((d - col[0]).abs());
        }
    }
    assert!(worst < 1e-9, "{worst:e}");
    assert!(swing > 1e-3, "fault should swing the rotors: {swing}");
}

#[test]
fn pause_holds_simulation_time_and_is_excluded_from_drift() {
    let hub = SnapshotHub::new();
    let sub = hub.subscribe(1, 100_000);
    let live = Live::start_with(paced(1.0), hub, None);
    snapshot_after(&sub, 0.2);
    let p = live.send(Command::new(1, CommandKind::Pause, Payload::default()));
    std::thread::sleep(Duration::from_millis(30));
    while sub.try_next().is_some() {}
    std::thread::sleep(Duration::from_millis(500));
    assert!(sub.try_next().is_none(), "no steps while paused");
    let r = live.send(Command::new(2, CommandKind::Resume, Payload::default()));
    assert_eq!(r.t_sim, p.t_sim);
    snapshot_after(&sub, r.t_sim + 0.3);
    let out = live.finish();
    let s = out.stats.summary();
    // 0.5 s of pause would show up as drift if it were counted
    assert!(s.final_drift.abs() < 0.1, "{s}");
}

#[test]
fn half_speed_doubles_wall_time() {
    let cfg = RealtimeConfig { speed: 1.0, t_end: Some(1.0), ..Default::default() };
    let live = Live::start(cfg);
    assert!(live.send(Command::new(1, CommandKind::SetSpeed, Payload { value: Some(0.5), ..Default::default() })).is_applied());
    let bad = live.send(Command::new(2, CommandKind::SetSpeed, Payload { value: Some(50.0), ..Default::default() }));
    assert_eq!(bad.status, AckStatus::Rejected);
    let t0 = Instant::now();
    let out = live.handle.join().unwrap().unwrap();
    let wall = t0.elapsed().as_secs_f64();
    let sim = out.simulation.time();
    assert!((wall / sim - 2.0).abs() < 0.15, "wall {wall} for {sim} s");
    assert!(out.stats.summary().final_drift.abs() < 0.1);
}

#[test]
fn concurrent_commands_are_each_acked_once() {
    let live = Live::start(paced(1.0));
    let producers: Vec<_> = (0..8)
        .map(|p| {
            let tx = live.tx.clone();
            std::thread::spawn(move || {
                let (atx, arx) = crossbeam_channel::unbounded();
                for i in 0..25 {
                    tx.submit_with(Command::console(json!(format!("{p}-{i}")), "get G2.gov.R"), atx.clone());
                }
                (0..25).map(|_| arx.recv_timeout(WAIT).unwrap()).collect::<Vec<Ack>>()
            })
        })
        .collect();
    let mut seen = std::collections::HashSet::new();
    for (p, h) in producers.into_iter().enumerate() {
        let acks = h.join().unwrap();
        // FIFO per producer
        let ids: Vec<String> = acks.iter().map(|a| a.id.as_str().unwrap().to_owned()).collect();
        assert_eq!(ids, (0..25).map(|i| format!("{p}-{i}")).collect::<Vec<_>>());
        assert!(acks.windows(2).all(|w| w[0].t_sim <= w[1].t_sim));
        for a in acks {
            assert!(a.is_applied());
            assert!(seen.insert(a.id.as_str().unwrap().to_owned()));
        }
    }
    assert_eq!(seen.len(), 200);
    live.finish();
}

#[test]
fn queued_commands_are_refused_once_stopped() {
    let (tx, rx) = command_queue();
    let cfg = RealtimeConfig { t_end: Some(0.0), ..Default::default() };
    let reply = tx.submit(Command::console(1, "get G1.avr.K"));
    let live = Live::start_with(cfg, SnapshotHub::new(), Some((tx, rx)));
    let out = live.handle.join().unwrap().unwrap();
    assert_eq!(out.simulation.step_index(), 0);
    let ack = reply.recv_timeout(WAIT).unwrap();
    assert_eq!(ack.status, AckStatus::Rejected);
    assert!(reply.try_recv().is_err());
}

#[test]
fn divergence_stops_the_loop_with_a_flagged_snapshot() {
    let hub = SnapshotHub::new();
    let sub = hub.subscribe(1, 100_000);
    let cfg = RealtimeConfig { speed: 10.0, t_end: Some(5.0), ..Default::default() };
    let live = Live::start_with(cfg, hub, None);
    next_snapshot(&sub);
    // Remove the governor and drive a tiny inertia with a huge power surplus.
    assert!(live.send(Command::event(1, CommandKind::ControlToggle, "G1.gov", Some(0.0))).is_applied());
    assert!(live.send(Command::event(2, CommandKind::ParamChange, "G1.gen.h", Some(1e-12))).is_applied());
    assert!(live.send(Command::event(3, CommandKind::SetpointChange, "G1.P_m", Some(1e300))).is_applied());
    let out = live.handle.join().unwrap().unwrap();
    assert!(out.diverged.is_some());
    let mut last = None;
    while let Some(m) = sub.try_next() {
        if let ServerMessage::Snapshot(s) = m {
            last = Some(s);
        }
    }
    assert!(last.unwrap().diverged);
}

fn ws_read(ws: &mut WebSocket<MaybeTlsStream<TcpStream>>) -> ServerMessage {
    loop {
        match ws.read().expect("socket open") {
            Message::Text(t) => return serde_json::from_str(t.as_str()).expect("valid server message"),
            Message::Close(_) => panic!("closed"),
            _ => {}
        }
    }
}

fn ws_until_ack(ws: &mut WebSocket<MaybeTlsStream<TcpStream>>, snaps: &mut Vec<Snapshot>) -> Ack {
    loop {
        match ws_read(ws) {
            ServerMessage::Ack(a) => return a,
            ServerMessage::Snapshot(s) => snaps.push(s),
            ServerMessage::Dropped { .. } => {}
        }
    }
}

#[test]
fn websocket_round_trip() {
    let (tx, rx) = command_queue();
    let hub = SnapshotHub::new();
    let stop = Arc::new(AtomicBool::new(false));
    let server = WsServer::bind("127.0.0.1:0", tx.clone(), hub.clone(), stop.clone()).unwrap();
    let live = Live::start_with(paced(1.0), hub, Some((tx, rx)));
    let url = format!("ws://{}", server.local_addr());
    let (mut ws, _) = tungstenite::connect(url.as_str()).unwrap();
    ws.send(Message::text(r#"{"type":"subscribe","decimation":5}"#)).unwrap();
    let mut snaps = vec![];
    while snaps.len() < 3 {
        if let ServerMessage::Snapshot(s) = ws_read(&mut ws) {
            snaps.push(s);
        }
    }
    assert!(snaps.iter().all(|s| s.decimation == 5 && s.step % 5 == 0), "{:?}", snaps.iter().map(|s| s.step).collect::<Vec<_>>());

    ws.send(Message::text(r#"{"type":"command","id":"trip-1","kind":"line_trip","payload":{"target":"L8-9"}}"#)).unwrap();
    let ack = ws_until_ack(&mut ws, &mut snaps);
    assert_eq!(ack.id, json!("trip-1"));
    assert_eq!(ack.status, AckStatus::Applied);
    ws.send(Message::text(r#"{"type":"command","id":9,"kind":"warp"}"#)).unwrap();
    let nak = ws_until_ack(&mut ws, &mut snaps);
    assert_eq!(nak.id, json!(9));
    assert_eq!(nak.status, AckStatus::Rejected);
    ws.send(Message::text("{{{")).unwrap();
    let nak = ws_until_ack(&mut ws, &mut snaps);
    assert_eq!(nak.id, serde_json::Value::Null);
    // the loop kept running through the malformed messages
    snaps.clear();
    while snaps.len() < 2 {
        if let ServerMessage::Snapshot(s) = ws_read(&mut ws) {
            snaps.push(s);
        }
    }
    let l = snaps[1].lines.iter().find(|l| l.name == "L8-9").unwrap();
    assert!(!l.closed);
    ws.close(None).unwrap();
    let out = live.finish();
    assert_eq!(out.simulation.log().len(), 1);
    server.shutdown();
}
