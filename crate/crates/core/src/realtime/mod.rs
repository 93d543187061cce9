//! Wall-clock paced simulation with a live command and snapshot protocol.

mod console;
mod hub;
mod protocol;
mod server;
mod service;
mod timing;

pub use console::{console_eval, parse_console, ConsoleCommand};
pub use hub::{SnapshotHub, Subscription, DEFAULT_CAPACITY};
pub use protocol::{
    Ack, AckStatus, BusVoltage, ClientMessage, Command, CommandKind, ControlFlags, GeneratorState, LineStatus, Payload,
    ServerMessage, Snapshot,
};
pub use server::WsServer;
pub use service::{
    command_queue, make_snapshot, run_realtime, CommandSender, Envelope, RealtimeConfig, RealtimeOutcome, MAX_SPEED,
    MIN_SPEED,
};
pub use timing::{StepRecord, TimingStats, TimingSummary};
