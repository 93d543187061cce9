use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tungstenite::{Error as WsError, Message, WebSocket};

use super::hub::{SnapshotHub, Subscription, DEFAULT_CAPACITY};
use super::protocol::{Ack, ClientMessage, ServerMessage};
use super::service::CommandSender;

/// Accepts WebSocket clients on a background thread. Each client gets its
/// own thread that forwards commands to the simulation and streams acks
/// and snapshots back.
#[derive(Debug)]
pub struct WsServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl WsServer {
    pub fn bind(addr: &str, commands: CommandSender, hub: SnapshotHub, stop: Arc<AtomicBool>) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local = listener.local_addr()?;
        let s = stop.clone();
        let acceptor = std::thread::Builder::new()
            .name("ws-accept".into())
            .spawn(move || accept_loop(listener, commands, hub, s))?;
        Ok(Self { addr: local, stop, acceptor: Some(acceptor) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for WsServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

fn accept_loop(listener: TcpListener, commands: CommandSender, hub: SnapshotHub, stop: Arc<AtomicBool>) {
    let mut clients = Vec::new();
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                log::info!("client connected from {peer}");
                let (c, h, s) = (commands.clone(), hub.clone(), stop.clone());
                match std::thread::Builder::new()
                    .name(format!("ws-{peer}"))
                    .spawn(move || {
                        if let Err(e) = client_loop(stream, c, h, s) {
                            log::info!("client {peer}: {e}");
                        }
                    }) {
                    Ok(handle) => clients.push(handle),
                    Err(e) => log::error!("cannot spawn client thread: {e}"),
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                log::error!("accept failed: {e}");
                std::thread::sleep(Duration::from_millis(10));
            }
        }
        clients.retain(|h: &JoinHandle<()>| !h.is_finished());
    }
    for h in clients {
        let _ = h.join();
    }
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &ServerMessage) -> Result<(), WsError> {
    ws.write(Message::text(msg.to_json()))
}

fn client_loop(stream: TcpStream, commands: CommandSender, hub: SnapshotHub, stop: Arc<AtomicBool>) -> Result<(), WsError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => WsError::Io(ErrorKind::WouldBlock.into()),
    })?;
    ws.get_mut().set_read_timeout(Some(Duration::from_millis(2)))?;
    let (ack_tx, ack_rx) = crossbeam_channel::unbounded::<Ack>();
    let mut sub: Option<Subscription> = None;
    let mut last_t = 0.0;
    loop {
        if stop.load(Ordering::Relaxed) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        match ws.read() {
            Ok(Message::Text(text)) => match ClientMessage::parse(text.as_str()) {
                Ok(ClientMessage::Command(cmd)) => commands.submit_with(cmd, ack_tx.clone()),
                Ok(ClientMessage::Subscribe { decimation }) => match &sub {
                    Some(s) => s.set_decimation(decimation),
                    None => sub = Some(hub.subscribe(decimation, DEFAULT_CAPACITY)),
                },
                Err(e) => {
                    let id = serde_json::from_str::<serde_json::Value>(text.as_str())
                        .ok()
                        .and_then(|v| v.get("id").cloned())
                        .unwrap_or(serde_json::Value::Null);
                    send(&mut ws, &ServerMessage::Ack(Ack::rejected(id, last_t, e)))?;
                }
            },
            Ok(Message::Close(_)) => {
                let _ = ws.flush();
                return Ok(());
            }
            Ok(_) => {}
            Err(WsError::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(WsError::ConnectionClosed | WsError::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e),
        }
        while let Ok(ack) = ack_rx.try_recv() {
            send(&mut ws, &ServerMessage::Ack(ack))?;
        }
        if let Some(s) = &sub {
            while let Some(m) = s.try_next() {
                if let ServerMessage::Snapshot(snap) = &m {
                    last_t = snap.t_sim;
                }
                send(&mut ws, &m)?;
            }
            if s.is_closed() {
                let _ = ws.close(None);
                let _ = ws.flush();
                return Ok(());
            }
        }
        match ws.flush() {
            Ok(()) => {}
            Err(WsError::Io(e)) if e.kind() == ErrorKind::WouldBlock => {}
            Err(e) => return Err(e),
        }
    }
}
