use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::Duration;

use super::protocol::{ServerMessage, Snapshot};

pub const DEFAULT_CAPACITY: usize = 256;

#[derive(Debug)]
struct Queue {
    buf: VecDeque<Snapshot>,
    capacity: usize,
    decimation: u32,
    /// Drops not yet reported to the reader.
    dropped: u64,
    closed: bool,
}

#[derive(Debug)]
struct Slot {
    q: Mutex<Queue>,
    ready: Condvar,
}

fn lock(m: &Mutex<Queue>) -> MutexGuard<'_, Queue> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Fan-out of snapshots to any number of readers. Publishing never blocks
/// on a reader: a full buffer discards its oldest entry and counts it.
#[derive(Debug, Clone, Default)]
pub struct SnapshotHub {
    slots: Arc<Mutex<Vec<Arc<Slot>>>>,
}

/// Read side of one subscription. Dropping it unsubscribes.
#[derive(Debug)]
pub struct Subscription {
    slot: Arc<Slot>,
}

impl SnapshotHub {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&self, decimation: u32, capacity: usize) -> Subscription {
        let slot = Arc::new(Slot {
            q: Mutex::new(Queue {
                buf: VecDeque::with_capacity(capacity.clamp(1, 4096)),
                capacity: capacity.max(1),
                decimation: decimation.max(1),
                dropped: 0,
                closed: false,
            }),
            ready: Condvar::new(),
        });
        self.slots.lock().unwrap_or_else(|e| e.into_inner()).push(slot.clone());
        Subscription { slot }
    }

    pub fn subscriber_count(&self) -> usize {
        self.prune();
        self.slots.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    fn prune(&self) {
        // The hub holds one reference; a second one means the reader is alive.
        self.slots.lock().unwrap_or_else(|e| e.into_inner()).retain(|s| Arc::strong_count(s) > 1);
    }

    pub fn publish(&self, snap: &Snapshot) {
        self.prune();
        let slots = self.slots.lock().unwrap_or_else(|e| e.into_inner()).clone();
        for slot in slots {
            let mut q = lock(&slot.q);
            // Diverged snapshots are final and always delivered.
            if !snap.diverged && snap.step % u64::from(q.decimation) != 0 {
                continue;
            }
            if q.buf.len() == q.capacity {
                q.buf.pop_front();
                q.dropped += 1;
            }
            let mut s = snap.clone();
            s.decimation = q.decimation;
            q.buf.push_back(s);
            drop(q);
            slot.ready.notify_all();
        }
    }

    /// Wakes all readers; further receives return what is buffered, then `None`.
    pub fn close(&self) {
        for slot in self.slots.lock().unwrap_or_else(|e| e.into_inner()).iter() {
            lock(&slot.q).closed = true;
            slot.ready.notify_all();
        }
    }
}

impl Subscription {
    pub fn set_decimation(&self, decimation: u32) {
        lock(&self.slot.q).decimation = decimation.max(1);
    }

    fn take(q: &mut Queue) -> Option<ServerMessage> {
        if q.dropped > 0 {
            let count = std::mem::take(&mut q.dropped);
            return Some(ServerMessage::Dropped { count });
        }
        q.buf.pop_front().map(ServerMessage::Snapshot)
    }

    /// Next message without waiting. A `dropped` notice precedes the first
    /// snapshot after an overflow.
    pub fn try_next(&self) -> Option<ServerMessage> {
        Self::take(&mut lock(&self.slot.q))
    }

    /// Waits up to `timeout` for the next message.
    pub fn next_timeout(&self, timeout: Duration) -> Option<ServerMessage> {
        let mut q = lock(&self.slot.q);
        if let Some(m) = Self::take(&mut q) {
            return Some(m);
        }
        if q.closed {
            return None;
        }
        let (mut q, _) = self
            .slot
            .ready
            .wait_timeout_while(q, timeout, |q| q.buf.is_empty() && q.dropped == 0 && !q.closed)
            .unwrap_or_else(|e| e.into_inner());
        Self::take(&mut q)
    }

    pub fn is_closed(&self) -> bool {
        let q = lock(&self.slot.q);
        q.closed && q.buf.is_empty() && q.dropped == 0
    }

    /// Snapshots waiting in the buffer.
    pub fn pending(&self) -> usize {
        lock(&self.slot.q).buf.len()
    }
}
