use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{ChannelSelection, Event, Method, SimulationConfig};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub method: Method,
    pub dt: f64,
    pub corrector_iters: usize,
    pub t_end: f64,
    pub keep_buses: Vec<String>,
    pub fault_admittance: [f64; 2],
    pub rtol: f64,
    pub atol: f64,
    pub decimation: usize,
    pub bus_voltages: bool,
}

impl ConfigEcho {
    pub fn new(c: &SimulationConfig, ch: &ChannelSelection) -> Self {
        Self {
            method: c.method,
            dt: c.dt,
            corrector_iters: c.corrector_iters,
            t_end: c.t_end,
            keep_buses: c.keep_buses.clone(),
            fault_admittance: [c.fault_admittance.re, c.fault_admittance.im],
            rtol: c.rtol,
            atol: c.atol,
            decimation: ch.decimation,
            bus_voltages: ch.bus_voltages,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
}

/// Record of one batch run: what went in, what came out, and when.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub model: String,
    pub model_sha256: String,
    pub events_file: Option<String>,
    pub events: Vec<Event>,
    pub config: ConfigEcho,
    /// Hash over model bytes, event file bytes and the config echo. Equal
    /// hashes imply byte-identical outputs.
    pub input_hash: String,
    pub outputs: Vec<OutputRecord>,
    pub started_unix_s: f64,
    pub elapsed_s: f64,
}

impl RunManifest {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &Path,
        model_bytes: &[u8],
        events_file: Option<&Path>,
        events_bytes: Option<&[u8]>,
        events: &[Event],
        config: ConfigEcho,
        outputs: Vec<OutputRecord>,
        elapsed_s: f64,
    ) -> Self {
        let mut h = Sha256::new();
        // Length-prefixed sections so that boundaries cannot shift.
        for part in [model_bytes, events_bytes.unwrap_or(&[]), serde_json::to_string(&config).expect("config serializes").as_bytes()] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        let input_hash = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        Self {
            tool: format!("rmsim {}", env!("CARGO_PKG_VERSION")),
            model: model.display().to_string(),
            model_sha256: sha256_hex(model_bytes),
            events_file: events_file.map(|p| p.display().to_string()),
            events: events.to_vec(),
            config,
            input_hash,
            outputs,
            started_unix_s: now - elapsed_s,
            elapsed_s,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
