//! Grid description files.
//!
//! A model file is a sequence of named tables. Each table starts with a
//! bracketed header line such as `[buses]`, followed by a row of column names
//! and then value rows. Values are separated by whitespace and/or commas and
//! `#` starts a comment. Column order is free; optional columns fall back to
//! their documented default.
//!
//! All network and dispatch quantities are in per-unit on the system base
//! (`[base] base_mva`). Machine parameters stay on the machine base `S_n`
//! and are converted once when the dynamic model is built.

mod parse;
mod validate;

pub use parse::{parse_model, read_model, serialize_model};
pub use validate::{validate, Diagnostic, Severity};

use thiserror::Error;

/// Default system base when the `[base]` table is absent.
pub const DEFAULT_BASE_MVA: f64 = 1000.0;
/// Default nominal frequency when the `[base]` table is absent.
pub const DEFAULT_FREQUENCY_HZ: f64 = 50.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {kind} '{name}' is not defined")]
    UnknownReference {
        line: usize,
        kind: &'static str,
        name: String,
    },
    #[error("line {line}: duplicate {kind} name '{name}'")]
    Duplicate {
        line: usize,
        kind: &'static str,
        name: String,
    },
    #[error("line {line}: table [{table}] is missing required field '{field}'")]
    MissingField {
        line: usize,
        table: String,
        field: String,
    },
    #[error("required table [{0}] is missing")]
    MissingTable(&'static str),
    #[error("cannot read model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    PV,
    PQ,
}

impl BusKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BusKind::Slack => "slack",
            BusKind::PV => "PV",
            BusKind::PQ => "PQ",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "slack" | "ref" | "swing" => Some(BusKind::Slack),
            "pv" => Some(BusKind::PV),
            "pq" => Some(BusKind::PQ),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusRecord {
    pub name: String,
    /// Nominal voltage in kV.
    pub v_n: f64,
    pub kind: BusKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchRecord {
    pub name: String,
    pub from: String,
    pub to: String,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance, split half to each end.
    pub b: f64,
    /// Off-nominal tap on the from side.
    pub ratio: f64,
    pub in_service: bool,
}

/// Sixth-order machine parameters, per-unit on the machine base.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineParams {
    pub h: f64,
    pub d: f64,
    pub r: f64,
    pub x_d: f64,
    pub x_q: f64,
    pub x_d_t: f64,
    pub x_q_t: f64,
    pub x_d_st: f64,
    pub x_q_st: f64,
    pub t_d0_t: f64,
    pub t_q0_t: f64,
    pub t_d0_st: f64,
    pub t_q0_st: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorRecord {
    pub name: String,
    pub bus: String,
    /// Machine base in MVA.
    pub s_n: f64,
    /// Active power dispatch, system pu.
    pub p_set: f64,
    /// Terminal voltage setpoint, pu.
    pub v_set: f64,
    pub params: MachineParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadRecord {
    pub name: String,
    pub bus: String,
    /// Consumption at nominal voltage, system pu.
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SexsRecord {
    pub gen: String,
    pub k: f64,
    pub t_a: f64,
    pub t_b: f64,
    pub t_e: f64,
    pub e_min: f64,
    pub e_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tgov1Record {
    pub gen: String,
    pub r_droop: f64,
    pub t_1: f64,
    pub t_2: f64,
    pub t_3: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stab1Record {
    pub gen: String,
    pub k: f64,
    pub t_w: f64,
    pub t_1: f64,
    pub t_2: f64,
    pub t_3: f64,
    pub t_4: f64,
    pub h_lim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemDescription {
    pub base_mva: f64,
    pub f_n: f64,
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
    pub generators: Vec<GeneratorRecord>,
    pub loads: Vec<LoadRecord>,
    pub avrs: Vec<SexsRecord>,
    pub govs: Vec<Tgov1Record>,
    pub psss: Vec<Stab1Record>,
}

impl Default for SystemDescription {
    fn default() -> Self {
        Self {
            base_mva: DEFAULT_BASE_MVA,
            f_n: DEFAULT_FREQUENCY_HZ,
            buses: Vec::new(),
            branches: Vec::new(),
            generators: Vec::new(),
            loads: Vec::new(),
            avrs: Vec::new(),
            govs: Vec::new(),
            psss: Vec::new(),
        }
    }
}

impl SystemDescription {
    pub fn bus_index(&self, name: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.name == name)
    }

    pub fn generator_index(&self, name: &str) -> Option<usize> {
        self.generators.iter().position(|g| g.name == name)
    }

    pub fn branch_index(&self, name: &str) -> Option<usize> {
        self.branches.iter().position(|b| b.name == name)
    }

    pub fn avr_for(&self, gen: &str) -> Option<&SexsRecord> {
        self.avrs.iter().find(|r| r.gen == gen)
    }

    pub fn gov_for(&self, gen: &str) -> Option<&Tgov1Record> {
        self.govs.iter().find(|r| r.gen == gen)
    }

    pub fn pss_for(&self, gen: &str) -> Option<&Stab1Record> {
        self.psss.iter().find(|r| r.gen == gen)
    }

    /// Copy of the system with every control record removed.
    pub fn without_controls(&self) -> Self {
        Self {
            avrs: Vec::new(),
            govs: Vec::new(),
            psss: Vec::new(),
            ..self.clone()
        }
    }
}

/// Converts an impedance from machine base to system base.
pub fn impedance_to_system_base(z_machine: f64, s_n: f64, base_mva: f64) -> f64 {
    z_machine * base_mva / s_n
}

/// Converts an impedance from system base to machine base.
pub fn impedance_to_machine_base(z_system: f64, s_n: f64, base_mva: f64) -> f64 {
    z_system * s_n / base_mva
}
