use std::collections::{HashMap, HashSet};
use std::fmt;

use super::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    /// Record identity such as `generator G1`.
    pub record: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {}: {}", self.record, self.message)
    }
}

struct Collector(Vec<Diagnostic>);

impl Collector {
    fn error(&mut self, record: impl Into<String>, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity: Severity::Error,
            record: record.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, record: impl Into<String>, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity: Severity::Warning,
            record: record.into(),
            message: message.into(),
        });
    }

    fn positive(&mut self, record: &str, field: &str, v: f64) {
        if !(v > 0.0 && v.is_finite()) {
            self.error(record, format!("{field} must be positive, got {v}"));
        }
    }

    fn ordered(&mut self, record: &str, lo: (&str, f64), hi: (&str, f64)) {
        if !(lo.1 < hi.1) {
            self.error(
                record,
                format!("{} ({}) must be below {} ({})", lo.0, lo.1, hi.0, hi.1),
            );
        }
    }
}

fn duplicates<'a>(names: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen = HashSet::new();
    let mut dup = Vec::new();
    for n in names {
        if !seen.insert(n) && !dup.contains(&n) {
            dup.push(n);
        }
    }
    dup
}

/// Checks every structural and parameter invariant of a system description.
///
/// Returns an empty vector iff the description is valid. Warnings are only
/// emitted for conditions that are legal but probably unintended.
pub fn validate(sys: &SystemDescription) -> Vec<Diagnostic> {
    let mut c = Collector(Vec::new());
    c.positive("base", "base_mva", sys.base_mva);
    c.positive("base", "f_n", sys.f_n);

    for d in duplicates(sys.buses.iter().map(|b| b.name.as_str())) {
        c.error(format!("bus {d}"), "duplicate bus name");
    }
    for d in duplicates(sys.branches.iter().map(|b| b.name.as_str())) {
        c.error(format!("branch {d}"), "duplicate branch name");
    }
    for d in duplicates(sys.generators.iter().map(|g| g.name.as_str())) {
        c.error(format!("generator {d}"), "duplicate generator name");
    }
    for d in duplicates(sys.loads.iter().map(|l| l.name.as_str())) {
        c.error(format!("load {d}"), "duplicate load name");
    }

    let buses: HashSet<&str> = sys.buses.iter().map(|b| b.name.as_str()).collect();
    for b in &sys.buses {
        c.positive(&format!("bus {}", b.name), "v_n", b.v_n);
    }
    let slack_count = sys.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
    if slack_count != 1 {
        c.error(
            "system",
            format!("exactly one slack bus is required, found {slack_count}"),
        );
    }

    for br in &sys.branches {
        let rec = format!("branch {}", br.name);
        for end in [&br.from, &br.to] {
            if !buses.contains(end.as_str()) {
                c.error(&rec, format!("references unknown bus '{end}'"));
            }
        }
        if br.from == br.to {
            c.error(&rec, "from and to bus are identical");
        }
        if br.r == 0.0 && br.x == 0.0 {
            c.error(&rec, "zero-impedance branch (r = x = 0)");
        }
        c.positive(&rec, "ratio", br.ratio);
    }

    let mut gens_on_bus: HashMap<&str, usize> = HashMap::new();
    for g in &sys.generators {
        let rec = format!("generator {}", g.name);
        if !buses.contains(g.bus.as_str()) {
            c.error(&rec, format!("references unknown bus '{}'", g.bus));
        } else {
            *gens_on_bus.entry(g.bus.as_str()).or_default() += 1;
            if let Some(b) = sys.buses.iter().find(|b| b.name == g.bus) {
                if b.kind == BusKind::PQ {
                    c.warn(&rec, format!("connected to PQ bus '{}'", g.bus));
                }
            }
        }
        c.positive(&rec, "S_n", g.s_n);
        c.positive(&rec, "V", g.v_set);
        let p = &g.params;
        c.positive(&rec, "H", p.h);
        if p.r < 0.0 {
            c.error(&rec, format!("R must be non-negative, got {}", p.r));
        }
        if p.d < 0.0 {
            c.error(&rec, format!("D must be non-negative, got {}", p.d));
        }
        if !(p.x_d >= p.x_d_t && p.x_d_t >= p.x_d_st && p.x_d_st > 0.0) {
            c.error(&rec, "require X_d >= X_d' >= X_d'' > 0");
        }
        if !(p.x_q >= p.x_q_t && p.x_q_t >= p.x_q_st && p.x_q_st > 0.0) {
            c.error(&rec, "require X_q >= X_q' >= X_q'' > 0");
        }
        if (p.x_d_st - p.x_q_st).abs() > 1e-12 * p.x_d_st.abs().max(1.0) {
            c.error(
                &rec,
                format!(
                    "subtransient saliency is not supported: X_d'' ({}) must equal X_q'' ({})",
                    p.x_d_st, p.x_q_st
                ),
            );
        }
        for (field, v) in [
            ("T_d0'", p.t_d0_t),
            ("T_q0'", p.t_q0_t),
            ("T_d0''", p.t_d0_st),
            ("T_q0''", p.t_q0_st),
        ] {
            c.positive(&rec, field, v);
        }
    }
    for (bus, n) in gens_on_bus {
        if n > 1 {
            c.error(
                format!("bus {bus}"),
                format!("{n} generators share the bus; at most one is supported"),
            );
        }
    }

    for l in &sys.loads {
        if !buses.contains(l.bus.as_str()) {
            c.error(
                format!("load {}", l.name),
                format!("references unknown bus '{}'", l.bus),
            );
        }
    }

    let gens: HashSet<&str> = sys.generators.iter().map(|g| g.name.as_str()).collect();
    let check_gen = |c: &mut Collector, rec: &str, gen: &str| {
        if !gens.contains(gen) {
            c.error(rec, format!("references unknown generator '{gen}'"));
        }
    };
    for d in duplicates(sys.avrs.iter().map(|a| a.gen.as_str())) {
        c.error(format!("avr {d}"), "more than one AVR on the generator");
    }
    for d in duplicates(sys.govs.iter().map(|a| a.gen.as_str())) {
        c.error(format!("gov {d}"), "more than one governor on the generator");
    }
    for d in duplicates(sys.psss.iter().map(|a| a.gen.as_str())) {
        c.error(format!("pss {d}"), "more than one PSS on the generator");
    }
    for a in &sys.avrs {
        let rec = format!("avr {}", a.gen);
        check_gen(&mut c, &rec, &a.gen);
        c.positive(&rec, "T_b", a.t_b);
        c.positive(&rec, "T_e", a.t_e);
        if a.t_a < 0.0 {
            c.error(&rec, "T_a must be non-negative");
        }
        c.ordered(&rec, ("E_min", a.e_min), ("E_max", a.e_max));
    }
    for g in &sys.govs {
        let rec = format!("gov {}", g.gen);
        check_gen(&mut c, &rec, &g.gen);
        c.positive(&rec, "R", g.r_droop);
        c.positive(&rec, "T_1", g.t_1);
        c.positive(&rec, "T_3", g.t_3);
        if g.t_2 < 0.0 {
            c.error(&rec, "T_2 must be non-negative");
        }
        c.ordered(&rec, ("V_min", g.v_min), ("V_max", g.v_max));
    }
    for p in &sys.psss {
        let rec = format!("pss {}", p.gen);
        check_gen(&mut c, &rec, &p.gen);
        c.positive(&rec, "T_w", p.t_w);
        c.positive(&rec, "T_2", p.t_2);
        c.positive(&rec, "T_4", p.t_4);
        if p.t_1 < 0.0 || p.t_3 < 0.0 {
            c.error(&rec, "numerator time constants must be non-negative");
        }
        c.positive(&rec, "H_lim", p.h_lim);
    }

    check_connectivity(sys, &mut c);
    c.0
}

/// Every bus must reach the slack bus through in-service branches.
fn check_connectivity(sys: &SystemDescription, c: &mut Collector) {
    let Some(slack) = sys.buses.iter().position(|b| b.kind == BusKind::Slack) else {
        return;
    };
    let n = sys.buses.len();
    let mut adj = vec![Vec::new(); n];
    for br in sys.branches.iter().filter(|b| b.in_service) {
        if let (Some(f), Some(t)) = (sys.bus_index(&br.from), sys.bus_index(&br.to)) {
            adj[f].push(t);
            adj[t].push(f);
        }
    }
    let mut seen = vec![false; n];
    let mut stack = vec![slack];
    seen[slack] = true;
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    for (i, b) in sys.buses.iter().enumerate() {
        if !seen[i] {
            c.error(format!("bus {}", b.name), "not connected to the slack bus");
        }
    }
}
