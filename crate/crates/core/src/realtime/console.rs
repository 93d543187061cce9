//! Console mini-language:
//!
//! ```text
//! get <path>                 G1.avr.K, G1.V_ref, G1.avr.active, L7-8.status
//! set <path> <value>
//! trip <line> | close <line>
//! fault <bus> [duration_s]   fault_off is scheduled when a duration is given
//! y add <i> <j> <re> <im>    additive change to one admittance entry
//! ```
//!
//! Mutations become ordinary events so they are logged and replayable.

use crate::engine::{Event, EventKind, Simulation};

#[derive(Debug, Clone, PartialEq)]
pub enum ConsoleCommand {
    Get(String),
    /// Events to apply now, plus an optional event scheduled later.
    Mutate { now: Event, later: Option<Event> },
}

fn number(tok: &str) -> Result<f64, String> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("type mismatch: expected a number, got '{tok}'"))
}

/// Maps `set <path> <value>` onto an event kind.
fn set_event(path: &str, value: f64) -> Result<Event, String> {
    let parts: Vec<&str> = path.split('.').collect();
    match parts.as_slice() {
        [line, s] if s.eq_ignore_ascii_case("status") => {
            let kind = if value != 0.0 { EventKind::LineClose } else { EventKind::LineTrip };
            Ok(Event::new(0.0, kind, *line))
        }
        [g, ctl, a] if a.eq_ignore_ascii_case("active") => {
            Ok(Event::new(0.0, EventKind::ControlToggle, format!("{g}.{ctl}")).with_value(value))
        }
        [_, _] => Ok(Event::new(0.0, EventKind::SetpointChange, path).with_value(value)),
        [_, _, _] => Ok(Event::new(0.0, EventKind::ParamChange, path).with_value(value)),
        _ => Err(format!("unknown path '{path}'")),
    }
}

pub fn parse_console(text: &str) -> Result<ConsoleCommand, String> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    let arity = |n: usize, usage: &str| {
        if toks.len() == n {
            Ok(())
        } else {
            Err(format!("parse error: usage '{usage}'"))
        }
    };
    let now = |ev: Event| ConsoleCommand::Mutate { now: ev, later: None };
    match toks.first().copied() {
        Some("get") => {
            arity(2, "get <path>")?;
            Ok(ConsoleCommand::Get(toks[1].to_owned()))
        }
        Some("set") => {
            arity(3, "set <path> <value>")?;
            Ok(now(set_event(toks[1], number(toks[2])?)?))
        }
        Some("trip") => {
            arity(2, "trip <line>")?;
            Ok(now(Event::line_trip(0.0, toks[1])))
        }
        Some("close") => {
            arity(2, "close <line>")?;
            Ok(now(Event::line_close(0.0, toks[1])))
        }
        Some("fault") => {
            if !(2..=3).contains(&toks.len()) {
                return Err("parse error: usage 'fault <bus> [duration_s]'".into());
            }
            let later = match toks.get(2) {
                Some(d) => {
                    let d = number(d)?;
                    if d <= 0.0 {
                        return Err(format!("fault duration must be positive, got {d}"));
                    }
                    Some(Event::fault_off(d, toks[1]))
                }
                None => None,
            };
            Ok(ConsoleCommand::Mutate { now: Event::fault_on(0.0, toks[1]), later })
        }
        Some("y") => {
            arity(6, "y add <i> <j> <re> <im>")?;
            if toks[1] != "add" {
                return Err(format!("parse error: unknown 'y {}'", toks[1]));
            }
            let mut ev = Event::new(0.0, EventKind::AdmittanceDelta, format!("{},{}", toks[2], toks[3]));
            ev.value = Some(number(toks[4])?);
            ev.imag = Some(number(toks[5])?);
            Ok(now(ev))
        }
        Some(other) => Err(format!("parse error: unknown command '{other}'")),
        None => Err("parse error: empty command".into()),
    }
}

/// Runs one console line against the simulation. Returns the text shown to
/// the user; errors leave the simulation unchanged.
pub fn console_eval(sim: &mut Simulation, text: &str) -> Result<String, String> {
    match parse_console(text)? {
        ConsoleCommand::Get(path) => {
            let v = sim.system().get_value(&path).map_err(|e| e.to_string())?;
            Ok(format!("{path} = {v}"))
        }
        ConsoleCommand::Mutate { now, later } => {
            let receipt = sim.apply(&now).map_err(|e| e.to_string())?;
            let mut out = receipt.warning.unwrap_or_else(|| "ok".to_owned());
            if let Some(mut ev) = later {
                if receipt.inverse.is_some() {
                    ev.t += sim.time();
                    sim.schedule(ev.clone());
                    out = format!("ok; {} {} scheduled at t = {:.6} s", ev.kind.as_str(), ev.target, ev.t);
                }
            }
            Ok(out)
        }
    }
}
