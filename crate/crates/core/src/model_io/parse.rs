use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::*;

struct Table {
    name: String,
    line: usize,
    header_line: usize,
    header: Vec<String>,
    rows: Vec<Row>,
}

struct Row {
    line: usize,
    values: Vec<String>,
}

fn tokens(line: &str) -> Vec<String> {
    line.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

fn split_tables(text: &str) -> Result<Vec<Table>, ModelError> {
    let mut tables: Vec<Table> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| ModelError::Syntax {
                line,
                message: format!("unterminated table header '{content}'"),
            })?;
            let name = name.trim().to_ascii_lowercase();
            if name.is_empty() {
                return Err(ModelError::Syntax {
                    line,
                    message: "empty table name".into(),
                });
            }
            if tables.iter().any(|t| t.name == name) {
                return Err(ModelError::Syntax {
                    line,
                    message: format!("table [{name}] appears twice"),
                });
            }
            tables.push(Table {
                name,
                line,
                header_line: line,
                header: Vec::new(),
                rows: Vec::new(),
            });
            continue;
        }
        let table = tables.last_mut().ok_or_else(|| ModelError::Syntax {
            line,
            message: "data before the first table header".into(),
        })?;
        let toks = tokens(content);
        if table.header.is_empty() {
            table.header = toks;
            table.header_line = line;
        } else {
            if toks.len() != table.header.len() {
                return Err(ModelError::Syntax {
                    line,
                    message: format!(
                        "expected {} values for table [{}], found {}",
                        table.header.len(),
                        table.name,
                        toks.len()
                    ),
                });
            }
            table.rows.push(Row { line, values: toks });
        }
    }
    Ok(tables)
}

/// Column accessor for one table, resolving names against the header row.
struct Columns<'a> {
    table: &'a Table,
}

impl<'a> Columns<'a> {
    fn index(&self, field: &str) -> Option<usize> {
        self.table
            .header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(field))
    }

    fn require(&self, fields: &[&str]) -> Result<(), ModelError> {
        for f in fields {
            if self.index(f).is_none() {
                return Err(ModelError::MissingField {
                    line: self.table.header_line,
                    table: self.table.name.clone(),
                    field: (*f).to_owned(),
                });
            }
        }
        Ok(())
    }

    fn text(&self, row: &'a Row, field: &str) -> Option<&'a str> {
        self.index(field).map(|i| row.values[i].as_str())
    }

    fn name(&self, row: &'a Row, field: &str) -> Result<String, ModelError> {
        self.text(row, field)
            .map(str::to_owned)
            .ok_or_else(|| ModelError::MissingField {
                line: row.line,
                table: self.table.name.clone(),
                field: field.to_owned(),
            })
    }

    fn number(&self, row: &Row, field: &str) -> Result<f64, ModelError> {
        match self.optional(row, field)? {
            Some(v) => Ok(v),
            None => Err(ModelError::MissingField {
                line: row.line,
                table: self.table.name.clone(),
                field: field.to_owned(),
            }),
        }
    }

    fn optional(&self, row: &Row, field: &str) -> Result<Option<f64>, ModelError> {
        let Some(i) = self.index(field) else {
            return Ok(None);
        };
        let raw = &row.values[i];
        raw.parse::<f64>()
            .map(Some)
            .map_err(|_| ModelError::Syntax {
                line: row.line,
                message: format!("field '{field}' expects a number, found '{raw}'"),
            })
    }

    fn or(&self, row: &Row, field: &str, default: f64) -> Result<f64, ModelError> {
        Ok(self.optional(row, field)?.unwrap_or(default))
    }
}

fn check_unique(
    seen: &mut HashSet<String>,
    kind: &'static str,
    name: &str,
    line: usize,
) -> Result<(), ModelError> {
    if !seen.insert(name.to_owned()) {
        return Err(ModelError::Duplicate {
            line,
            kind,
            name: name.to_owned(),
        });
    }
    Ok(())
}

fn check_ref(
    known: &HashSet<String>,
    kind: &'static str,
    name: &str,
    line: usize,
) -> Result<(), ModelError> {
    if !known.contains(name) {
        return Err(ModelError::UnknownReference {
            line,
            kind,
            name: name.to_owned(),
        });
    }
    Ok(())
}

const KNOWN_TABLES: &[&str] = &[
    "base",
    "buses",
    "branches",
    "generators",
    "loads",
    "avr_sexs",
    "gov_tgov1",
    "pss_stab1",
];

/// Parses model-file text into a [`SystemDescription`].
///
/// Structural problems (syntax, missing columns, duplicate names, dangling
/// references) are errors. Parameter-range problems are left to
/// [`validate`](super::validate).
pub fn parse_model(text: &str) -> Result<SystemDescription, ModelError> {
    let tables = split_tables(text)?;
    for t in &tables {
        if !KNOWN_TABLES.contains(&t.name.as_str()) {
            return Err(ModelError::Syntax {
                line: t.line,
                message: format!("unknown table [{}]", t.name),
            });
        }
    }
    let find = |name: &str| tables.iter().find(|t| t.name == name);
    let mut sys = SystemDescription::default();

    if let Some(t) = find("base") {
        let c = Columns { table: t };
        match t.rows.as_slice() {
            [] => {}
            [row] => {
                sys.base_mva = c.or(row, "base_mva", DEFAULT_BASE_MVA)?;
                sys.f_n = c.or(row, "f_n", DEFAULT_FREQUENCY_HZ)?;
            }
            [_, extra, ..] => {
                return Err(ModelError::Syntax {
                    line: extra.line,
                    message: "table [base] takes a single row".into(),
                })
            }
        }
    }

    let buses = find("buses").ok_or(ModelError::MissingTable("buses"))?;
    let c = Columns { table: buses };
    c.require(&["name", "v_n", "type"])?;
    let mut bus_names = HashSet::new();
    for row in &buses.rows {
        let name = c.name(row, "name")?;
        check_unique(&mut bus_names, "bus", &name, row.line)?;
        let kind_raw = c.name(row, "type")?;
        let kind = BusKind::parse(&kind_raw).ok_or_else(|| ModelError::Syntax {
            line: row.line,
            message: format!("bus type must be slack, PV or PQ, found '{kind_raw}'"),
        })?;
        sys.buses.push(BusRecord {
            name,
            v_n: c.number(row, "v_n")?,
            kind,
        });
    }

    // The branch and generator tables are required but may be empty.
    let branches = find("branches").ok_or(ModelError::MissingTable("branches"))?;
    if !branches.header.is_empty() {
        let c = Columns { table: branches };
        c.require(&["name", "from", "to", "r", "x"])?;
        let mut names = HashSet::new();
        for row in &branches.rows {
            let name = c.name(row, "name")?;
            check_unique(&mut names, "branch", &name, row.line)?;
            let from = c.name(row, "from")?;
            let to = c.name(row, "to")?;
            check_ref(&bus_names, "bus", &from, row.line)?;
            check_ref(&bus_names, "bus", &to, row.line)?;
            let in_service = match c.text(row, "status") {
                None => true,
                Some(s) => match s.to_ascii_lowercase().as_str() {
                    "in" | "1" | "on" => true,
                    "out" | "0" | "off" => false,
                    _ => {
                        return Err(ModelError::Syntax {
                            line: row.line,
                            message: format!("branch status must be in or out, found '{s}'"),
                        })
                    }
                },
            };
            sys.branches.push(BranchRecord {
                name,
                from,
                to,
                r: c.number(row, "r")?,
                x: c.number(row, "x")?,
                b: c.or(row, "b", 0.0)?,
                ratio: c.or(row, "ratio", 1.0)?,
                in_service,
            });
        }
    }

    let generators = find("generators").ok_or(ModelError::MissingTable("generators"))?;
    let mut gen_names = HashSet::new();
    if !generators.header.is_empty() {
        let c = Columns { table: generators };
        c.require(&[
            "name", "bus", "S_n", "P", "H", "X_d", "X_q", "X_d_t", "X_q_t", "X_d_st", "X_q_st",
            "T_d0_t", "T_q0_t", "T_d0_st", "T_q0_st",
        ])?;
        for row in &generators.rows {
            let name = c.name(row, "name")?;
            check_unique(&mut gen_names, "generator", &name, row.line)?;
            let bus = c.name(row, "bus")?;
            check_ref(&bus_names, "bus", &bus, row.line)?;
            sys.generators.push(GeneratorRecord {
                name,
                bus,
                s_n: c.number(row, "S_n")?,
                p_set: c.number(row, "P")?,
                v_set: c.or(row, "V", 1.0)?,
                params: MachineParams {
                    h: c.number(row, "H")?,
                    d: c.or(row, "D", 0.0)?,
                    r: c.or(row, "R", 0.0)?,
                    x_d: c.number(row, "X_d")?,
                    x_q: c.number(row, "X_q")?,
                    x_d_t: c.number(row, "X_d_t")?,
                    x_q_t: c.number(row, "X_q_t")?,
                    x_d_st: c.number(row, "X_d_st")?,
                    x_q_st: c.number(row, "X_q_st")?,
                    t_d0_t: c.number(row, "T_d0_t")?,
                    t_q0_t: c.number(row, "T_q0_t")?,
                    t_d0_st: c.number(row, "T_d0_st")?,
                    t_q0_st: c.number(row, "T_q0_st")?,
                },
            });
        }
    }

    if let Some(t) = find("loads").filter(|t| !t.header.is_empty()) {
        let c = Columns { table: t };
        c.require(&["name", "bus", "P", "Q"])?;
        let mut names = HashSet::new();
        for row in &t.rows {
            let name = c.name(row, "name")?;
            check_unique(&mut names, "load", &name, row.line)?;
            let bus = c.name(row, "bus")?;
            check_ref(&bus_names, "bus", &bus, row.line)?;
            sys.loads.push(LoadRecord {
                name,
                bus,
                p: c.number(row, "P")?,
                q: c.number(row, "Q")?,
            });
        }
    }

    let control_gen = |c: &Columns, row: &Row, seen: &mut HashSet<String>, kind| {
        let gen = c.name(row, "gen")?;
        check_ref(&gen_names, "generator", &gen, row.line)?;
        check_unique(seen, kind, &gen, row.line)?;
        Ok::<_, ModelError>(gen)
    };

    if let Some(t) = find("avr_sexs").filter(|t| !t.header.is_empty()) {
        let c = Columns { table: t };
        c.require(&["gen", "K", "T_a", "T_b", "T_e", "E_min", "E_max"])?;
        let mut seen = HashSet::new();
        for row in &t.rows {
            let gen = control_gen(&c, row, &mut seen, "AVR for generator")?;
            sys.avrs.push(SexsRecord {
                gen,
                k: c.number(row, "K")?,
                t_a: c.number(row, "T_a")?,
                t_b: c.number(row, "T_b")?,
                t_e: c.number(row, "T_e")?,
                e_min: c.number(row, "E_min")?,
                e_max: c.number(row, "E_max")?,
            });
        }
    }

    if let Some(t) = find("gov_tgov1").filter(|t| !t.header.is_empty()) {
        let c = Columns { table: t };
        c.require(&["gen", "R", "T_1", "T_2", "T_3", "V_min", "V_max"])?;
        let mut seen = HashSet::new();
        for row in &t.rows {
            let gen = control_gen(&c, row, &mut seen, "governor for generator")?;
            sys.govs.push(Tgov1Record {
                gen,
                r_droop: c.number(row, "R")?,
                t_1: c.number(row, "T_1")?,
                t_2: c.number(row, "T_2")?,
                t_3: c.number(row, "T_3")?,
                v_min: c.number(row, "V_min")?,
                v_max: c.number(row, "V_max")?,
            });
        }
    }

    if let Some(t) = find("pss_stab1").filter(|t| !t.header.is_empty()) {
        let c = Columns { table: t };
        c.require(&["gen", "K", "T_w", "T_1", "T_2", "T_3", "T_4", "H_lim"])?;
        let mut seen = HashSet::new();
        for row in &t.rows {
            let gen = control_gen(&c, row, &mut seen, "PSS for generator")?;
            sys.psss.push(Stab1Record {
                gen,
                k: c.number(row, "K")?,
                t_w: c.number(row, "T_w")?,
                t_1: c.number(row, "T_1")?,
                t_2: c.number(row, "T_2")?,
                t_3: c.number(row, "T_3")?,
                t_4: c.number(row, "T_4")?,
                h_lim: c.number(row, "H_lim")?,
            });
        }
    }

    Ok(sys)
}

/// Reads and parses a model file from disk.
pub fn read_model(path: impl AsRef<Path>) -> Result<SystemDescription, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_model(&text)
}

fn write_table(out: &mut String, name: &str, header: &[&str], rows: Vec<Vec<String>>) {
    let _ = writeln!(out, "[{name}]");
    let _ = writeln!(out, "{}", header.join(" "));
    for row in rows {
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out.push('\n');
}

fn num(v: f64) -> String {
    // Display for f64 is the shortest representation that round-trips.
    format!("{v}")
}

/// Writes the canonical text form of a system description.
pub fn serialize_model(sys: &SystemDescription) -> String {
    let mut out = String::new();
    write_table(
        &mut out,
        "base",
        &["base_mva", "f_n"],
        vec![vec![num(sys.base_mva), num(sys.f_n)]],
    );
    write_table(
        &mut out,
        "buses",
        &["name", "v_n", "type"],
        sys.buses
            .iter()
            .map(|b| vec![b.name.clone(), num(b.v_n), b.kind.as_str().to_owned()])
            .collect(),
    );
    write_table(
        &mut out,
        "branches",
        &["name", "from", "to", "r", "x", "b", "ratio", "status"],
        sys.branches
            .iter()
            .map(|b| {
                vec![
                    b.name.clone(),
                    b.from.clone(),
                    b.to.clone(),
                    num(b.r),
                    num(b.x),
                    num(b.b),
                    num(b.ratio),
                    if b.in_service { "in" } else { "out" }.to_owned(),
                ]
            })
            .collect(),
    );
    write_table(
        &mut out,
        "generators",
        &[
            "name", "bus", "S_n", "P", "V", "H", "D", "R", "X_d", "X_q", "X_d_t", "X_q_t",
            "X_d_st", "X_q_st", "T_d0_t", "T_q0_t", "T_d0_st", "T_q0_st",
        ],
        sys.generators
            .iter()
            .map(|g| {
                let p = &g.params;
                let mut row = vec![g.name.clone(), g.bus.clone()];
                row.extend(
                    [
                        g.s_n, g.p_set, g.v_set, p.h, p.d, p.r, p.x_d, p.x_q, p.x_d_t, p.x_q_t,
                        p.x_d_st, p.x_q_st, p.t_d0_t, p.t_q0_t, p.t_d0_st, p.t_q0_st,
                    ]
                    .map(num),
                );
                row
            })
            .collect(),
    );
    write_table(
        &mut out,
        "loads",
        &["name", "bus", "P", "Q"],
        sys.loads
            .iter()
            .map(|l| vec![l.name.clone(), l.bus.clone(), num(l.p), num(l.q)])
            .collect(),
    );
    write_table(
        &mut out,
        "avr_sexs",
        &["gen", "K", "T_a", "T_b", "T_e", "E_min", "E_max"],
        sys.avrs
            .iter()
            .map(|a| {
                let mut row = vec![a.gen.clone()];
                row.extend([a.k, a.t_a, a.t_b, a.t_e, a.e_min, a.e_max].map(num));
                row
            })
            .collect(),
    );
    write_table(
        &mut out,
        "gov_tgov1",
        &["gen", "R", "T_1", "T_2", "T_3", "V_min", "V_max"],
        sys.govs
            .iter()
            .map(|g| {
                let mut row = vec![g.gen.clone()];
                row.extend([g.r_droop, g.t_1, g.t_2, g.t_3, g.v_min, g.v_max].map(num));
                row
            })
            .collect(),
    );
    write_table(
        &mut out,
        "pss_stab1",
        &["gen", "K", "T_w", "T_1", "T_2", "T_3", "T_4", "H_lim"],
        sys.psss
            .iter()
            .map(|p| {
                let mut row = vec![p.gen.clone()];
                row.extend([p.k, p.t_w, p.t_1, p.t_2, p.t_3, p.t_4, p.h_lim].map(num));
                row
            })
            .collect(),
    );
    out
}
