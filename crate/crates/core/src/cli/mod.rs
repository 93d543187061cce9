//! `rmsim` command-line front end.
//!
//! Exit codes: 0 success, 1 domain error (invalid model, power flow or
//! simulation failure), 2 usage or file error.

mod manifest;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

pub use manifest::{sha256_hex, ConfigEcho, OutputRecord, RunManifest};

use crate::engine::{
    parse_event_file, run_batch, ChannelSelection, LinearDevice, Method, OdeSystem, Simulation,
    SimulationConfig, StateVector,
};
use crate::modal::{linearize, mode_report_csv, mode_report_text};
use crate::model_io::{read_model, validate, ModelError, Severity};
use crate::network::{solve_power_flow, PowerFlowOptions};
use crate::realtime::{command_queue, run_realtime, RealtimeConfig, SnapshotHub, WsServer};

pub const ENV_MODEL: &str = "RMSIM_MODEL_PATH";

#[derive(Debug, Parser)]
#[command(name = "rmsim", version, about = "Dynamic RMS power-system simulator")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Check a model file and print diagnostics.
    Validate {
        #[arg(env = ENV_MODEL)]
        model: PathBuf,
    },
    /// Batch time-domain simulation to CSV.
    Run(RunArgs),
    /// Linearize at the operating point and list the modes.
    Modal(ModalArgs),
    /// Real-time session over WebSocket.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct SimArgs {
    /// Integration step, s.
    #[arg(long, default_value_t = 0.005)]
    dt: f64,
    /// euler, modified_euler, rk4 or adaptive.
    #[arg(long, default_value = "modified_euler", value_parser = parse_method)]
    method: Method,
    /// Corrector passes for modified_euler.
    #[arg(long, default_value_t = 1)]
    corrector_iters: usize,
    /// Keep this bus in the reduced network (repeatable).
    #[arg(long = "keep-bus", value_name = "BUS")]
    keep_bus: Vec<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(env = ENV_MODEL)]
    model: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    t_end: f64,
    #[command(flatten)]
    sim: SimArgs,
    /// Event file: one `t kind target [value [imag]]` per line.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Trajectory CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Manifest path; defaults to `<out>.manifest.json` when --out is given.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Record every n-th step.
    #[arg(long, default_value_t = 1)]
    decimation: usize,
    /// Also record retained-bus voltage magnitude and angle.
    #[arg(long)]
    bus_voltages: bool,
}

#[derive(Debug, Args)]
struct ModalArgs {
    #[arg(env = ENV_MODEL, required_unless_present = "synthetic_diag")]
    model: Option<PathBuf>,
    /// Mode table CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "keep-bus", value_name = "BUS")]
    keep_bus: Vec<String>,
    /// Diagnostic: analyse a synthetic diagonal system instead of a model.
    #[arg(long, hide = true, value_delimiter = ',', allow_negative_numbers = true)]
    synthetic_diag: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(env = ENV_MODEL)]
    model: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[command(flatten)]
    sim: SimArgs,
    /// Simulated seconds per wall second, within [0.01, 10].
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Stop at this simulation time instead of waiting for an interrupt.
    #[arg(long)]
    t_end: Option<f64>,
    /// Write the applied command log as an event file on shutdown.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Write per-step timing records as JSON on shutdown.
    #[arg(long)]
    timing: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method '{s}' (euler, modified_euler, rk4, adaptive)"))
}

#[derive(Debug)]
pub enum CliError {
    /// Usage or file problem: exit 2.
    File(String),
    /// Failure in a pipeline stage: exit 1.
    Stage { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::File(_) => 2,
            CliError::Stage { .. } => 1,
        }
    }

    fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        CliError::Stage { stage, message: e.to_string() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::File(m) => write!(f, "error: {m}"),
            CliError::Stage { stage, message } => write!(f, "error [{stage}]: {message}"),
        }
    }
}

fn config_from(sim: &SimArgs, t_end: f64) -> Result<SimulationConfig, CliError> {
    let c = SimulationConfig {
        method: sim.method,
        dt: sim.dt,
        corrector_iters: sim.corrector_iters,
        t_end,
        keep_buses: sim.keep_bus.clone(),
        ..SimulationConfig::default()
    };
    c.check().map_err(|e| CliError::File(e.to_string()))?;
    Ok(c)
}

/// Parse, validate, solve the power flow, assemble and initialize.
pub fn load_system(path: &Path, config: &SimulationConfig) -> Result<(OdeSystem, StateVector), CliError> {
    let sys = read_model(path).map_err(|e| match e {
        ModelError::Io { .. } => CliError::File(e.to_string()),
        other => CliError::stage("parse", other),
    })?;
    let diags = validate(&sys);
    for d in &diags {
        log::warn!("{d}");
    }
    if let Some(d) = diags.iter().find(|d| d.severity == Severity::Error) {
        return Err(CliError::stage("validate", d));
    }
    let pf = solve_power_flow(&sys, &PowerFlowOptions::default()).map_err(|e| CliError::stage("power flow", e))?;
    let mut ode = OdeSystem::build(&sys, &pf, config).map_err(|e| CliError::stage("build", e))?;
    let x0 = ode.initialize(&pf).map_err(|e| CliError::stage("initialize", e))?;
    Ok((ode, x0))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::File(format!("cannot write {}: {e}", path.display())))
}

fn cmd_validate(model: &Path) -> Result<i32, CliError> {
    let sys = read_model(model).map_err(|e| match e {
        ModelError::Io { .. } => CliError::File(e.to_string()),
        other => CliError::stage("parse", other),
    })?;
    let diags = validate(&sys);
    for d in &diags {
        eprintln!("{d}");
    }
    if diags.is_empty() {
        println!(
            "{}: ok ({} buses, {} branches, {} generators, {} loads)",
            model.display(),
            sys.buses.len(),
            sys.branches.len(),
            sys.generators.len(),
            sys.loads.len()
        );
        Ok(0)
    } else {
        eprintln!("{}: {} diagnostic(s)", model.display(), diags.len());
        Ok(1)
    }
}

fn cmd_run(a: &RunArgs) -> Result<i32, CliError> {
    let started = Instant::now();
    let config = config_from(&a.sim, a.t_end)?;
    let model_bytes =
        fs::read(&a.model).map_err(|e| CliError::File(format!("cannot read model file {}: {e}", a.model.display())))?;
    let (events, events_bytes) = match &a.events {
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| CliError::File(format!("cannot read event file {}: {e}", p.display())))?;
            (parse_event_file(p).map_err(|e| CliError::stage("events", e))?, Some(bytes))
        }
        None => (Vec::new(), None),
    };
    let (ode, x0) = load_system(&a.model, &config)?;
    let channels = ChannelSelection {
        states: true,
        machine_signals: true,
        bus_voltages: a.bus_voltages,
        decimation: a.decimation.max(1),
    };
    let res = run_batch(ode, &x0, &config, &events, &channels).map_err(|e| CliError::stage("simulate", e))?;
    for w in &res.warnings {
        eprintln!("warning: {w}");
    }
    let csv = res.trajectory.to_csv_string();
    let echo = ConfigEcho::new(&config, &channels);
    let mut outputs = Vec::new();
    match &a.out {
        Some(p) => {
            write_file(p, csv.as_bytes())?;
            outputs.push(OutputRecord { path: p.display().to_string(), sha256: sha256_hex(csv.as_bytes()) });
            eprintln!("wrote {} rows x {} columns to {}", res.trajectory.len(), res.trajectory.columns.len(), p.display());
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(csv.as_bytes()).map_err(|e| CliError::File(e.to_string()))?;
        }
    }
    let manifest_path = a.manifest.clone().or_else(|| a.out.as_ref().map(|p| PathBuf::from(format!("{}.manifest.json", p.display()))));
    if let Some(mp) = manifest_path {
        let m = RunManifest::new(
            &a.model,
            &model_bytes,
            a.events.as_deref(),
            events_bytes.as_deref(),
            &events,
            echo,
            outputs,
            started.elapsed().as_secs_f64(),
        );
        write_file(&mp, m.to_json().as_bytes())?;
    }
    Ok(0)
}

fn cmd_modal(a: &ModalArgs) -> Result<i32, CliError> {
    let (ode, x0) = match (&a.synthetic_diag, &a.model) {
        (Some(d), _) => {
            let ode = OdeSystem::from_aux(vec![Arc::new(LinearDevice::diagonal("diag", d))], 50.0)
                .map_err(|e| CliError::stage("build", e))?;
            let x0 = ode.aux_state();
            (ode, x0)
        }
        (None, Some(m)) => {
            let config = SimulationConfig { keep_buses: a.keep_bus.clone(), ..SimulationConfig::default() };
            load_system(m, &config)?
        }
        (None, None) => return Err(CliError::File("a model path is required".into())),
    };
    let lin = linearize(&ode, &x0).map_err(|e| CliError::stage("modal", e))?;
    print!("{}", mode_report_text(&lin));
    let zero = lin.zero_modes().count();
    let osc = lin.modes.iter().filter(|m| m.is_oscillatory() && !m.is_zero).count();
    let em = lin.modes.iter().filter(|m| m.is_electromechanical()).count();
    println!("{} states, {osc} oscillatory pairs ({em} electromechanical), {zero} zero mode(s)", x0.len());
    if let Some(m) = lin.least_damped(0.0) {
        println!("least damped: {:.4} Hz, zeta = {:.4} ({})", m.freq_hz, m.damping_ratio, m.dominant_state);
    }
    if let Some(p) = &a.out {
        write_file(p, mode_report_csv(&lin).as_bytes())?;
    }
    Ok(0)
}

fn cmd_serve(a: &ServeArgs) -> Result<i32, CliError> {
    let config = config_from(&a.sim, a.t_end.unwrap_or(f64::INFINITY))?;
    let (ode, x0) = load_system(&a.model, &config)?;
    let sim = Simulation::new(ode, x0, &config).map_err(|e| CliError::stage("build", e))?;
    let stop = Arc::new(AtomicBool::new(false));
    {
        let s = stop.clone();
        if let Err(e) = ctrlc::set_handler(move || s.store(true, Ordering::Relaxed)) {
            log::warn!("no interrupt handler: {e}");
        }
    }
    let (tx, rx) = command_queue();
    let hub = SnapshotHub::new();
    let addr = format!("{}:{}", a.host, a.port);
    let server = WsServer::bind(&addr, tx.clone(), hub.clone(), stop.clone())
        .map_err(|e| CliError::File(format!("cannot listen on {addr}: {e}")))?;
    println!("listening on ws://{}", server.local_addr());
    let _ = std::io::stdout().flush();
    let rt = RealtimeConfig { speed: a.speed, t_end: a.t_end, ..RealtimeConfig::default() };
    let outcome = run_realtime(sim, &rt, &rx, &hub, &stop).map_err(|e| CliError::stage("serve", e));
    stop.store(true, Ordering::Relaxed);
    hub.close();
    // Give client threads a moment to flush their last messages.
    std::thread::sleep(Duration::from_millis(20));
    server.shutdown();
    let outcome = outcome?;
    println!("{}", outcome.stats.summary());
    if let Some(p) = &a.record {
        let lines: String = outcome.simulation.log().iter().map(|l| l.event.to_line() + "\n").collect();
        write_file(p, lines.as_bytes())?;
    }
    if let Some(p) = &a.timing {
        let json = serde_json::to_string(&outcome.stats).map_err(|e| CliError::File(e.to_string()))?;
        write_file(p, json.as_bytes())?;
    }
    if let Some(e) = outcome.diverged {
        return Err(CliError::stage("serve", e));
    }
    Ok(0)
}

/// Runs the CLI on the given arguments and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let res = match &cli.cmd {
        Cmd::Validate { model } => cmd_validate(model),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Modal(a) => cmd_modal(a),
        Cmd::Serve(a) => cmd_serve(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn main_entry() -> i32 {
    run(std::env::args_os())
}
