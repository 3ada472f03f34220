//! Command-line front end. `run` is the whole program; the binary only
//! forwards its arguments and exit code.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::ast::*;
use crate::cfa::{analyze, check_estimate, soundness_audit, AnalysisOptions, EstimateJson};
use crate::parser::{parse_system, SourceSpec};
use crate::policy::{check_actuator_usage, check_all, check_sensor_usage, validate, what_if_comp, ActuatorUsage, SensorUsage};
use crate::pretty::print_program;
use crate::semantics::{explore, run as run_machine, Machine, TraceEvent, DEFAULT_STATE_CAP};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "ilysa", version, about = "Parse, simulate, analyse and check IoT-LySa systems")]
pub struct Cli {
    #[arg(long, value_enum, default_value = "text", global = true)]
    pub format: Format,
    /// Leave the actuator component out of the analysis.
    #[arg(long, global = true)]
    pub strict_paper: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a system, then print it back.
    Parse { file: PathBuf },
    /// Compute the least estimate.
    Analyze {
        file: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Maximum number of distinct abstract values.
        #[arg(long, default_value_t = 100_000)]
        cap: usize,
    },
    /// Run the reduction semantics.
    Simulate {
        file: PathBuf,
        #[arg(long, env = "ILYSA_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Offer the physical-time step to the scheduler.
        #[arg(long)]
        phys: bool,
        /// Explore every interleaving up to --depth instead of one run.
        #[arg(long)]
        exhaustive: bool,
        #[arg(long, default_value_t = 8)]
        depth: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check a trace against an estimate.
    Audit {
        file: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Evaluate the policies of the preamble, or of a JSON policy file.
    Check {
        file: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Re-run the analysis without some compatibility edges.
    Whatif {
        file: PathBuf,
        /// Edge `sender:receiver` to remove; repeatable.
        #[arg(long = "drop-edge", value_name = "L1:L2")]
        drop_edge: Vec<String>,
        /// Remove every edge leaving this node; repeatable.
        #[arg(long = "drop-sender", value_name = "L")]
        drop_sender: Vec<String>,
    },
}

struct Failure(i32, String);

type CmdResult = Result<i32, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure(EXIT_USAGE, msg.into())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<Program, Failure> {
    let text = read(path)?;
    parse_system(&SourceSpec::new(&path.display().to_string(), &text)).map_err(|errs| {
        let lines: Vec<String> = errs.iter().map(|e| format!("{}:{e}", path.display())).collect();
        Failure(EXIT_FAIL, lines.join("\n"))
    })
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => out.write_all(text.as_bytes()).map_err(|e| usage(e.to_string())),
    }
}

fn pretty_json(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).unwrap_or_default();
    s.push('\n');
    s
}

/// Runs the tool. Diagnostics go to `err`, results to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            let _ = writeln!(err, "{msg}");
            code
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> CmdResult {
    let opts = AnalysisOptions { alpha: !cli.strict_paper, ..Default::default() };
    match &cli.command {
        Command::Parse { file } => cmd_parse(cli, file, out),
        Command::Analyze { file, output, cap } => {
            cmd_analyze(cli, file, output.as_deref(), AnalysisOptions { value_cap: *cap, ..opts }, out)
        }
        Command::Simulate { file, seed, steps, phys, exhaustive, depth, output } => {
            let prog = load(file)?;
            let m = Machine::new(&prog).with_phys(*phys);
            let c0 = m.initial();
            let mut text = String::new();
            if *exhaustive {
                let x = explore(&m, &c0, *depth, DEFAULT_STATE_CAP);
                for (src, events, dst) in &x.transitions {
                    text.push_str(&serde_json::to_string(&json!({ "src": src, "dst": dst, "events": events })).unwrap_or_default());
                    text.push('\n');
                }
                emit(out, output.as_deref(), &text)?;
                if output.is_some() || cli.format == Format::Text {
                    let _ = writeln!(
                        out,
                        "states {} transitions {}{}",
                        x.configs.len(),
                        x.transitions.len(),
                        if x.truncated { " (truncated)" } else { "" }
                    );
                }
                return Ok(EXIT_OK);
            }
            let r = run_machine(&m, &c0, *seed, *steps);
            for (k, events) in r.steps.iter().enumerate() {
                for ev in events {
                    let mut v = serde_json::to_value(ev).unwrap_or_default();
                    v["step"] = json!(k);
                    text.push_str(&serde_json::to_string(&v).unwrap_or_default());
                    text.push('\n');
                }
            }
            emit(out, output.as_deref(), &text)?;
            if output.is_some() {
                let reason = serde_json::to_value(&r.reason).unwrap_or_default();
                let _ = writeln!(out, "steps {} stop {}", r.steps.len(), reason.as_str().unwrap_or(""));
            }
            Ok(EXIT_OK)
        }
        Command::Audit { file, estimate, trace } => cmd_audit(cli, file, estimate, trace, opts, out),
        Command::Check { file, policy } => cmd_check(cli, file, policy.as_deref(), opts, out),
        Command::Whatif { file, drop_edge, drop_sender } => {
            let prog = load(file)?;
            let labels = prog.system.labels();
            let known = |s: &str| {
                let l = Label::new(s);
                if labels.contains(&l) {
                    Ok(l)
                } else {
                    Err(usage(format!("unknown node {s}")))
                }
            };
            let mut removed = BTreeSet::new();
            for d in drop_edge {
                let (a, b) = d.split_once(':').ok_or_else(|| usage(format!("expected L1:L2, got {d}")))?;
                removed.insert((known(a)?, known(b)?));
            }
            for s in drop_sender {
                let a = known(s)?;
                removed.extend(labels.iter().filter(|b| **b != a).map(|b| (a.clone(), b.clone())));
            }
            let diff = what_if_comp(&prog, &removed, opts).map_err(|e| Failure(EXIT_FAIL, e.to_string()))?;
            if cli.format == Format::Json {
                emit(out, None, &pretty_json(&diff.to_json()))?;
            } else {
                let mut s = format!("removed {} edge(s)\n", removed.len());
                for m in &diff.lost {
                    s.push_str(&format!("- {m}\n"));
                }
                for m in &diff.gained {
                    s.push_str(&format!("+ {m}\n"));
                }
                if diff.is_empty() {
                    s.push_str("no change\n");
                }
                emit(out, None, &s)?;
            }
            Ok(EXIT_OK)
        }
    }
}

fn cmd_parse(cli: &Cli, file: &Path, out: &mut dyn Write) -> CmdResult {
    let prog = load(file)?;
    if cli.format == Format::Json {
        emit(out, None, &pretty_json(&prog.system))?;
    } else {
        let text = format!(
            "{}// nodes {} size {}\n",
            print_program(&prog),
            prog.system.nodes.len(),
            prog.system.size()
        );
        emit(out, None, &text)?;
    }
    Ok(EXIT_OK)
}

fn cmd_analyze(cli: &Cli, file: &Path, output: Option<&Path>, opts: AnalysisOptions, out: &mut dyn Write) -> CmdResult {
    let prog = load(file)?;
    let e = analyze(&prog, opts).map_err(|e| Failure(EXIT_FAIL, e.to_string()))?;
    if let Err(vs) = check_estimate(&prog.system, &e, &prog.comp, opts) {
        let lines: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
        return Err(Failure(EXIT_FAIL, format!("estimate failed its self-check:\n{}", lines.join("\n"))));
    }
    let est = pretty_json(&EstimateJson::from_estimate(&e, opts.alpha));
    match (output, cli.format) {
        (Some(p), _) => {
            emit(out, Some(p), &est)?;
            emit(out, None, &e.summary(&prog))?;
        }
        (None, Format::Json) => emit(out, None, &est)?,
        (None, Format::Text) => emit(out, None, &e.summary(&prog))?,
    }
    Ok(EXIT_OK)
}

fn read_trace(path: &Path) -> Result<Vec<TraceEvent>, Failure> {
    let text = read(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| usage(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn event_labels(ev: &TraceEvent) -> Vec<&Label> {
    match ev {
        TraceEvent::Sensed { node, .. }
        | TraceEvent::Assigned { node, .. }
        | TraceEvent::Evaluated { node, .. }
        | TraceEvent::ActTriggered { node, .. }
        | TraceEvent::Actuated { node, .. }
        | TraceEvent::CondTaken { node, .. }
        | TraceEvent::Decrypted { node, .. }
        | TraceEvent::Internal { node, .. } => vec![node],
        TraceEvent::MsgSent { from, targets, .. } => std::iter::once(from).chain(targets).collect(),
        TraceEvent::MsgDelivered { from, to, .. } => vec![from, to],
        TraceEvent::Phys => vec![],
    }
}

fn cmd_audit(cli: &Cli, file: &Path, estimate: &Path, trace: &Path, opts: AnalysisOptions, out: &mut dyn Write) -> CmdResult {
    let prog = load(file)?;
    let ej: EstimateJson = serde_json::from_str(&read(estimate)?)
        .map_err(|e| usage(format!("{}: {e}", estimate.display())))?;
    let e = ej.to_estimate().map_err(|m| usage(format!("{}: {m}", estimate.display())))?;
    let events = read_trace(trace)?;
    let labels = prog.system.labels();
    for (i, ev) in events.iter().enumerate() {
        if let Some(l) = event_labels(ev).into_iter().find(|l| !labels.contains(l)) {
            return Err(usage(format!("trace event {i} mentions unknown node {l}")));
        }
    }
    let opts = AnalysisOptions { alpha: opts.alpha && ej.alpha.is_some(), ..opts };
    let res = soundness_audit(&e, &events, opts);
    let cxs = res.as_ref().err().cloned().unwrap_or_default();
    if cli.format == Format::Json {
        emit(out, None, &pretty_json(&json!({ "ok": cxs.is_empty(), "counterexamples": cxs })))?;
    } else if cxs.is_empty() {
        emit(out, None, &format!("ok: {} events covered\n", events.len()))?;
    } else {
        let mut s = String::new();
        for c in &cxs {
            s.push_str(&format!("{c}\n"));
        }
        emit(out, None, &s)?;
    }
    Ok(if cxs.is_empty() { EXIT_OK } else { EXIT_FAIL })
}

fn cmd_check(cli: &Cli, file: &Path, policy: Option<&Path>, opts: AnalysisOptions, out: &mut dyn Write) -> CmdResult {
    let prog = load(file)?;
    let cfg = match policy {
        Some(p) => {
            let text = read(p)?;
            if text.trim().is_empty() {
                PolicyConfig::default()
            } else {
                serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
            }
        }
        None => prog.policy.clone(),
    };
    validate(&prog, &cfg).map_err(|e| usage(e.to_string()))?;
    let e = analyze(&prog, opts).map_err(|e| Failure(EXIT_FAIL, e.to_string()))?;
    let verdicts = check_all(&e, &cfg).map_err(|e| usage(e.to_string()))?;
    let pass = verdicts.iter().all(|v| v.pass);

    let mut actuators = Vec::new();
    let mut sensors = Vec::new();
    for n in &prog.system.nodes {
        if opts.alpha {
            for j in n.actuators() {
                actuators.push((n.label.clone(), j, check_actuator_usage(&e, &n.label, j)));
            }
        }
        for i in n.sensors() {
            sensors.push((n.label.clone(), i, check_sensor_usage(&e, &n.label, i)));
        }
    }

    if cli.format == Format::Json {
        let v = json!({
            "pass": pass,
            "verdicts": verdicts.iter().map(|v| v.to_json()).collect::<Vec<_>>(),
            "actuators": actuators.iter().map(|(l, j, u)| json!({ "node": l, "actuator": j, "usage": u })).collect::<Vec<_>>(),
            "sensors": sensors.iter().map(|(l, i, u)| json!({ "node": l, "sensor": i, "usage": u })).collect::<Vec<_>>(),
        });
        emit(out, None, &pretty_json(&v))?;
    } else {
        let mut s = String::new();
        if verdicts.is_empty() {
            s.push_str("no policy configured: PASS\n");
        }
        for v in &verdicts {
            s.push_str(&v.to_string());
        }
        for (l, j, u) in &actuators {
            match u {
                ActuatorUsage::NeverUsed => s.push_str(&format!("actuator {l}.{j}: never used\n")),
                ActuatorUsage::Fires(gs) => {
                    let gs: Vec<&str> = gs.iter().map(|g| &**g).collect();
                    s.push_str(&format!("actuator {l}.{j}: may fire {{{}}}\n", gs.join(", ")));
                }
            }
        }
        for (l, i, u) in &sensors {
            if *u == SensorUsage::NeverUsed {
                s.push_str(&format!("sensor {l}.{i}: never used\n"));
            }
        }
        emit(out, None, &s)?;
    }
    Ok(if pass { EXIT_OK } else { EXIT_FAIL })
}
