//! Command-line verbs. Exit codes: 0 success, 1 domain error, 2 usage error.
//! Usage errors are detected before any file is opened.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use super::config::{load_config, EngineConfig, SchedulerMode};
use super::engine::{Engine, EngineError};
use super::scenario::{load_scenario, run_scenario};
use crate::model::{RequestId, RequestState, Timestamp};
use crate::receiver::{Envelope, WireEnvelope};
use crate::rules::{parse_rules, RulesError};
use crate::trace::{compute_kpis, export_report, ReportFormat, Store};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "frm", version, about = "Fulfillment request manager")]
struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Engine config file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Run the HTTP service.
    Serve {
        /// Overrides the config's listen_address.
        #[arg(long)]
        listen: Option<SocketAddr>,
    },
    /// Ingest one envelope and run it to completion, deterministically.
    Submit {
        /// Envelope JSON: kind, source, origin, payload, optional idempotency_key.
        #[arg(short = 'f', long = "file")]
        file: PathBuf,
        /// Scheduler seed; defaults to the config's, then 0.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the trace of one request.
    Trace {
        /// Request id.
        id: String,
    },
    /// Export KPIs for a window of receive times (inclusive, epoch millis).
    Report {
        /// First receive time, epoch millis.
        #[arg(long)]
        from: i64,
        /// Last receive time, epoch millis.
        #[arg(long)]
        to: i64,
        /// json or csv.
        #[arg(long, default_value = "json")]
        format: ReportFormat,
    },
    /// Parse and check a rules file.
    ValidateRules {
        /// Rules file.
        file: PathBuf,
    },
    /// Run a scenario on the deterministic scheduler and print the store digest.
    Replay {
        /// Scheduler seed.
        #[arg(long)]
        seed: u64,
        /// Scenario JSON: rules, mappings, adapters and envelopes.
        #[arg(short = 'f', long = "file")]
        file: PathBuf,
    },
}

struct Io<'a> {
    json: bool,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Io<'_> {
    fn fail(&mut self, code: &str, message: &str, exit: i32) -> i32 {
        if self.json {
            let _ = writeln!(
                self.out,
                "{}",
                json!({"error": {"code": code, "message": message}})
            );
        } else {
            let _ = writeln!(self.err, "error [{code}]: {message}");
        }
        exit
    }

    fn engine_error(&mut self, e: &EngineError) -> i32 {
        self.fail(e.code(), &e.to_string(), EXIT_DOMAIN)
    }
}

/// Runs the CLI on `args` (including the program name).
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let mut io = Io {
        json: cli.json,
        out,
        err,
    };
    let needs_config = !matches!(cli.verb, Verb::ValidateRules { .. } | Verb::Replay { .. });
    if needs_config && cli.config.is_none() {
        return io.fail("USAGE", "this verb needs --config <file>", EXIT_USAGE);
    }
    let config = match &cli.config {
        Some(p) if needs_config => match load_config(p) {
            Ok(c) => Some(c),
            Err(e) => {
                let msg = e.diagnostics().join("; ");
                return io.fail(e.code(), &msg, EXIT_DOMAIN);
            }
        },
        _ => None,
    };
    match cli.verb {
        Verb::Serve { listen } => serve(&mut io, config.expect("checked"), listen),
        Verb::Submit { file, seed } => submit(&mut io, config.expect("checked"), &file, seed),
        Verb::Trace { id } => trace(&mut io, &config.expect("checked"), &id),
        Verb::Report { from, to, format } => {
            report(&mut io, &config.expect("checked"), from, to, format)
        }
        Verb::ValidateRules { file } => validate_rules(&mut io, &file),
        Verb::Replay { seed, file } => replay(&mut io, seed, &file),
    }
}

fn serve(io: &mut Io, cfg: EngineConfig, listen: Option<SocketAddr>) -> i32 {
    let addr = match listen {
        Some(a) => a,
        None => match cfg.listen_address.parse::<SocketAddr>() {
            Ok(a) => a,
            Err(e) => {
                return io.fail(
                    "CONFIG_INVALID",
                    &format!("listen_address: {e}"),
                    EXIT_DOMAIN,
                )
            }
        },
    };
    let engine = match Engine::from_config(&cfg) {
        Ok((e, _)) => Arc::new(e),
        Err(e) => return io.engine_error(&e),
    };
    let rt = match tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
    {
        Ok(rt) => rt,
        Err(e) => return io.fail("IO_ERROR", &e.to_string(), EXIT_DOMAIN),
    };
    let _ = writeln!(io.err, "listening on {addr}");
    let result = rt.block_on(super::http::serve(engine.clone(), addr));
    if let Err(e) = engine.write_snapshot() {
        return io.engine_error(&e);
    }
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => io.fail("IO_ERROR", &e.to_string(), EXIT_DOMAIN),
    }
}

fn read_envelope(path: &Path) -> Result<Envelope, EngineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EngineError::Input(format!("{}: {e}", path.display())))?;
    let wire: WireEnvelope = serde_json::from_str(&text)
        .map_err(|e| EngineError::Input(format!("{}: {e}", path.display())))?;
    Ok(Envelope::try_from(wire)?)
}

fn submit(io: &mut Io, mut cfg: EngineConfig, file: &Path, seed: Option<u64>) -> i32 {
    cfg.scheduler = SchedulerMode::Deterministic;
    cfg.scheduler_seed = Some(seed.or(cfg.scheduler_seed).unwrap_or(0));
    let result = read_envelope(file).and_then(|env| {
        let (engine, _) = Engine::from_config(&cfg)?;
        let done = engine.submit(&env)?;
        engine.write_snapshot()?;
        Ok(done)
    });
    let (id, outcome) = match result {
        Ok(r) => r,
        Err(e) => return io.engine_error(&e),
    };
    if io.json {
        let outcome: Value =
            serde_json::from_str(&outcome.to_canonical_json()).expect("outcome is json");
        let _ = writeln!(io.out, "{}", json!({"id": id, "outcome": outcome}));
    } else {
        let _ = writeln!(io.out, "{id} {}", outcome.final_state.as_str());
        let _ = writeln!(io.out, "{}", outcome.to_canonical_json());
    }
    if outcome.final_state == RequestState::Fulfilled {
        EXIT_OK
    } else {
        EXIT_DOMAIN
    }
}

fn open_store(cfg: &EngineConfig) -> Result<Store, (String, String)> {
    let Some(log) = &cfg.log_path else {
        return Err((
            "NO_LOG".into(),
            "config has no log_path; nothing persisted to query".into(),
        ));
    };
    if !log.exists() {
        return Err(("NO_LOG".into(), format!("{} does not exist", log.display())));
    }
    Store::open(log, cfg.snapshot_path.as_deref(), false)
        .map(|(s, _)| s)
        .map_err(|e| (e.code().to_string(), e.to_string()))
}

fn trace(io: &mut Io, cfg: &EngineConfig, id: &str) -> i32 {
    let store = match open_store(cfg) {
        Ok(s) => s,
        Err((code, msg)) => return io.fail(&code, &msg, EXIT_DOMAIN),
    };
    let events = match store.get_trace(&RequestId::new(id)) {
        Ok(ev) => ev,
        Err(e) => return io.fail(e.code(), &e.to_string(), EXIT_DOMAIN),
    };
    if io.json {
        let _ = writeln!(
            io.out,
            "{}",
            serde_json::to_string(&events).expect("events serialize")
        );
    } else {
        for e in &events {
            let _ = writeln!(
                io.out,
                "{:>4} {} {:<10} {:<13} {}",
                e.seq,
                e.at.millis(),
                e.actor.to_string(),
                e.kind.as_str(),
                e.detail
            );
        }
    }
    EXIT_OK
}

fn report(io: &mut Io, cfg: &EngineConfig, from: i64, to: i64, format: ReportFormat) -> i32 {
    let store = match open_store(cfg) {
        Ok(s) => s,
        Err((code, msg)) => return io.fail(&code, &msg, EXIT_DOMAIN),
    };
    let format = if io.json { ReportFormat::Json } else { format };
    let body = export_report(
        &compute_kpis(&store, Timestamp(from), Timestamp(to)),
        format,
    );
    let _ = io.out.write_all(&body);
    let _ = writeln!(io.out);
    EXIT_OK
}

fn validate_rules(io: &mut Io, file: &Path) -> i32 {
    let text = match std::fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => return io.fail("IO_ERROR", &format!("{}: {e}", file.display()), EXIT_DOMAIN),
    };
    let name = file.display();
    match parse_rules(&text) {
        Ok(rules) => {
            if io.json {
                let _ = writeln!(
                    io.out,
                    "{}",
                    json!({"ok": true, "workflows": rules.workflows().len(), "version": rules.version()})
                );
            } else {
                let _ = writeln!(
                    io.out,
                    "{name}: ok, {} workflow(s), version {}",
                    rules.workflows().len(),
                    rules.version()
                );
            }
            EXIT_OK
        }
        Err(e) => {
            let (line, col, message) = match &e {
                RulesError::Syntax(s) => (
                    Some(s.line),
                    Some(s.col),
                    format!("expected {}, found {}", s.expected.join(" or "), s.found),
                ),
                RulesError::Semantic(s) => {
                    let message = match &s.workflow {
                        Some(wf) => format!("workflow {wf:?}: {}", s.message),
                        None => s.message.clone(),
                    };
                    (s.line, None, message)
                }
                other => (None, None, other.to_string()),
            };
            if io.json {
                let _ = writeln!(
                    io.out,
                    "{}",
                    json!({"ok": false, "error": {"code": e.code(), "line": line, "col": col, "message": message}})
                );
            } else {
                let at = match (line, col) {
                    (Some(l), Some(c)) => format!("{name}:{l}:{c}"),
                    (Some(l), None) => format!("{name}:{l}"),
                    _ => name.to_string(),
                };
                let _ = writeln!(io.err, "{at}: {}: {message}", e.code());
            }
            EXIT_DOMAIN
        }
    }
}

fn replay(io: &mut Io, seed: u64, file: &Path) -> i32 {
    let run = match load_scenario(file).and_then(|s| run_scenario(&s, seed)) {
        Ok(r) => r,
        Err(e) => return io.engine_error(&e),
    };
    if io.json {
        let requests: Vec<Value> = run
            .requests
            .iter()
            .map(|(id, st)| json!({"id": id, "state": st}))
            .collect();
        let _ = writeln!(
            io.out,
            "{}",
            json!({"digest": run.digest, "requests": requests})
        );
    } else {
        let _ = writeln!(io.out, "{}", run.digest);
    }
    EXIT_OK
}
