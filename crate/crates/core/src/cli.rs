//! Command-line front end. `run` returns the process exit code so the binary
//! and tests share one entry point.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{parse_override, KernelConfig};
use crate::harness::{load_set, run_pass_at_k};
use crate::memory::{compact_store, MemoryStore};
use crate::replay::replay;
use crate::runtime::run_task;
use crate::scenario::Scenario;
use crate::trace::Trace;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUN_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_NOT_FOUND: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "orchestrator",
    version,
    about = "Deterministic agent-orchestration kernel",
    after_help = "Any config field can be set with a flag of its dotted name, e.g. --ledger.tau_max=5000."
)]
struct Cli {
    /// Config file (JSON). Defaults apply to every missing field.
    #[arg(long, global = true, env = "LEMON_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write its trace.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// JSONL trace output path.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Re-execute a trace from its recorded replies and compare.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Inspect or compact a memory store file.
    Memory {
        #[command(subcommand)]
        action: MemoryAction,
    },
    /// pass@k over a scenario set.
    Report {
        #[arg(long)]
        set: PathBuf,
        #[arg(long)]
        attempts: Option<u32>,
        #[arg(long)]
        processes: Option<usize>,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
enum MemoryAction {
    /// One line per entry: id, kind, confidence, skill text.
    List {
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Print one entry as JSON.
    Show {
        id: String,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Re-run every entry through the write gate in file order and keep the survivors.
    Compact {
        #[arg(long)]
        store: Option<PathBuf>,
    },
}

type Overrides = Vec<(String, String)>;

/// Pull `--a.b=v` / `--a.b v` config overrides out of the argument list.
fn split_overrides(args: Vec<OsString>) -> Result<(Vec<OsString>, Overrides), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(s) = arg.to_str().and_then(|s| s.strip_prefix("--")) else {
            rest.push(arg);
            continue;
        };
        let name = s.split('=').next().unwrap_or("");
        if !name.contains('.') {
            rest.push(arg);
            continue;
        }
        let pair = if s.contains('=') {
            s.to_string()
        } else {
            let value =
                it.next().and_then(|v| v.into_string().ok()).ok_or_else(|| format!("--{name} needs a value"))?;
            format!("{name}={value}")
        };
        overrides.push(parse_override(&pair).map_err(|e| e.to_string())?);
    }
    Ok((rest, overrides))
}

struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl ToString) -> Failure {
    Failure { code, message: message.to_string() }
}

fn store_path(flag: Option<PathBuf>, config: &KernelConfig) -> Result<PathBuf, Failure> {
    flag.or_else(|| config.memory.store_path.clone())
        .ok_or_else(|| fail(EXIT_USAGE, "no store given: pass --store or set memory.store_path"))
}

fn open_store(config: &KernelConfig) -> Result<MemoryStore, Failure> {
    match &config.memory.store_path {
        Some(p) => {
            MemoryStore::open(p, config.memory.clone()).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", p.display())))
        }
        None => Ok(MemoryStore::in_memory(config.memory.clone())),
    }
}

fn open_existing_store(path: &Path, config: &KernelConfig) -> Result<MemoryStore, Failure> {
    if !path.exists() {
        return Err(fail(EXIT_NOT_FOUND, format!("{}: no such store", path.display())));
    }
    let cfg = crate::memory::MemoryConfig { store_path: None, ..config.memory.clone() };
    MemoryStore::open(path, cfg).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())))
}

fn write_trace(trace: &Trace, path: &Path) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| fail(EXIT_RUN_FAILED, format!("{}: {e}", path.display())))?;
    trace.write_jsonl(BufWriter::new(file)).map_err(|e| fail(EXIT_RUN_FAILED, format!("{}: {e}", path.display())))
}

fn cmd_run(
    base: KernelConfig,
    overrides: &[(String, String)],
    scenario: &Path,
    seed: Option<u64>,
    trace_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let scenario = Scenario::load(scenario).map_err(|e| fail(EXIT_USAGE, e))?;
    let mut config = match &scenario.config {
        Some(overlay) => base.with_overlay(overlay).map_err(|e| fail(EXIT_USAGE, e))?,
        None => base,
    };
    config = config.with_overrides(overrides).map_err(|e| fail(EXIT_USAGE, e))?;
    if let Some(s) = seed {
        config.runtime.seed = s;
    }
    let store = open_store(&config)?;
    scenario.seed_memory(&store).map_err(|e| fail(EXIT_USAGE, e))?;
    let registry = scenario.registry(&config.gateway.backoff).map_err(|e| fail(EXIT_USAGE, e))?;
    let backend = scenario.backend();
    let (trace, result) = match run_task(&scenario.task, &config, &backend, &registry, &store) {
        Ok(o) => (o.trace, Ok(o.answer)),
        Err(f) => (f.trace, Err(f.error)),
    };
    if let Some(p) = trace_path {
        write_trace(&trace, p)?;
    }
    match result {
        Ok(answer) => {
            let text = serde_json::to_string_pretty(&answer).expect("answer serializes");
            writeln!(out, "{text}").map_err(|e| fail(EXIT_RUN_FAILED, e))?;
            Ok(EXIT_OK)
        }
        Err(e) => Err(fail(EXIT_RUN_FAILED, format!("run failed: {e}"))),
    }
}

fn cmd_replay(path: &Path, out: &mut dyn Write) -> Result<i32, Failure> {
    let file = File::open(path).map_err(|e| fail(EXIT_NOT_FOUND, format!("{}: {e}", path.display())))?;
    let trace =
        Trace::read_jsonl(BufReader::new(file)).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())))?;
    let report = replay(&trace).map_err(|e| fail(EXIT_USAGE, e))?;
    match report.divergence {
        None => {
            writeln!(out, "replay ok: {} events identical", report.events).map_err(|e| fail(EXIT_RUN_FAILED, e))?;
            Ok(EXIT_OK)
        }
        Some(d) => Err(fail(
            EXIT_DIVERGED,
            format!(
                "divergence at event {}\n  recorded:    {}\n  regenerated: {}",
                d.index,
                d.expected.as_deref().unwrap_or("<none>"),
                d.actual.as_deref().unwrap_or("<none>")
            ),
        )),
    }
}

fn cmd_memory(config: &KernelConfig, action: MemoryAction, out: &mut dyn Write) -> Result<i32, Failure> {
    let io = |e: std::io::Error| fail(EXIT_RUN_FAILED, e);
    match action {
        MemoryAction::List { store } => {
            let path = store_path(store, config)?;
            let store = open_existing_store(&path, config)?;
            for e in store.snapshot() {
                let text: String = e.skill_text.chars().take(72).collect();
                let kind = serde_json::to_value(e.kind).expect("kind serializes");
                writeln!(out, "{}\t{}\t{:.2}\t{}", e.entry_id, kind.as_str().unwrap_or("?"), e.confidence, text)
                    .map_err(io)?;
            }
            Ok(EXIT_OK)
        }
        MemoryAction::Show { id, store } => {
            let path = store_path(store, config)?;
            let store = open_existing_store(&path, config)?;
            let entry = store.get(&id).ok_or_else(|| fail(EXIT_NOT_FOUND, format!("no entry `{id}`")))?;
            let mut v = serde_json::to_value(entry).expect("entry serializes");
            if let Some(obj) = v.as_object_mut() {
                obj.remove("embedding");
            }
            writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("value serializes")).map_err(io)?;
            Ok(EXIT_OK)
        }
        MemoryAction::Compact { store } => {
            let path = store_path(store, config)?;
            if !path.exists() {
                return Err(fail(EXIT_NOT_FOUND, format!("{}: no such store", path.display())));
            }
            let report = compact_store(&path, &config.memory).map_err(|e| fail(EXIT_USAGE, e))?;
            writeln!(out, "compacted: {} -> {} entries", report.before, report.after).map_err(io)?;
            Ok(EXIT_OK)
        }
    }
}

fn cmd_report(
    config: &KernelConfig,
    set: &Path,
    attempts: Option<u32>,
    processes: Option<usize>,
    json: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, Failure> {
    let scenarios = load_set(set).map_err(|e| fail(EXIT_USAGE, e))?;
    let attempts = attempts.unwrap_or(config.harness.attempts);
    let processes = processes.unwrap_or(config.harness.processes);
    if attempts == 0 || processes == 0 {
        return Err(fail(EXIT_USAGE, "--attempts and --processes must be at least 1"));
    }
    let store = open_store(config)?;
    let report = run_pass_at_k(&scenarios, config, &store, attempts, processes);
    let io = |e: std::io::Error| fail(EXIT_RUN_FAILED, e);
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("report serializes")).map_err(io)?;
    } else {
        write!(out, "{}", report.render_table()).map_err(io)?;
    }
    writeln!(err, "max tasks in flight: {} (limit {processes})", report.max_in_flight).map_err(io)?;
    Ok(EXIT_OK)
}

/// Parse `args` (including the program name) and execute.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let (args, overrides) = match split_overrides(args) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if code == EXIT_OK { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    let result = (|| {
        // the scenario overlay sits between the file and the flags, so `run`
        // applies overrides itself
        let file_config = KernelConfig::load(cli.config.as_deref(), &[]).map_err(|e| fail(EXIT_USAGE, e))?;
        match cli.command {
            Command::Run { scenario, seed, trace } => {
                cmd_run(file_config, &overrides, &scenario, seed, trace.as_deref(), out)
            }
            command => {
                let config = file_config.with_overrides(&overrides).map_err(|e| fail(EXIT_USAGE, e))?;
                match command {
                    Command::Replay { trace } => cmd_replay(&trace, out),
                    Command::Memory { action } => cmd_memory(&config, action, out),
                    Command::Report { set, attempts, processes, json } => {
                        cmd_report(&config, &set, attempts, processes, json, out, err)
                    }
                    Command::Run { .. } => unreachable!("handled above"),
                }
            }
        }
    })();
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
