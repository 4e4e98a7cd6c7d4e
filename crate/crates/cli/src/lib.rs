//! Command-line front end: `codegen`, `tune` and `run` over a generated
//! `OAT/` directory. Both the `oat` and `OATCodeGen` binaries land here.

use anyhow::Context as _;
use clap::{Parser, Subcommand, ValueEnum};
use oat_core::kernel::MeasureMode;
use oat_core::orchestrator::codegen::{codegen, load_manifest, CodegenFlags, OUTPUT_DIR};
use oat_core::orchestrator::{OrchError, Options, Session};
use oat_core::params::{ParamValue, Stage, KIND_ALL, KIND_DYNAMIC, KIND_INSTALL, KIND_STATIC};
use oat_core::search::format_point;
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "oat", version, about = "Directive-driven auto-tuning: code generation and a tuning driver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    #[value(name = "ON", alias = "on")]
    On,
    #[value(name = "OFF", alias = "off")]
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Install,
    Static,
    Dynamic,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Deterministic,
    Wall,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the OAT/ directory from an annotated source file.
    Codegen {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "OFF")]
        debug: Switch,
        #[arg(long, value_enum, default_value = "OFF")]
        visualization: Switch,
        /// Output directory.
        #[arg(long, default_value = OUTPUT_DIR)]
        out: PathBuf,
    },
    /// Run one tuning stage (or all three) over a generated directory.
    Tune {
        dir: PathBuf,
        #[arg(value_enum)]
        stage: StageArg,
        #[arg(long, value_enum, default_value = "deterministic")]
        mode: ModeArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Execute the directive script, invoking armed run-time regions.
    Run {
        dir: PathBuf,
        #[arg(long, value_enum, default_value = "deterministic")]
        mode: ModeArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Run-time values, NAME=VALUE.
        #[arg(long = "set", value_parser = parse_binding)]
        set: Vec<(String, ParamValue)>,
    },
}

fn parse_binding(s: &str) -> Result<(String, ParamValue), String> {
    let (k, v) = s.split_once('=').ok_or("expected NAME=VALUE")?;
    let v = v.trim();
    let pv = v
        .parse::<i64>()
        .map(ParamValue::Int)
        .or_else(|_| v.parse::<f64>().map(ParamValue::Real))
        .map_err(|_| format!("`{v}` is not a number"))?;
    Ok((k.trim().to_string(), pv))
}

const SUBCOMMANDS: [&str; 5] = ["codegen", "tune", "run", "help", "--help"];

/// Accept the single-dash `-debug ON` / `-visualization ON` spellings and
/// the bare `OATCodeGen file.f` form.
pub fn normalize_args(args: Vec<OsString>) -> Vec<OsString> {
    let mut out: Vec<OsString> = Vec::with_capacity(args.len() + 1);
    for (i, a) in args.into_iter().enumerate() {
        let s = a.to_string_lossy().to_string();
        if i == 1 && !SUBCOMMANDS.contains(&s.as_str()) && !s.starts_with('-') {
            out.push("codegen".into());
        }
        match s.as_str() {
            "-debug" => out.push("--debug".into()),
            "-visualization" => out.push("--visualization".into()),
            _ => out.push(a),
        }
    }
    out
}

fn mode(m: ModeArg) -> MeasureMode {
    match m {
        ModeArg::Deterministic => MeasureMode::Deterministic,
        ModeArg::Wall => MeasureMode::Wall,
    }
}

fn env_debug() -> Option<i64> {
    let v = std::env::var("OAT_DEBUG").ok()?;
    match v.trim().to_ascii_uppercase().as_str() {
        "ON" => Some(1),
        "OFF" => Some(0),
        t => t.parse().ok(),
    }
}

fn open(dir: &PathBuf, m: ModeArg, seed: u64) -> Result<Session, OrchError> {
    let manifest = load_manifest(dir)?;
    let opts = Options {
        mode: mode(m),
        visualization: manifest.visualization,
        debug: manifest.debug as i64,
        debug_env: env_debug(),
        seed,
        persist: true,
    };
    Session::new(manifest.tree, dir, opts)
}

fn print_report(s: &Session, out: &mut dyn Write) -> std::io::Result<()> {
    for e in &s.report.entries {
        let ctx: Vec<String> = e.context.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let cost = e.cost.map(|c| format!(" cost={c}")).unwrap_or_default();
        writeln!(
            out,
            "{} {}{}{} {} evaluations={}{}",
            e.stage.keyword(),
            e.region,
            if ctx.is_empty() { "" } else { " " },
            ctx.join(" "),
            format_point(&e.assignment),
            e.evaluations,
            cost
        )?;
    }
    for (r, why) in &s.report.skipped {
        writeln!(out, "skipped {r}: {why}")?;
    }
    Ok(())
}

fn flush_log(s: &mut Session) {
    for l in s.log.drain(..) {
        eprintln!("{l}");
    }
}

fn execute(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    match cli.command {
        Command::Codegen { input, debug, visualization, out: dir } => {
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let name = input.file_name().map(|f| f.to_string_lossy().to_string()).unwrap_or_default();
            let flags = CodegenFlags { debug: debug.on(), visualization: visualization.on() };
            let summary = codegen(&name, &text, flags, &dir).map_err(|e| match e {
                e @ OrchError::Directive(_) => anyhow::Error::new(Located { file: input.display().to_string(), err: e }),
                other => anyhow::Error::new(other),
            })?;
            for (f, n) in summary.files.iter().zip(&summary.added) {
                writeln!(out, "{} (+{n})", f.display())?;
            }
        }
        Command::Tune { dir, stage, mode: m, seed } => {
            let mut s = open(&dir, m, seed)?;
            s.run_script(true)?;
            let kind = match stage {
                StageArg::Install => KIND_INSTALL,
                StageArg::Static => KIND_STATIC,
                StageArg::Dynamic => KIND_DYNAMIC,
                StageArg::All => KIND_ALL,
            };
            let r = s.at_exec(kind, "OAT_AllRoutines").map(|_| ());
            flush_log(&mut s);
            r.with_context(|| format!("{stage:?} stage").to_lowercase())?;
            print_report(&s, out)?;
            if matches!(stage, StageArg::Dynamic | StageArg::All) {
                for a in &s.armed {
                    writeln!(out, "armed {a}")?;
                }
            }
        }
        Command::Run { dir, mode: m, seed, set } => {
            let mut s = open(&dir, m, seed)?;
            let r = s.run_script(false);
            flush_log(&mut s);
            r?;
            let runtime: BTreeMap<String, ParamValue> = set.into_iter().collect();
            let done: Vec<String> =
                s.report.entries.iter().filter(|e| e.stage == Stage::Dynamic).map(|e| e.region.clone()).collect();
            for n in s.registry.dynamic.clone() {
                if s.armed.contains(&n) && !done.contains(&n) {
                    s.run_dynamic_region(&n, &runtime)?;
                }
            }
            flush_log(&mut s);
            print_report(&s, out)?;
        }
    }
    Ok(())
}

/// A directive error prefixed with its file, printed as `file:line: msg`.
#[derive(Debug)]
struct Located {
    file: String,
    err: OrchError,
}

impl std::fmt::Display for Located {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.file, self.err)
    }
}

impl std::error::Error for Located {}

/// Exit status of an error: the orchestrator's code when there is one.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    e.chain()
        .find_map(|c| c.downcast_ref::<OrchError>().or_else(|| c.downcast_ref::<Located>().map(|l| &l.err)))
        .map_or(5, OrchError::exit_code)
}

/// Parse `args` and run; returns the process exit status.
pub fn run(args: Vec<OsString>, out: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(normalize_args(args)) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
