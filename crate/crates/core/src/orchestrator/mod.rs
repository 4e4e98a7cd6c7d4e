//! The three-stage tuning pipeline: routine registry, the `OAT_*` calls,
//! per-stage search over basic-parameter contexts, run-time selection and
//! trace output.

pub mod codegen;
pub mod eval;
mod trace;

pub use trace::{emit_trace, next_seq, record_count, TraceRecord, TRACE_FILE, TRACE_HEADER};

use crate::directive::{
    resolve_parameters, According, CallArg, Criterion, DebugItem, DirectiveError, Feature, ParamAttr, Payload, Region,
    RegionTree, SubRegionKind,
};
use crate::fitting::{eval_cost_expression, evaluate_according, FitError};
use crate::kernel::{eval_expr, execute, ExecEnv, Ident, KernelError, KernelProgram, MeasureMode, Value};
use crate::params::{
    self, check_stage_access, detect_collision, enforce_order, param_file_name, read_param_file, write_param_file,
    BasicParamDef, Collision, Node, ParamError, ParamTree, ParamValue, Stage, StageState, STATE_FILE,
};
use crate::search::{
    build_space, composed_search, count_evaluations, fitted_evaluations, fitted_search, SearchError, SearchResult,
    SearchSpace,
};
use crate::transform::{select_pp, Assignment, TransformError};
use eval::{build, split_prepost, RegionEvaluator};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrchError {
    #[error(transparent)]
    Directive(#[from] DirectiveError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("unknown routine or routine list `{0}`")]
    UnknownRoutine(String),
    #[error("region `{0}` was never tuned or armed")]
    NotTuned(String),
    #[error("region `{region}`: {msg}")]
    Region { region: String, msg: String },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{0}")]
    Call(String),
}

impl OrchError {
    /// Process exit status: 2 parse, 3 validation, 4 stage order or missing
    /// basic parameters, 5 anything at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            OrchError::Directive(DirectiveError::Syntax { .. })
            | OrchError::Directive(DirectiveError::Kernel(KernelError::Syntax { .. }))
            | OrchError::Param(ParamError::Parse { .. }) => 2,
            OrchError::Directive(_) => 3,
            OrchError::Param(ParamError::Order(_) | ParamError::NoBp(_)) => 4,
            _ => 5,
        }
    }

    fn region(region: &str, msg: impl Into<String>) -> Self {
        OrchError::Region { region: region.to_string(), msg: msg.into() }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> OrchError {
    OrchError::Io { path: path.display().to_string(), msg: e.to_string() }
}

/// The `OAT_*Routines` lists.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoutineList {
    All,
    Install,
    Static,
    Dynamic,
}

impl RoutineList {
    pub fn lookup(name: &str) -> Option<RoutineList> {
        match name.to_ascii_lowercase().as_str() {
            "oat_allroutines" => Some(RoutineList::All),
            "oat_installroutines" | "oat_instllroutines" => Some(RoutineList::Install),
            "oat_staticroutines" => Some(RoutineList::Static),
            "oat_dynamicroutines" => Some(RoutineList::Dynamic),
            _ => None,
        }
    }

    fn of(stage: Stage) -> RoutineList {
        match stage {
            Stage::Install => RoutineList::Install,
            Stage::Static => RoutineList::Static,
            Stage::Dynamic => RoutineList::Dynamic,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Registry {
    pub all: Vec<String>,
    pub install: Vec<String>,
    pub static_: Vec<String>,
    pub dynamic: Vec<String>,
    pub install_done: BTreeSet<String>,
}

impl Registry {
    /// Outermost regions by stage; nested regions are tuned with their
    /// outer region.
    pub fn from_tree(tree: &RegionTree) -> Registry {
        let mut r = Registry::default();
        for region in &tree.regions {
            r.all.push(region.name.clone());
            if let Some(stage) = region.at_type.stage() {
                r.list_mut(RoutineList::of(stage)).push(region.name.clone());
            }
        }
        r
    }

    pub fn list(&self, l: RoutineList) -> &Vec<String> {
        match l {
            RoutineList::All => &self.all,
            RoutineList::Install => &self.install,
            RoutineList::Static => &self.static_,
            RoutineList::Dynamic => &self.dynamic,
        }
    }

    pub fn list_mut(&mut self, l: RoutineList) -> &mut Vec<String> {
        match l {
            RoutineList::All => &mut self.all,
            RoutineList::Install => &mut self.install,
            RoutineList::Static => &mut self.static_,
            RoutineList::Dynamic => &mut self.dynamic,
        }
    }

    pub fn at_set(&mut self, stage: Stage, name: &str, tree: &RegionTree) -> Result<(), OrchError> {
        let region = tree.find(name).ok_or_else(|| OrchError::UnknownRoutine(name.to_string()))?;
        for l in [RoutineList::of(stage), RoutineList::All] {
            let list = self.list_mut(l);
            if !list.iter().any(|n| n.eq_ignore_ascii_case(name)) {
                list.push(region.name.clone());
            }
        }
        Ok(())
    }

    /// Remove `name` from a list; false when it was not there.
    pub fn at_del(&mut self, l: RoutineList, name: &str) -> bool {
        let lists = match l {
            RoutineList::All => vec![RoutineList::All, RoutineList::Install, RoutineList::Static, RoutineList::Dynamic],
            other => vec![other],
        };
        let mut hit = false;
        for l in lists {
            let list = self.list_mut(l);
            let before = list.len();
            list.retain(|n| !n.eq_ignore_ascii_case(name));
            hit |= list.len() != before;
        }
        hit
    }

    pub fn install_init(&mut self, l: RoutineList) {
        let names = self.list(l).clone();
        self.install_done.retain(|d| !names.iter().any(|n| n.eq_ignore_ascii_case(d)));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Options {
    pub mode: MeasureMode,
    pub visualization: bool,
    pub debug: i64,
    /// Debug level forced from the environment, over both the flag and
    /// `OAT_DEBUG` in the script.
    pub debug_env: Option<i64>,
    pub seed: u64,
    /// Write state, parameter and trace files into the session directory.
    pub persist: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options { mode: MeasureMode::Deterministic, visualization: false, debug: 0, debug_env: None, seed: 1, persist: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionReport {
    pub region: String,
    pub stage: Stage,
    pub context: Vec<(String, i64)>,
    pub assignment: Assignment,
    pub cost: Option<f64>,
    pub evaluations: usize,
    pub collisions: Vec<Collision>,
    pub mode: MeasureMode,
    pub history: Vec<(Assignment, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TuningReport {
    pub entries: Vec<RegionReport>,
    /// Regions passed over, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl TuningReport {
    pub fn evaluations(&self) -> usize {
        self.entries.iter().map(|e| e.evaluations).sum()
    }

    pub fn for_region<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a RegionReport> + 'a {
        self.entries.iter().filter(move |e| e.region.eq_ignore_ascii_case(name))
    }
}

/// One basic-parameter axis of the static contexts.
#[derive(Clone, Debug, PartialEq)]
pub struct BpAxis {
    /// Context key in the parameter file: `OAT_PROBSIZE` or the BP's name.
    pub key: String,
    /// Kernel scalars bound to the axis value.
    pub names: Vec<Ident>,
    pub values: Vec<i64>,
}

pub type Context = Vec<(String, i64)>;

/// What a region's search will do in one context.
pub struct Plan {
    pub spaces: Vec<SearchSpace>,
    pub forced: Assignment,
    pub collisions: Vec<Collision>,
    /// Select by executing every branch and applying the criterion.
    pub criterion: Option<Criterion>,
    pub fitted: bool,
}

pub struct Session {
    pub tree: RegionTree,
    pub dir: PathBuf,
    pub opts: Options,
    pub state: StageState,
    pub registry: Registry,
    pub bps: Vec<BasicParamDef>,
    /// Values of non-reserved names assigned by directives.
    pub vars: BTreeMap<String, ParamValue>,
    pub outputs: BTreeMap<(Stage, String), ParamTree>,
    pub armed: BTreeSet<String>,
    pub report: TuningReport,
    pub trace: Vec<TraceRecord>,
    pub log: Vec<String>,
    next_seq: u64,
}

const STAGE_FILE_GROUP: &str = "Session";

impl Session {
    /// A session over `tree` keeping its files in `dir`; earlier state,
    /// outputs and trace found there are picked up.
    pub fn new(tree: RegionTree, dir: impl Into<PathBuf>, opts: Options) -> Result<Session, OrchError> {
        let dir = dir.into();
        let registry = Registry::from_tree(&tree);
        let mut s = Session {
            tree,
            dir,
            opts,
            state: StageState::default(),
            registry,
            bps: Vec::new(),
            vars: BTreeMap::new(),
            outputs: BTreeMap::new(),
            armed: BTreeSet::new(),
            report: TuningReport::default(),
            trace: Vec::new(),
            log: Vec::new(),
            next_seq: 1,
        };
        if s.opts.persist {
            s.load()?;
        }
        Ok(s)
    }

    fn read_tree(&self, name: &str) -> Result<Option<ParamTree>, OrchError> {
        let path = self.dir.join(name);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Some(read_param_file(&text).map_err(|e| OrchError::Io {
                path: path.display().to_string(),
                msg: e.to_string(),
            })?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path, e)),
        }
    }

    fn write_file(&self, name: &str, text: &str) -> Result<(), OrchError> {
        if !self.opts.persist {
            return Ok(());
        }
        fs::create_dir_all(&self.dir).map_err(|e| io_err(&self.dir, e))?;
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| io_err(&path, e))
    }

    fn load(&mut self) -> Result<(), OrchError> {
        if let Some(t) = self.read_tree(STATE_FILE)? {
            self.state = StageState::from_tree(&t);
            if let Some(g) = t.group(STAGE_FILE_GROUP) {
                for c in &g.children {
                    match c.key.as_str() {
                        "InstallDone" => self.registry.install_done.extend(c.children.iter().map(|n| n.key.clone())),
                        "Armed" => self.armed.extend(c.children.iter().map(|n| n.key.clone())),
                        _ => {}
                    }
                }
            }
        }
        let names: Vec<String> = self.tree.regions.iter().map(|r| r.name.clone()).collect();
        for stage in Stage::ALL {
            for n in &names {
                if let Some(t) = self.read_tree(&param_file_name(stage, Some(n), false))? {
                    self.outputs.insert((stage, n.clone()), t);
                }
            }
        }
        if let Ok(text) = fs::read_to_string(self.dir.join(TRACE_FILE)) {
            self.next_seq = next_seq(&text);
        }
        Ok(())
    }

    /// Write the stage state and append new trace records.
    pub fn save(&mut self) -> Result<(), OrchError> {
        let mut t = self.state.to_tree();
        let mut g = Node::group(STAGE_FILE_GROUP);
        let mut done = Node::group("InstallDone");
        for n in &self.registry.install_done {
            done.set(n, 1);
        }
        let mut armed = Node::group("Armed");
        for n in &self.armed {
            armed.set(n, 1);
        }
        g.children.extend([done, armed]);
        t.groups.push(g);
        self.write_file(STATE_FILE, &write_param_file(&t))?;
        if self.opts.visualization && self.opts.persist {
            let path = self.dir.join(TRACE_FILE);
            let mut text = fs::read_to_string(&path).unwrap_or_else(|_| format!("{TRACE_HEADER}\n"));
            for r in &self.trace {
                text.push_str(&r.line());
                text.push('\n');
            }
            self.write_file(TRACE_FILE, &text)?;
            self.trace.clear();
        }
        Ok(())
    }

    pub fn debug_level(&self) -> i64 {
        let script = self.state.get("OAT_DEBUG").and_then(|v| v.as_int()).unwrap_or(0);
        self.opts.debug_env.unwrap_or(self.opts.debug.max(script))
    }

    pub fn debug_print(&mut self, level: i64, msg: impl Into<String>) {
        if self.debug_level() >= level {
            self.log.push(msg.into());
        }
    }

    fn region(&self, name: &str) -> Result<&Region, OrchError> {
        self.tree.find(name).ok_or_else(|| OrchError::UnknownRoutine(name.to_string()))
    }

    /// Current value of a system, basic or user parameter.
    pub fn value(&self, name: &str) -> Option<&ParamValue> {
        self.state.get(name).or_else(|| self.vars.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v))
    }

    fn all_values(&self) -> BTreeMap<String, ParamValue> {
        let mut out = self.vars.clone();
        out.extend(self.state.values.iter().map(|(k, v)| (k.clone(), v.clone())));
        out
    }

    pub fn assign(&mut self, name: &str, v: ParamValue) {
        if params::is_reserved(name) {
            self.state.set(name, v);
        } else {
            self.vars.retain(|k, _| !k.eq_ignore_ascii_case(name));
            self.vars.insert(name.to_string(), v);
        }
    }

    /// Run the directive script: assignments and calls in source order.
    /// With `config_only`, `OAT_ATexec` and `OAT_DynPefThis` are skipped.
    pub fn run_script(&mut self, config_only: bool) -> Result<(), OrchError> {
        for d in self.tree.script.clone() {
            match &d.payload {
                Payload::Assign { name, value } => {
                    let vals = self.all_values();
                    let lookup = |n: &Ident| {
                        vals.iter().find(|(k, _)| n.is(k)).and_then(|(_, v)| match v {
                            ParamValue::Int(i) => Some(Value::Int(*i)),
                            ParamValue::Real(r) => Some(Value::Real(*r)),
                            ParamValue::Str(_) => None,
                        })
                    };
                    let v = match eval_expr(value, &lookup)? {
                        Value::Int(i) => ParamValue::Int(i),
                        Value::Real(r) => ParamValue::Real(r),
                    };
                    self.assign(name.as_str(), v);
                }
                Payload::Call { name, args } => {
                    let skip = name.is("OAT_ATexec") || name.is("OAT_DynPefThis");
                    if !(config_only && skip) {
                        self.call(name.as_str(), args).map_err(|e| match e {
                            OrchError::Call(m) => OrchError::Call(format!("line {}: {m}", d.line_no)),
                            other => other,
                        })?;
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn bp_mut(&mut self, name: &str) -> Result<&mut BasicParamDef, OrchError> {
        self.bps
            .iter_mut()
            .find(|b| b.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| OrchError::Call(format!("`{name}` is not a basic parameter; call OAT_BPset first")))
    }

    pub fn bp_set(&mut self, name: &str) -> Result<(), OrchError> {
        params::check_user_name(name)?;
        if !self.bps.iter().any(|b| b.name.eq_ignore_ascii_case(name)) {
            self.bps.push(BasicParamDef::new(name));
        }
        Ok(())
    }

    pub fn bp_set_name(&mut self, kind: &str, bp: &str, new_name: &str) -> Result<(), OrchError> {
        self.bp_mut(bp)?.rename(kind, new_name)?;
        Ok(())
    }

    pub fn bp_set_cdf(&mut self, bp: &str, cdf: &str) -> Result<(), OrchError> {
        let spec = cdf.trim();
        let ok = spec.eq_ignore_ascii_case("auto")
            || spec.to_ascii_lowercase().starts_with("least-squares")
            || spec.to_ascii_lowercase().starts_with("user-defined");
        if !ok {
            return Err(OrchError::Call(format!("unknown cost definition function `{cdf}`")));
        }
        self.bp_mut(bp)?.cdf = Some(spec.to_string());
        Ok(())
    }

    /// Dispatch one `OAT_*` call.
    pub fn call(&mut self, name: &str, args: &[CallArg]) -> Result<(), OrchError> {
        let text = |k: usize| -> Result<String, OrchError> {
            args.get(k)
                .and_then(|a| a.text().map(str::to_string).or_else(|| match a {
                    CallArg::Int(i) => Some(i.to_string()),
                    _ => None,
                }))
                .ok_or_else(|| OrchError::Call(format!("{name}: argument {} missing", k + 1)))
        };
        let kind = |k: usize| -> Result<i64, OrchError> {
            match args.get(k) {
                Some(CallArg::Int(i)) => Ok(*i),
                Some(a) => {
                    let t = a.text().unwrap_or("");
                    match t.to_ascii_uppercase().as_str() {
                        "OAT_ALL" => Ok(params::KIND_ALL),
                        "OAT_INSTALL" => Ok(params::KIND_INSTALL),
                        "OAT_STATIC" => Ok(params::KIND_STATIC),
                        "OAT_DYNAMIC" => Ok(params::KIND_DYNAMIC),
                        _ => Err(OrchError::Call(format!("{name}: unknown kind `{t}`"))),
                    }
                }
                None => Err(OrchError::Call(format!("{name}: kind missing"))),
            }
        };
        let list = |t: &str| RoutineList::lookup(t).ok_or_else(|| OrchError::UnknownRoutine(t.to_string()));
        match name.to_ascii_lowercase().as_str() {
            "oat_atexec" => {
                let k = kind(0)?;
                let r = text(1)?;
                self.at_exec(k, &r).map(|_| ())
            }
            "oat_atset" => {
                let stage = stage_of_kind(kind(0)?).ok_or_else(|| OrchError::Call("OAT_ATset: kind must name one stage".into()))?;
                let r = text(1)?;
                self.registry.at_set(stage, &r, &self.tree)
            }
            "oat_atdel" => {
                let l = list(&text(0)?)?;
                let n = text(1)?;
                if !self.registry.at_del(l, &n) {
                    self.log.push(format!("warning: OAT_ATdel: `{n}` not in list"));
                }
                Ok(())
            }
            "oat_atinstallinit" => {
                let l = list(&text(0)?)?;
                self.registry.install_init(l);
                Ok(())
            }
            "oat_bpset" | "oat_bpsetval" => self.bp_set(&text(0)?),
            "oat_bpsetname" => self.bp_set_name(&text(0)?, &text(1)?, &text(2)?),
            "oat_bpsetcdf" => self.bp_set_cdf(&text(0)?, &text(1)?),
            "oat_dynpefthis" => self.dyn_perf_this(&text(0)?).map(|_| ()),
            _ => Err(OrchError::Call(format!("unknown call `{name}`"))),
        }
    }

    /// Names selected by a routine list or a single region name.
    fn routines(&self, routines: &str) -> Result<Vec<String>, OrchError> {
        match RoutineList::lookup(routines) {
            Some(l) => Ok(self.registry.list(l).clone()),
            None => Ok(vec![self.region(routines)?.name.clone()]),
        }
    }

    /// `OAT_ATexec(kind, routines)`: install and static tune now, dynamic
    /// only arms.
    pub fn at_exec(&mut self, kind: i64, routines: &str) -> Result<&TuningReport, OrchError> {
        let stages: Vec<Stage> = match kind {
            params::KIND_ALL => Stage::ALL.to_vec(),
            k => vec![stage_of_kind(k).ok_or_else(|| OrchError::Call(format!("unknown kind {k}")))?],
        };
        let names = self.routines(routines)?;
        for stage in stages {
            self.exec_stage(stage, &names)?;
        }
        self.save()?;
        Ok(&self.report)
    }

    fn exec_stage(&mut self, stage: Stage, names: &[String]) -> Result<(), OrchError> {
        self.load_basic_params(stage)?;
        enforce_order(&self.state, stage)?;
        let of_stage = self.registry.list(RoutineList::of(stage)).clone();
        let names: Vec<String> =
            names.iter().filter(|n| of_stage.iter().any(|m| m.eq_ignore_ascii_case(n))).cloned().collect();
        match stage {
            Stage::Install => {
                for n in &names {
                    if self.registry.install_done.iter().any(|d| d.eq_ignore_ascii_case(n)) {
                        self.report.skipped.push((n.clone(), "install already tuned".into()));
                        self.debug_print(1, format!("{n}: install tuning already done"));
                        continue;
                    }
                    self.tune_region(n, Stage::Install, &BTreeMap::new())?;
                    self.registry.install_done.insert(n.clone());
                }
            }
            Stage::Static => {
                if self.state.tune_static() {
                    for n in &names {
                        self.tune_region(n, Stage::Static, &BTreeMap::new())?;
                    }
                } else {
                    for n in &names {
                        self.report.skipped.push((n.clone(), "OAT_TUNESTATIC is off".into()));
                    }
                }
            }
            Stage::Dynamic => {
                if self.state.tune_dynamic() {
                    self.armed.extend(names.iter().cloned());
                } else {
                    for n in &names {
                        self.report.skipped.push((n.clone(), "OAT_TUNEDYNAMIC is off".into()));
                    }
                }
            }
        }
        self.state.completed.insert(stage);
        Ok(())
    }

    /// `BasicParam` groups of the stage's user file fill basic parameters
    /// that the script left unset.
    fn load_basic_params(&mut self, stage: Stage) -> Result<(), OrchError> {
        let plain = param_file_name(stage, None, true);
        let underscored = plain.replace("ParamDef", "Param_Def");
        for name in [plain, underscored] {
            let Some(t) = self.read_tree(&name)? else { continue };
            if let Some(g) = t.basic_params() {
                for c in &g.children {
                    if let Some(v) = &c.value {
                        if self.value(&c.key).is_none() {
                            self.assign(&c.key.clone(), v.clone());
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Basic-parameter axes of a region at a stage; empty at run time.
    pub fn axes(&self, region: &Region, stage: Stage) -> Result<Vec<BpAxis>, OrchError> {
        if stage == Stage::Dynamic {
            return Ok(Vec::new());
        }
        let decls = resolve_parameters(region)?;
        let values = self.all_values();
        let mut rest: Vec<Ident> = decls.iter().filter(|d| d.attr == ParamAttr::Bp).map(|d| d.name.clone()).collect();
        let mut axes = Vec::new();
        for bp in &self.bps {
            if let Some(pos) = rest.iter().position(|n| n.is(&bp.name)) {
                let name = rest.remove(pos);
                axes.push(BpAxis { key: bp.name.clone(), names: vec![name], values: bp.grid(&values)? });
            }
        }
        let wants_size = decls.iter().any(|d| d.name.is("OAT_PROBSIZE"));
        if !rest.is_empty() || wants_size {
            let def = BasicParamDef::new("OAT_PROBSIZE");
            axes.insert(0, BpAxis { key: "OAT_PROBSIZE".into(), names: rest, values: def.grid(&values)? });
        }
        Ok(axes)
    }

    pub fn contexts(&self, region: &Region, stage: Stage) -> Result<Vec<Context>, OrchError> {
        let mut out: Vec<Context> = vec![Vec::new()];
        for ax in self.axes(region, stage)? {
            out = out
                .into_iter()
                .flat_map(|c| {
                    let key = ax.key.clone();
                    ax.values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((key.clone(), *v));
                        c
                    })
                })
                .collect();
        }
        Ok(out)
    }

    /// An `in` parameter decided by an earlier (or the same) stage.
    pub fn resolve_in(&self, name: &str, stage: Stage) -> Option<ParamValue> {
        for ((origin, _), tree) in &self.outputs {
            if !check_stage_access(stage, *origin) {
                continue;
            }
            for g in &tree.groups {
                if let Some(v) = g.get(name) {
                    return Some(v.clone());
                }
            }
        }
        None
    }

    fn bindings(&self, region: &Region, stage: Stage, ctx: &Context, runtime: &BTreeMap<String, ParamValue>) -> Result<BTreeMap<Ident, Value>, OrchError> {
        let mut out = BTreeMap::new();
        let put = |out: &mut BTreeMap<Ident, Value>, k: &str, v: &ParamValue| match v {
            ParamValue::Int(i) => {
                out.insert(Ident::new(k), Value::Int(*i));
            }
            ParamValue::Real(r) => {
                out.insert(Ident::new(k), Value::Real(*r));
            }
            ParamValue::Str(_) => {}
        };
        for (k, v) in self.all_values().iter().chain(runtime) {
            put(&mut out, k, v);
        }
        if let Some(v) = self.state.get("OAT_NUMPROCS") {
            put(&mut out, "OAT_NUMPROC", v);
        }
        let axes = self.axes(region, stage)?;
        for (key, v) in ctx {
            put(&mut out, key, &ParamValue::Int(*v));
            if let Some(ax) = axes.iter().find(|a| &a.key == key) {
                for n in &ax.names {
                    put(&mut out, n.as_str(), &ParamValue::Int(*v));
                }
            }
        }
        for d in resolve_parameters(region)? {
            if d.attr == ParamAttr::In && !out.contains_key(&d.name) {
                if let Some(v) = self.resolve_in(d.name.as_str(), stage) {
                    put(&mut out, d.name.as_str(), &v);
                }
            }
        }
        Ok(out)
    }

    fn user_tree(&self, region: &Region, stage: Stage) -> Result<ParamTree, OrchError> {
        let mut t = ParamTree::default();
        for name in [param_file_name(stage, Some(&region.name), true), param_file_name(stage, None, true)] {
            if let Some(u) = self.read_tree(&name)? {
                for g in u.groups {
                    if t.group(&g.key).is_none() {
                        t.put(g);
                    }
                }
            }
        }
        Ok(t)
    }

    /// Search spaces, forced values and selection mode of a region.
    pub fn plan(&self, region: &Region, stage: Stage) -> Result<Plan, OrchError> {
        let mut spaces = Vec::new();
        let mut criterion = None;
        if region.feature == Feature::Select {
            if let Some(According::Criteria(c)) = &region.according {
                criterion = Some(c.clone());
            }
        }
        let mut regions = Vec::new();
        region.walk(1, &mut |r, _| regions.push(r));
        for r in regions {
            if r.feature != Feature::Define {
                spaces.push(build_space(r)?);
            }
        }
        let pending: Vec<(String, String)> =
            spaces.iter().flat_map(|s| s.dims.iter().map(|d| (region.name.clone(), d.name.clone()))).collect();
        let collisions = detect_collision(&self.user_tree(region, stage)?, &pending);
        let mut forced = Assignment::new();
        for c in &collisions {
            forced.insert(c.param.clone(), c.forced.clone());
        }
        for s in &mut spaces {
            s.dims.retain(|d| !forced.contains_key(&d.name));
        }
        let fitted = region.fitting().is_some() && spaces.len() == 1 && !spaces[0].dims.is_empty();
        if criterion.is_some() && forced.contains_key(&select_pp(region)) {
            criterion = None;
        }
        Ok(Plan { spaces, forced, collisions, criterion, fitted })
    }

    /// Evaluations a region's tuning performs in one context.
    pub fn plan_evaluations(&self, region: &Region, plan: &Plan) -> u128 {
        if plan.criterion.is_some() {
            return region.sub_regions_of(SubRegionKind::Select).count() as u128;
        }
        if plan.fitted {
            return fitted_evaluations(&plan.spaces[0], region.fitting().unwrap());
        }
        if plan.spaces.iter().all(|s| s.dims.is_empty()) {
            return 0;
        }
        count_evaluations(&plan.spaces)
    }

    /// Evaluations `at_exec` will perform for the regions of `stage` that
    /// are still to be tuned.
    pub fn predict_evaluations(&mut self, stage: Stage) -> Result<u128, OrchError> {
        if stage == Stage::Dynamic {
            return Ok(0);
        }
        self.load_basic_params(stage)?;
        let mut total = 0;
        for n in self.registry.list(RoutineList::of(stage)) {
            if stage == Stage::Install && self.registry.install_done.iter().any(|d| d.eq_ignore_ascii_case(n)) {
                continue;
            }
            let region = self.region(n)?;
            if region.feature == Feature::Define {
                continue;
            }
            let plan = self.plan(region, stage)?;
            total += self.plan_evaluations(region, &plan) * self.contexts(region, stage)?.len() as u128;
        }
        Ok(total)
    }

    /// Evaluations one run-time invocation of `name` performs.
    pub fn predict_dynamic(&self, name: &str) -> Result<u128, OrchError> {
        let region = self.region(name)?;
        if region.feature == Feature::Define {
            return Ok(0);
        }
        let plan = self.plan(region, Stage::Dynamic)?;
        Ok(self.plan_evaluations(region, &plan))
    }

    fn record(&mut self, region: &str, stage: Stage, history: &[(Assignment, f64)]) {
        for (a, c) in history {
            if self.debug_level() >= 1 {
                self.log.push(format!("[{}] {region} {} cost {c}", stage.keyword(), crate::search::format_point(a)));
            }
            if self.opts.visualization {
                self.trace.push(TraceRecord {
                    seq: self.next_seq,
                    region: region.to_string(),
                    stage,
                    assignment: a.clone(),
                    cost: *c,
                    timestamp: trace::now(),
                });
            }
            self.next_seq += 1;
        }
    }

    fn run_env(&self, region: &Region, stmts: Vec<crate::kernel::Stmt>, b: &BTreeMap<Ident, Value>) -> Result<ExecEnv, OrchError> {
        let prog = KernelProgram { decls: self.tree.program.decls.clone(), stmts };
        let mut env = ExecEnv::seeded(&prog, b, self.opts.seed)?;
        execute(&prog, &mut env).map_err(|e| OrchError::region(&region.name, e.to_string()))?;
        Ok(env)
    }

    /// Execute every select branch and pick one by the criterion.
    fn select_by_criterion(&self, region: &Region, c: &Criterion, b: &BTreeMap<Ident, Value>) -> Result<SearchResult, OrchError> {
        let n = region.sub_regions_of(SubRegionKind::Select).count();
        let mut records = Vec::new();
        let mut history = Vec::new();
        let target = first_min(c);
        for k in 1..=n {
            let a: Assignment = [(select_pp(region), ParamValue::Int(k as i64))].into();
            let parts = split_prepost(region, &build(region, &a)?);
            let stmts = parts.pre.into_iter().chain(parts.main).chain(parts.post).collect();
            let env = self.run_env(region, stmts, b)?;
            let rec: BTreeMap<Ident, f64> = env.scalars.iter().map(|(k, v)| (k.clone(), v.as_f64())).collect();
            let cost = target.as_ref().and_then(|t| rec.get(t).copied()).unwrap_or(0.0);
            history.push((a, cost));
            records.push(rec);
        }
        let pick = evaluate_according(c, &records).map_err(|e| OrchError::region(&region.name, e.to_string()))?;
        Ok(SearchResult { best: history[pick].0.clone(), best_cost: history[pick].1, evaluations: n, history })
    }

    fn search_context(&self, region: &Region, plan: &Plan, b: &BTreeMap<Ident, Value>) -> Result<Option<SearchResult>, OrchError> {
        if let Some(c) = &plan.criterion {
            return self.select_by_criterion(region, c, b).map(Some);
        }
        if plan.spaces.iter().all(|s| s.dims.is_empty()) {
            return Ok(None);
        }
        let ev = EstimatingEvaluator {
            inner: RegionEvaluator::new(region, &self.tree.program, plan.forced.clone(), b.clone(), self.opts.mode, self.opts.seed)?,
            region,
        };
        let r = if plan.fitted {
            let vars = region.varied().map(|(p, _, _)| p.to_vec()).unwrap_or_default();
            fitted_search(&plan.spaces[0], &vars, region.fitting().unwrap(), &ev)?
        } else {
            composed_search(&plan.spaces, &ev)?
        };
        Ok(Some(r))
    }

    /// Tune one region at `stage` over all of its basic-parameter contexts
    /// and write its parameter file.
    pub fn tune_region(&mut self, name: &str, stage: Stage, runtime: &BTreeMap<String, ParamValue>) -> Result<Vec<(Context, Assignment)>, OrchError> {
        let region = self.region(name)?.clone();
        let mut group = Node::group(region.name.clone());
        let mut chosen = Vec::new();
        if region.feature == Feature::Define {
            let b = self.bindings(&region, stage, &Vec::new(), runtime)?;
            let body = split_prepost(&region, &build(&region, &Assignment::new())?);
            let env = self.run_env(&region, body.pre.into_iter().chain(body.main).chain(body.post).collect(), &b)?;
            let mut outs: Vec<Ident> = resolve_parameters(&region)?
                .into_iter()
                .filter(|d| d.attr == ParamAttr::Out)
                .map(|d| d.name)
                .collect();
            if outs.is_empty() {
                outs = region.targets.clone();
            }
            let mut a = Assignment::new();
            for n in outs {
                let v = env.scalars.get(&n).ok_or_else(|| OrchError::region(&region.name, format!("`{n}` is never set")))?;
                let pv = match v {
                    Value::Int(i) => ParamValue::Int(*i),
                    Value::Real(r) => ParamValue::Real(*r),
                };
                group.set(n.as_str(), pv.clone());
                a.insert(n.to_string(), pv);
            }
            self.report.entries.push(RegionReport {
                region: region.name.clone(),
                stage,
                context: Vec::new(),
                assignment: a.clone(),
                cost: None,
                evaluations: 0,
                collisions: Vec::new(),
                mode: self.opts.mode,
                history: Vec::new(),
            });
            chosen.push((Vec::new(), a));
        } else {
            let plan = self.plan(&region, stage)?;
            let contexts = self.contexts(&region, stage)?;
            if !contexts[0].is_empty() {
                for k in ["OAT_NUMPROCS", "OAT_SAMPDIST"] {
                    if let Some(v) = self.state.get(k) {
                        group.set(k, v.clone());
                    }
                }
            }
            for ctx in contexts {
                let b = self.bindings(&region, stage, &ctx, runtime)?;
                let result = self.search_context(&region, &plan, &b)?;
                let mut a = plan.forced.clone();
                let (cost, evaluations, history) = match result {
                    Some(r) => {
                        a.extend(r.best.clone());
                        self.record(&region.name, stage, &r.history);
                        (Some(r.best_cost), r.evaluations, r.history)
                    }
                    None => (None, 0, Vec::new()),
                };
                let mut node = &mut group;
                for (k, v) in &ctx {
                    node = node.context_mut(k, &ParamValue::Int(*v));
                }
                for (k, v) in &a {
                    node.set(k, v.clone());
                }
                if self.debug_level() >= 1 || region.debug_items().contains(&&DebugItem::Pp) {
                    let ctx_text: Vec<String> = ctx.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    self.log.push(format!("{} [{}] pp {}", region.name, ctx_text.join(" "), crate::search::format_point(&a)));
                }
                self.report.entries.push(RegionReport {
                    region: region.name.clone(),
                    stage,
                    context: ctx.clone(),
                    assignment: a.clone(),
                    cost,
                    evaluations,
                    collisions: plan.collisions.clone(),
                    mode: self.opts.mode,
                    history,
                });
                chosen.push((ctx, a));
            }
        }
        let tree = ParamTree { groups: vec![group], ..Default::default() };
        self.write_file(&param_file_name(stage, Some(&region.name), false), &write_param_file(&tree))?;
        self.outputs.insert((stage, region.name.clone()), tree);
        Ok(chosen)
    }

    /// Invoke an armed run-time region: tune it with the run-time values
    /// and persist the result.
    pub fn run_dynamic_region(&mut self, name: &str, runtime: &BTreeMap<String, ParamValue>) -> Result<Assignment, OrchError> {
        let region = self.region(name)?.name.clone();
        if !self.armed.contains(&region) {
            return Err(OrchError::NotTuned(region));
        }
        let chosen = self.tune_region(&region, Stage::Dynamic, runtime)?;
        self.save()?;
        Ok(chosen.into_iter().next().map(|(_, a)| a).unwrap_or_default())
    }

    /// Most recent tuned parameters of a region, from any stage.
    pub fn frozen(&self, name: &str) -> Option<Assignment> {
        for stage in [Stage::Dynamic, Stage::Static, Stage::Install] {
            for ((st, n), tree) in &self.outputs {
                if *st == stage && n.eq_ignore_ascii_case(name) {
                    let size = self.value("OAT_PROBSIZE").cloned();
                    return tree.group(n).map(|g| frozen_from(g, size.as_ref()));
                }
            }
        }
        None
    }

    /// `OAT_DynPefThis(name)`: run the region here with its tuned
    /// parameters, without searching. An armed region that has not run yet
    /// is tuned first.
    pub fn dyn_perf_this(&mut self, name: &str) -> Result<Assignment, OrchError> {
        let region = self.region(name)?.clone();
        let a = match self.frozen(&region.name) {
            Some(a) => a,
            None if self.armed.contains(&region.name) => self.run_dynamic_region(&region.name, &BTreeMap::new())?,
            None => return Err(OrchError::NotTuned(region.name.clone())),
        };
        let b = self.bindings(&region, Stage::Dynamic, &Vec::new(), &BTreeMap::new())?;
        let parts = split_prepost(&region, &build(&region, &a)?);
        if let Err(e) = self.run_env(&region, parts.pre.into_iter().chain(parts.main).chain(parts.post).collect(), &b) {
            self.log.push(format!("{}: executing with frozen parameters failed: {e}", region.name));
        }
        self.log.push(format!("OAT_DynPefThis {}: {}", region.name, crate::search::format_point(&a)));
        Ok(a)
    }

    /// Invoke every armed run-time region once, in registry order.
    pub fn run_armed(&mut self, runtime: &BTreeMap<String, ParamValue>) -> Result<Vec<(String, Assignment)>, OrchError> {
        let mut out = Vec::new();
        for n in self.registry.dynamic.clone() {
            if self.armed.contains(&n) {
                out.push((n.clone(), self.run_dynamic_region(&n, runtime)?));
            }
        }
        Ok(out)
    }
}

/// Wraps a region evaluator so that select branches with an `according
/// estimated` expression are costed by the expression, not by running.
struct EstimatingEvaluator<'a> {
    inner: RegionEvaluator<'a>,
    region: &'a Region,
}

impl crate::search::Evaluator for EstimatingEvaluator<'_> {
    fn evaluate(&self, a: &Assignment) -> Result<f64, String> {
        if self.region.feature == Feature::Select {
            if let Some(k) = a.get(&select_pp(self.region)).and_then(|v| v.as_int()) {
                let sub = self.region.sub_regions_of(SubRegionKind::Select).nth((k - 1).max(0) as usize);
                if let Some(According::Estimated(e)) = sub.and_then(|s| s.according.as_ref()) {
                    let b: BTreeMap<Ident, f64> = self.inner.bindings.iter().map(|(k, v)| (k.clone(), v.as_f64())).collect();
                    return eval_cost_expression(e, &b).map_err(|e| e.to_string());
                }
            }
        }
        self.inner.evaluate(a)
    }

    fn concurrent(&self) -> bool {
        self.inner.concurrent()
    }
}

fn first_min(c: &Criterion) -> Option<Ident> {
    match c {
        Criterion::Min(n) => Some(n.clone()),
        Criterion::Condition(_) => None,
        Criterion::And(a, b) | Criterion::Or(a, b) => first_min(a).or_else(|| first_min(b)),
    }
}

/// Performance parameters of a region group: the context matching `size`
/// when there is one, else the first context.
fn frozen_from(g: &Node, size: Option<&ParamValue>) -> Assignment {
    let mut node = g;
    loop {
        let ctxs: Vec<&Node> = node.children.iter().filter(|c| !c.children.is_empty()).collect();
        if ctxs.is_empty() {
            break;
        }
        node = ctxs
            .iter()
            .find(|c| c.is("OAT_PROBSIZE") && size.is_some_and(|s| c.value.as_ref().is_some_and(|v| v.matches(s))))
            .copied()
            .unwrap_or(ctxs[0]);
    }
    node.children
        .iter()
        .filter(|c| c.children.is_empty() && !params::is_reserved(&c.key))
        .filter_map(|c| Some((c.key.clone(), c.value.clone()?)))
        .collect()
}

pub fn stage_of_kind(k: i64) -> Option<Stage> {
    match k {
        params::KIND_INSTALL => Some(Stage::Install),
        params::KIND_STATIC => Some(Stage::Static),
        params::KIND_DYNAMIC => Some(Stage::Dynamic),
        _ => None,
    }
}
