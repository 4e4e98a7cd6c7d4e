//! Parameter-information files, the stage hierarchy, basic parameters and
//! user-file collisions.

mod sexpr;

pub use sexpr::{read_param_file, write_param_file, Layout, Node, ParamTree, ParamValue};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("`{0}` is a reserved system parameter")]
    Reserved(String),
    #[error("OAT_E_ORDER: {0}")]
    Order(String),
    #[error("OAT_E_NOBP: basic parameter(s) not set: {}", .0.join(", "))]
    NoBp(Vec<String>),
    #[error("basic parameter `{name}`: {msg}")]
    BadBp { name: String, msg: String },
}

impl ParamError {
    pub fn parse(line: usize, col: usize, msg: impl Into<String>) -> Self {
        ParamError::Parse { line, col, msg: msg.into() }
    }

    /// The paper's error code, for the two stage-order failures.
    pub fn code(&self) -> Option<&'static str> {
        match self {
            ParamError::Order(_) => Some("OAT_E_ORDER"),
            ParamError::NoBp(_) => Some("OAT_E_NOBP"),
            _ => None,
        }
    }
}

/// Tuning stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Install,
    Static,
    Dynamic,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Install, Stage::Static, Stage::Dynamic];

    pub fn keyword(self) -> &'static str {
        match self {
            Stage::Install => "install",
            Stage::Static => "static",
            Stage::Dynamic => "dynamic",
        }
    }

    /// `Install`, `Static`, `Dynamic`: the infix of file names such as
    /// `OAT_StaticParam.dat`.
    pub fn title(self) -> &'static str {
        match self {
            Stage::Install => "Install",
            Stage::Static => "Static",
            Stage::Dynamic => "Dynamic",
        }
    }

    /// Value of the `OAT_INSTALL` / `OAT_STATIC` / `OAT_DYNAMIC` constants.
    pub fn kind_value(self) -> i64 {
        match self {
            Stage::Install => KIND_INSTALL,
            Stage::Static => KIND_STATIC,
            Stage::Dynamic => KIND_DYNAMIC,
        }
    }

    pub fn lookup(word: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.keyword().eq_ignore_ascii_case(word))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

pub const KIND_ALL: i64 = 0;
pub const KIND_INSTALL: i64 = 1;
pub const KIND_STATIC: i64 = 2;
pub const KIND_DYNAMIC: i64 = 3;

/// `OAT_<Stage>Param<region>.dat`, or the `Def` user file.
pub fn param_file_name(stage: Stage, region: Option<&str>, user_def: bool) -> String {
    format!("OAT_{}Param{}{}.dat", stage.title(), if user_def { "Def" } else { "" }, region.unwrap_or(""))
}

/// A parameter decided in `origin` is visible to `requesting` when `origin`
/// runs no later.
pub fn check_stage_access(requesting: Stage, origin: Stage) -> bool {
    origin <= requesting
}

pub const DEFAULT_BPS: [&str; 4] = ["OAT_NUMPROCS", "OAT_STARTTUNESIZE", "OAT_ENDTUNESIZE", "OAT_SAMPDIST"];

pub const RESERVED: [&str; 15] = [
    "OAT_ALL",
    "OAT_INSTALL",
    "OAT_STATIC",
    "OAT_DYNAMIC",
    "OAT_AllRoutines",
    "OAT_InstallRoutines",
    "OAT_StaticRoutines",
    "OAT_DynamicRoutines",
    "OAT_NUMPROCS",
    "OAT_STARTTUNESIZE",
    "OAT_ENDTUNESIZE",
    "OAT_SAMPDIST",
    "OAT_TUNESTATIC",
    "OAT_TUNEDYNAMIC",
    "OAT_DEBUG",
];

pub fn is_reserved(name: &str) -> bool {
    RESERVED.iter().any(|r| r.eq_ignore_ascii_case(name))
}

/// Rejects reserved names used as user-defined parameters or regions.
pub fn check_user_name(name: &str) -> Result<(), ParamError> {
    if is_reserved(name) {
        Err(ParamError::Reserved(name.to_string()))
    } else {
        Ok(())
    }
}

/// Resolve `key` in `region`, descending through context groups such as
/// `(OAT_PROBSIZE 2048 ...)` in the given order.
pub fn lookup<'a>(
    tree: &'a ParamTree,
    region: &str,
    key: &str,
    context: &[(&str, ParamValue)],
) -> Result<&'a ParamValue, ParamError> {
    let mut path = region.to_string();
    let mut node = tree.group(region).ok_or_else(|| ParamError::NotFound(path.clone()))?;
    for (ck, cv) in context {
        path.push_str(&format!("/({ck} {cv})"));
        node = node
            .children
            .iter()
            .find(|c| c.is(ck) && !c.children.is_empty() && c.value.as_ref().is_some_and(|v| v.matches(cv)))
            .ok_or_else(|| ParamError::NotFound(path.clone()))?;
    }
    path.push('/');
    path.push_str(key);
    node.get(key).ok_or(ParamError::NotFound(path))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Collision {
    pub region: String,
    pub param: String,
    pub forced: ParamValue,
}

/// Every pending performance parameter the user file already values.
pub fn detect_collision(user: &ParamTree, pending: &[(String, String)]) -> Vec<Collision> {
    pending
        .iter()
        .filter_map(|(region, param)| {
            let v = user.group(region)?.get(param)?;
            Some(Collision { region: region.clone(), param: param.clone(), forced: v.clone() })
        })
        .collect()
}

/// A basic parameter and the names of its sampling parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BasicParamDef {
    pub name: String,
    pub start_name: String,
    pub end_name: String,
    pub dist_name: String,
    /// Text given to `OAT_BPsetCDF`, e.g. `least-squares 5`.
    pub cdf: Option<String>,
}

impl BasicParamDef {
    pub fn new(name: &str) -> Self {
        BasicParamDef {
            name: name.to_string(),
            start_name: "OAT_STARTTUNESIZE".into(),
            end_name: "OAT_ENDTUNESIZE".into(),
            dist_name: "OAT_SAMPDIST".into(),
            cdf: None,
        }
    }

    /// `OAT_BPsetName` kinds: STARTTUNESIZE, ENDTUNESIZE, SAMPDIST.
    pub fn rename(&mut self, kind: &str, to: &str) -> Result<(), ParamError> {
        let slot = match kind.to_ascii_uppercase().as_str() {
            "STARTTUNESIZE" => &mut self.start_name,
            "ENDTUNESIZE" => &mut self.end_name,
            "SAMPDIST" => &mut self.dist_name,
            _ => {
                return Err(ParamError::BadBp {
                    name: self.name.clone(),
                    msg: format!("unknown kind `{kind}`; expected STARTTUNESIZE, ENDTUNESIZE or SAMPDIST"),
                })
            }
        };
        *slot = to.to_string();
        Ok(())
    }

    /// Sample points start, start+dist, ... up to end.
    pub fn grid(&self, values: &BTreeMap<String, ParamValue>) -> Result<Vec<i64>, ParamError> {
        let get = |n: &str| {
            values
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case(n))
                .and_then(|(_, v)| v.as_int())
                .ok_or_else(|| ParamError::NoBp(vec![n.to_string()]))
        };
        let (start, end, dist) = (get(&self.start_name)?, get(&self.end_name)?, get(&self.dist_name)?);
        if start > end {
            return Err(ParamError::BadBp { name: self.name.clone(), msg: format!("start {start} exceeds end {end}") });
        }
        if dist < 1 {
            return Err(ParamError::BadBp { name: self.name.clone(), msg: format!("sample distance {dist} is below 1") });
        }
        Ok((start..=end).step_by(dist as usize).collect())
    }
}

/// Which stages have completed plus the current system and basic parameter
/// values. Persisted between runs as an S-expression file.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct StageState {
    pub completed: BTreeSet<Stage>,
    pub values: BTreeMap<String, ParamValue>,
}

pub const STATE_FILE: &str = "OAT_StageState.dat";

impl StageState {
    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.values.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v)
    }

    /// Stores under the canonical upper-case spelling of reserved names.
    pub fn set(&mut self, name: &str, v: ParamValue) {
        let key = RESERVED
            .iter()
            .find(|r| r.eq_ignore_ascii_case(name))
            .map(|r| r.to_string())
            .unwrap_or_else(|| name.to_string());
        self.values.retain(|k, _| !k.eq_ignore_ascii_case(name));
        self.values.insert(key, v);
    }

    fn flag(&self, name: &str, default: bool) -> bool {
        self.get(name).and_then(|v| v.as_int()).map_or(default, |v| v != 0)
    }

    pub fn tune_static(&self) -> bool {
        self.flag("OAT_TUNESTATIC", true)
    }

    pub fn tune_dynamic(&self) -> bool {
        self.flag("OAT_TUNEDYNAMIC", true)
    }

    pub fn to_tree(&self) -> ParamTree {
        let mut g = Node::group("StageState");
        for s in Stage::ALL {
            g.set(&format!("{}_done", s.keyword()), i64::from(self.completed.contains(&s)));
        }
        let mut vals = Node::group("Values");
        for (k, v) in &self.values {
            vals.set(k, v.clone());
        }
        if !vals.children.is_empty() {
            g.children.push(vals);
        }
        ParamTree { groups: vec![g], ..Default::default() }
    }

    pub fn from_tree(t: &ParamTree) -> StageState {
        let mut st = StageState::default();
        if let Some(g) = t.group("StageState") {
            for s in Stage::ALL {
                if g.get(&format!("{}_done", s.keyword())).and_then(|v| v.as_int()) == Some(1) {
                    st.completed.insert(s);
                }
            }
            if let Some(vals) = g.children.iter().find(|c| c.is("Values")) {
                for c in &vals.children {
                    if let Some(v) = &c.value {
                        st.values.insert(c.key.clone(), v.clone());
                    }
                }
            }
        }
        st
    }
}

/// Whether `requested` may run now. Install and static need the four
/// default basic parameters; static needs install done; dynamic needs
/// install done and static done unless static tuning is switched off.
pub fn enforce_order(state: &StageState, requested: Stage) -> Result<(), ParamError> {
    if requested >= Stage::Static && !state.completed.contains(&Stage::Install) {
        return Err(ParamError::Order(format!("{requested} requested before install completed")));
    }
    if requested == Stage::Dynamic && state.tune_static() && !state.completed.contains(&Stage::Static) {
        return Err(ParamError::Order("dynamic requested before static completed".into()));
    }
    if requested <= Stage::Static {
        let missing: Vec<String> =
            DEFAULT_BPS.iter().filter(|n| state.get(n).is_none()).map(|n| n.to_string()).collect();
        if !missing.is_empty() {
            return Err(ParamError::NoBp(missing));
        }
    }
    Ok(())
}
