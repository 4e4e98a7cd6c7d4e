//! `!OAT$` directives: lexing, payload parsing, region trees, nesting rules
//! and parameter declarations.

mod regions;
mod syntax;

pub use regions::{
    at_type_nests, feature_nests, parse_regions, parse_source, resolve_parameters, subtype_allowed,
    validate_nesting, NestRule, Region, RegionTree, SubRegion, Violation, MAX_DEPTH,
};
pub use syntax::{is_sentinel, parse_payload, strip_directives, tokenize_directives};

use crate::fitting::SampleSpec;
use crate::kernel::{Expr, Ident, KernelError};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DirectiveError {
    #[error("{line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{line}: {msg}")]
    Structure { line: usize, msg: String },
    #[error("{0}")]
    Kernel(#[from] KernelError),
    #[error("{line}: region `{region}`: basic parameter is ambiguous between {}; declare it with `parameter (bp ...)`", .candidates.join(", "))]
    AmbiguousBp { region: String, line: usize, candidates: Vec<String> },
}

impl DirectiveError {
    pub fn syntax(line: usize, msg: impl Into<String>) -> Self {
        DirectiveError::Syntax { line, msg: msg.into() }
    }

    pub fn structure(line: usize, msg: impl Into<String>) -> Self {
        DirectiveError::Structure { line, msg: msg.into() }
    }

    /// Source line the error points at, when known.
    pub fn line(&self) -> Option<usize> {
        match self {
            DirectiveError::Syntax { line, .. }
            | DirectiveError::Structure { line, .. }
            | DirectiveError::AmbiguousBp { line, .. } => Some(*line),
            DirectiveError::Kernel(KernelError::Syntax { line, .. }) => Some(*line),
            DirectiveError::Kernel(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtType {
    Install,
    Static,
    Dynamic,
    /// Free-form formula text; stored, never tuned.
    Formula(String),
}

impl AtType {
    pub fn keyword(&self) -> &str {
        match self {
            AtType::Install => "install",
            AtType::Static => "static",
            AtType::Dynamic => "dynamic",
            AtType::Formula(f) => f,
        }
    }

    pub fn stage(&self) -> Option<crate::params::Stage> {
        use crate::params::Stage;
        match self {
            AtType::Install => Some(Stage::Install),
            AtType::Static => Some(Stage::Static),
            AtType::Dynamic => Some(Stage::Dynamic),
            AtType::Formula(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    Define,
    Variable,
    Select,
    Unroll,
    LoopFusionSplit,
    LoopFusion,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::Define,
        Feature::Variable,
        Feature::Select,
        Feature::Unroll,
        Feature::LoopFusionSplit,
        Feature::LoopFusion,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            Feature::Define => "define",
            Feature::Variable => "variable",
            Feature::Select => "select",
            Feature::Unroll => "unroll",
            Feature::LoopFusionSplit => "LoopFusionSplit",
            Feature::LoopFusion => "LoopFusion",
        }
    }

    pub fn lookup(word: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.keyword().eq_ignore_ascii_case(word))
    }

    /// Search method used when the region gives none.
    pub fn default_search(self) -> Option<SearchMethod> {
        match self {
            Feature::Define => None,
            Feature::Select => Some(SearchMethod::AdHoc),
            _ => Some(SearchMethod::Exhaustive),
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SearchMethod {
    Exhaustive,
    AdHoc,
}

impl SearchMethod {
    pub fn keyword(self) -> &'static str {
        match self {
            SearchMethod::Exhaustive => "Brute-force",
            SearchMethod::AdHoc => "AD-HOC",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamAttr {
    In,
    Out,
    Bp,
}

impl ParamAttr {
    pub fn keyword(self) -> &'static str {
        match self {
            ParamAttr::In => "in",
            ParamAttr::Out => "out",
            ParamAttr::Bp => "bp",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamDecl {
    pub name: Ident,
    pub attr: ParamAttr,
    pub origin_region: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DebugItem {
    Bp,
    Pp,
    Param(Ident),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SubRegionKind {
    Select,
    Prepro,
    Postpro,
    SplitPointCopyDef,
    RotationOrder,
}

impl SubRegionKind {
    pub fn keyword(self) -> &'static str {
        match self {
            SubRegionKind::Select => "select",
            SubRegionKind::Prepro => "prepro",
            SubRegionKind::Postpro => "postpro",
            SubRegionKind::SplitPointCopyDef => "SplitPointCopyDef",
            SubRegionKind::RotationOrder => "RotationOrder",
        }
    }

    pub fn subtype_kind(self) -> SubtypeKind {
        match self {
            SubRegionKind::Select => SubtypeKind::SelectSub,
            SubRegionKind::Prepro => SubtypeKind::Prepro,
            SubRegionKind::Postpro => SubtypeKind::Postpro,
            SubRegionKind::SplitPointCopyDef => SubtypeKind::SplitPointCopyDef,
            SubRegionKind::RotationOrder => SubtypeKind::RotationOrder,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SubtypeKind {
    Name,
    Parameter,
    SelectSub,
    According,
    Varied,
    Fitting,
    Number,
    Prepro,
    Postpro,
    Debug,
    SplitPoint,
    SplitPointCopyDef,
    SplitPointCopyInsert,
    RotationOrder,
}

impl SubtypeKind {
    pub const ALL: [SubtypeKind; 14] = [
        SubtypeKind::Name,
        SubtypeKind::Parameter,
        SubtypeKind::SelectSub,
        SubtypeKind::According,
        SubtypeKind::Varied,
        SubtypeKind::Fitting,
        SubtypeKind::Number,
        SubtypeKind::Prepro,
        SubtypeKind::Postpro,
        SubtypeKind::Debug,
        SubtypeKind::SplitPoint,
        SubtypeKind::SplitPointCopyDef,
        SubtypeKind::SplitPointCopyInsert,
        SubtypeKind::RotationOrder,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "/=",
        }
    }

    pub fn holds(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }
}

/// Predicate inside `condition ( ... )`.
#[derive(Clone, Debug, PartialEq)]
pub enum BoolExpr {
    Const(bool),
    Cmp(Expr, CmpOp, Expr),
    Not(Box<BoolExpr>),
    And(Box<BoolExpr>, Box<BoolExpr>),
    Or(Box<BoolExpr>, Box<BoolExpr>),
}

/// `min (x)` / `condition (...)` clauses joined by `.and.` / `.or.`.
#[derive(Clone, Debug, PartialEq)]
pub enum Criterion {
    Min(Ident),
    Condition(BoolExpr),
    And(Box<Criterion>, Box<Criterion>),
    Or(Box<Criterion>, Box<Criterion>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum According {
    Estimated(Expr),
    Criteria(Criterion),
}

#[derive(Clone, Debug, PartialEq)]
pub enum FitMethod {
    LeastSquares(usize),
    Dspline,
    UserDefined(Expr),
    Auto,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SampleScope {
    Points(SampleSpec),
    Auto,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSpec {
    pub method: FitMethod,
    pub scope: SampleScope,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SubtypeSpec {
    Name(String),
    Parameter(Vec<(ParamAttr, Ident)>),
    SubRegion { kind: SubRegionKind, start: bool },
    According(According),
    Varied { params: Vec<Ident>, from: i64, to: i64 },
    Fitting(FitSpec),
    Number(i64),
    Debug(Vec<DebugItem>),
    SplitPoint(Vec<Ident>),
    SplitPointCopyInsert,
}

impl SubtypeSpec {
    pub fn kind(&self) -> SubtypeKind {
        match self {
            SubtypeSpec::Name(_) => SubtypeKind::Name,
            SubtypeSpec::Parameter(_) => SubtypeKind::Parameter,
            SubtypeSpec::SubRegion { kind, .. } => kind.subtype_kind(),
            SubtypeSpec::According(_) => SubtypeKind::According,
            SubtypeSpec::Varied { .. } => SubtypeKind::Varied,
            SubtypeSpec::Fitting(_) => SubtypeKind::Fitting,
            SubtypeSpec::Number(_) => SubtypeKind::Number,
            SubtypeSpec::Debug(_) => SubtypeKind::Debug,
            SubtypeSpec::SplitPoint(_) => SubtypeKind::SplitPoint,
            SubtypeSpec::SplitPointCopyInsert => SubtypeKind::SplitPointCopyInsert,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CallArg {
    Str(String),
    Name(Ident),
    Int(i64),
    Real(f64),
}

impl CallArg {
    /// Text of a string or bare-name argument.
    pub fn text(&self) -> Option<&str> {
        match self {
            CallArg::Str(s) => Some(s),
            CallArg::Name(n) => Some(n.as_str()),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    RegionStart { at_type: AtType, feature: Feature, targets: Vec<Ident> },
    RegionEnd { at_type: AtType, feature: Feature, targets: Vec<Ident> },
    Subtype(SubtypeSpec),
    /// `call OAT_ATexec(...)` and friends.
    Call { name: Ident, args: Vec<CallArg> },
    /// `OAT_NUMPROCS = 4`; `.true.`/`.false.` become 1/0.
    Assign { name: Ident, value: Expr },
    Search(SearchMethod),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Directive {
    /// Sentinel lines as written, continuations joined with newlines.
    pub raw_text: String,
    pub line_no: usize,
    pub payload: Payload,
}

impl Directive {
    /// Canonical single-line spelling, sentinel included.
    pub fn emit(&self) -> String {
        format!("!OAT$ {}", self.payload)
    }
}
