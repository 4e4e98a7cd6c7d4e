//! Parameter spaces and the two search methods, exhaustive and AD-HOC,
//! plus their composition over nested regions and fitted search.

mod fitted;

pub use fitted::{fitted_evaluations, fitted_search};

use crate::directive::{Feature, Region, SearchMethod, SubRegionKind};
use crate::params::ParamValue;
use crate::transform::{self, Assignment, TransformError};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("region `{0}` needs no search")]
    NoSearch(String),
    #[error("dimension `{0}` has an empty domain")]
    EmptyDomain(String),
    #[error("evaluation failed at {at}: {msg}")]
    Eval { at: String, msg: String },
    #[error("{0}")]
    Fit(String),
    #[error("{0}")]
    Transform(#[from] TransformError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dim {
    pub name: String,
    pub domain: Vec<ParamValue>,
}

impl Dim {
    pub fn range(name: impl Into<String>, lo: i64, hi: i64) -> Dim {
        Dim { name: name.into(), domain: (lo..=hi).map(ParamValue::Int).collect() }
    }

    /// `lo..=hi` when the domain is a run of consecutive integers.
    pub fn int_range(&self) -> Option<(i64, i64)> {
        let lo = self.domain.first()?.as_int()?;
        for (k, v) in self.domain.iter().enumerate() {
            if v.as_int()? != lo + k as i64 {
                return None;
            }
        }
        Some((lo, lo + self.domain.len() as i64 - 1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub region: String,
    pub dims: Vec<Dim>,
    pub method: SearchMethod,
}

impl SearchSpace {
    pub fn new(region: impl Into<String>, dims: Vec<Dim>, method: SearchMethod) -> Self {
        SearchSpace { region: region.into(), dims, method }
    }

    pub fn size(&self) -> u128 {
        self.dims.iter().map(|d| d.domain.len() as u128).product()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub best: Assignment,
    pub best_cost: f64,
    pub evaluations: usize,
    pub history: Vec<(Assignment, f64)>,
}

/// Cost of one assignment. `concurrent` marks evaluators whose results do
/// not depend on evaluation order or wall time, so that a block of points
/// may be evaluated in parallel.
pub trait Evaluator: Sync {
    fn evaluate(&self, a: &Assignment) -> Result<f64, String>;

    fn concurrent(&self) -> bool {
        false
    }
}

/// Wraps a plain cost function; treated as concurrency safe.
pub struct FnEvaluator<F>(pub F);

impl<F: Fn(&Assignment) -> f64 + Sync> Evaluator for FnEvaluator<F> {
    fn evaluate(&self, a: &Assignment) -> Result<f64, String> {
        Ok((self.0)(a))
    }

    fn concurrent(&self) -> bool {
        true
    }
}

/// Search dimensions of a region with its effective method.
pub fn build_space(region: &Region) -> Result<SearchSpace, SearchError> {
    let method = region.search_method().ok_or_else(|| SearchError::NoSearch(region.name.clone()))?;
    let dims = match region.feature {
        Feature::Define => return Err(SearchError::NoSearch(region.name.clone())),
        Feature::Unroll | Feature::Variable => {
            let (params, from, to) =
                region.varied().ok_or_else(|| TransformError::NotEnumerable(region.name.clone()))?;
            params.iter().map(|p| Dim::range(transform::pp_name(region, p), from, to)).collect()
        }
        Feature::Select => {
            let n = region.sub_regions_of(SubRegionKind::Select).count() as i64;
            vec![Dim::range(transform::select_pp(region), 1, n)]
        }
        Feature::LoopFusionSplit | Feature::LoopFusion => {
            let tags = transform::structural_candidates(region, &region.body)?;
            vec![Dim {
                name: transform::variant_pp(region),
                domain: tags.into_iter().map(|(t, _, _)| ParamValue::Str(t)).collect(),
            }]
        }
    };
    let space = SearchSpace::new(region.name.clone(), dims, method);
    for d in &space.dims {
        if d.domain.is_empty() {
            return Err(SearchError::EmptyDomain(d.name.clone()));
        }
    }
    Ok(space)
}

/// Points are kept as index vectors into the flattened dims until they are
/// handed to the evaluator.
pub(crate) struct Scanner<'a> {
    dims: Vec<&'a Dim>,
    pub(crate) current: Vec<usize>,
    best: Option<(Vec<usize>, f64)>,
    pub(crate) history: Vec<(Assignment, f64)>,
    eval: &'a dyn Evaluator,
}

impl<'a> Scanner<'a> {
    pub(crate) fn new(dims: Vec<&'a Dim>, eval: &'a dyn Evaluator) -> Result<Self, SearchError> {
        for d in &dims {
            if d.domain.is_empty() {
                return Err(SearchError::EmptyDomain(d.name.clone()));
            }
        }
        let n = dims.len();
        Ok(Scanner { dims, current: vec![0; n], best: None, history: Vec::new(), eval })
    }

    pub(crate) fn dim(&self, k: usize) -> &Dim {
        self.dims[k]
    }

    pub(crate) fn assignment(&self, idx: &[usize]) -> Assignment {
        self.dims.iter().zip(idx).map(|(d, &i)| (d.name.clone(), d.domain[i].clone())).collect()
    }

    fn run(&self, points: &[Vec<usize>]) -> Result<Vec<f64>, SearchError> {
        let one = |p: &Vec<usize>| {
            let a = self.assignment(p);
            self.eval.evaluate(&a).map_err(|msg| SearchError::Eval { at: format_point(&a), msg })
        };
        #[cfg(feature = "parallel")]
        if self.eval.concurrent() && points.len() > 1 {
            use rayon::prelude::*;
            return points.par_iter().map(one).collect();
        }
        points.iter().map(one).collect()
    }

    fn record(&mut self, p: &[usize], c: f64) {
        if self.best.as_ref().is_none_or(|(_, b)| c < *b) {
            self.best = Some((p.to_vec(), c));
        }
        self.history.push((self.assignment(p), c));
    }

    /// Evaluate `points` in order and move to the cheapest (first on ties).
    pub(crate) fn scan(&mut self, points: Vec<Vec<usize>>) -> Result<(), SearchError> {
        let costs = self.run(&points)?;
        let mut best: Option<(usize, f64)> = None;
        for (k, (p, c)) in points.iter().zip(&costs).enumerate() {
            self.record(p, *c);
            if best.is_none_or(|(_, b)| *c < b) {
                best = Some((k, *c));
            }
        }
        if let Some((k, _)) = best {
            self.current = points[k].clone();
        }
        Ok(())
    }

    /// Cartesian block over `dims` (positions into the flattened list),
    /// last position fastest, the rest frozen.
    pub(crate) fn block(&self, dims: &[usize]) -> Vec<Vec<usize>> {
        let mut out = vec![self.current.clone()];
        for &k in dims {
            let n = self.dims[k].domain.len();
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..n).map(move |v| {
                        let mut q = p.clone();
                        q[k] = v;
                        q
                    })
                })
                .collect();
        }
        out
    }

    /// One coordinate pass over `dims`, last first.
    pub(crate) fn coordinate(&mut self, dims: &[usize]) -> Result<(), SearchError> {
        for &k in dims.iter().rev() {
            let pts = self.block(&[k]);
            self.scan(pts)?;
        }
        Ok(())
    }

    pub(crate) fn evaluate_at(&mut self, idx: &[usize]) -> Result<f64, SearchError> {
        let c = self.run(&[idx.to_vec()])?[0];
        self.record(idx, c);
        Ok(c)
    }

    pub(crate) fn finish(self) -> SearchResult {
        let (idx, best_cost) = self.best.clone().unwrap_or((self.current.clone(), f64::NAN));
        SearchResult { evaluations: self.history.len(), best: self.assignment(&idx), best_cost, history: self.history }
    }
}

pub fn format_point(a: &Assignment) -> String {
    let parts: Vec<String> = a.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("({})", parts.join(", "))
}

/// Every point, lexicographic in dim order with the last dim fastest.
pub fn exhaustive(space: &SearchSpace, eval: &dyn Evaluator) -> Result<SearchResult, SearchError> {
    let mut s = Scanner::new(space.dims.iter().collect(), eval)?;
    let all: Vec<usize> = (0..space.dims.len()).collect();
    let pts = s.block(&all);
    s.scan(pts)?;
    Ok(s.finish())
}

/// A single coordinate pass from the last dim to the first, starting at
/// `init` (default: the first value of every domain).
pub fn adhoc(space: &SearchSpace, eval: &dyn Evaluator, init: Option<&Assignment>) -> Result<SearchResult, SearchError> {
    let mut s = Scanner::new(space.dims.iter().collect(), eval)?;
    if let Some(init) = init {
        for (k, d) in space.dims.iter().enumerate() {
            if let Some(v) = init.get(&d.name) {
                s.current[k] = d.domain.iter().position(|x| x.matches(v)).unwrap_or(0);
            }
        }
    }
    let all: Vec<usize> = (0..space.dims.len()).collect();
    s.coordinate(&all)?;
    Ok(s.finish())
}

/// The steps a composed search takes, outer region first in `plan`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Step {
    /// Cartesian scan over flattened dim positions.
    Block(Vec<usize>),
    /// Coordinate pass, last position first.
    Coordinate(Vec<usize>),
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Block(d) => write!(f, "block{d:?}"),
            Step::Coordinate(d) => write!(f, "coordinate{d:?}"),
        }
    }
}

/// Order of work for nested regions. The outermost method decides: under
/// exhaustive, AD-HOC inner regions are tuned first and then held constant
/// while the exhaustive dims are scanned as one block; under AD-HOC, inner
/// regions are tuned innermost first by their own method and the outer
/// dims get a coordinate pass.
pub fn plan_steps(plan: &[SearchSpace]) -> Vec<Step> {
    let Some(outer) = plan.first() else {
        return Vec::new();
    };
    let mut offset = 0;
    let mut ranges = Vec::new();
    for s in plan {
        ranges.push((offset..offset + s.dims.len()).collect::<Vec<_>>());
        offset += s.dims.len();
    }
    let mut steps = Vec::new();
    match outer.method {
        SearchMethod::Exhaustive => {
            let mut adhoc_dims = Vec::new();
            let mut block = Vec::new();
            for (s, r) in plan.iter().zip(&ranges) {
                match s.method {
                    SearchMethod::AdHoc => adhoc_dims.extend(r),
                    SearchMethod::Exhaustive => block.extend(r),
                }
            }
            if !adhoc_dims.is_empty() {
                steps.push(Step::Coordinate(adhoc_dims));
            }
            if !block.is_empty() {
                steps.push(Step::Block(block));
            }
        }
        SearchMethod::AdHoc => {
            for (s, r) in plan.iter().zip(&ranges).skip(1).rev() {
                if r.is_empty() {
                    continue;
                }
                steps.push(match s.method {
                    SearchMethod::AdHoc => Step::Coordinate(r.clone()),
                    SearchMethod::Exhaustive => Step::Block(r.clone()),
                });
            }
            if !ranges[0].is_empty() {
                steps.push(Step::Coordinate(ranges[0].clone()));
            }
        }
    }
    steps
}

/// Search nested regions together; `plan` lists the outer region first,
/// then the inner regions in source order.
pub fn composed_search(plan: &[SearchSpace], eval: &dyn Evaluator) -> Result<SearchResult, SearchError> {
    let dims: Vec<&Dim> = plan.iter().flat_map(|s| s.dims.iter()).collect();
    let mut s = Scanner::new(dims, eval)?;
    for step in plan_steps(plan) {
        match step {
            Step::Block(d) => {
                let pts = s.block(&d);
                s.scan(pts)?;
            }
            Step::Coordinate(d) => s.coordinate(&d)?,
        }
    }
    Ok(s.finish())
}

/// Evaluations `composed_search` will perform, without running it.
pub fn count_evaluations(plan: &[SearchSpace]) -> u128 {
    let dims: Vec<u128> = plan.iter().flat_map(|s| s.dims.iter().map(|d| d.domain.len() as u128)).collect();
    plan_steps(plan)
        .iter()
        .map(|st| match st {
            Step::Block(d) => d.iter().map(|&k| dims[k]).product::<u128>(),
            Step::Coordinate(d) => d.iter().map(|&k| dims[k]).sum(),
        })
        .sum()
}

/// Run a single region's space with its own method.
pub fn search(space: &SearchSpace, eval: &dyn Evaluator) -> Result<SearchResult, SearchError> {
    match space.method {
        SearchMethod::Exhaustive => exhaustive(space, eval),
        SearchMethod::AdHoc => adhoc(space, eval, None),
    }
}
