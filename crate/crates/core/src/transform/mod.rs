//! Code variant generation: unroll-and-jam, loop split with recomputation,
//! loop collapse, statement rotation and select branch extraction.

mod loops;
mod reorder;

pub use loops::{fuse, nest_chain, split_at, unroll, SplitSpec};
pub use reorder::{reorder_statements, RotationSpec};

use crate::directive::{Feature, Region, SubRegionKind};
use crate::kernel::{Expr, Ident, KernelError, LValue, Stmt, StmtKind};
use crate::params::ParamValue;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("no loop over `{0}` in the region")]
    NoSuchLoop(String),
    #[error("unroll factor {factor} for `{var}` must be at least 1")]
    BadFactor { var: String, factor: i64 },
    #[error("cannot unroll `{var}`: {reason}")]
    NotUnrollable { var: String, reason: String },
    #[error("loop nest is not perfect: {0}")]
    NotPerfect(String),
    #[error("split leaves one half empty")]
    EmptyHalf,
    #[error("SplitPointCopyInsert given but SplitPointCopyDef is empty")]
    EmptyCopyDef,
    #[error("RotationOrder groups differ in length ({first} vs {second})")]
    UnequalGroups { first: usize, second: usize },
    #[error("rotation would reorder dependent statements: {0}")]
    Dependence(String),
    #[error("LoopFusionSplit region `{0}` has no SplitPoint")]
    MissingSplitPoint(String),
    #[error("region `{0}` has nothing to enumerate")]
    NotEnumerable(String),
    #[error("region `{region}`: {msg}")]
    Assignment { region: String, msg: String },
    #[error("{0}")]
    Kernel(#[from] KernelError),
}

pub type Assignment = BTreeMap<String, ParamValue>;

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub id: String,
    pub program: Vec<Stmt>,
    pub assignment: Assignment,
    pub provenance: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VariantSet {
    pub region: String,
    pub variants: Vec<Variant>,
}

impl VariantSet {
    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Variant> {
        self.variants.iter().find(|v| v.id == id)
    }
}

/// Performance parameter name of a varied parameter: `MyMatMul_I`.
pub fn pp_name(region: &Region, param: &Ident) -> String {
    format!("{}_{}", region.name, param.upper())
}

pub fn select_pp(region: &Region) -> String {
    format!("{}_SELECT", region.name)
}

pub fn variant_pp(region: &Region) -> String {
    format!("{}_VARIANT", region.name)
}

/// Turn a structural tag into something usable in a file name.
pub fn sanitize_tag(tag: &str) -> String {
    let mut out = String::new();
    for c in tag.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

fn bad(region: &Region, msg: impl Into<String>) -> TransformError {
    TransformError::Assignment { region: region.name.clone(), msg: msg.into() }
}

/// Replace the statements that lie strictly between two directive lines
/// with `replacement`. Loops enclosing the range are descended into; an
/// empty range gets the replacement inserted in place.
pub fn splice(stmts: &[Stmt], lo: usize, hi: usize, replacement: &[Stmt]) -> Vec<Stmt> {
    let inside = |s: &Stmt| s.line_span().is_some_and(|(a, b)| lo < a && b < hi);
    let encloses = |s: &Stmt| s.line_span().is_some_and(|(a, b)| a < lo && hi < b);
    if let Some(i) = stmts.iter().position(|s| s.as_loop().is_some() && encloses(s)) {
        let mut out = stmts.to_vec();
        let l = out[i].as_loop_mut().unwrap();
        l.body = splice(&l.body, lo, hi, replacement);
        return out;
    }
    let mut out = Vec::with_capacity(stmts.len() + replacement.len());
    let mut placed = false;
    for s in stmts {
        if inside(s) || (!placed && s.line_span().is_some_and(|(a, _)| a > hi)) {
            if !placed {
                out.extend_from_slice(replacement);
                placed = true;
            }
            if inside(s) {
                continue;
            }
        }
        out.push(s.clone());
    }
    if !placed {
        out.extend_from_slice(replacement);
    }
    out
}

/// The varied parameters with their common domain.
fn varied_dims(region: &Region) -> Result<(Vec<Ident>, i64, i64), TransformError> {
    let (params, from, to) =
        region.varied().ok_or_else(|| TransformError::NotEnumerable(region.name.clone()))?;
    if params.is_empty() || from > to {
        return Err(TransformError::NotEnumerable(region.name.clone()));
    }
    Ok((params.to_vec(), from, to))
}

pub fn split_spec(region: &Region) -> Result<SplitSpec, TransformError> {
    let (line, loops) =
        region.split_points.first().ok_or_else(|| TransformError::MissingSplitPoint(region.name.clone()))?;
    Ok(SplitSpec {
        split_loops: loops.clone(),
        split_line: *line,
        copy_def: region.sub_regions_of(SubRegionKind::SplitPointCopyDef).flat_map(|s| s.stmts.clone()).collect(),
        insert_lines: region.copy_inserts.clone(),
    })
}

pub fn rotation_spec(region: &Region) -> Option<Result<RotationSpec, TransformError>> {
    let groups: Vec<&_> = region.sub_regions_of(SubRegionKind::RotationOrder).collect();
    match groups.as_slice() {
        [] => None,
        [a, b] => Some(Ok(RotationSpec { groups: [a.stmts.clone(), b.stmts.clone()] })),
        other => Some(Err(TransformError::UnequalGroups {
            first: other.len(),
            second: 2,
        })),
    }
}

/// Fusion level lists for a chain: outer two loops, then the whole chain.
fn fusion_levels(chain: &[Ident]) -> Vec<Vec<Ident>> {
    let mut out = Vec::new();
    if chain.len() >= 2 {
        out.push(chain[..2].to_vec());
    }
    if chain.len() >= 3 {
        out.push(chain.to_vec());
    }
    out
}

fn fuse_tag(levels: &[Ident]) -> String {
    let names: Vec<String> = levels.iter().map(|v| v.lower()).collect();
    format!("fuse({})", names.join(","))
}

/// Structural candidates of a LoopFusionSplit or LoopFusion region as
/// (tag, program, provenance).
pub fn structural_candidates(region: &Region, body: &[Stmt]) -> Result<Vec<(String, Vec<Stmt>, Vec<String>)>, TransformError> {
    let chain = nest_chain(body);
    let mut out: Vec<(String, Vec<Stmt>, Vec<String>)> = vec![("baseline".into(), body.to_vec(), Vec::new())];
    match region.feature {
        Feature::LoopFusionSplit => {
            let spec = split_spec(region)?;
            let mut first_split = None;
            for at in &spec.split_loops {
                let tag = format!("split@{}", at.upper());
                let prog = split_at(body, &spec, at)?;
                if first_split.is_none() {
                    first_split = Some((tag.clone(), prog.clone()));
                }
                out.push((tag.clone(), prog, vec![tag]));
            }
            for levels in fusion_levels(&chain) {
                let ft = fuse_tag(&levels);
                out.push((ft.clone(), fuse(body, &levels)?, vec![ft.clone()]));
                if let Some((st, sp)) = &first_split {
                    out.push((format!("{st}+{ft}"), fuse(sp, &levels)?, vec![st.clone(), ft]));
                }
            }
        }
        Feature::LoopFusion => {
            let orders = match rotation_spec(region) {
                None => vec![body.to_vec()],
                Some(spec) => reorder_statements(body, &spec?)?,
            };
            out.clear();
            let mut levels = vec![Vec::new()];
            levels.extend(fusion_levels(&chain));
            for lv in &levels {
                for (k, prog) in orders.iter().enumerate() {
                    let mut prov = Vec::new();
                    let mut tag = Vec::new();
                    if !lv.is_empty() {
                        tag.push(fuse_tag(lv));
                    }
                    if k == 1 {
                        tag.push("rotate".to_string());
                        prov.push("rotate".to_string());
                    }
                    let prog = if lv.is_empty() {
                        prog.clone()
                    } else {
                        prov.push(fuse_tag(lv));
                        fuse(prog, lv)?
                    };
                    let tag = if tag.is_empty() { "baseline".to_string() } else { tag.join("+") };
                    out.push((tag, prog, prov));
                }
            }
        }
        _ => return Err(TransformError::NotEnumerable(region.name.clone())),
    }
    let mut seen: Vec<Vec<Stmt>> = Vec::new();
    out.retain(|(_, p, _)| {
        if seen.contains(p) {
            false
        } else {
            seen.push(p.clone());
            true
        }
    });
    Ok(out)
}

/// Body with the chosen select branch kept and every other branch removed
/// (1-based branch index).
pub fn select_branch(region: &Region, body: &[Stmt], branch: usize) -> Result<Vec<Stmt>, TransformError> {
    let subs: Vec<_> = region.sub_regions_of(SubRegionKind::Select).collect();
    if branch == 0 || branch > subs.len() {
        return Err(bad(region, format!("select branch {branch} out of range 1..{}", subs.len())));
    }
    let mut out = body.to_vec();
    for (k, s) in subs.iter().enumerate() {
        if k + 1 != branch {
            out = splice(&out, s.start_line, s.end_line, &[]);
        }
    }
    Ok(out)
}

fn int_of(region: &Region, a: &Assignment, key: &str) -> Result<i64, TransformError> {
    match a.get(key) {
        Some(v) => v.as_int().ok_or_else(|| bad(region, format!("`{key}` = {v} is not an integer"))),
        None => Err(bad(region, format!("assignment lacks `{key}`"))),
    }
}

/// Build the region body for one assignment of its performance parameters.
pub fn instantiate(region: &Region, body: &[Stmt], a: &Assignment) -> Result<Vec<Stmt>, TransformError> {
    match region.feature {
        Feature::Unroll => {
            let (params, from, to) = varied_dims(region)?;
            let mut factors = BTreeMap::new();
            for p in &params {
                let f = int_of(region, a, &pp_name(region, p))?;
                if f < from || f > to {
                    return Err(bad(region, format!("{} = {f} outside {from}..{to}", pp_name(region, p))));
                }
                factors.insert(p.clone(), f);
            }
            unroll(body, &factors)
        }
        Feature::Variable => {
            let (params, _, _) = varied_dims(region)?;
            let mut out = Vec::with_capacity(body.len() + params.len());
            let mut rest = body.to_vec();
            for p in &params {
                let v = int_of(region, a, &pp_name(region, p))?;
                out.push(Stmt::assign(LValue::Scalar(p.clone()), Expr::Int(v)));
                if !writes(&rest, p) {
                    rest = rest.iter().map(|s| s.substitute(p, &Expr::Int(v))).collect();
                }
            }
            out.extend(rest);
            Ok(out)
        }
        Feature::Select => {
            let k = int_of(region, a, &select_pp(region))?;
            select_branch(region, body, usize::try_from(k).unwrap_or(0))
        }
        Feature::LoopFusionSplit | Feature::LoopFusion => {
            let key = variant_pp(region);
            let tag = a
                .get(&key)
                .and_then(|v| v.as_str())
                .ok_or_else(|| bad(region, format!("assignment lacks a string `{key}`")))?;
            structural_candidates(region, body)?
                .into_iter()
                .find(|(t, _, _)| t == tag)
                .map(|(_, p, _)| p)
                .ok_or_else(|| bad(region, format!("unknown variant `{tag}`")))
        }
        Feature::Define => Ok(body.to_vec()),
    }
}

/// Whether any statement assigns `name` or uses it as a loop index.
fn writes(stmts: &[Stmt], name: &Ident) -> bool {
    let mut hit = false;
    for s in stmts {
        s.walk(&mut |t| {
            if let Some(l) = t.as_loop() {
                hit |= l.var == *name;
            }
            hit |= t.assigns().iter().any(|a| matches!(&a.target, LValue::Scalar(n) if n == name));
        });
    }
    hit
}

fn cartesian(n: usize, from: i64, to: i64) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (from..=to).map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

/// Every candidate of a region, in search order.
pub fn enumerate_candidates(region: &Region) -> Result<VariantSet, TransformError> {
    let body = &region.body;
    let mut variants = Vec::new();
    match region.feature {
        Feature::Unroll | Feature::Variable => {
            let (params, from, to) = varied_dims(region)?;
            for values in cartesian(params.len(), from, to) {
                let assignment: Assignment = params
                    .iter()
                    .zip(&values)
                    .map(|(p, v)| (pp_name(region, p), ParamValue::Int(*v)))
                    .collect();
                let id: Vec<String> = params.iter().zip(&values).map(|(p, v)| format!("{}{v}", p.lower())).collect();
                let program = instantiate(region, body, &assignment)?;
                let provenance = match region.feature {
                    Feature::Unroll => vec![format!("unroll {}", id.join(" "))],
                    _ => vec![format!("set {}", id.join(" "))],
                };
                variants.push(Variant { id: id.join("_"), program, assignment, provenance });
            }
        }
        Feature::Select => {
            let n = region.sub_regions_of(SubRegionKind::Select).count();
            if n == 0 {
                return Err(TransformError::NotEnumerable(region.name.clone()));
            }
            for k in 1..=n {
                let assignment: Assignment = [(select_pp(region), ParamValue::Int(k as i64))].into();
                let program = select_branch(region, body, k)?;
                variants.push(Variant {
                    id: format!("branch{k}"),
                    program,
                    assignment,
                    provenance: vec![format!("select branch {k}")],
                });
            }
        }
        Feature::LoopFusionSplit | Feature::LoopFusion => {
            for (tag, program, provenance) in structural_candidates(region, body)? {
                let assignment: Assignment = [(variant_pp(region), ParamValue::Str(tag.clone()))].into();
                variants.push(Variant { id: sanitize_tag(&tag), program, assignment, provenance });
            }
        }
        Feature::Define => return Err(TransformError::NotEnumerable(region.name.clone())),
    }
    Ok(VariantSet { region: region.name.clone(), variants })
}

/// Statements of a sub-region-free body, ignoring passthrough lines; used
/// to compare programs structurally.
pub fn significant_stmts(stmts: &[Stmt]) -> Vec<Stmt> {
    stmts
        .iter()
        .filter(|s| !matches!(s.kind, StmtKind::Passthrough(_)))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directive::parse_source;

    const SAMPLE1: &str = "\
!OAT$ install unroll (i, j) region start
!OAT$ name MyMatMul
!OAT$ varied (i, j) from 1 to 16
do i = 1, n
  do j = 1, n
    do k = 1, n
      A(i, j) = A(i, j) + B(i, k)*C(k, j)
    enddo
  enddo
enddo
!OAT$ install unroll (i, j) region end
";

    #[test]
    fn unroll_region_enumerates_square_of_range() {
        let tree = parse_source(SAMPLE1).unwrap();
        let set = enumerate_candidates(&tree.regions[0]).unwrap();
        assert_eq!(set.len(), 256);
        assert_eq!(set.variants[0].id, "i1_j1");
        assert_eq!(set.variants[0].program, tree.regions[0].body);
        assert_eq!(set.get("i4_j8").unwrap().assignment["MyMatMul_I"], ParamValue::Int(4));
    }

    #[test]
    fn splice_replaces_range_inside_loop() {
        let src = "do i = 1, n\n  x = 1\n  y = 2\n  z = 3\nenddo\n";
        let prog = crate::kernel::parse_kernel(src).unwrap();
        let out = splice(&prog.stmts, 2, 4, &[Stmt::assign(LValue::Scalar("w".into()), Expr::Int(9))]);
        let text = crate::kernel::emit_source(&crate::kernel::KernelProgram::new(out));
        assert_eq!(text, "do i = 1, n\n  x = 1\n  w = 9\n  z = 3\nenddo\n");
    }

    #[test]
    fn sanitize() {
        assert_eq!(sanitize_tag("split@K+fuse(k,j)"), "split_K_fuse_k_j");
        assert_eq!(sanitize_tag("baseline"), "baseline");
    }
}
