use super::TransformError;
use crate::kernel::{Expr, Ident, LValue, Stmt, StmtKind};

/// The two statement groups of a pair of `RotationOrder` sub regions.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationSpec {
    pub groups: [Vec<Stmt>; 2],
}

fn names_read(s: &Stmt) -> Vec<Ident> {
    let mut out = Vec::new();
    for a in s.assigns() {
        let mut exprs = vec![&a.value];
        if let LValue::Elem(_, idx) = &a.target {
            exprs.extend(idx.iter());
        }
        for e in exprs {
            e.walk(&mut |x| match x {
                Expr::Var(n) | Expr::Elem(n, _) => out.push(n.clone()),
                _ => {}
            });
        }
    }
    out
}

fn names_written(s: &Stmt) -> Vec<Ident> {
    s.assigns().iter().map(|a| a.target.name().clone()).collect()
}

fn conflict(a: &Stmt, b: &Stmt) -> Option<Ident> {
    let (wa, wb) = (names_written(a), names_written(b));
    let (ra, rb) = (names_read(a), names_read(b));
    wa.iter()
        .find(|n| rb.contains(n) || wb.contains(n))
        .or_else(|| wb.iter().find(|n| ra.contains(n)))
        .cloned()
}

/// Locate `block` as a contiguous run inside some statement list and
/// rebuild the tree with `replace` in its place.
fn replace_run(stmts: &[Stmt], block: &[Stmt], replace: &[Stmt]) -> Option<Vec<Stmt>> {
    let same = |a: &Stmt, b: &Stmt| a == b && a.line == b.line;
    if let Some(p) = (0..stmts.len()).find(|&p| {
        p + block.len() <= stmts.len() && block.iter().zip(&stmts[p..]).all(|(x, y)| same(x, y))
    }) {
        let mut out = stmts[..p].to_vec();
        out.extend_from_slice(replace);
        out.extend_from_slice(&stmts[p + block.len()..]);
        return Some(out);
    }
    for (i, s) in stmts.iter().enumerate() {
        if let StmtKind::Do(l) = &s.kind {
            if let Some(body) = replace_run(&l.body, block, replace) {
                let mut out = stmts.to_vec();
                out[i].as_loop_mut().unwrap().body = body;
                return Some(out);
            }
        }
    }
    None
}

/// The distinct orderings of the rotated statements: grouped as written
/// (d1 d2 .. u1 u2 ..) and interleaved (d1 u1 d2 u2 ..).
pub fn reorder_statements(stmts: &[Stmt], spec: &RotationSpec) -> Result<Vec<Vec<Stmt>>, TransformError> {
    let [defs, uses] = &spec.groups;
    if defs.len() != uses.len() || defs.is_empty() {
        return Err(TransformError::UnequalGroups { first: defs.len(), second: uses.len() });
    }
    // Interleaving moves u_q ahead of d_p for every p > q.
    for (q, u) in uses.iter().enumerate() {
        for d in &defs[q + 1..] {
            if let Some(n) = conflict(d, u) {
                return Err(TransformError::Dependence(format!(
                    "`{n}` is shared by statements at lines {} and {}",
                    d.line, u.line
                )));
            }
        }
    }
    let grouped: Vec<Stmt> = defs.iter().chain(uses).cloned().collect();
    let interleaved: Vec<Stmt> = defs.iter().zip(uses).flat_map(|(d, u)| [d.clone(), u.clone()]).collect();
    let mut out = vec![stmts.to_vec()];
    if interleaved != grouped {
        let v = replace_run(stmts, &grouped, &interleaved)
            .ok_or_else(|| TransformError::NotPerfect("rotation groups are not adjacent in one block".into()))?;
        out.push(v);
    } else if replace_run(stmts, &grouped, &grouped).is_none() {
        return Err(TransformError::NotPerfect("rotation groups are not adjacent in one block".into()));
    }
    Ok(out)
}
