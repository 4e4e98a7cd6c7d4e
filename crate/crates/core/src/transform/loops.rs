use super::TransformError;
use crate::kernel::{BinOp, DoLoop, Expr, Ident, Intrinsic, LValue, Stmt, StmtKind};
use std::collections::BTreeMap;

fn loop_vars(stmts: &[Stmt], out: &mut Vec<Ident>) {
    for s in stmts {
        s.walk(&mut |st| {
            if let StmtKind::Do(l) = &st.kind {
                out.push(l.var.clone());
            }
        });
    }
}

/// Unroll-and-jam every loop named in `factors`. The main loop steps by
/// `f*s` and is followed by a cleanup loop for the leftover iterations;
/// copies of inner loops with identical headers are jammed together.
pub fn unroll(stmts: &[Stmt], factors: &BTreeMap<Ident, i64>) -> Result<Vec<Stmt>, TransformError> {
    let mut vars = Vec::new();
    loop_vars(stmts, &mut vars);
    for (v, f) in factors {
        if !vars.contains(v) {
            return Err(TransformError::NoSuchLoop(v.to_string()));
        }
        if *f < 1 {
            return Err(TransformError::BadFactor { var: v.to_string(), factor: *f });
        }
    }
    unroll_list(stmts, factors)
}

fn unroll_list(stmts: &[Stmt], factors: &BTreeMap<Ident, i64>) -> Result<Vec<Stmt>, TransformError> {
    let mut out = Vec::with_capacity(stmts.len());
    for s in stmts {
        let StmtKind::Do(l) = &s.kind else {
            out.push(s.clone());
            continue;
        };
        let body = unroll_list(&l.body, factors)?;
        let f = factors.get(&l.var).copied().unwrap_or(1);
        if f == 1 {
            out.push(Stmt { kind: StmtKind::Do(DoLoop { body, ..l.clone() }), ..s.clone() });
            continue;
        }
        let step = l.const_step().filter(|s| *s > 0).ok_or_else(|| TransformError::NotUnrollable {
            var: l.var.to_string(),
            reason: "step must be a positive constant".into(),
        })?;
        let copies: Vec<Vec<Stmt>> = (0..f)
            .map(|k| {
                let with = Expr::Var(l.var.clone()).plus(k * step);
                body.iter().map(|st| st.substitute(&l.var, &with)).collect()
            })
            .collect();
        let fs = f * step;
        let main = DoLoop {
            var: l.var.clone(),
            lo: l.lo.clone(),
            hi: l.hi.clone().plus(-(f - 1) * step),
            step: Some(Expr::Int(fs)),
            body: jam(copies),
        };
        let span = match (&l.lo, &l.hi) {
            (Expr::Int(a), hi) => hi.clone().plus(step - a),
            (lo, hi) => Expr::bin(BinOp::Sub, hi.clone(), lo.clone()).plus(step),
        };
        let cleanup_lo = match (&l.lo, &span) {
            (Expr::Int(a), Expr::Int(d)) => Expr::Int(a + (d / fs) * fs),
            (lo, span) => Expr::bin(
                BinOp::Add,
                lo.clone(),
                Expr::bin(BinOp::Mul, Expr::bin(BinOp::Div, span.clone(), Expr::Int(fs)), Expr::Int(fs)),
            ),
        };
        let cleanup = DoLoop { var: l.var.clone(), lo: cleanup_lo, hi: l.hi.clone(), step: l.step.clone(), body };
        out.push(Stmt::new(StmtKind::Do(main)));
        out.push(Stmt::new(StmtKind::Do(cleanup)));
    }
    Ok(out)
}

fn same_header(a: &DoLoop, b: &DoLoop) -> bool {
    a.var == b.var && a.lo == b.lo && a.hi == b.hi && a.step == b.step
}

/// Merge unrolled copies: positions where every copy has a loop with the same
/// header become one loop over the jammed bodies; otherwise the copies are
/// laid out one after another.
fn jam(copies: Vec<Vec<Stmt>>) -> Vec<Stmt> {
    let n = copies[0].len();
    let jammable = copies.iter().all(|c| c.len() == n)
        && n > 0
        && (0..n).all(|p| match copies[0][p].as_loop() {
            Some(first) => copies.iter().all(|c| c[p].as_loop().is_some_and(|l| same_header(first, l))),
            None => false,
        });
    if !jammable {
        return copies.into_iter().flatten().collect();
    }
    (0..n)
        .map(|p| {
            let head = copies[0][p].as_loop().unwrap().clone();
            let inner: Vec<Vec<Stmt>> = copies.iter().map(|c| c[p].as_loop().unwrap().body.clone()).collect();
            Stmt { kind: StmtKind::Do(DoLoop { body: jam(inner), ..head }), ..copies[0][p].clone() }
        })
        .collect()
}

/// Where a nest is split and what gets recomputed in the second half.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub split_loops: Vec<Ident>,
    /// Source line of the `SplitPoint` marker.
    pub split_line: usize,
    pub copy_def: Vec<Stmt>,
    /// Source lines of the `SplitPointCopyInsert` markers.
    pub insert_lines: Vec<usize>,
}

fn significant(stmts: &[Stmt]) -> impl Iterator<Item = (usize, &Stmt)> {
    stmts.iter().enumerate().filter(|(_, s)| !matches!(s.kind, StmtKind::Passthrough(_)))
}

/// Split the nest at loop `at`: the loop is duplicated, the first copy keeps
/// the innermost statements before the split line, the second those after,
/// with the copy-def statements inserted at each insert point.
pub fn split_at(stmts: &[Stmt], spec: &SplitSpec, at: &Ident) -> Result<Vec<Stmt>, TransformError> {
    if !spec.split_loops.contains(at) {
        return Err(TransformError::NoSuchLoop(at.to_string()));
    }
    if !spec.insert_lines.is_empty() && spec.copy_def.is_empty() {
        return Err(TransformError::EmptyCopyDef);
    }
    let mut out = Vec::with_capacity(stmts.len() + 1);
    let mut done = false;
    for s in stmts {
        let inside = s.line_span().is_some_and(|(a, b)| a < spec.split_line && spec.split_line < b);
        match &s.kind {
            StmtKind::Do(_) if inside && !done => {
                out.extend(split_loop(s, spec, at, false)?);
                done = true;
            }
            _ => out.push(s.clone()),
        }
    }
    if !done {
        return Err(TransformError::NotPerfect("no loop contains the split point".into()));
    }
    Ok(out)
}

/// `below` is true once the split loop has been reached.
fn split_loop(s: &Stmt, spec: &SplitSpec, at: &Ident, below: bool) -> Result<Vec<Stmt>, TransformError> {
    let l = s.as_loop().unwrap();
    let here = below || l.var == *at;
    let inner: Vec<(usize, &Stmt)> = significant(&l.body).collect();
    let innermost = !(inner.len() == 1 && matches!(inner[0].1.kind, StmtKind::Do(_)));
    if !innermost {
        let (pos, child) = inner[0];
        let parts = split_loop(child, spec, at, here)?;
        if here {
            // Each half of the inner nest gets its own copy of this loop.
            return Ok(parts
                .into_iter()
                .map(|p| {
                    let mut body = l.body.clone();
                    body[pos] = p;
                    Stmt { kind: StmtKind::Do(DoLoop { body, ..l.clone() }), ..s.clone() }
                })
                .collect());
        }
        let mut body = l.body.clone();
        body.splice(pos..=pos, parts);
        return Ok(vec![Stmt { kind: StmtKind::Do(DoLoop { body, ..l.clone() }), ..s.clone() }]);
    }
    if !here {
        return Err(TransformError::NoSuchLoop(at.to_string()));
    }
    if l.body.iter().any(|st| matches!(st.kind, StmtKind::Do(_))) {
        return Err(TransformError::NotPerfect(format!("loop `{}` mixes loops and statements", l.var)));
    }
    let first: Vec<Stmt> = l.body.iter().filter(|st| st.line < spec.split_line).cloned().collect();
    let rest: Vec<&Stmt> = l.body.iter().filter(|st| st.line > spec.split_line).collect();
    if !rest.iter().any(|st| !matches!(st.kind, StmtKind::Passthrough(_))) {
        return Err(TransformError::EmptyHalf);
    }
    if !first.iter().any(|st| !matches!(st.kind, StmtKind::Passthrough(_))) {
        return Err(TransformError::EmptyHalf);
    }
    let mut second = Vec::new();
    let mut inserts = spec.insert_lines.iter().copied().filter(|&i| i > spec.split_line).peekable();
    for st in rest {
        while inserts.peek().is_some_and(|&i| i < st.line) {
            inserts.next();
            second.extend(spec.copy_def.iter().cloned());
        }
        second.push(st.clone());
    }
    for _ in inserts {
        second.extend(spec.copy_def.iter().cloned());
    }
    if spec.insert_lines.iter().any(|&i| i < spec.split_line) {
        return Err(TransformError::NotPerfect("copy insert point before the split point".into()));
    }
    Ok([first, second]
        .into_iter()
        .map(|body| Stmt { kind: StmtKind::Do(DoLoop { body, ..l.clone() }), ..s.clone() })
        .collect())
}

fn trip_count(l: &DoLoop) -> Result<Expr, TransformError> {
    let step = l.const_step().filter(|s| *s != 0).ok_or_else(|| TransformError::NotPerfect(format!(
        "loop `{}` needs a nonzero constant step to be fused",
        l.var
    )))?;
    let span = match (&l.lo, &l.hi) {
        (Expr::Int(a), Expr::Int(b)) => return Ok(Expr::Int(((b - a + step) / step).max(0))),
        (Expr::Int(a), hi) => hi.clone().plus(step - a),
        (lo, hi) => Expr::bin(BinOp::Sub, hi.clone(), lo.clone()).plus(step),
    };
    let t = if step == 1 { span } else { Expr::bin(BinOp::Div, span, Expr::Int(step)) };
    Ok(Expr::Call(Intrinsic::Max, vec![t, Expr::Int(0)]))
}

fn product(v: &[Expr]) -> Expr {
    v.iter().cloned().reduce(|a, b| Expr::bin(BinOp::Mul, a, b)).unwrap_or(Expr::Int(1))
}

fn fresh_name(base: String, taken: &[Ident]) -> Ident {
    let mut name = Ident::new(base.clone());
    let mut n = 2;
    while taken.contains(&name) {
        name = Ident::new(format!("{base}{n}"));
        n += 1;
    }
    name
}

/// Collapse the perfectly nested loops `levels` (outermost first) into one
/// loop over a 0-based linear index; the original indices are recomputed
/// from it at the top of the body. Applies to every matching nest.
pub fn fuse(stmts: &[Stmt], levels: &[Ident]) -> Result<Vec<Stmt>, TransformError> {
    if levels.len() < 2 {
        return Ok(stmts.to_vec());
    }
    let mut taken = Vec::new();
    for s in stmts {
        s.walk(&mut |st| {
            if let StmtKind::Do(l) = &st.kind {
                taken.push(l.var.clone());
            }
            for a in st.assigns() {
                taken.push(a.target.name().clone());
            }
        });
    }
    let mut names = Vec::new();
    for s in stmts {
        let mut v = Vec::new();
        s.walk(&mut |st| {
            if let StmtKind::Do(l) = &st.kind {
                l.lo.scalar_names(&mut v);
                l.hi.scalar_names(&mut v);
            }
            for a in st.assigns() {
                a.value.scalar_names(&mut v);
            }
        });
        names.extend(v);
    }
    taken.extend(names);
    let idx = fresh_name(format!("idx_{}", levels.iter().map(|v| v.lower()).collect::<String>()), &taken);
    let mut hits = 0;
    let out = fuse_list(stmts, levels, &idx, &mut hits)?;
    if hits == 0 {
        return Err(TransformError::NoSuchLoop(levels[0].to_string()));
    }
    Ok(out)
}

fn fuse_list(stmts: &[Stmt], levels: &[Ident], idx: &Ident, hits: &mut usize) -> Result<Vec<Stmt>, TransformError> {
    let mut out = Vec::with_capacity(stmts.len());
    for s in stmts {
        let StmtKind::Do(l) = &s.kind else {
            out.push(s.clone());
            continue;
        };
        if l.var != levels[0] {
            let body = fuse_list(&l.body, levels, idx, hits)?;
            out.push(Stmt { kind: StmtKind::Do(DoLoop { body, ..l.clone() }), ..s.clone() });
            continue;
        }
        let mut chain = vec![l];
        for want in &levels[1..] {
            let cur = chain.last().unwrap();
            match cur.body.as_slice() {
                [only] if only.as_loop().is_some_and(|n| n.var == *want) => chain.push(only.as_loop().unwrap()),
                _ => {
                    return Err(TransformError::NotPerfect(format!(
                        "loop `{}` does not directly and solely contain loop `{want}`",
                        cur.var
                    )))
                }
            }
        }
        for (i, inner) in chain.iter().enumerate().skip(1) {
            for outer in &chain[..i] {
                let reads = |e: &Expr| e.mentions(&outer.var);
                if reads(&inner.lo) || reads(&inner.hi) || inner.step.as_ref().is_some_and(reads) {
                    return Err(TransformError::NotPerfect(format!(
                        "bounds of loop `{}` depend on `{}`",
                        inner.var, outer.var
                    )));
                }
            }
        }
        let trips: Vec<Expr> = chain.iter().map(|c| trip_count(c)).collect::<Result<_, _>>()?;
        let m = chain.len();
        let mut body = Vec::with_capacity(m + chain[m - 1].body.len());
        for (i, c) in chain.iter().enumerate() {
            let below = product(&trips[i + 1..]);
            let mut pos = if i + 1 == m {
                Expr::Var(idx.clone())
            } else {
                Expr::bin(BinOp::Div, Expr::Var(idx.clone()), below)
            };
            if i > 0 {
                pos = Expr::Call(Intrinsic::Mod, vec![pos, trips[i].clone()]);
            }
            let step = c.const_step().unwrap();
            let value = match &c.lo {
                Expr::Int(0) => pos.times(step),
                lo => Expr::bin(BinOp::Add, lo.clone(), pos.times(step)),
            };
            body.push(Stmt::assign(LValue::Scalar(c.var.clone()), value));
        }
        body.extend(fuse_list(&chain[m - 1].body, levels, idx, hits)?);
        *hits += 1;
        let total = match product(&trips) {
            Expr::Int(t) => Expr::Int(t - 1),
            t => t.plus(-1),
        };
        out.push(Stmt {
            kind: StmtKind::Do(DoLoop { var: idx.clone(), lo: Expr::Int(0), hi: total, step: None, body }),
            ..s.clone()
        });
    }
    Ok(out)
}

/// Vars of the chain of singly nested loops starting at the first loop in
/// `stmts`, outermost first. Passthrough lines are skipped at every level.
pub fn nest_chain(stmts: &[Stmt]) -> Vec<Ident> {
    let mut out = Vec::new();
    let mut cur = stmts;
    loop {
        let sig: Vec<&Stmt> = significant(cur).map(|(_, s)| s).collect();
        match sig.as_slice() {
            [only] if only.as_loop().is_some() => {
                let l = only.as_loop().unwrap();
                out.push(l.var.clone());
                cur = &l.body;
            }
            _ => break,
        }
    }
    out
}
