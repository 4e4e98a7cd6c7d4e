use super::ast::*;
use super::emit::stmt_summary;
use super::KernelError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
}

impl Value {
    pub fn as_f64(self) -> f64 {
        match self {
            Value::Int(v) => v as f64,
            Value::Real(v) => v,
        }
    }

    pub fn as_int(self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(v),
            Value::Real(_) => None,
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Real(v)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Real(v) => write!(f, "{v:?}"),
        }
    }
}

/// Dense column-major array with 1-based subscripts.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub extents: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn zeros(extents: Vec<usize>) -> Self {
        let n = extents.iter().product();
        Array { extents, data: vec![0.0; n] }
    }

    pub fn offset(&self, idx: &[i64]) -> Option<usize> {
        if idx.len() != self.extents.len() {
            return None;
        }
        let mut off = 0usize;
        let mut stride = 1usize;
        for (&i, &e) in idx.iter().zip(&self.extents) {
            if i < 1 || i as u64 > e as u64 {
                return None;
            }
            off += (i as usize - 1) * stride;
            stride *= e;
        }
        Some(off)
    }

    pub fn get(&self, idx: &[i64]) -> Option<f64> {
        self.offset(idx).map(|o| self.data[o])
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExecEnv {
    pub scalars: BTreeMap<Ident, Value>,
    pub arrays: BTreeMap<Ident, Array>,
    pub rng_seed: u64,
}

impl ExecEnv {
    pub fn new(rng_seed: u64) -> Self {
        ExecEnv { rng_seed, ..Default::default() }
    }

    pub fn bind(&mut self, name: &str, v: impl Into<Value>) {
        self.scalars.insert(Ident::new(name), v.into());
    }

    pub fn scalar(&self, name: &str) -> Option<Value> {
        self.scalars.get(&Ident::new(name)).copied()
    }

    pub fn array(&self, name: &str) -> Option<&Array> {
        self.arrays.get(&Ident::new(name))
    }

    fn set_scalar(&mut self, name: &Ident, v: Value) {
        match self.scalars.get_mut(name) {
            Some(slot) => *slot = v,
            None => {
                self.scalars.insert(name.clone(), v);
            }
        }
    }

    /// Build an environment for `prog`: `bindings` are copied in, every array
    /// is allocated (declared extents, or extents inferred from the loop
    /// ranges that index it) and filled with values in [0.5, 1.5), and every
    /// free scalar that is read but never written gets a value from the same
    /// stream.
    pub fn seeded(prog: &KernelProgram, bindings: &BTreeMap<Ident, Value>, seed: u64) -> Result<ExecEnv, KernelError> {
        let mut env = ExecEnv::new(seed);
        env.scalars = bindings.clone();
        for (name, extents) in infer_extents(prog, bindings)? {
            env.arrays.insert(name, Array::zeros(extents));
        }
        let free = free_scalars(prog, bindings);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for a in env.arrays.values_mut() {
            for x in a.data.iter_mut() {
                *x = rng.gen_range(0.5..1.5);
            }
        }
        for name in free {
            env.scalars.insert(name, Value::Real(rng.gen_range(0.5..1.5)));
        }
        Ok(env)
    }
}

/// Executed-work counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCount {
    /// Assignments executed (each part of a `;` line counts once).
    pub assignments: u64,
    /// Loop body executions.
    pub iterations: u64,
}

impl OpCount {
    pub fn total(&self) -> u64 {
        self.assignments + self.iterations
    }

    fn add(&mut self, o: OpCount) {
        self.assignments += o.assignments;
        self.iterations += o.iterations;
    }
}

trait Scope {
    fn scalar(&self, n: &Ident) -> Option<Value>;
    fn element(&self, n: &Ident, idx: &[i64]) -> Result<f64, KernelError>;
}

impl Scope for ExecEnv {
    fn scalar(&self, n: &Ident) -> Option<Value> {
        self.scalars.get(n).copied()
    }

    fn element(&self, n: &Ident, idx: &[i64]) -> Result<f64, KernelError> {
        let a = self.arrays.get(n).ok_or_else(|| KernelError::UnknownArray(n.to_string()))?;
        if a.extents.len() != idx.len() {
            return Err(KernelError::Rank { name: n.to_string(), used: idx.len(), declared: a.extents.len() });
        }
        a.get(idx).ok_or_else(|| out_of_bounds(n, idx, a))
    }
}

struct FnScope<'a>(&'a dyn Fn(&Ident) -> Option<Value>);

impl Scope for FnScope<'_> {
    fn scalar(&self, n: &Ident) -> Option<Value> {
        (self.0)(n)
    }

    fn element(&self, n: &Ident, _: &[i64]) -> Result<f64, KernelError> {
        Err(KernelError::UnknownArray(n.to_string()))
    }
}

fn out_of_bounds(n: &Ident, idx: &[i64], a: &Array) -> KernelError {
    KernelError::OutOfBounds {
        line: 0,
        stmt: String::new(),
        array: n.to_string(),
        index: idx.to_vec(),
        extents: a.extents.clone(),
    }
}

/// Evaluate a scalar expression against a name lookup. Array references
/// are errors.
pub fn eval_expr(e: &Expr, lookup: &dyn Fn(&Ident) -> Option<Value>) -> Result<Value, KernelError> {
    eval(e, &FnScope(lookup))
}

fn overflow(op: &str) -> KernelError {
    KernelError::Overflow(op.to_string())
}

fn eval(e: &Expr, s: &dyn Scope) -> Result<Value, KernelError> {
    Ok(match e {
        Expr::Int(v) => Value::Int(*v),
        Expr::Real(v) => Value::Real(*v),
        Expr::Var(n) => s.scalar(n).ok_or_else(|| KernelError::Unbound(n.to_string()))?,
        Expr::Elem(n, args) => {
            let idx = subscripts(args, s)?;
            Value::Real(s.element(n, &idx)?)
        }
        Expr::Neg(a) => match eval(a, s)? {
            Value::Int(v) => Value::Int(v.checked_neg().ok_or_else(|| overflow("-"))?),
            Value::Real(v) => Value::Real(-v),
        },
        Expr::Bin(op, a, b) => binop(*op, eval(a, s)?, eval(b, s)?)?,
        Expr::Call(f, args) => {
            let vals = args.iter().map(|a| eval(a, s)).collect::<Result<Vec<_>, _>>()?;
            intrinsic(*f, &vals)?
        }
    })
}

fn subscripts(args: &[Expr], s: &dyn Scope) -> Result<Vec<i64>, KernelError> {
    args.iter()
        .map(|a| match eval(a, s)? {
            Value::Int(v) => Ok(v),
            Value::Real(v) => Err(KernelError::Type(format!("real subscript {v:?} in `{}`", super::expr_to_string(a)))),
        })
        .collect()
}

fn binop(op: BinOp, a: Value, b: Value) -> Result<Value, KernelError> {
    use Value::*;
    Ok(match (a, b) {
        (Int(x), Int(y)) => Int(match op {
            BinOp::Add => x.checked_add(y).ok_or_else(|| overflow("+"))?,
            BinOp::Sub => x.checked_sub(y).ok_or_else(|| overflow("-"))?,
            BinOp::Mul => x.checked_mul(y).ok_or_else(|| overflow("*"))?,
            BinOp::Div => {
                if y == 0 {
                    return Err(KernelError::Type("integer division by zero".into()));
                }
                x.checked_div(y).ok_or_else(|| overflow("/"))?
            }
            BinOp::Pow => {
                if y < 0 {
                    match x {
                        1 => 1,
                        -1 if y % 2 == 0 => 1,
                        -1 => -1,
                        0 => return Err(KernelError::Type("zero raised to a negative power".into())),
                        _ => 0,
                    }
                } else {
                    let e = u32::try_from(y).map_err(|_| overflow("**"))?;
                    x.checked_pow(e).ok_or_else(|| overflow("**"))?
                }
            }
        }),
        (x, y) => {
            let (x, yf) = (x.as_f64(), y.as_f64());
            Real(match op {
                BinOp::Add => x + yf,
                BinOp::Sub => x - yf,
                BinOp::Mul => x * yf,
                BinOp::Div => x / yf,
                BinOp::Pow => match y {
                    Int(k) if i32::try_from(k).is_ok() => x.powi(k as i32),
                    _ => x.powf(yf),
                },
            })
        }
    })
}

fn intrinsic(f: Intrinsic, v: &[Value]) -> Result<Value, KernelError> {
    use Value::*;
    let all_int = v.iter().all(|x| matches!(x, Int(_)));
    Ok(match f {
        Intrinsic::Abs => match v[0] {
            Int(x) => Int(x.checked_abs().ok_or_else(|| overflow("abs"))?),
            Real(x) => Real(x.abs()),
        },
        Intrinsic::Dlog | Intrinsic::Log => Real(v[0].as_f64().ln()),
        Intrinsic::Sqrt => Real(v[0].as_f64().sqrt()),
        Intrinsic::Min | Intrinsic::Max => {
            let pick_min = f == Intrinsic::Min;
            if all_int {
                let it = v.iter().filter_map(|x| x.as_int());
                Int(if pick_min { it.min() } else { it.max() }.unwrap())
            } else {
                let it = v.iter().map(|x| x.as_f64());
                Real(if pick_min { it.fold(f64::INFINITY, f64::min) } else { it.fold(f64::NEG_INFINITY, f64::max) })
            }
        }
        Intrinsic::Mod => match (v[0], v[1]) {
            (Int(_), Int(0)) => return Err(KernelError::Type("mod by zero".into())),
            (Int(a), Int(b)) => Int(a.checked_rem(b).ok_or_else(|| overflow("mod"))?),
            (a, b) => Real(a.as_f64() % b.as_f64()),
        },
    })
}

fn int_of(e: &Expr, s: &dyn Scope, what: &str) -> Result<i64, KernelError> {
    match eval(e, s)? {
        Value::Int(v) => Ok(v),
        Value::Real(v) => Err(KernelError::Type(format!("loop {what} must be an integer, got {v:?}"))),
    }
}

/// Bounds of a loop: (first value, step, trip count).
fn loop_range(l: &DoLoop, s: &dyn Scope) -> Result<(i64, i64, u64), KernelError> {
    let lo = int_of(&l.lo, s, "bound")?;
    let hi = int_of(&l.hi, s, "bound")?;
    let step = match &l.step {
        None => 1,
        Some(e) => int_of(e, s, "step")?,
    };
    if step == 0 {
        return Err(KernelError::Type(format!("zero step in `do {}`", l.var)));
    }
    let span = (hi as i128 - lo as i128 + step as i128) / step as i128;
    let trip = if span > 0 { span as u64 } else { 0 };
    Ok((lo, step, trip))
}

fn loop_value(lo: i64, step: i64, t: u64) -> Result<i64, KernelError> {
    let v = lo as i128 + step as i128 * t as i128;
    i64::try_from(v).map_err(|_| overflow("loop index"))
}

fn locate(err: KernelError, s: &Stmt) -> KernelError {
    match err {
        KernelError::OutOfBounds { stmt, line, array, index, extents } if stmt.is_empty() => {
            KernelError::OutOfBounds { line: if line == 0 { s.line } else { line }, stmt: stmt_summary(s), array, index, extents }
        }
        e => e,
    }
}

fn assign(a: &Assign, env: &mut ExecEnv) -> Result<(), KernelError> {
    let v = eval(&a.value, env)?;
    match &a.target {
        LValue::Scalar(n) => env.set_scalar(n, v),
        LValue::Elem(n, idx) => {
            let idx = subscripts(idx, env)?;
            let arr = env.arrays.get_mut(n).ok_or_else(|| KernelError::UnknownArray(n.to_string()))?;
            if arr.extents.len() != idx.len() {
                return Err(KernelError::Rank { name: n.to_string(), used: idx.len(), declared: arr.extents.len() });
            }
            match arr.offset(&idx) {
                Some(o) => arr.data[o] = v.as_f64(),
                None => return Err(out_of_bounds(n, &idx, arr)),
            }
        }
    }
    Ok(())
}

pub fn execute_stmts(stmts: &[Stmt], env: &mut ExecEnv) -> Result<OpCount, KernelError> {
    let mut count = OpCount::default();
    for s in stmts {
        match &s.kind {
            StmtKind::Passthrough(_) => {}
            StmtKind::Assign(_) | StmtKind::Multi(_) => {
                for a in s.assigns() {
                    assign(a, env).map_err(|e| locate(e, s))?;
                    count.assignments += 1;
                }
            }
            StmtKind::Do(l) => {
                let (lo, step, trip) = loop_range(l, env).map_err(|e| locate(e, s))?;
                for t in 0..trip {
                    env.set_scalar(&l.var, Value::Int(loop_value(lo, step, t)?));
                    count.add(execute_stmts(&l.body, env)?);
                }
                count.iterations += trip;
                env.set_scalar(&l.var, Value::Int(loop_value(lo, step, trip)?));
            }
        }
    }
    Ok(count)
}

fn allocate_decls(prog: &KernelProgram, env: &mut ExecEnv) -> Result<(), KernelError> {
    for d in &prog.decls {
        if env.arrays.contains_key(&d.name) {
            continue;
        }
        let mut ext = Vec::new();
        for e in &d.extents {
            let v = int_of(e, env, "extent")?;
            ext.push(usize::try_from(v).map_err(|_| KernelError::Extent {
                array: d.name.to_string(),
                reason: format!("negative extent {v}"),
            })?);
        }
        env.arrays.insert(d.name.clone(), Array::zeros(ext));
    }
    Ok(())
}

/// Run `prog` in place, returning executed-work counters. Declared arrays
/// missing from `env` are allocated zero-filled.
pub fn execute(prog: &KernelProgram, env: &mut ExecEnv) -> Result<OpCount, KernelError> {
    allocate_decls(prog, env)?;
    execute_stmts(&prog.stmts, env)
}

pub fn interpret(prog: &KernelProgram, mut env: ExecEnv) -> Result<ExecEnv, KernelError> {
    execute(prog, &mut env)?;
    Ok(env)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeasureMode {
    /// Count executed assignments.
    Deterministic,
    /// Median wall-clock seconds.
    Wall,
}

/// Cost of running `prog` on a copy of `env`.
pub fn measure(prog: &KernelProgram, env: &ExecEnv, repetitions: usize, mode: MeasureMode) -> Result<f64, KernelError> {
    match mode {
        MeasureMode::Deterministic => {
            let mut e = env.clone();
            Ok(execute(prog, &mut e)?.assignments as f64)
        }
        MeasureMode::Wall => {
            let mut times = Vec::with_capacity(repetitions.max(1));
            for _ in 0..repetitions.max(1) {
                let mut e = env.clone();
                let t = Instant::now();
                execute(prog, &mut e)?;
                times.push(t.elapsed().as_secs_f64());
            }
            times.sort_by(f64::total_cmp);
            let n = times.len();
            Ok(if n % 2 == 1 { times[n / 2] } else { (times[n / 2 - 1] + times[n / 2]) / 2.0 })
        }
    }
}

fn assigned_scalars(stmts: &[Stmt]) -> BTreeSet<Ident> {
    let mut out = BTreeSet::new();
    for s in stmts {
        s.walk(&mut |st| {
            for a in st.assigns() {
                if let LValue::Scalar(n) = &a.target {
                    out.insert(n.clone());
                }
            }
        });
    }
    out
}

fn bounds_mention(l: &DoLoop, name: &Ident) -> bool {
    l.lo.mentions(name) || l.hi.mentions(name) || l.step.as_ref().is_some_and(|s| s.mentions(name))
}

/// Work counters computed from loop bounds alone, without touching array
/// data. Equals what [`execute_stmts`] would report. Loop bounds that read
/// scalars assigned by the statements themselves make the count data
/// dependent and are rejected.
pub fn count_operations(stmts: &[Stmt], bindings: &BTreeMap<Ident, Value>) -> Result<OpCount, KernelError> {
    let assigned = assigned_scalars(stmts);
    let mut scope = bindings.clone();
    for n in &assigned {
        scope.remove(n);
    }
    count_in(stmts, &mut scope, &assigned)
}

fn count_in(stmts: &[Stmt], scope: &mut BTreeMap<Ident, Value>, assigned: &BTreeSet<Ident>) -> Result<OpCount, KernelError> {
    let mut count = OpCount::default();
    for s in stmts {
        match &s.kind {
            StmtKind::Passthrough(_) => {}
            StmtKind::Assign(_) | StmtKind::Multi(_) => count.assignments += s.assigns().len() as u64,
            StmtKind::Do(l) => {
                if let Some(n) = assigned.iter().find(|n| bounds_mention(l, n)) {
                    return Err(KernelError::NotAnalyzable(format!("bounds of `do {}` read `{n}`", l.var)));
                }
                let (lo, step, trip) = {
                    let lookup = |n: &Ident| scope.get(n).copied();
                    loop_range(l, &FnScope(&lookup))?
                };
                let mut inner_depends = false;
                for b in &l.body {
                    b.walk(&mut |st| {
                        if let Some(inner) = st.as_loop() {
                            inner_depends |= bounds_mention(inner, &l.var);
                        }
                    });
                }
                if trip > 0 {
                    if inner_depends {
                        for t in 0..trip {
                            scope.insert(l.var.clone(), Value::Int(loop_value(lo, step, t)?));
                            count.add(count_in(&l.body, scope, assigned)?);
                        }
                    } else {
                        scope.insert(l.var.clone(), Value::Int(lo));
                        let c = count_in(&l.body, scope, assigned)?;
                        count.assignments += c.assignments.checked_mul(trip).ok_or_else(|| overflow("count"))?;
                        count.iterations += c.iterations.checked_mul(trip).ok_or_else(|| overflow("count"))?;
                    }
                }
                count.iterations += trip;
                scope.insert(l.var.clone(), Value::Int(loop_value(lo, step, trip)?));
            }
        }
    }
    Ok(count)
}

/// Element-wise comparison of every array in two environments.
#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub array: String,
    pub detail: String,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}`: {}", self.array, self.detail)
    }
}

pub fn states_equal(a: &ExecEnv, b: &ExecEnv, rel_tol: f64) -> Result<(), Mismatch> {
    for (name, x) in &a.arrays {
        let Some(y) = b.arrays.get(name) else {
            return Err(Mismatch { array: name.to_string(), detail: "missing on the right".into() });
        };
        if x.extents != y.extents {
            return Err(Mismatch {
                array: name.to_string(),
                detail: format!("extents {:?} vs {:?}", x.extents, y.extents),
            });
        }
        for (i, (&p, &q)) in x.data.iter().zip(&y.data).enumerate() {
            let ok = p == q || (p - q).abs() <= rel_tol * p.abs().max(q.abs()) || (p.is_nan() && q.is_nan());
            if !ok {
                return Err(Mismatch { array: name.to_string(), detail: format!("element {i}: {p:?} vs {q:?}") });
            }
        }
    }
    if let Some(name) = b.arrays.keys().find(|n| !a.arrays.contains_key(*n)) {
        return Err(Mismatch { array: name.to_string(), detail: "missing on the left".into() });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
struct Iv {
    lo: i64,
    hi: i64,
}

fn corners(vals: [i64; 4]) -> Iv {
    Iv { lo: *vals.iter().min().unwrap(), hi: *vals.iter().max().unwrap() }
}

fn interval(e: &Expr, scope: &BTreeMap<Ident, Iv>, assigned: &BTreeSet<Ident>) -> Result<Iv, String> {
    let iv = |x: &Expr| interval(x, scope, assigned);
    Ok(match e {
        Expr::Int(v) => Iv { lo: *v, hi: *v },
        Expr::Real(v) => return Err(format!("real value {v:?} in a subscript")),
        Expr::Var(n) => match scope.get(n) {
            Some(r) => *r,
            None if assigned.contains(n) => return Err(format!("subscript depends on computed scalar `{n}`")),
            None => return Err(format!("`{n}` is unbound")),
        },
        Expr::Elem(n, _) => return Err(format!("subscript reads array `{n}`")),
        Expr::Neg(a) => {
            let a = iv(a)?;
            Iv { lo: a.hi.saturating_neg(), hi: a.lo.saturating_neg() }
        }
        Expr::Bin(op, a, b) => {
            let (a, b) = (iv(a)?, iv(b)?);
            match op {
                BinOp::Add => Iv { lo: a.lo.saturating_add(b.lo), hi: a.hi.saturating_add(b.hi) },
                BinOp::Sub => Iv { lo: a.lo.saturating_sub(b.hi), hi: a.hi.saturating_sub(b.lo) },
                BinOp::Mul => corners([
                    a.lo.saturating_mul(b.lo),
                    a.lo.saturating_mul(b.hi),
                    a.hi.saturating_mul(b.lo),
                    a.hi.saturating_mul(b.hi),
                ]),
                BinOp::Div => {
                    if b.lo <= 0 && b.hi >= 0 {
                        return Err("divisor range contains zero".into());
                    }
                    corners([a.lo / b.lo, a.lo / b.hi, a.hi / b.lo, a.hi / b.hi])
                }
                BinOp::Pow => {
                    if b.lo != b.hi || b.lo < 0 || b.lo > 62 {
                        return Err("non-constant exponent in a subscript".into());
                    }
                    let k = b.lo as u32;
                    let p = |x: i64| x.saturating_pow(k);
                    let mut r = corners([p(a.lo), p(a.hi), p(a.lo), p(a.hi)]);
                    if a.lo < 0 && a.hi > 0 {
                        r.lo = r.lo.min(0);
                    }
                    r
                }
            }
        }
        Expr::Call(f, args) => {
            let vals = args.iter().map(iv).collect::<Result<Vec<_>, _>>()?;
            match f {
                Intrinsic::Min => Iv {
                    lo: vals.iter().map(|v| v.lo).min().unwrap(),
                    hi: vals.iter().map(|v| v.hi).min().unwrap(),
                },
                Intrinsic::Max => Iv {
                    lo: vals.iter().map(|v| v.lo).max().unwrap(),
                    hi: vals.iter().map(|v| v.hi).max().unwrap(),
                },
                Intrinsic::Abs => {
                    let a = vals[0];
                    if a.lo >= 0 {
                        a
                    } else if a.hi <= 0 {
                        Iv { lo: -a.hi, hi: -a.lo }
                    } else {
                        Iv { lo: 0, hi: a.hi.max(-a.lo) }
                    }
                }
                Intrinsic::Mod => {
                    let (a, b) = (vals[0], vals[1]);
                    let m = b.lo.saturating_abs().max(b.hi.saturating_abs()) - 1;
                    if a.lo >= 0 {
                        Iv { lo: 0, hi: m.min(a.hi) }
                    } else {
                        Iv { lo: -m, hi: m }
                    }
                }
                _ => return Err(format!("`{}` in a subscript", f.name())),
            }
        }
    })
}

struct ExtentScan<'a> {
    assigned: &'a BTreeSet<Ident>,
    shapes: BTreeMap<Ident, Vec<i64>>,
    failure: Option<KernelError>,
}

impl ExtentScan<'_> {
    fn note(&mut self, name: &Ident, idx: &[Expr], scope: &BTreeMap<Ident, Iv>) {
        if self.failure.is_some() {
            return;
        }
        let mut ranges = Vec::new();
        for e in idx {
            match interval(e, scope, self.assigned) {
                Ok(r) => ranges.push(r.hi),
                Err(reason) => {
                    self.failure = Some(KernelError::Extent { array: name.to_string(), reason });
                    return;
                }
            }
        }
        let shape = self.shapes.entry(name.clone()).or_insert_with(|| vec![1; ranges.len()]);
        if shape.len() != ranges.len() {
            self.failure =
                Some(KernelError::Rank { name: name.to_string(), used: ranges.len(), declared: shape.len() });
            return;
        }
        for (s, r) in shape.iter_mut().zip(ranges) {
            *s = (*s).max(r);
        }
    }

    fn expr(&mut self, e: &Expr, scope: &BTreeMap<Ident, Iv>) {
        let mut refs = Vec::new();
        e.walk(&mut |x| {
            if let Expr::Elem(n, idx) = x {
                refs.push((n.clone(), idx.clone()));
            }
        });
        for (n, idx) in refs {
            self.note(&n, &idx, scope);
        }
    }

    fn stmts(&mut self, stmts: &[Stmt], scope: &mut BTreeMap<Ident, Iv>) {
        for s in stmts {
            match &s.kind {
                StmtKind::Passthrough(_) => {}
                StmtKind::Assign(_) | StmtKind::Multi(_) => {
                    for a in s.assigns() {
                        if let LValue::Elem(n, idx) = &a.target {
                            self.note(n, idx, scope);
                            for i in idx {
                                self.expr(i, scope);
                            }
                        }
                        self.expr(&a.value, scope);
                    }
                }
                StmtKind::Do(l) => {
                    let range = (|| {
                        let lo = interval(&l.lo, scope, self.assigned)?;
                        let hi = interval(&l.hi, scope, self.assigned)?;
                        let step = match &l.step {
                            None => 1,
                            Some(e) => {
                                let r = interval(e, scope, self.assigned)?;
                                if r.lo > 0 {
                                    1
                                } else if r.hi < 0 {
                                    -1
                                } else {
                                    return Err("step sign unknown".to_string());
                                }
                            }
                        };
                        Ok(if step > 0 { Iv { lo: lo.lo, hi: hi.hi } } else { Iv { lo: hi.lo, hi: lo.hi } })
                    })();
                    let r = match range {
                        Ok(r) => r,
                        Err(reason) => {
                            if self.failure.is_none() {
                                self.failure = Some(KernelError::Extent {
                                    array: format!("(bounds of do {})", l.var),
                                    reason,
                                });
                            }
                            return;
                        }
                    };
                    if r.lo > r.hi {
                        continue;
                    }
                    let saved = scope.insert(l.var.clone(), r);
                    self.stmts(&l.body, scope);
                    match saved {
                        Some(v) => scope.insert(l.var.clone(), v),
                        None => scope.remove(&l.var),
                    };
                }
            }
        }
    }
}

fn infer_extents(
    prog: &KernelProgram,
    bindings: &BTreeMap<Ident, Value>,
) -> Result<BTreeMap<Ident, Vec<usize>>, KernelError> {
    let assigned = assigned_scalars(&prog.stmts);
    let mut out = BTreeMap::new();
    let lookup = |n: &Ident| bindings.get(n).copied();
    for d in &prog.decls {
        let mut ext = Vec::new();
        for e in &d.extents {
            let v = eval_expr(e, &lookup)?
                .as_int()
                .ok_or_else(|| KernelError::Type(format!("extent of `{}` is not an integer", d.name)))?;
            ext.push(v.max(0) as usize);
        }
        out.insert(d.name.clone(), ext);
    }
    let mut scope: BTreeMap<Ident, Iv> = bindings
        .iter()
        .filter(|(n, _)| !assigned.contains(*n))
        .filter_map(|(n, v)| v.as_int().map(|x| (n.clone(), Iv { lo: x, hi: x })))
        .collect();
    let mut scan = ExtentScan { assigned: &assigned, shapes: BTreeMap::new(), failure: None };
    scan.stmts(&prog.stmts, &mut scope);
    // Arrays referenced only inside loops that never run still get a shape.
    let mut ranks: BTreeMap<Ident, usize> = BTreeMap::new();
    prog.walk(&mut |s| {
        for a in s.assigns() {
            if let LValue::Elem(n, idx) = &a.target {
                ranks.entry(n.clone()).or_insert(idx.len());
            }
            a.value.walk(&mut |e| {
                if let Expr::Elem(n, idx) = e {
                    ranks.entry(n.clone()).or_insert(idx.len());
                }
            });
        }
    });
    if let Some(err) = scan.failure {
        return Err(err);
    }
    for (name, rank) in ranks {
        if out.contains_key(&name) {
            continue;
        }
        let shape = scan.shapes.remove(&name).unwrap_or_else(|| vec![1; rank]);
        out.insert(name, shape.into_iter().map(|h| h.max(1) as usize).collect());
    }
    Ok(out)
}

/// Scalars read somewhere but never written, bound, or used as loop
/// variables.
fn free_scalars(prog: &KernelProgram, bindings: &BTreeMap<Ident, Value>) -> BTreeSet<Ident> {
    let assigned = assigned_scalars(&prog.stmts);
    let mut loop_vars = BTreeSet::new();
    let mut reads = BTreeSet::new();
    prog.walk(&mut |s| {
        if let Some(l) = s.as_loop() {
            loop_vars.insert(l.var.clone());
        }
        for a in s.assigns() {
            let mut v = Vec::new();
            a.value.scalar_names(&mut v);
            if let LValue::Elem(_, idx) = &a.target {
                for i in idx {
                    i.scalar_names(&mut v);
                }
            }
            reads.extend(v);
        }
    });
    reads
        .into_iter()
        .filter(|n| !assigned.contains(n) && !loop_vars.contains(n) && !bindings.contains_key(n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::parse_kernel;
    use super::*;

    fn binds(pairs: &[(&str, i64)]) -> BTreeMap<Ident, Value> {
        pairs.iter().map(|(n, v)| (Ident::new(*n), Value::Int(*v))).collect()
    }

    const MATMUL: &str = "do i=1, n\n  do j=1, n\n    do k=1,n\n      A(i, j) = A(i, j) + B(i, k) * C(k, j)\n    enddo\n  enddo\nenddo\n";

    #[test]
    fn identity_matmul() {
        let p = parse_kernel(MATMUL).unwrap();
        let mut env = ExecEnv::new(0);
        env.bind("n", 2);
        let id = Array { extents: vec![2, 2], data: vec![1.0, 0.0, 0.0, 1.0] };
        env.arrays.insert("A".into(), Array::zeros(vec![2, 2]));
        env.arrays.insert("B".into(), id.clone());
        env.arrays.insert("C".into(), id.clone());
        let out = interpret(&p, env).unwrap();
        assert_eq!(out.array("a").unwrap(), &id);
    }

    #[test]
    fn empty_range_runs_nothing() {
        let p = parse_kernel("do i = 5, 1\n  X(i) = 2.0\nenddo\n").unwrap();
        let mut env = ExecEnv::new(0);
        env.arrays.insert("X".into(), Array::zeros(vec![5]));
        let before = env.clone();
        let mut after = env.clone();
        let c = execute(&p, &mut after).unwrap();
        assert_eq!(c, OpCount::default());
        assert_eq!(after.arrays, before.arrays);
    }

    #[test]
    fn loop_variable_after_loop() {
        let p = parse_kernel("do i = 1, 10, 3\nenddo\n").unwrap();
        let out = interpret(&p, ExecEnv::new(0)).unwrap();
        assert_eq!(out.scalar("i"), Some(Value::Int(13)));
    }

    #[test]
    fn out_of_bounds_names_statement() {
        let p = parse_kernel("do i = 1, 3\n  X(i + 1) = 1.0\nenddo\n").unwrap();
        let mut env = ExecEnv::new(0);
        env.arrays.insert("X".into(), Array::zeros(vec![3]));
        let err = execute(&p, &mut env).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("X(i + 1) = 1.0"), "{msg}");
    }

    #[test]
    fn deterministic_measure_counts_assignments() {
        let p = parse_kernel(MATMUL).unwrap();
        let env = ExecEnv::seeded(&p, &binds(&[("n", 8)]), 1).unwrap();
        assert_eq!(measure(&p, &env, 3, MeasureMode::Deterministic).unwrap(), 512.0);
        let empty = KernelProgram::default();
        assert_eq!(measure(&empty, &ExecEnv::new(0), 1, MeasureMode::Deterministic).unwrap(), 0.0);
    }

    #[test]
    fn seeding_infers_extents_and_is_reproducible() {
        let p = parse_kernel("do k = 1, NZ\n do i = 1, NX\n  V(i, k) = V(i, k) + DEN(i + 1, k) * DT\n enddo\nenddo\n")
            .unwrap();
        let b = binds(&[("NX", 4), ("NZ", 3)]);
        let e1 = ExecEnv::seeded(&p, &b, 9).unwrap();
        let e2 = ExecEnv::seeded(&p, &b, 9).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1.array("den").unwrap().extents, vec![5, 3]);
        assert_eq!(e1.array("v").unwrap().extents, vec![4, 3]);
        assert!(matches!(e1.scalar("DT"), Some(Value::Real(_))));
        let r1 = interpret(&p, e1).unwrap();
        let r2 = interpret(&p, e2).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn unbound_loop_bound_is_reported() {
        let p = parse_kernel("do i = 1, n\n X(i) = 1.0\nenddo\n").unwrap();
        let err = ExecEnv::seeded(&p, &BTreeMap::new(), 0).unwrap_err();
        assert!(err.to_string().contains("`n` is unbound"), "{err}");
    }

    #[test]
    fn analytic_count_matches_execution_on_triangular_nest() {
        let src = "do iter = 1, n, 3\n do i = 1 + iter, n\n  do j = i, n\n   X(i, j) = X(i, j) + 1.0; Y(j) = 2.0\n  enddo\n enddo\nenddo\n";
        let p = parse_kernel(src).unwrap();
        let b = binds(&[("n", 9)]);
        let mut env = ExecEnv::seeded(&p, &b, 3).unwrap();
        let run = execute(&p, &mut env).unwrap();
        assert_eq!(count_operations(&p.stmts, &b).unwrap(), run);
    }

    #[test]
    fn data_dependent_bounds_are_not_analyzable() {
        let p = parse_kernel("m = 3\ndo i = 1, m\nenddo\n").unwrap();
        assert!(matches!(count_operations(&p.stmts, &BTreeMap::new()), Err(KernelError::NotAnalyzable(_))));
    }

    #[test]
    fn integer_semantics() {
        let v = |s: &str| eval_expr(&super::super::parse_expr(s).unwrap(), &|_| None).unwrap();
        assert_eq!(v("7 / 2"), Value::Int(3));
        assert_eq!(v("-7 / 2"), Value::Int(-3));
        assert_eq!(v("mod(-7, 3)"), Value::Int(-1));
        assert_eq!(v("2 ** 10"), Value::Int(1024));
        assert_eq!(v("7.0 / 2"), Value::Real(3.5));
        assert_eq!(v("max(1, 2.5)"), Value::Real(2.5));
        let err = eval_expr(&super::super::parse_expr("9223372036854775807 + 1").unwrap(), &|_| None);
        assert!(matches!(err, Err(KernelError::Overflow(_))));
    }

    #[test]
    fn states_equal_uses_relative_tolerance() {
        let mut a = ExecEnv::new(0);
        a.arrays.insert("X".into(), Array { extents: vec![2], data: vec![1.0, 1e6] });
        let mut b = a.clone();
        b.arrays.get_mut(&Ident::new("x")).unwrap().data[1] = 1e6 * (1.0 + 1e-13);
        assert!(states_equal(&a, &b, 1e-12).is_ok());
        b.arrays.get_mut(&Ident::new("x")).unwrap().data[1] = 1e6 * (1.0 + 1e-10);
        assert!(states_equal(&a, &b, 1e-12).is_err());
    }
}
