use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

/// A Fortran identifier. Spelling is kept for emission; comparison, hashing
/// and ordering ignore ASCII case.
#[derive(Clone)]
pub struct Ident(String);

impl Ident {
    pub fn new(s: impl Into<String>) -> Self {
        Ident(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Upper-cased spelling, used for generated parameter names (`MyMatMul_I`).
    pub fn upper(&self) -> String {
        self.0.to_ascii_uppercase()
    }

    pub fn lower(&self) -> String {
        self.0.to_ascii_lowercase()
    }

    pub fn is(&self, other: &str) -> bool {
        self.0.eq_ignore_ascii_case(other)
    }
}

impl PartialEq for Ident {
    fn eq(&self, other: &Self) -> bool {
        self.0.eq_ignore_ascii_case(&other.0)
    }
}

impl Eq for Ident {}

impl Hash for Ident {
    fn hash<H: Hasher>(&self, state: &mut H) {
        for b in self.0.bytes() {
            state.write_u8(b.to_ascii_lowercase());
        }
        state.write_u8(0xff);
    }
}

impl Ord for Ident {
    fn cmp(&self, other: &Self) -> Ordering {
        let a = self.0.bytes().map(|b| b.to_ascii_lowercase());
        let b = other.0.bytes().map(|b| b.to_ascii_lowercase());
        a.cmp(b)
    }
}

impl PartialOrd for Ident {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Ident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Ident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<&str> for Ident {
    fn from(s: &str) -> Self {
        Ident::new(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "**",
        }
    }

    pub(crate) fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Intrinsic {
    Abs,
    Dlog,
    Log,
    Sqrt,
    Min,
    Max,
    Mod,
}

impl Intrinsic {
    pub fn lookup(name: &str) -> Option<Intrinsic> {
        Some(match name.to_ascii_lowercase().as_str() {
            "abs" => Intrinsic::Abs,
            "dlog" => Intrinsic::Dlog,
            "log" => Intrinsic::Log,
            "sqrt" => Intrinsic::Sqrt,
            "min" => Intrinsic::Min,
            "max" => Intrinsic::Max,
            "mod" => Intrinsic::Mod,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Intrinsic::Abs => "abs",
            Intrinsic::Dlog => "dlog",
            Intrinsic::Log => "log",
            Intrinsic::Sqrt => "sqrt",
            Intrinsic::Min => "min",
            Intrinsic::Max => "max",
            Intrinsic::Mod => "mod",
        }
    }

    /// Accepted argument counts as `(min, max)`.
    pub fn arity(self) -> (usize, usize) {
        match self {
            Intrinsic::Abs | Intrinsic::Dlog | Intrinsic::Log | Intrinsic::Sqrt => (1, 1),
            Intrinsic::Mod => (2, 2),
            Intrinsic::Min | Intrinsic::Max => (2, usize::MAX),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Int(i64),
    Real(f64),
    Var(Ident),
    /// Array element reference, 1-based subscripts.
    Elem(Ident, Vec<Expr>),
    Call(Intrinsic, Vec<Expr>),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(Ident::new(name))
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    /// `self + k` with constant folding of integer offsets, so repeated
    /// induction substitution does not grow `i + 1 + 1` chains.
    pub fn plus(self, k: i64) -> Expr {
        if k == 0 {
            return self;
        }
        match self {
            Expr::Int(a) => Expr::Int(a + k),
            Expr::Bin(BinOp::Add, a, b) if matches!(*b, Expr::Int(_)) => {
                let Expr::Int(c) = *b else { unreachable!() };
                (*a).plus(c + k)
            }
            Expr::Bin(BinOp::Sub, a, b) if matches!(*b, Expr::Int(_)) => {
                let Expr::Int(c) = *b else { unreachable!() };
                (*a).plus(k - c)
            }
            e if k > 0 => Expr::bin(BinOp::Add, e, Expr::Int(k)),
            e => Expr::bin(BinOp::Sub, e, Expr::Int(-k)),
        }
    }

    pub fn times(self, k: i64) -> Expr {
        match (self, k) {
            (e, 1) => e,
            (Expr::Int(a), k) => Expr::Int(a * k),
            (e, k) => Expr::bin(BinOp::Mul, e, Expr::Int(k)),
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Expr::Int(v) => Some(*v),
            _ => None,
        }
    }

    /// Visit every sub-expression, pre-order.
    pub fn walk(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Elem(_, args) | Expr::Call(_, args) => args.iter().for_each(|a| a.walk(f)),
            Expr::Neg(e) => e.walk(f),
            Expr::Bin(_, a, b) => {
                a.walk(f);
                b.walk(f);
            }
            _ => {}
        }
    }

    /// Names read as scalars (array subscripts included, array names not).
    pub fn scalar_names(&self, out: &mut Vec<Ident>) {
        self.walk(&mut |e| {
            if let Expr::Var(v) = e {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
        });
    }

    pub fn mentions(&self, name: &Ident) -> bool {
        let mut hit = false;
        self.walk(&mut |e| match e {
            Expr::Var(v) if v == name => hit = true,
            _ => {}
        });
        hit
    }

    /// Replace every scalar read of `name` with `with`.
    pub fn substitute(&self, name: &Ident, with: &Expr) -> Expr {
        match self {
            Expr::Var(v) if v == name => with.clone(),
            Expr::Elem(a, args) => {
                Expr::Elem(a.clone(), args.iter().map(|e| e.substitute(name, with)).collect())
            }
            Expr::Call(c, args) => {
                Expr::Call(*c, args.iter().map(|e| e.substitute(name, with)).collect())
            }
            Expr::Neg(e) => Expr::Neg(Box::new(e.substitute(name, with))),
            Expr::Bin(op, a, b) => Expr::bin(*op, a.substitute(name, with), b.substitute(name, with)),
            other => other.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LValue {
    Scalar(Ident),
    Elem(Ident, Vec<Expr>),
}

impl LValue {
    pub fn name(&self) -> &Ident {
        match self {
            LValue::Scalar(n) | LValue::Elem(n, _) => n,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assign {
    pub target: LValue,
    pub value: Expr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DoLoop {
    pub var: Ident,
    pub lo: Expr,
    pub hi: Expr,
    /// `None` is the implicit unit step.
    pub step: Option<Expr>,
    pub body: Vec<Stmt>,
}

impl DoLoop {
    pub fn const_step(&self) -> Option<i64> {
        match &self.step {
            None => Some(1),
            Some(e) => e.as_int(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StmtKind {
    Do(DoLoop),
    Assign(Assign),
    /// Several assignments written on one line separated by `;`.
    Multi(Vec<Assign>),
    /// Comment or elision line kept verbatim; a no-op when interpreted.
    Passthrough(String),
}

/// A statement plus the source line it came from. Synthesized statements
/// carry line 0. Equality ignores the line so that parse/emit round trips
/// compare structure only.
#[derive(Clone, Debug)]
pub struct Stmt {
    pub kind: StmtKind,
    pub line: usize,
    /// Last physical line: the `enddo` of a loop, the final continuation
    /// line of an assignment.
    pub end_line: usize,
}

impl PartialEq for Stmt {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl Stmt {
    pub fn new(kind: StmtKind) -> Self {
        Stmt { kind, line: 0, end_line: 0 }
    }

    pub fn at(kind: StmtKind, line: usize) -> Self {
        Stmt { kind, line, end_line: line }
    }

    pub fn spanning(kind: StmtKind, line: usize, end_line: usize) -> Self {
        Stmt { kind, line, end_line }
    }

    pub fn assign(target: LValue, value: Expr) -> Self {
        Stmt::new(StmtKind::Assign(Assign { target, value }))
    }

    pub fn as_loop(&self) -> Option<&DoLoop> {
        match &self.kind {
            StmtKind::Do(l) => Some(l),
            _ => None,
        }
    }

    pub fn as_loop_mut(&mut self) -> Option<&mut DoLoop> {
        match &mut self.kind {
            StmtKind::Do(l) => Some(l),
            _ => None,
        }
    }

    /// Smallest and largest source line within this statement (including
    /// nested bodies), ignoring synthesized lines.
    pub fn line_span(&self) -> Option<(usize, usize)> {
        let mut span: Option<(usize, usize)> = None;
        let mut note = |l: usize| {
            if l > 0 {
                span = Some(match span {
                    None => (l, l),
                    Some((a, b)) => (a.min(l), b.max(l)),
                });
            }
        };
        note(self.line);
        note(self.end_line);
        if let StmtKind::Do(l) = &self.kind {
            for s in &l.body {
                if let Some((a, b)) = s.line_span() {
                    note(a);
                    note(b);
                }
            }
        }
        span
    }

    pub fn substitute(&self, name: &Ident, with: &Expr) -> Stmt {
        let sub_assign = |a: &Assign| Assign {
            target: match &a.target {
                LValue::Scalar(n) => LValue::Scalar(n.clone()),
                LValue::Elem(n, idx) => {
                    LValue::Elem(n.clone(), idx.iter().map(|e| e.substitute(name, with)).collect())
                }
            },
            value: a.value.substitute(name, with),
        };
        let kind = match &self.kind {
            StmtKind::Do(l) => StmtKind::Do(DoLoop {
                var: l.var.clone(),
                lo: l.lo.substitute(name, with),
                hi: l.hi.substitute(name, with),
                step: l.step.as_ref().map(|s| s.substitute(name, with)),
                body: l.body.iter().map(|s| s.substitute(name, with)).collect(),
            }),
            StmtKind::Assign(a) => StmtKind::Assign(sub_assign(a)),
            StmtKind::Multi(v) => StmtKind::Multi(v.iter().map(sub_assign).collect()),
            StmtKind::Passthrough(t) => StmtKind::Passthrough(t.clone()),
        };
        Stmt { kind, line: self.line, end_line: self.end_line }
    }

    /// Assignments performed directly by this statement (not nested loops).
    pub fn assigns(&self) -> &[Assign] {
        match &self.kind {
            StmtKind::Assign(a) => std::slice::from_ref(a),
            StmtKind::Multi(v) => v,
            _ => &[],
        }
    }

    /// Visit this statement and all nested statements, pre-order.
    pub fn walk(&self, f: &mut dyn FnMut(&Stmt)) {
        f(self);
        if let StmtKind::Do(l) = &self.kind {
            for s in &l.body {
                s.walk(f);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArrayDecl {
    pub name: Ident,
    pub extents: Vec<Expr>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KernelProgram {
    pub decls: Vec<ArrayDecl>,
    pub stmts: Vec<Stmt>,
}

impl KernelProgram {
    pub fn new(stmts: Vec<Stmt>) -> Self {
        KernelProgram { decls: Vec::new(), stmts }
    }

    pub fn is_empty(&self) -> bool {
        self.decls.is_empty() && self.stmts.is_empty()
    }

    pub fn walk(&self, f: &mut dyn FnMut(&Stmt)) {
        for s in &self.stmts {
            s.walk(f);
        }
    }

    /// Every identifier appearing anywhere in the program.
    pub fn identifiers(&self) -> Vec<Ident> {
        let mut out: Vec<Ident> = Vec::new();
        let mut push = |n: &Ident| {
            if !out.contains(n) {
                out.push(n.clone());
            }
        };
        let mut exprs: Vec<Expr> = Vec::new();
        for d in &self.decls {
            push(&d.name);
            exprs.extend(d.extents.iter().cloned());
        }
        self.walk(&mut |s| match &s.kind {
            StmtKind::Do(l) => {
                push(&l.var);
                exprs.push(l.lo.clone());
                exprs.push(l.hi.clone());
                exprs.extend(l.step.clone());
            }
            StmtKind::Assign(_) | StmtKind::Multi(_) => {
                for a in s.assigns() {
                    push(a.target.name());
                    if let LValue::Elem(_, idx) = &a.target {
                        exprs.extend(idx.iter().cloned());
                    }
                    exprs.push(a.value.clone());
                }
            }
            StmtKind::Passthrough(_) => {}
        });
        for e in &exprs {
            e.walk(&mut |x| match x {
                Expr::Var(n) | Expr::Elem(n, _) => push(n),
                _ => {}
            });
        }
        out
    }
}
