use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::KernelError;

/// Cursor over one logical line's tokens. Also used by the directive parser.
pub struct Cursor<'a> {
    toks: &'a [Token],
    pos: usize,
    pub line: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(toks: &'a [Token], line: usize) -> Self {
        Cursor { toks, pos: 0, line }
    }

    pub fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    pub fn peek_at(&self, k: usize) -> Option<&'a Tok> {
        self.toks.get(self.pos + k).map(|t| &t.tok)
    }

    pub fn next(&mut self) -> Option<&'a Tok> {
        let t = self.toks.get(self.pos).map(|t| &t.tok);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    pub fn col(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|t| t.col)
            .or_else(|| self.toks.last().map(|t| t.col + 1))
            .unwrap_or(1)
    }

    /// The remaining tokens, for callers that need to re-slice.
    pub fn rest(&self) -> &'a [Token] {
        &self.toks[self.pos.min(self.toks.len())..]
    }

    pub fn error(&self, msg: impl Into<String>) -> KernelError {
        KernelError::syntax(self.line, self.col(), msg)
    }

    pub fn eat_sym(&mut self, s: &str) -> bool {
        if self.peek().is_some_and(|t| t.is_sym(s)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub fn eat_word(&mut self, w: &str) -> bool {
        if self.peek().is_some_and(|t| t.is_word(w)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub fn expect_sym(&mut self, s: &str) -> Result<(), KernelError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{s}`")))
        }
    }

    pub fn expect_word(&mut self, w: &str) -> Result<(), KernelError> {
        if self.eat_word(w) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{w}`")))
        }
    }

    pub fn ident(&mut self) -> Result<Ident, KernelError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                self.pos += 1;
                Ok(Ident::new(s.clone()))
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    pub fn int(&mut self) -> Result<i64, KernelError> {
        let neg = self.eat_sym("-");
        match self.peek() {
            Some(Tok::Int(v)) => {
                self.pos += 1;
                Ok(if neg { -v } else { *v })
            }
            _ => Err(self.unexpected("integer")),
        }
    }

    pub fn unexpected(&self, wanted: &str) -> KernelError {
        match self.peek() {
            Some(t) => self.error(format!("expected {wanted}, found {}", t.describe())),
            None => self.error(format!("expected {wanted}, found end of line")),
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn rewind(&mut self, pos: usize) {
        self.pos = pos;
    }

    pub fn expect_end(&self) -> Result<(), KernelError> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(self.error(format!("unexpected {} after statement", t.describe()))),
        }
    }

    // Expression grammar (Fortran precedence):
    //   expr    := ['+'|'-'] term {('+'|'-') term}
    //   term    := power {('*'|'/') power}
    //   power   := primary ['**' ['-'] power]
    //   primary := number | name | name '(' args ')' | '(' expr ')' | '-' primary

    pub fn expr(&mut self) -> Result<Expr, KernelError> {
        let mut lhs = if self.eat_sym("-") {
            negate(self.term()?)
        } else {
            self.eat_sym("+");
            self.term()?
        };
        loop {
            let op = if self.eat_sym("+") {
                BinOp::Add
            } else if self.eat_sym("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            lhs = Expr::bin(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr, KernelError> {
        let mut lhs = self.power()?;
        loop {
            let op = if self.eat_sym("*") {
                BinOp::Mul
            } else if self.eat_sym("/") {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            lhs = Expr::bin(op, lhs, self.power()?);
        }
    }

    fn power(&mut self) -> Result<Expr, KernelError> {
        let base = self.primary()?;
        if self.eat_sym("**") {
            let exp = if self.eat_sym("-") {
                negate(self.power()?)
            } else {
                self.power()?
            };
            Ok(Expr::bin(BinOp::Pow, base, exp))
        } else {
            Ok(base)
        }
    }

    fn primary(&mut self) -> Result<Expr, KernelError> {
        match self.peek() {
            Some(Tok::Int(v)) => {
                self.pos += 1;
                Ok(Expr::Int(*v))
            }
            Some(Tok::Real(v)) => {
                self.pos += 1;
                Ok(Expr::Real(*v))
            }
            Some(Tok::Sym("(")) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Some(Tok::Sym("-")) => {
                self.pos += 1;
                Ok(negate(self.primary()?))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.eat_sym("(") {
                    let args = self.args()?;
                    match Intrinsic::lookup(name) {
                        Some(f) => {
                            let (lo, hi) = f.arity();
                            if args.len() < lo || args.len() > hi {
                                return Err(self.error(format!(
                                    "intrinsic `{}` takes {} argument(s), got {}",
                                    f.name(),
                                    if lo == hi { lo.to_string() } else { format!("at least {lo}") },
                                    args.len()
                                )));
                            }
                            Ok(Expr::Call(f, args))
                        }
                        None => Ok(Expr::Elem(Ident::new(name.clone()), args)),
                    }
                } else {
                    Ok(Expr::Var(Ident::new(name.clone())))
                }
            }
            _ => Err(self.unexpected("expression")),
        }
    }

    fn args(&mut self) -> Result<Vec<Expr>, KernelError> {
        let mut args = vec![self.expr()?];
        while self.eat_sym(",") {
            args.push(self.expr()?);
        }
        self.expect_sym(")")?;
        Ok(args)
    }
}

/// Unary minus; literals fold to negative literals so that every value has
/// one tree shape.
fn negate(e: Expr) -> Expr {
    match e {
        Expr::Int(v) => Expr::Int(-v),
        Expr::Real(v) => Expr::Real(-v),
        e => Expr::Neg(Box::new(e)),
    }
}

/// Parse a standalone expression.
pub fn parse_expr(text: &str) -> Result<Expr, KernelError> {
    let toks = tokenize(text, 1)?;
    let mut c = Cursor::new(&toks, 1);
    let e = c.expr()?;
    c.expect_end()?;
    Ok(e)
}

/// A source line after continuation joining: the text plus the physical
/// line where it started.
struct LogicalLine {
    line: usize,
    end: usize,
    text: String,
}

fn is_comment(trimmed: &str) -> bool {
    trimmed.starts_with('!')
}

fn is_elision(trimmed: &str) -> bool {
    !trimmed.is_empty() && trimmed.chars().all(|c| c == '.')
}

fn paren_balance(s: &str) -> i64 {
    let mut depth = 0i64;
    let mut in_str: Option<char> = None;
    for c in s.chars() {
        match in_str {
            Some(q) if c == q => in_str = None,
            Some(_) => {}
            None => match c {
                '"' | '\'' => in_str = Some(c),
                '(' => depth += 1,
                ')' => depth -= 1,
                _ => {}
            },
        }
    }
    depth
}

/// True when a statement line visibly continues on the next line: trailing
/// `&`, a dangling operator or `=`, or unbalanced parentheses.
fn continues(s: &str) -> bool {
    let t = s.trim_end();
    t.ends_with('&')
        || t.ends_with('=')
        || t.ends_with('+')
        || t.ends_with('-')
        || t.ends_with('*')
        || t.ends_with('/')
        || t.ends_with(',')
        || t.ends_with('(')
        || paren_balance(t) > 0
}

fn logical_lines(text: &str) -> Vec<LogicalLine> {
    let mut out: Vec<LogicalLine> = Vec::new();
    let mut pending: Option<LogicalLine> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if let Some(mut p) = pending.take() {
            if trimmed.is_empty() || is_comment(trimmed) {
                // A comment cannot continue a statement; flush what we have.
                out.push(p);
            } else {
                let piece = trimmed.strip_prefix('&').unwrap_or(trimmed).trim_start();
                let base = p.text.trim_end().strip_suffix('&').unwrap_or(&p.text).to_string();
                p.text = format!("{} {}", base.trim_end(), piece);
                p.end = line;
                if continues(&p.text) {
                    pending = Some(p);
                } else {
                    out.push(p);
                }
                continue;
            }
        }
        if trimmed.is_empty() {
            continue;
        }
        let ll = LogicalLine { line, end: line, text: trimmed.to_string() };
        if is_comment(trimmed) || is_elision(trimmed) {
            out.push(ll);
        } else if continues(trimmed) {
            pending = Some(ll);
        } else {
            out.push(ll);
        }
    }
    if let Some(p) = pending {
        out.push(p);
    }
    out
}

enum Line {
    Stmt(Stmt),
    DoHead { var: Ident, lo: Expr, hi: Expr, step: Option<Expr>, line: usize },
    EndDo(usize),
    Decls(Vec<ArrayDecl>),
}

fn parse_line(ll: &LogicalLine) -> Result<Line, KernelError> {
    let trimmed = ll.text.as_str();
    if is_comment(trimmed) || is_elision(trimmed) {
        return Ok(Line::Stmt(Stmt::at(StmtKind::Passthrough(trimmed.to_string()), ll.line)));
    }
    let toks = tokenize(trimmed, ll.line)?;
    let mut c = Cursor::new(&toks, ll.line);
    // `enddo` / `end do`
    if c.eat_word("enddo") {
        c.expect_end()?;
        return Ok(Line::EndDo(ll.line));
    }
    if c.peek().is_some_and(|t| t.is_word("end")) && c.peek_at(1).is_some_and(|t| t.is_word("do")) {
        c.next();
        c.next();
        c.expect_end()?;
        return Ok(Line::EndDo(ll.line));
    }
    if c.peek().is_some_and(|t| t.is_word("do"))
        && matches!(c.peek_at(1), Some(Tok::Ident(_)))
        && c.peek_at(2).is_some_and(|t| t.is_sym("="))
    {
        c.next();
        let var = c.ident()?;
        c.expect_sym("=")?;
        let lo = c.expr()?;
        c.expect_sym(",")?;
        let hi = c.expr()?;
        let step = if c.eat_sym(",") { Some(c.expr()?) } else { None };
        c.expect_end()?;
        return Ok(Line::DoHead { var, lo, hi, step, line: ll.line });
    }
    if let Some(decls) = try_decl(&mut c)? {
        return Ok(Line::Decls(decls));
    }
    let mut assigns = vec![parse_assign(&mut c)?];
    while c.eat_sym(";") {
        if c.at_end() {
            break;
        }
        assigns.push(parse_assign(&mut c)?);
    }
    c.expect_end()?;
    let kind = if assigns.len() == 1 {
        StmtKind::Assign(assigns.pop().unwrap())
    } else {
        StmtKind::Multi(assigns)
    };
    Ok(Line::Stmt(Stmt::spanning(kind, ll.line, ll.end)))
}

/// `real A(n, n), B(n)` / `real*8 ...` / `double precision ...` / `dimension ...`.
fn try_decl(c: &mut Cursor) -> Result<Option<Vec<ArrayDecl>>, KernelError> {
    let is_decl_start = match (c.peek(), c.peek_at(1)) {
        (Some(t), Some(Tok::Ident(_))) if t.is_word("real") || t.is_word("dimension") || t.is_word("integer") => true,
        (Some(t), Some(Tok::Sym("*"))) if t.is_word("real") => true,
        (Some(t), Some(n)) if t.is_word("double") && n.is_word("precision") => true,
        _ => false,
    };
    if !is_decl_start {
        return Ok(None);
    }
    if c.eat_word("double") {
        c.expect_word("precision")?;
    } else {
        c.next();
        if c.eat_sym("*") {
            c.int()?;
        }
    }
    let mut decls = Vec::new();
    loop {
        let name = c.ident()?;
        c.expect_sym("(")?;
        let mut extents = vec![c.expr()?];
        while c.eat_sym(",") {
            extents.push(c.expr()?);
        }
        c.expect_sym(")")?;
        if extents.len() > 3 {
            return Err(c.error(format!("array `{name}` has rank {}, at most 3 supported", extents.len())));
        }
        decls.push(ArrayDecl { name, extents });
        if !c.eat_sym(",") {
            break;
        }
    }
    c.expect_end()?;
    Ok(Some(decls))
}

fn parse_assign(c: &mut Cursor) -> Result<Assign, KernelError> {
    let name = c.ident()?;
    let target = if c.eat_sym("(") {
        let mut idx = vec![c.expr()?];
        while c.eat_sym(",") {
            idx.push(c.expr()?);
        }
        c.expect_sym(")")?;
        LValue::Elem(name, idx)
    } else {
        LValue::Scalar(name)
    };
    c.expect_sym("=")?;
    let value = c.expr()?;
    Ok(Assign { target, value })
}

/// Parse kernel text. Directive lines should already be blanked out so that
/// line numbers still match the original source.
pub fn parse_kernel(text: &str) -> Result<KernelProgram, KernelError> {
    let mut decls = Vec::new();
    // Stack of open loops: (header, body so far).
    let mut stack: Vec<(DoLoop, usize)> = Vec::new();
    let mut top: Vec<Stmt> = Vec::new();
    for ll in logical_lines(text) {
        match parse_line(&ll)? {
            Line::Stmt(s) => match stack.last_mut() {
                Some((l, _)) => l.body.push(s),
                None => top.push(s),
            },
            Line::Decls(d) => decls.extend(d),
            Line::DoHead { var, lo, hi, step, line } => {
                if let Some((open, _)) = stack.iter().find(|(l, _)| l.var == var) {
                    return Err(KernelError::syntax(
                        line,
                        1,
                        format!("loop variable `{}` already used by an enclosing loop", open.var),
                    ));
                }
                stack.push((DoLoop { var, lo, hi, step, body: Vec::new() }, line));
            }
            Line::EndDo(line) => {
                let (l, start) = stack
                    .pop()
                    .ok_or_else(|| KernelError::syntax(line, 1, "`enddo` without matching `do`"))?;
                check_no_self_assign(&l, start)?;
                let s = Stmt::spanning(StmtKind::Do(l), start, line);
                match stack.last_mut() {
                    Some((outer, _)) => outer.body.push(s),
                    None => top.push(s),
                }
            }
        }
    }
    if let Some((l, line)) = stack.pop() {
        return Err(KernelError::syntax(line, 1, format!("`do {}` is never closed", l.var)));
    }
    Ok(KernelProgram { decls, stmts: top })
}

fn check_no_self_assign(l: &DoLoop, line: usize) -> Result<(), KernelError> {
    let mut bad = None;
    for s in &l.body {
        s.walk(&mut |st| {
            for a in st.assigns() {
                if matches!(&a.target, LValue::Scalar(n) if *n == l.var) && bad.is_none() {
                    bad = Some(st.line);
                }
            }
        });
    }
    match bad {
        Some(at) => Err(KernelError::syntax(
            if at > 0 { at } else { line },
            1,
            format!("loop variable `{}` is assigned inside its own loop", l.var),
        )),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MATMUL: &str = "do i=1, n\n  do j=1, n\n    do k=1,n\n      A(i, j) = A(i, j) + B(i, k) * C(k, j)\n    enddo\n  enddo\nenddo\n";

    #[test]
    fn matmul_nest_shape() {
        let p = parse_kernel(MATMUL).unwrap();
        assert_eq!(p.stmts.len(), 1);
        let i = p.stmts[0].as_loop().unwrap();
        assert!(i.var.is("i"));
        assert_eq!(i.lo, Expr::Int(1));
        assert_eq!(i.hi, Expr::var("n"));
        let j = i.body[0].as_loop().unwrap();
        let k = j.body[0].as_loop().unwrap();
        assert!(k.var.is("K"));
        assert!(matches!(k.body[0].kind, StmtKind::Assign(_)));
        assert_eq!(k.body[0].line, 4);
    }

    #[test]
    fn empty_text_is_empty_program() {
        assert!(parse_kernel("").unwrap().is_empty());
        assert!(parse_kernel("\n   \n").unwrap().is_empty());
    }

    #[test]
    fn kind_suffix_literal_is_plain_real() {
        let p = parse_kernel("ROX = 2.0_PN/( DEN(I,J,K) + DEN(I+1,J,K) )").unwrap();
        let StmtKind::Assign(a) = &p.stmts[0].kind else { panic!() };
        let Expr::Bin(BinOp::Div, num, _) = &a.value else { panic!("{:?}", a.value) };
        assert_eq!(**num, Expr::Real(2.0));
    }

    #[test]
    fn multi_assign_and_end_do_spelling() {
        let src = "DO K = 1, NZ\n  RL = LAM (I,J,K);  RM = RIG (I,J,K);  RM2 = RM + RM\nEND DO\n";
        let p = parse_kernel(src).unwrap();
        let k = p.stmts[0].as_loop().unwrap();
        assert!(matches!(&k.body[0].kind, StmtKind::Multi(v) if v.len() == 3));
    }

    #[test]
    fn continuation_after_equals_sign() {
        let src = "VX(I,J,K) =\n   VX(I,J,K) + ( DXSXX(I,J,K) )*ROX*DT\n";
        let p = parse_kernel(src).unwrap();
        assert_eq!(p.stmts.len(), 1);
        assert_eq!(p.stmts[0].line, 1);
    }

    #[test]
    fn comments_and_elisions_pass_through() {
        let src = "!$omp parallel do\n...\nx = 1\n";
        let p = parse_kernel(src).unwrap();
        assert_eq!(p.stmts[0].kind, StmtKind::Passthrough("!$omp parallel do".into()));
        assert_eq!(p.stmts[1].kind, StmtKind::Passthrough("...".into()));
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let err = parse_kernel("x = 1\nTarget process 1\n").unwrap_err();
        assert!(err.to_string().starts_with("2:"), "{err}");
        let err = parse_kernel("do i = 1, n\nx = i\n").unwrap_err();
        assert!(err.to_string().contains("never closed"));
        let err = parse_kernel("enddo").unwrap_err();
        assert!(err.to_string().contains("without matching"));
        let err = parse_kernel("do i = 1, n\ni = 2\nenddo").unwrap_err();
        assert!(err.to_string().contains("assigned inside its own loop"));
    }

    #[test]
    fn intrinsic_arity_is_checked() {
        assert!(parse_expr("abs(x, y)").is_err());
        assert!(parse_expr("min(x)").is_err());
        assert!(parse_expr("max(a, b, c)").is_ok());
    }

    #[test]
    fn declarations() {
        let p = parse_kernel("real A(n, n), B(n)\ndouble precision C(3)\n").unwrap();
        assert_eq!(p.decls.len(), 3);
        assert!(parse_kernel("real X(1,2,3,4)").is_err());
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse_expr("a - b - c").unwrap();
        assert_eq!(
            e,
            Expr::bin(BinOp::Sub, Expr::bin(BinOp::Sub, Expr::var("a"), Expr::var("b")), Expr::var("c"))
        );
        let e = parse_expr("a ** b ** c").unwrap();
        assert_eq!(
            e,
            Expr::bin(BinOp::Pow, Expr::var("a"), Expr::bin(BinOp::Pow, Expr::var("b"), Expr::var("c")))
        );
        let e = parse_expr("-a * b").unwrap();
        assert_eq!(e, Expr::Neg(Box::new(Expr::bin(BinOp::Mul, Expr::var("a"), Expr::var("b")))));
    }
}
