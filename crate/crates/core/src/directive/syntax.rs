use super::*;
use crate::fitting::{parse_sample_items, SampleSpec};
use crate::kernel::{expr_to_string, tokenize, Cursor, Expr, Ident, Tok};
use std::fmt::{self, Display, Write};

/// Text after the `!OAT$` sentinel (any case), if the line carries one.
pub fn is_sentinel(line: &str) -> Option<&str> {
    let t = line.trim_start();
    let head = t.get(..5)?;
    if head.starts_with('!') && head[1..].eq_ignore_ascii_case("oat$") {
        Some(&t[5..])
    } else {
        None
    }
}

/// Replace sentinel lines with empty lines so kernel line numbers keep
/// matching the original source.
pub fn strip_directives(source: &str) -> String {
    let mut out = String::with_capacity(source.len());
    for line in source.lines() {
        if is_sentinel(line).is_none() {
            out.push_str(line);
        }
        out.push('\n');
    }
    out
}

/// Every sentinel line becomes one directive; `!OAT$ &` lines continue the
/// previous one.
pub fn tokenize_directives(source: &str) -> Result<Vec<Directive>, DirectiveError> {
    struct Pending {
        line: usize,
        raw: String,
        body: String,
    }
    let mut pending: Vec<Pending> = Vec::new();
    for (i, raw) in source.lines().enumerate() {
        let line = i + 1;
        let Some(body) = is_sentinel(raw) else { continue };
        let body = body.trim();
        if let Some(rest) = body.strip_prefix('&') {
            let Some(last) = pending.last_mut() else {
                return Err(DirectiveError::syntax(line, "continuation line without a directive to continue"));
            };
            last.raw.push('\n');
            last.raw.push_str(raw);
            let base = last.body.trim_end().strip_suffix('&').unwrap_or(&last.body).trim_end().to_string();
            last.body = format!("{base} {}", rest.trim());
        } else if body.is_empty() {
            return Err(DirectiveError::syntax(line, "empty directive"));
        } else {
            pending.push(Pending { line, raw: raw.to_string(), body: body.to_string() });
        }
    }
    pending
        .into_iter()
        .map(|p| {
            let body = p.body.trim_end().strip_suffix('&').unwrap_or(&p.body).trim_end();
            Ok(Directive { payload: parse_payload(body, p.line)?, raw_text: p.raw, line_no: p.line })
        })
        .collect()
}

fn kerr(line: usize) -> impl Fn(crate::kernel::KernelError) -> DirectiveError {
    move |e| match e {
        crate::kernel::KernelError::Syntax { col, msg, .. } => DirectiveError::syntax(line, format!("col {col}: {msg}")),
        other => DirectiveError::Kernel(other),
    }
}

fn word(t: Option<&Tok>, w: &str) -> bool {
    t.is_some_and(|t| t.is_word(w))
}

/// Matches hyphenated keywords such as `least-squares` or `AD-HOC`, which
/// lex as `word - word`.
fn eat_hyphenated(c: &mut Cursor, a: &str, b: &str) -> bool {
    if word(c.peek(), a) && c.peek_at(1).is_some_and(|t| t.is_sym("-")) && word(c.peek_at(2), b) {
        c.next();
        c.next();
        c.next();
        true
    } else {
        false
    }
}

fn ident_list(c: &mut Cursor) -> Result<Vec<Ident>, crate::kernel::KernelError> {
    let paren = c.eat_sym("(");
    let mut out = vec![c.ident()?];
    while c.eat_sym(",") {
        out.push(c.ident()?);
    }
    if paren {
        c.expect_sym(")")?;
    }
    Ok(out)
}

fn sub_region_kind(w: &str) -> Option<SubRegionKind> {
    [
        SubRegionKind::Select,
        SubRegionKind::Prepro,
        SubRegionKind::Postpro,
        SubRegionKind::SplitPointCopyDef,
        SubRegionKind::RotationOrder,
    ]
    .into_iter()
    .find(|k| k.keyword().eq_ignore_ascii_case(w))
}

pub fn parse_payload(text: &str, line: usize) -> Result<Payload, DirectiveError> {
    let e = kerr(line);
    let toks = tokenize(text, line).map_err(&e)?;
    let mut c = Cursor::new(&toks, line);
    let Some(Tok::Ident(first)) = c.peek().cloned() else {
        return Err(DirectiveError::syntax(line, format!("expected a directive keyword in `{text}`")));
    };
    let first_l = first.to_ascii_lowercase();

    if let Some(kind) = sub_region_kind(&first) {
        let has_sub = word(c.peek_at(1), "sub");
        let region_at = if has_sub { 2 } else { 1 };
        if word(c.peek_at(region_at), "region") {
            if kind == SubRegionKind::Select && !has_sub {
                return Err(DirectiveError::syntax(
                    line,
                    "`select region` needs an auto-tuning type (install, static or dynamic)",
                ));
            }
            for _ in 0..=region_at {
                c.next();
            }
            let start = if c.eat_word("start") {
                true
            } else {
                c.expect_word("end").map_err(&e)?;
                false
            };
            c.expect_end().map_err(&e)?;
            return Ok(Payload::Subtype(SubtypeSpec::SubRegion { kind, start }));
        }
    }

    if toks.len() >= 3 && word(toks.get(toks.len() - 2).map(|t| &t.tok), "region") {
        return parse_region_marker(text, &toks, line);
    }

    c.next();
    let payload = match first_l.as_str() {
        "call" => {
            let name = c.ident().map_err(&e)?;
            let mut args = Vec::new();
            if c.eat_sym("(") && !c.eat_sym(")") {
                loop {
                    let neg = c.eat_sym("-");
                    let arg = match c.next() {
                        Some(Tok::Str(s)) => CallArg::Str(s.clone()),
                        Some(Tok::Ident(s)) => CallArg::Name(Ident::new(s.clone())),
                        Some(Tok::Int(v)) => CallArg::Int(if neg { -v } else { *v }),
                        Some(Tok::Real(v)) => CallArg::Real(if neg { -v } else { *v }),
                        _ => return Err(DirectiveError::syntax(line, format!("bad argument to `{name}`"))),
                    };
                    args.push(arg);
                    if c.eat_sym(")") {
                        break;
                    }
                    c.expect_sym(",").map_err(&e)?;
                }
            }
            Payload::Call { name, args }
        }
        "name" => {
            let n = match c.next() {
                Some(Tok::Str(s)) => s.clone(),
                Some(Tok::Ident(s)) => s.clone(),
                _ => return Err(DirectiveError::syntax(line, "`name` needs a region name")),
            };
            Payload::Subtype(SubtypeSpec::Name(n))
        }
        "parameter" => {
            c.expect_sym("(").map_err(&e)?;
            let mut decls = Vec::new();
            loop {
                let attr = if c.eat_word("in") {
                    ParamAttr::In
                } else if c.eat_word("out") {
                    ParamAttr::Out
                } else if c.eat_word("bp") {
                    ParamAttr::Bp
                } else {
                    return Err(DirectiveError::syntax(line, "parameter attribute must be `in`, `out` or `bp`"));
                };
                decls.push((attr, c.ident().map_err(&e)?));
                if c.eat_sym(")") {
                    break;
                }
                c.expect_sym(",").map_err(&e)?;
            }
            Payload::Subtype(SubtypeSpec::Parameter(decls))
        }
        "varied" => {
            let params = ident_list(&mut c).map_err(&e)?;
            c.expect_word("from").map_err(&e)?;
            let from = c.int().map_err(&e)?;
            c.expect_word("to").map_err(&e)?;
            let to = c.int().map_err(&e)?;
            if from > to {
                return Err(DirectiveError::syntax(line, format!("varied range {from} to {to} is empty")));
            }
            Payload::Subtype(SubtypeSpec::Varied { params, from, to })
        }
        "fitting" => Payload::Subtype(SubtypeSpec::Fitting(parse_fitting(&mut c, line)?)),
        "according" => {
            let a = if c.eat_word("estimated") {
                According::Estimated(c.expr().map_err(&e)?)
            } else {
                According::Criteria(crit_or(&mut c).map_err(&e)?)
            };
            Payload::Subtype(SubtypeSpec::According(a))
        }
        "number" => Payload::Subtype(SubtypeSpec::Number(c.int().map_err(&e)?)),
        "debug" => {
            let paren = c.eat_sym("(");
            let mut items = Vec::new();
            loop {
                let id = c.ident().map_err(&e)?;
                items.push(if id.is("bp") {
                    DebugItem::Bp
                } else if id.is("pp") {
                    DebugItem::Pp
                } else {
                    DebugItem::Param(id)
                });
                if !c.eat_sym(",") {
                    break;
                }
            }
            if paren {
                c.expect_sym(")").map_err(&e)?;
            }
            Payload::Subtype(SubtypeSpec::Debug(items))
        }
        "search" => {
            let m = if eat_hyphenated(&mut c, "brute", "force") || c.eat_word("exhaustive") {
                c.eat_word("search");
                SearchMethod::Exhaustive
            } else if eat_hyphenated(&mut c, "ad", "hoc") || c.eat_word("adhoc") {
                c.eat_word("method");
                SearchMethod::AdHoc
            } else {
                return Err(DirectiveError::syntax(line, "search method must be `Brute-force` or `AD-HOC`"));
            };
            Payload::Search(m)
        }
        "splitpoint" => Payload::Subtype(SubtypeSpec::SplitPoint(ident_list(&mut c).map_err(&e)?)),
        "splitpointcopyinsert" => Payload::Subtype(SubtypeSpec::SplitPointCopyInsert),
        _ if c.peek().is_some_and(|t| t.is_sym("=")) => {
            c.next();
            let value = match c.peek() {
                Some(Tok::Dot(w)) if w == "true" || w == "false" => {
                    let v = if w == "true" { 1 } else { 0 };
                    c.next();
                    Expr::Int(v)
                }
                _ => c.expr().map_err(&e)?,
            };
            Payload::Assign { name: Ident::new(first), value }
        }
        _ => return Err(DirectiveError::syntax(line, format!("unknown directive `{first}`"))),
    };
    c.expect_end().map_err(&e)?;
    Ok(payload)
}

fn parse_region_marker(text: &str, toks: &[crate::kernel::Token], line: usize) -> Result<Payload, DirectiveError> {
    let n = toks.len();
    let start = match &toks[n - 1].tok {
        t if t.is_word("start") => true,
        t if t.is_word("end") => false,
        _ => return Err(DirectiveError::syntax(line, "`region` must be followed by `start` or `end`")),
    };
    let mut end = n - 2;
    let mut targets = Vec::new();
    if end > 0 && toks[end - 1].tok.is_sym(")") {
        let open = toks[..end]
            .iter()
            .rposition(|t| t.tok.is_sym("("))
            .ok_or_else(|| DirectiveError::syntax(line, "unbalanced target list"))?;
        for (i, t) in toks[open + 1..end - 1].iter().enumerate() {
            match (&t.tok, i % 2) {
                (Tok::Ident(s), 0) => targets.push(Ident::new(s.clone())),
                (t, 1) if t.is_sym(",") => {}
                _ => return Err(DirectiveError::syntax(line, "target list must be identifiers separated by commas")),
            }
        }
        end = open;
    }
    if end == 0 {
        return Err(DirectiveError::syntax(line, "region marker needs an auto-tuning type and a feature"));
    }
    let feature = match &toks[end - 1].tok {
        Tok::Ident(w) => Feature::lookup(w),
        _ => None,
    }
    .ok_or_else(|| DirectiveError::syntax(line, format!("unknown feature in `{text}`")))?;
    let at_toks = &toks[..end - 1];
    let at_type = match at_toks {
        [] => return Err(DirectiveError::syntax(line, format!("`{feature}` region needs an auto-tuning type"))),
        [t] if t.tok.is_word("install") => AtType::Install,
        [t] if t.tok.is_word("static") => AtType::Static,
        [t] if t.tok.is_word("dynamic") => AtType::Dynamic,
        _ => {
            let chars: Vec<char> = text.chars().collect();
            let from = at_toks[0].col - 1;
            let to = toks[end - 1].col - 1;
            AtType::Formula(chars[from..to].iter().collect::<String>().trim().to_string())
        }
    };
    Ok(if start {
        Payload::RegionStart { at_type, feature, targets }
    } else {
        Payload::RegionEnd { at_type, feature, targets }
    })
}

fn parse_fitting(c: &mut Cursor, line: usize) -> Result<FitSpec, DirectiveError> {
    let e = kerr(line);
    let method = if eat_hyphenated(c, "least", "squares") || c.eat_word("least_squares") {
        let order = c.int().map_err(&e)?;
        if order < 0 {
            return Err(DirectiveError::syntax(line, "least-squares order must be nonnegative"));
        }
        FitMethod::LeastSquares(order as usize)
    } else if c.eat_word("dspline") {
        FitMethod::Dspline
    } else if eat_hyphenated(c, "user", "defined") || c.eat_word("user_defined") {
        FitMethod::UserDefined(c.expr().map_err(&e)?)
    } else if c.eat_word("auto") {
        FitMethod::Auto
    } else {
        return Err(DirectiveError::syntax(
            line,
            "fitting method must be `least-squares <order>`, `dspline`, `user-defined <expr>` or `auto`",
        ));
    };
    let scope = if c.eat_word("sampled") {
        if c.eat_word("auto") {
            SampleScope::Auto
        } else {
            SampleScope::Points(parse_sample_items(c).map_err(|m| DirectiveError::syntax(line, m))?)
        }
    } else {
        SampleScope::Auto
    };
    Ok(FitSpec { method, scope })
}

fn crit_or(c: &mut Cursor) -> Result<Criterion, crate::kernel::KernelError> {
    let mut lhs = crit_and(c)?;
    while eat_dot(c, "or") {
        lhs = Criterion::Or(Box::new(lhs), Box::new(crit_and(c)?));
    }
    Ok(lhs)
}

fn crit_and(c: &mut Cursor) -> Result<Criterion, crate::kernel::KernelError> {
    let mut lhs = crit_atom(c)?;
    while eat_dot(c, "and") {
        lhs = Criterion::And(Box::new(lhs), Box::new(crit_atom(c)?));
    }
    Ok(lhs)
}

fn crit_atom(c: &mut Cursor) -> Result<Criterion, crate::kernel::KernelError> {
    if c.eat_word("min") {
        c.expect_sym("(")?;
        let n = c.ident()?;
        c.expect_sym(")")?;
        Ok(Criterion::Min(n))
    } else if c.eat_word("condition") {
        c.expect_sym("(")?;
        let b = bool_or(c)?;
        c.expect_sym(")")?;
        Ok(Criterion::Condition(b))
    } else if c.eat_sym("(") {
        let inner = crit_or(c)?;
        c.expect_sym(")")?;
        Ok(inner)
    } else {
        Err(c.unexpected("`min (...)` or `condition (...)`"))
    }
}

fn eat_dot(c: &mut Cursor, w: &str) -> bool {
    if matches!(c.peek(), Some(Tok::Dot(d)) if d == w) {
        c.next();
        true
    } else {
        false
    }
}

fn bool_or(c: &mut Cursor) -> Result<BoolExpr, crate::kernel::KernelError> {
    let mut lhs = bool_and(c)?;
    while eat_dot(c, "or") {
        lhs = BoolExpr::Or(Box::new(lhs), Box::new(bool_and(c)?));
    }
    Ok(lhs)
}

fn bool_and(c: &mut Cursor) -> Result<BoolExpr, crate::kernel::KernelError> {
    let mut lhs = bool_not(c)?;
    while eat_dot(c, "and") {
        lhs = BoolExpr::And(Box::new(lhs), Box::new(bool_not(c)?));
    }
    Ok(lhs)
}

fn bool_not(c: &mut Cursor) -> Result<BoolExpr, crate::kernel::KernelError> {
    if eat_dot(c, "not") {
        Ok(BoolExpr::Not(Box::new(bool_not(c)?)))
    } else {
        bool_prim(c)
    }
}

fn cmp_op(c: &mut Cursor) -> Option<CmpOp> {
    let op = match c.peek()? {
        Tok::Sym("<") => CmpOp::Lt,
        Tok::Sym("<=") => CmpOp::Le,
        Tok::Sym(">") => CmpOp::Gt,
        Tok::Sym(">=") => CmpOp::Ge,
        Tok::Sym("==") => CmpOp::Eq,
        Tok::Sym("/=") => CmpOp::Ne,
        Tok::Dot(d) => match d.as_str() {
            "lt" => CmpOp::Lt,
            "le" => CmpOp::Le,
            "gt" => CmpOp::Gt,
            "ge" => CmpOp::Ge,
            "eq" => CmpOp::Eq,
            "ne" => CmpOp::Ne,
            _ => return None,
        },
        _ => return None,
    };
    c.next();
    Some(op)
}

fn bool_prim(c: &mut Cursor) -> Result<BoolExpr, crate::kernel::KernelError> {
    if eat_dot(c, "true") {
        return Ok(BoolExpr::Const(true));
    }
    if eat_dot(c, "false") {
        return Ok(BoolExpr::Const(false));
    }
    if c.peek().is_some_and(|t| t.is_sym("(")) {
        // Either a parenthesized predicate or a comparison whose left side
        // starts with a parenthesis; try the predicate first.
        let mark = c.position();
        c.next();
        if let Ok(b) = bool_or(c) {
            if c.eat_sym(")") {
                return Ok(b);
            }
        }
        c.rewind(mark);
    }
    let lhs = c.expr()?;
    let op = cmp_op(c).ok_or_else(|| c.unexpected("comparison operator"))?;
    let rhs = c.expr()?;
    Ok(BoolExpr::Cmp(lhs, op, rhs))
}

fn is_plain_name(s: &str) -> bool {
    let mut ch = s.chars();
    ch.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_') && ch.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn ident_csv(v: &[Ident]) -> String {
    v.iter().map(|i| i.as_str()).collect::<Vec<_>>().join(", ")
}

impl Display for BoolExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn operand(f: &mut fmt::Formatter<'_>, b: &BoolExpr, wrap: bool) -> fmt::Result {
            if wrap {
                write!(f, "({b})")
            } else {
                write!(f, "{b}")
            }
        }
        match self {
            BoolExpr::Const(true) => f.write_str(".true."),
            BoolExpr::Const(false) => f.write_str(".false."),
            BoolExpr::Cmp(a, op, b) => write!(f, "{} {} {}", expr_to_string(a), op.symbol(), expr_to_string(b)),
            BoolExpr::Not(b) => {
                f.write_str(".not. ")?;
                operand(f, b, matches!(**b, BoolExpr::And(..) | BoolExpr::Or(..) | BoolExpr::Cmp(..)))
            }
            BoolExpr::And(a, b) => {
                operand(f, a, matches!(**a, BoolExpr::Or(..)))?;
                f.write_str(" .and. ")?;
                operand(f, b, matches!(**b, BoolExpr::Or(..) | BoolExpr::And(..)))
            }
            BoolExpr::Or(a, b) => {
                operand(f, a, false)?;
                f.write_str(" .or. ")?;
                operand(f, b, matches!(**b, BoolExpr::Or(..)))
            }
        }
    }
}

impl Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn operand(f: &mut fmt::Formatter<'_>, c: &Criterion, wrap: bool) -> fmt::Result {
            if wrap {
                write!(f, "({c})")
            } else {
                write!(f, "{c}")
            }
        }
        match self {
            Criterion::Min(n) => write!(f, "min ({n})"),
            Criterion::Condition(b) => write!(f, "condition ({b})"),
            Criterion::And(a, b) => {
                operand(f, a, matches!(**a, Criterion::Or(..)))?;
                f.write_str(" .and. ")?;
                operand(f, b, matches!(**b, Criterion::Or(..) | Criterion::And(..)))
            }
            Criterion::Or(a, b) => {
                operand(f, a, false)?;
                f.write_str(" .or. ")?;
                operand(f, b, matches!(**b, Criterion::Or(..)))
            }
        }
    }
}

impl Display for According {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            According::Estimated(e) => write!(f, "estimated {}", expr_to_string(e)),
            According::Criteria(c) => write!(f, "{c}"),
        }
    }
}

impl Display for FitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.method {
            FitMethod::LeastSquares(o) => write!(f, "least-squares {o}")?,
            FitMethod::Dspline => f.write_str("dspline")?,
            FitMethod::UserDefined(e) => write!(f, "user-defined {}", expr_to_string(e))?,
            FitMethod::Auto => f.write_str("auto")?,
        }
        match &self.scope {
            SampleScope::Auto => f.write_str(" sampled auto"),
            SampleScope::Points(p) => write!(f, " sampled ({p})"),
        }
    }
}

impl Display for SubtypeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubtypeSpec::Name(n) if is_plain_name(n) => write!(f, "name {n}"),
            SubtypeSpec::Name(n) => write!(f, "name \"{n}\""),
            SubtypeSpec::Parameter(v) => {
                let parts: Vec<String> = v.iter().map(|(a, n)| format!("{} {n}", a.keyword())).collect();
                write!(f, "parameter ({})", parts.join(", "))
            }
            SubtypeSpec::SubRegion { kind, start } => {
                let sub = if *kind == SubRegionKind::SplitPointCopyDef { "" } else { " sub" };
                write!(f, "{}{sub} region {}", kind.keyword(), if *start { "start" } else { "end" })
            }
            SubtypeSpec::According(a) => write!(f, "according {a}"),
            SubtypeSpec::Varied { params, from, to } => write!(f, "varied ({}) from {from} to {to}", ident_csv(params)),
            SubtypeSpec::Fitting(s) => write!(f, "fitting {s}"),
            SubtypeSpec::Number(n) => write!(f, "number {n}"),
            SubtypeSpec::Debug(items) => {
                let parts: Vec<String> = items
                    .iter()
                    .map(|i| match i {
                        DebugItem::Bp => "bp".to_string(),
                        DebugItem::Pp => "pp".to_string(),
                        DebugItem::Param(n) => n.to_string(),
                    })
                    .collect();
                write!(f, "debug ({})", parts.join(", "))
            }
            SubtypeSpec::SplitPoint(v) => write!(f, "SplitPoint ({})", ident_csv(v)),
            SubtypeSpec::SplitPointCopyInsert => f.write_str("SplitPointCopyInsert"),
        }
    }
}

impl Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::RegionStart { at_type, feature, targets } | Payload::RegionEnd { at_type, feature, targets } => {
                write!(f, "{} {feature}", at_type.keyword())?;
                if !targets.is_empty() {
                    write!(f, " ({})", ident_csv(targets))?;
                }
                let end = if matches!(self, Payload::RegionStart { .. }) { "start" } else { "end" };
                write!(f, " region {end}")
            }
            Payload::Subtype(s) => write!(f, "{s}"),
            Payload::Call { name, args } => {
                let mut s = String::new();
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        s.push_str(", ");
                    }
                    let _ = match a {
                        CallArg::Str(t) => write!(s, "\"{t}\""),
                        CallArg::Name(n) => write!(s, "{n}"),
                        CallArg::Int(v) => write!(s, "{v}"),
                        CallArg::Real(v) => write!(s, "{}", expr_to_string(&Expr::Real(*v))),
                    };
                }
                write!(f, "call {name}({s})")
            }
            Payload::Assign { name, value } => write!(f, "{name} = {}", expr_to_string(value)),
            Payload::Search(m) => write!(f, "search {}", m.keyword()),
        }
    }
}

impl Display for SampleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.points();
        let mut i = 0;
        let mut first = true;
        while i < p.len() {
            let mut j = i;
            while j + 1 < p.len() && p[j + 1] == p[j] + 1 {
                j += 1;
            }
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            if j > i {
                write!(f, "{}-{}", p[i], p[j])?;
            } else {
                write!(f, "{}", p[i])?;
            }
            i = j + 1;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE1: &str = "!OAT$ install unroll region start\n!OAT$ name MyMatMul\n!OAT$ varied (i, j) from 1 to 16\n!OAT$ fitting least-squares 5 sampled (1-5, 8, 16)\n!OAT$ debug (pp)\ndo i=1, n\n  do j=1, n\n    do k=1,n\n      A(i, j) = A(i, j) + B(i, k) * C(k, j)\n    enddo\n  enddo\nenddo\n!OAT$ install unroll (i, j) region end\n";

    #[test]
    fn sample_one_directives() {
        let d = tokenize_directives(SAMPLE1).unwrap();
        assert_eq!(d.len(), 6);
        assert_eq!(
            d[0].payload,
            Payload::RegionStart { at_type: AtType::Install, feature: Feature::Unroll, targets: vec![] }
        );
        assert_eq!(d[1].payload, Payload::Subtype(SubtypeSpec::Name("MyMatMul".into())));
        let Payload::Subtype(SubtypeSpec::Fitting(fit)) = &d[3].payload else { panic!() };
        assert_eq!(fit.method, FitMethod::LeastSquares(5));
        let SampleScope::Points(p) = &fit.scope else { panic!() };
        assert_eq!(p.points(), &[1, 2, 3, 4, 5, 8, 16]);
        assert_eq!(d[4].payload, Payload::Subtype(SubtypeSpec::Debug(vec![DebugItem::Pp])));
        assert_eq!(d[5].line_no, 13);
    }

    #[test]
    fn no_sentinels_no_directives() {
        assert!(tokenize_directives("do i = 1, n\nenddo\n! plain comment\n").unwrap().is_empty());
    }

    #[test]
    fn continuation_joins_call() {
        let src = "!OAT$ call OAT_BPsetName(\u{201c}STARTTUNESIZE\u{201d}, \u{201c}nprocs\u{201d},  \n!OAT$ & \u{201c}OAT_NprocsStartSize\u{201d})\n";
        let d = tokenize_directives(src).unwrap();
        assert_eq!(d.len(), 1);
        let Payload::Call { name, args } = &d[0].payload else { panic!() };
        assert!(name.is("OAT_BPsetName"));
        assert_eq!(args.len(), 3);
        assert_eq!(args[2].text(), Some("OAT_NprocsStartSize"));
        assert_eq!(d[0].raw_text.lines().count(), 2);
    }

    #[test]
    fn lower_case_sentinel_and_extended_markers() {
        let d = tokenize_directives("!oat$ install LoopFusionSplit region start\n!oat$ SplitPoint (K, J, I)\n!oat$ SplitPointCopyDef region start\n").unwrap();
        assert_eq!(
            d[0].payload,
            Payload::RegionStart { at_type: AtType::Install, feature: Feature::LoopFusionSplit, targets: vec![] }
        );
        assert_eq!(d[1].payload, Payload::Subtype(SubtypeSpec::SplitPoint(vec!["K".into(), "J".into(), "I".into()])));
        assert_eq!(
            d[2].payload,
            Payload::Subtype(SubtypeSpec::SubRegion { kind: SubRegionKind::SplitPointCopyDef, start: true })
        );
    }

    #[test]
    fn according_forms() {
        let p = parse_payload("according min (eps) .and. condition ( iter < 5 )", 1).unwrap();
        let Payload::Subtype(SubtypeSpec::According(According::Criteria(c))) = p else { panic!() };
        assert!(matches!(c, Criterion::And(..)));
        let p = parse_payload("according estimated 2.0d0*CacheSize*OAT_PROBSIZE*OAT_PROBSIZE / (3.0d0*OAT_NUMPROC)", 1)
            .unwrap();
        assert!(matches!(p, Payload::Subtype(SubtypeSpec::According(According::Estimated(_)))));
        let p = parse_payload("according condition ((n + 1) < 5 .or. .not. (x >= y))", 1).unwrap();
        let back = parse_payload(&p.to_string(), 1).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = tokenize_directives("x = 1\n!OAT$ varied (i) from 9 to 2\n").unwrap_err();
        assert_eq!(err.line(), Some(2));
        let err = tokenize_directives("!OAT$ frobnicate\n").unwrap_err();
        assert!(err.to_string().contains("unknown directive"));
        let err = tokenize_directives("!OAT$ & x\n").unwrap_err();
        assert!(err.to_string().contains("continuation"));
        assert!(parse_payload("select region start", 3).is_err());
    }

    #[test]
    fn emit_round_trips() {
        for src in [
            "install unroll (i, j) region end",
            "static select region start",
            "dynamic select (eps, iter) region start",
            "select sub region start",
            "RotationOrder sub region end",
            "parameter (in CacheSize, out x, bp n)",
            "fitting user-defined 1 + x + x ** 2 sampled (1-3, 7)",
            "fitting auto",
            "fitting dspline sampled auto",
            "search AD-HOC",
            "search Brute-force",
            "number 2",
            "call OAT_ATexec(OAT_STATIC, OAT_StaticRoutines)",
            "call OAT_ATdel(OAT_InstallRoutines, \"MyMatMul\")",
            "OAT_TUNESTATIC = .true.",
            "NZ00 = 1",
            "name \"with space\"",
            "SplitPointCopyInsert",
            "a*b + c dynamic variable region start",
        ] {
            let p = parse_payload(src, 1).unwrap();
            let again = parse_payload(&p.to_string(), 1).unwrap();
            assert_eq!(p, again, "{src} -> {p}");
        }
    }

    #[test]
    fn formula_at_type_is_kept() {
        let p = parse_payload("a*b + c dynamic variable region start", 1).unwrap();
        let Payload::RegionStart { at_type, .. } = p else { panic!() };
        assert_eq!(at_type, AtType::Formula("a*b + c dynamic".into()));
    }

    #[test]
    fn strip_keeps_line_numbers() {
        let s = strip_directives(SAMPLE1);
        assert_eq!(s.lines().count(), SAMPLE1.lines().count());
        assert_eq!(s.lines().next(), Some(""));
    }
}
