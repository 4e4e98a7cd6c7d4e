use super::ast::*;
use std::fmt::Write;

fn real_literal(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

/// Render an expression with the minimum parentheses needed for the parser
/// to rebuild the same tree.
pub fn expr_to_string(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e, Pos::Leading);
    s
}

#[derive(Clone, Copy, PartialEq)]
enum Pos {
    /// Start of an additive chain: a bare unary minus is legal here.
    Leading,
    /// Operand with a minimum binding strength.
    Operand { min_prec: u8 },
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Bin(op, _, _) => op.precedence(),
        Expr::Neg(_) => 1,
        _ => 4,
    }
}

fn write_expr(out: &mut String, e: &Expr, pos: Pos) {
    let negish = match e {
        Expr::Neg(_) => true,
        Expr::Int(v) => *v < 0,
        Expr::Real(v) => v.is_sign_negative(),
        _ => false,
    };
    let needs_paren = match (e, pos) {
        (_, Pos::Operand { .. }) if negish => true,
        (_, Pos::Operand { min_prec }) => prec(e) < min_prec,
        (_, Pos::Leading) => false,
    };
    if needs_paren {
        out.push('(');
        write_expr(out, e, Pos::Leading);
        out.push(')');
        return;
    }
    match e {
        Expr::Int(v) => {
            let _ = write!(out, "{v}");
        }
        Expr::Real(v) => out.push_str(&real_literal(*v)),
        Expr::Var(n) => out.push_str(n.as_str()),
        Expr::Elem(n, args) => {
            out.push_str(n.as_str());
            write_args(out, args);
        }
        Expr::Call(f, args) => {
            out.push_str(f.name());
            write_args(out, args);
        }
        Expr::Neg(inner) => {
            out.push('-');
            // `-x` binds looser than `*`, so the operand is a full term.
            write_expr(out, inner, Pos::Operand { min_prec: 2 });
        }
        Expr::Bin(op, a, b) => {
            let p = op.precedence();
            let (lpos, rmin) = match op {
                BinOp::Pow => (Pos::Operand { min_prec: 4 }, 3),
                BinOp::Add | BinOp::Sub => (if pos == Pos::Leading { Pos::Leading } else { Pos::Operand { min_prec: p } }, p + 1),
                _ => (Pos::Operand { min_prec: p }, p + 1),
            };
            write_expr(out, a, lpos);
            let _ = write!(out, " {} ", op.symbol());
            write_expr(out, b, Pos::Operand { min_prec: rmin });
        }
    }
}

fn write_args(out: &mut String, args: &[Expr]) {
    out.push('(');
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_expr(out, a, Pos::Leading);
    }
    out.push(')');
}

fn lvalue_to_string(l: &LValue) -> String {
    match l {
        LValue::Scalar(n) => n.to_string(),
        LValue::Elem(n, idx) => {
            let mut s = n.to_string();
            write_args(&mut s, idx);
            s
        }
    }
}

pub fn assign_to_string(a: &Assign) -> String {
    format!("{} = {}", lvalue_to_string(&a.target), expr_to_string(&a.value))
}

pub fn write_stmts(out: &mut String, stmts: &[Stmt], depth: usize) {
    for s in stmts {
        write_stmt(out, s, depth);
    }
}

pub fn write_stmt(out: &mut String, s: &Stmt, depth: usize) {
    let pad = "  ".repeat(depth);
    match &s.kind {
        StmtKind::Do(l) => {
            let _ = write!(out, "{pad}do {} = {}, {}", l.var, expr_to_string(&l.lo), expr_to_string(&l.hi));
            if let Some(st) = &l.step {
                let _ = write!(out, ", {}", expr_to_string(st));
            }
            out.push('\n');
            write_stmts(out, &l.body, depth + 1);
            let _ = writeln!(out, "{pad}enddo");
        }
        StmtKind::Assign(a) => {
            let _ = writeln!(out, "{pad}{}", assign_to_string(a));
        }
        StmtKind::Multi(v) => {
            let parts: Vec<String> = v.iter().map(assign_to_string).collect();
            let _ = writeln!(out, "{pad}{}", parts.join("; "));
        }
        StmtKind::Passthrough(t) => {
            let _ = writeln!(out, "{pad}{t}");
        }
    }
}

/// One-line rendering used in diagnostics.
pub fn stmt_summary(s: &Stmt) -> String {
    match &s.kind {
        StmtKind::Do(l) => format!("do {} = {}, {}", l.var, expr_to_string(&l.lo), expr_to_string(&l.hi)),
        _ => {
            let mut t = String::new();
            write_stmt(&mut t, s, 0);
            t.trim_end().to_string()
        }
    }
}

pub fn emit_source(p: &KernelProgram) -> String {
    let mut out = String::new();
    for d in &p.decls {
        let ext: Vec<String> = d.extents.iter().map(expr_to_string).collect();
        let _ = writeln!(out, "real {}({})", d.name, ext.join(", "));
    }
    write_stmts(&mut out, &p.stmts, 0);
    out
}
