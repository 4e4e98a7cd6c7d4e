//! Performance models: sample sets, least-squares fits, optimum prediction,
//! cost expressions and `according` selection.

use crate::directive::{BoolExpr, Criterion, FitMethod};
use crate::kernel::{eval_expr, tokenize, BinOp, Cursor, Expr, Ident, KernelError, Value};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("bad sample spec: {0}")]
    Sample(String),
    #[error("{samples} sample(s) cannot determine {params} coefficient(s)")]
    Underdetermined { samples: usize, params: usize },
    #[error("sample point {0} given twice")]
    DuplicateX(i64),
    #[error("sample matrix is rank deficient")]
    Singular,
    #[error("unsupported method `{0}`")]
    Unsupported(String),
    #[error("unbound name `{0}`")]
    Unbound(String),
    #[error("no branch satisfies conditions")]
    NoSurvivor,
    #[error(transparent)]
    Eval(KernelError),
}

/// Sorted, duplicate-free, nonempty set of sample points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleSpec {
    points: Vec<i64>,
}

impl SampleSpec {
    pub fn new(points: impl IntoIterator<Item = i64>) -> Option<Self> {
        let mut points: Vec<i64> = points.into_iter().collect();
        points.sort_unstable();
        points.dedup();
        (!points.is_empty()).then_some(SampleSpec { points })
    }

    pub fn points(&self) -> &[i64] {
        &self.points
    }

    /// Points that fall inside `lo..=hi`.
    pub fn within(&self, lo: i64, hi: i64) -> Vec<i64> {
        self.points.iter().copied().filter(|p| (lo..=hi).contains(p)).collect()
    }
}

/// `sampled auto`: every 4th point from `lo`, plus both endpoints.
pub fn auto_samples(lo: i64, hi: i64) -> Vec<i64> {
    let mut v: Vec<i64> = (lo..=hi).step_by(4).collect();
    if v.last() != Some(&hi) {
        v.push(hi);
    }
    v
}

/// Items `a` or `a-b`, comma separated, optionally parenthesized.
pub(crate) fn parse_sample_items(c: &mut Cursor) -> Result<SampleSpec, String> {
    let paren = c.eat_sym("(");
    let mut points = Vec::new();
    loop {
        let a = c.int().map_err(|e| e.to_string())?;
        if c.eat_sym("-") {
            let b = c.int().map_err(|e| e.to_string())?;
            if b < a {
                return Err(format!("reversed range {a}-{b}"));
            }
            if b - a > 1_000_000 {
                return Err(format!("range {a}-{b} is too large"));
            }
            points.extend(a..=b);
        } else {
            points.push(a);
        }
        if !c.eat_sym(",") {
            break;
        }
    }
    if paren {
        c.expect_sym(")").map_err(|e| e.to_string())?;
    }
    SampleSpec::new(points).ok_or_else(|| "empty sample set".to_string())
}

pub fn parse_sample_spec(text: &str) -> Result<SampleSpec, FitError> {
    let toks = tokenize(text, 1).map_err(|e| FitError::Sample(e.to_string()))?;
    let mut c = Cursor::new(&toks, 1);
    let spec = parse_sample_items(&mut c).map_err(FitError::Sample)?;
    c.expect_end().map_err(|e| FitError::Sample(e.to_string()))?;
    Ok(spec)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    LeastSquares(usize),
    /// Terms of the user expression, each a basis function of `var`.
    UserDefined { terms: Vec<Expr>, var: Ident },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitModel {
    pub kind: ModelKind,
    pub coefficients: Vec<f64>,
    pub domain: (i64, i64),
}

impl FitModel {
    pub fn eval(&self, x: i64) -> f64 {
        match &self.kind {
            ModelKind::LeastSquares(_) => {
                let xf = x as f64;
                self.coefficients.iter().rev().fold(0.0, |acc, c| acc * xf + c)
            }
            ModelKind::UserDefined { terms, var } => terms
                .iter()
                .zip(&self.coefficients)
                .map(|(t, c)| c * basis_value(t, var, x).unwrap_or(f64::NAN))
                .sum(),
        }
    }
}

fn basis_value(term: &Expr, var: &Ident, x: i64) -> Result<f64, FitError> {
    let lookup = |n: &Ident| (n == var).then_some(Value::Int(x));
    match eval_expr(term, &lookup) {
        Ok(v) => Ok(v.as_f64()),
        Err(KernelError::Unbound(n)) => Err(FitError::Unbound(n)),
        Err(e) => Err(FitError::Eval(e)),
    }
}

/// Split `a + b - c` into its additive terms.
fn additive_terms(e: &Expr, out: &mut Vec<Expr>) {
    match e {
        Expr::Bin(BinOp::Add | BinOp::Sub, a, b) => {
            additive_terms(a, out);
            additive_terms(b, out);
        }
        Expr::Neg(a) => additive_terms(a, out),
        Expr::Int(_) | Expr::Real(_) => out.push(Expr::Int(1)),
        other => out.push(other.clone()),
    }
}

fn check_samples(samples: &[(i64, f64)], params: usize) -> Result<(i64, i64), FitError> {
    let mut xs: Vec<i64> = samples.iter().map(|s| s.0).collect();
    xs.sort_unstable();
    if let Some(w) = xs.windows(2).find(|w| w[0] == w[1]) {
        return Err(FitError::DuplicateX(w[0]));
    }
    if samples.len() < params {
        return Err(FitError::Underdetermined { samples: samples.len(), params });
    }
    Ok((xs[0], xs[xs.len() - 1]))
}

/// Least-squares solution of `a c = y` by Householder QR. Columns are scaled
/// to unit norm first so that high powers of `x` do not swamp the constant
/// column.
fn solve_least_squares(mut a: Vec<Vec<f64>>, mut y: Vec<f64>) -> Result<Vec<f64>, FitError> {
    let m = a.len();
    let n = a[0].len();
    let mut scale = vec![0.0; n];
    for j in 0..n {
        scale[j] = (0..m).map(|i| a[i][j] * a[i][j]).sum::<f64>().sqrt();
        if scale[j] == 0.0 {
            return Err(FitError::Singular);
        }
        for row in a.iter_mut() {
            row[j] /= scale[j];
        }
    }
    for k in 0..n {
        let norm = (k..m).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(FitError::Singular);
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| a[i][k]).collect();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|t| t * t).sum();
        if vv == 0.0 {
            continue;
        }
        for j in k..n {
            let d: f64 = (k..m).map(|i| v[i - k] * a[i][j]).sum::<f64>() * 2.0 / vv;
            for i in k..m {
                a[i][j] -= d * v[i - k];
            }
        }
        let d: f64 = (k..m).map(|i| v[i - k] * y[i]).sum::<f64>() * 2.0 / vv;
        for i in k..m {
            y[i] -= d * v[i - k];
        }
    }
    let mut c = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * c[j]).sum();
        if a[k][k].abs() < 1e-12 {
            return Err(FitError::Singular);
        }
        c[k] = (y[k] - s) / a[k][k];
    }
    Ok(c.iter().zip(&scale).map(|(c, s)| c / s).collect())
}

/// Polynomial of degree `order`; coefficients are lowest power first.
pub fn fit_least_squares(samples: &[(i64, f64)], order: usize) -> Result<FitModel, FitError> {
    let domain = check_samples(samples, order + 1)?;
    let a = samples
        .iter()
        .map(|&(x, _)| (0..=order).map(|p| (x as f64).powi(p as i32)).collect())
        .collect();
    let y = samples.iter().map(|s| s.1).collect();
    let coefficients = solve_least_squares(a, y)?;
    Ok(FitModel { kind: ModelKind::LeastSquares(order), coefficients, domain })
}

/// Least squares over the additive terms of `expr`, with `var` standing for
/// the sample point. A constant term contributes the intercept column.
pub fn fit_user_defined(samples: &[(i64, f64)], expr: &Expr, var: &Ident) -> Result<FitModel, FitError> {
    let mut terms = Vec::new();
    additive_terms(expr, &mut terms);
    let mut seen: Vec<Expr> = Vec::new();
    terms.retain(|t| {
        let fresh = !seen.contains(t);
        seen.push(t.clone());
        fresh
    });
    let domain = check_samples(samples, terms.len())?;
    let mut a = Vec::with_capacity(samples.len());
    for &(x, _) in samples {
        a.push(terms.iter().map(|t| basis_value(t, var, x)).collect::<Result<Vec<_>, _>>()?);
    }
    let y = samples.iter().map(|s| s.1).collect();
    let coefficients = solve_least_squares(a, y)?;
    Ok(FitModel { kind: ModelKind::UserDefined { terms, var: var.clone() }, coefficients, domain })
}

/// Fit by a directive's method. The order is capped so that the samples
/// always determine the model; `auto` uses order 5.
pub fn fit(method: &FitMethod, samples: &[(i64, f64)], var: &Ident) -> Result<FitModel, FitError> {
    let cap = samples.len().saturating_sub(1);
    match method {
        FitMethod::LeastSquares(order) => fit_least_squares(samples, (*order).min(cap)),
        FitMethod::Auto => fit_least_squares(samples, 5.min(cap)),
        FitMethod::UserDefined(e) => fit_user_defined(samples, e, var),
        FitMethod::Dspline => Err(FitError::Unsupported("dspline".into())),
    }
}

/// Integer argmin of the model over `lo..=hi`; ties go to the smallest x.
pub fn predict_optimum(model: &FitModel, lo: i64, hi: i64) -> i64 {
    let mut best = lo;
    let mut best_v = f64::INFINITY;
    for x in lo..=hi {
        let v = model.eval(x);
        if v < best_v {
            best = x;
            best_v = v;
        }
    }
    best
}

pub fn eval_cost_expression(expr: &Expr, bindings: &BTreeMap<Ident, f64>) -> Result<f64, FitError> {
    let lookup = |n: &Ident| bindings.get(n).map(|v| Value::Real(*v));
    match eval_expr(expr, &lookup) {
        Ok(v) => Ok(v.as_f64()),
        Err(KernelError::Unbound(n)) => Err(FitError::Unbound(n)),
        Err(e) => Err(FitError::Eval(e)),
    }
}

pub fn eval_bool(b: &BoolExpr, bindings: &BTreeMap<Ident, f64>) -> Result<bool, FitError> {
    Ok(match b {
        BoolExpr::Const(v) => *v,
        BoolExpr::Cmp(l, op, r) => op.holds(eval_cost_expression(l, bindings)?, eval_cost_expression(r, bindings)?),
        BoolExpr::Not(x) => !eval_bool(x, bindings)?,
        BoolExpr::And(x, y) => eval_bool(x, bindings)? && eval_bool(y, bindings)?,
        BoolExpr::Or(x, y) => eval_bool(x, bindings)? || eval_bool(y, bindings)?,
    })
}

/// `min` clauses are always true as filters; they only name targets.
fn passes(c: &Criterion, rec: &BTreeMap<Ident, f64>) -> Result<bool, FitError> {
    Ok(match c {
        Criterion::Min(_) => true,
        Criterion::Condition(b) => eval_bool(b, rec)?,
        Criterion::And(a, b) => passes(a, rec)? && passes(b, rec)?,
        Criterion::Or(a, b) => passes(a, rec)? || passes(b, rec)?,
    })
}

fn min_targets<'a>(c: &'a Criterion, out: &mut Vec<&'a Ident>) {
    match c {
        Criterion::Min(n) => out.push(n),
        Criterion::Condition(_) => {}
        Criterion::And(a, b) | Criterion::Or(a, b) => {
            min_targets(a, out);
            min_targets(b, out);
        }
    }
}

/// Index of the chosen candidate: conditions filter, then `min` targets are
/// minimized in the order written. Ties keep the earlier candidate.
pub fn evaluate_according(c: &Criterion, candidates: &[BTreeMap<Ident, f64>]) -> Result<usize, FitError> {
    let mut survivors = Vec::new();
    for (i, rec) in candidates.iter().enumerate() {
        if passes(c, rec)? {
            survivors.push(i);
        }
    }
    let mut targets = Vec::new();
    min_targets(c, &mut targets);
    let key = |i: usize| -> Result<Vec<f64>, FitError> {
        targets
            .iter()
            .map(|t| candidates[i].get(*t).copied().ok_or_else(|| FitError::Unbound(t.to_string())))
            .collect()
    };
    let mut best: Option<(usize, Vec<f64>)> = None;
    for i in survivors {
        let k = key(i)?;
        let better = match &best {
            None => true,
            Some((_, bk)) => k.partial_cmp(bk) == Some(std::cmp::Ordering::Less),
        };
        if better {
            best = Some((i, k));
        }
    }
    best.map(|b| b.0).ok_or(FitError::NoSurvivor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::parse_expr;

    #[test]
    fn sample_specs() {
        assert_eq!(parse_sample_spec("1-5, 8, 16").unwrap().points(), &[1, 2, 3, 4, 5, 8, 16]);
        assert_eq!(parse_sample_spec("7").unwrap().points(), &[7]);
        assert_eq!(parse_sample_spec("1-3,3").unwrap().points(), &[1, 2, 3]);
        assert!(parse_sample_spec("5-1").is_err());
        assert!(parse_sample_spec("").is_err());
    }

    #[test]
    fn auto_sampling_keeps_endpoints() {
        assert_eq!(auto_samples(1, 16), vec![1, 5, 9, 13, 16]);
        assert_eq!(auto_samples(1, 13), vec![1, 5, 9, 13]);
        assert_eq!(auto_samples(3, 3), vec![3]);
    }

    #[test]
    fn constant_fit_is_mean() {
        let m = fit_least_squares(&[(1, 2.0), (2, 4.0), (3, 6.0)], 0).unwrap();
        assert!((m.coefficients[0] - 4.0).abs() < 1e-12);
        assert_eq!(predict_optimum(&m, 1, 16), 1);
    }

    #[test]
    fn underdetermined_and_duplicates() {
        assert!(matches!(fit_least_squares(&[(1, 1.0), (2, 1.0)], 2), Err(FitError::Underdetermined { .. })));
        assert!(matches!(fit_least_squares(&[(1, 1.0), (1, 2.0)], 0), Err(FitError::DuplicateX(1))));
    }

    #[test]
    fn user_defined_terms_fit() {
        let e = parse_expr("1 + x + x*x").unwrap();
        let samples: Vec<(i64, f64)> = (1..=6).map(|x| (x, ((x - 4) * (x - 4)) as f64)).collect();
        let m = fit_user_defined(&samples, &e, &Ident::new("x")).unwrap();
        assert_eq!(predict_optimum(&m, 1, 6), 4);
        let bad = parse_expr("1 + y").unwrap();
        assert!(matches!(fit_user_defined(&samples, &bad, &Ident::new("x")), Err(FitError::Unbound(_))));
    }

    #[test]
    fn dspline_is_rejected() {
        assert!(matches!(fit(&FitMethod::Dspline, &[(1, 1.0)], &Ident::new("x")), Err(FitError::Unsupported(_))));
    }

    #[test]
    fn unbound_cost_name() {
        let e = parse_expr("CacheSize * 2").unwrap();
        assert_eq!(eval_cost_expression(&e, &BTreeMap::new()), Err(FitError::Unbound("CacheSize".into())));
    }
}
