use super::{Scanner, SearchError, SearchResult, SearchSpace, Evaluator};
use crate::directive::{FitSpec, SampleScope};
use crate::fitting::{auto_samples, fit, predict_optimum};
use crate::kernel::Ident;

/// Search by model: for each dim, last first, measure only the sample
/// points, fit the cost model, predict the optimum over the whole range and
/// measure it once more. The dim is then fixed at the cheapest measured
/// value. `vars` names the varied variable of each dim for user-defined
/// models.
pub fn fitted_search(
    space: &SearchSpace,
    vars: &[Ident],
    spec: &FitSpec,
    eval: &dyn Evaluator,
) -> Result<SearchResult, SearchError> {
    let mut s = Scanner::new(space.dims.iter().collect(), eval)?;
    for k in (0..space.dims.len()).rev() {
        let dim = s.dim(k).clone();
        let (lo, hi) = dim
            .int_range()
            .ok_or_else(|| SearchError::Fit(format!("`{}` is not an integer range", dim.name)))?;
        let xs = sample_points(spec, lo, hi);
        if xs.is_empty() {
            return Err(SearchError::Fit(format!("no sample point of `{}` lies in {lo}..{hi}", dim.name)));
        }
        let mut measured = Vec::with_capacity(xs.len() + 1);
        for &x in &xs {
            let mut p = s.current.clone();
            p[k] = (x - lo) as usize;
            measured.push((x, s.evaluate_at(&p)?));
        }
        let var = vars.get(k).cloned().unwrap_or_else(|| Ident::new(dim.name.clone()));
        let model = fit(&spec.method, &measured, &var).map_err(|e| SearchError::Fit(e.to_string()))?;
        let x = predict_optimum(&model, lo, hi);
        let mut p = s.current.clone();
        p[k] = (x - lo) as usize;
        measured.push((x, s.evaluate_at(&p)?));
        let mut best = measured[0];
        for m in &measured[1..] {
            if m.1 < best.1 {
                best = *m;
            }
        }
        s.current[k] = (best.0 - lo) as usize;
    }
    Ok(s.finish())
}

fn sample_points(spec: &FitSpec, lo: i64, hi: i64) -> Vec<i64> {
    match &spec.scope {
        SampleScope::Points(p) => p.within(lo, hi),
        SampleScope::Auto => auto_samples(lo, hi),
    }
}

/// Evaluations `fitted_search` performs: the in-range samples of every dim
/// plus one confirming run each.
pub fn fitted_evaluations(space: &SearchSpace, spec: &FitSpec) -> u128 {
    space
        .dims
        .iter()
        .map(|d| match d.int_range() {
            Some((lo, hi)) => sample_points(spec, lo, hi).len() as u128 + 1,
            None => 0,
        })
        .sum()
}
