use super::OrchError;
use crate::directive::{Region, SubRegionKind};
use crate::kernel::{count_operations, execute, measure, ExecEnv, Ident, KernelError, KernelProgram, MeasureMode, Stmt, Value};
use crate::search::Evaluator;
use crate::transform::{instantiate, splice, Assignment};
use std::collections::BTreeMap;

/// Region body with prepro/postpro statements pulled out.
pub struct Parts {
    pub pre: Vec<Stmt>,
    pub main: Vec<Stmt>,
    pub post: Vec<Stmt>,
}

pub fn split_prepost(region: &Region, body: &[Stmt]) -> Parts {
    let mut main = body.to_vec();
    let mut pre = Vec::new();
    let mut post = Vec::new();
    for s in &region.sub_regions {
        let slot = match s.kind {
            SubRegionKind::Prepro => &mut pre,
            SubRegionKind::Postpro => &mut post,
            _ => continue,
        };
        slot.extend(s.stmts.iter().cloned());
        main = splice(&main, s.start_line, s.end_line, &[]);
    }
    Parts { pre, main, post }
}

/// The region body for an assignment covering the region and its nested
/// regions: children are built first and spliced in place.
pub fn build(region: &Region, a: &Assignment) -> Result<Vec<Stmt>, OrchError> {
    let mut body = region.body.clone();
    for c in &region.children {
        let cb = build(c, a)?;
        body = splice(&body, c.start_line, c.end_line, &cb);
    }
    if a.keys().any(|k| owns(region, k)) {
        Ok(instantiate(region, &body, a)?)
    } else {
        Ok(body)
    }
}

fn owns(region: &Region, key: &str) -> bool {
    key.len() > region.name.len()
        && key[..region.name.len()].eq_ignore_ascii_case(&region.name)
        && key.as_bytes()[region.name.len()] == b'_'
}

/// Costs a region variant by operation count or by wall time.
pub struct RegionEvaluator<'a> {
    pub region: &'a Region,
    pub program: &'a KernelProgram,
    pub fixed: Assignment,
    pub bindings: BTreeMap<Ident, Value>,
    pub mode: MeasureMode,
    pub repetitions: usize,
    /// Environment shared by all wall-time runs.
    pub env: Option<ExecEnv>,
}

impl<'a> RegionEvaluator<'a> {
    pub fn new(
        region: &'a Region,
        program: &'a KernelProgram,
        fixed: Assignment,
        bindings: BTreeMap<Ident, Value>,
        mode: MeasureMode,
        seed: u64,
    ) -> Result<Self, OrchError> {
        let env = match mode {
            MeasureMode::Wall => {
                let prog = KernelProgram { decls: program.decls.clone(), stmts: region.body.clone() };
                Some(ExecEnv::seeded(&prog, &bindings, seed)?)
            }
            MeasureMode::Deterministic => None,
        };
        Ok(RegionEvaluator { region, program, fixed, bindings, mode, repetitions: 5, env })
    }

    pub fn variant(&self, a: &Assignment) -> Result<Vec<Stmt>, OrchError> {
        let mut full = self.fixed.clone();
        full.extend(a.iter().map(|(k, v)| (k.clone(), v.clone())));
        let body = build(self.region, &full)?;
        Ok(split_prepost(self.region, &body).main)
    }

    fn cost(&self, a: &Assignment) -> Result<f64, OrchError> {
        let stmts = self.variant(a)?;
        match (&self.mode, &self.env) {
            (MeasureMode::Wall, Some(env)) => {
                let prog = KernelProgram { decls: self.program.decls.clone(), stmts };
                Ok(measure(&prog, env, self.repetitions, MeasureMode::Wall)?)
            }
            _ => match count_operations(&stmts, &self.bindings) {
                Ok(c) => Ok(c.total() as f64),
                Err(KernelError::NotAnalyzable(_)) => {
                    let prog = KernelProgram { decls: self.program.decls.clone(), stmts };
                    let mut env = ExecEnv::seeded(&prog, &self.bindings, 0)?;
                    Ok(execute(&prog, &mut env)?.total() as f64)
                }
                Err(e) => Err(e.into()),
            },
        }
    }
}

impl Evaluator for RegionEvaluator<'_> {
    fn evaluate(&self, a: &Assignment) -> Result<f64, String> {
        self.cost(a).map_err(|e| e.to_string())
    }

    fn concurrent(&self) -> bool {
        self.mode == MeasureMode::Deterministic
    }
}
