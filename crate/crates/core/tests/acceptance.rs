//! Acceptance gate: one PASS/FAIL line per criterion. Tolerances and time
//! limits are pinned here.

use oat_core::directive::{
    at_type_nests, feature_nests, parse_source, validate_nesting, According, AtType, Feature, NestRule, SearchMethod,
};
use oat_core::fitting::{eval_cost_expression, fit, predict_optimum};
use oat_core::kernel::{interpret, parse_kernel, states_equal, ExecEnv, Ident, KernelProgram, Stmt, Value};
use oat_core::orchestrator::codegen::{codegen, CodegenFlags};
use oat_core::orchestrator::{record_count, Options, Session, TRACE_FILE};
use oat_core::params::{
    check_stage_access, enforce_order, lookup, read_param_file, write_param_file, ParamError, ParamValue, Stage,
    StageState, KIND_ALL, KIND_INSTALL,
};
use oat_core::search::{build_space, composed_search, count_evaluations, FnEvaluator, SearchSpace};
use oat_core::transform::{reorder_statements, rotation_spec, structural_candidates, unroll, Assignment};
use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

const REL_TOL: f64 = 1e-12;
const FIT_TOL: f64 = 1e-9;
const SEEDS: u64 = 20;
const LIMIT_REDUCED_EXHAUSTIVE: Duration = Duration::from_secs(10);
const LIMIT_ENUMERATION: Duration = Duration::from_secs(1);
const LIMIT_EQUIVALENCE: Duration = Duration::from_secs(60);
const LIMIT_END_TO_END: Duration = Duration::from_secs(300);

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture(name: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)).unwrap()
}

fn tree_of(names: &[&str]) -> oat_core::directive::RegionTree {
    let text: Vec<String> = names.iter().map(|n| fixture(n)).collect();
    parse_source(&text.join("\n")).unwrap()
}

// 1. search counts on Sample 10

fn sample10_spaces(methods: [SearchMethod; 2], reduce: Option<(i64, i64)>) -> Vec<SearchSpace> {
    let tree = tree_of(&["sample10.f"]);
    let outer = &tree.regions[0];
    let mut spaces = vec![build_space(outer).unwrap()];
    for c in &outer.children {
        spaces.push(build_space(c).unwrap());
    }
    for (k, s) in spaces.iter_mut().enumerate() {
        s.method = if k == 0 { methods[0] } else { methods[1] };
        if let Some((outer_hi, inner_hi)) = reduce {
            let hi = if k == 0 { outer_hi } else { inner_hi };
            for d in &mut s.dims {
                d.domain.retain(|v| v.as_int().is_some_and(|x| x <= hi));
            }
        }
    }
    spaces
}

/// The paper's tuple notation, `(BL,(i,j),(l,m))`.
fn tuple(spaces: &[SearchSpace], a: &Assignment) -> String {
    let parts: Vec<String> = spaces
        .iter()
        .map(|s| {
            let v: Vec<String> = s.dims.iter().map(|d| a[&d.name].to_string()).collect();
            if v.len() == 1 {
                v[0].clone()
            } else {
                format!("({})", v.join(","))
            }
        })
        .collect();
    format!("({})", parts.join(","))
}

/// Separable bowl with its minimum at (16,(2,8),(3,9)).
fn bowl(spaces: &[SearchSpace]) -> impl Fn(&Assignment) -> f64 + Sync {
    let names: Vec<String> = spaces.iter().flat_map(|s| s.dims.iter().map(|d| d.name.clone())).collect();
    let target = [16.0, 2.0, 8.0, 3.0, 9.0];
    move |a: &Assignment| {
        names.iter().zip(target).map(|(n, t)| (a[n].as_int().unwrap() as f64 - t).powi(2)).sum::<f64>()
    }
}

fn criterion_1() -> Outcome {
    use SearchMethod::{AdHoc, Exhaustive};
    let mut found = Vec::new();
    for (methods, want) in [([AdHoc, AdHoc], 144u128), ([Exhaustive, AdHoc], 144), ([AdHoc, Exhaustive], 2064)] {
        let spaces = sample10_spaces(methods, None);
        let predicted = count_evaluations(&spaces);
        let r = composed_search(&spaces, &FnEvaluator(bowl(&spaces))).map_err(|e| e.to_string())?;
        ensure(predicted == want && r.evaluations as u128 == want && r.history.len() as u128 == want, || {
            format!("{methods:?}: predicted {predicted}, ran {} (want {want})", r.evaluations)
        })?;
        let trace: Vec<String> = r.history.iter().map(|(a, _)| tuple(&spaces, a)).collect();
        if methods == [AdHoc, AdHoc] {
            ensure(trace[0] == "(1,(1,1),(1,1))" && trace[1] == "(1,(1,1),(1,2))", || format!("trace starts {:?}", &trace[..2]))?;
        }
        if methods == [AdHoc, Exhaustive] {
            ensure(trace.last().unwrap() == "(16,(2,8),(3,9))", || format!("trace ends {}", trace.last().unwrap()))?;
        }
        found.push(r.evaluations.to_string());
    }
    let full = count_evaluations(&sample10_spaces([Exhaustive, Exhaustive], None));
    ensure(full == 16 * 32u128.pow(4), || format!("all-exhaustive count {full}"))?;
    let reduced = sample10_spaces([Exhaustive, Exhaustive], Some((4, 8)));
    let t = Instant::now();
    let r = composed_search(&reduced, &FnEvaluator(bowl(&reduced))).map_err(|e| e.to_string())?;
    let took = t.elapsed();
    ensure(r.evaluations == 16_384 && count_evaluations(&reduced) == 16_384, || format!("reduced ran {}", r.evaluations))?;
    ensure(took < LIMIT_REDUCED_EXHAUSTIVE, || format!("reduced exhaustive took {took:?}"))?;
    Ok(format!("{} evaluations; all-exhaustive {full}; reduced 16384 in {took:.2?}", found.join("/")))
}

// 2. Sample 8 candidates

const SAMPLE8_TAGS: [&str; 8] = [
    "baseline",
    "split@K",
    "split@J",
    "split@I",
    "fuse(k,j)",
    "split@K+fuse(k,j)",
    "fuse(k,j,i)",
    "split@K+fuse(k,j,i)",
];

fn criterion_2() -> Outcome {
    let tree = tree_of(&["sample8.f"]);
    let t = Instant::now();
    let set = oat_core::transform::enumerate_candidates(&tree.regions[0]).map_err(|e| e.to_string())?;
    let took = t.elapsed();
    let tags: Vec<String> = set
        .variants
        .iter()
        .map(|v| v.assignment.values().next().and_then(|x| x.as_str()).unwrap_or("").to_string())
        .collect();
    ensure(tags == SAMPLE8_TAGS, || format!("tags {tags:?}"))?;
    ensure(took < LIMIT_ENUMERATION, || format!("took {took:?}"))?;
    Ok(format!("8 variants with the expected tags in {took:.2?}"))
}

// 3. semantic equivalence

fn equal_over_seeds(decls: &KernelProgram, base: &[Stmt], variant: &[Stmt], b: &BTreeMap<Ident, Value>) -> Result<(), String> {
    let p0 = KernelProgram { decls: decls.decls.clone(), stmts: base.to_vec() };
    let p1 = KernelProgram { decls: decls.decls.clone(), stmts: variant.to_vec() };
    for seed in 0..SEEDS {
        let env = ExecEnv::seeded(&p0, b, seed).map_err(|e| e.to_string())?;
        let a = interpret(&p0, env.clone()).map_err(|e| e.to_string())?;
        let v = interpret(&p1, env).map_err(|e| e.to_string())?;
        states_equal(&a, &v, REL_TOL).map_err(|m| format!("seed {seed}: {m:?}"))?;
    }
    Ok(())
}

const UNROLL_KERNEL: &str = "do i = 1, n
  do j = 1, m
    A(i, j) = A(i, j) * 0.5 + B(i, j) * C(j, i)
    s = s + A(i, j)
  enddo
enddo
";

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let mut checked = 0;
    let prog = parse_kernel(UNROLL_KERNEL).map_err(|e| e.to_string())?;
    for n in 1..=9i64 {
        for m in 1..=9i64 {
            let b: BTreeMap<Ident, Value> = [
                (Ident::new("n"), Value::Int(n)),
                (Ident::new("m"), Value::Int(m)),
                (Ident::new("s"), Value::Real(0.25)),
            ]
            .into();
            for fi in 1..=4 {
                for fj in 1..=4 {
                    let f: BTreeMap<Ident, i64> = [(Ident::new("i"), fi), (Ident::new("j"), fj)].into();
                    let v = unroll(&prog.stmts, &f).map_err(|e| e.to_string())?;
                    equal_over_seeds(&prog, &prog.stmts, &v, &b).map_err(|e| format!("unroll n={n} m={m} ({fi},{fj}): {e}"))?;
                    checked += 1;
                }
            }
        }
    }
    let tree = tree_of(&["sample8.f"]);
    let r8 = &tree.regions[0];
    let b8: BTreeMap<Ident, Value> =
        [("NX", 3), ("NY", 4), ("NZ", 5)].into_iter().map(|(k, v)| (Ident::new(k), Value::Int(v))).collect();
    let cands = structural_candidates(r8, &r8.body).map_err(|e| e.to_string())?;
    ensure(cands.len() == 8, || format!("{} split/fusion candidates", cands.len()))?;
    for (tag, prog, _) in &cands {
        equal_over_seeds(&tree.program, &r8.body, prog, &b8).map_err(|e| format!("{tag}: {e}"))?;
        checked += 1;
    }
    let tree = tree_of(&["sample9.f"]);
    let r9 = &tree.regions[0];
    let b9: BTreeMap<Ident, Value> = [("NX00", 1), ("NX01", 3), ("NY00", 1), ("NY01", 4), ("NZ00", 1), ("NZ01", 5)]
        .into_iter()
        .map(|(k, v)| (Ident::new(k), Value::Int(v)))
        .collect();
    let spec = rotation_spec(r9).ok_or("no RotationOrder groups")?.map_err(|e| e.to_string())?;
    let orders = reorder_statements(&r9.body, &spec).map_err(|e| e.to_string())?;
    ensure(orders.len() == 2, || format!("{} orderings", orders.len()))?;
    for (k, o) in orders.iter().enumerate() {
        equal_over_seeds(&tree.program, &r9.body, o, &b9).map_err(|e| format!("ordering {k}: {e}"))?;
        checked += 1;
    }
    let took = t.elapsed();
    ensure(took < LIMIT_EQUIVALENCE, || format!("took {took:?}"))?;
    Ok(format!("{checked} variants x {SEEDS} seeds equal at rel {REL_TOL:e} in {took:.1?}"))
}

// 4. parameter files

const INSTALL_LISTING: &str = "(SetCacheParam\n  (CacheSize 64)\n  (CacheLine 8)\n)\n";
const STATIC_LISTING: &str = "(MyMatMul
(OAT_NUMPROCS 4)
(OAT_SAMPDIST 1024)
(OAT_PROBSIZE 1024
(MyMatMul_I 4)
(MyMatMul_J 8) )
(OAT_PROBSIZE 2048
(MyMatMul_I 4)
(MyMatMul_J 9) )
(OAT_PROBSIZE 3072
(MyMatMul_I 5)
(MyMatMul_J 10) )
)
";

fn criterion_4() -> Outcome {
    for listing in [INSTALL_LISTING, STATIC_LISTING] {
        let t = read_param_file(listing).map_err(|e| e.to_string())?;
        let back = write_param_file(&t);
        ensure(back == listing, || format!("round trip changed bytes:\n{back}"))?;
    }
    let t = read_param_file(STATIC_LISTING).unwrap();
    let v = lookup(&t, "MyMatMul", "MyMatMul_J", &[("OAT_PROBSIZE", ParamValue::Int(3072))]).map_err(|e| e.to_string())?;
    ensure(v.as_int() == Some(10), || format!("lookup gave {v}"))?;
    Ok("both listings byte-exact; MyMatMul_J at 3072 = 10".into())
}

// 5. fitting

fn criterion_5() -> Outcome {
    let xs = [1i64, 2, 3, 4, 5, 8, 16];
    let truth = [3.0, -2.0, 0.5];
    let samples: Vec<(i64, f64)> = xs.iter().map(|&x| (x, truth[0] + truth[1] * x as f64 + truth[2] * (x * x) as f64)).collect();
    let model = fit(&oat_core::directive::FitMethod::LeastSquares(2), &samples, &Ident::new("x")).map_err(|e| e.to_string())?;
    for (c, t) in model.coefficients.iter().zip(truth) {
        ensure(((c - t) / t).abs() <= FIT_TOL, || format!("coefficients {:?}", model.coefficients))?;
    }
    let bowl: Vec<(i64, f64)> = xs.iter().map(|&x| (x, ((x - 8) * (x - 8)) as f64)).collect();
    let m = fit(&oat_core::directive::FitMethod::LeastSquares(2), &bowl, &Ident::new("x")).map_err(|e| e.to_string())?;
    let opt = predict_optimum(&m, 1, 16);
    ensure(opt == 8, || format!("optimum {opt}"))?;

    let tree = tree_of(&["sample5.f"]);
    let bindings: BTreeMap<Ident, f64> = [("CacheSize", 64.0), ("OAT_PROBSIZE", 1024.0), ("OAT_NUMPROC", 4.0)]
        .into_iter()
        .map(|(k, v)| (Ident::new(k), v))
        .collect();
    let costs: Vec<f64> = tree.regions[0]
        .sub_regions
        .iter()
        .filter_map(|s| match &s.according {
            Some(According::Estimated(e)) => Some(eval_cost_expression(e, &bindings).unwrap()),
            _ => None,
        })
        .collect();
    let oracle = [2.0 * 64.0 * 1024.0 * 1024.0 / (3.0 * 4.0), 4.0 * 64.0 * 1024.0 * 1024f64.ln() / (2.0 * 4.0)];
    ensure(costs.len() == 2, || format!("{} estimated branches", costs.len()))?;
    for (c, o) in costs.iter().zip(oracle) {
        ensure(((c - o) / o).abs() <= FIT_TOL, || format!("cost {c} vs {o}"))?;
    }
    ensure(costs[1] < costs[0], || "branch 1 is cheaper".into())?;
    Ok(format!("degree-2 recovered, optimum 8, branch 2 chosen ({:.2} < {:.2})", costs[1], costs[0]))
}

// 6. stage discipline

fn criterion_6() -> Outcome {
    let mut s = StageState::default();
    for (n, v) in [("OAT_NUMPROCS", 4), ("OAT_STARTTUNESIZE", 1024), ("OAT_ENDTUNESIZE", 3072)] {
        s.set(n, ParamValue::Int(v));
    }
    let e = enforce_order(&s, Stage::Install).unwrap_err();
    ensure(matches!(&e, ParamError::NoBp(m) if m == &["OAT_SAMPDIST"]), || format!("install: {e}"))?;
    s.set("OAT_SAMPDIST", ParamValue::Int(1024));
    let e = enforce_order(&s, Stage::Static).unwrap_err();
    ensure(matches!(e, ParamError::Order(_)), || format!("static: {e}"))?;
    // Fig. 4: a stage reads parameters decided by itself or an earlier stage
    let matrix = [[true, false, false], [true, true, false], [true, true, true]];
    for (i, req) in Stage::ALL.into_iter().enumerate() {
        for (j, origin) in Stage::ALL.into_iter().enumerate() {
            ensure(check_stage_access(req, origin) == matrix[i][j], || format!("access {req} <- {origin}"))?;
        }
    }
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("OAT_InstallParamDef.dat"), fixture("OAT_InstallParamDef.dat")).unwrap();
    let mut sess = Session::new(tree_of(&["sample1.f"]), dir.path(), Options::default()).map_err(|e| e.to_string())?;
    sess.at_exec(KIND_INSTALL, "OAT_InstallRoutines").map_err(|e| e.to_string())?;
    let first = sess.report.evaluations();
    sess.at_exec(KIND_INSTALL, "OAT_InstallRoutines").map_err(|e| e.to_string())?;
    ensure(sess.report.evaluations() == first, || "install region tuned twice".into())?;
    sess.registry.install_init(oat_core::orchestrator::RoutineList::Install);
    sess.at_exec(KIND_INSTALL, "OAT_InstallRoutines").map_err(|e| e.to_string())?;
    ensure(sess.report.evaluations() == 2 * first, || "install_init did not retune".into())?;
    Ok("order and basic-parameter errors, 9-entry access matrix, install runs once until reset".into())
}

// 7. collisions

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("OAT_InstallParamDef.dat"), fixture("OAT_InstallParamDef.dat")).unwrap();
    fs::write(dir.path().join("OAT_InstallParamDefMyMatMul.dat"), "(MyMatMul\n  (MyMatMul_I 3)\n)\n").unwrap();
    let mut s = Session::new(tree_of(&["sample1.f"]), dir.path(), Options::default()).map_err(|e| e.to_string())?;
    s.at_exec(KIND_INSTALL, "OAT_InstallRoutines").map_err(|e| e.to_string())?;
    let entries: Vec<_> = s.report.for_region("MyMatMul").collect();
    ensure(!entries.is_empty(), || "no report".into())?;
    for e in entries {
        ensure(e.assignment.get("MyMatMul_I") == Some(&ParamValue::Int(3)), || format!("{:?}", e.assignment))?;
        ensure(e.history.iter().all(|(a, _)| !a.contains_key("MyMatMul_I")), || "MyMatMul_I was searched".into())?;
        ensure(e.collisions.len() == 1, || format!("{:?}", e.collisions))?;
    }
    let out = read_param_file(&fs::read_to_string(dir.path().join("OAT_InstallParamMyMatMul.dat")).unwrap()).unwrap();
    let v = lookup(&out, "MyMatMul", "MyMatMul_I", &[("OAT_PROBSIZE", ParamValue::Int(2048))]).map_err(|e| e.to_string())?;
    ensure(v.as_int() == Some(3), || format!("file has {v}"))?;
    Ok("MyMatMul_I fixed at the user value and never searched".into())
}

// 8. nesting

const TYPES: [&str; 3] = ["install", "static", "dynamic"];
const FEATURES: [Feature; 4] = [Feature::Define, Feature::Variable, Feature::Select, Feature::Unroll];

fn at(i: usize) -> AtType {
    match i {
        0 => AtType::Install,
        1 => AtType::Static,
        _ => AtType::Dynamic,
    }
}

/// A random region tree: (type index, feature index, children).
#[derive(Clone, Debug)]
struct Spec(usize, usize, Vec<Spec>);

fn render(s: &Spec, out: &mut String, counter: &mut usize) {
    *counter += 1;
    let (t, f) = (TYPES[s.0], FEATURES[s.1].keyword());
    out.push_str(&format!("!OAT$ {t} {f} region start\n!OAT$ name R{counter}\n"));
    if matches!(FEATURES[s.1], Feature::Variable | Feature::Unroll) {
        out.push_str("!OAT$ varied (i) from 1 to 2\n");
    }
    out.push_str("do i = 1, 4\n  x = x + 1\nenddo\n");
    if FEATURES[s.1] == Feature::Select {
        out.push_str("!OAT$ select sub region start\ny = 1\n!OAT$ select sub region end\n");
    }
    for c in &s.2 {
        render(c, out, counter);
    }
    out.push_str(&format!("!OAT$ {t} {f} region end\n"));
}

/// Broken rules per parent/child pair, counted independently of the library.
fn expected_violations(s: &Spec, depth: usize) -> usize {
    let table1 = [[true, false, false], [true, true, false], [true, true, true]];
    let table2_row_ok = [true, true, true, false];
    s.2.iter()
        .map(|c| {
            let broken = [depth + 1 > 3, !table1[s.0][c.0], !table2_row_ok[s.1]];
            broken.iter().filter(|b| **b).count() + expected_violations(c, depth + 1)
        })
        .sum()
}

fn criterion_8() -> Outcome {
    use proptest::prelude::*;
    use proptest::test_runner::{Config, TestRunner};
    let table1 = [[true, false, false], [true, true, false], [true, true, true]];
    for i in 0..3 {
        for j in 0..3 {
            ensure(at_type_nests(&at(i), &at(j)) == table1[i][j], || format!("Table 1 {} / {}", TYPES[i], TYPES[j]))?;
        }
    }
    for (i, o) in FEATURES.into_iter().enumerate() {
        for n in FEATURES {
            ensure(feature_nests(o, n) == (i != 3), || format!("Table 2 {o:?} / {n:?}"))?;
        }
    }
    let mut deep = Spec(2, 0, vec![]);
    for _ in 0..3 {
        deep = Spec(2, 0, vec![deep]);
    }
    let mut text = String::new();
    render(&deep, &mut text, &mut 0);
    let v = validate_nesting(&parse_source(&text).map_err(|e| e.to_string())?);
    ensure(v.len() == 1 && v[0].rule == NestRule::Depth, || format!("depth 4: {v:?}"))?;

    let leaf = (0..3usize, 0..4usize).prop_map(|(t, f)| Spec(t, f, vec![]));
    let tree = leaf.prop_recursive(4, 12, 3, |inner| {
        (0..3usize, 0..4usize, prop::collection::vec(inner, 0..3)).prop_map(|(t, f, c)| Spec(t, f, c))
    });
    let mut runner = TestRunner::new(Config { cases: 256, failure_persistence: None, ..Config::default() });
    runner
        .run(&tree, |s| {
            let mut text = String::new();
            render(&s, &mut text, &mut 0);
            let parsed = parse_source(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
            prop_assert_eq!(validate_nesting(&parsed).len(), expected_violations(&s, 1), "{}", text);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("Table 1, Table 2 and depth 3 hold; 256 random trees agree".into())
}

// 9. end to end

fn criterion_9() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let oat = dir.path().join("OAT");
    let corpus: Vec<String> =
        ["sample1.f", "sample2.f", "sample4a.f", "sample6.f", "sample8.f", "sample9.f"].iter().map(|n| fixture(n)).collect();
    let text = corpus.join("\n");
    codegen("corpus.f", &text, CodegenFlags { debug: false, visualization: true }, &oat).map_err(|e| e.to_string())?;
    for d in ["OAT_InstallParamDef.dat", "OAT_StaticParamDef.dat"] {
        fs::write(oat.join(d), fixture(d)).unwrap();
    }
    let m = oat_core::orchestrator::codegen::load_manifest(&oat).map_err(|e| e.to_string())?;
    let opts = Options { visualization: m.visualization, ..Options::default() };
    let mut s = Session::new(m.tree, &oat, opts).map_err(|e| e.to_string())?;
    s.run_script(true).map_err(|e| e.to_string())?;
    let mut predicted = s.predict_evaluations(Stage::Install).map_err(|e| e.to_string())?;
    predicted += s.predict_evaluations(Stage::Static).map_err(|e| e.to_string())?;
    for r in s.registry.dynamic.clone() {
        predicted += s.predict_dynamic(&r).map_err(|e| e.to_string())?;
    }
    s.at_exec(KIND_ALL, "OAT_AllRoutines").map_err(|e| e.to_string())?;
    s.run_armed(&BTreeMap::new()).map_err(|e| e.to_string())?;
    let took = t.elapsed();

    let mut expected = vec![
        "OAT_corpus.f".to_string(),
        "OAT_InstallRoutines.f".into(),
        "OAT_StaticRoutines.f".into(),
        "OAT_DynamicRoutines.f".into(),
        "OAT_ControlRoutines.f".into(),
        TRACE_FILE.into(),
    ];
    for name in s.registry.install.iter() {
        expected.push(format!("OAT_InstallParam{name}.dat"));
    }
    for name in s.registry.static_.iter() {
        expected.push(format!("OAT_StaticParam{name}.dat"));
    }
    for name in s.registry.dynamic.iter() {
        expected.push(format!("OAT_DynamicParam{name}.dat"));
    }
    let missing: Vec<&String> = expected.iter().filter(|f| !oat.join(f).exists()).collect();
    ensure(missing.is_empty(), || format!("missing {missing:?}"))?;
    ensure(s.registry.install.len() == 4 && s.registry.static_.len() == 1 && s.registry.dynamic.len() == 1, || {
        format!("registry {:?}", s.registry)
    })?;
    let lines = record_count(&fs::read_to_string(oat.join(TRACE_FILE)).unwrap()) as u128;
    ensure(lines == predicted && predicted > 0, || format!("trace has {lines} records, predicted {predicted}"))?;
    ensure(took < LIMIT_END_TO_END, || format!("took {took:?}"))?;
    Ok(format!("{} files, {lines} trace records = predicted, {took:.1?}", expected.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("search counts", criterion_1),
        ("candidate enumeration", criterion_2),
        ("semantic equivalence", criterion_3),
        ("parameter files", criterion_4),
        ("fitting", criterion_5),
        ("stage discipline", criterion_6),
        ("collisions", criterion_7),
        ("nesting validation", criterion_8),
        ("end-to-end", criterion_9),
    ];
    let mut failed = Vec::new();
    for (k, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", k + 1),
            Err(why) => {
                println!("criterion {} {name}: FAIL ({why})", k + 1);
                failed.push(k + 1);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
