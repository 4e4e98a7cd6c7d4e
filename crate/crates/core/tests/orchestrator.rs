use oat_core::directive::parse_source;
use oat_core::orchestrator::{record_count, OrchError, Options, Session, TRACE_FILE};
use oat_core::params::{read_param_file, ParamError, ParamValue, Stage, KIND_ALL, KIND_DYNAMIC, KIND_INSTALL, KIND_STATIC};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

fn fixture(name: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)).unwrap()
}

fn session(sources: &[&str], defs: &[&str], dir: &Path) -> Session {
    let text: String = sources.iter().map(|s| fixture(s)).collect::<Vec<_>>().join("\n");
    for d in defs {
        fs::write(dir.join(d), fixture(d)).unwrap();
    }
    let opts = Options { visualization: true, ..Options::default() };
    Session::new(parse_source(&text).unwrap(), dir, opts).unwrap()
}

fn int(v: Option<&ParamValue>) -> i64 {
    v.and_then(|v| v.as_int()).unwrap()
}

#[test]
fn define_region_writes_install_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(&["sample2.f"], &["OAT_InstallParamDef.dat"], dir.path());
    s.at_exec(KIND_INSTALL, "OAT_InstallRoutines").unwrap();
    let text = fs::read_to_string(dir.path().join("OAT_InstallParamSetCacheParam.dat")).unwrap();
    let t = read_param_file(&text).unwrap();
    let g = t.group("SetCacheParam").unwrap();
    assert_eq!(int(g.get("CacheSize")), 64);
    assert_eq!(int(g.get("CacheLine")), 8);
}

#[test]
fn static_unroll_has_one_context_per_size() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(&["sample4a.f"], &["OAT_InstallParamDef.dat", "OAT_StaticParamDef.dat"], dir.path());
    s.at_exec(KIND_INSTALL, "OAT_InstallRoutines").unwrap();
    s.at_exec(KIND_STATIC, "OAT_StaticRoutines").unwrap();
    let sizes: Vec<i64> = s.report.for_region("MyMatMulStatic").map(|e| e.context[0].1).collect();
    assert_eq!(sizes, [1024, 2048, 3072]);
    assert!(s.report.for_region("MyMatMulStatic").all(|e| e.evaluations == 256));
    let text = fs::read_to_string(dir.path().join("OAT_StaticParamMyMatMulStatic.dat")).unwrap();
    assert!(text.contains("(OAT_PROBSIZE 2048"), "{text}");
    assert!(text.contains("(OAT_NUMPROCS 4)"), "{text}");
    let t = read_param_file(&text).unwrap();
    let looked = oat_core::params::lookup(&t, "MyMatMulStatic", "MyMatMulStatic_J", &[("OAT_PROBSIZE", ParamValue::Int(3072))]).unwrap();
    assert_eq!(looked.as_int(), Some(16));
}

#[test]
fn second_basic_parameter_multiplies_contexts() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(&["sample3.f", "sample4c.f"], &["OAT_InstallParamDef.dat"], dir.path());
    s.at_exec(KIND_INSTALL, "OAT_AllRoutines").unwrap();
    // config statements only; the ATexec line of Sample 3 would run before
    // nprocs is registered
    s.run_script(true).unwrap();
    s.at_exec(KIND_STATIC, "OAT_StaticRoutines").unwrap();
    let ctx: Vec<_> = s.report.for_region("MyMatMu").map(|e| e.context.clone()).collect();
    assert_eq!(ctx.len(), 24);
    assert_eq!(ctx[0], vec![("OAT_PROBSIZE".to_string(), 1024), ("nprocs".to_string(), 1)]);
    assert_eq!(ctx[23], vec![("OAT_PROBSIZE".to_string(), 3072), ("nprocs".to_string(), 8)]);
}

#[test]
fn renamed_sampling_parameters_feed_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(&["sample4c.f"], &[], dir.path());
    s.run_script(true).unwrap();
    let bp = s.bps.iter().find(|b| b.name == "nprocs").unwrap();
    assert_eq!(bp.start_name, "OAT_NprocsStartSize");
    assert_eq!(s.value("OAT_NprocsEndSize"), Some(&ParamValue::Int(8)));
}

#[test]
fn estimated_select_uses_install_cache_size() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(&["sample2.f", "sample5.f"], &["OAT_InstallParamDef.dat", "OAT_StaticParamDef.dat"], dir.path());
    s.opts.visualization = false;
    s.state.set("OAT_ENDTUNESIZE", ParamValue::Int(1024));
    s.at_exec(KIND_ALL, "OAT_AllRoutines").unwrap();
    let e: Vec<_> = s.report.for_region("ATfromCacheSize").collect();
    assert_eq!(e.len(), 1);
    assert_eq!(int(e[0].assignment.get("ATfromCacheSize_SELECT")), 2);
    let costs: Vec<f64> = e[0].history.iter().map(|h| h.1).collect();
    let c1 = 2.0 * 64.0 * 1024.0 * 1024.0 / (3.0 * 4.0);
    let c2 = 4.0 * 64.0 * 1024.0 * 1024f64.ln() / (2.0 * 4.0);
    assert!((costs[0] - c1).abs() < 1e-6 * c1);
    assert!((costs[1] - c2).abs() < 1e-6 * c2);
}

#[test]
fn dynamic_regions_arm_then_select_on_invocation() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(&["sample6.f"], &["OAT_InstallParamDef.dat", "OAT_StaticParamDef.dat"], dir.path());
    s.at_exec(KIND_ALL, "OAT_AllRoutines").unwrap();
    assert!(s.armed.contains("PricondSelect"));
    assert!(!dir.path().join("OAT_DynamicParamPricondSelect.dat").exists());
    let a = s.run_dynamic_region("PricondSelect", &BTreeMap::new()).unwrap();
    assert_eq!(int(a.get("PricondSelect_SELECT")), 1);
    assert!(dir.path().join("OAT_DynamicParamPricondSelect.dat").exists());
    // the frozen choice is reused without another search
    let before = s.report.evaluations();
    assert_eq!(s.dyn_perf_this("PricondSelect").unwrap(), a);
    assert_eq!(s.dyn_perf_this("PricondSelect").unwrap(), a);
    assert_eq!(s.report.evaluations(), before);
}

#[test]
fn armed_state_survives_a_new_session() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(&["sample6.f"], &["OAT_InstallParamDef.dat", "OAT_StaticParamDef.dat"], dir.path());
    s.at_exec(KIND_ALL, "OAT_AllRoutines").unwrap();
    let mut s2 = session(&["sample6.f"], &[], dir.path());
    assert!(s2.state.completed.contains(&Stage::Dynamic));
    let out = s2.run_armed(&BTreeMap::new()).unwrap();
    assert_eq!(out.len(), 1);
}

#[test]
fn dyn_perf_this_needs_a_tuned_region() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(&["sample6.f"], &[], dir.path());
    assert!(matches!(s.dyn_perf_this("PricondSelect"), Err(OrchError::NotTuned(_))));
    assert!(matches!(s.dyn_perf_this("Nope"), Err(OrchError::UnknownRoutine(_))));
}

#[test]
fn stage_order_and_missing_basic_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(&["sample4a.f"], &[], dir.path());
    let e = s.at_exec(KIND_STATIC, "OAT_StaticRoutines").unwrap_err();
    assert!(matches!(e, OrchError::Param(ParamError::Order(_))));
    assert_eq!(e.exit_code(), 4);
    let e = s.at_exec(KIND_INSTALL, "OAT_InstallRoutines").unwrap_err();
    assert!(matches!(e, OrchError::Param(ParamError::NoBp(_))), "{e}");
}

#[test]
fn install_regions_tune_once_until_reset() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(&["sample1.f"], &["OAT_InstallParamDef.dat"], dir.path());
    s.at_exec(KIND_INSTALL, "OAT_InstallRoutines").unwrap();
    let first = s.report.evaluations();
    assert!(first > 0);
    s.at_exec(KIND_INSTALL, "OAT_InstallRoutines").unwrap();
    assert_eq!(s.report.evaluations(), first);
    assert_eq!(s.predict_evaluations(Stage::Install).unwrap(), 0);
    s.registry.install_init(oat_core::orchestrator::RoutineList::Install);
    s.at_exec(KIND_INSTALL, "OAT_InstallRoutines").unwrap();
    assert_eq!(s.report.evaluations(), 2 * first);
}

#[test]
fn registry_edits() {
    use oat_core::orchestrator::RoutineList;
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(&["sample1.f", "sample4a.f"], &[], dir.path());
    assert_eq!(s.registry.install, ["MyMatMul"]);
    assert!(s.registry.at_del(RoutineList::Install, "MyMatMul"));
    assert!(!s.registry.at_del(RoutineList::Install, "MyMatMul"));
    assert!(s.registry.install.is_empty());
    let tree = s.tree.clone();
    s.registry.at_set(Stage::Install, "MyMatMul", &tree).unwrap();
    assert_eq!(s.registry.install, ["MyMatMul"]);
    assert!(s.registry.at_set(Stage::Install, "Missing", &tree).is_err());
}

#[test]
fn user_value_overrides_search() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(&["sample1.f"], &["OAT_InstallParamDef.dat"], dir.path());
    fs::write(dir.path().join("OAT_InstallParamDefMyMatMul.dat"), "(MyMatMul\n  (MyMatMul_I 4)\n)\n").unwrap();
    s.at_exec(KIND_INSTALL, "OAT_InstallRoutines").unwrap();
    for e in s.report.for_region("MyMatMul") {
        assert_eq!(int(e.assignment.get("MyMatMul_I")), 4);
        assert_eq!(e.collisions.len(), 1);
        // only J is fitted: 7 samples plus the confirming run
        assert_eq!(e.evaluations, 8);
        assert!(e.history.iter().all(|(a, _)| !a.contains_key("MyMatMul_I")));
    }
}

#[test]
fn trace_lines_match_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(&["sample1.f", "sample8.f", "sample9.f"], &["OAT_InstallParamDef.dat"], dir.path());
    s.run_script(true).unwrap();
    let predicted = s.predict_evaluations(Stage::Install).unwrap();
    s.at_exec(KIND_INSTALL, "OAT_InstallRoutines").unwrap();
    let text = fs::read_to_string(dir.path().join(TRACE_FILE)).unwrap();
    assert_eq!(record_count(&text) as u128, predicted);
    assert_eq!(s.report.evaluations() as u128, predicted);
    let per_region: Vec<_> = s.report.entries.iter().map(|e| e.evaluations).collect();
    // fitted (7 samples + 1) on two dims, 8 split/fusion candidates, 6
    // reorder/fusion candidates; three problem sizes each
    assert_eq!(per_region, [16, 16, 16, 8, 8, 8, 6, 6, 6]);
}

#[test]
fn no_trace_without_visualization() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(&["sample2.f"], &["OAT_InstallParamDef.dat"], dir.path());
    s.opts.visualization = false;
    s.at_exec(KIND_INSTALL, "OAT_InstallRoutines").unwrap();
    assert!(!dir.path().join(TRACE_FILE).exists());
}

#[test]
fn empty_registry_gives_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(&["sample3.f"], &[], dir.path());
    s.run_script(true).unwrap();
    let r = s.at_exec(KIND_INSTALL, "OAT_AllRoutines").unwrap();
    assert!(r.entries.is_empty());
    let e = s.at_exec(KIND_DYNAMIC, "OAT_AllRoutines").unwrap_err();
    assert!(matches!(e, OrchError::Param(ParamError::Order(_))));
    assert!(s.at_exec(KIND_ALL, "OAT_AllRoutines").unwrap().entries.is_empty());
}
