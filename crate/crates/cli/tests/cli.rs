use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn oat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oat")).current_dir(dir).args(args).env_remove("OAT_DEBUG").output().unwrap()
}

fn setup(samples: &[&str], defs: &[&str]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let text: Vec<String> = samples.iter().map(|s| fs::read_to_string(fixture(s)).unwrap()).collect();
    fs::write(dir.path().join("test.f"), text.join("\n")).unwrap();
    fs::create_dir_all(dir.path().join("OAT")).unwrap();
    for d in defs {
        fs::copy(fixture(d), dir.path().join("OAT").join(d)).unwrap();
    }
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).to_string()
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().to_string(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn codegen_writes_five_files_once() {
    let dir = setup(&["sample1.f"], &[]);
    let o = Command::new(env!("CARGO_BIN_EXE_OATCodeGen")).current_dir(dir.path()).arg("test.f").output().unwrap();
    assert!(o.status.success(), "{o:?}");
    let oat_dir = dir.path().join("OAT");
    for f in ["OAT_test.f", "OAT_InstallRoutines.f", "OAT_StaticRoutines.f", "OAT_DynamicRoutines.f", "OAT_ControlRoutines.f"] {
        assert!(oat_dir.join(f).exists(), "{f}");
    }
    let install = fs::read_to_string(oat_dir.join("OAT_InstallRoutines.f")).unwrap();
    assert!(install.contains("! variants 256"));
    assert_eq!(install.matches("! variant i").count(), 256);
    let before = snapshot(&oat_dir);
    let o = oat(dir.path(), &["codegen", "test.f"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().all(|l| l.ends_with("(+0)")), "{}", stdout(&o));
    assert_eq!(snapshot(&oat_dir), before);
}

#[test]
fn single_dash_flags_are_accepted() {
    let dir = setup(&["sample2.f"], &[]);
    let o = oat(dir.path(), &["test.f", "-debug", "ON", "-visualization", "ON"]);
    assert!(o.status.success(), "{o:?}");
    let control = fs::read_to_string(dir.path().join("OAT/OAT_ControlRoutines.f")).unwrap();
    assert!(control.contains("! debug ON"));
    assert!(control.contains("! visualization ON"));
    let src = fs::read_to_string(dir.path().join("OAT/OAT_test.f")).unwrap();
    assert!(src.contains("!OAT$ OAT_DEBUG = 1"));
}

#[test]
fn no_directives_gives_empty_routine_files() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("plain.f"), "x = 1\n").unwrap();
    assert!(oat(dir.path(), &["codegen", "plain.f"]).status.success());
    assert_eq!(fs::read_to_string(dir.path().join("OAT/OAT_InstallRoutines.f")).unwrap(), "");
    assert!(dir.path().join("OAT/OAT_plain.f").exists());
}

#[test]
fn install_tuning_prefers_full_unroll() {
    let dir = setup(&["sample1.f"], &["OAT_InstallParamDef.dat"]);
    assert!(oat(dir.path(), &["codegen", "test.f"]).status.success());
    let o = oat(dir.path(), &["tune", "OAT", "install", "--mode", "deterministic"]);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    assert_eq!(out.matches("(MyMatMul_I=16, MyMatMul_J=16)").count(), 3, "{out}");
    assert!(dir.path().join("OAT/OAT_InstallParamMyMatMul.dat").exists());
}

#[test]
fn missing_basic_parameters_exit_4() {
    let dir = setup(&["sample4a.f"], &[]);
    assert!(oat(dir.path(), &["codegen", "test.f"]).status.success());
    let o = oat(dir.path(), &["tune", "OAT", "static"]);
    assert_eq!(o.status.code(), Some(4));
    let o = oat(dir.path(), &["tune", "OAT", "install"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("OAT_SAMPDIST"));
}

#[test]
fn dynamic_stage_only_arms() {
    let dir = setup(&["sample6.f"], &["OAT_InstallParamDef.dat", "OAT_StaticParamDef.dat"]);
    assert!(oat(dir.path(), &["codegen", "test.f"]).status.success());
    for st in ["install", "static"] {
        assert!(oat(dir.path(), &["tune", "OAT", st]).status.success());
    }
    let o = oat(dir.path(), &["tune", "OAT", "dynamic"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("armed PricondSelect"));
    let dyn_file = dir.path().join("OAT/OAT_DynamicParamPricondSelect.dat");
    assert!(!dyn_file.exists());
    let o = oat(dir.path(), &["run", "OAT"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("PricondSelect_SELECT=1"), "{}", stdout(&o));
    assert!(dyn_file.exists());
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.f"), "!OAT$ install frobnicate region start\n").unwrap();
    assert_eq!(oat(dir.path(), &["codegen", "bad.f"]).status.code(), Some(2));
    fs::write(dir.path().join("open.f"), "!OAT$ install unroll region end\n").unwrap();
    let o = oat(dir.path(), &["codegen", "open.f"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("open.f:1"), "{o:?}");
    assert_eq!(oat(dir.path(), &["tune", "nowhere", "install"]).status.code(), Some(5));
    assert_eq!(oat(dir.path(), &["tune"]).status.code(), Some(2));
}

#[test]
fn env_debug_overrides_flag() {
    let dir = setup(&["sample8.f"], &["OAT_InstallParamDef.dat"]);
    assert!(oat(dir.path(), &["codegen", "test.f", "--debug", "ON"]).status.success());
    let o = oat(dir.path(), &["tune", "OAT", "install"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains(" cost "));
    fs::remove_file(dir.path().join("OAT/OAT_StageState.dat")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_oat"))
        .current_dir(dir.path())
        .args(["tune", "OAT", "install"])
        .env("OAT_DEBUG", "OFF")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(o.stderr.is_empty(), "{}", String::from_utf8_lossy(&o.stderr));
}
