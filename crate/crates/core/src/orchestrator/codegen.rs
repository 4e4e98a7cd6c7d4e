//! The `OAT/` output directory: instrumented source, per-stage variant files
//! and the control manifest. Files are built from keyed blocks and only
//! blocks whose key is new are appended, so regenerating is a no-op.

use super::{io_err, OrchError};
use crate::directive::{parse_source, Feature, Region, RegionTree};
use crate::kernel::write_stmts;
use crate::params::{param_file_name, Stage};
use crate::search::{build_space, format_point};
use crate::transform::enumerate_candidates;
use std::fs;
use std::path::{Path, PathBuf};

pub const CONTROL_FILE: &str = "OAT_ControlRoutines.f";
pub const OUTPUT_DIR: &str = "OAT";

/// Regions with more variants than this get a manifest without code.
pub const CODE_LIMIT: usize = 256;

const BEGIN: &str = "! OAT-BEGIN ";
const END: &str = "! OAT-END ";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CodegenFlags {
    pub debug: bool,
    pub visualization: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CodegenSummary {
    pub files: Vec<PathBuf>,
    /// Blocks appended per file; zero everywhere on a repeated run.
    pub added: Vec<usize>,
}

pub fn routine_file(stage: Stage) -> String {
    format!("OAT_{}Routines.f", stage.title())
}

pub fn source_file(input: &str) -> String {
    let base = Path::new(input).file_name().and_then(|f| f.to_str()).unwrap_or(input);
    format!("OAT_{base}")
}

fn block(key: &str, body: &str) -> String {
    let mut out = format!("{BEGIN}{key}\n{body}");
    if !body.is_empty() && !body.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(&format!("{END}{key}\n"));
    out
}

fn block_keys(text: &str) -> Vec<&str> {
    text.lines().filter_map(|l| l.strip_prefix(BEGIN)).map(str::trim).collect()
}

/// Append the blocks whose key the file lacks; returns how many were added.
pub fn append_blocks(path: &Path, blocks: &[(String, String)]) -> Result<usize, OrchError> {
    let mut text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(io_err(path, e)),
    };
    let keys: Vec<String> = block_keys(&text).into_iter().map(str::to_string).collect();
    let mut added = 0;
    for (k, body) in blocks {
        if !keys.iter().any(|e| e == k) {
            text.push_str(&block(k, body));
            added += 1;
        }
    }
    if added > 0 || !path.exists() {
        fs::write(path, &text).map_err(|e| io_err(path, e))?;
    }
    Ok(added)
}

fn manifest_lines(r: &Region, out: &mut String) {
    out.push_str(&format!("! region {}\n", r.name));
    out.push_str(&format!("! stage {}\n", r.at_type.keyword()));
    out.push_str(&format!("! feature {}\n", r.feature.keyword()));
    if let Some(stage) = r.at_type.stage() {
        out.push_str(&format!("! output {}\n", param_file_name(stage, Some(&r.name), false)));
    }
    if r.feature != Feature::Define {
        if let Ok(space) = build_space(r) {
            out.push_str(&format!("! method {}\n", space.method.keyword()));
            for d in &space.dims {
                let vals: Vec<String> = d.domain.iter().map(|v| v.to_string()).collect();
                let dom = match d.int_range() {
                    Some((lo, hi)) if vals.len() > 2 => format!("{lo}..{hi}"),
                    _ => vals.join(" "),
                };
                out.push_str(&format!("! dim {} {}\n", d.name, dom));
            }
        }
    }
    for c in &r.children {
        out.push_str(&format!("! nested {}\n", c.name));
    }
}

fn region_block(r: &Region) -> String {
    let mut out = String::new();
    manifest_lines(r, &mut out);
    if r.feature == Feature::Define {
        out.push_str("! variant body\n");
        write_stmts(&mut out, &r.body, 0);
        return out;
    }
    match enumerate_candidates(r) {
        Ok(set) => {
            out.push_str(&format!("! variants {}\n", set.len()));
            let with_code = set.len() <= CODE_LIMIT;
            for v in &set.variants {
                out.push_str(&format!("! variant {} {}\n", v.id, format_point(&v.assignment)));
                if with_code {
                    write_stmts(&mut out, &v.program, 0);
                }
            }
        }
        Err(e) => out.push_str(&format!("! variants unavailable: {e}\n")),
    }
    out
}

/// Generate (or extend) `out_dir` from one annotated source file.
pub fn codegen(input: &str, text: &str, flags: CodegenFlags, out_dir: &Path) -> Result<CodegenSummary, OrchError> {
    let tree = parse_source(text)?;
    let problems = crate::directive::validate_nesting(&tree);
    if let Some(p) = problems.into_iter().next() {
        let msg = format!("region `{}` may not contain `{}` ({:?})", p.outer, p.inner, p.rule);
        return Err(crate::directive::DirectiveError::structure(p.line, msg).into());
    }
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let mut summary = CodegenSummary::default();
    let mut put = |name: String, blocks: Vec<(String, String)>| -> Result<(), OrchError> {
        let path = out_dir.join(name);
        summary.added.push(append_blocks(&path, &blocks)?);
        summary.files.push(path);
        Ok(())
    };

    let src = source_file(input);
    let mut instrumented = String::new();
    if flags.debug {
        instrumented.push_str("!OAT$ OAT_DEBUG = 1\n");
    }
    instrumented.push_str(text);
    put(src.clone(), vec![(format!("source {input}"), instrumented)])?;

    for stage in Stage::ALL {
        let mut blocks = Vec::new();
        tree.walk(&mut |r, _| {
            if r.at_type.stage() == Some(stage) {
                blocks.push((format!("region {}", r.name), region_block(r)));
            }
        });
        put(routine_file(stage), blocks)?;
    }

    let mut control = vec![(
        format!("settings {input}"),
        format!(
            "! source {src}\n! debug {}\n! visualization {}\n",
            on_off(flags.debug),
            on_off(flags.visualization)
        ),
    )];
    for r in &tree.regions {
        let mut body = String::new();
        manifest_lines(r, &mut body);
        control.push((format!("region {}", r.name), body));
    }
    put(CONTROL_FILE.to_string(), control)?;
    Ok(summary)
}

fn on_off(b: bool) -> &'static str {
    if b {
        "ON"
    } else {
        "OFF"
    }
}

/// What `tune` and `run` need from a generated directory.
#[derive(Clone, Debug)]
pub struct Manifest {
    pub tree: RegionTree,
    pub sources: Vec<String>,
    pub debug: bool,
    pub visualization: bool,
}

/// Read the control manifest of `dir` and parse the instrumented sources it
/// lists, in order.
pub fn load_manifest(dir: &Path) -> Result<Manifest, OrchError> {
    let path = dir.join(CONTROL_FILE);
    let control = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let mut sources = Vec::new();
    let (mut debug, mut visualization) = (false, false);
    for l in control.lines() {
        if let Some(s) = l.strip_prefix("! source ") {
            if !sources.iter().any(|e| e == s.trim()) {
                sources.push(s.trim().to_string());
            }
        } else if let Some(v) = l.strip_prefix("! debug ") {
            debug |= v.trim().eq_ignore_ascii_case("ON");
        } else if let Some(v) = l.strip_prefix("! visualization ") {
            visualization |= v.trim().eq_ignore_ascii_case("ON");
        }
    }
    let mut text = String::new();
    for s in &sources {
        let p = dir.join(s);
        text.push_str(&fs::read_to_string(&p).map_err(|e| io_err(&p, e))?);
        text.push('\n');
    }
    Ok(Manifest { tree: parse_source(&text)?, sources, debug, visualization })
}
