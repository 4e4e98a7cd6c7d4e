use super::*;
use crate::kernel::{parse_kernel, DoLoop, KernelProgram, LValue, Stmt, StmtKind};
use super::syntax::{strip_directives, tokenize_directives};

pub const MAX_DEPTH: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct SubRegion {
    pub kind: SubRegionKind,
    pub start_line: usize,
    pub end_line: usize,
    /// `according estimated ...` written inside a select branch.
    pub according: Option<According>,
    pub stmts: Vec<Stmt>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub at_type: AtType,
    pub feature: Feature,
    pub targets: Vec<Ident>,
    pub name: String,
    /// Subtype directives with their source lines, in order.
    pub subtypes: Vec<(usize, SubtypeSpec)>,
    pub number: Option<i64>,
    pub search: Option<SearchMethod>,
    /// Region-level `according`, as in `according min (eps) ...`.
    pub according: Option<According>,
    pub start_line: usize,
    pub end_line: usize,
    pub body: Vec<Stmt>,
    /// Loops of the kernel that surround the region, outermost first, with
    /// empty bodies.
    pub enclosing_loops: Vec<DoLoop>,
    pub sub_regions: Vec<SubRegion>,
    pub split_points: Vec<(usize, Vec<Ident>)>,
    pub copy_inserts: Vec<usize>,
    pub children: Vec<Region>,
}

impl Region {
    fn open(at_type: AtType, feature: Feature, targets: Vec<Ident>, line: usize) -> Self {
        Region {
            at_type,
            feature,
            targets,
            name: String::new(),
            subtypes: Vec::new(),
            number: None,
            search: None,
            according: None,
            start_line: line,
            end_line: line,
            body: Vec::new(),
            enclosing_loops: Vec::new(),
            sub_regions: Vec::new(),
            split_points: Vec::new(),
            copy_inserts: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn varied(&self) -> Option<(&[Ident], i64, i64)> {
        self.subtypes.iter().find_map(|(_, s)| match s {
            SubtypeSpec::Varied { params, from, to } => Some((params.as_slice(), *from, *to)),
            _ => None,
        })
    }

    pub fn fitting(&self) -> Option<&FitSpec> {
        self.subtypes.iter().find_map(|(_, s)| match s {
            SubtypeSpec::Fitting(f) => Some(f),
            _ => None,
        })
    }

    pub fn debug_items(&self) -> Vec<&DebugItem> {
        self.subtypes
            .iter()
            .filter_map(|(_, s)| match s {
                SubtypeSpec::Debug(v) => Some(v.iter()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn declared_params(&self) -> Vec<(ParamAttr, Ident)> {
        self.subtypes
            .iter()
            .filter_map(|(_, s)| match s {
                SubtypeSpec::Parameter(v) => Some(v.iter().cloned()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn search_method(&self) -> Option<SearchMethod> {
        self.search.or(self.feature.default_search())
    }

    pub fn sub_regions_of(&self, kind: SubRegionKind) -> impl Iterator<Item = &SubRegion> {
        self.sub_regions.iter().filter(move |s| s.kind == kind)
    }

    /// Pre-order walk over this region and its descendants with depth
    /// (this region = 1).
    pub fn walk<'a>(&'a self, depth: usize, f: &mut dyn FnMut(&'a Region, usize)) {
        f(self, depth);
        for c in &self.children {
            c.walk(depth + 1, f);
        }
    }

    /// Every directive of the region re-spelled canonically, including
    /// those of nested regions, in source order.
    pub fn directive_texts(&self) -> Vec<(usize, String)> {
        let mut out = vec![(
            self.start_line,
            Payload::RegionStart { at_type: self.at_type.clone(), feature: self.feature, targets: self.targets.clone() }
                .to_string(),
        )];
        out.extend(self.subtypes.iter().map(|(l, s)| (*l, s.to_string())));
        out.push((
            self.end_line,
            Payload::RegionEnd { at_type: self.at_type.clone(), feature: self.feature, targets: self.targets.clone() }
                .to_string(),
        ));
        for c in &self.children {
            out.extend(c.directive_texts());
        }
        out.sort_by_key(|(l, _)| *l);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionTree {
    /// Outermost regions: numbered ones first (ascending), then source order.
    pub regions: Vec<Region>,
    pub program: KernelProgram,
    /// Runtime calls and assignments in source order.
    pub script: Vec<Directive>,
}

impl RegionTree {
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Region, usize)) {
        for r in &self.regions {
            r.walk(1, f);
        }
    }

    pub fn find(&self, name: &str) -> Option<&Region> {
        let mut hit = None;
        self.walk(&mut |r, _| {
            if hit.is_none() && r.name.eq_ignore_ascii_case(name) {
                hit = Some(r);
            }
        });
        hit
    }
}

/// Subtypes legal under each feature.
pub fn subtype_allowed(feature: Feature, kind: SubtypeKind) -> bool {
    use SubtypeKind::*;
    let common = matches!(kind, Name | Parameter | Number | Prepro | Postpro | Debug);
    common
        || match feature {
            Feature::Define => false,
            Feature::Variable | Feature::Unroll => matches!(kind, Varied | Fitting),
            Feature::Select => matches!(kind, SelectSub | According),
            Feature::LoopFusionSplit => matches!(kind, SplitPoint | SplitPointCopyDef | SplitPointCopyInsert),
            Feature::LoopFusion => matches!(kind, RotationOrder),
        }
}

/// Whether an `outer` region of this auto-tuning type may contain an
/// `inner` one. Formula types carry no rule.
pub fn at_type_nests(outer: &AtType, inner: &AtType) -> bool {
    match (outer.stage(), inner.stage()) {
        (Some(o), Some(i)) => i <= o,
        _ => true,
    }
}

/// Whether an `outer` feature may contain any region at all.
pub fn feature_nests(outer: Feature, _inner: Feature) -> bool {
    !matches!(outer, Feature::Unroll | Feature::LoopFusionSplit | Feature::LoopFusion)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NestRule {
    AtType,
    Feature,
    Depth,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub outer: String,
    pub inner: String,
    pub rule: NestRule,
    pub line: usize,
}

pub fn validate_nesting(tree: &RegionTree) -> Vec<Violation> {
    fn visit(r: &Region, depth: usize, out: &mut Vec<Violation>) {
        for c in &r.children {
            if depth + 1 > MAX_DEPTH {
                out.push(Violation { outer: r.name.clone(), inner: c.name.clone(), rule: NestRule::Depth, line: c.start_line });
            }
            if !at_type_nests(&r.at_type, &c.at_type) {
                out.push(Violation { outer: r.name.clone(), inner: c.name.clone(), rule: NestRule::AtType, line: c.start_line });
            }
            if !feature_nests(r.feature, c.feature) {
                out.push(Violation { outer: r.name.clone(), inner: c.name.clone(), rule: NestRule::Feature, line: c.start_line });
            }
            visit(c, depth + 1, out);
        }
    }
    let mut out = Vec::new();
    for r in &tree.regions {
        visit(r, 1, &mut out);
    }
    out
}

/// Statements strictly between `start` and `end`, descending into loops that
/// enclose the whole range.
fn extract(stmts: &[Stmt], start: usize, end: usize, enclosing: &mut Vec<DoLoop>) -> Result<Vec<Stmt>, DirectiveError> {
    let mut body = Vec::new();
    for s in stmts {
        let Some((a, b)) = s.line_span() else { continue };
        if a > start && b < end {
            body.push(s.clone());
        } else if a < start && b > end {
            let StmtKind::Do(l) = &s.kind else {
                return Err(DirectiveError::structure(start, "directive inside a statement"));
            };
            enclosing.push(DoLoop { body: Vec::new(), ..l.clone() });
            return extract(&l.body, start, end, enclosing);
        } else if a < end && b > start {
            return Err(DirectiveError::structure(
                a.max(start),
                format!("statement at lines {a}-{b} crosses the boundary of the block at lines {start}-{end}"),
            ));
        }
    }
    Ok(body)
}

struct Open {
    region: Region,
    subs: Vec<SubRegion>,
}

pub fn parse_regions(directives: &[Directive], kernel: &KernelProgram) -> Result<RegionTree, DirectiveError> {
    let mut stack: Vec<Open> = Vec::new();
    let mut top: Vec<Region> = Vec::new();
    let mut script = Vec::new();
    for d in directives {
        let line = d.line_no;
        match &d.payload {
            Payload::RegionStart { at_type, feature, targets } => {
                if let Some(o) = stack.last() {
                    if let Some(s) = o.subs.last() {
                        return Err(DirectiveError::structure(
                            line,
                            format!("region starts inside an open `{}` sub region", s.kind.keyword()),
                        ));
                    }
                }
                stack.push(Open { region: Region::open(at_type.clone(), *feature, targets.clone(), line), subs: Vec::new() });
            }
            Payload::RegionEnd { at_type, feature, .. } => {
                let Some(mut o) = stack.pop() else {
                    return Err(DirectiveError::structure(line, "region end without a matching region start"));
                };
                let r = &mut o.region;
                if r.at_type != *at_type || r.feature != *feature {
                    return Err(DirectiveError::structure(
                        line,
                        format!(
                            "region end `{} {}` does not match `{} {}` started at line {}",
                            at_type.keyword(),
                            feature,
                            r.at_type.keyword(),
                            r.feature,
                            r.start_line
                        ),
                    ));
                }
                if let Some(s) = o.subs.last() {
                    return Err(DirectiveError::structure(
                        s.start_line,
                        format!("`{}` sub region is never closed", s.kind.keyword()),
                    ));
                }
                r.end_line = line;
                if r.name.is_empty() {
                    r.name = format!("OATRegion{}", r.start_line);
                }
                let mut enclosing = Vec::new();
                r.body = extract(&kernel.stmts, r.start_line, r.end_line, &mut enclosing)?;
                r.enclosing_loops = enclosing;
                if r.feature == Feature::Select && r.sub_regions_of(SubRegionKind::Select).next().is_none() {
                    return Err(DirectiveError::structure(r.start_line, format!("select region `{}` has no select sub region", r.name)));
                }
                match stack.last_mut() {
                    Some(parent) => parent.region.children.push(o.region),
                    None => top.push(o.region),
                }
            }
            Payload::Subtype(spec) => {
                let depth = stack.len();
                let Some(o) = stack.last_mut() else {
                    return Err(DirectiveError::structure(line, format!("`{spec}` outside any region")));
                };
                let r = &mut o.region;
                if !subtype_allowed(r.feature, spec.kind()) {
                    return Err(DirectiveError::structure(
                        line,
                        format!("`{spec}` is not available in a `{}` region", r.feature),
                    ));
                }
                match spec {
                    SubtypeSpec::Name(n) => r.name = n.clone(),
                    SubtypeSpec::Number(n) => {
                        if depth > 1 {
                            return Err(DirectiveError::structure(line, "a number can only be given to an outermost region"));
                        }
                        r.number = Some(*n);
                    }
                    SubtypeSpec::Varied { .. } if r.varied().is_some() => {
                        return Err(DirectiveError::structure(line, "region already has a `varied` specifier"));
                    }
                    SubtypeSpec::According(a) => match o.subs.last_mut() {
                        Some(s) if s.kind == SubRegionKind::Select => {
                            if s.according.is_some() {
                                return Err(DirectiveError::structure(line, "select sub region has two `according` specifiers"));
                            }
                            s.according = Some(a.clone());
                        }
                        _ => {
                            if r.according.is_some() {
                                return Err(DirectiveError::structure(line, "region has two `according` specifiers"));
                            }
                            r.according = Some(a.clone());
                        }
                    },
                    SubtypeSpec::SubRegion { kind, start: true } => {
                        if let Some(s) = o.subs.last() {
                            return Err(DirectiveError::structure(
                                line,
                                format!("`{}` sub region opened inside `{}` sub region", kind.keyword(), s.kind.keyword()),
                            ));
                        }
                        o.subs.push(SubRegion { kind: *kind, start_line: line, end_line: line, according: None, stmts: Vec::new() });
                    }
                    SubtypeSpec::SubRegion { kind, start: false } => {
                        let Some(mut s) = o.subs.pop() else {
                            return Err(DirectiveError::structure(line, format!("`{}` sub region end without start", kind.keyword())));
                        };
                        if s.kind != *kind {
                            return Err(DirectiveError::structure(
                                line,
                                format!("`{}` sub region end closes a `{}` sub region", kind.keyword(), s.kind.keyword()),
                            ));
                        }
                        s.end_line = line;
                        s.stmts = extract(&kernel.stmts, s.start_line, line, &mut Vec::new())?;
                        r.sub_regions.push(s);
                    }
                    SubtypeSpec::SplitPoint(vars) => r.split_points.push((line, vars.clone())),
                    SubtypeSpec::SplitPointCopyInsert => r.copy_inserts.push(line),
                    _ => {}
                }
                r.subtypes.push((line, spec.clone()));
            }
            Payload::Search(m) => {
                let Some(o) = stack.last_mut() else {
                    return Err(DirectiveError::structure(line, "`search` outside any region"));
                };
                o.region.search = Some(*m);
            }
            Payload::Call { .. } | Payload::Assign { .. } => script.push(d.clone()),
        }
    }
    if let Some(o) = stack.last() {
        let r = &o.region;
        let name = if r.name.is_empty() { format!("{} {}", r.at_type.keyword(), r.feature) } else { r.name.clone() };
        return Err(DirectiveError::structure(r.start_line, format!("region `{name}` is never closed")));
    }
    top.sort_by_key(|r| (r.number.is_none(), r.number));
    Ok(RegionTree { regions: top, program: kernel.clone(), script })
}

/// Directives, kernel and region tree of one annotated source file.
pub fn parse_source(text: &str) -> Result<RegionTree, DirectiveError> {
    let directives = tokenize_directives(text)?;
    let kernel = parse_kernel(&strip_directives(text))?;
    parse_regions(&directives, &kernel)
}

fn collect_loops(stmts: &[Stmt], out: &mut Vec<DoLoop>) {
    for s in stmts {
        s.walk(&mut |st| {
            if let StmtKind::Do(l) = &st.kind {
                out.push(l.clone());
            }
        });
    }
}

/// Explicit `parameter` declarations, or when no basic parameter is
/// declared, the single scalar that appears in the region's loop bounds.
pub fn resolve_parameters(region: &Region) -> Result<Vec<ParamDecl>, DirectiveError> {
    let mut decls: Vec<ParamDecl> = Vec::new();
    for (attr, name) in region.declared_params() {
        if decls.iter().any(|d| d.name == name) {
            return Err(DirectiveError::structure(
                region.start_line,
                format!("parameter `{name}` declared twice in region `{}`", region.name),
            ));
        }
        decls.push(ParamDecl { name, attr, origin_region: region.name.clone() });
    }
    if decls.iter().any(|d| d.attr == ParamAttr::Bp) {
        return Ok(decls);
    }
    let mut loops = Vec::new();
    collect_loops(&region.body, &mut loops);
    let mut excluded: Vec<Ident> = loops.iter().chain(&region.enclosing_loops).map(|l| l.var.clone()).collect();
    excluded.extend(region.targets.iter().cloned());
    if let Some((params, _, _)) = region.varied() {
        excluded.extend(params.iter().cloned());
    }
    excluded.extend(decls.iter().map(|d| d.name.clone()));
    for s in &region.body {
        s.walk(&mut |st| {
            for a in st.assigns() {
                if let LValue::Scalar(n) = &a.target {
                    excluded.push(n.clone());
                }
            }
        });
    }
    let mut candidates: Vec<Ident> = Vec::new();
    for l in &loops {
        let mut names = Vec::new();
        l.lo.scalar_names(&mut names);
        l.hi.scalar_names(&mut names);
        if let Some(s) = &l.step {
            s.scalar_names(&mut names);
        }
        for n in names {
            if !excluded.contains(&n) && !candidates.contains(&n) {
                candidates.push(n);
            }
        }
    }
    match candidates.len() {
        0 => {}
        1 => decls.push(ParamDecl { name: candidates.remove(0), attr: ParamAttr::Bp, origin_region: region.name.clone() }),
        _ => {
            return Err(DirectiveError::AmbiguousBp {
                region: region.name.clone(),
                line: region.start_line,
                candidates: candidates.iter().map(|c| c.to_string()).collect(),
            })
        }
    }
    Ok(decls)
}
