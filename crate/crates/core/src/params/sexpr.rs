//! The parameter-information file format: nested `(key value ...)` groups.

use super::ParamError;
use std::fmt::{self, Write};

#[derive(Clone, Debug, PartialEq)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Str(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Real(v) => Some(*v),
            ParamValue::Str(_) => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            ParamValue::Int(v) => Some(*v),
            ParamValue::Real(v) if v.fract() == 0.0 && v.abs() < 9.0e15 => Some(*v as i64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }

    /// Same number (an integer equals the real with the same value) or the
    /// same string, ignoring case.
    pub fn matches(&self, other: &ParamValue) -> bool {
        match (self, other) {
            (ParamValue::Str(a), ParamValue::Str(b)) => a.eq_ignore_ascii_case(b),
            (a, b) => a.as_f64().is_some() && a.as_f64() == b.as_f64(),
        }
    }

    /// Interpret one bare atom: integers, then reals (with `d` exponents and
    /// `.true.`/`.false.` as 1/0), else a string.
    pub fn parse_atom(s: &str) -> ParamValue {
        if s.eq_ignore_ascii_case(".true.") {
            return ParamValue::Int(1);
        }
        if s.eq_ignore_ascii_case(".false.") {
            return ParamValue::Int(0);
        }
        let digits = s.strip_prefix(['-', '+']).unwrap_or(s);
        if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(v) = s.parse() {
                return ParamValue::Int(v);
            }
        }
        let looks_numeric = digits.starts_with(|c: char| c.is_ascii_digit() || c == '.')
            && digits.bytes().any(|b| b.is_ascii_digit())
            && digits.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'e' | b'E' | b'd' | b'D' | b'+' | b'-'));
        if looks_numeric {
            if let Ok(v) = s.replace(['d', 'D'], "e").parse::<f64>() {
                return ParamValue::Real(v);
            }
        }
        ParamValue::Str(s.to_string())
    }
}

impl From<i64> for ParamValue {
    fn from(v: i64) -> Self {
        ParamValue::Int(v)
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Real(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Str(v.to_string())
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Real(v) => {
                let s = format!("{v}");
                if s.contains(['.', 'e', 'E']) || !v.is_finite() {
                    f.write_str(&s)
                } else {
                    write!(f, "{s}.0")
                }
            }
            ParamValue::Str(s) => {
                let bare = !s.is_empty()
                    && !s.chars().any(|c| c.is_whitespace() || matches!(c, '(' | ')' | '"' | '\\' | ';'))
                    && ParamValue::parse_atom(s) == ParamValue::Str(s.clone());
                if bare {
                    f.write_str(s)
                } else {
                    f.write_char('"')?;
                    for c in s.chars() {
                        if matches!(c, '"' | '\\') {
                            f.write_char('\\')?;
                        }
                        f.write_char(c)?;
                    }
                    f.write_char('"')
                }
            }
        }
    }
}

/// `(key [value] children...)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub key: String,
    pub value: Option<ParamValue>,
    pub children: Vec<Node>,
}

impl Node {
    pub fn group(key: impl Into<String>) -> Self {
        Node { key: key.into(), value: None, children: Vec::new() }
    }

    pub fn leaf(key: impl Into<String>, value: impl Into<ParamValue>) -> Self {
        Node { key: key.into(), value: Some(value.into()), children: Vec::new() }
    }

    pub fn context(key: impl Into<String>, value: impl Into<ParamValue>, children: Vec<Node>) -> Self {
        Node { key: key.into(), value: Some(value.into()), children }
    }

    pub fn is(&self, key: &str) -> bool {
        self.key.eq_ignore_ascii_case(key)
    }

    /// First direct child leaf with this key.
    pub fn get(&self, key: &str) -> Option<&ParamValue> {
        self.children.iter().find(|c| c.is(key) && c.children.is_empty()).and_then(|c| c.value.as_ref())
    }

    /// Replace or append the direct leaf `key`.
    pub fn set(&mut self, key: &str, value: impl Into<ParamValue>) {
        let value = value.into();
        match self.children.iter_mut().find(|c| c.is(key) && c.children.is_empty()) {
            Some(c) => c.value = Some(value),
            None => self.children.push(Node::leaf(key, value)),
        }
    }

    /// The child group `(key value ...)`, created if missing.
    pub fn context_mut(&mut self, key: &str, value: &ParamValue) -> &mut Node {
        let pos = self
            .children
            .iter()
            .position(|c| c.is(key) && c.value.as_ref().is_some_and(|v| v.matches(value)) && !c.children.is_empty());
        match pos {
            Some(p) => &mut self.children[p],
            None => {
                self.children.push(Node::context(key, value.clone(), Vec::new()));
                self.children.last_mut().unwrap()
            }
        }
    }

    /// Identity of a child within its group: the key, plus the value for
    /// groups such as `(OAT_PROBSIZE 1024 ...)` that repeat per context.
    fn identity(&self) -> (String, Option<String>) {
        let v = if self.children.is_empty() { None } else { self.value.as_ref().map(|v| v.to_string()) };
        (self.key.to_ascii_lowercase(), v)
    }

    fn write(&self, out: &mut String, depth: usize) {
        let pad = "  ".repeat(depth);
        let _ = write!(out, "{pad}({}", ParamValue::Str(self.key.clone()));
        if let Some(v) = &self.value {
            let _ = write!(out, " {v}");
        }
        if self.children.is_empty() {
            out.push_str(")\n");
        } else {
            out.push('\n');
            for c in &self.children {
                c.write(out, depth + 1);
            }
            let _ = writeln!(out, "{pad})");
        }
    }

    fn write_flat(&self, out: &mut String, depth: usize) {
        let _ = write!(out, "({}", ParamValue::Str(self.key.clone()));
        if let Some(v) = &self.value {
            let _ = write!(out, " {v}");
        }
        if self.children.is_empty() {
            out.push_str(")\n");
            return;
        }
        out.push('\n');
        for c in &self.children {
            c.write_flat(out, depth + 1);
        }
        if depth == 0 {
            out.push_str(")\n");
        } else {
            out.pop();
            out.push_str(" )\n");
        }
    }
}

/// How a file is laid out on disk. `Flat` puts every node at column 0 and
/// closes nested nodes on the line of their last child, `(MyMatMul_J 8) )`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Layout {
    #[default]
    Indented,
    Flat,
}

/// A whole parameter file: a sequence of top-level groups.
/// Equality ignores the layout.
#[derive(Clone, Debug, Default)]
pub struct ParamTree {
    pub groups: Vec<Node>,
    pub layout: Layout,
}

impl PartialEq for ParamTree {
    fn eq(&self, other: &Self) -> bool {
        self.groups == other.groups
    }
}

impl ParamTree {
    pub fn group(&self, name: &str) -> Option<&Node> {
        self.groups.iter().find(|g| g.is(name))
    }

    pub fn group_mut(&mut self, name: &str) -> &mut Node {
        match self.groups.iter().position(|g| g.is(name)) {
            Some(p) => &mut self.groups[p],
            None => {
                self.groups.push(Node::group(name));
                self.groups.last_mut().unwrap()
            }
        }
    }

    /// Replace the group with the same name, or append.
    pub fn put(&mut self, node: Node) {
        match self.groups.iter().position(|g| g.is(&node.key)) {
            Some(p) => self.groups[p] = node,
            None => self.groups.push(node),
        }
    }

    /// The `BasicParam` group, if present.
    pub fn basic_params(&self) -> Option<&Node> {
        self.group("BasicParam")
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

#[derive(Debug, PartialEq)]
enum Atom {
    Open,
    Close,
    Word(String),
    Quoted(String),
}

fn lex(text: &str) -> Result<Vec<(Atom, usize, usize)>, ParamError> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let pos = (ln + 1, i + 1);
            match c {
                ';' => break,
                '(' => {
                    out.push((Atom::Open, pos.0, pos.1));
                    i += 1;
                }
                ')' => {
                    out.push((Atom::Close, pos.0, pos.1));
                    i += 1;
                }
                '"' => {
                    let mut s = String::new();
                    i += 1;
                    loop {
                        match chars.get(i) {
                            None => return Err(ParamError::parse(pos.0, pos.1, "unterminated string")),
                            Some('"') => break,
                            Some('\\') if i + 1 < chars.len() => {
                                s.push(chars[i + 1]);
                                i += 2;
                            }
                            Some(&c) => {
                                s.push(c);
                                i += 1;
                            }
                        }
                    }
                    i += 1;
                    out.push((Atom::Quoted(s), pos.0, pos.1));
                }
                c if c.is_whitespace() => i += 1,
                _ => {
                    let start = i;
                    while i < chars.len() && !chars[i].is_whitespace() && !matches!(chars[i], '(' | ')' | '"' | ';') {
                        i += 1;
                    }
                    out.push((Atom::Word(chars[start..i].iter().collect()), pos.0, pos.1));
                }
            }
        }
    }
    Ok(out)
}

pub fn read_param_file(text: &str) -> Result<ParamTree, ParamError> {
    let atoms = lex(text)?;
    let mut pos = 0;
    let mut groups = Vec::new();
    while pos < atoms.len() {
        groups.push(read_node(&atoms, &mut pos)?);
    }
    check_unique(&groups, 0, 0)?;
    let indented = text.lines().any(|l| l.starts_with([' ', '\t']) && !l.trim().is_empty());
    Ok(ParamTree { groups, layout: if indented { Layout::Indented } else { Layout::Flat } })
}

fn check_unique(nodes: &[Node], line: usize, col: usize) -> Result<(), ParamError> {
    for (i, n) in nodes.iter().enumerate() {
        if nodes[..i].iter().any(|m| m.identity() == n.identity()) {
            return Err(ParamError::parse(line, col, format!("duplicate key `{}`", n.key)));
        }
    }
    Ok(())
}

fn read_node(atoms: &[(Atom, usize, usize)], pos: &mut usize) -> Result<Node, ParamError> {
    let (a, line, col) = &atoms[*pos];
    if *a != Atom::Open {
        return Err(ParamError::parse(*line, *col, "expected `(`"));
    }
    *pos += 1;
    let key = match atoms.get(*pos) {
        Some((Atom::Word(w) | Atom::Quoted(w), _, _)) => w.clone(),
        Some((_, l, c)) => return Err(ParamError::parse(*l, *c, "expected a name after `(`")),
        None => return Err(ParamError::parse(*line, *col, "unbalanced `(`")),
    };
    *pos += 1;
    let mut node = Node::group(key);
    match atoms.get(*pos) {
        Some((Atom::Word(w), _, _)) => {
            node.value = Some(ParamValue::parse_atom(w));
            *pos += 1;
        }
        Some((Atom::Quoted(s), _, _)) => {
            node.value = Some(ParamValue::Str(s.clone()));
            *pos += 1;
        }
        _ => {}
    }
    loop {
        match atoms.get(*pos) {
            None => return Err(ParamError::parse(*line, *col, format!("`({}` is never closed", node.key))),
            Some((Atom::Close, _, _)) => {
                *pos += 1;
                break;
            }
            Some((Atom::Open, _, _)) => node.children.push(read_node(atoms, pos)?),
            Some((_, l, c)) => {
                return Err(ParamError::parse(*l, *c, format!("`({}` has more than one value", node.key)));
            }
        }
    }
    check_unique(&node.children, *line, *col)?;
    Ok(node)
}

pub fn write_param_file(tree: &ParamTree) -> String {
    let mut out = String::new();
    for g in &tree.groups {
        match tree.layout {
            Layout::Indented => g.write(&mut out, 0),
            Layout::Flat => g.write_flat(&mut out, 0),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atoms() {
        assert_eq!(ParamValue::parse_atom("64"), ParamValue::Int(64));
        assert_eq!(ParamValue::parse_atom("-3"), ParamValue::Int(-3));
        assert_eq!(ParamValue::parse_atom("2.5d0"), ParamValue::Real(2.5));
        assert_eq!(ParamValue::parse_atom(".TRUE."), ParamValue::Int(1));
        assert_eq!(ParamValue::parse_atom("inf"), ParamValue::Str("inf".into()));
        assert_eq!(ParamValue::parse_atom("e5"), ParamValue::Str("e5".into()));
        assert_eq!(ParamValue::Real(3.0).to_string(), "3.0");
        assert_eq!(ParamValue::Str("12".into()).to_string(), "\"12\"");
        assert_eq!(ParamValue::Str("split@K+fuse(k,j)".into()).to_string(), "\"split@K+fuse(k,j)\"");
    }

    #[test]
    fn parse_errors_have_positions() {
        let err = read_param_file("(A\n  (x 1)\n").unwrap_err();
        assert!(err.to_string().contains("never closed"), "{err}");
        let err = read_param_file("(A (x 1) (x 2))").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        assert!(read_param_file("(A (x 1 2))").is_err());
        assert!(read_param_file(")").is_err());
    }

    #[test]
    fn empty_group_and_empty_tree() {
        let t = read_param_file("(Name)").unwrap();
        assert_eq!(t.groups, vec![Node::group("Name")]);
        assert_eq!(write_param_file(&ParamTree::default()), "");
    }

    #[test]
    fn flat_layout_round_trips() {
        let text = "(A\n(x 1)\n(C 2\n(y 3)\n(D 4\n(z 5) ) )\n)\n";
        let t = read_param_file(text).unwrap();
        assert_eq!(t.layout, Layout::Flat);
        assert_eq!(write_param_file(&t), text);
        let indented = ParamTree { layout: Layout::Indented, ..t.clone() };
        assert_eq!(read_param_file(&write_param_file(&indented)).unwrap(), t);
    }

    #[test]
    fn writer_layout() {
        let mut g = Node::group("MyMatMul");
        g.set("OAT_NUMPROCS", 4);
        g.context_mut("OAT_PROBSIZE", &ParamValue::Int(1024)).set("MyMatMul_I", 4);
        let text = write_param_file(&ParamTree { groups: vec![g], ..Default::default() });
        assert_eq!(text, "(MyMatMul\n  (OAT_NUMPROCS 4)\n  (OAT_PROBSIZE 1024\n    (MyMatMul_I 4)\n  )\n)\n");
    }
}
