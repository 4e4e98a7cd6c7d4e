//! Token stream shared by the kernel parser and the directive parser.

use super::KernelError;

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Real(f64),
    Str(String),
    /// Punctuation and operators: `+ - * / ** = == /= < <= > >= ( ) , ; : &`.
    Sym(&'static str),
    /// Dotted operators and logical literals, lower-cased without dots:
    /// `.and.` becomes `Dot("and")`.
    Dot(String),
}

impl Tok {
    pub fn is_sym(&self, s: &str) -> bool {
        matches!(self, Tok::Sym(x) if *x == s)
    }

    pub fn is_word(&self, w: &str) -> bool {
        matches!(self, Tok::Ident(x) if x.eq_ignore_ascii_case(w))
    }

    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(v) => format!("integer `{v}`"),
            Tok::Real(v) => format!("real `{v}`"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Dot(s) => format!("`.{s}.`"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub tok: Tok,
    /// 1-based column within the logical line.
    pub col: usize,
}

const SYMS: [&str; 17] = [
    "**", "==", "/=", "<=", ">=", "+", "-", "*", "/", "=", "<", ">", "(", ")", ",", ";", ":",
];

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Returns the dotted word starting at `i` (which holds a `.`) if the text
/// looks like `.word.`.
fn dotted_word(chars: &[char], i: usize) -> Option<(String, usize)> {
    let mut j = i + 1;
    while j < chars.len() && chars[j].is_ascii_alphabetic() {
        j += 1;
    }
    if j > i + 1 && j < chars.len() && chars[j] == '.' {
        let w: String = chars[i + 1..j].iter().collect::<String>().to_ascii_lowercase();
        Some((w, j + 1))
    } else {
        None
    }
}

pub fn tokenize(text: &str, line: usize) -> Result<Vec<Token>, KernelError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '&' {
            out.push(Token { tok: Tok::Sym("&"), col });
            i += 1;
            continue;
        }
        if c == '"' || c == '\'' || c == '\u{201c}' || c == '\u{2018}' {
            let close: &[char] = match c {
                '"' => &['"'],
                '\'' => &['\''],
                _ => &['\u{201d}', '\u{2019}', '"', '\''],
            };
            let mut j = i + 1;
            while j < chars.len() && !close.contains(&chars[j]) {
                j += 1;
            }
            if j >= chars.len() {
                return Err(KernelError::syntax(line, col, "unterminated string"));
            }
            out.push(Token { tok: Tok::Str(chars[i + 1..j].iter().collect()), col });
            i = j + 1;
            continue;
        }
        if c == '.' {
            if let Some((w, next)) = dotted_word(&chars, i) {
                out.push(Token { tok: Tok::Dot(w), col });
                i = next;
                continue;
            }
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let (tok, next) = lex_number(&chars, i, line)?;
            out.push(Token { tok, col });
            i = next;
            continue;
        }
        if is_ident_start(c) {
            let mut j = i;
            while j < chars.len() && is_ident_char(chars[j]) {
                j += 1;
            }
            out.push(Token { tok: Tok::Ident(chars[i..j].iter().collect()), col });
            i = j;
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        if let Some(sym) = SYMS.iter().find(|s| rest.starts_with(**s)) {
            out.push(Token { tok: Tok::Sym(sym), col });
            i += sym.len();
            continue;
        }
        return Err(KernelError::syntax(line, col, format!("unexpected character `{c}`")));
    }
    Ok(out)
}

fn lex_number(chars: &[char], start: usize, line: usize) -> Result<(Tok, usize), KernelError> {
    let mut i = start;
    let mut real = false;
    while i < chars.len() && chars[i].is_ascii_digit() {
        i += 1;
    }
    if i < chars.len() && chars[i] == '.' && dotted_word(chars, i).is_none() {
        real = true;
        i += 1;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
    }
    let mantissa_end = i;
    let mut exponent = String::new();
    if i < chars.len() && matches!(chars[i], 'e' | 'E' | 'd' | 'D') {
        let mut j = i + 1;
        if j < chars.len() && matches!(chars[j], '+' | '-') {
            j += 1;
        }
        if j < chars.len() && chars[j].is_ascii_digit() {
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            exponent = chars[i + 1..j].iter().collect();
            real = true;
            i = j;
        }
    }
    // Kind suffix such as `_PN` or `_8`: accepted and dropped.
    if i < chars.len() && chars[i] == '_' {
        i += 1;
        while i < chars.len() && is_ident_char(chars[i]) {
            i += 1;
        }
    }
    let mantissa: String = chars[start..mantissa_end].iter().collect();
    let col = start + 1;
    if real {
        let text = if exponent.is_empty() { mantissa } else { format!("{mantissa}e{exponent}") };
        let v: f64 = text
            .parse()
            .map_err(|_| KernelError::syntax(line, col, format!("bad real literal `{text}`")))?;
        Ok((Tok::Real(v), i))
    } else {
        let v: i64 = mantissa
            .parse()
            .map_err(|_| KernelError::syntax(line, col, format!("integer literal `{mantissa}` out of range")))?;
        Ok((Tok::Int(v), i))
    }
}
