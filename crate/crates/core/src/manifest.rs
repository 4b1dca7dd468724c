//! Static extraction of declared dependencies from Python setup manifests.
//!
//! Nothing is executed. The manifest is tokenized and the value passed as
//! `install_requires` is read only when it is built from string literals.
//! A single level of indirection through a module-level variable bound once
//! to a literal is followed; anything else marks the result partial.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseStatus {
    Complete,
    /// The list is computed at run time and was only partly recovered.
    PartialDynamic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyExtraction {
    pub declared: Vec<String>,
    pub parse_status: ParseStatus,
}

/// Project name of a PEP 508 requirement string, with extras, version
/// constraints, markers and URLs removed. Returns `None` for options such as
/// `-e ...`, comments, and bare URLs.
pub fn requirement_name(spec: &str) -> Option<String> {
    let spec = spec.trim();
    if spec.is_empty() || spec.starts_with('#') || spec.starts_with('-') {
        return None;
    }
    let end = spec
        .find(|c: char| !(c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-')))
        .unwrap_or(spec.len());
    let name = spec[..end].trim_end_matches(['.', '_', '-']);
    if name.is_empty() || !name.starts_with(|c: char| c.is_ascii_alphanumeric()) {
        return None;
    }
    if spec[end..].starts_with(':') {
        // scheme of a bare URL such as https://...
        return None;
    }
    Some(name.to_string())
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str { value: String, formatted: bool },
    Op(String),
    Other,
    Newline,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    src: &'a str,
    depth: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            chars: src.char_indices().peekable(),
            src,
            depth: 0,
        }
    }

    fn tokens(mut self) -> Vec<Tok> {
        let mut out = Vec::new();
        while let Some(&(pos, c)) = self.chars.peek() {
            match c {
                '\n' => {
                    self.chars.next();
                    if self.depth == 0 && !matches!(out.last(), Some(Tok::Newline) | None) {
                        out.push(Tok::Newline);
                    }
                }
                '#' => {
                    while let Some(&(_, c)) = self.chars.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.chars.next();
                    }
                }
                '\\' => {
                    // explicit line continuation
                    self.chars.next();
                    if let Some(&(_, '\n')) = self.chars.peek() {
                        self.chars.next();
                    }
                }
                c if c.is_whitespace() => {
                    self.chars.next();
                }
                '\'' | '"' => out.push(self.string(String::new())),
                c if c.is_alphabetic() || c == '_' => {
                    let ident = self.ident(pos);
                    let is_prefix = ident.len() <= 2
                        && ident
                            .chars()
                            .all(|c| matches!(c.to_ascii_lowercase(), 'r' | 'b' | 'u' | 'f'));
                    if is_prefix && matches!(self.chars.peek(), Some(&(_, '\'' | '"'))) {
                        out.push(self.string(ident));
                    } else {
                        out.push(Tok::Ident(ident));
                    }
                }
                c if c.is_ascii_digit() => {
                    while let Some(&(_, c)) = self.chars.peek() {
                        if c.is_ascii_alphanumeric() || c == '.' || c == '_' {
                            self.chars.next();
                        } else {
                            break;
                        }
                    }
                    out.push(Tok::Other);
                }
                _ => {
                    self.chars.next();
                    match c {
                        '(' | '[' | '{' => self.depth += 1,
                        ')' | ']' | '}' => self.depth = self.depth.saturating_sub(1),
                        _ => {}
                    }
                    let mut op = c.to_string();
                    // two-character operators that matter for assignment detection
                    if let Some(&(_, next)) = self.chars.peek() {
                        if next == '=' && matches!(c, '=' | '+' | '-' | '*' | '/' | '!' | '<' | '>' | '|' | '&' | ':') {
                            op.push(next);
                            self.chars.next();
                        }
                    }
                    out.push(Tok::Op(op));
                }
            }
        }
        out
    }

    fn ident(&mut self, start: usize) -> String {
        let mut end = start;
        while let Some(&(pos, c)) = self.chars.peek() {
            if c.is_alphanumeric() || c == '_' {
                end = pos + c.len_utf8();
                self.chars.next();
            } else {
                break;
            }
        }
        self.src[start..end].to_string()
    }

    fn string(&mut self, prefix: String) -> Tok {
        let prefix = prefix.to_ascii_lowercase();
        let raw = prefix.contains('r');
        let formatted = prefix.contains('f');
        let (_, quote) = self.chars.next().expect("caller saw a quote");
        let triple = {
            let mut look = self.chars.clone();
            matches!(
                (look.next(), look.next()),
                (Some((_, a)), Some((_, b))) if a == quote && b == quote
            )
        };
        if triple {
            self.chars.next();
            self.chars.next();
        }
        let mut value = String::new();
        while let Some((_, c)) = self.chars.next() {
            if c == '\\' {
                if let Some((_, esc)) = self.chars.next() {
                    if raw {
                        value.push('\\');
                        value.push(esc);
                    } else {
                        match esc {
                            'n' => value.push('\n'),
                            't' => value.push('\t'),
                            '\n' => {}
                            other => value.push(other),
                        }
                    }
                }
                continue;
            }
            if c == quote {
                if !triple {
                    break;
                }
                let mut look = self.chars.clone();
                if matches!(
                    (look.next(), look.next()),
                    (Some((_, a)), Some((_, b))) if a == quote && b == quote
                ) {
                    self.chars.next();
                    self.chars.next();
                    break;
                }
            }
            if c == '\n' && !triple {
                // unterminated single-line string
                break;
            }
            value.push(c);
        }
        Tok::Str { value, formatted }
    }
}

fn is_open(t: &Tok) -> bool {
    matches!(t, Tok::Op(op) if op == "(" || op == "[" || op == "{")
}

fn is_close(t: &Tok) -> bool {
    matches!(t, Tok::Op(op) if op == ")" || op == "]" || op == "}")
}

fn is_op(t: &Tok, s: &str) -> bool {
    matches!(t, Tok::Op(op) if op == s)
}

/// Index one past the end of the expression starting at `start`: stops at a
/// comma, closing bracket, or newline at the starting nesting level.
fn expression_end(toks: &[Tok], start: usize) -> usize {
    let mut depth = 0usize;
    let mut i = start;
    while i < toks.len() {
        let t = &toks[i];
        if depth == 0 && (is_op(t, ",") || is_close(t) || *t == Tok::Newline) {
            break;
        }
        if is_open(t) {
            depth += 1;
        } else if is_close(t) {
            depth -= 1;
        }
        i += 1;
    }
    i
}

/// Index of the token closing the bracket opened at `open`.
fn matching_close(toks: &[Tok], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (i, t) in toks.iter().enumerate().skip(open) {
        if is_open(t) {
            depth += 1;
        } else if is_close(t) {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
    }
    None
}

fn literal_string(toks: &[Tok]) -> Option<String> {
    if toks.is_empty() {
        return None;
    }
    let mut value = String::new();
    for t in toks {
        match t {
            Tok::Str {
                value: v,
                formatted: false,
            } => value.push_str(v),
            _ => return None,
        }
    }
    Some(value)
}

struct Binding {
    expr: (usize, usize),
    count: usize,
    mutated: bool,
}

struct Extractor {
    toks: Vec<Tok>,
    bindings: HashMap<String, Binding>,
}

#[derive(Default)]
struct Found {
    names: Vec<String>,
    complete: bool,
}

impl Extractor {
    fn new(text: &str) -> Self {
        let toks = Lexer::new(text).tokens();
        let mut bindings: HashMap<String, Binding> = HashMap::new();
        for i in 0..toks.len() {
            let Tok::Ident(name) = &toks[i] else { continue };
            let at_stmt_start = i == 0 || toks[i - 1] == Tok::Newline;
            let next = toks.get(i + 1);
            if at_stmt_start && next.is_some_and(|t| is_op(t, "=")) {
                let start = i + 2;
                let end = expression_end(&toks, start);
                let b = bindings.entry(name.clone()).or_insert(Binding {
                    expr: (start, end),
                    count: 0,
                    mutated: false,
                });
                b.count += 1;
                continue;
            }
            let mutates = next.is_some_and(|t| is_op(t, "+=") || is_op(t, "-="))
                || (next.is_some_and(|t| is_op(t, "."))
                    && matches!(toks.get(i + 2), Some(Tok::Ident(m)) if matches!(m.as_str(), "append" | "extend" | "insert" | "remove" | "pop" | "clear")));
            if mutates {
                bindings
                    .entry(name.clone())
                    .or_insert(Binding {
                        expr: (0, 0),
                        count: 0,
                        mutated: false,
                    })
                    .mutated = true;
            }
        }
        Extractor { toks, bindings }
    }

    /// Spans of every value supplied for `install_requires`, either as a call
    /// keyword argument or as a dict entry passed through `**kwargs`.
    fn requirement_sites(&self) -> Vec<(usize, usize)> {
        let toks = &self.toks;
        let mut sites = Vec::new();
        let mut depth = 0usize;
        for i in 0..toks.len() {
            let t = &toks[i];
            if is_open(t) {
                depth += 1;
            } else if is_close(t) {
                depth = depth.saturating_sub(1);
            }
            let keyword = matches!(t, Tok::Ident(n) if n == "install_requires")
                && depth > 0
                && toks.get(i + 1).is_some_and(|t| is_op(t, "="));
            let dict_key = matches!(t, Tok::Str { value, .. } if value == "install_requires")
                && toks.get(i + 1).is_some_and(|t| is_op(t, ":"));
            if keyword || dict_key {
                let start = i + 2;
                sites.push((start, expression_end(toks, start)));
            }
        }
        sites
    }

    fn evaluate(&self, span: (usize, usize), hops: usize) -> Found {
        let (start, end) = span;
        let expr = &self.toks[start..end];
        if expr.is_empty() {
            return Found::default();
        }

        if let Some(text) = literal_string(expr) {
            // setuptools also accepts a newline-separated string
            return Found {
                names: text.lines().filter_map(requirement_name).collect(),
                complete: true,
            };
        }

        if let [Tok::Ident(name)] = expr {
            if hops == 0 {
                if let Some(b) = self.bindings.get(name) {
                    if b.count == 1 && !b.mutated {
                        return self.evaluate(b.expr, hops + 1);
                    }
                }
            }
            return Found::default();
        }

        if is_open(&expr[0]) && !is_op(&expr[0], "{") {
            if let Some(close) = matching_close(&self.toks, start) {
                if close + 1 == end {
                    let (names, all_literal) = self.display_elements(start, close);
                    return Found {
                        names,
                        complete: all_literal,
                    };
                }
            }
        }

        // Compound expression: keep what literal displays it contains at its
        // own level (e.g. `["a"] + extra`), never the arguments of calls.
        let mut names = Vec::new();
        let mut i = start;
        while i < end {
            let t = &self.toks[i];
            if is_open(t) {
                let close = matching_close(&self.toks, i).unwrap_or(end - 1);
                let is_display = (is_op(t, "[") || is_op(t, "("))
                    && !(i > start
                        && matches!(
                            &self.toks[i - 1],
                            Tok::Ident(_) | Tok::Str { .. }
                        )
                        || i > start && is_close(&self.toks[i - 1]));
                if is_display {
                    names.extend(self.display_elements(i, close).0);
                }
                i = close + 1;
            } else {
                i += 1;
            }
        }
        Found {
            names,
            complete: false,
        }
    }

    /// Reads the elements of the list/tuple display between `open` and
    /// `close`. Returns the recovered names and whether every element was a
    /// plain string literal.
    fn display_elements(&self, open: usize, close: usize) -> (Vec<String>, bool) {
        let mut names = Vec::new();
        let mut all_literal = true;
        let mut i = open + 1;
        while i < close {
            let end = expression_end(&self.toks, i).min(close);
            let element = &self.toks[i..end];
            if !element.is_empty() {
                match literal_string(element) {
                    Some(spec) => {
                        if let Some(name) = requirement_name(&spec) {
                            names.push(name);
                        }
                    }
                    None => all_literal = false,
                }
            }
            i = end + 1;
        }
        (names, all_literal)
    }
}

/// Reads the statically declared `install_requires` entries of a setup
/// manifest. Never fails: unreadable input yields no names and
/// [`ParseStatus::PartialDynamic`].
pub fn extract_pypi_dependencies(manifest_text: &str) -> DependencyExtraction {
    let extractor = Extractor::new(manifest_text);
    let sites = extractor.requirement_sites();
    let mut declared = Vec::new();
    let mut seen = HashSet::new();
    let mut complete = true;
    for site in sites {
        let found = extractor.evaluate(site, 0);
        complete &= found.complete;
        for name in found.names {
            if seen.insert(name.clone()) {
                declared.push(name);
            }
        }
    }
    DependencyExtraction {
        declared,
        parse_status: if complete {
            ParseStatus::Complete
        } else {
            ParseStatus::PartialDynamic
        },
    }
}
