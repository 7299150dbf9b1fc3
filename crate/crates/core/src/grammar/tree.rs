use std::fmt;

use super::symbol::{check_label, Symbol};
use crate::error::{Error, Result};

/// A parse tree. Leaves are terminals (part-of-speech tags) and may carry the
/// original word as payload; internal nodes are nonterminals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tree {
    pub label: Symbol,
    pub children: Vec<Tree>,
    pub token: Option<String>,
}

impl Tree {
    pub fn leaf(tag: impl Into<String>) -> Self {
        Tree {
            label: Symbol::terminal(tag),
            children: Vec::new(),
            token: None,
        }
    }

    pub fn node(label: Symbol, children: Vec<Tree>) -> Self {
        Tree {
            label,
            children,
            token: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Terminal labels in left-to-right order.
    pub fn terminals(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_terminals(&mut out);
        out
    }

    fn collect_terminals(&self, out: &mut Vec<String>) {
        if self.is_leaf() {
            out.push(self.label.base.clone());
        } else {
            for c in &self.children {
                c.collect_terminals(out);
            }
        }
    }

    pub fn len(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.children.iter().map(Tree::len).sum()
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Visit every internal node with its `(start, end)` terminal span (end exclusive).
    pub fn for_each_internal<F: FnMut(&Tree, usize, usize)>(&self, mut f: F) {
        self.walk_internal(0, &mut f);
    }

    fn walk_internal<F: FnMut(&Tree, usize, usize)>(&self, start: usize, f: &mut F) -> usize {
        if self.is_leaf() {
            return start + 1;
        }
        let mut pos = start;
        for c in &self.children {
            pos = c.walk_internal(pos, f);
        }
        f(self, start, pos);
        pos
    }

    pub fn max_arity(&self) -> usize {
        self.children
            .iter()
            .map(Tree::max_arity)
            .max()
            .unwrap_or(0)
            .max(self.children.len())
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_leaf() {
            return match &self.token {
                Some(tok) => write!(f, "({} {})", self.label, tok),
                None => write!(f, "{}", self.label),
            };
        }
        write!(f, "({}", self.label)?;
        for c in &self.children {
            write!(f, " {c}")?;
        }
        f.write_str(")")
    }
}

/// Line written for a sentence that could not be parsed.
pub const FAILURE_LINE: &str = "(())";

#[derive(Debug)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn tokenize(text: &str) -> Vec<(Tok<'_>, usize)> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let bytes = line.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'(' => {
                    out.push((Tok::Open, line_no));
                    i += 1;
                }
                b')' => {
                    out.push((Tok::Close, line_no));
                    i += 1;
                }
                c if (c as char).is_ascii_whitespace() => i += 1,
                _ => {
                    let start = i;
                    while i < bytes.len()
                        && !matches!(bytes[i], b'(' | b')')
                        && !(bytes[i] as char).is_ascii_whitespace()
                    {
                        i += 1;
                    }
                    out.push((Tok::Atom(&line[start..i]), line_no));
                }
            }
        }
    }
    out
}

/// Untyped bracket structure before label/leaf interpretation.
enum Raw<'a> {
    Atom(&'a str),
    List(Vec<Raw<'a>>, usize),
}

struct Reader<'a> {
    toks: Vec<(Tok<'a>, usize)>,
    pos: usize,
    source: &'a str,
}

impl<'a> Reader<'a> {
    fn read_list(&mut self, open_line: usize) -> Result<Raw<'a>> {
        let mut items = Vec::new();
        loop {
            let Some((tok, line)) = self.toks.get(self.pos) else {
                return Err(Error::format(self.source, open_line, "unbalanced parentheses"));
            };
            let line = *line;
            self.pos += 1;
            match tok {
                Tok::Open => items.push(self.read_list(line)?),
                Tok::Close => return Ok(Raw::List(items, open_line)),
                Tok::Atom(a) => items.push(Raw::Atom(a)),
            }
        }
    }

    fn next_top(&mut self) -> Result<Option<Raw<'a>>> {
        let Some((tok, line)) = self.toks.get(self.pos) else {
            return Ok(None);
        };
        let line = *line;
        self.pos += 1;
        match tok {
            Tok::Open => self.read_list(line).map(Some),
            Tok::Close => Err(Error::format(self.source, line, "unbalanced parentheses")),
            Tok::Atom(a) => Err(Error::format(
                self.source,
                line,
                format!("unexpected `{a}` outside brackets"),
            )),
        }
    }
}

fn build(raw: &Raw<'_>, source: &str) -> Result<Tree> {
    match raw {
        Raw::Atom(a) => {
            check_label(a)?;
            Ok(Tree::leaf(*a))
        }
        Raw::List(items, line) => {
            let line = *line;
            let err = |msg: &str| Error::format(source, line, msg.to_string());
            match items.first() {
                None => Err(err("empty constituent")),
                // Unlabeled wrapper `( (S ...) )`.
                Some(Raw::List(..)) => {
                    if items.len() == 1 {
                        build(&items[0], source)
                    } else {
                        Err(err("unlabeled constituent with more than one child"))
                    }
                }
                Some(Raw::Atom(label)) => {
                    check_label(label)
                        .map_err(|e| Error::format(source, line, e.to_string()))?;
                    let rest = &items[1..];
                    match rest {
                        [] => Ok(Tree::leaf(*label)),
                        [Raw::Atom(word)] => Ok(Tree {
                            label: Symbol::terminal(*label),
                            children: Vec::new(),
                            token: Some(word.to_string()),
                        }),
                        _ => {
                            let children = rest
                                .iter()
                                .map(|r| build(r, source))
                                .collect::<Result<Vec<_>>>()?;
                            Ok(Tree::node(Symbol::nonterminal(*label), children))
                        }
                    }
                }
            }
        }
    }
}

fn is_failure_marker(raw: &Raw<'_>) -> bool {
    matches!(raw, Raw::List(items, _) if items.len() == 1 && matches!(&items[0], Raw::List(inner, _) if inner.is_empty()))
}

/// Read Penn-style bracketed trees, one tree per top-level bracket.
pub fn read_treebank(text: &str) -> Result<Vec<Tree>> {
    read_named(text, "<treebank>")
}

pub fn read_named(text: &str, source: &str) -> Result<Vec<Tree>> {
    let mut reader = Reader {
        toks: tokenize(text),
        pos: 0,
        source,
    };
    let mut out = Vec::new();
    while let Some(raw) = reader.next_top()? {
        out.push(build(&raw, source)?);
    }
    Ok(out)
}

/// Like [`read_named`] but accepts the `(())` failure marker, yielding `None` for it.
pub fn read_parses(text: &str, source: &str) -> Result<Vec<Option<Tree>>> {
    let mut reader = Reader {
        toks: tokenize(text),
        pos: 0,
        source,
    };
    let mut out = Vec::new();
    while let Some(raw) = reader.next_top()? {
        if is_failure_marker(&raw) {
            out.push(None);
        } else {
            out.push(Some(build(&raw, source)?));
        }
    }
    Ok(out)
}
