use std::fmt;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};

/// Longest subscript carried by a chain symbol (the 6-gram window minus the head).
pub const MAX_SUBSCRIPT: usize = 5;

/// Characters with structural meaning in symbol tokens and bracketed trees.
const RESERVED: &[char] = &['(', ')', '\'', '{', '}', ',', '@', '+'];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SymbolKind {
    Nonterminal,
    Terminal,
}

/// A grammar symbol.
///
/// Nonterminals produced by the tree transforms carry extra structure:
/// `primed` marks a right-branching chain continuation, `subscript` lists the
/// labels still to come in the chain, and `post_unary` marks a node that sits
/// directly under a unary rule (so it can never head another unary rule).
/// The textual token is `base['][{A,B,..}][@]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol {
    pub kind: SymbolKind,
    pub base: String,
    pub subscript: Vec<String>,
    pub primed: bool,
    pub post_unary: bool,
}

impl Symbol {
    pub fn terminal(name: impl Into<String>) -> Self {
        Symbol {
            kind: SymbolKind::Terminal,
            base: name.into(),
            subscript: Vec::new(),
            primed: false,
            post_unary: false,
        }
    }

    pub fn nonterminal(name: impl Into<String>) -> Self {
        Symbol {
            kind: SymbolKind::Nonterminal,
            base: name.into(),
            subscript: Vec::new(),
            primed: false,
            post_unary: false,
        }
    }

    pub fn chain(base: impl Into<String>, subscript: Vec<String>) -> Self {
        debug_assert!(subscript.len() <= MAX_SUBSCRIPT);
        Symbol {
            kind: SymbolKind::Nonterminal,
            base: base.into(),
            subscript,
            primed: true,
            post_unary: false,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.kind == SymbolKind::Terminal
    }

    pub fn with_post_unary(mut self, flag: bool) -> Self {
        self.post_unary = flag;
        self
    }

    /// Parse a token as a nonterminal or terminal.
    pub fn parse(token: &str, kind: SymbolKind) -> Result<Self> {
        if kind == SymbolKind::Terminal {
            check_label(token)?;
            return Ok(Symbol::terminal(token));
        }
        let mut rest = token;
        let post_unary = rest.ends_with('@');
        if post_unary {
            rest = &rest[..rest.len() - 1];
        }
        let mut subscript = Vec::new();
        if rest.ends_with('}') {
            let open = rest
                .rfind('{')
                .ok_or_else(|| Error::Invalid(format!("bad symbol token `{token}`")))?;
            let inner = &rest[open + 1..rest.len() - 1];
            for part in inner.split(',') {
                check_label(part)?;
                subscript.push(part.to_string());
            }
            if subscript.len() > MAX_SUBSCRIPT {
                return Err(Error::Invalid(format!(
                    "symbol `{token}` has more than {MAX_SUBSCRIPT} subscripts"
                )));
            }
            rest = &rest[..open];
        }
        let primed = rest.ends_with('\'');
        if primed {
            rest = &rest[..rest.len() - 1];
        }
        if rest.is_empty() {
            return Err(Error::Invalid(format!("bad symbol token `{token}`")));
        }
        for part in rest.split('+') {
            check_label(part)?;
        }
        Ok(Symbol {
            kind,
            base: rest.to_string(),
            subscript,
            primed,
            post_unary,
        })
    }
}

/// Rejects labels that would collide with the token syntax.
pub fn check_label(label: &str) -> Result<()> {
    if label.is_empty() || label.chars().any(|c| c.is_whitespace() || RESERVED.contains(&c)) {
        return Err(Error::Invalid(format!("invalid label `{label}`")));
    }
    Ok(())
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.base)?;
        if self.primed {
            f.write_str("'")?;
        }
        if !self.subscript.is_empty() {
            write!(f, "{{{}}}", self.subscript.join(","))?;
        }
        if self.post_unary {
            f.write_str("@")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymId(pub u32);

impl SymId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Interning table. Ids are dense and assigned in insertion order.
#[derive(Clone, Debug, Default)]
pub struct SymbolTable {
    symbols: Vec<Symbol>,
    index: FxHashMap<Symbol, SymId>,
}

impl SymbolTable {
    pub fn intern(&mut self, symbol: Symbol) -> SymId {
        if let Some(&id) = self.index.get(&symbol) {
            return id;
        }
        let id = SymId(self.symbols.len() as u32);
        self.symbols.push(symbol.clone());
        self.index.insert(symbol, id);
        id
    }

    pub fn get(&self, symbol: &Symbol) -> Option<SymId> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: SymId) -> &Symbol {
        &self.symbols[id.index()]
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (SymId, &Symbol)> {
        self.symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (SymId(i as u32), s))
    }
}
