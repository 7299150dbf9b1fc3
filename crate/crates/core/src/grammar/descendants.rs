//! The descendants map between a coarse first-pass grammar and a finer
//! second-pass grammar.
//!
//! Each second-pass nonterminal may project onto a different first-pass
//! symbol depending on the terminal that begins its span (terminal-prime
//! labels are named after their first terminal), so the reverse direction is
//! keyed by `(second symbol, first terminal of the span)`.

use std::fmt::Write as _;

use rustc_hash::FxHashMap;

use super::symbol::{SymId, Symbol, SymbolKind};
use super::Grammar;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct DescendantsMap {
    forward: Vec<Vec<SymId>>,
    reverse: FxHashMap<(SymId, SymId), SymId>,
    terminals: Vec<Option<SymId>>,
}

impl DescendantsMap {
    /// Build from `(first, second)` symbol pairs. A pair covers the spans of
    /// the second symbol whose first word can also begin the first symbol; a
    /// second symbol that would project to two first-pass symbols for the
    /// same word is an error.
    pub fn from_pairs(first: &Grammar, second: &Grammar, pairs: &[(SymId, SymId)]) -> Result<Self> {
        let mut terminals = vec![None; second.num_symbols()];
        let first_names = first.terminal_names();
        let second_names = second.terminal_names();
        if first_names != second_names {
            let mut missing: Vec<&str> = first_names
                .symmetric_difference(&second_names)
                .copied()
                .collect();
            missing.sort_unstable();
            return Err(Error::Model(format!(
                "first and second pass grammars have different terminals: {}",
                missing.join(" ")
            )));
        }
        for (id, s) in second.symbols().iter() {
            if s.is_terminal() {
                terminals[id.index()] = first.terminal(&s.base);
            }
        }

        let first_sets = second.first_terminals();
        let coarse_sets = first.first_terminals();
        let mut forward = vec![Vec::new(); first.num_symbols()];
        let mut reverse: FxHashMap<(SymId, SymId), SymId> = FxHashMap::default();
        for &(f, s) in pairs {
            if first.symbol(f).is_terminal() || second.symbol(s).is_terminal() {
                return Err(Error::Model(format!(
                    "descendant pair `{} {}` involves a terminal",
                    first.symbol(f),
                    second.symbol(s)
                )));
            }
            forward[f.index()].push(s);
            let mut ts: Vec<SymId> = first_sets[s.index()].iter().copied().collect();
            ts.sort_unstable();
            for t in ts {
                let covered = terminals[t.index()]
                    .is_some_and(|ft| coarse_sets[f.index()].contains(&ft));
                if !covered {
                    continue;
                }
                if let Some(&prev) = reverse.get(&(s, t)) {
                    if prev != f {
                        return Err(Error::Model(format!(
                            "`{}` has two ancestors `{}` and `{}` when it begins with `{}`",
                            second.symbol(s),
                            first.symbol(prev),
                            first.symbol(f),
                            second.symbol(t)
                        )));
                    }
                }
                reverse.insert((s, t), f);
            }
        }
        for v in &mut forward {
            v.sort_unstable();
            v.dedup();
        }
        Ok(DescendantsMap {
            forward,
            reverse,
            terminals,
        })
    }

    /// Second-pass symbols that descend from a first-pass symbol.
    #[inline]
    pub fn descendants(&self, first: SymId) -> &[SymId] {
        &self.forward[first.index()]
    }

    /// The first-pass ancestor of `second` over a span whose first word is
    /// the second-pass terminal `start`.
    #[inline]
    pub fn ancestor(&self, second: SymId, start: SymId) -> Option<SymId> {
        self.reverse.get(&(second, start)).copied()
    }

    /// Terminals correspond by name.
    #[inline]
    pub fn terminal_ancestor(&self, second: SymId) -> Option<SymId> {
        self.terminals[second.index()]
    }

    pub fn pairs(&self) -> impl Iterator<Item = (SymId, SymId)> + '_ {
        self.forward
            .iter()
            .enumerate()
            .flat_map(|(f, ss)| ss.iter().map(move |&s| (SymId(f as u32), s)))
    }

    pub fn num_pairs(&self) -> usize {
        self.forward.iter().map(Vec::len).sum()
    }

    pub fn write(&self, first: &Grammar, second: &Grammar) -> String {
        let mut out = String::new();
        for (f, s) in self.pairs() {
            writeln!(out, "D {} {}", first.symbol(f), second.symbol(s)).unwrap();
        }
        out
    }

    pub fn read(text: &str, source: &str, first: &Grammar, second: &Grammar) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 || f[0] != "D" {
                return Err(Error::format(source, line_no, format!("bad record `{line}`")));
            }
            let resolve = |g: &Grammar, tok: &str, which: &str| -> Result<SymId> {
                let sym = Symbol::parse(tok, SymbolKind::Nonterminal)
                    .map_err(|e| Error::format(source, line_no, e.to_string()))?;
                g.lookup(&sym).ok_or_else(|| {
                    Error::format(source, line_no, format!("`{tok}` is not in the {which} grammar"))
                })
            };
            pairs.push((resolve(first, f[1], "first")?, resolve(second, f[2], "second")?));
        }
        Self::from_pairs(first, second, &pairs)
    }
}

/// Pair each second-pass nonterminal with the first-pass symbol named after
/// each terminal that can begin it, keeping its primed and post-unary marks.
/// Combinations absent from the first grammar are skipped; the returned count
/// says how many were.
pub fn build_descendants(first: &Grammar, second: &Grammar) -> Result<(DescendantsMap, usize)> {
    let first_sets = second.first_terminals();
    let mut pairs = Vec::new();
    let mut unmapped = 0;
    for s in second.nonterminals() {
        let sym = second.symbol(s);
        let mut ts: Vec<SymId> = first_sets[s.index()].iter().copied().collect();
        ts.sort_unstable();
        for t in ts {
            let mut proj = Symbol::nonterminal(second.symbol(t).base.to_uppercase());
            proj.primed = sym.primed;
            proj.post_unary = sym.post_unary;
            match first.lookup(&proj) {
                Some(f) => pairs.push((f, s)),
                None => unmapped += 1,
            }
        }
    }
    let map = DescendantsMap::from_pairs(first, second, &pairs)?;
    Ok((map, unmapped))
}
