//! Line-oriented grammar text format (log2 probabilities):
//!
//! ```text
//! # comment
//! S start [logprob]
//! P symbol logprob
//! B parent left right logprob
//! U parent child logprob
//! ```
//!
//! Symbols heading a rule or named on an `S` line are nonterminals; every
//! other symbol is a terminal.

use std::fmt::Write as _;

use rustc_hash::FxHashSet;

use super::symbol::{Symbol, SymbolKind};
use super::{Grammar, GrammarBuilder};
use crate::error::{Error, Result};
use crate::logprob::LOG_ONE;

pub fn write_grammar(g: &Grammar) -> String {
    let mut out = String::new();
    let single_start = g.starts().len() == 1 && g.starts()[0].1 == LOG_ONE;
    for &(s, lp) in g.starts() {
        if single_start {
            writeln!(out, "S {}", g.symbol(s)).unwrap();
        } else {
            writeln!(out, "S {} {}", g.symbol(s), lp).unwrap();
        }
    }
    for (id, s) in g.symbols().iter() {
        let p = g.prior(id);
        if p.is_finite() {
            writeln!(out, "P {s} {p}").unwrap();
        }
    }
    for r in g.binary_rules() {
        writeln!(
            out,
            "B {} {} {} {}",
            g.symbol(r.parent),
            g.symbol(r.left),
            g.symbol(r.right),
            r.logp
        )
        .unwrap();
    }
    for r in g.unary_rules() {
        writeln!(out, "U {} {} {}", g.symbol(r.parent), g.symbol(r.child), r.logp).unwrap();
    }
    out
}

fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            None
        } else {
            Some((i + 1, line.split_whitespace().collect()))
        }
    })
}

pub fn read_grammar(text: &str, source: &str) -> Result<Grammar> {
    let mut nonterminals: FxHashSet<&str> = FxHashSet::default();
    for (line, f) in records(text) {
        match (f[0], f.len()) {
            ("B", 5) | ("U", 4) | ("S", 2) | ("S", 3) => {
                nonterminals.insert(f[1]);
            }
            ("P", 3) => {}
            _ => return Err(Error::format(source, line, format!("bad record `{}`", f.join(" ")))),
        }
    }
    let sym = |tok: &str, line: usize| -> Result<Symbol> {
        let kind = if nonterminals.contains(tok) {
            SymbolKind::Nonterminal
        } else {
            SymbolKind::Terminal
        };
        Symbol::parse(tok, kind).map_err(|e| Error::format(source, line, e.to_string()))
    };
    let num = |tok: &str, line: usize| -> Result<f64> {
        tok.parse::<f64>()
            .map_err(|_| Error::format(source, line, format!("bad log probability `{tok}`")))
    };
    let mut b = GrammarBuilder::new();
    for (line, f) in records(text) {
        match f[0] {
            "S" => {
                let lp = if f.len() == 3 { num(f[2], line)? } else { LOG_ONE };
                b.start_log(sym(f[1], line)?, lp);
            }
            "P" => {
                b.prior_log(sym(f[1], line)?, num(f[2], line)?);
            }
            "B" => {
                b.binary_log(sym(f[1], line)?, sym(f[2], line)?, sym(f[3], line)?, num(f[4], line)?);
            }
            "U" => {
                b.unary_log(sym(f[1], line)?, sym(f[2], line)?, num(f[3], line)?);
            }
            _ => unreachable!(),
        }
    }
    b.build().map_err(|e| match e {
        Error::Model(msg) => Error::Model(format!("{source}: {msg}")),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::transform::{apply, Transform};
    use crate::grammar::tree::read_treebank;
    use crate::grammar::induce_grammar;

    #[test]
    fn round_trip_is_exact() {
        let raw = read_treebank(
            "(S (NP (det) (adj) (adj) (noun)) (VP (verb) (NP (pron))))\n(S (NP (pron)) (VP (verb)))",
        )
        .unwrap();
        for transform in [Transform::SixGram, Transform::TerminalPrime] {
            let trees: Vec<_> = raw.iter().map(|t| apply(t, transform).unwrap()).collect();
            let g = induce_grammar(&trees).unwrap();
            let text = write_grammar(&g);
            let back = read_grammar(&text, "mem").unwrap();
            assert_eq!(write_grammar(&back), text);
            assert_eq!(back.binary_rules(), g.binary_rules());
            assert_eq!(back.unary_rules(), g.unary_rules());
        }
    }

    #[test]
    fn comments_and_errors() {
        let text = "# toy\nS S\nB S A B 0\nU A a 0 # lexical\nU B b 0\n";
        let g = read_grammar(text, "toy").unwrap();
        assert_eq!(g.binary_rules().len(), 1);
        let err = read_grammar("S S\nQ x\n", "bad.gram").unwrap_err();
        assert!(err.to_string().starts_with("bad.gram:2:"), "{err}");
        let err = read_grammar("S S\nU S a -x\n", "bad.gram").unwrap_err();
        assert!(err.to_string().starts_with("bad.gram:2:"), "{err}");
    }
}
