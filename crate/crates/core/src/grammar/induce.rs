use std::collections::BTreeMap;

use super::symbol::Symbol;
use super::tree::Tree;
use super::{Grammar, GrammarBuilder};
use crate::error::{Error, Result};

/// Relative-frequency counts read off transformed trees.
#[derive(Clone, Debug, Default)]
pub struct RuleCounts {
    pub binary: BTreeMap<(Symbol, Symbol, Symbol), f64>,
    pub unary: BTreeMap<(Symbol, Symbol), f64>,
    pub roots: BTreeMap<Symbol, f64>,
    pub labels: BTreeMap<Symbol, f64>,
    /// Number of internal (nonterminal) nodes; the prior denominator.
    pub constituents: f64,
}

impl RuleCounts {
    pub fn from_trees(trees: &[Tree]) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::Invalid("cannot induce a grammar from an empty corpus".into()));
        }
        let mut counts = RuleCounts::default();
        for t in trees {
            if t.is_leaf() {
                return Err(Error::Invalid(format!(
                    "tree `{t}` has no nonterminal root"
                )));
            }
            *counts.roots.entry(t.label.clone()).or_default() += 1.0;
            counts.add_tree(t)?;
        }
        Ok(counts)
    }

    fn add_tree(&mut self, t: &Tree) -> Result<()> {
        *self.labels.entry(t.label.clone()).or_default() += 1.0;
        if t.is_leaf() {
            return Ok(());
        }
        self.constituents += 1.0;
        match t.children.as_slice() {
            [c] => {
                *self
                    .unary
                    .entry((t.label.clone(), c.label.clone()))
                    .or_default() += 1.0
            }
            [l, r] => {
                *self
                    .binary
                    .entry((t.label.clone(), l.label.clone(), r.label.clone()))
                    .or_default() += 1.0
            }
            _ => {
                return Err(Error::Invalid(format!(
                    "node `{}` has {} children; binarize before inducing",
                    t.label,
                    t.children.len()
                )))
            }
        }
        for c in &t.children {
            self.add_tree(c)?;
        }
        Ok(())
    }

    pub fn to_grammar(&self) -> Result<Grammar> {
        let mut lhs: BTreeMap<&Symbol, f64> = BTreeMap::new();
        for ((p, _, _), c) in &self.binary {
            *lhs.entry(p).or_default() += c;
        }
        for ((p, _), c) in &self.unary {
            *lhs.entry(p).or_default() += c;
        }
        let mut b = GrammarBuilder::new();
        for ((p, l, r), c) in &self.binary {
            b.binary_log(p.clone(), l.clone(), r.clone(), (c / lhs[p]).log2());
        }
        for ((p, ch), c) in &self.unary {
            b.unary_log(p.clone(), ch.clone(), (c / lhs[p]).log2());
        }
        let roots: f64 = self.roots.values().sum();
        for (s, c) in &self.roots {
            b.start_log(s.clone(), (c / roots).log2());
        }
        for (s, p) in self.priors() {
            b.prior_log(s, p.log2());
        }
        b.build()
    }

    /// Prior of every label: occurrences over the number of constituent
    /// (nonterminal) nodes. Nonterminal priors sum to one; terminal entries
    /// share the denominator so both kinds are on the same scale.
    pub fn priors(&self) -> BTreeMap<Symbol, f64> {
        self.labels
            .iter()
            .map(|(s, c)| (s.clone(), c / self.constituents))
            .collect()
    }
}

/// Read a PCFG off binarized (or terminal-prime) trees by relative frequency.
pub fn induce_grammar(trees: &[Tree]) -> Result<Grammar> {
    RuleCounts::from_trees(trees)?.to_grammar()
}

pub fn compute_priors(trees: &[Tree]) -> Result<BTreeMap<Symbol, f64>> {
    Ok(RuleCounts::from_trees(trees)?.priors())
}

/// Terminal-prime grammar that covers `second`: every rule of `second`,
/// projected onto first-terminal symbols, is present. Projections never seen
/// in `trees` receive `pseudo_count` observations before normalization.
pub fn induce_covering(trees: &[Tree], second: &Grammar, pseudo_count: f64) -> Result<Grammar> {
    if pseudo_count <= 0.0 {
        return Err(Error::Invalid("pseudo count must be positive".into()));
    }
    let mut counts = RuleCounts::from_trees(trees)?;
    let first = second.first_terminals();
    let project = |sym: super::SymId, t: super::SymId| -> Symbol {
        let s = second.symbol(sym);
        if s.is_terminal() {
            return s.clone();
        }
        let mut p = Symbol::nonterminal(second.symbol(t).base.to_uppercase());
        p.primed = s.primed;
        p.post_unary = s.post_unary;
        p
    };
    let add_label = |counts: &mut RuleCounts, s: &Symbol| {
        counts.labels.entry(s.clone()).or_insert(pseudo_count);
    };
    for r in second.binary_rules() {
        for &t in &first[r.left.index()] {
            for &u in &first[r.right.index()] {
                let key = (project(r.parent, t), project(r.left, t), project(r.right, u));
                for s in [&key.0, &key.1, &key.2] {
                    add_label(&mut counts, s);
                }
                counts.binary.entry(key).or_insert(pseudo_count);
            }
        }
    }
    for r in second.unary_rules() {
        for &t in &first[r.child.index()] {
            let key = (project(r.parent, t), project(r.child, t));
            add_label(&mut counts, &key.0);
            add_label(&mut counts, &key.1);
            counts.unary.entry(key).or_insert(pseudo_count);
        }
    }
    for &(s, _) in second.starts() {
        for &t in &first[s.index()] {
            let root = project(s, t);
            add_label(&mut counts, &root);
            counts.roots.entry(root).or_insert(pseudo_count);
        }
    }
    // Keep nonterminal priors normalized after the additions.
    counts.constituents = counts
        .labels
        .iter()
        .filter(|(s, _)| !s.is_terminal())
        .map(|(_, c)| c)
        .sum();
    counts.to_grammar()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::transform::{apply, Transform};
    use crate::grammar::tree::read_treebank;

    #[test]
    fn single_observation_gives_certain_rules() {
        let trees = read_treebank("(S (A a) (B b))").unwrap();
        let g = induce_grammar(&trees).unwrap();
        for r in g.binary_rules() {
            assert_eq!(r.logp, 0.0);
        }
        for r in g.unary_rules() {
            assert_eq!(r.logp, 0.0);
        }
    }

    #[test]
    fn relative_frequency() {
        // `(A a)` reads as a preterminal; wrap in nonterminals explicitly.
        let trees =
            read_treebank("(S (A (a)) (B (b)))\n(S (A (a)) (B (b)))\n(S (A (a)))").unwrap();
        let g = induce_grammar(&trees).unwrap();
        let s = g.lookup(&Symbol::nonterminal("S")).unwrap();
        let bin = g.binary_rules().iter().find(|r| r.parent == s).unwrap();
        assert!((bin.logp.exp2() - 2.0 / 3.0).abs() < 1e-12);
        let un = g.unary_rules().iter().find(|r| r.parent == s).unwrap();
        assert!((un.logp.exp2() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn priors_by_label_frequency() {
        let trees = read_treebank("(S (NP (d)) (VP (v) (NP (n))))").unwrap();
        let p = compute_priors(&trees).unwrap();
        assert_eq!(p[&Symbol::nonterminal("NP")], 0.5);
        assert_eq!(p[&Symbol::nonterminal("S")], 0.25);
        assert_eq!(p[&Symbol::nonterminal("VP")], 0.25);
        let single = compute_priors(&read_treebank("(X (t))").unwrap()).unwrap();
        assert_eq!(single[&Symbol::nonterminal("X")], 1.0);
    }

    #[test]
    fn empty_corpus_is_error() {
        assert!(induce_grammar(&[]).is_err());
    }

    #[test]
    fn flat_tree_is_error() {
        let trees = read_treebank("(S (a) (b) (c))").unwrap();
        assert!(induce_grammar(&trees).is_err());
    }

    #[test]
    fn covering_grammar_contains_projections() {
        let raw = read_treebank(
            "(S (NP (det) (noun)) (VP (verb) (NP (pron))))\n(S (NP (pron)) (VP (verb)))",
        )
        .unwrap();
        let six: Vec<Tree> = raw.iter().map(|t| apply(t, Transform::SixGram).unwrap()).collect();
        let tp: Vec<Tree> = raw
            .iter()
            .map(|t| apply(t, Transform::TerminalPrime).unwrap())
            .collect();
        let second = induce_grammar(&six).unwrap();
        let plain = induce_grammar(&tp).unwrap();
        let covering = induce_covering(&tp, &second, 0.1).unwrap();
        assert!(covering.binary_rules().len() > plain.binary_rules().len());
        // S -> NP VP with NP starting at pron projects to PRON -> PRON VERB, seen;
        // NP starting at det with VP intransitive projects to DET -> DET VERB, unseen.
        let det = Symbol::nonterminal("DET");
        let verb = Symbol::nonterminal("VERB");
        let (d, v) = (covering.lookup(&det).unwrap(), covering.lookup(&verb).unwrap());
        assert!(covering
            .binary_rules()
            .iter()
            .any(|r| r.parent == d && r.left == d && r.right == v));
        for (_, mass) in covering.parent_mass() {
            assert!((mass - 1.0).abs() < 1e-9);
        }
    }
}
