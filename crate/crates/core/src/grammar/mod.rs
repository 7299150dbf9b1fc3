//! Treebank reading, tree transforms, PCFG induction and the descendants map
//! that links a coarse first-pass grammar to a finer second-pass grammar.

pub mod descendants;
pub mod induce;
pub mod io;
pub mod symbol;
pub mod transform;
pub mod tree;

use std::collections::BTreeMap;

use rustc_hash::{FxHashMap, FxHashSet};

pub use descendants::{build_descendants, DescendantsMap};
pub use induce::{compute_priors, induce_covering, induce_grammar, RuleCounts};
pub use symbol::{SymId, Symbol, SymbolKind, SymbolTable};
pub use transform::Transform;
pub use tree::{read_treebank, Tree};

use crate::error::{Error, Result};
use crate::logprob::{log2_sum, LOG_ONE, LOG_ZERO};

/// Tolerance for per-parent normalization when a grammar is assembled.
const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinaryRule {
    pub parent: SymId,
    pub left: SymId,
    pub right: SymId,
    pub logp: f64,
}

/// `parent -> child`; lexical rules are unary rules whose child is a terminal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnaryRule {
    pub parent: SymId,
    pub child: SymId,
    pub logp: f64,
}

/// An immutable PCFG with log2 rule probabilities, per-symbol priors and a
/// distribution over root symbols.
///
/// Symbol ids are assigned in sorted token order (nonterminals first) and rule
/// ids in sorted `(parent, children)` order, so two grammars built from the
/// same rules are identical regardless of construction order.
#[derive(Clone, Debug)]
pub struct Grammar {
    symbols: SymbolTable,
    binary: Vec<BinaryRule>,
    unary: Vec<UnaryRule>,
    priors: Vec<f64>,
    starts: Vec<(SymId, f64)>,
    start_logp: Vec<f64>,
    by_left: Vec<FxHashMap<SymId, Vec<u32>>>,
    unary_by_child: Vec<Vec<u32>>,
    terminals: FxHashMap<String, SymId>,
}

/// Collects rules keyed by symbol value; `build` assigns ids and indexes.
#[derive(Clone, Debug, Default)]
pub struct GrammarBuilder {
    binary: BTreeMap<(Symbol, Symbol, Symbol), f64>,
    unary: BTreeMap<(Symbol, Symbol), f64>,
    priors: BTreeMap<Symbol, f64>,
    starts: BTreeMap<Symbol, f64>,
}

impl GrammarBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a binary rule with a linear probability.
    pub fn binary(&mut self, parent: Symbol, left: Symbol, right: Symbol, p: f64) -> &mut Self {
        self.binary_log(parent, left, right, p.log2())
    }

    pub fn unary(&mut self, parent: Symbol, child: Symbol, p: f64) -> &mut Self {
        self.unary_log(parent, child, p.log2())
    }

    pub fn binary_log(&mut self, parent: Symbol, left: Symbol, right: Symbol, logp: f64) -> &mut Self {
        self.binary.insert((parent, left, right), logp);
        self
    }

    pub fn unary_log(&mut self, parent: Symbol, child: Symbol, logp: f64) -> &mut Self {
        self.unary.insert((parent, child), logp);
        self
    }

    pub fn prior_log(&mut self, symbol: Symbol, logp: f64) -> &mut Self {
        self.priors.insert(symbol, logp);
        self
    }

    pub fn start_log(&mut self, symbol: Symbol, logp: f64) -> &mut Self {
        self.starts.insert(symbol, logp);
        self
    }

    pub fn start(&mut self, symbol: Symbol) -> &mut Self {
        self.start_log(symbol, LOG_ONE)
    }

    /// Shorthand for test and toy grammars: rules written as
    /// `"S -> A B 0.5"`, lowercase-initial names are terminals.
    pub fn from_rules(start: &str, rules: &[&str]) -> Result<Grammar> {
        let sym = |s: &str| {
            if s.starts_with(|c: char| c.is_lowercase()) {
                Symbol::terminal(s)
            } else {
                Symbol::nonterminal(s)
            }
        };
        let mut b = GrammarBuilder::new();
        for rule in rules {
            let parts: Vec<&str> = rule.split_whitespace().collect();
            let bad = || Error::Invalid(format!("bad rule `{rule}`"));
            if parts.len() < 4 || parts[1] != "->" {
                return Err(bad());
            }
            let p: f64 = parts[parts.len() - 1].parse().map_err(|_| bad())?;
            match parts.len() {
                4 => b.unary(sym(parts[0]), sym(parts[2]), p),
                5 => b.binary(sym(parts[0]), sym(parts[2]), sym(parts[3]), p),
                _ => return Err(bad()),
            };
        }
        b.start(Symbol::nonterminal(start));
        b.build()
    }

    pub fn build(&self) -> Result<Grammar> {
        let mut all: Vec<Symbol> = Vec::new();
        for (p, l, r) in self.binary.keys() {
            all.extend([p.clone(), l.clone(), r.clone()]);
        }
        for (p, c) in self.unary.keys() {
            all.extend([p.clone(), c.clone()]);
        }
        all.extend(self.priors.keys().cloned());
        all.extend(self.starts.keys().cloned());
        all.sort_by_key(|a| (a.kind, a.to_string()));
        all.dedup();

        let mut symbols = SymbolTable::default();
        for s in all {
            symbols.intern(s);
        }
        let id = |s: &Symbol| symbols.get(s).expect("interned");

        let mut parents: FxHashSet<SymId> = FxHashSet::default();
        let mut binary: Vec<BinaryRule> = self
            .binary
            .iter()
            .map(|((p, l, r), &logp)| BinaryRule {
                parent: id(p),
                left: id(l),
                right: id(r),
                logp,
            })
            .collect();
        binary.sort_by_key(|r| (r.parent, r.left, r.right));
        let mut unary: Vec<UnaryRule> = self
            .unary
            .iter()
            .map(|((p, c), &logp)| UnaryRule {
                parent: id(p),
                child: id(c),
                logp,
            })
            .collect();
        unary.sort_by_key(|r| (r.parent, r.child));

        let mut mass: FxHashMap<SymId, Vec<f64>> = FxHashMap::default();
        for r in &binary {
            parents.insert(r.parent);
            mass.entry(r.parent).or_default().push(r.logp);
        }
        for r in &unary {
            parents.insert(r.parent);
            mass.entry(r.parent).or_default().push(r.logp);
        }
        for (&parent, logps) in &mass {
            let sym = symbols.symbol(parent);
            if sym.is_terminal() {
                return Err(Error::Model(format!("terminal `{sym}` heads a rule")));
            }
            if logps.iter().any(|&lp| lp.is_nan() || lp > 1e-12 || lp == LOG_ZERO) {
                return Err(Error::Model(format!(
                    "rule probabilities for `{sym}` must lie in (0, 1]"
                )));
            }
            let total = log2_sum(logps.iter().copied()).exp2();
            if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
                return Err(Error::Model(format!(
                    "rule probabilities for `{sym}` sum to {total}, not 1"
                )));
            }
        }

        let n = symbols.len();
        let mut starts: Vec<(SymId, f64)> =
            self.starts.iter().map(|(s, &lp)| (id(s), lp)).collect();
        starts.sort_by_key(|s| s.0);
        if starts.is_empty() {
            return Err(Error::Model("grammar has no start symbol".into()));
        }
        let start_total = log2_sum(starts.iter().map(|s| s.1)).exp2();
        if (start_total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Model(format!(
                "start distribution sums to {start_total}, not 1"
            )));
        }
        let mut start_logp = vec![LOG_ZERO; n];
        for &(s, lp) in &starts {
            if symbols.symbol(s).is_terminal() {
                return Err(Error::Model("start symbol must be a nonterminal".into()));
            }
            start_logp[s.index()] = lp;
        }

        // Missing priors: uniform over nonterminals, 1 for terminals.
        let nonterminals: Vec<SymId> = symbols
            .iter()
            .filter(|(_, s)| !s.is_terminal())
            .map(|(i, _)| i)
            .collect();
        let mut priors = vec![LOG_ZERO; n];
        if self.priors.keys().any(|s| !s.is_terminal()) {
            for (s, &lp) in &self.priors {
                priors[id(s).index()] = lp;
            }
        } else {
            let uniform = -(nonterminals.len().max(1) as f64).log2();
            for &nt in &nonterminals {
                priors[nt.index()] = uniform;
            }
            for (s, &lp) in &self.priors {
                priors[id(s).index()] = lp;
            }
        }
        for (i, s) in symbols.iter() {
            if s.is_terminal() && priors[i.index()] == LOG_ZERO {
                priors[i.index()] = LOG_ONE;
            }
        }

        let mut by_left: Vec<FxHashMap<SymId, Vec<u32>>> = vec![FxHashMap::default(); n];
        for (rid, r) in binary.iter().enumerate() {
            by_left[r.left.index()]
                .entry(r.right)
                .or_default()
                .push(rid as u32);
        }
        let mut unary_by_child = vec![Vec::new(); n];
        for (rid, r) in unary.iter().enumerate() {
            unary_by_child[r.child.index()].push(rid as u32);
        }
        let terminals = symbols
            .iter()
            .filter(|(_, s)| s.is_terminal())
            .map(|(i, s)| (s.base.clone(), i))
            .collect();

        Ok(Grammar {
            symbols,
            binary,
            unary,
            priors,
            starts,
            start_logp,
            by_left,
            unary_by_child,
            terminals,
        })
    }
}

impl Grammar {
    pub fn symbols(&self) -> &SymbolTable {
        &self.symbols
    }

    pub fn symbol(&self, id: SymId) -> &Symbol {
        self.symbols.symbol(id)
    }

    pub fn num_symbols(&self) -> usize {
        self.symbols.len()
    }

    pub fn binary_rules(&self) -> &[BinaryRule] {
        &self.binary
    }

    pub fn unary_rules(&self) -> &[UnaryRule] {
        &self.unary
    }

    pub fn binary_rule(&self, id: u32) -> &BinaryRule {
        &self.binary[id as usize]
    }

    pub fn unary_rule(&self, id: u32) -> &UnaryRule {
        &self.unary[id as usize]
    }

    /// Binary rules indexed by right child, for a given left child.
    #[inline]
    pub fn rules_with_left(&self, left: SymId) -> &FxHashMap<SymId, Vec<u32>> {
        &self.by_left[left.index()]
    }

    #[inline]
    pub fn unary_with_child(&self, child: SymId) -> &[u32] {
        &self.unary_by_child[child.index()]
    }

    #[inline]
    pub fn prior(&self, sym: SymId) -> f64 {
        self.priors[sym.index()]
    }

    pub fn starts(&self) -> &[(SymId, f64)] {
        &self.starts
    }

    #[inline]
    pub fn start_logp(&self, sym: SymId) -> f64 {
        self.start_logp[sym.index()]
    }

    pub fn terminal(&self, name: &str) -> Option<SymId> {
        self.terminals.get(name).copied()
    }

    pub fn terminal_names(&self) -> FxHashSet<&str> {
        self.terminals.keys().map(String::as_str).collect()
    }

    pub fn lookup(&self, symbol: &Symbol) -> Option<SymId> {
        self.symbols.get(symbol)
    }

    pub fn nonterminals(&self) -> impl Iterator<Item = SymId> + '_ {
        self.symbols
            .iter()
            .filter(|(_, s)| !s.is_terminal())
            .map(|(i, _)| i)
    }

    /// Map a sentence of terminal names to ids.
    pub fn encode(&self, sentence: &[String]) -> Result<Vec<SymId>> {
        sentence
            .iter()
            .map(|w| self.terminal(w).ok_or_else(|| Error::UnknownTerminal(w.clone())))
            .collect()
    }

    /// For every symbol, the set of terminals that can begin a string it derives.
    pub fn first_terminals(&self) -> Vec<FxHashSet<SymId>> {
        let n = self.symbols.len();
        let mut first: Vec<FxHashSet<SymId>> = vec![FxHashSet::default(); n];
        for (i, s) in self.symbols.iter() {
            if s.is_terminal() {
                first[i.index()].insert(i);
            }
        }
        loop {
            let mut changed = false;
            for (parent, child) in self
                .binary
                .iter()
                .map(|r| (r.parent, r.left))
                .chain(self.unary.iter().map(|r| (r.parent, r.child)))
            {
                if parent == child {
                    continue;
                }
                let add: Vec<SymId> = first[child.index()]
                    .iter()
                    .filter(|t| !first[parent.index()].contains(t))
                    .copied()
                    .collect();
                if !add.is_empty() {
                    changed = true;
                    first[parent.index()].extend(add);
                }
            }
            if !changed {
                return first;
            }
        }
    }

    /// Sum of rule probabilities per parent (linear domain), for validation.
    pub fn parent_mass(&self) -> BTreeMap<SymId, f64> {
        let mut mass: BTreeMap<SymId, f64> = BTreeMap::new();
        for r in &self.binary {
            *mass.entry(r.parent).or_default() += r.logp.exp2();
        }
        for r in &self.unary {
            *mass.entry(r.parent).or_default() += r.logp.exp2();
        }
        mass
    }

    /// Does any unary rule's child head another unary rule? Such chains
    /// cannot be derived by the parser, which allows one unary per span.
    pub fn has_unary_chain(&self) -> bool {
        let unary_parents: FxHashSet<SymId> = self.unary.iter().map(|r| r.parent).collect();
        self.unary.iter().any(|r| unary_parents.contains(&r.child))
    }
}
