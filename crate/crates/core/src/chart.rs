//! Bottom-up CKY over a binarized grammar.
//!
//! Every span owns two layers: the binary layer holds nodes built from two
//! adjacent spans (at length one it holds the word itself), and the unary
//! layer holds one unary application over binary-layer nodes of the same
//! span. Nodes within a layer are kept sorted by symbol id and every sum is
//! accumulated in a fixed canonical order, so two fillers that propose the
//! same set of rule applications produce bit-identical charts.

use std::time::{Duration, Instant};

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::grammar::{Grammar, SymId, Tree};
use crate::logprob::{log2_add, log2_sum, LOG_ZERO};
use crate::thresholding::{beam_prune, global_prune, ThresholdSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layer {
    Binary = 0,
    Unary = 1,
}

impl Layer {
    pub const BOTH: [Layer; 2] = [Layer::Binary, Layer::Unary];
}

/// A node in a known cell, addressed by layer and position in that layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChildRef {
    pub layer: Layer,
    pub index: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Derivation {
    Terminal,
    /// Child lives in the binary layer of the same span.
    Unary { rule: u32, child: u32 },
    /// `split` is the absolute position where the right child begins.
    Binary {
        rule: u32,
        split: u32,
        left: ChildRef,
        right: ChildRef,
    },
}

impl Derivation {
    /// Viterbi tie-break key: smaller split, then smaller rule id.
    fn tie_key(&self) -> (u32, u32, u8, u8) {
        match *self {
            Derivation::Terminal => (0, 0, 0, 0),
            Derivation::Unary { rule, .. } => (0, rule, 0, 0),
            Derivation::Binary {
                rule,
                split,
                left,
                right,
            } => (split, rule, left.layer as u8, right.layer as u8),
        }
    }
}

/// One production instance of a node.
#[derive(Clone, Copy, Debug)]
pub struct Instance {
    pub derivation: Derivation,
    /// Rule probability times the children's inside probabilities.
    pub inside: f64,
    /// Outside of the parent times `inside`; set by `inside_outside`.
    pub outside: f64,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub sym: SymId,
    pub inside: f64,
    pub outside: f64,
    pub viterbi: f64,
    pub back: Derivation,
    pub active: bool,
    pub instances: Vec<Instance>,
}

impl Node {
    pub fn is_terminal(&self) -> bool {
        matches!(self.back, Derivation::Terminal)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Cell {
    layers: [Vec<Node>; 2],
}

impl Cell {
    #[inline]
    pub fn layer(&self, layer: Layer) -> &[Node] {
        &self.layers[layer as usize]
    }

    pub fn layer_mut(&mut self, layer: Layer) -> &mut [Node] {
        &mut self.layers[layer as usize]
    }

    pub fn find(&self, layer: Layer, sym: SymId) -> Option<usize> {
        self.layer(layer).binary_search_by_key(&sym, |n| n.sym).ok()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (Layer, usize, &Node)> {
        Layer::BOTH
            .into_iter()
            .flat_map(move |l| self.layer(l).iter().enumerate().map(move |(i, n)| (l, i, n)))
    }

    pub fn nodes_mut(&mut self) -> impl Iterator<Item = &mut Node> {
        self.layers.iter_mut().flatten()
    }

    pub fn len(&self) -> usize {
        self.layers[0].len() + self.layers[1].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ParseStats {
    /// Rule applications with non-zero probability that were considered.
    pub productions: u64,
    pub retries: u32,
    pub elapsed: Duration,
}

impl ParseStats {
    pub fn absorb(&mut self, other: &ParseStats) {
        self.productions += other.productions;
        self.retries += other.retries;
        self.elapsed += other.elapsed;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ParseOptions {
    pub thresholds: ThresholdSet,
    /// Weight beam scores by the symbol prior.
    pub use_prior: bool,
    /// Keep production instances (needed for outside probabilities).
    pub track_instances: bool,
}

impl ParseOptions {
    pub fn new(thresholds: ThresholdSet) -> Self {
        ParseOptions {
            thresholds,
            use_prior: true,
            track_instances: false,
        }
    }
}

/// Accumulates the rule applications proposed for one layer of one cell.
#[derive(Debug)]
pub struct LayerBuilder {
    slots: FxHashMap<SymId, usize>,
    nodes: Vec<(Node, (u32, u32, u8, u8))>,
    track: bool,
    examined: u64,
}

impl LayerBuilder {
    fn new(track: bool) -> Self {
        LayerBuilder {
            slots: FxHashMap::default(),
            nodes: Vec::new(),
            track,
            examined: 0,
        }
    }

    /// Record one rule application. Callers must present applications in
    /// canonical order: for binary layers by (split, left layer, left
    /// symbol, right layer, right symbol, rule), for unary layers by (child
    /// symbol, rule).
    #[inline]
    pub fn add(&mut self, parent: SymId, inside: f64, viterbi: f64, derivation: Derivation) {
        self.examined += 1;
        let key = derivation.tie_key();
        let instance = Instance {
            derivation,
            inside,
            outside: LOG_ZERO,
        };
        match self.slots.get(&parent) {
            Some(&slot) => {
                let (node, best_key) = &mut self.nodes[slot];
                node.inside = log2_add(node.inside, inside);
                if viterbi > node.viterbi || (viterbi == node.viterbi && key < *best_key) {
                    node.viterbi = viterbi;
                    node.back = derivation;
                    *best_key = key;
                }
                if self.track {
                    node.instances.push(instance);
                }
            }
            None => {
                self.slots.insert(parent, self.nodes.len());
                let instances = if self.track { vec![instance] } else { Vec::new() };
                self.nodes.push((
                    Node {
                        sym: parent,
                        inside,
                        outside: LOG_ZERO,
                        viterbi,
                        back: derivation,
                        active: true,
                        instances,
                    },
                    key,
                ));
            }
        }
    }

    /// Hand over the finished layer sorted by symbol and reset for the next
    /// cell, keeping allocations.
    fn finish(&mut self) -> (Vec<Node>, u64) {
        let mut nodes: Vec<Node> = Vec::with_capacity(self.nodes.len());
        nodes.extend(
            self.nodes
                .drain(..)
                .map(|(n, _)| n)
                .filter(|n| n.inside > LOG_ZERO),
        );
        nodes.sort_unstable_by_key(|n| n.sym);
        self.slots.clear();
        let examined = std::mem::take(&mut self.examined);
        (nodes, examined)
    }
}

/// Proposes the rule applications for each layer of a cell.
pub trait CellFiller {
    fn fill_binary(&self, chart: &Chart<'_>, start: usize, len: usize, out: &mut LayerBuilder);
    fn fill_unary(&self, chart: &Chart<'_>, start: usize, len: usize, out: &mut LayerBuilder);
}

/// Every rule over every pair of active child nodes: the inner loop that
/// walks left-cell symbols, then right-cell symbols, then matching rules.
#[derive(Clone, Copy, Debug, Default)]
pub struct Exhaustive;

impl CellFiller for Exhaustive {
    fn fill_binary(&self, chart: &Chart<'_>, start: usize, len: usize, out: &mut LayerBuilder) {
        let g = chart.grammar;
        for split in start + 1..start + len {
            let lc = chart.cell(start, split - start);
            let rc = chart.cell(split, start + len - split);
            for ll in Layer::BOTH {
                for (li, ln) in lc.layer(ll).iter().enumerate() {
                    if !ln.active {
                        continue;
                    }
                    let by_right = g.rules_with_left(ln.sym);
                    if by_right.is_empty() {
                        continue;
                    }
                    for rl in Layer::BOTH {
                        for (ri, rn) in rc.layer(rl).iter().enumerate() {
                            if !rn.active {
                                continue;
                            }
                            let Some(rules) = by_right.get(&rn.sym) else {
                                continue;
                            };
                            for &rid in rules {
                                let r = g.binary_rule(rid);
                                out.add(
                                    r.parent,
                                    r.logp + ln.inside + rn.inside,
                                    r.logp + ln.viterbi + rn.viterbi,
                                    Derivation::Binary {
                                        rule: rid,
                                        split: split as u32,
                                        left: ChildRef {
                                            layer: ll,
                                            index: li as u32,
                                        },
                                        right: ChildRef {
                                            layer: rl,
                                            index: ri as u32,
                                        },
                                    },
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    fn fill_unary(&self, chart: &Chart<'_>, start: usize, len: usize, out: &mut LayerBuilder) {
        let g = chart.grammar;
        for (ci, cn) in chart.cell(start, len).layer(Layer::Binary).iter().enumerate() {
            if !cn.active {
                continue;
            }
            for &rid in g.unary_with_child(cn.sym) {
                let r = g.unary_rule(rid);
                out.add(
                    r.parent,
                    r.logp + cn.inside,
                    r.logp + cn.viterbi,
                    Derivation::Unary {
                        rule: rid,
                        child: ci as u32,
                    },
                );
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Chart<'g> {
    grammar: &'g Grammar,
    words: Vec<SymId>,
    cells: Vec<Cell>,
    pub stats: ParseStats,
}

impl<'g> Chart<'g> {
    pub fn grammar(&self) -> &'g Grammar {
        self.grammar
    }

    pub fn words(&self) -> &[SymId] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    #[inline]
    fn index(&self, start: usize, len: usize) -> usize {
        debug_assert!(len >= 1 && start + len <= self.words.len());
        start * self.words.len() + len - 1
    }

    #[inline]
    pub fn cell(&self, start: usize, len: usize) -> &Cell {
        &self.cells[self.index(start, len)]
    }

    pub fn cell_mut(&mut self, start: usize, len: usize) -> &mut Cell {
        let i = self.index(start, len);
        &mut self.cells[i]
    }

    pub fn node(&self, start: usize, len: usize, at: ChildRef) -> &Node {
        &self.cell(start, len).layer(at.layer)[at.index as usize]
    }

    /// Spans as `(start, len)`, shortest first.
    pub fn spans(&self) -> impl Iterator<Item = (usize, usize)> {
        let n = self.words.len();
        (1..=n).flat_map(move |len| (0..=n - len).map(move |start| (start, len)))
    }

    /// Root nodes with their start-symbol log probabilities.
    fn roots(&self) -> impl Iterator<Item = (&Node, f64)> {
        let root = self.cell(0, self.words.len());
        self.grammar.starts().iter().flat_map(move |&(s, lp)| {
            Layer::BOTH
                .into_iter()
                .filter_map(move |l| root.find(l, s).map(|i| (&root.layer(l)[i], lp)))
        })
    }

    pub fn has_parse(&self) -> bool {
        self.roots().next().is_some()
    }

    /// Total inside log probability of the sentence; negative infinity on
    /// failure.
    pub fn total_inside(&self) -> f64 {
        log2_sum(self.roots().map(|(n, lp)| lp + n.inside))
    }

    /// Negative log2 of the total inside probability.
    pub fn entropy(&self) -> f64 {
        -self.total_inside()
    }

    pub fn viterbi_logprob(&self) -> f64 {
        self.best_root().map_or(LOG_ZERO, |(_, _, s)| s)
    }

    fn best_root(&self) -> Option<(Layer, usize, f64)> {
        let root = self.cell(0, self.words.len());
        let mut best: Option<(Layer, usize, f64)> = None;
        for &(s, lp) in self.grammar.starts() {
            for l in Layer::BOTH {
                if let Some(i) = root.find(l, s) {
                    let score = lp + root.layer(l)[i].viterbi;
                    if best.is_none_or(|b| score > b.2) {
                        best = Some((l, i, score));
                    }
                }
            }
        }
        best
    }

    /// The highest-probability derivation. Leaves carry `tokens` when given.
    pub fn viterbi_tree(&self, tokens: Option<&[String]>) -> Result<Tree> {
        let (layer, index, _) = self.best_root().ok_or(Error::ParseFailure)?;
        let at = ChildRef {
            layer,
            index: index as u32,
        };
        Ok(self.build_tree(0, self.words.len(), at, tokens))
    }

    fn build_tree(&self, start: usize, len: usize, at: ChildRef, tokens: Option<&[String]>) -> Tree {
        let node = self.node(start, len, at);
        let label = self.grammar.symbol(node.sym).clone();
        match node.back {
            Derivation::Terminal => {
                let mut leaf = Tree::node(label, Vec::new());
                leaf.token = tokens.map(|t| t[start].clone());
                leaf
            }
            Derivation::Unary { child, .. } => {
                let c = ChildRef {
                    layer: Layer::Binary,
                    index: child,
                };
                Tree::node(label, vec![self.build_tree(start, len, c, tokens)])
            }
            Derivation::Binary {
                split, left, right, ..
            } => {
                let split = split as usize;
                Tree::node(
                    label,
                    vec![
                        self.build_tree(start, split - start, left, tokens),
                        self.build_tree(split, start + len - split, right, tokens),
                    ],
                )
            }
        }
    }

    /// Fill in outside probabilities for every node and production instance
    /// reachable from the root. Requires instance tracking.
    pub fn inside_outside(&mut self) -> Result<()> {
        if !self.has_parse() {
            return Err(Error::ParseFailure);
        }
        let n = self.words.len();
        for cell in &mut self.cells {
            for node in cell.nodes_mut() {
                node.outside = LOG_ZERO;
                for inst in &mut node.instances {
                    inst.outside = LOG_ZERO;
                }
            }
        }
        let starts: Vec<(SymId, f64)> = self.grammar.starts().to_vec();
        let root = self.cell_mut(0, n);
        for (s, lp) in starts {
            for l in Layer::BOTH {
                if let Some(i) = root.find(l, s) {
                    root.layer_mut(l)[i].outside = lp;
                }
            }
        }

        let g = self.grammar;
        let mut updates: Vec<(usize, Layer, u32, f64)> = Vec::new();
        for len in (1..=n).rev() {
            for start in 0..=n - len {
                for layer in [Layer::Unary, Layer::Binary] {
                    let ci = self.index(start, len);
                    for ni in 0..self.cells[ci].layer(layer).len() {
                        updates.clear();
                        let node = &mut self.cells[ci].layer_mut(layer)[ni];
                        if node.outside == LOG_ZERO {
                            continue;
                        }
                        if !node.is_terminal() && node.instances.is_empty() {
                            return Err(Error::Invalid(
                                "outside probabilities need a chart built with instance tracking"
                                    .into(),
                            ));
                        }
                        let alpha = node.outside;
                        let mut instances = std::mem::take(&mut node.instances);
                        for inst in &mut instances {
                            inst.outside = alpha + inst.inside;
                            match inst.derivation {
                                Derivation::Terminal => {}
                                Derivation::Unary { rule, child } => {
                                    let lp = g.unary_rule(rule).logp;
                                    updates.push((ci, Layer::Binary, child, alpha + lp));
                                }
                                Derivation::Binary {
                                    rule,
                                    split,
                                    left,
                                    right,
                                } => {
                                    let lp = g.binary_rule(rule).logp;
                                    let split = split as usize;
                                    let li = self.index(start, split - start);
                                    let ri = self.index(split, start + len - split);
                                    let lin = self.cells[li].layer(left.layer)[left.index as usize].inside;
                                    let rin =
                                        self.cells[ri].layer(right.layer)[right.index as usize].inside;
                                    updates.push((li, left.layer, left.index, alpha + lp + rin));
                                    updates.push((ri, right.layer, right.index, alpha + lp + lin));
                                }
                            }
                        }
                        self.cells[ci].layer_mut(layer)[ni].instances = instances;
                        for &(cell, l, idx, v) in &updates {
                            let child = &mut self.cells[cell].layer_mut(l)[idx as usize];
                            child.outside = log2_add(child.outside, v);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Build a chart with a given filler, applying the pruning schedule in
/// `opts`. The chart is returned even when it has no parse.
pub fn build_chart<'g, F: CellFiller + ?Sized>(
    grammar: &'g Grammar,
    words: &[SymId],
    filler: &F,
    opts: &ParseOptions,
) -> Chart<'g> {
    let t0 = Instant::now();
    let n = words.len();
    let mut chart = Chart {
        grammar,
        words: words.to_vec(),
        cells: vec![Cell::default(); n * n],
        stats: ParseStats::default(),
    };
    let beam = opts.thresholds.beam_log();
    let global = opts.thresholds.global_log();
    let mut b = LayerBuilder::new(opts.track_instances);
    let mut u = LayerBuilder::new(opts.track_instances);
    for len in 1..=n {
        for (start, &w) in words.iter().enumerate().take(n - len + 1) {
            let binary = if len == 1 {
                vec![Node {
                    sym: w,
                    inside: 0.0,
                    outside: LOG_ZERO,
                    viterbi: 0.0,
                    back: Derivation::Terminal,
                    active: true,
                    instances: Vec::new(),
                }]
            } else {
                filler.fill_binary(&chart, start, len, &mut b);
                let (nodes, examined) = b.finish();
                chart.stats.productions += examined;
                nodes
            };
            chart.cell_mut(start, len).layers[Layer::Binary as usize] = binary;

            filler.fill_unary(&chart, start, len, &mut u);
            let (unary, examined) = u.finish();
            chart.stats.productions += examined;
            let use_prior = opts.use_prior;
            let cell = chart.cell_mut(start, len);
            cell.layers[Layer::Unary as usize] = unary;
            if len < n && beam > LOG_ZERO {
                beam_prune(cell, grammar, beam, use_prior);
            }
        }
        if len < n && global > LOG_ZERO {
            global_prune(&mut chart, len, global);
        }
    }
    chart.stats.elapsed = t0.elapsed();
    chart
}

/// Single-pass parse with every rule considered; fails when the root cell
/// holds no start symbol.
pub fn parse_inside<'g>(grammar: &'g Grammar, words: &[SymId], opts: &ParseOptions) -> Result<Chart<'g>> {
    if words.is_empty() {
        return Err(Error::Invalid("cannot parse an empty sentence".into()));
    }
    let chart = build_chart(grammar, words, &Exhaustive, opts);
    if chart.has_parse() {
        Ok(chart)
    } else {
        Err(Error::ParseFailure)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::GrammarBuilder;

    fn words(g: &Grammar, s: &str) -> Vec<SymId> {
        let ws: Vec<String> = s.split_whitespace().map(String::from).collect();
        g.encode(&ws).unwrap()
    }

    fn exhaustive() -> ParseOptions {
        ParseOptions {
            track_instances: true,
            ..ParseOptions::new(ThresholdSet::default())
        }
    }

    #[test]
    fn unambiguous_toy() {
        let g = GrammarBuilder::from_rules("S", &["S -> A B 1", "A -> a 1", "B -> b 1"]).unwrap();
        let chart = parse_inside(&g, &words(&g, "a b"), &exhaustive()).unwrap();
        assert_eq!(chart.total_inside(), 0.0);
        assert_eq!(chart.stats.productions, 3);
        assert_eq!(chart.viterbi_tree(None).unwrap().to_string(), "(S (A a) (B b))");
    }

    #[test]
    fn ambiguous_inside_and_tie_break() {
        let g = GrammarBuilder::from_rules("S", &["S -> S S 0.4", "S -> x 0.6"]).unwrap();
        let chart = parse_inside(&g, &words(&g, "x x x"), &exhaustive()).unwrap();
        assert!((chart.total_inside().exp2() - 0.06912).abs() < 1e-15);
        assert!((chart.entropy() - 3.854_752_972_273_344).abs() < 1e-9);
        let tree = chart.viterbi_tree(None).unwrap().to_string();
        assert_eq!(tree, "(S (S x) (S (S x) (S x)))");
        assert!(chart.viterbi_logprob() <= chart.total_inside());
    }

    #[test]
    fn outside_matches_hand_values() {
        let g = GrammarBuilder::from_rules("S", &["S -> S S 0.4", "S -> x 0.6"]).unwrap();
        let mut chart = parse_inside(&g, &words(&g, "x x"), &exhaustive()).unwrap();
        chart.inside_outside().unwrap();
        let s = g.lookup(&crate::grammar::Symbol::nonterminal("S")).unwrap();
        let cell = chart.cell(0, 1);
        let node = &cell.layer(Layer::Unary)[cell.find(Layer::Unary, s).unwrap()];
        assert!((node.inside.exp2() - 0.6).abs() < 1e-15);
        assert!((node.outside.exp2() - 0.24).abs() < 1e-15);
        let root = &chart.cell(0, 2).layer(Layer::Binary)[0];
        assert_eq!(root.outside, 0.0);
        assert!((root.inside.exp2() - 0.144).abs() < 1e-15);
        let term = &chart.cell(1, 1).layer(Layer::Binary)[0];
        assert!((term.outside - root.inside).abs() < 1e-12);
    }

    #[test]
    fn unknown_terminal_and_no_parse() {
        let g = GrammarBuilder::from_rules("S", &["S -> S S 0.4", "S -> x 0.6", "T -> y 1"]).unwrap();
        assert!(matches!(
            g.encode(&["z".to_string()]),
            Err(Error::UnknownTerminal(_))
        ));
        assert!(matches!(
            parse_inside(&g, &words(&g, "y"), &exhaustive()),
            Err(Error::ParseFailure)
        ));
    }

    #[test]
    fn instances_sum_to_node_inside() {
        let g = GrammarBuilder::from_rules(
            "S",
            &["S -> S S 0.3", "S -> A A 0.2", "S -> x 0.5", "A -> x 0.5", "A -> S A 0.5"],
        )
        .unwrap();
        let chart = parse_inside(&g, &words(&g, "x x x x"), &exhaustive()).unwrap();
        for (start, len) in chart.spans() {
            for (_, _, node) in chart.cell(start, len).nodes() {
                if node.is_terminal() {
                    continue;
                }
                let sum: f64 = node.instances.iter().map(|i| i.inside.exp2()).sum();
                assert!((sum / node.inside.exp2() - 1.0).abs() < 1e-12);
            }
        }
    }
}
