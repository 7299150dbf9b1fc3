//! Multiple-pass parsing: a cheap grammar's inside-outside scores decide
//! which nodes and production instances a finer grammar may build.

use std::cell::RefCell;
use std::sync::Arc;

use rustc_hash::FxHashMap;

use crate::chart::{
    build_chart, CellFiller, Chart, ChildRef, Derivation, Exhaustive, Layer, LayerBuilder,
    ParseOptions, ParseStats,
};
use crate::error::{Error, Result};
use crate::grammar::{DescendantsMap, Grammar, SymId};
use crate::thresholding::{run_with_retry, RetryPolicy, ThresholdSet};

/// One pass of a pipeline. Every pass after the first carries the
/// descendants map from the previous pass's grammar, and its `mp_node` and
/// `mp_prod` thresholds gate what it may build.
#[derive(Clone, Debug)]
pub struct PassSpec {
    pub grammar: Arc<Grammar>,
    pub thresholds: ThresholdSet,
    pub descendants: Option<Arc<DescendantsMap>>,
}

impl PassSpec {
    pub fn single(grammar: Arc<Grammar>, thresholds: ThresholdSet) -> Self {
        PassSpec {
            grammar,
            thresholds,
            descendants: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SurvivingBinary {
    pub parent: SymId,
    pub split: u32,
    pub left: (Layer, SymId),
    pub right: (Layer, SymId),
}

#[derive(Clone, Debug, Default)]
struct CellSurvivors {
    nodes: Vec<(Layer, SymId)>,
    binary: Vec<SurvivingBinary>,
    /// `(parent, child)`; parent in the unary layer, child in the binary layer.
    unary: Vec<(SymId, SymId)>,
}

/// First-pass nodes and production instances whose posterior probability
/// clears the gates, keyed by symbols and span.
#[derive(Clone, Debug)]
pub struct SurvivorTable {
    n: usize,
    cells: Vec<CellSurvivors>,
}

impl SurvivorTable {
    /// `chart` must have outside probabilities. Gates are log2 ratios.
    pub fn from_chart(chart: &Chart<'_>, node_log_t: f64, prod_log_t: f64) -> Self {
        let n = chart.len();
        let root = chart.total_inside();
        let mut cells = vec![CellSurvivors::default(); n * n];
        let survives = |start: usize, len: usize, layer: Layer, at: u32| {
            let node = &chart.cell(start, len).layer(layer)[at as usize];
            node.active && node.outside + node.inside - root >= node_log_t
        };
        for (start, len) in chart.spans() {
            let cell = chart.cell(start, len);
            let out = &mut cells[start * n + len - 1];
            for (layer, i, node) in cell.nodes() {
                if !survives(start, len, layer, i as u32) {
                    continue;
                }
                out.nodes.push((layer, node.sym));
                for inst in &node.instances {
                    if inst.outside - root < prod_log_t {
                        continue;
                    }
                    match inst.derivation {
                        Derivation::Terminal => {}
                        Derivation::Unary { child, .. } => {
                            if survives(start, len, Layer::Binary, child) {
                                let c = &cell.layer(Layer::Binary)[child as usize];
                                out.unary.push((node.sym, c.sym));
                            }
                        }
                        Derivation::Binary {
                            split, left, right, ..
                        } => {
                            let s = split as usize;
                            if survives(start, s - start, left.layer, left.index)
                                && survives(s, start + len - s, right.layer, right.index)
                            {
                                let l = chart.node(start, s - start, left);
                                let r = chart.node(s, start + len - s, right);
                                out.binary.push(SurvivingBinary {
                                    parent: node.sym,
                                    split,
                                    left: (left.layer, l.sym),
                                    right: (right.layer, r.sym),
                                });
                            }
                        }
                    }
                }
            }
            out.binary.sort_unstable();
            out.unary.sort_unstable();
        }
        SurvivorTable { n, cells }
    }

    fn cell(&self, start: usize, len: usize) -> &CellSurvivors {
        &self.cells[start * self.n + len - 1]
    }

    pub fn nodes(&self, start: usize, len: usize) -> &[(Layer, SymId)] {
        &self.cell(start, len).nodes
    }

    pub fn binary(&self, start: usize, len: usize) -> &[SurvivingBinary] {
        &self.cell(start, len).binary
    }

    pub fn unary(&self, start: usize, len: usize) -> &[(SymId, SymId)] {
        &self.cell(start, len).unary
    }

    pub fn num_nodes(&self) -> usize {
        self.cells.iter().map(|c| c.nodes.len()).sum()
    }

    pub fn num_productions(&self) -> usize {
        self.cells.iter().map(|c| c.binary.len() + c.unary.len()).sum()
    }
}

type AncestorIndex = FxHashMap<SymId, Vec<u32>>;

/// Proposes second-pass rule applications only under surviving first-pass
/// production instances.
struct GatedFiller<'a> {
    survivors: &'a SurvivorTable,
    map: &'a DescendantsMap,
    /// Per cell and layer: second-pass node indices grouped by ancestor.
    cache: RefCell<FxHashMap<(usize, usize, Layer), AncestorIndex>>,
}

impl GatedFiller<'_> {
    fn ancestor_of(&self, chart: &Chart<'_>, start: usize, sym: SymId) -> Option<SymId> {
        if chart.grammar().symbol(sym).is_terminal() {
            self.map.terminal_ancestor(sym)
        } else {
            self.map.ancestor(sym, chart.words()[start])
        }
    }

    fn with_index<R>(
        &self,
        chart: &Chart<'_>,
        start: usize,
        len: usize,
        layer: Layer,
        f: impl FnOnce(&AncestorIndex) -> R,
    ) -> R {
        let mut cache = self.cache.borrow_mut();
        let index = cache.entry((start, len, layer)).or_insert_with(|| {
            let mut index = AncestorIndex::default();
            for (i, node) in chart.cell(start, len).layer(layer).iter().enumerate() {
                if let Some(a) = self.ancestor_of(chart, start, node.sym) {
                    index.entry(a).or_default().push(i as u32);
                }
            }
            index
        });
        f(index)
    }
}

const NONE: &[u32] = &[];

/// Canonical order of binary applications: split, left layer and symbol,
/// right layer and symbol, rule.
type BinaryKey = (u32, Layer, SymId, Layer, SymId, u32);

impl CellFiller for GatedFiller<'_> {
    fn fill_binary(&self, chart: &Chart<'_>, start: usize, len: usize, out: &mut LayerBuilder) {
        let g = chart.grammar();
        let word = chart.words()[start];
        let mut cands: Vec<(BinaryKey, ChildRef, ChildRef)> = Vec::new();
        for prod in self.survivors.binary(start, len) {
            let s = prod.split as usize;
            let lefts: Vec<u32> = self.with_index(chart, start, s - start, prod.left.0, |ix| {
                ix.get(&prod.left.1).map_or(NONE, Vec::as_slice).to_vec()
            });
            let rights: Vec<u32> = self.with_index(chart, s, start + len - s, prod.right.0, |ix| {
                ix.get(&prod.right.1).map_or(NONE, Vec::as_slice).to_vec()
            });
            let lc = chart.cell(start, s - start).layer(prod.left.0);
            let rc = chart.cell(s, start + len - s).layer(prod.right.0);
            for &li in &lefts {
                let ln = &lc[li as usize];
                if !ln.active {
                    continue;
                }
                let by_right = g.rules_with_left(ln.sym);
                for &ri in &rights {
                    let rn = &rc[ri as usize];
                    if !rn.active {
                        continue;
                    }
                    let Some(rules) = by_right.get(&rn.sym) else {
                        continue;
                    };
                    for &rid in rules {
                        let parent = g.binary_rule(rid).parent;
                        if self.map.ancestor(parent, word) == Some(prod.parent) {
                            cands.push((
                                (prod.split, prod.left.0, ln.sym, prod.right.0, rn.sym, rid),
                                ChildRef {
                                    layer: prod.left.0,
                                    index: li,
                                },
                                ChildRef {
                                    layer: prod.right.0,
                                    index: ri,
                                },
                            ));
                        }
                    }
                }
            }
        }
        cands.sort_unstable_by_key(|c| c.0);
        for ((split, _, _, _, _, rid), left, right) in cands {
            let s = split as usize;
            let ln = chart.node(start, s - start, left);
            let rn = chart.node(s, start + len - s, right);
            let r = g.binary_rule(rid);
            out.add(
                r.parent,
                r.logp + ln.inside + rn.inside,
                r.logp + ln.viterbi + rn.viterbi,
                Derivation::Binary {
                    rule: rid,
                    split,
                    left,
                    right,
                },
            );
        }
    }

    fn fill_unary(&self, chart: &Chart<'_>, start: usize, len: usize, out: &mut LayerBuilder) {
        let g = chart.grammar();
        let word = chart.words()[start];
        let cell = chart.cell(start, len).layer(Layer::Binary);
        let mut cands: Vec<(SymId, u32, u32)> = Vec::new();
        for &(parent, child) in self.survivors.unary(start, len) {
            let children: Vec<u32> = self.with_index(chart, start, len, Layer::Binary, |ix| {
                ix.get(&child).map_or(NONE, Vec::as_slice).to_vec()
            });
            for ci in children {
                let cn = &cell[ci as usize];
                if !cn.active {
                    continue;
                }
                for &rid in g.unary_with_child(cn.sym) {
                    if self.map.ancestor(g.unary_rule(rid).parent, word) == Some(parent) {
                        cands.push((cn.sym, rid, ci));
                    }
                }
            }
        }
        cands.sort_unstable();
        for (_, rid, ci) in cands {
            let cn = &cell[ci as usize];
            let r = g.unary_rule(rid);
            out.add(
                r.parent,
                r.logp + cn.inside,
                r.logp + cn.viterbi,
                Derivation::Unary {
                    rule: rid,
                    child: ci,
                },
            );
        }
    }
}

/// Parse with the first grammar and compute outside probabilities.
pub fn first_pass<'g>(
    grammar: &'g Grammar,
    words: &[SymId],
    opts: &ParseOptions,
    policy: &RetryPolicy,
) -> Result<(Option<Chart<'g>>, ParseStats)> {
    let opts = ParseOptions {
        track_instances: true,
        ..*opts
    };
    let got = run_with_retry(policy, opts.thresholds, |ts| {
        let o = ParseOptions {
            thresholds: *ts,
            ..opts
        };
        let chart = build_chart(grammar, words, &Exhaustive, &o);
        let stats = chart.stats;
        Ok((chart.has_parse().then_some(chart), stats))
    })?;
    let mut chart = got.value;
    if let Some(c) = chart.as_mut() {
        c.inside_outside()?;
    }
    Ok((chart, got.stats))
}

/// Parse with a finer grammar restricted by `survivors` of the previous pass.
pub fn second_pass<'g>(
    grammar: &'g Grammar,
    words: &[SymId],
    survivors: &SurvivorTable,
    map: &DescendantsMap,
    opts: &ParseOptions,
) -> Chart<'g> {
    let filler = GatedFiller {
        survivors,
        map,
        cache: RefCell::new(FxHashMap::default()),
    };
    build_chart(grammar, words, &filler, opts)
}

#[derive(Debug)]
pub struct PassOutcome<'g> {
    /// The last pass's chart, or `None` if some pass failed with pruning
    /// still enabled (retry disabled).
    pub chart: Option<Chart<'g>>,
    /// Summed over passes and attempts; `retries` counts every retry.
    pub stats: ParseStats,
    pub per_pass: Vec<ParseStats>,
}

/// Run every pass over a sentence of terminal names.
pub fn run_passes<'g>(
    passes: &'g [PassSpec],
    tokens: &[String],
    policy: &RetryPolicy,
    use_prior: bool,
) -> Result<PassOutcome<'g>> {
    if passes.is_empty() {
        return Err(Error::Invalid("pipeline has no passes".into()));
    }
    if tokens.is_empty() {
        return Err(Error::Invalid("cannot parse an empty sentence".into()));
    }
    let mut stats = ParseStats::default();
    let mut per_pass = Vec::with_capacity(passes.len());
    let mut prev: Option<Chart<'g>> = None;
    let last = passes.len() - 1;
    for (k, pass) in passes.iter().enumerate() {
        let g: &'g Grammar = &pass.grammar;
        let words = g.encode(tokens)?;
        let opts = ParseOptions {
            thresholds: pass.thresholds,
            use_prior,
            track_instances: k < last,
        };
        let (chart, s) = match prev.take() {
            None => {
                if k < last {
                    first_pass(g, &words, &opts, policy)?
                } else {
                    let got = run_with_retry(policy, opts.thresholds, |ts| {
                        let o = ParseOptions {
                            thresholds: *ts,
                            ..opts
                        };
                        let chart = build_chart(g, &words, &Exhaustive, &o);
                        let stats = chart.stats;
                        Ok((chart.has_parse().then_some(chart), stats))
                    })?;
                    (got.value, got.stats)
                }
            }
            Some(prev_chart) => {
                let map = pass.descendants.as_deref().ok_or_else(|| {
                    Error::Model(format!("pass {} has no descendants map", k + 1))
                })?;
                let got = run_with_retry(policy, opts.thresholds, |ts| {
                    let survivors =
                        SurvivorTable::from_chart(&prev_chart, ts.mp_node_log(), ts.mp_prod_log());
                    let o = ParseOptions {
                        thresholds: *ts,
                        ..opts
                    };
                    let chart = second_pass(g, &words, &survivors, map, &o);
                    let stats = chart.stats;
                    Ok((chart.has_parse().then_some(chart), stats))
                })?;
                let mut chart = got.value;
                if k < last {
                    if let Some(c) = chart.as_mut() {
                        c.inside_outside()?;
                    }
                }
                (chart, got.stats)
            }
        };
        stats.absorb(&s);
        per_pass.push(s);
        match chart {
            Some(c) => prev = Some(c),
            None => {
                return Ok(PassOutcome {
                    chart: None,
                    stats,
                    per_pass,
                })
            }
        }
    }
    Ok(PassOutcome {
        chart: prev,
        stats,
        per_pass,
    })
}

/// A tunable parameter: which pass, which threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Param {
    pub pass: usize,
    pub name: &'static str,
}

/// Passes plus the settings shared by every sentence.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub passes: Vec<PassSpec>,
    pub retry: RetryPolicy,
    pub use_prior: bool,
}

impl Pipeline {
    pub fn single(grammar: Arc<Grammar>, thresholds: ThresholdSet) -> Self {
        Pipeline {
            passes: vec![PassSpec::single(grammar, thresholds)],
            retry: RetryPolicy::default(),
            use_prior: true,
        }
    }

    pub fn run(&self, tokens: &[String]) -> Result<PassOutcome<'_>> {
        run_passes(&self.passes, tokens, &self.retry, self.use_prior)
    }

    /// Every threshold that affects parsing: beam and global for each
    /// pass, and the gates of every gated pass.
    pub fn params(&self) -> Vec<Param> {
        let mut out = Vec::new();
        for pass in 0..self.passes.len() {
            out.push(Param { pass, name: "beam" });
            out.push(Param { pass, name: "global" });
            if pass > 0 {
                out.push(Param { pass, name: "mpnode" });
                out.push(Param { pass, name: "mpprod" });
            }
        }
        out
    }

    pub fn param_label(&self, p: Param) -> String {
        if self.passes.len() == 1 {
            p.name.to_string()
        } else {
            format!("pass{}.{}", p.pass + 1, p.name)
        }
    }

    /// Look a parameter up by label, as printed by `param_label`.
    pub fn param_by_label(&self, label: &str) -> Result<Param> {
        self.params()
            .into_iter()
            .find(|&p| self.param_label(p) == label)
            .ok_or_else(|| Error::Invalid(format!("unknown threshold `{label}`")))
    }

    pub fn get(&self, p: Param) -> f64 {
        self.passes[p.pass].thresholds.get(p.name).unwrap()
    }

    pub fn with(&self, params: &[Param], values: &[f64]) -> Result<Pipeline> {
        let mut out = self.clone();
        for (p, &v) in params.iter().zip(values) {
            out.passes[p.pass].thresholds.set(p.name, v)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{build_descendants, GrammarBuilder, Symbol};
    use crate::logprob::LOG_ZERO;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    // A fine grammar whose symbols begin with distinct words, and the coarse
    // grammar obtained by naming each symbol after its first word.
    fn pair() -> (Arc<Grammar>, Arc<Grammar>, Arc<DescendantsMap>) {
        let fine = GrammarBuilder::from_rules(
            "S",
            &[
                "S -> NP VP 1",
                "NP -> d n 0.6",
                "NP -> n 0.4",
                "VP -> v NP 0.7",
                "VP -> v 0.3",
            ],
        )
        .unwrap();
        let coarse = GrammarBuilder::from_rules(
            "D",
            &[
                "D -> D V 0.5",
                "D -> d n 0.5",
                "N -> N V 0.5",
                "N -> n 0.5",
                "V -> v D 0.4",
                "V -> v N 0.3",
                "V -> v 0.3",
            ],
        )
        .unwrap();
        // Both grammars need the same start distribution shape for the test
        // sentences; the coarse one has two possible roots.
        let mut b = GrammarBuilder::new();
        for r in coarse.binary_rules() {
            b.binary_log(
                coarse.symbol(r.parent).clone(),
                coarse.symbol(r.left).clone(),
                coarse.symbol(r.right).clone(),
                r.logp,
            );
        }
        for r in coarse.unary_rules() {
            b.unary_log(coarse.symbol(r.parent).clone(), coarse.symbol(r.child).clone(), r.logp);
        }
        b.start_log(Symbol::nonterminal("D"), -1.0);
        b.start_log(Symbol::nonterminal("N"), -1.0);
        let coarse = b.build().unwrap();
        let (map, unmapped) = build_descendants(&coarse, &fine).unwrap();
        assert_eq!(unmapped, 0);
        (Arc::new(coarse), Arc::new(fine), Arc::new(map))
    }

    fn two_pass(gates: ThresholdSet) -> Pipeline {
        let (coarse, fine, map) = pair();
        Pipeline {
            passes: vec![
                PassSpec::single(coarse, ThresholdSet::default()),
                PassSpec {
                    grammar: fine,
                    thresholds: gates,
                    descendants: Some(map),
                },
            ],
            retry: RetryPolicy::default(),
            use_prior: true,
        }
    }

    #[test]
    fn zero_gates_match_single_pass_exactly() {
        let (_, fine, _) = pair();
        let single = Pipeline::single(fine, ThresholdSet::default());
        let multi = two_pass(ThresholdSet::default());
        for s in ["d n v", "n v d n", "d n v n", "n v"] {
            let a = single.run(&toks(s)).unwrap();
            let b = multi.run(&toks(s)).unwrap();
            let (ca, cb) = (a.chart.unwrap(), b.chart.unwrap());
            assert_eq!(ca.total_inside().to_bits(), cb.total_inside().to_bits(), "{s}");
            assert_eq!(ca.viterbi_tree(None).unwrap(), cb.viterbi_tree(None).unwrap());
            assert_eq!(ca.stats.productions, b.per_pass[1].productions);
        }
    }

    #[test]
    fn full_survivor_table_at_zero() {
        let (coarse, _, _) = pair();
        let words = coarse.encode(&toks("d n v n")).unwrap();
        let (chart, _) =
            first_pass(&coarse, &words, &ParseOptions::default(), &RetryPolicy::default()).unwrap();
        let chart = chart.unwrap();
        let all = SurvivorTable::from_chart(&chart, LOG_ZERO, LOG_ZERO);
        let nodes: usize = chart.spans().map(|(s, l)| chart.cell(s, l).len()).sum();
        assert_eq!(all.num_nodes(), nodes);
        let tight = SurvivorTable::from_chart(&chart, 0.0, 0.0);
        assert!(tight.num_nodes() < all.num_nodes());
        // Words are in every parse.
        for i in 0..4 {
            assert!(tight.nodes(i, 1).iter().any(|&(l, _)| l == Layer::Binary));
        }
    }

    #[test]
    fn tight_gates_examine_fewer_productions() {
        let loose = two_pass(ThresholdSet::default());
        let tight = two_pass(ThresholdSet {
            mp_node: 0.5,
            mp_prod: 0.5,
            ..ThresholdSet::default()
        });
        let a = loose.run(&toks("d n v d n")).unwrap();
        let b = tight.run(&toks("d n v d n")).unwrap();
        assert!(b.per_pass[1].productions < a.per_pass[1].productions);
        assert!(b.chart.unwrap().total_inside() <= a.chart.unwrap().total_inside());
    }

    #[test]
    fn params_round_trip() {
        let p = two_pass(ThresholdSet::default());
        let params = p.params();
        assert_eq!(params.len(), 6);
        let q = p.with(&params, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(q.passes[1].thresholds.mp_prod, 0.6);
        assert_eq!(p.param_label(params[5]), "pass2.mpprod");
        assert_eq!(p.param_by_label("pass1.global").unwrap(), params[1]);
    }
}
