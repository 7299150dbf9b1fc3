#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use cky_thresh::chart::{build_chart, Chart, Exhaustive, Layer, ParseOptions};
use cky_thresh::grammar::transform::apply;
use cky_thresh::grammar::{
    build_descendants, induce_covering, induce_grammar, read_treebank, DescendantsMap, Grammar,
    GrammarBuilder, SymId, Symbol, Transform, Tree,
};
use cky_thresh::multipass::{PassSpec, Pipeline};
use cky_thresh::thresholding::{RetryPolicy, ThresholdSet};

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Three small grammars: a fully ambiguous one, a noun-phrase/verb-phrase
/// grammar with attachment ambiguity and words under binary rules, and one
/// with nonterminal unaries, shared preterminals and two start symbols.
pub fn toy_grammars() -> Vec<(&'static str, Grammar)> {
    let catalan = GrammarBuilder::from_rules("S", &["S -> S S 0.4", "S -> x 0.6"]).unwrap();
    let attach = GrammarBuilder::from_rules(
        "S",
        &[
            "S -> NP VP 1",
            "NP -> det n 0.5",
            "NP -> n 0.3",
            "NP -> NP PP 0.2",
            "VP -> v NP 0.5",
            "VP -> VP PP 0.3",
            "VP -> v 0.2",
            "PP -> p NP 1",
        ],
    )
    .unwrap();
    let nt = |s: &str| Symbol::nonterminal(s);
    let t = |s: &str| Symbol::terminal(s);
    let mut b = GrammarBuilder::new();
    b.binary(nt("S"), nt("A"), nt("B"), 0.5)
        .binary(nt("S"), nt("B"), nt("A"), 0.3)
        .unary(nt("S"), nt("C"), 0.2)
        .binary(nt("A"), nt("A"), nt("C"), 0.3)
        .unary(nt("A"), t("a"), 0.7)
        .binary(nt("B"), nt("B"), nt("B"), 0.2)
        .unary(nt("B"), t("b"), 0.5)
        .unary(nt("B"), nt("C"), 0.3)
        .binary(nt("C"), nt("A"), nt("B"), 0.4)
        .unary(nt("C"), t("a"), 0.6)
        .binary(nt("D"), nt("D"), nt("D"), 0.5)
        .unary(nt("D"), t("b"), 0.5)
        .start_log(nt("S"), 0.6f64.log2())
        .start_log(nt("D"), 0.4f64.log2());
    let chains = b.build().unwrap();
    vec![("catalan", catalan), ("attach", attach), ("chains", chains)]
}

/// Every string over the grammar's terminals of length `1..=max_len`.
pub fn all_sentences(g: &Grammar, max_len: usize) -> Vec<Vec<String>> {
    let mut alphabet: Vec<String> = g.terminal_names().into_iter().map(String::from).collect();
    alphabet.sort();
    let mut out = Vec::new();
    let mut layer: Vec<Vec<String>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &layer {
            for a in &alphabet {
                let mut t = s.clone();
                t.push(a.clone());
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

type Memo = HashMap<(usize, usize, Layer), Vec<(SymId, f64)>>;

/// One entry per distinct derivation of the span rooted in `layer`:
/// (root symbol, linear probability). At most one unary per span.
fn derivations(
    g: &Grammar,
    words: &[SymId],
    start: usize,
    len: usize,
    layer: Layer,
    memo: &mut Memo,
) -> Vec<(SymId, f64)> {
    if let Some(v) = memo.get(&(start, len, layer)) {
        return v.clone();
    }
    let mut out = Vec::new();
    match layer {
        Layer::Binary if len == 1 => out.push((words[start], 1.0)),
        Layer::Binary => {
            for split in 1..len {
                let mut left = derivations(g, words, start, split, Layer::Binary, memo);
                left.extend(derivations(g, words, start, split, Layer::Unary, memo));
                let (rs, rl) = (start + split, len - split);
                let mut right = derivations(g, words, rs, rl, Layer::Binary, memo);
                right.extend(derivations(g, words, rs, rl, Layer::Unary, memo));
                for &(ls, lp) in &left {
                    for &(rsym, rp) in &right {
                        for r in g.binary_rules() {
                            if r.left == ls && r.right == rsym {
                                out.push((r.parent, r.logp.exp2() * lp * rp));
                            }
                        }
                    }
                }
            }
        }
        Layer::Unary => {
            for (cs, cp) in derivations(g, words, start, len, Layer::Binary, memo) {
                for r in g.unary_rules() {
                    if r.child == cs {
                        out.push((r.parent, r.logp.exp2() * cp));
                    }
                }
            }
        }
    }
    memo.insert((start, len, layer), out.clone());
    out
}

/// Sentence probability by explicit enumeration of every tree, summed in
/// linear space; zero when the sentence has no derivation.
pub fn brute_force_inside(g: &Grammar, words: &[SymId]) -> f64 {
    let n = words.len();
    let mut memo = Memo::new();
    let mut total = 0.0;
    for layer in Layer::BOTH {
        for (s, p) in derivations(g, words, 0, n, layer, &mut memo) {
            let lp = g.start_logp(s);
            if lp > f64::NEG_INFINITY {
                total += lp.exp2() * p;
            }
        }
    }
    total
}

pub fn exhaustive_chart<'g>(g: &'g Grammar, words: &[SymId], track: bool) -> Chart<'g> {
    let opts = ParseOptions {
        track_instances: track,
        ..ParseOptions::new(ThresholdSet::default())
    };
    build_chart(g, words, &Exhaustive, &opts)
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

/// The bundled synthetic treebank with grammars read off its training part.
pub struct Corpus {
    pub train: Vec<Tree>,
    pub tune: Vec<Tree>,
    pub test: Vec<Tree>,
    pub sixgram: Arc<Grammar>,
    pub cover: Arc<Grammar>,
    pub descendants: Arc<DescendantsMap>,
}

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn load(name: &str) -> Vec<Tree> {
    let text = std::fs::read_to_string(data_dir().join(name)).unwrap();
    read_treebank(&text).unwrap()
}

pub fn corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let train = load("train.trees");
        let six: Vec<Tree> = train.iter().map(|t| apply(t, Transform::SixGram).unwrap()).collect();
        let tp: Vec<Tree> = train
            .iter()
            .map(|t| apply(t, Transform::TerminalPrime).unwrap())
            .collect();
        let sixgram = induce_grammar(&six).unwrap();
        let cover = induce_covering(&tp, &sixgram, 0.1).unwrap();
        let (descendants, _) = build_descendants(&cover, &sixgram).unwrap();
        Corpus {
            train,
            tune: load("tune.trees"),
            test: load("test.trees"),
            sixgram: Arc::new(sixgram),
            cover: Arc::new(cover),
            descendants: Arc::new(descendants),
        }
    })
}

pub fn sentences(trees: &[Tree]) -> Vec<Vec<String>> {
    trees.iter().map(Tree::terminals).collect()
}

impl Corpus {
    pub fn single(&self, ts: ThresholdSet, retry: RetryPolicy) -> Pipeline {
        Pipeline {
            retry,
            ..Pipeline::single(self.sixgram.clone(), ts)
        }
    }

    pub fn two_pass(&self, first: ThresholdSet, second: ThresholdSet, retry: RetryPolicy) -> Pipeline {
        Pipeline {
            passes: vec![
                PassSpec::single(self.cover.clone(), first),
                PassSpec {
                    grammar: self.sixgram.clone(),
                    thresholds: second,
                    descendants: Some(self.descendants.clone()),
                },
            ],
            retry,
            use_prior: true,
        }
    }
}
