mod common;

use cky_thresh::chart::{build_chart, Exhaustive, Layer, ParseOptions};
use cky_thresh::eval::{crossing_brackets, precision_recall};
use cky_thresh::grammar::transform::{apply, binarize, debinarize, restore};
use cky_thresh::grammar::{compute_priors, induce_grammar, Grammar, Symbol, Transform, Tree};
use cky_thresh::logprob::log2_add;
use cky_thresh::multipass::SurvivorTable;
use cky_thresh::optimizer::{optimize, Accepted, EvalPoint, OptimizerConfig};
use cky_thresh::thresholding::{
    beam_keep, global_keep, global_scores, parse_with_retry, RetryPolicy, SeqItem, ThresholdSet,
};
use proptest::prelude::*;

use common::relative_gap;

const PHRASES: &[&str] = &["S", "NP", "VP", "PP", "ADJP"];
const TAGS: &[&str] = &["det", "noun", "verb", "adj", "prep"];
const WORDS: &[&str] = &["the", "dog", "saw", "red", "in"];

fn leaf() -> impl Strategy<Value = Tree> {
    (0..TAGS.len(), any::<bool>()).prop_map(|(i, word)| {
        let mut t = Tree::leaf(TAGS[i]);
        if word {
            t.token = Some(WORDS[i].to_string());
        }
        t
    })
}

/// Trees with internal nodes of arity 1 to 8 and unary chains.
fn tree() -> impl Strategy<Value = Tree> {
    let inner = leaf().prop_recursive(4, 40, 8, |sub| {
        (0..PHRASES.len(), prop::collection::vec(sub, 1..=8))
            .prop_map(|(i, kids)| Tree::node(Symbol::nonterminal(PHRASES[i]), kids))
    });
    (0..PHRASES.len(), prop::collection::vec(inner, 1..=6))
        .prop_map(|(i, kids)| Tree::node(Symbol::nonterminal(PHRASES[i]), kids))
}

fn treebank() -> impl Strategy<Value = Vec<Tree>> {
    prop::collection::vec(tree(), 1..=5)
}

/// Grammar read off the 6-gram form of a small treebank, with the
/// treebank's yields up to `max_len` words.
fn induced(trees: &[Tree], max_len: usize) -> (Grammar, Vec<Vec<String>>) {
    let six: Vec<Tree> = trees.iter().map(|t| apply(t, Transform::SixGram).unwrap()).collect();
    let g = induce_grammar(&six).unwrap();
    let sents = trees
        .iter()
        .map(Tree::terminals)
        .filter(|s| s.len() <= max_len)
        .collect();
    (g, sents)
}

fn max_arity(t: &Tree) -> usize {
    t.children.iter().map(max_arity).fold(t.children.len(), usize::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn binarize_keeps_yield_and_round_trips(t in tree()) {
        let b = binarize(&t, 5);
        prop_assert_eq!(b.terminals(), t.terminals());
        prop_assert!(max_arity(&b) <= 2);
        prop_assert_eq!(debinarize(&b), t.clone());
        let six = apply(&t, Transform::SixGram).unwrap();
        prop_assert_eq!(six.terminals(), t.terminals());
        prop_assert_eq!(restore(&six), t);
    }

    #[test]
    fn induced_rules_normalize_without_unary_chains(trees in treebank()) {
        let (g, _) = induced(&trees, usize::MAX);
        for (_, mass) in g.parent_mass() {
            prop_assert!((mass - 1.0).abs() < 1e-9, "mass {}", mass);
        }
        prop_assert!(!g.has_unary_chain());
    }

    #[test]
    fn priors_sum_to_one_and_cover_rule_symbols(trees in treebank()) {
        let six: Vec<Tree> = trees.iter().map(|t| apply(t, Transform::SixGram).unwrap()).collect();
        let priors = compute_priors(&six).unwrap();
        let total: f64 = priors
            .iter()
            .filter(|(s, _)| !s.is_terminal())
            .map(|(_, p)| p)
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "total {}", total);
        let g = induce_grammar(&six).unwrap();
        let mut used = Vec::new();
        for r in g.binary_rules() {
            used.extend([r.parent, r.left, r.right]);
        }
        for r in g.unary_rules() {
            used.extend([r.parent, r.child]);
        }
        for s in used {
            if !g.symbol(s).is_terminal() {
                prop_assert!(g.prior(s) > f64::NEG_INFINITY, "{}", g.symbol(s));
            }
        }
    }

    #[test]
    fn charts_are_deterministic_and_instances_sum(trees in treebank(), beam in 0.0f64..0.5) {
        let (g, sents) = induced(&trees, 14);
        for s in &sents {
            let words = g.encode(s).unwrap();
            let opts = ParseOptions {
                track_instances: true,
                ..ParseOptions::new(ThresholdSet::beam(beam))
            };
            let a = build_chart(&g, &words, &Exhaustive, &opts);
            let b = build_chart(&g, &words, &Exhaustive, &opts);
            prop_assert_eq!(a.stats.productions, b.stats.productions);
            prop_assert_eq!(a.total_inside(), b.total_inside());
            for (start, len) in a.spans() {
                for (_, _, node) in a.cell(start, len).nodes() {
                    if node.is_terminal() {
                        continue;
                    }
                    let sum = node
                        .instances
                        .iter()
                        .fold(f64::NEG_INFINITY, |acc, i| log2_add(acc, i.inside));
                    prop_assert!(relative_gap(sum.exp2(), node.inside.exp2()) < 1e-9);
                }
            }
        }
    }

    #[test]
    fn retry_result_matches_a_single_run(trees in treebank(), beam in 0.05f64..1.0) {
        let (g, sents) = induced(&trees, 14);
        for s in &sents {
            let words = g.encode(s).unwrap();
            let opts = ParseOptions::new(ThresholdSet::beam(beam));
            let got = parse_with_retry(&g, &words, &opts, &RetryPolicy::default()).unwrap();
            let chart = got.value.expect("treebank yields are grammatical");
            let again = build_chart(&g, &words, &Exhaustive, &ParseOptions::new(got.thresholds));
            prop_assert_eq!(chart.total_inside(), again.total_inside());
        }
    }

    #[test]
    fn posteriors_and_survivor_tables(trees in treebank(), gates in (0.0f64..0.5, 0.0f64..0.5), k in 2.0f64..100.0) {
        let (g, sents) = induced(&trees, 12);
        for s in &sents {
            let words = g.encode(s).unwrap();
            let opts = ParseOptions {
                track_instances: true,
                ..ParseOptions::new(ThresholdSet::default())
            };
            let mut chart = build_chart(&g, &words, &Exhaustive, &opts);
            chart.inside_outside().unwrap();
            let root = chart.total_inside();
            let n = chart.len();
            let mut root_score = f64::NEG_INFINITY;
            for (start, len) in chart.spans() {
                for (_, _, node) in chart.cell(start, len).nodes() {
                    let p = (node.inside + node.outside - root).exp2();
                    prop_assert!((0.0..=1.0 + 1e-9).contains(&p), "posterior {}", p);
                    if len == n && start == 0 && g.start_logp(node.sym) > f64::NEG_INFINITY {
                        root_score = log2_add(root_score, node.inside + g.start_logp(node.sym));
                    }
                }
            }
            prop_assert!(relative_gap(root_score.exp2(), root.exp2()) < 1e-9);

            let (tn, tp) = (gates.0.log2(), gates.1.log2());
            let (ln, lp) = ((gates.0 / k).log2(), (gates.1 / k).log2());
            let tight = SurvivorTable::from_chart(&chart, tn, tp);
            let loose = SurvivorTable::from_chart(&chart, ln, lp);
            for (start, len) in chart.spans() {
                let nodes = loose.nodes(start, len);
                prop_assert!(tight.nodes(start, len).iter().all(|x| nodes.contains(x)));
                let bin = loose.binary(start, len);
                prop_assert!(tight.binary(start, len).iter().all(|x| bin.contains(x)));
                let un = loose.unary(start, len);
                prop_assert!(tight.unary(start, len).iter().all(|x| un.contains(x)));
                for table in [&tight, &loose] {
                    let here = table.nodes(start, len);
                    for p in table.binary(start, len) {
                        let s = p.split as usize;
                        prop_assert!(here.iter().any(|&(_, x)| x == p.parent));
                        prop_assert!(table.nodes(start, s - start).contains(&p.left));
                        prop_assert!(table.nodes(s, start + len - s).contains(&p.right));
                    }
                    for &(parent, child) in table.unary(start, len) {
                        prop_assert!(here.contains(&(Layer::Unary, parent)));
                        prop_assert!(here.contains(&(Layer::Binary, child)));
                    }
                }
            }
        }
    }

    #[test]
    fn beam_keeps_argmax_nests_and_ignores_scale(
        scores in prop::collection::vec(-60.0f64..0.0, 1..20),
        t in 0.0f64..=1.0,
        tighter in 1.0f64..=1e3,
        shift in -40.0f64..40.0,
    ) {
        let loose = beam_keep(&scores, t.log2());
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (k, &s) in loose.iter().zip(&scores) {
            if s == best {
                prop_assert!(k);
            }
        }
        let tight_t = (t * tighter).min(1.0);
        let tight = beam_keep(&scores, tight_t.log2());
        prop_assert!(tight.iter().zip(&loose).all(|(a, b)| !a || *b));
        // Multiplying every score by 2^shift; shifts are exact in binary.
        let shift = shift.round();
        let scaled: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        prop_assert_eq!(beam_keep(&scaled, t.log2()), loose);
    }

    #[test]
    fn global_keeps_a_covering_sequence(
        n in 1usize..8,
        raw in prop::collection::vec((0usize..8, 1usize..8, -30.0f64..0.0), 0..30),
        t in 0.0f64..=1.0,
    ) {
        let mut items: Vec<SeqItem> = (0..n).map(|i| SeqItem { start: i, len: 1, score: -5.0 }).collect();
        for (start, len, score) in raw {
            if start + len <= n {
                items.push(SeqItem { start, len, score });
            }
        }
        let scores = global_scores(n, &items);
        let keep = global_keep(&items, &scores, t.log2());
        let mut reach = vec![false; n + 1];
        reach[0] = true;
        for end in 1..=n {
            reach[end] = items
                .iter()
                .zip(&keep)
                .any(|(it, &k)| k && it.start + it.len == end && reach[it.start]);
        }
        prop_assert!(reach[n]);
    }

    #[test]
    fn precision_recall_swap_and_self_crossing(trees in prop::collection::vec(tree(), 1..5), others in prop::collection::vec(tree(), 5)) {
        let golds = trees.clone();
        // Pair each gold with a tree over the same words when possible.
        let cands: Vec<Tree> = trees
            .iter()
            .zip(&others)
            .map(|(g, o)| if g.terminals() == o.terminals() { o.clone() } else { g.clone() })
            .collect();
        let (p, r) = precision_recall(&cands.iter().cloned().map(Some).collect::<Vec<_>>(), &golds).unwrap();
        let (p2, r2) = precision_recall(&golds.iter().cloned().map(Some).collect::<Vec<_>>(), &cands).unwrap();
        prop_assert_eq!(p, r2);
        prop_assert_eq!(r, p2);
        for t in &trees {
            prop_assert_eq!(crossing_brackets(t, t), 0);
        }
    }

    #[test]
    fn optimizer_caches_terminates_and_moves_soundly(
        wa in 1.0f64..50.0,
        wb in 1.0f64..50.0,
        ta in 1.0f64..20.0,
        tb in 1.0f64..20.0,
        target in 100.0f64..200.0,
        start in (1e-4f64..0.5, 1e-4f64..0.5),
    ) {
        let mut calls = 0;
        let res = optimize(&OptimizerConfig::new(target), &[start.0, start.1], |v| {
            calls += 1;
            let (a, b) = (-v[0].log2(), -v[1].log2());
            Ok(EvalPoint {
                values: v.to_vec(),
                entropy: 100.0 + wa * 4.0 / (1.0 + a) + wb * 4.0 / (1.0 + b),
                time: ta * a + tb * b,
            })
        })
        .unwrap();
        prop_assert_eq!(calls, res.evaluations);
        let mut base: Option<&EvalPoint> = None;
        for row in &res.trace {
            match row.accepted {
                Accepted::Base => base = Some(&row.point),
                Accepted::Yes => {
                    let b = base.unwrap();
                    let p = &row.point;
                    let pareto = p.time <= b.time && p.entropy <= b.entropy;
                    let toward = if b.entropy > target {
                        p.entropy < b.entropy
                    } else {
                        p.time < b.time
                    };
                    prop_assert!(pareto || toward, "{:?} -> {:?}", b, p);
                }
                _ => {}
            }
        }
    }
}
