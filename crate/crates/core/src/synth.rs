//! Seeded synthetic treebank: flat phrase-structure trees over twenty
//! part-of-speech tags, drawn from a fixed hand-written PCFG with unary
//! chains, repeated modifiers, category ambiguity and prepositional-phrase
//! attachment ambiguity.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashSet;

use crate::error::Result;
use crate::grammar::transform::{apply, Transform};
use crate::grammar::{RuleCounts, Symbol, Tree};

// Right-hand sides are templates: `x?` is optional, `x*` repeats zero or
// more times.
const RULES: &[(&str, &[(&str, u32)])] = &[
    (
        "S",
        &[
            ("NP VP punc?", 36),
            ("NP aux neg? VP punc?", 8),
            ("NP modal neg? VP punc?", 6),
            ("ADVP punc? NP VP PP* punc?", 4),
            ("PP punc? NP VP punc?", 4),
            ("SBAR punc? NP VP punc?", 2),
            ("NP VP PP* ADVP? punc?", 4),
            ("VP punc?", 4),
            ("S conj S", 5),
            ("S punc S", 1),
            ("NP PRN VP punc?", 1),
        ],
    ),
    (
        "NP",
        &[
            ("det adj* noun* noun PP*", 30),
            ("det ADJP noun* noun", 3),
            ("poss adj* noun* noun", 5),
            ("num adj* noun", 3),
            ("QP noun", 2),
            ("adj* noun* noun", 8),
            ("det adj", 1),
            ("pron", 14),
            ("pnoun* pnoun", 10),
            ("NP PP", 14),
            ("NP SBAR", 3),
            ("NP vbg NP", 1),
            ("NP conj NP", 5),
            ("NP punc NP punc?", 1),
            ("NP ADJP", 1),
            ("NP PRN", 1),
        ],
    ),
    (
        "VP",
        &[
            ("adv? verb NP? PP* ADVP?", 30),
            ("verb NP NP PP*", 2),
            ("verb NP? PRT NP? PP*", 3),
            ("verb PP* SBAR", 4),
            ("verb S", 2),
            ("verb UCP", 1),
            ("verb NP? ADJP PP*", 5),
            ("verb NP? to VP", 5),
            ("vbg NP? PP*", 3),
            ("VP PP", 10),
            ("VP ADVP", 3),
            ("ADVP VP", 2),
            ("VP conj VP", 5),
        ],
    ),
    ("PP", &[("adv? prep NP", 12), ("prep SBAR", 1), ("prep vbg NP", 1)]),
    ("ADJP", &[("adv* adj PP?", 8), ("ADJP conj ADJP", 1), ("adj to VP", 1), ("QP", 1)]),
    ("ADVP", &[("adv* adv PP?", 4), ("part", 1), ("adv NP", 1)]),
    ("PRT", &[("part", 1)]),
    ("QP", &[("adv? num", 3), ("num conj num", 1)]),
    (
        "SBAR",
        &[
            ("comp S", 4),
            ("WHNP VP", 3),
            ("WHNP NP VP", 2),
            ("WHADVP S", 1),
            ("prep S", 1),
        ],
    ),
    ("WHNP", &[("wh", 4), ("wh noun", 1)]),
    ("WHADVP", &[("wh", 1)]),
    ("PRN", &[("punc NP punc", 1), ("punc S punc", 1)]),
    ("UCP", &[("NP conj ADJP", 1)]),
];

/// Chance that an optional element appears, or that a repeat continues.
const OPTIONAL: f64 = 0.4;
const REPEAT: f64 = 0.35;

const WORDS: &[(&str, &[&str])] = &[
    ("det", &["the", "a", "every", "this"]),
    ("adj", &["big", "small", "red", "old", "happy"]),
    ("noun", &["dog", "cat", "park", "man", "idea", "house"]),
    ("pnoun", &["alice", "bob", "paris"]),
    ("pron", &["she", "he", "it", "they"]),
    ("verb", &["saw", "liked", "took", "gave", "said"]),
    ("aux", &["has", "was"]),
    ("modal", &["can", "will"]),
    ("adv", &["quickly", "often", "very"]),
    ("prep", &["in", "on", "with", "near"]),
    ("conj", &["and", "or"]),
    ("comp", &["that", "if"]),
    ("num", &["two", "three"]),
    ("poss", &["his", "her"]),
    ("to", &["to"]),
    ("wh", &["who", "which"]),
    ("neg", &["not"]),
    ("punc", &["."]),
    ("vbg", &["running", "eating"]),
    ("part", &["up", "out"]),
];

const MAX_DEPTH: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub seed: u64,
    pub train: usize,
    pub tune: usize,
    pub test: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1998,
            train: 419,
            tune: 31,
            test: 50,
            min_len: 6,
            max_len: 32,
        }
    }
}

pub struct Treebank {
    pub train: Vec<Tree>,
    pub tune: Vec<Tree>,
    pub test: Vec<Tree>,
}

struct Generator {
    rng: ChaCha8Rng,
    rules: Vec<(String, Vec<Vec<String>>, WeightedIndex<u32>)>,
}

impl Generator {
    fn new(seed: u64) -> Self {
        let rules = RULES
            .iter()
            .map(|(lhs, alts)| {
                let rhs = alts
                    .iter()
                    .map(|(r, _)| r.split_whitespace().map(String::from).collect())
                    .collect();
                let w = WeightedIndex::new(alts.iter().map(|(_, w)| *w)).expect("weights");
                (lhs.to_string(), rhs, w)
            })
            .collect();
        Generator {
            rng: ChaCha8Rng::seed_from_u64(seed),
            rules,
        }
    }

    fn expand(&mut self, label: &str, depth: usize) -> Option<Tree> {
        if depth > MAX_DEPTH {
            return None;
        }
        if let Some((_, words)) = WORDS.iter().find(|(t, _)| *t == label) {
            let mut leaf = Tree::leaf(label);
            leaf.token = Some(words.choose(&mut self.rng).unwrap().to_string());
            return Some(leaf);
        }
        let k = self.rules.iter().position(|(l, _, _)| l == label).expect("known label");
        let alt = self.rules[k].2.sample(&mut self.rng);
        let rhs = self.rules[k].1[alt].clone();
        let mut children = Vec::with_capacity(rhs.len());
        for c in &rhs {
            let (name, count) = if let Some(n) = c.strip_suffix('?') {
                (n, self.rng.gen_bool(OPTIONAL) as usize)
            } else if let Some(n) = c.strip_suffix('*') {
                let mut k = 0;
                while self.rng.gen_bool(REPEAT) {
                    k += 1;
                }
                (n, k)
            } else {
                (c.as_str(), 1)
            };
            for _ in 0..count {
                children.push(self.expand(name, depth + 1)?);
            }
        }
        if children.is_empty() {
            return None;
        }
        Some(Tree::node(Symbol::nonterminal(label), children))
    }

    fn sentence(&mut self, config: &SynthConfig) -> Tree {
        loop {
            if let Some(t) = self.expand("S", 0) {
                if (config.min_len..=config.max_len).contains(&t.len()) {
                    return t;
                }
            }
        }
    }
}

/// Draw a train/tune/test treebank. Held-out trees are drawn from the same
/// distribution but kept only if every rule of their transformed form was
/// seen in training, so the induced grammar can derive them.
pub fn generate(config: &SynthConfig) -> Result<Treebank> {
    let mut g = Generator::new(config.seed);
    let train: Vec<Tree> = (0..config.train).map(|_| g.sentence(config)).collect();
    let transformed: Vec<Tree> = train
        .iter()
        .map(|t| apply(t, Transform::SixGram))
        .collect::<Result<_>>()?;
    let seen = RuleCounts::from_trees(&transformed)?;
    let mut heldout = Vec::with_capacity(config.tune + config.test);
    while heldout.len() < config.tune + config.test {
        let t = g.sentence(config);
        let c = RuleCounts::from_trees(&[apply(&t, Transform::SixGram)?])?;
        let covered = c.binary.keys().all(|k| seen.binary.contains_key(k))
            && c.unary.keys().all(|k| seen.unary.contains_key(k))
            && c.roots.keys().all(|k| seen.roots.contains_key(k));
        if covered {
            heldout.push(t);
        }
    }
    let test = heldout.split_off(config.tune);
    Ok(Treebank {
        train,
        tune: heldout,
        test,
    })
}

pub fn tags() -> FxHashSet<&'static str> {
    WORDS.iter().map(|(t, _)| *t).collect()
}

pub fn write_trees(trees: &[Tree]) -> String {
    let mut out = String::new();
    for t in trees {
        out.push_str(&t.to_string());
        out.push('\n');
    }
    out
}
