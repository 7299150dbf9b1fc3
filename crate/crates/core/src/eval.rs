//! Per-sentence run records, labeled-bracket scoring, the run-to-run metric
//! comparison, and threshold sweeps.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::transform::restore;
use crate::grammar::Tree;
use crate::multipass::{Param, Pipeline};

/// Outcome of parsing one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub id: usize,
    /// Bits; infinite when no parse was found.
    pub entropy: f64,
    pub productions: u64,
    /// Wall-clock seconds for every pass and attempt.
    pub elapsed: f64,
    pub retries: u32,
    /// Log2 probability of the best derivation.
    pub viterbi: f64,
    /// Best parse with transforms undone.
    pub tree: Option<Tree>,
}

impl RunRecord {
    pub fn failure(id: usize) -> Self {
        RunRecord {
            id,
            entropy: f64::INFINITY,
            productions: 0,
            elapsed: 0.0,
            retries: 0,
            viterbi: f64::NEG_INFINITY,
            tree: None,
        }
    }

    pub fn parsed(&self) -> bool {
        self.tree.is_some()
    }

    pub fn to_json(&self) -> String {
        let j = RecordJson {
            id: self.id,
            entropy: self.entropy.is_finite().then_some(self.entropy),
            productions: self.productions,
            elapsed: self.elapsed,
            retries: self.retries,
            viterbi: self.viterbi.is_finite().then_some(self.viterbi),
        };
        serde_json::to_string(&j).expect("record serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct RecordJson {
    id: usize,
    entropy: Option<f64>,
    productions: u64,
    elapsed: f64,
    retries: u32,
    #[serde(default)]
    viterbi: Option<f64>,
}

/// Read a JSON-lines record stream together with the matching tree lines.
pub fn read_records(json: &str, trees: &[Option<Tree>], source: &str) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for (i, line) in json.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let j: RecordJson =
            serde_json::from_str(line).map_err(|e| Error::format(source, i + 1, e.to_string()))?;
        out.push(RunRecord {
            id: j.id,
            entropy: j.entropy.unwrap_or(f64::INFINITY),
            productions: j.productions,
            elapsed: j.elapsed,
            retries: j.retries,
            viterbi: j.viterbi.unwrap_or(f64::NEG_INFINITY),
            tree: None,
        });
    }
    if out.len() != trees.len() {
        return Err(Error::Invalid(format!(
            "{source}: {} records but {} trees",
            out.len(),
            trees.len()
        )));
    }
    for (r, t) in out.iter_mut().zip(trees) {
        r.tree = t.clone();
        if r.tree.is_some() != r.entropy.is_finite() {
            return Err(Error::Invalid(format!(
                "{source}: record {} disagrees with its tree about parse failure",
                r.id
            )));
        }
    }
    Ok(out)
}

/// Parse one sentence through the pipeline. Hard failures (unknown word,
/// no parse at all) are errors; a failure with pruning still on is a
/// failure record.
pub fn run_sentence(pipeline: &Pipeline, id: usize, tokens: &[String]) -> Result<RunRecord> {
    let t0 = Instant::now();
    let out = pipeline.run(tokens)?;
    let (entropy, viterbi, tree) = match &out.chart {
        Some(chart) => (
            chart.entropy(),
            chart.viterbi_logprob(),
            Some(restore(&chart.viterbi_tree(None)?)),
        ),
        None => (f64::INFINITY, f64::NEG_INFINITY, None),
    };
    Ok(RunRecord {
        id,
        entropy,
        productions: out.stats.productions,
        elapsed: t0.elapsed().as_secs_f64(),
        retries: out.stats.retries,
        viterbi,
        tree,
    })
}

/// Parse every sentence, concurrently, keeping input order.
pub fn run_corpus(pipeline: &Pipeline, sentences: &[Vec<String>]) -> Vec<Result<RunRecord>> {
    sentences
        .par_iter()
        .enumerate()
        .map(|(i, s)| run_sentence(pipeline, i, s))
        .collect()
}

type Bracket = (String, usize, usize);

fn brackets(tree: &Tree) -> Vec<Bracket> {
    let mut out = Vec::new();
    tree.for_each_internal(|node, start, end| {
        if end - start >= 2 {
            out.push((node.label.to_string(), start, end));
        }
    });
    // Post-order walk: the outermost bracket is last.
    if tree.len() >= 2 {
        out.pop();
    }
    out.sort();
    out
}

fn matched(a: &[Bracket], b: &[Bracket]) -> usize {
    let (mut i, mut j, mut m) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                m += 1;
                i += 1;
                j += 1;
            }
        }
    }
    m
}

/// Labeled bracket counts for one sentence: (matched, candidate, gold).
pub fn bracket_counts(candidate: Option<&Tree>, gold: &Tree) -> (usize, usize, usize) {
    let g = brackets(gold);
    match candidate {
        None => (0, 0, g.len()),
        Some(c) => {
            let c = brackets(c);
            (matched(&c, &g), c.len(), g.len())
        }
    }
}

/// Corpus-level labeled precision and recall over spans of length at least
/// two, not counting each tree's outermost bracket. Brackets are matched
/// with multiplicity. An empty denominator scores 1.
pub fn precision_recall(candidates: &[Option<Tree>], golds: &[Tree]) -> Result<(f64, f64)> {
    if candidates.len() != golds.len() {
        return Err(Error::Invalid(format!(
            "{} candidate trees but {} gold trees",
            candidates.len(),
            golds.len()
        )));
    }
    let (mut m, mut c, mut g) = (0, 0, 0);
    for (cand, gold) in candidates.iter().zip(golds) {
        let (a, b, d) = bracket_counts(cand.as_ref(), gold);
        m += a;
        c += b;
        g += d;
    }
    Ok((ratio(m, c), ratio(m, g)))
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

/// Candidate constituents (unlabeled, length at least two) that cross some
/// gold constituent.
pub fn crossing_brackets(candidate: &Tree, gold: &Tree) -> usize {
    let spans = |t: &Tree| {
        let mut v = Vec::new();
        t.for_each_internal(|_, s, e| {
            if e - s >= 2 {
                v.push((s, e));
            }
        });
        v
    };
    let g = spans(gold);
    spans(candidate)
        .into_iter()
        .filter(|&(s, e)| g.iter().any(|&(gs, ge)| (s < gs && gs < e && e < ge) || (gs < s && s < ge && ge < e)))
        .count()
}

pub const METRICS: [&str; 6] = [
    "inside",
    "viterbi",
    "crossing",
    "zero-crossing",
    "precision",
    "recall",
];

/// Per metric, how many sentences got worse, stayed the same, or improved
/// from run A to run B. Crossing counts are oriented so that fewer crossings
/// is an increase in quality.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MetricDelta {
    pub counts: [[usize; 3]; 6],
    pub sentences: usize,
}

impl MetricDelta {
    pub fn get(&self, metric: &str) -> Option<[usize; 3]> {
        METRICS.iter().position(|&m| m == metric).map(|i| self.counts[i])
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tdecrease\tsame\tincrease\n");
        for (name, c) in METRICS.iter().zip(&self.counts) {
            writeln!(out, "{name}\t{}\t{}\t{}", c[0], c[1], c[2]).unwrap();
        }
        out
    }
}

/// Relative tolerance on linear-domain probabilities below which two
/// scores count as the same.
pub const SAME_TOLERANCE: f64 = 1e-12;

fn log_cmp(a: f64, b: f64) -> usize {
    if (b - a).exp2() - 1.0 > SAME_TOLERANCE {
        2
    } else if 1.0 - (b - a).exp2() > SAME_TOLERANCE {
        0
    } else {
        1
    }
}

fn exact_cmp(a: f64, b: f64) -> usize {
    match b.partial_cmp(&a) {
        Some(std::cmp::Ordering::Greater) => 2,
        Some(std::cmp::Ordering::Less) => 0,
        _ => 1,
    }
}

/// Compare two aligned runs sentence by sentence. Sentences that failed in
/// either run are left out.
pub fn compare_runs(a: &[RunRecord], b: &[RunRecord], golds: &[Tree]) -> Result<MetricDelta> {
    if a.len() != b.len() || a.len() != golds.len() {
        return Err(Error::Invalid(format!(
            "runs are not aligned: {}, {} and {} gold trees",
            a.len(),
            b.len(),
            golds.len()
        )));
    }
    let mut d = MetricDelta::default();
    for ((ra, rb), gold) in a.iter().zip(b).zip(golds) {
        if ra.id != rb.id {
            return Err(Error::Invalid(format!("record ids differ: {} vs {}", ra.id, rb.id)));
        }
        let (Some(ta), Some(tb)) = (&ra.tree, &rb.tree) else {
            continue;
        };
        d.sentences += 1;
        let (ma, ca, ga) = bracket_counts(Some(ta), gold);
        let (mb, cb, gb) = bracket_counts(Some(tb), gold);
        let xa = crossing_brackets(ta, gold) as f64;
        let xb = crossing_brackets(tb, gold) as f64;
        let cmps = [
            log_cmp(-ra.entropy, -rb.entropy),
            log_cmp(ra.viterbi, rb.viterbi),
            exact_cmp(-xa, -xb),
            exact_cmp((xa == 0.0) as u8 as f64, (xb == 0.0) as u8 as f64),
            exact_cmp(ratio(ma, ca), ratio(mb, cb)),
            exact_cmp(ratio(ma, ga), ratio(mb, gb)),
        ];
        for (k, c) in cmps.into_iter().enumerate() {
            d.counts[k][c] += 1;
        }
    }
    Ok(d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub entropy: f64,
    pub productions: u64,
    pub elapsed: f64,
    pub precision: f64,
    pub recall: f64,
    pub failures: usize,
}

pub const SWEEP_HEADER: &str = "value\tentropy\tproductions\telapsed\tprecision\trecall\tfailures";

impl SweepRow {
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}",
            self.value,
            self.entropy,
            self.productions,
            self.elapsed,
            self.precision,
            self.recall,
            self.failures
        )
    }
}

/// Summarize one corpus run into a sweep row.
pub fn summarize(value: f64, records: &[RunRecord], golds: &[Tree]) -> Result<SweepRow> {
    let trees: Vec<Option<Tree>> = records.iter().map(|r| r.tree.clone()).collect();
    let (precision, recall) = precision_recall(&trees, golds)?;
    Ok(SweepRow {
        value,
        entropy: records.iter().map(|r| r.entropy).sum(),
        productions: records.iter().map(|r| r.productions).sum(),
        elapsed: records.iter().map(|r| r.elapsed).sum(),
        precision,
        recall,
        failures: records.iter().filter(|r| !r.parsed()).count(),
    })
}

/// Evaluate the pipeline once per value of one threshold.
pub fn sweep(
    pipeline: &Pipeline,
    param: Param,
    values: &[f64],
    sentences: &[Vec<String>],
    golds: &[Tree],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let p = pipeline.with(&[param], &[v])?;
        let records = run_corpus(&p, sentences)
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        rows.push(summarize(v, &records, golds)?);
    }
    Ok(rows)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}
