//! Beam thresholding with priors, global thresholding over node sequences,
//! and the loosen-and-retry policy for parse failures.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chart::{Cell, Chart, Layer, ParseStats};
use crate::error::{Error, Result};
use crate::grammar::Grammar;
use crate::logprob::{ratio_to_log, LOG_ZERO};

/// Pruning parameters as linear ratios in [0, 1]; zero disables a technique.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSet {
    #[serde(default)]
    pub beam: f64,
    #[serde(default)]
    pub global: f64,
    #[serde(default, rename = "mpnode")]
    pub mp_node: f64,
    #[serde(default, rename = "mpprod")]
    pub mp_prod: f64,
}

pub const THRESHOLD_NAMES: [&str; 4] = ["beam", "global", "mpnode", "mpprod"];

impl ThresholdSet {
    pub fn beam(beam: f64) -> Self {
        ThresholdSet {
            beam,
            ..Self::default()
        }
    }

    pub fn beam_log(&self) -> f64 {
        ratio_to_log(self.beam)
    }

    pub fn global_log(&self) -> f64 {
        ratio_to_log(self.global)
    }

    pub fn mp_node_log(&self) -> f64 {
        ratio_to_log(self.mp_node)
    }

    pub fn mp_prod_log(&self) -> f64 {
        ratio_to_log(self.mp_prod)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "beam" => Some(self.beam),
            "global" => Some(self.global),
            "mpnode" => Some(self.mp_node),
            "mpprod" => Some(self.mp_prod),
            _ => None,
        }
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        check_ratio(name, value)?;
        let slot = match name {
            "beam" => &mut self.beam,
            "global" => &mut self.global,
            "mpnode" => &mut self.mp_node,
            "mpprod" => &mut self.mp_prod,
            _ => return Err(Error::Invalid(format!("unknown threshold `{name}`"))),
        };
        *slot = value;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for name in THRESHOLD_NAMES {
            check_ratio(name, self.get(name).unwrap())?;
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.beam == 0.0 && self.global == 0.0 && self.mp_node == 0.0 && self.mp_prod == 0.0
    }

    fn search_divided(&self, d: f64) -> Self {
        ThresholdSet {
            beam: self.beam / d,
            global: self.global / d,
            ..*self
        }
    }

    fn gates_divided(&self, d: f64) -> Self {
        ThresholdSet {
            mp_node: self.mp_node / d,
            mp_prod: self.mp_prod / d,
            ..*self
        }
    }
}

fn check_ratio(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("threshold {name}={v} is outside [0, 1]")))
    }
}

impl fmt::Display for ThresholdSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "beam={} global={} mpnode={} mpprod={}",
            self.beam, self.global, self.mp_node, self.mp_prod
        )
    }
}

impl FromStr for ThresholdSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut t = ThresholdSet::default();
        for field in s.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("expected key=value, got `{field}`")))?;
            let v: f64 = v
                .parse()
                .map_err(|_| Error::Invalid(format!("bad value for {k}: `{v}`")))?;
            t.set(k, v)?;
        }
        Ok(t)
    }
}

/// Read one threshold set per non-blank line.
pub fn read_threshold_lines(text: &str, source: &str) -> Result<Vec<ThresholdSet>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| l.parse().map_err(|e: Error| Error::format(source, i + 1, e.to_string())))
        .collect()
}

/// Survival flags for a beam over `scores` (log domain): a score survives
/// unless it is strictly below `log_t` plus the best score.
pub fn beam_keep(scores: &[f64], log_t: f64) -> Vec<bool> {
    let best = scores.iter().copied().fold(LOG_ZERO, f64::max);
    let cutoff = log_t + best;
    scores.iter().map(|&s| s >= cutoff).collect()
}

fn beam_prune_cell(cell: &mut Cell, grammar: &Grammar, log_t: f64, use_prior: bool) {
    if log_t == LOG_ZERO {
        return;
    }
    let score = |n: &crate::chart::Node| {
        if use_prior {
            grammar.prior(n.sym) + n.inside
        } else {
            n.inside
        }
    };
    let best = cell
        .nodes()
        .filter(|(_, _, n)| n.active && !n.is_terminal())
        .map(|(_, _, n)| score(n))
        .fold(LOG_ZERO, f64::max);
    let cutoff = log_t + best;
    for l in Layer::BOTH {
        for n in cell.layer_mut(l) {
            if n.active && !n.is_terminal() && score(n) < cutoff {
                n.active = false;
            }
        }
    }
}

/// Beam over one cell, both layers jointly, scored by prior times inside.
/// Word nodes are never pruned.
pub fn beam_prune(cell: &mut Cell, grammar: &Grammar, log_t: f64, use_prior: bool) {
    beam_prune_cell(cell, grammar, log_t, use_prior);
}

/// Beam over one cell scored by inside probability alone.
pub fn beam_prune_noprior(cell: &mut Cell, grammar: &Grammar, log_t: f64) {
    beam_prune_cell(cell, grammar, log_t, false);
}

/// A node considered by global thresholding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeqItem {
    pub start: usize,
    pub len: usize,
    /// Log prior plus log inside.
    pub score: f64,
}

/// Best prefix and suffix scores over sequences of adjacent items.
/// `forward[i]` covers words `0..i`, `backward[i]` covers `i..n`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceScores {
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
    pub best: f64,
}

pub fn global_scores(n: usize, items: &[SeqItem]) -> SequenceScores {
    let mut by_end: Vec<Vec<&SeqItem>> = vec![Vec::new(); n + 1];
    let mut by_start: Vec<Vec<&SeqItem>> = vec![Vec::new(); n + 1];
    for it in items {
        by_end[it.start + it.len].push(it);
        by_start[it.start].push(it);
    }
    let mut forward = vec![LOG_ZERO; n + 1];
    forward[0] = 0.0;
    for end in 1..=n {
        for it in &by_end[end] {
            forward[end] = forward[end].max(forward[it.start] + it.score);
        }
    }
    let mut backward = vec![LOG_ZERO; n + 1];
    backward[n] = 0.0;
    for start in (0..n).rev() {
        for it in &by_start[start] {
            backward[start] = backward[start].max(it.score + backward[it.start + it.len]);
        }
    }
    let best = forward[n];
    SequenceScores {
        forward,
        backward,
        best,
    }
}

/// Survival flag per item: pruned iff the best sequence through it is
/// strictly below `log_t` plus the best sequence overall.
pub fn global_keep(items: &[SeqItem], scores: &SequenceScores, log_t: f64) -> Vec<bool> {
    let cutoff = log_t + scores.best;
    items
        .iter()
        .map(|it| {
            let total = scores.forward[it.start] + it.score + scores.backward[it.start + it.len];
            total >= cutoff
        })
        .collect()
}

/// Global thresholding over every active node of length at most `built`.
/// Word nodes take part in sequences but are never pruned.
pub fn global_prune(chart: &mut Chart<'_>, built: usize, log_t: f64) {
    if log_t == LOG_ZERO {
        return;
    }
    let n = chart.len();
    let g = chart.grammar();
    let mut items = Vec::new();
    for len in 1..=built {
        for start in 0..=n - len {
            for (_, _, node) in chart.cell(start, len).nodes() {
                if node.active {
                    items.push(SeqItem {
                        start,
                        len,
                        score: g.prior(node.sym) + node.inside,
                    });
                }
            }
        }
    }
    let scores = global_scores(n, &items);
    let keep = global_keep(&items, &scores, log_t);
    let mut k = keep.into_iter();
    for len in 1..=built {
        for start in 0..=n - len {
            for l in Layer::BOTH {
                for node in chart.cell_mut(start, len).layer_mut(l) {
                    if node.active {
                        let keep = k.next().unwrap();
                        if !node.is_terminal() {
                            node.active = keep;
                        }
                    }
                }
            }
        }
    }
}

/// How failed parses are retried: thresholds divided by `divisor` up to
/// `max_retries` times, then a final attempt with pruning switched off.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetryPolicy {
    pub enabled: bool,
    pub divisor: f64,
    pub max_retries: u32,
    /// Also loosen multiple-pass gates once beam and global are exhausted.
    pub loosen_gates: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            enabled: true,
            divisor: 5.0,
            max_retries: 4,
            loosen_gates: false,
        }
    }
}

impl RetryPolicy {
    pub fn disabled() -> Self {
        RetryPolicy {
            enabled: false,
            ..Self::default()
        }
    }

    /// The threshold sets tried in order, starting with `ts` itself.
    pub fn schedule(&self, ts: ThresholdSet) -> Vec<ThresholdSet> {
        let mut out = vec![ts];
        if !self.enabled {
            return out;
        }
        let mut push = |t: ThresholdSet| {
            if out.last() != Some(&t) {
                out.push(t);
            }
        };
        let mut d = 1.0;
        for _ in 0..self.max_retries {
            d *= self.divisor;
            push(ts.search_divided(d));
        }
        let base = ThresholdSet {
            beam: 0.0,
            global: 0.0,
            ..ts
        };
        push(base);
        if self.loosen_gates {
            let mut d = 1.0;
            for _ in 0..self.max_retries {
                d *= self.divisor;
                push(base.gates_divided(d));
            }
            push(ThresholdSet::default());
        }
        out
    }
}

/// Result of running an attempt schedule.
#[derive(Debug)]
pub struct Attempted<T> {
    /// The successful result, or `None` when every attempt failed but the
    /// last one still had pruning enabled.
    pub value: Option<T>,
    /// Productions and time summed over all attempts.
    pub stats: ParseStats,
    pub thresholds: ThresholdSet,
}

/// Run `attempt` over the retry schedule until one succeeds. A failure with
/// every threshold at zero means the sentence has no parse at all.
pub fn run_with_retry<T>(
    policy: &RetryPolicy,
    thresholds: ThresholdSet,
    mut attempt: impl FnMut(&ThresholdSet) -> Result<(Option<T>, ParseStats)>,
) -> Result<Attempted<T>> {
    let mut stats = ParseStats::default();
    let schedule = policy.schedule(thresholds);
    for (i, ts) in schedule.iter().enumerate() {
        let (value, s) = attempt(ts)?;
        stats.productions += s.productions;
        stats.elapsed += s.elapsed;
        stats.retries = i as u32;
        if value.is_some() {
            return Ok(Attempted {
                value,
                stats,
                thresholds: *ts,
            });
        }
        if ts.is_zero() {
            return Err(Error::Ungrammatical);
        }
    }
    Ok(Attempted {
        value: None,
        stats,
        thresholds: *schedule.last().unwrap(),
    })
}

/// Single-pass parse under the retry policy.
pub fn parse_with_retry<'g>(
    grammar: &'g Grammar,
    words: &[crate::grammar::SymId],
    opts: &crate::chart::ParseOptions,
    policy: &RetryPolicy,
) -> Result<Attempted<Chart<'g>>> {
    if words.is_empty() {
        return Err(Error::Invalid("cannot parse an empty sentence".into()));
    }
    run_with_retry(policy, opts.thresholds, |ts| {
        let o = crate::chart::ParseOptions {
            thresholds: *ts,
            ..*opts
        };
        let chart = crate::chart::build_chart(grammar, words, &crate::chart::Exhaustive, &o);
        let stats = chart.stats;
        Ok((chart.has_parse().then_some(chart), stats))
    })
}
