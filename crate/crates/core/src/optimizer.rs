//! Multi-threshold search at a target entropy.
//!
//! Each iteration evaluates the current thresholds, then tries moving every
//! enabled threshold by the current factor: loosening when entropy is above
//! the target, tightening when below. Loosening is scored by entropy saved
//! per production added, tightening by productions saved per bit of entropy
//! added. A move that improves both is taken outright; a move with the wrong
//! effect is retried in the opposite direction. When the current point
//! repeats, the factor shrinks.

use std::fmt::Write as _;

use rustc_hash::{FxHashMap, FxHashSet};

use crate::error::Result;
use crate::eval::run_corpus;
use crate::multipass::{Param, Pipeline};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    /// Total entropy over the tuning corpus, in bits.
    pub target_entropy: f64,
    pub anneal_factors: Vec<f64>,
    /// Moves whose ratio denominator is smaller than this fraction of the
    /// base quantity are ignored.
    pub denominator_floor: f64,
    pub max_iterations: usize,
}

impl OptimizerConfig {
    pub fn new(target_entropy: f64) -> Self {
        OptimizerConfig {
            target_entropy,
            anneal_factors: vec![16.0, 4.0, 2.0, 1.414, 1.15],
            denominator_floor: 1e-6,
            max_iterations: 500,
        }
    }
}

/// Smallest positive threshold a loosening move may reach.
const MIN_THRESHOLD: f64 = 1e-30;

/// Width of the log2 lattice used to recognise repeated threshold vectors.
const QUANTUM: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    pub values: Vec<f64>,
    /// Summed entropy in bits.
    pub entropy: f64,
    /// Summed productions examined.
    pub time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Accepted {
    Base,
    Yes,
    No,
    Final,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub factor: f64,
    pub point: EvalPoint,
    pub accepted: Accepted,
}

#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub point: EvalPoint,
    pub trace: Vec<TraceRow>,
    /// Distinct threshold vectors evaluated.
    pub evaluations: usize,
    /// The iteration cap stopped the search before the last factor looped.
    pub capped: bool,
}

impl OptimizeResult {
    pub fn trace_tsv(&self, names: &[String]) -> String {
        let mut out = String::from("iter\tfactor");
        for n in names {
            write!(out, "\t{n}").unwrap();
        }
        out.push_str("\tentropy\tproductions\taccepted\n");
        for row in &self.trace {
            write!(out, "{}\t{}", row.iter, row.factor).unwrap();
            for v in &row.point.values {
                write!(out, "\t{v}").unwrap();
            }
            let acc = match row.accepted {
                Accepted::Base => "base",
                Accepted::Yes => "yes",
                Accepted::No => "no",
                Accepted::Final => "final",
            };
            writeln!(out, "\t{}\t{}\t{acc}", row.point.entropy, row.point.time).unwrap();
        }
        out
    }
}

fn quantize(values: &[f64]) -> Vec<i64> {
    values
        .iter()
        .map(|&v| {
            if v <= 0.0 {
                i64::MIN
            } else {
                (v.log2() / QUANTUM).round() as i64
            }
        })
        .collect()
}

/// Outcome of trying one move.
enum Move {
    /// Better on both counts: (time saved, entropy saved).
    Pareto(f64, f64),
    Ratio(f64),
    Rejected,
}

struct Search<'a, F> {
    eval: F,
    cache: FxHashMap<Vec<i64>, EvalPoint>,
    config: &'a OptimizerConfig,
}

impl<F: FnMut(&[f64]) -> Result<EvalPoint>> Search<'_, F> {
    fn point(&mut self, values: &[f64]) -> Result<EvalPoint> {
        let key = quantize(values);
        if let Some(p) = self.cache.get(&key) {
            return Ok(p.clone());
        }
        let mut p = (self.eval)(values)?;
        p.values = values.to_vec();
        self.cache.insert(key, p.clone());
        Ok(p)
    }

    /// Classify `new` relative to `base` when trying to lower entropy
    /// (`above`) or lower time.
    fn classify(&self, base: &EvalPoint, new: &EvalPoint, above: bool) -> Move {
        let saved_time = base.time - new.time;
        let saved_entropy = base.entropy - new.entropy;
        if saved_time >= 0.0 && saved_entropy >= 0.0 && (saved_time > 0.0 || saved_entropy > 0.0) {
            return Move::Pareto(saved_time, saved_entropy);
        }
        let floor = self.config.denominator_floor;
        if above {
            // Want entropy down for some added time.
            let cost = -saved_time;
            if saved_entropy > 0.0 && cost > 0.0 {
                if cost < floor * base.time.abs().max(1.0) {
                    return Move::Rejected;
                }
                return Move::Ratio(saved_entropy / cost);
            }
        } else {
            let cost = -saved_entropy;
            if saved_time > 0.0 && cost > 0.0 {
                if cost < floor * base.entropy.abs().max(1.0) {
                    return Move::Rejected;
                }
                return Move::Ratio(saved_time / cost);
            }
        }
        Move::Rejected
    }
}

fn moved(values: &[f64], i: usize, factor: f64, tighten: bool) -> Option<Vec<f64>> {
    let old = values[i];
    let new = if tighten {
        (old * factor).min(1.0)
    } else {
        (old / factor).max(MIN_THRESHOLD)
    };
    if quantize(&[new]) == quantize(&[old]) {
        return None;
    }
    let mut v = values.to_vec();
    v[i] = new;
    Some(v)
}

/// Search from `initial`. Thresholds that start at zero stay disabled.
pub fn optimize<F>(config: &OptimizerConfig, initial: &[f64], eval: F) -> Result<OptimizeResult>
where
    F: FnMut(&[f64]) -> Result<EvalPoint>,
{
    let mut search = Search {
        eval,
        cache: FxHashMap::default(),
        config,
    };
    let mut trace = Vec::new();
    let mut current = initial.to_vec();
    let mut iter = 0;
    let mut capped = false;
    let target = config.target_entropy;

    'factors: for &factor in &config.anneal_factors {
        let mut visited: FxHashSet<Vec<i64>> = FxHashSet::default();
        loop {
            if !visited.insert(quantize(&current)) {
                break;
            }
            if iter >= config.max_iterations {
                capped = true;
                break 'factors;
            }
            iter += 1;
            let base = search.point(&current)?;
            trace.push(TraceRow {
                iter,
                factor,
                point: base.clone(),
                accepted: Accepted::Base,
            });
            let above = base.entropy > target;
            let mut best: Option<(Move, usize)> = None;
            let first_row = trace.len();
            for i in 0..current.len() {
                if current[i] <= 0.0 {
                    continue;
                }
                // Loosen when above the target, tighten when below.
                for tighten in [!above, above] {
                    let Some(values) = moved(&current, i, factor, tighten) else {
                        continue;
                    };
                    let p = search.point(&values)?;
                    let m = search.classify(&base, &p, above);
                    trace.push(TraceRow {
                        iter,
                        factor,
                        point: p,
                        accepted: Accepted::No,
                    });
                    let row = trace.len() - 1;
                    if matches!(m, Move::Rejected) {
                        continue;
                    }
                    let better = match (&best, &m) {
                        (None, _) => true,
                        (Some((Move::Pareto(t0, e0), _)), Move::Pareto(t1, e1)) => {
                            (t1, e1) > (t0, e0)
                        }
                        (Some((Move::Pareto(..), _)), _) => false,
                        (Some(_), Move::Pareto(..)) => true,
                        (Some((Move::Ratio(r0), _)), Move::Ratio(r1)) => r1 > r0,
                        _ => false,
                    };
                    if better {
                        best = Some((m, row));
                    }
                    break;
                }
            }
            let Some((_, row)) = best else {
                break;
            };
            debug_assert!(row >= first_row);
            trace[row].accepted = Accepted::Yes;
            current = trace[row].point.values.clone();
        }
    }
    let point = search.point(&current)?;
    trace.push(TraceRow {
        iter,
        factor: *config.anneal_factors.last().unwrap_or(&1.0),
        point: point.clone(),
        accepted: Accepted::Final,
    });
    Ok(OptimizeResult {
        point,
        trace,
        evaluations: search.cache.len(),
        capped,
    })
}

/// Parse the corpus once and total its entropy and productions.
pub fn parse_all(pipeline: &Pipeline, sentences: &[Vec<String>]) -> Result<EvalPoint> {
    let mut entropy = 0.0;
    let mut time = 0.0;
    for r in run_corpus(pipeline, sentences) {
        let r = r?;
        entropy += r.entropy;
        time += r.productions as f64;
    }
    Ok(EvalPoint {
        values: Vec::new(),
        entropy,
        time,
    })
}

/// Tune the given parameters of a pipeline on a corpus.
pub fn optimize_pipeline(
    config: &OptimizerConfig,
    pipeline: &Pipeline,
    params: &[Param],
    sentences: &[Vec<String>],
) -> Result<(Pipeline, OptimizeResult)> {
    let initial: Vec<f64> = params.iter().map(|&p| pipeline.get(p)).collect();
    let result = optimize(config, &initial, |values| {
        let p = pipeline.with(params, values)?;
        parse_all(&p, sentences)
    })?;
    let tuned = pipeline.with(params, &result.point.values)?;
    Ok((tuned, result))
}

#[cfg(test)]
mod tests {
    use super::*;

    // A smooth synthetic tradeoff: tightening thresholds saves time and
    // costs entropy, with threshold 0 cheaper in entropy per time saved.
    fn toy(values: &[f64]) -> Result<EvalPoint> {
        let a = -values[0].log2();
        let b = -values[1].log2();
        Ok(EvalPoint {
            values: values.to_vec(),
            entropy: 100.0 + 40.0 / (1.0 + a) + 80.0 / (1.0 + b),
            time: 10.0 * a + 5.0 * b,
        })
    }

    #[test]
    fn reaches_target_and_caches() {
        let cfg = OptimizerConfig::new(130.0);
        let mut calls = 0;
        let res = optimize(&cfg, &[0.01, 0.01], |v| {
            calls += 1;
            toy(v)
        })
        .unwrap();
        assert!(!res.capped);
        assert_eq!(calls, res.evaluations);
        assert!((res.point.entropy - 130.0).abs() < 5.0, "{:?}", res.point);
        let last = res.trace.last().unwrap();
        assert_eq!(last.accepted, Accepted::Final);
        assert_eq!(last.point, res.point);
    }

    #[test]
    fn disabled_thresholds_stay_zero() {
        let cfg = OptimizerConfig::new(130.0);
        let res = optimize(&cfg, &[0.01, 0.0], |v| {
            let b = if v[1] == 0.0 { 1e-30 } else { v[1] };
            toy(&[v[0], b])
        })
        .unwrap();
        assert_eq!(res.point.values[1], 0.0);
    }

    #[test]
    fn basin_returns_initial() {
        // Every move is worse on both counts.
        let cfg = OptimizerConfig::new(10.0);
        let res = optimize(&cfg, &[0.5], |v| {
            let d = (v[0].log2() + 1.0).abs();
            Ok(EvalPoint {
                values: v.to_vec(),
                entropy: 10.0 + d,
                time: 100.0 + d,
            })
        })
        .unwrap();
        assert_eq!(res.point.values, vec![0.5]);
    }

    #[test]
    fn trace_tsv_shape() {
        let cfg = OptimizerConfig::new(130.0);
        let res = optimize(&cfg, &[0.01, 0.01], toy).unwrap();
        let tsv = res.trace_tsv(&["beam".into(), "global".into()]);
        let mut lines = tsv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iter\tfactor\tbeam\tglobal\tentropy\tproductions\taccepted"
        );
        assert!(tsv.trim_end().ends_with("final"));
        assert!(lines.all(|l| l.split('\t').count() == 7));
    }
}
