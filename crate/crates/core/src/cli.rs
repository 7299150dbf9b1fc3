//! Command-line front end.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::eval::{
    compare_runs, precision_recall, read_records, run_corpus, sweep, RunRecord,
    SWEEP_HEADER,
};
use crate::grammar::io::{read_grammar, write_grammar};
use crate::grammar::transform::apply;
use crate::grammar::tree::{read_named, read_parses, FAILURE_LINE};
use crate::grammar::{build_descendants, induce_covering, induce_grammar, DescendantsMap, Grammar, Transform, Tree};
use crate::multipass::{PassSpec, Pipeline};
use crate::optimizer::{optimize_pipeline, OptimizerConfig};
use crate::synth::{generate, write_trees, SynthConfig};
use crate::thresholding::{RetryPolicy, ThresholdSet};

#[derive(Debug, Parser)]
#[command(name = "cky-thresh", version, about = "CKY parsing with beam, global and multiple-pass thresholding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Induce a grammar from a treebank.
    Induce(InduceArgs),
    /// Build the descendants map from a first-pass to a second-pass grammar.
    Descendants(DescendantsArgs),
    /// Parse sentences, writing one tree per line and a JSON record stream.
    Parse(ParseArgs),
    /// Evaluate once per value of one threshold.
    Sweep(SweepArgs),
    /// Search for thresholds that reach a target entropy cheaply.
    Optimize(OptimizeArgs),
    /// Score parses against gold trees, or compare two runs.
    Eval(EvalArgs),
    /// Write the synthetic train/tune/test treebank.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct InduceArgs {
    #[arg(long)]
    pub treebank: PathBuf,
    /// `6gram` or `terminal-prime`.
    #[arg(long, default_value = "6gram")]
    pub transform: Transform,
    /// Add every projection of this grammar's rules, so the result can
    /// serve as an admissible first pass for it.
    #[arg(long)]
    pub cover: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub pseudo_count: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DescendantsArgs {
    #[arg(long)]
    pub first: PathBuf,
    #[arg(long)]
    pub second: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct ParserArgs {
    /// Single-pass grammar.
    #[arg(long, conflicts_with = "pipeline", required_unless_present = "pipeline")]
    pub grammar: Option<PathBuf>,
    /// TOML file with one `[[pass]]` table per pass.
    #[arg(long)]
    pub pipeline: Option<PathBuf>,
    /// Overrides for the last pass.
    #[arg(long)]
    pub beam: Option<f64>,
    #[arg(long)]
    pub global: Option<f64>,
    #[arg(long)]
    pub mp_node: Option<f64>,
    #[arg(long)]
    pub mp_prod: Option<f64>,
    #[arg(long, default_value_t = 5.0)]
    pub retry_divisor: f64,
    #[arg(long, default_value_t = 4)]
    pub max_retries: u32,
    #[arg(long)]
    pub no_retry: bool,
    /// Also loosen multiple-pass gates when retrying.
    #[arg(long)]
    pub loosen_gates: bool,
    /// Beam on inside probability alone.
    #[arg(long)]
    pub no_prior: bool,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    #[command(flatten)]
    pub parser: ParserArgs,
    /// Sentences (one per line) or a treebank whose yields are parsed.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON-lines record per sentence.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub parser: ParserArgs,
    /// Gold treebank; its yields are the sentences parsed.
    #[arg(long)]
    pub gold: PathBuf,
    /// Threshold to vary, e.g. `beam` or `pass2.mpnode`.
    #[arg(long, default_value = "beam")]
    pub param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required_unless_present = "log_range")]
    pub values: Vec<f64>,
    /// `from:to:points`, spaced evenly in log scale.
    #[arg(long, conflicts_with = "values")]
    pub log_range: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub parser: ParserArgs,
    #[arg(long)]
    pub input: PathBuf,
    /// Total entropy over the input, in bits.
    #[arg(long)]
    pub target_entropy: f64,
    /// Comma-separated thresholds to tune; defaults to every nonzero one.
    #[arg(long, value_delimiter = ',')]
    pub params: Vec<String>,
    #[arg(long, default_value_t = 500)]
    pub max_iterations: usize,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Tuned thresholds, one pass per line.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gold: PathBuf,
    /// Parser output, one tree per line.
    #[arg(long)]
    pub trees: PathBuf,
    #[arg(long, requires = "trees_b")]
    pub stats: Option<PathBuf>,
    /// A second run to compare against the first.
    #[arg(long, requires = "stats_b")]
    pub trees_b: Option<PathBuf>,
    #[arg(long, requires = "stats")]
    pub stats_b: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = SynthConfig::default().seed)]
    pub seed: u64,
    #[arg(long, default_value_t = SynthConfig::default().train)]
    pub train: usize,
    #[arg(long, default_value_t = SynthConfig::default().tune)]
    pub tune: usize,
    #[arg(long, default_value_t = SynthConfig::default().test)]
    pub test: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| {
            Error::Io(io::Error::new(e.kind(), format!("{}: {e}", p.display())))
        }),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load_grammar(path: &Path) -> Result<Grammar> {
    read_grammar(&read(path)?, &path.display().to_string())
}

fn load_treebank(path: &Path) -> Result<Vec<Tree>> {
    read_named(&read(path)?, &path.display().to_string())
}

/// Sentences from a plain file, or the yields of a bracketed treebank.
pub fn load_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = read(path)?;
    if text.trim_start().starts_with('(') {
        let trees = read_named(&text, &path.display().to_string())?;
        return Ok(trees.iter().map(Tree::terminals).collect());
    }
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PipelineFile {
    pass: Vec<PassEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PassEntry {
    grammar: PathBuf,
    descendants: Option<PathBuf>,
    #[serde(default)]
    beam: f64,
    #[serde(default)]
    global: f64,
    #[serde(default)]
    mpnode: f64,
    #[serde(default)]
    mpprod: f64,
}

/// Read a pipeline file; relative paths resolve against its directory.
pub fn load_pipeline(path: &Path) -> Result<Vec<PassSpec>> {
    let text = read(path)?;
    let source = path.display().to_string();
    let file: PipelineFile = toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map_or(0, |s| text[..s.start].matches('\n').count() + 1);
        Error::format(&source, line, e.message().to_string())
    })?;
    if file.pass.is_empty() {
        return Err(Error::format(&source, 0, "pipeline has no [[pass]] entries"));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut passes: Vec<PassSpec> = Vec::new();
    for (k, entry) in file.pass.iter().enumerate() {
        let thresholds = ThresholdSet {
            beam: entry.beam,
            global: entry.global,
            mp_node: entry.mpnode,
            mp_prod: entry.mpprod,
        };
        thresholds.validate()?;
        let grammar = Arc::new(load_grammar(&dir.join(&entry.grammar))?);
        let descendants = match (k, &entry.descendants) {
            (0, Some(_)) => {
                return Err(Error::format(&source, 0, "the first pass takes no descendants map"))
            }
            (0, None) => None,
            (_, None) => {
                let (map, _) = build_descendants(&passes[k - 1].grammar, &grammar)?;
                Some(Arc::new(map))
            }
            (_, Some(d)) => {
                let p = dir.join(d);
                Some(Arc::new(DescendantsMap::read(
                    &read(&p)?,
                    &p.display().to_string(),
                    &passes[k - 1].grammar,
                    &grammar,
                )?))
            }
        };
        passes.push(PassSpec {
            grammar,
            thresholds,
            descendants,
        });
    }
    Ok(passes)
}

fn build_pipeline(a: &ParserArgs) -> Result<Pipeline> {
    let mut passes = match (&a.grammar, &a.pipeline) {
        (Some(g), None) => vec![PassSpec::single(Arc::new(load_grammar(g)?), ThresholdSet::default())],
        (None, Some(p)) => load_pipeline(p)?,
        _ => return Err(Error::Invalid("give exactly one of --grammar or --pipeline".into())),
    };
    let last = &mut passes.last_mut().unwrap().thresholds;
    for (name, v) in [
        ("beam", a.beam),
        ("global", a.global),
        ("mpnode", a.mp_node),
        ("mpprod", a.mp_prod),
    ] {
        if let Some(v) = v {
            last.set(name, v)?;
        }
    }
    if a.retry_divisor <= 1.0 {
        return Err(Error::Invalid("--retry-divisor must exceed 1".into()));
    }
    Ok(Pipeline {
        passes,
        retry: RetryPolicy {
            enabled: !a.no_retry,
            divisor: a.retry_divisor,
            max_retries: a.max_retries,
            loosen_gates: a.loosen_gates,
        },
        use_prior: !a.no_prior,
    })
}

fn cmd_induce(a: &InduceArgs) -> Result<()> {
    let raw = load_treebank(&a.treebank)?;
    let trees: Vec<Tree> = raw.iter().map(|t| apply(t, a.transform)).collect::<Result<_>>()?;
    let g = match &a.cover {
        Some(second) => induce_covering(&trees, &load_grammar(second)?, a.pseudo_count)?,
        None => induce_grammar(&trees)?,
    };
    emit(a.out.as_deref(), &write_grammar(&g))
}

fn cmd_descendants(a: &DescendantsArgs) -> Result<()> {
    let first = load_grammar(&a.first)?;
    let second = load_grammar(&a.second)?;
    let (map, unmapped) = build_descendants(&first, &second)?;
    if unmapped > 0 {
        eprintln!("warning: {unmapped} second-pass symbol/word combinations have no first-pass ancestor");
    }
    emit(a.out.as_deref(), &map.write(&first, &second))
}

fn cmd_parse(a: &ParseArgs) -> Result<()> {
    let pipeline = build_pipeline(&a.parser)?;
    let sentences = load_sentences(&a.input)?;
    let mut trees = String::new();
    let mut stats = String::new();
    for (i, r) in run_corpus(&pipeline, &sentences).into_iter().enumerate() {
        let rec = match r {
            Ok(rec) => rec,
            Err(e @ (Error::UnknownTerminal(_) | Error::Ungrammatical)) => {
                eprintln!("sentence {i}: {e}");
                RunRecord::failure(i)
            }
            Err(e) => return Err(e),
        };
        match &rec.tree {
            Some(t) => trees.push_str(&t.to_string()),
            None => trees.push_str(FAILURE_LINE),
        }
        trees.push('\n');
        stats.push_str(&rec.to_json());
        stats.push('\n');
    }
    emit(a.out.as_deref(), &trees)?;
    if let Some(p) = &a.stats {
        emit(Some(p), &stats)?;
    }
    Ok(())
}

fn parse_log_range(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Invalid(format!("--log-range wants from:to:points, got `{spec}`"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let from: f64 = parts[0].parse().map_err(|_| bad())?;
    let to: f64 = parts[1].parse().map_err(|_| bad())?;
    let points: usize = parts[2].parse().map_err(|_| bad())?;
    if from <= 0.0 || to <= 0.0 || points < 1 {
        return Err(bad());
    }
    if points == 1 {
        return Ok(vec![from]);
    }
    let (lf, lt) = (from.log10(), to.log10());
    Ok((0..points)
        .map(|i| 10f64.powf(lf + (lt - lf) * i as f64 / (points - 1) as f64))
        .collect())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let pipeline = build_pipeline(&a.parser)?;
    let golds = load_treebank(&a.gold)?;
    let sentences: Vec<Vec<String>> = golds.iter().map(Tree::terminals).collect();
    let param = pipeline.param_by_label(&a.param)?;
    let values = match &a.log_range {
        Some(r) => parse_log_range(r)?,
        None => a.values.clone(),
    };
    let rows = sweep(&pipeline, param, &values, &sentences, &golds)?;
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        out.push_str(&r.to_tsv());
        out.push('\n');
    }
    emit(a.out.as_deref(), &out)
}

fn cmd_optimize(a: &OptimizeArgs) -> Result<()> {
    let pipeline = build_pipeline(&a.parser)?;
    let sentences = load_sentences(&a.input)?;
    let params = if a.params.is_empty() {
        pipeline
            .params()
            .into_iter()
            .filter(|&p| pipeline.get(p) > 0.0)
            .collect()
    } else {
        a.params
            .iter()
            .map(|l| pipeline.param_by_label(l))
            .collect::<Result<Vec<_>>>()?
    };
    if params.is_empty() {
        return Err(Error::Invalid(
            "no thresholds to tune; seed at least one with a positive value".into(),
        ));
    }
    let config = OptimizerConfig {
        max_iterations: a.max_iterations,
        ..OptimizerConfig::new(a.target_entropy)
    };
    let (tuned, result) = optimize_pipeline(&config, &pipeline, &params, &sentences)?;
    if result.capped {
        eprintln!("warning: iteration cap reached before the search settled");
    }
    let names: Vec<String> = params.iter().map(|&p| pipeline.param_label(p)).collect();
    let trace = result.trace_tsv(&names);
    match &a.trace {
        Some(p) => emit(Some(p), &trace)?,
        None => eprint!("{trace}"),
    }
    let mut out = String::new();
    for pass in &tuned.passes {
        out.push_str(&pass.thresholds.to_string());
        out.push('\n');
    }
    emit(a.out.as_deref(), &out)
}

fn load_run(trees: &Path, stats: &Path) -> Result<Vec<RunRecord>> {
    let parses = read_parses(&read(trees)?, &trees.display().to_string())?;
    read_records(&read(stats)?, &parses, &stats.display().to_string())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let golds = load_treebank(&a.gold)?;
    let mut out = String::new();
    match (&a.stats, &a.trees_b, &a.stats_b) {
        (Some(sa), Some(tb), Some(sb)) => {
            let ra = load_run(&a.trees, sa)?;
            let rb = load_run(tb, sb)?;
            out.push_str(&compare_runs(&ra, &rb, &golds)?.to_tsv());
        }
        _ => {
            let parses = read_parses(&read(&a.trees)?, &a.trees.display().to_string())?;
            let (p, r) = precision_recall(&parses, &golds)?;
            let failures = parses.iter().filter(|t| t.is_none()).count();
            out.push_str(&format!("precision\t{p:.6}\nrecall\t{r:.6}\nfailures\t{failures}\n"));
        }
    }
    emit(a.out.as_deref(), &out)
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let cfg = SynthConfig {
        seed: a.seed,
        train: a.train,
        tune: a.tune,
        test: a.test,
        ..SynthConfig::default()
    };
    let tb = generate(&cfg)?;
    fs::create_dir_all(&a.out_dir)?;
    for (name, trees) in [("train", &tb.train), ("tune", &tb.tune), ("test", &tb.test)] {
        emit(Some(&a.out_dir.join(format!("{name}.trees"))), &write_trees(trees))?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Induce(a) => cmd_induce(a),
        Command::Descendants(a) => cmd_descendants(a),
        Command::Parse(a) => cmd_parse(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Generate(a) => cmd_generate(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_range_endpoints() {
        let v = parse_log_range("1:0.001:4").unwrap();
        assert_eq!(v.len(), 4);
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[3] - 0.001).abs() < 1e-12);
        assert!(parse_log_range("1:0").is_err());
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
