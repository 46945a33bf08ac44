//! The `phalanx` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 data validation (including I/O and
//! malformed inputs), 3 numerical failure.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::apf::{run_apf_with, ApfConfig, ApfResult, Evaluator, PhaseCounts, TraceRecord};
use crate::data::{load_dataset, make_folds, write_dataset, BlockedDataset, Delimiter, Schema};
use crate::document::ModelDocument;
use crate::ensemble::{build_em, rank_diagnostics};
use crate::error::Error;
use crate::metrics::{hit_curve, per_block, MetricSpec};
use crate::synthetic::{planted_pairs, PlantedConfig};

#[derive(Debug, Parser)]
#[command(name = "phalanx", version, about = "Phalanx-formation ensembles for rare-class ranking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Form phalanxes on labeled training data and write the model document.
    Train(TrainArgs),
    /// Score a dataset with a model document.
    Predict(PredictArgs),
    /// Block-averaged APR, RKL and TOP1 of predictions on labeled data.
    Eval(EvalArgs),
    /// Win/tie/loss table of two prediction files over rank quartiles.
    Diagnostics(DiagnosticsArgs),
    /// Write a planted-structure synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricChoice {
    Apr,
    Rkl,
    Emm,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Column roles: `kdd-train`, `block=1,case=2,label=3[,delim=comma]`, or
    /// a file holding such a list.
    #[arg(long, default_value = "kdd-train")]
    pub schema: String,
    #[arg(long, value_enum, default_value = "apr")]
    pub metric: MetricChoice,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long = "n-perm", default_value_t = 2000)]
    pub n_perm: usize,
    /// Reference quantile level; defaults to 0.95 for APR and 0.05 for RKL.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    pub ridge: f64,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub model: PathBuf,
    /// Line-delimited JSON log of every phase decision.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value = "kdd-test")]
    pub schema: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labeled dataset.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value = "kdd-train")]
    pub schema: String,
    /// Prediction file (block, case, probability) aligned with the dataset.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Print one line per block.
    #[arg(long)]
    pub per_block: bool,
    /// Directory for per-block hit-curve files.
    #[arg(long)]
    pub hit_curves: Option<PathBuf>,
    /// Exclude blocks without positives instead of failing.
    #[arg(long)]
    pub skip_empty_blocks: bool,
}

#[derive(Debug, Args)]
pub struct DiagnosticsArgs {
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value = "kdd-train")]
    pub schema: String,
    /// Exactly two prediction files: `a` then `b`.
    #[arg(long, num_args = 2, required = true)]
    pub predictions: Vec<PathBuf>,
    /// Table destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for per-block hit curves of both score vectors.
    #[arg(long)]
    pub hit_curves: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub blocks: usize,
    #[arg(long, default_value_t = 100)]
    pub block_size: usize,
    #[arg(long, default_value_t = 6)]
    pub noise: usize,
}

/// An error tagged with the stage that produced it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.error)
    }
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self.error {
            Error::InvalidArgument(_) | Error::Schema(_) => 1,
            Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for crate::Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

type CliResult<T> = std::result::Result<T, StageError>;

fn io_err(path: &Path, e: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let stdout = io::stdout();
    match execute(cli.command, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute<W: Write>(command: Command, out: &mut W) -> CliResult<()> {
    match command {
        Command::Train(args) => train(&args, out),
        Command::Predict(args) => predict(&args),
        Command::Eval(args) => eval(&args, out),
        Command::Diagnostics(args) => diagnostics(&args, out),
        Command::Synth(args) => synth(&args),
    }
}

fn thread_pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
        .stage("setup")
}

fn load(path: &Path, schema: &str, require_positive_blocks: bool) -> CliResult<BlockedDataset> {
    let mut schema = Schema::from_arg(schema).stage("schema")?;
    schema.require_positive_blocks = require_positive_blocks;
    load_dataset(path, &schema).stage("load")
}

#[derive(Serialize)]
struct TaggedRecord<'a> {
    metric: String,
    #[serde(flatten)]
    record: &'a TraceRecord,
}

pub fn train<W: Write>(args: &TrainArgs, out: &mut W) -> CliResult<()> {
    let metrics = match args.metric {
        MetricChoice::Apr => vec![MetricSpec::apr()],
        MetricChoice::Rkl => vec![MetricSpec::rkl()],
        MetricChoice::Emm => vec![MetricSpec::apr(), MetricSpec::rkl()],
    };
    let metrics = match args.alpha {
        None => metrics,
        Some(_) if metrics.len() > 1 => {
            return Err(Error::InvalidArgument("--alpha applies to a single metric, not emm".into()))
                .stage("arguments")
        }
        Some(a) => vec![metrics[0].with_alpha(a).stage("arguments")?],
    };
    let config = ApfConfig {
        folds: args.folds,
        n_perm: args.n_perm,
        seed: args.seed,
        ridge: args.ridge,
    };

    let ds = load(&args.train, &args.schema, true)?;
    let pool = thread_pool(args.jobs)?;
    let folds = make_folds(&ds, config.folds, config.seed).stage("folds")?;
    let eval = Evaluator::new(&ds, &folds, config.ridge);

    let results: Vec<ApfResult> = pool.install(|| {
        metrics
            .iter()
            .map(|m| run_apf_with(&eval, m, &config))
            .collect::<crate::Result<_>>()
            .stage("phalanx formation")
    })?;
    let ensembles = results
        .iter()
        .map(|r| build_em(&ds, r, config.ridge))
        .collect::<crate::Result<Vec<_>>>()
        .stage("ensemble fit")?;

    let doc = match ensembles.as_slice() {
        [one] => ModelDocument::em(one),
        [apr, rkl] => ModelDocument::emm(apr, rkl),
        _ => unreachable!(),
    };
    doc.write(&args.model).stage("write model")?;

    if let Some(path) = &args.trace {
        write_trace(path, &results).stage("write trace")?;
    }

    let w = |e| StageError {
        stage: "report",
        error: io_err(Path::new("<stdout>"), e),
    };
    writeln!(out, "{:<8}{:>8}{:>15}{:>11}{:>15}", "Metric", "Total", "Post-filtered", "Candidate", "Post-filtered").map_err(w)?;
    for r in &results {
        let c = r.counts();
        writeln!(out, "{:<8}{:>8}{:>15}{:>11}{:>15}", r.metric.id.to_string(), c.total, c.survivors, c.candidates, c.finals).map_err(w)?;
    }
    for r in &results {
        let phalanxes: Vec<String> = r.final_phase3.iter().map(|p| p.to_string()).collect();
        writeln!(out, "{} phalanxes: {}", r.metric.id, phalanxes.join(" ")).map_err(w)?;
        if r.degenerate {
            writeln!(out, "{} warning: every variable failed phase 1; best single variable retained", r.metric.id).map_err(w)?;
        }
    }
    Ok(())
}

fn write_trace(path: &Path, results: &[ApfResult]) -> crate::Result<()> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for r in results {
        for record in &r.trace {
            let line = serde_json::to_string(&TaggedRecord {
                metric: r.metric.id.to_string(),
                record,
            })
            .expect("trace record serializes");
            writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a trace file back, grouped by metric name in file order.
pub fn read_trace(path: &Path) -> crate::Result<Vec<(String, Vec<TraceRecord>)>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut groups: Vec<(String, Vec<TraceRecord>)> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: m,
        };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        let metric = value
            .get("metric")
            .and_then(|m| m.as_str())
            .ok_or_else(|| parse("missing metric".into()))?
            .to_string();
        let record: TraceRecord = serde_json::from_value(value).map_err(|e| parse(e.to_string()))?;
        match groups.last_mut() {
            Some((m, recs)) if *m == metric => recs.push(record),
            _ => groups.push((metric, vec![record])),
        }
    }
    Ok(groups)
}

/// Formats probabilities the way prediction files store them.
pub fn format_probability(p: f64) -> String {
    format!("{p:.6}")
}

pub fn write_predictions(path: &Path, ds: &BlockedDataset, probs: &[f64], delimiter: Delimiter) -> crate::Result<()> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let sep = delimiter.separator();
    for (row, p) in probs.iter().enumerate() {
        writeln!(
            w,
            "{}{sep}{}{sep}{}",
            ds.block_key_of_row(row),
            ds.case_label(row),
            format_probability(*p)
        )
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a prediction file and checks it row by row against `ds`.
pub fn read_predictions(path: &Path, ds: &BlockedDataset) -> crate::Result<Vec<f64>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut probs = Vec::with_capacity(ds.n_cases());
    let mut row = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: m,
        };
        let fields: Vec<&str> = if line.contains(',') {
            line.split(',').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        if fields.len() != 3 {
            return Err(parse(format!("expected 3 columns, found {}", fields.len())));
        }
        if row >= ds.n_cases() {
            return Err(Error::Validation(format!(
                "{}: more predictions than dataset rows ({})",
                path.display(),
                ds.n_cases()
            )));
        }
        if fields[0] != ds.block_key_of_row(row) || fields[1] != ds.case_label(row) {
            return Err(Error::Validation(format!(
                "{}:{}: prediction for ({}, {}) does not match dataset row ({}, {})",
                path.display(),
                i + 1,
                fields[0],
                fields[1],
                ds.block_key_of_row(row),
                ds.case_label(row)
            )));
        }
        let p: f64 = fields[2]
            .parse()
            .map_err(|_| parse(format!("not a probability: {:?}", fields[2])))?;
        if !p.is_finite() {
            return Err(parse(format!("non-finite probability {:?}", fields[2])));
        }
        probs.push(p);
        row += 1;
    }
    if row != ds.n_cases() {
        return Err(Error::Validation(format!(
            "{}: {row} predictions for {} dataset rows",
            path.display(),
            ds.n_cases()
        )));
    }
    Ok(probs)
}

pub fn predict(args: &PredictArgs) -> CliResult<()> {
    let schema = Schema::from_arg(&args.schema).stage("schema")?;
    let mut load_schema = schema.clone();
    load_schema.require_positive_blocks = false;
    let ds = load_dataset(&args.test, &load_schema).stage("load")?;
    let doc = ModelDocument::read(&args.model).stage("read model")?;
    let pool = thread_pool(args.jobs)?;
    let probs = pool.install(|| doc.predict(&ds)).stage("predict")?;
    write_predictions(&args.out, &ds, probs.values(), schema.delimiter).stage("write predictions")
}

/// Probabilities as they would read back from a prediction file.
fn quantized(probs: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .map(|&p| format_probability(p).parse().expect("formatted float parses"))
        .collect()
}

/// Block-averaged metric values for `scores`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalSummary {
    pub blocks: usize,
    pub apr: f64,
    pub rkl: f64,
    pub top1: f64,
}

pub fn evaluate(ds: &BlockedDataset, scores: &[f64]) -> crate::Result<(EvalSummary, [Vec<f64>; 3])> {
    let apr = per_block(ds, scores, &MetricSpec::apr())?;
    let rkl = per_block(ds, scores, &MetricSpec::rkl())?;
    let top1 = per_block(ds, scores, &MetricSpec::top1())?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok((
        EvalSummary {
            blocks: ds.n_blocks(),
            apr: mean(&apr),
            rkl: mean(&rkl),
            top1: mean(&top1),
        },
        [apr, rkl, top1],
    ))
}

fn block_file_name(key: &str) -> String {
    key.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn write_hit_curves(dir: &Path, ds: &BlockedDataset, scores: &[f64], suffix: &str) -> crate::Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let y = ds.require_labels()?;
    for (b, rows) in ds.block_rows().iter().enumerate() {
        let labels: Vec<u8> = rows.iter().map(|&r| y[r]).collect();
        let s: Vec<f64> = rows.iter().map(|&r| scores[r]).collect();
        let curve = hit_curve(&labels, &s)?;
        let path = dir.join(format!("{}{suffix}.tsv", block_file_name(&ds.block_keys()[b])));
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        curve
            .write_tsv(BufWriter::new(file))
            .map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// Drops blocks without positives from both the dataset and the scores.
fn without_empty_blocks(ds: &BlockedDataset, scores: &[f64]) -> crate::Result<(BlockedDataset, Vec<f64>, Vec<String>)> {
    let empty = ds.empty_blocks();
    if empty.is_empty() {
        return Ok((ds.clone(), scores.to_vec(), empty));
    }
    let keep: Vec<usize> = (0..ds.n_blocks())
        .filter(|&b| ds.positives_in_block(b).unwrap_or(0) > 0)
        .collect();
    if keep.is_empty() {
        return Err(Error::Validation("no block has a positive case".into()));
    }
    let sub = ds.select_blocks(&keep)?;
    let kept: Vec<f64> = (0..ds.n_cases())
        .filter(|&r| ds.positives_in_block(ds.block_of_row()[r]).unwrap_or(0) > 0)
        .map(|r| scores[r])
        .collect();
    Ok((sub, kept, empty))
}

pub fn eval<W: Write>(args: &EvalArgs, out: &mut W) -> CliResult<()> {
    let ds = load(&args.test, &args.schema, false)?;
    ds.require_labels().stage("load")?;
    let scores = match (&args.predictions, &args.model) {
        (Some(p), _) => read_predictions(p, &ds).stage("read predictions")?,
        (None, Some(m)) => {
            let doc = ModelDocument::read(m).stage("read model")?;
            quantized(doc.predict(&ds).stage("predict")?.values())
        }
        (None, None) => {
            return Err(Error::InvalidArgument("need --predictions or --model".into())).stage("arguments")
        }
    };
    let (ds, scores, skipped) = if args.skip_empty_blocks {
        without_empty_blocks(&ds, &scores).stage("evaluate")?
    } else {
        ds.check_positive_blocks().stage("evaluate")?;
        (ds, scores, Vec::new())
    };
    for key in &skipped {
        eprintln!("skipping block {key}: no positive cases");
    }

    let (summary, per) = evaluate(&ds, &scores).stage("evaluate")?;
    let w = |e| StageError {
        stage: "report",
        error: io_err(Path::new("<stdout>"), e),
    };
    if args.per_block {
        writeln!(out, "block\tcases\tpositives\tAPR\tRKL\tTOP1").map_err(w)?;
        for b in 0..ds.n_blocks() {
            writeln!(
                out,
                "{}\t{}\t{}\t{:.5}\t{}\t{}",
                ds.block_keys()[b],
                ds.block_rows()[b].len(),
                ds.positives_in_block(b).unwrap_or(0),
                per[0][b],
                per[1][b],
                per[2][b]
            )
            .map_err(w)?;
        }
    }
    writeln!(out, "blocks\t{}", summary.blocks).map_err(w)?;
    writeln!(out, "APR\t{:.5}", summary.apr).map_err(w)?;
    writeln!(out, "RKL\t{:.3}", summary.rkl).map_err(w)?;
    writeln!(out, "TOP1\t{:.4}", summary.top1).map_err(w)?;

    if let Some(dir) = &args.hit_curves {
        write_hit_curves(dir, &ds, &scores, "").stage("hit curves")?;
    }
    Ok(())
}

pub fn diagnostics<W: Write>(args: &DiagnosticsArgs, out: &mut W) -> CliResult<()> {
    if args.predictions.len() != 2 {
        return Err(Error::InvalidArgument("diagnostics needs exactly two prediction files".into()))
            .stage("arguments");
    }
    let ds = load(&args.test, &args.schema, true)?;
    let a = read_predictions(&args.predictions[0], &ds).stage("read predictions")?;
    let b = read_predictions(&args.predictions[1], &ds).stage("read predictions")?;
    let diag = rank_diagnostics(&ds, &a, &b).stage("diagnostics")?;
    match &args.out {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| io_err(path, e)).stage("write table")?;
            diag.write_tsv(BufWriter::new(file))
                .map_err(|e| io_err(path, e))
                .stage("write table")?;
        }
        None => diag
            .write_tsv(&mut *out)
            .map_err(|e| io_err(Path::new("<stdout>"), e))
            .stage("report")?,
    }
    if let Some(dir) = &args.hit_curves {
        write_hit_curves(dir, &ds, &a, ".a").stage("hit curves")?;
        write_hit_curves(dir, &ds, &b, ".b").stage("hit curves")?;
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    if args.blocks == 0 || args.block_size == 0 {
        return Err(Error::InvalidArgument("blocks and block size must be positive".into())).stage("arguments");
    }
    let config = PlantedConfig {
        n_blocks: args.blocks,
        block_size: args.block_size,
        n_noise: args.noise,
        ..PlantedConfig::default()
    };
    let ds = planted_pairs(&config, args.seed);
    write_dataset(&ds, &args.out, &Schema::kdd_train()).stage("write dataset")
}

/// Counts recoverable from a trace, per metric.
pub fn trace_counts(path: &Path) -> crate::Result<Vec<(String, PhaseCounts)>> {
    Ok(read_trace(path)?
        .into_iter()
        .map(|(m, recs)| (m, PhaseCounts::from_trace(&recs)))
        .collect())
}
