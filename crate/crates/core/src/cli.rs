//! The `prelex` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 numeric
//! failure (non-finite loss, failed gradient check). Progress goes to
//! standard error; machine-readable results only to the files named by
//! `--out` (and `--relative-out`).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::corpus::{load_dataset, load_embeddings, DatasetKind, EmbeddingMatrix, RawSplit};
use crate::error::Error;
use crate::gradsuite;
use crate::lexicon::{
    curve_to_csv, parse_grid, precision_curve, relative_curve, similarity_curve, HandLexicon, RankedLexicon,
};
use crate::model::Variant;
use crate::preattention::vocab_attention_table;
use crate::training::{evaluate, train, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

const DEFAULT_GRID: &str = "0.5,0.6,0.7,0.8,0.9";

#[derive(Parser, Debug)]
#[command(name = "prelex", version, about = "Pre-attention text classification and lexicon analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load and split a dataset, writing the tokenized splits and vocabulary
    Prepare(PrepareArgs),
    /// Train a model and write a checkpoint directory
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split
    Eval(EvalArgs),
    /// Export the attention-ranked vocabulary of a checkpoint as TSV
    LexiconExtract(ExtractArgs),
    /// Overlap curve y(p) between two ranked lexicons
    LexiconCompare(CompareArgs),
    /// Precision curve L(p) of a ranked lexicon against a hand lexicon
    LexiconPrecision(PrecisionArgs),
    /// Run the gradient-check suite
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset root directory
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "mr")]
    dataset: DatasetKind,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    #[command(flatten)]
    data: DataArgs,
    /// JSON config (only `max_len`, `min_count`, `seed` and `class_files` are used)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    /// word2vec text-format vectors; random initialization when absent
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSON config supplying `class_files`, if the dataset needs them
    #[arg(long)]
    config: Option<PathBuf>,
    /// Split seed; defaults to the seed the checkpoint was trained with
    #[arg(long)]
    seed: Option<u64>,
    /// Write the evaluation report as JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value = DEFAULT_GRID)]
    grid: String,
    /// CSV of y(p)
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV of Y(p) = y(p) / (1 - p)
    #[arg(long)]
    relative_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PrecisionArgs {
    /// Ranked lexicon (TSV)
    #[arg(long)]
    a: PathBuf,
    /// Hand lexicon, one entry per line
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long, default_value = DEFAULT_GRID)]
    grid: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parse `argv` (program name first) and run the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Numeric(_) => EXIT_NUMERIC,
                _ => EXIT_DATA,
            }
        }
    }
}

fn dispatch(command: Command) -> CliResult<i32> {
    match command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::LexiconExtract(a) => extract(a),
        Command::LexiconCompare(a) => compare(a),
        Command::LexiconPrecision(a) => precision(a),
        Command::GradCheck(a) => grad_check_cmd(a),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Failure::Lib(Error::io(path, e)))
}

/// A config file split into the dataset keys the CLI owns and the rest.
struct FileConfig {
    train: serde_json::Map<String, serde_json::Value>,
    class_files: Option<Vec<String>>,
    dataset: Option<DatasetKind>,
}

fn read_config(path: Option<&Path>) -> CliResult<FileConfig> {
    let mut map = serde_json::Map::new();
    if let Some(path) = path {
        let text = fs::read_to_string(path).map_err(|e| Failure::Lib(Error::io(path, e)))?;
        match serde_json::from_str(&text) {
            Ok(serde_json::Value::Object(m)) => map = m,
            Ok(_) => return Err(Failure::Usage(format!("{}: config must be a JSON object", path.display()))),
            Err(e) => return Err(Failure::Usage(format!("{}: {e}", path.display()))),
        }
    }
    let class_files = match map.remove("class_files") {
        Some(v) => Some(
            serde_json::from_value::<Vec<String>>(v)
                .map_err(|e| Failure::Usage(format!("class_files: {e}")))?,
        ),
        None => None,
    };
    let dataset = match map.remove("dataset") {
        Some(v) => Some(
            serde_json::from_value::<DatasetKind>(v).map_err(|e| Failure::Usage(format!("dataset: {e}")))?,
        ),
        None => None,
    };
    Ok(FileConfig {
        train: map,
        class_files,
        dataset,
    })
}

fn resolve_config(
    mut file: serde_json::Map<String, serde_json::Value>,
    dataset: DatasetKind,
    variant: Option<Variant>,
    seed: Option<u64>,
) -> CliResult<TrainConfig> {
    if let Some(v) = variant {
        file.insert("variant".into(), serde_json::Value::String(v.to_string()));
    }
    if let Some(s) = seed {
        file.insert("seed".into(), s.into());
    }
    file.entry("max_len").or_insert_with(|| dataset.default_max_len().into());
    TrainConfig::from_json_value(serde_json::Value::Object(file)).map_err(|e| Failure::Usage(e.to_string()))
}

fn dataset_kind(args: &DataArgs, file: &FileConfig) -> CliResult<DatasetKind> {
    match file.dataset {
        Some(d) if d != args.dataset => Err(Failure::Usage(format!(
            "config names dataset {d} but --dataset is {}",
            args.dataset
        ))),
        _ => Ok(args.dataset),
    }
}

fn load_raw(args: &DataArgs, class_files: Option<&[String]>, seed: u64) -> CliResult<RawSplit> {
    let raw = load_dataset(args.dataset, &args.data, class_files, seed)?;
    eprintln!(
        "{}: train {} / test {} / dev {}",
        args.dataset,
        raw.train.len(),
        raw.test.len(),
        raw.dev.len()
    );
    Ok(raw)
}

fn prepare(a: PrepareArgs) -> CliResult<i32> {
    let file = read_config(a.config.as_deref())?;
    let kind = dataset_kind(&a.data, &file)?;
    let config = resolve_config(file.train, kind, None, a.seed)?;
    let raw = load_raw(&a.data, file.class_files.as_deref(), config.seed)?;
    let (vocab, _) = raw.encode(config.min_count, config.max_len)?;
    let (ref_train, ref_test, ref_dev) = kind.expected_sizes();
    eprintln!(
        "vocabulary {} tokens (training split); reference split {ref_train}/{ref_test}/{ref_dev}",
        vocab.len()
    );
    fs::create_dir_all(&a.out).map_err(|e| Failure::Lib(Error::io(&a.out, e)))?;
    let mut vocab_text = String::new();
    for t in vocab.tokens() {
        writeln!(vocab_text, "{t}").expect("write to string");
    }
    write_file(&a.out.join("vocab.txt"), vocab_text)?;
    for (name, part) in [("train", &raw.train), ("dev", &raw.dev), ("test", &raw.test)] {
        let mut text = String::new();
        for e in part {
            writeln!(text, "{}\t{}", e.label, e.tokens.join(" ")).expect("write to string");
        }
        write_file(&a.out.join(format!("{name}.tsv")), text)?;
    }
    let summary = serde_json::json!({
        "dataset": kind,
        "seed": config.seed,
        "train": raw.train.len(),
        "dev": raw.dev.len(),
        "test": raw.test.len(),
        "vocab_size": vocab.len(),
        "vocab_fingerprint": vocab.fingerprint(),
    });
    let mut json = serde_json::to_string_pretty(&summary).map_err(Error::from)?;
    json.push('\n');
    write_file(&a.out.join("summary.json"), json)?;
    Ok(EXIT_OK)
}

fn train_cmd(a: TrainArgs) -> CliResult<i32> {
    let file = read_config(a.config.as_deref())?;
    let kind = dataset_kind(&a.data, &file)?;
    let config = resolve_config(file.train, kind, a.variant, a.seed)?;
    let raw = load_raw(&a.data, file.class_files.as_deref(), config.seed)?;
    let (vocab, split) = raw.encode(config.min_count, config.max_len)?;
    let mut emb_rng = ChaCha8Rng::seed_from_u64(config.seed);
    emb_rng.set_stream(1);
    let embeddings = match &a.embeddings {
        Some(path) => {
            let m = load_embeddings(path, &vocab, config.embedding_dim, &mut emb_rng)?;
            eprintln!("embeddings: {:.1}% of the vocabulary covered", 100.0 * m.coverage());
            m
        }
        None => EmbeddingMatrix::random(vocab.len(), config.embedding_dim, &mut emb_rng)?,
    };
    eprintln!(
        "training {} on {} examples, vocabulary {}, dimension {}",
        config.variant,
        split.train.len(),
        vocab.len(),
        config.embedding_dim
    );
    let ck = train(&config, &split, &vocab, &embeddings, &mut |r| {
        eprintln!(
            "epoch={} train_loss={:.6} dev_accuracy={:.6}",
            r.epoch, r.train_loss, r.dev_accuracy
        );
    })?;
    checkpoint::save(&ck, &a.out)?;
    eprintln!(
        "best epoch {} (dev accuracy {:.4}); checkpoint written to {}",
        ck.best_epoch,
        ck.best_dev_accuracy(),
        a.out.display()
    );
    Ok(EXIT_OK)
}

fn eval_cmd(a: EvalArgs) -> CliResult<i32> {
    let ck = checkpoint::load(&a.checkpoint)?;
    let file = read_config(a.config.as_deref())?;
    dataset_kind(&a.data, &file)?;
    let seed = a.seed.unwrap_or(ck.config.seed);
    let raw = load_raw(&a.data, file.class_files.as_deref(), seed)?;
    let split = raw.encode_with(&ck.vocabulary, ck.config.max_len);
    let report = evaluate(&ck, &ck.vocabulary, &split.test)?;
    eprintln!(
        "test accuracy {:.4} ({}/{}), mean loss {:.6}",
        report.accuracy, report.correct, report.total, report.loss
    );
    if let Some(out) = &a.out {
        let mut json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
        json.push('\n');
        write_file(out, json)?;
    }
    Ok(EXIT_OK)
}

fn extract(a: ExtractArgs) -> CliResult<i32> {
    let ck = checkpoint::load(&a.checkpoint)?;
    let params = ck.model.pre_attention.as_ref().ok_or_else(|| {
        Failure::Lib(Error::invalid_state(format!(
            "checkpoint variant {} has no pre-attention layer",
            ck.config.variant
        )))
    })?;
    let table = vocab_attention_table(&ck.embeddings, params)?;
    write_file(&a.out, table.to_tsv(&ck.vocabulary)?)?;
    eprintln!("{} ranked tokens written to {}", ck.vocabulary.len() - 2, a.out.display());
    Ok(EXIT_OK)
}

fn grid(text: &str) -> CliResult<Vec<f64>> {
    parse_grid(text).map_err(|e| Failure::Usage(e.to_string()))
}

fn compare(a: CompareArgs) -> CliResult<i32> {
    let grid = grid(&a.grid)?;
    let la = RankedLexicon::read_tsv(&a.a)?;
    let lb = RankedLexicon::read_tsv(&a.b)?;
    let y = similarity_curve(&la, &lb, &grid)?;
    write_file(&a.out, curve_to_csv(&y))?;
    let rel = relative_curve(&y)?;
    if let Some(path) = &a.relative_out {
        write_file(path, curve_to_csv(&rel))?;
    }
    for (s, r) in y.iter().zip(&rel) {
        eprintln!("p={} y={:.6} Y={:.6}", s.p, s.value, r.value);
    }
    Ok(EXIT_OK)
}

fn precision(a: PrecisionArgs) -> CliResult<i32> {
    let grid = grid(&a.grid)?;
    let lex = RankedLexicon::read_tsv(&a.a)?;
    let hand = HandLexicon::read(&a.lexicon)?;
    let curve = precision_curve(&lex, &hand, &grid)?;
    write_file(&a.out, curve_to_csv(&curve))?;
    for c in &curve {
        eprintln!("p={} L={:.6}", c.p, c.value);
    }
    Ok(EXIT_OK)
}

fn grad_check_cmd(a: GradCheckArgs) -> CliResult<i32> {
    let results = gradsuite::run_suite(a.seed, 10)?;
    let mut all = true;
    for r in &results {
        eprintln!(
            "{:<26} {:>2}/{:<2} passed  max relative error {:.3e}{}",
            r.name,
            r.passed,
            r.instances,
            r.max_error,
            r.failure.as_deref().map(|f| format!("  ({f})")).unwrap_or_default()
        );
        all &= r.ok();
    }
    if all {
        eprintln!("gradient checks passed");
        Ok(EXIT_OK)
    } else {
        eprintln!("gradient checks FAILED");
        Ok(EXIT_NUMERIC)
    }
}
