//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 runtime failure. Results go to stdout or `--out`; diagnostics go to
//! stderr and are never colored.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::lexicon::{load_lexicon, BuiltinSet, Category, KeywordSet};
use crate::loss::{loss_and_gradient, weighted_cross_entropy, LossInput};
use crate::reporteval::{extract_labels, score_reports, DEFAULT_MAX_REPORT_TOKENS};
use crate::spanmap::{find_keyword_spans, match_tokens};
use crate::sweep::{
    comparison_table, parse_sweep_config, relative_gain, run_sweep, SetChoice, SweepGrid, DEFAULT_TEST_SHARE,
};
use crate::tokenizer::{tokenize, Vocabulary};
use crate::trainer::{
    corpus_vocab, generate_corpus, read_corpus, subset_fraction, train, write_corpus, GoldLabels, ModelDims,
    SynthSample, TinyLM, TrainConfig, DEFAULT_VOCAB_SIZE,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "keyweight",
    version,
    about = "Keyword-weighted cross-entropy for clinical report generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Show or check keyword lexicons.
    #[command(subcommand)]
    Lexicon(LexiconCmd),
    /// Train a subword vocabulary.
    #[command(subcommand)]
    Vocab(VocabCmd),
    /// Tokenize text and print `index start end piece` lines.
    Tokenize(TokenizeArgs),
    /// Print keyword matches as `start end keyword token_indices`.
    Match(MatchArgs),
    /// Evaluate the weighted loss on a text-matrix file.
    Loss(LossArgs),
    /// Write a synthetic report corpus.
    GenData(GenDataArgs),
    /// Train a model on a corpus and write a checkpoint.
    Train(TrainArgs),
    /// Generate reports for every prompt in a corpus.
    Generate(GenerateArgs),
    /// Grade predicted reports against gold labels.
    Eval(EvalArgs),
    /// Run a cross-validated hyperparameter sweep.
    Sweep(SweepArgs),
    /// Build the standard-versus-weighted comparison table.
    Table(TableArgs),
    /// Relative gain of a weighted score over a baseline.
    Gain(GainArgs),
}

#[derive(Debug, Subcommand)]
enum LexiconCmd {
    /// Print one keyword per line.
    Show {
        #[command(flatten)]
        set: SetArgs,
        /// Also print the category of each keyword.
        #[arg(long)]
        categories: bool,
    },
    /// Validate a lexicon file.
    Check { file: PathBuf },
}

#[derive(Debug, Subcommand)]
enum VocabCmd {
    /// Learn merges from the prompts and reports of a corpus file.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
        size: usize,
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Debug, Args)]
struct SetArgs {
    /// Builtin keyword set: diagnostic, quantitative, combined or none.
    #[arg(long, default_value = "combined")]
    set: String,
    /// Lexicon file overriding `--set`.
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OutArg {
    /// Write results here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VocabArg {
    /// Vocabulary file; defaults to one learned from a generated corpus.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TokenizeArgs {
    #[arg(long)]
    text: String,
    #[command(flatten)]
    vocab: VocabArg,
}

#[derive(Debug, Args)]
struct MatchArgs {
    #[arg(long)]
    text: String,
    #[command(flatten)]
    set: SetArgs,
    #[command(flatten)]
    vocab: VocabArg,
}

#[derive(Debug, Args)]
struct LossArgs {
    file: PathBuf,
    /// Also print the gradient matrix.
    #[arg(long)]
    grad: bool,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 4000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    vocab: VocabArg,
    #[command(flatten)]
    set: SetArgs,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.3)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    lr_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    #[arg(long, default_value_t = 8)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_REPORT_TOKENS)]
    max_len: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Corpus-format file whose report column holds predictions.
    #[arg(long)]
    pred: PathBuf,
    /// Corpus-format file with gold labels.
    #[arg(long)]
    gold: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// `key = value` sweep config; defaults to the standard grid.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct TableArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Keyword set for the weighted runs.
    #[arg(long, default_value = "combined")]
    set: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = DEFAULT_TEST_SHARE)]
    test_share: f64,
    /// Per-trial log path.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct GainArgs {
    #[arg(long)]
    weighted: f64,
    #[arg(long)]
    baseline: f64,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn emit(out: &OutArg, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &out.out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display()))),
        None => stdout.write_all(text.as_bytes()).map_err(runtime),
    }
}

fn resolve_set(args: &SetArgs, stderr: &mut dyn Write) -> Result<Option<KeywordSet>, CliError> {
    if let Some(path) = &args.lexicon {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("custom");
        let loaded = load_lexicon(name, &read(path)?).map_err(data)?;
        for w in &loaded.warnings {
            let _ = writeln!(stderr, "warning: {w}");
        }
        return Ok(Some(loaded.set));
    }
    let choice: SetChoice = args.set.parse().map_err(|e| CliError::Usage(format!("--set: {e}")))?;
    Ok(choice.lexicon())
}

/// Vocabulary learned from a fixed generated corpus, used when no `--vocab`
/// file is given.
pub fn default_vocab() -> Vocabulary {
    corpus_vocab(&generate_corpus(1000, 0), DEFAULT_VOCAB_SIZE).expect("generated corpus is non-empty")
}

fn load_vocab(arg: &VocabArg) -> Result<Vocabulary, CliError> {
    match &arg.vocab {
        Some(p) => Vocabulary::from_file_str(&read(p)?).map_err(data),
        None => Ok(default_vocab()),
    }
}

fn load_corpus(path: &Path) -> Result<Vec<SynthSample>, CliError> {
    read_corpus(&read(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_grid(config: &Option<PathBuf>, seed: Option<u64>) -> Result<SweepGrid, CliError> {
    let mut grid = match config {
        Some(p) => parse_sweep_config(&read(p)?).map_err(data)?,
        None => SweepGrid::default(),
    };
    if let Some(s) = seed {
        grid.base.seed = s;
    }
    Ok(grid)
}

fn run(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Lexicon(LexiconCmd::Show { set, categories }) => {
            let Some(kw) = resolve_set(&set, stderr)? else {
                return Ok(());
            };
            let mut text = String::new();
            for k in kw.iter() {
                if categories {
                    text.push_str(&format!("{}\t{}\n", k.surface(), k.category()));
                } else {
                    text.push_str(k.surface());
                    text.push('\n');
                }
            }
            stdout.write_all(text.as_bytes()).map_err(runtime)
        }
        Command::Lexicon(LexiconCmd::Check { file }) => {
            let name = file
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("custom")
                .to_string();
            let loaded = load_lexicon(&name, &read(&file)?).map_err(data)?;
            for w in &loaded.warnings {
                let _ = writeln!(stderr, "warning: {w}");
            }
            let count = |c: Category| loaded.set.iter().filter(|k| k.category() == c).count();
            writeln!(
                stdout,
                "keywords={} diagnostic={} quantitative={} warnings={}",
                loaded.set.len(),
                count(Category::Diagnostic),
                count(Category::Quantitative),
                loaded.warnings.len()
            )
            .map_err(runtime)
        }
        Command::Vocab(VocabCmd::Train { corpus, size, out }) => {
            let samples = load_corpus(&corpus)?;
            let vocab = corpus_vocab(&samples, size).map_err(data)?;
            emit(&out, &vocab.to_file_string(), stdout)
        }
        Command::Tokenize(args) => {
            let vocab = load_vocab(&args.vocab)?;
            let seq = tokenize(&args.text, &vocab);
            let mut text = String::new();
            for (i, (id, span)) in seq.ids().iter().zip(seq.spans()).enumerate() {
                let piece = vocab
                    .piece(*id)
                    .unwrap_or("<unk>")
                    .replace('\t', "\\t")
                    .replace('\n', "\\n");
                text.push_str(&format!("{i}\t{}\t{}\t{id}\t{piece:?}\n", span.start, span.end));
            }
            stdout.write_all(text.as_bytes()).map_err(runtime)
        }
        Command::Match(args) => {
            let Some(kw) = resolve_set(&args.set, stderr)? else {
                return Ok(());
            };
            let vocab = load_vocab(&args.vocab)?;
            let seq = tokenize(&args.text, &vocab);
            let matches = match_tokens(&find_keyword_spans(&args.text, &kw), &seq).map_err(data)?;
            let text: String = matches.iter().map(|m| format!("{m}\n")).collect();
            stdout.write_all(text.as_bytes()).map_err(runtime)
        }
        Command::Loss(args) => {
            let input = LossInput::parse(&read(&args.file)?).map_err(data)?;
            let mut text = String::new();
            if args.grad {
                let r = loss_and_gradient(&input.logits, &input.targets, &input.weights).map_err(data)?;
                text.push_str(&format!("value={}\n", r.value));
                for row in r.gradient.expect("requested").outer_iter() {
                    let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                    text.push_str(&cells.join(" "));
                    text.push('\n');
                }
            } else {
                let r = weighted_cross_entropy(&input.logits, &input.targets, &input.weights).map_err(data)?;
                text.push_str(&format!("value={}\n", r.value));
            }
            stdout.write_all(text.as_bytes()).map_err(runtime)
        }
        Command::GenData(args) => {
            if args.n == 0 {
                return Err(CliError::Data("--n must be positive".into()));
            }
            emit(&args.out, &write_corpus(&generate_corpus(args.n, args.seed)), stdout)
        }
        Command::Train(args) => {
            let lexicon = resolve_set(&args.set, stderr)?;
            let corpus = load_corpus(&args.corpus)?;
            let config = TrainConfig {
                learning_rate: args.lr,
                lr_scale: args.lr_scale,
                gamma: if lexicon.is_some() { args.gamma } else { 1.0 },
                keyword_set: lexicon.as_ref().map_or("none".to_string(), |k| k.name().to_string()),
                data_fraction: args.fraction,
                epochs: args.epochs,
                batch_size: args.batch,
                seed: args.seed,
                dims: ModelDims::default(),
            };
            config.validate().map_err(data)?;
            let subset = subset_fraction(&corpus, args.fraction, args.seed).map_err(data)?;
            let vocab = match &args.vocab.vocab {
                Some(_) => load_vocab(&args.vocab)?,
                None => corpus_vocab(&corpus, DEFAULT_VOCAB_SIZE).map_err(data)?,
            };
            let run = train(&subset, Arc::new(vocab), lexicon.as_ref(), &config).map_err(runtime)?;
            fs::write(&args.out, run.model.to_checkpoint())
                .map_err(|e| CliError::Runtime(format!("{}: {e}", args.out.display())))?;
            let mut text = format!("samples={}\ninitial_loss={}\n", subset.len(), run.initial_loss);
            for (i, l) in run.epoch_losses.iter().enumerate() {
                text.push_str(&format!("epoch={} loss={l}\n", i + 1));
            }
            stdout.write_all(text.as_bytes()).map_err(runtime)
        }
        Command::Generate(args) => {
            let model = TinyLM::from_checkpoint(&read(&args.model)?).map_err(data)?;
            let corpus = load_corpus(&args.corpus)?;
            let preds: Vec<SynthSample> = corpus
                .iter()
                .map(|s| {
                    let report = model.generate(&s.prompt, args.max_len);
                    let (stage, biomarkers) = extract_labels(&report);
                    SynthSample {
                        prompt: s.prompt.clone(),
                        report,
                        labels: GoldLabels { stage, biomarkers },
                        seed: s.seed,
                    }
                })
                .collect();
            emit(&args.out, &write_corpus(&preds), stdout)
        }
        Command::Eval(args) => {
            let preds = load_corpus(&args.pred)?;
            let golds = load_corpus(&args.gold)?;
            let reports: Vec<String> = preds.into_iter().map(|s| s.report).collect();
            let score = score_reports(&reports, &golds).map_err(data)?;
            let mut text = format!("amd_f1={}\nbiomarker_f1={}\n", score.amd_f1, score.biomarker_f1);
            for c in &score.stage_report.per_class {
                text.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    c.class, c.precision, c.recall, c.f1, c.support
                ));
            }
            emit(&args.out, &text, stdout)
        }
        Command::Sweep(args) => {
            let grid = load_grid(&args.config, args.seed)?;
            let corpus = load_corpus(&args.corpus)?;
            let vocab = Arc::new(corpus_vocab(&corpus, DEFAULT_VOCAB_SIZE).map_err(data)?);
            let results = run_sweep(&grid, &corpus, vocab, grid.base.seed, args.jobs).map_err(runtime)?;
            let text: String = results.iter().map(|r| r.log_line() + "\n").collect();
            emit(&args.out, &text, stdout)
        }
        Command::Table(args) => {
            let grid = load_grid(&args.config, args.seed)?;
            let set: BuiltinSet = args.set.parse().map_err(|e| CliError::Usage(format!("--set: {e}")))?;
            let corpus = load_corpus(&args.corpus)?;
            let table =
                comparison_table(&corpus, &grid, set, args.test_share, grid.base.seed, args.jobs).map_err(runtime)?;
            if let Some(log) = &args.log {
                fs::write(log, table.trial_log()).map_err(|e| CliError::Runtime(format!("{}: {e}", log.display())))?;
            }
            emit(&args.out, &table.to_tsv(), stdout)
        }
        Command::Gain(args) => {
            let g = relative_gain(args.weighted, args.baseline).map_err(data)?;
            writeln!(stdout, "gain={g}").map_err(runtime)
        }
    }
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code.
pub fn dispatch<I, S>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = stderr.write_all(text.as_bytes());
                1
            } else {
                // --help and --version
                let _ = stdout.write_all(text.as_bytes());
                0
            };
        }
    };
    match run(cli.command, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    dispatch(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
