//! Hyperparameter sweeps with k-fold cross-validation, held-out comparison
//! tables, and relative-gain arithmetic.
//!
//! A sweep enumerates `(fraction, keyword set, learning rate, gamma)` cells.
//! Each cell trains `k` models on `k - 1` folds of the data subset and scores
//! generated reports on the held-out fold. Trials rank by the mean of AMD F1
//! and biomarker F1.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::lexicon::{builtin, BuiltinSet, KeywordSet, LexiconError};
use crate::reporteval::{score_model, AmdStage, EvalError};
use crate::tokenizer::{TokenizerError, Vocabulary};
use crate::trainer::{
    corpus_vocab, keyword_nll, stratified_order, subset_indices, train, CorpusError, SynthSample, TrainConfig,
    DEFAULT_VOCAB_SIZE,
};

pub const GRID_LEARNING_RATES: [f64; 4] = [6.5e-5, 1e-4, 2.15e-4, 6.5e-4];
pub const GRID_GAMMAS: [f64; 3] = [2.0, 3.5, 6.0];
pub const DEFAULT_FOLDS: usize = 4;
/// SGD step multiplier for the grid's nominal rates on the desk-scale model.
pub const DEFAULT_LR_SCALE: f64 = 3000.0;
/// Share of the corpus held out as the test split in [`comparison_table`].
pub const DEFAULT_TEST_SHARE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("cannot split {n} samples into {k} folds")]
    TooFewSamples { n: usize, k: usize },
    #[error("no successful trial among {0}")]
    AllFailed(usize),
    #[error("baseline score {0} must be positive")]
    NonPositiveBaseline(f64),
    #[error("sweep config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("test index {0} also appears in a training subset")]
    Leak(usize),
    #[error("no keyword set chosen for the weighted runs")]
    NoWeightedSet,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error("training failed: {0}")]
    Train(String),
}

/// A keyword set choice in a grid. `None` means the standard loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SetChoice {
    None,
    Builtin(BuiltinSet),
}

impl SetChoice {
    pub fn lexicon(self) -> Option<KeywordSet> {
        match self {
            SetChoice::None => None,
            SetChoice::Builtin(b) => Some(builtin(b)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SetChoice::None => "none",
            SetChoice::Builtin(b) => b.as_str(),
        }
    }
}

impl fmt::Display for SetChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SetChoice {
    type Err = LexiconError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("none") {
            Ok(SetChoice::None)
        } else {
            s.parse().map(SetChoice::Builtin)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub learning_rates: Vec<f64>,
    pub gammas: Vec<f64>,
    pub keyword_sets: Vec<SetChoice>,
    pub fractions: Vec<f64>,
    pub folds: usize,
    /// Epochs, batch size, lr scale, model dims and seed for every trial.
    pub base: TrainConfig,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            learning_rates: GRID_LEARNING_RATES.to_vec(),
            gammas: GRID_GAMMAS.to_vec(),
            keyword_sets: vec![SetChoice::Builtin(BuiltinSet::Combined), SetChoice::None],
            fractions: vec![0.10],
            folds: DEFAULT_FOLDS,
            base: TrainConfig {
                lr_scale: DEFAULT_LR_SCALE,
                ..TrainConfig::default()
            },
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |m: &str| Err(SweepError::Grid(m.to_string()));
        if self.learning_rates.is_empty() || self.keyword_sets.is_empty() || self.fractions.is_empty() {
            return bad("learning rates, keyword sets and fractions must be non-empty");
        }
        if self.gammas.is_empty() && self.keyword_sets.iter().any(|&s| s != SetChoice::None) {
            return bad("weighted keyword sets need at least one gamma");
        }
        if self.folds < 2 {
            return bad("need at least 2 folds");
        }
        for c in self.cells() {
            c.validate().map_err(|e| SweepError::Grid(e.to_string()))?;
        }
        Ok(())
    }

    /// Every trial config, in grid order. `none` pairs only with gamma 1.
    pub fn cells(&self) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &fraction in &self.fractions {
            for &set in &self.keyword_sets {
                let gammas: &[f64] = if set == SetChoice::None { &[1.0] } else { &self.gammas };
                for &lr in &self.learning_rates {
                    for &gamma in gammas {
                        out.push(TrainConfig {
                            learning_rate: lr,
                            gamma,
                            keyword_set: set.to_string(),
                            data_fraction: fraction,
                            ..self.base.clone()
                        });
                    }
                }
            }
        }
        out
    }

    /// Expected trial count: `|fractions| (|weighted sets| |lr| |gamma| + [none] |lr|)`.
    pub fn trial_count(&self) -> usize {
        let weighted = self.keyword_sets.iter().filter(|&&s| s != SetChoice::None).count();
        let none = usize::from(self.keyword_sets.contains(&SetChoice::None));
        self.fractions.len()
            * (weighted * self.learning_rates.len() * self.gammas.len() + none * self.learning_rates.len())
    }

    /// The same grid restricted to one fraction and the given sets.
    pub fn restricted(&self, fraction: f64, sets: &[SetChoice]) -> SweepGrid {
        SweepGrid {
            fractions: vec![fraction],
            keyword_sets: sets.to_vec(),
            ..self.clone()
        }
    }
}

/// Parses `key = value` lines. Lists are comma separated; `#` starts a
/// comment. Keys: `lrs`, `gammas`, `sets`, `fractions`, `folds`, `seed`,
/// `epochs`, plus `batch` and `lr_scale`. Missing keys keep the defaults.
pub fn parse_sweep_config(text: &str) -> Result<SweepGrid, SweepError> {
    let mut grid = SweepGrid::default();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| SweepError::Config { line: line_no, reason };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err("expected `key = value`".into()))?;
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        let floats = || -> Result<Vec<f64>, SweepError> {
            value
                .split(',')
                .map(|v| {
                    let v = v.trim();
                    let pct = v.strip_suffix('%');
                    let n: f64 = pct
                        .unwrap_or(v)
                        .trim()
                        .parse()
                        .map_err(|_| err(format!("`{v}` is not a number")))?;
                    Ok(if pct.is_some() { n / 100.0 } else { n })
                })
                .collect()
        };
        let int =
            || -> Result<u64, SweepError> { value.parse().map_err(|_| err(format!("`{value}` is not an integer"))) };
        match key {
            "lrs" => grid.learning_rates = floats()?,
            "gammas" => grid.gammas = floats()?,
            "fractions" => grid.fractions = floats()?,
            "sets" => {
                grid.keyword_sets = value
                    .split(',')
                    .map(|s| s.trim().parse::<SetChoice>().map_err(|e| err(e.to_string())))
                    .collect::<Result<_, _>>()?
            }
            "folds" => grid.folds = int()? as usize,
            "seed" => grid.base.seed = int()?,
            "epochs" => grid.base.epochs = int()? as usize,
            "batch" => grid.base.batch_size = int()? as usize,
            "lr_scale" => grid.base.lr_scale = value.parse().map_err(|_| err(format!("`{value}` is not a number")))?,
            other => return Err(err(format!("unknown key `{other}`"))),
        }
    }
    grid.validate()?;
    Ok(grid)
}

/// `k` disjoint folds covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CvSplit {
    pub k: usize,
    pub folds: Vec<Vec<usize>>,
}

impl CvSplit {
    /// Sorted indices outside fold `i`.
    pub fn train_indices(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn len(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stage-stratified partition of `0..labels.len()` into `k` folds whose
/// sizes differ by at most one.
pub fn make_folds(labels: &[AmdStage], k: usize, seed: u64) -> Result<CvSplit, SweepError> {
    let n = labels.len();
    if k < 2 || n < k {
        return Err(SweepError::TooFewSamples { n, k });
    }
    let order = stratified_order(labels, seed);
    let mut by_class = order.clone();
    // Deal class by class with a running counter: each class spreads evenly
    // and total fold sizes still differ by at most one.
    by_class.sort_by_key(|&i| labels[i]);
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, idx) in by_class.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(CvSplit { k, folds })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub config: TrainConfig,
    /// `(amd_f1, biomarker_f1)` per held-out fold.
    pub fold_scores: Vec<(f64, f64)>,
    pub mean_amd: f64,
    pub mean_bio: f64,
    pub combined: f64,
    pub failure: Option<String>,
}

impl TrialResult {
    pub fn from_folds(config: TrainConfig, fold_scores: Vec<(f64, f64)>) -> Self {
        let k = fold_scores.len().max(1) as f64;
        let mean_amd = fold_scores.iter().map(|s| s.0).sum::<f64>() / k;
        let mean_bio = fold_scores.iter().map(|s| s.1).sum::<f64>() / k;
        TrialResult {
            config,
            fold_scores,
            mean_amd,
            mean_bio,
            combined: (mean_amd + mean_bio) / 2.0,
            failure: None,
        }
    }

    pub fn failed(config: TrainConfig, reason: String) -> Self {
        TrialResult {
            config,
            fold_scores: Vec::new(),
            mean_amd: f64::NAN,
            mean_bio: f64::NAN,
            combined: f64::NAN,
            failure: Some(reason),
        }
    }

    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }

    /// Per-trial log line of `key=value` fields.
    pub fn log_line(&self) -> String {
        let c = &self.config;
        let folds: Vec<String> = self.fold_scores.iter().map(|(a, b)| format!("{a:.6}/{b:.6}")).collect();
        let mut line = format!(
            "fraction={} set={} lr={} gamma={} combined={:.6} amd={:.6} bio={:.6} folds={}",
            c.data_fraction,
            c.keyword_set,
            c.learning_rate,
            c.gamma,
            self.combined,
            self.mean_amd,
            self.mean_bio,
            if folds.is_empty() {
                "-".to_string()
            } else {
                folds.join(",")
            }
        );
        if let Some(f) = &self.failure {
            line.push_str(&format!(" failed={}", f.replace(char::is_whitespace, "_")));
        }
        line
    }
}

fn config_order(a: &TrainConfig, b: &TrainConfig) -> Ordering {
    a.data_fraction
        .total_cmp(&b.data_fraction)
        .then_with(|| a.keyword_set.cmp(&b.keyword_set))
        .then_with(|| a.learning_rate.total_cmp(&b.learning_rate))
        .then_with(|| a.gamma.total_cmp(&b.gamma))
}

/// Ranking order: successful trials first, then combined descending, mean
/// AMD F1 descending, and config ascending.
pub fn rank_order(a: &TrialResult, b: &TrialResult) -> Ordering {
    a.is_failed()
        .cmp(&b.is_failed())
        .then_with(|| b.combined.total_cmp(&a.combined))
        .then_with(|| b.mean_amd.total_cmp(&a.mean_amd))
        .then_with(|| config_order(&a.config, &b.config))
}

/// Seed for the training run on fold `fold` under sweep seed `seed`. Shared
/// by all cells so configs are compared on identical initializations.
fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(fold as u64)
}

fn run_trial(
    config: TrainConfig,
    data: &[SynthSample],
    split: &CvSplit,
    vocab: &Arc<Vocabulary>,
    seed: u64,
) -> TrialResult {
    let lexicon = match config.keyword_set.parse::<SetChoice>() {
        Ok(set) => set.lexicon(),
        Err(e) => return TrialResult::failed(config, e.to_string()),
    };
    let mut scores = Vec::with_capacity(split.k);
    for (i, fold) in split.folds.iter().enumerate() {
        let train_set: Vec<SynthSample> = split.train_indices(i).into_iter().map(|j| data[j].clone()).collect();
        let held_out: Vec<SynthSample> = fold.iter().map(|&j| data[j].clone()).collect();
        let cfg = TrainConfig {
            seed: fold_seed(seed, i),
            ..config.clone()
        };
        let run = match train(&train_set, vocab.clone(), lexicon.as_ref(), &cfg) {
            Ok(r) => r,
            Err(e) => return TrialResult::failed(config, format!("fold {i}: {e}")),
        };
        match score_model(&run.model, &held_out) {
            Ok(s) => scores.push((s.amd_f1, s.biomarker_f1)),
            Err(e) => return TrialResult::failed(config, format!("fold {i}: {e}")),
        }
    }
    TrialResult::from_folds(config, scores)
}

/// Runs every grid cell with k-fold cross-validation on `corpus` and returns
/// the trials ranked by [`rank_order`]. Diverged trials are kept as failed.
/// `jobs` bounds the worker threads; results do not depend on it.
pub fn run_sweep(
    grid: &SweepGrid,
    corpus: &[SynthSample],
    vocab: Arc<Vocabulary>,
    seed: u64,
    jobs: usize,
) -> Result<Vec<TrialResult>, SweepError> {
    grid.validate()?;
    let labels: Vec<AmdStage> = corpus.iter().map(|s| s.labels.stage).collect();
    let mut per_fraction = Vec::new();
    for &fraction in &grid.fractions {
        let idx = subset_indices(&labels, fraction, seed)?;
        let data: Vec<SynthSample> = idx.iter().map(|&i| corpus[i].clone()).collect();
        let sub_labels: Vec<AmdStage> = data.iter().map(|s| s.labels.stage).collect();
        let split = make_folds(&sub_labels, grid.folds, seed)?;
        per_fraction.push((fraction, data, split));
    }

    let cells = grid.cells();
    let work = |cfg: &TrainConfig| {
        let (_, data, split) = per_fraction
            .iter()
            .find(|(f, _, _)| *f == cfg.data_fraction)
            .expect("cells come from grid fractions");
        run_trial(cfg.clone(), data, split, &vocab, seed)
    };
    let mut results: Vec<TrialResult> = if jobs <= 1 {
        cells.iter().map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| SweepError::Train(e.to_string()))?;
        pool.install(|| cells.par_iter().map(work).collect())
    };
    results.sort_by(rank_order);
    Ok(results)
}

/// The top trial under [`rank_order`].
pub fn best_of(results: &[TrialResult]) -> Result<&TrialResult, SweepError> {
    results
        .iter()
        .filter(|r| !r.is_failed())
        .min_by(|a, b| rank_order(a, b))
        .ok_or(SweepError::AllFailed(results.len()))
}

/// `(weighted - baseline) / baseline`.
pub fn relative_gain(weighted: f64, baseline: f64) -> Result<f64, SweepError> {
    if baseline.is_nan() || baseline <= 0.0 {
        return Err(SweepError::NonPositiveBaseline(baseline));
    }
    Ok((weighted - baseline) / baseline)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Standard,
    Weighted,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::Weighted => "weighted",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub fraction: f64,
    pub method: Method,
    pub config: TrainConfig,
    pub amd_f1: f64,
    pub biomarker_f1: f64,
    /// Mean test NLL over positions matched by the weighted run's keyword set.
    pub keyword_nll: f64,
    pub train_size: usize,
    pub test_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<TableRow>,
    /// Every sweep trial, per fraction in order.
    pub trials: Vec<TrialResult>,
    pub test_indices: Vec<usize>,
}

impl ComparisonTable {
    pub fn row(&self, fraction: f64, method: Method) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.fraction == fraction && r.method == method)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "fraction\tmethod\tamd_f1\tbiomarker_f1\tkeyword_nll\tset\tgamma\tlr\ttrain_size\ttest_size\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{}\t{}\n",
                r.fraction,
                r.method,
                r.amd_f1,
                r.biomarker_f1,
                r.keyword_nll,
                r.config.keyword_set,
                r.config.gamma,
                r.config.learning_rate,
                r.train_size,
                r.test_size
            ));
        }
        out
    }

    pub fn trial_log(&self) -> String {
        self.trials.iter().map(|t| t.log_line() + "\n").collect()
    }
}

/// Splits off a stratified test set, then for each fraction sweeps the
/// standard grid and the weighted grid for `keyword_set` on the training
/// pool, retrains the best config of each on the whole fraction subset, and
/// scores it on the test split. The vocabulary is trained on the pool only.
pub fn comparison_table(
    corpus: &[SynthSample],
    grid: &SweepGrid,
    keyword_set: BuiltinSet,
    test_share: f64,
    seed: u64,
    jobs: usize,
) -> Result<ComparisonTable, SweepError> {
    if !(test_share > 0.0 && test_share < 1.0) {
        return Err(SweepError::Grid(format!("test share {test_share} must lie in (0, 1)")));
    }
    let labels: Vec<AmdStage> = corpus.iter().map(|s| s.labels.stage).collect();
    let order = stratified_order(&labels, seed ^ 0x7465_7374);
    let n_test = ((corpus.len() as f64 * test_share).round() as usize).clamp(1, corpus.len().saturating_sub(1).max(1));
    let mut test_indices: Vec<usize> = order[..n_test].to_vec();
    test_indices.sort_unstable();
    let mut pool_indices: Vec<usize> = order[n_test..].to_vec();
    pool_indices.sort_unstable();
    if pool_indices.is_empty() {
        return Err(SweepError::TooFewSamples {
            n: corpus.len(),
            k: grid.folds,
        });
    }
    let test: Vec<SynthSample> = test_indices.iter().map(|&i| corpus[i].clone()).collect();
    let pool: Vec<SynthSample> = pool_indices.iter().map(|&i| corpus[i].clone()).collect();
    let pool_labels: Vec<AmdStage> = pool.iter().map(|s| s.labels.stage).collect();
    let vocab = Arc::new(corpus_vocab(&pool, DEFAULT_VOCAB_SIZE)?);
    let lexicon = builtin(keyword_set);
    let test_set: BTreeSet<usize> = test_indices.iter().copied().collect();

    let mut rows = Vec::new();
    let mut trials = Vec::new();
    for &fraction in &grid.fractions {
        let sub = subset_indices(&pool_labels, fraction, seed)?;
        for &i in &sub {
            let original = pool_indices[i];
            if test_set.contains(&original) {
                return Err(SweepError::Leak(original));
            }
        }
        let train_data: Vec<SynthSample> = sub.iter().map(|&i| pool[i].clone()).collect();
        let sets = [SetChoice::None, SetChoice::Builtin(keyword_set)];
        let results = run_sweep(&grid.restricted(fraction, &sets), &pool, vocab.clone(), seed, jobs)?;
        for method in [Method::Standard, Method::Weighted] {
            let want = if method == Method::Standard {
                "none"
            } else {
                keyword_set.as_str()
            };
            let candidates: Vec<TrialResult> = results
                .iter()
                .filter(|r| r.config.keyword_set == want)
                .cloned()
                .collect();
            let best = best_of(&candidates)?.config.clone();
            let run_lexicon = (method == Method::Weighted).then(|| lexicon.clone());
            let cfg = TrainConfig {
                seed: fold_seed(seed, grid.folds),
                ..best
            };
            let run = train(&train_data, vocab.clone(), run_lexicon.as_ref(), &cfg)
                .map_err(|e| SweepError::Train(e.to_string()))?;
            let score = score_model(&run.model, &test)?;
            rows.push(TableRow {
                fraction,
                method,
                config: cfg,
                amd_f1: score.amd_f1,
                biomarker_f1: score.biomarker_f1,
                keyword_nll: keyword_nll(&run.model, &test, &lexicon).unwrap_or(f64::NAN),
                train_size: train_data.len(),
                test_size: test.len(),
            });
        }
        trials.extend(results);
    }
    Ok(ComparisonTable {
        rows,
        trials,
        test_indices,
    })
}
