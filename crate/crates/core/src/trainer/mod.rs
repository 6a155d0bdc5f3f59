//! Desk-scale training: a synthetic report corpus and a tiny conditional
//! language model trained with the standard or the keyword-weighted loss.

mod corpus;
mod model;

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lexicon::KeywordSet;
use crate::reporteval::ReportGenerator;
use crate::tokenizer::{train_vocab, TokenizerError, Vocabulary};

pub use corpus::{
    biomarker_code, generate_corpus, prompt_for, read_corpus, stage_code, stratified_order, subset_fraction,
    subset_indices, synth_sample, write_corpus, CorpusError, GoldLabels, SynthSample,
};
pub use model::{CheckpointError, EncodedSample, ModelDims, TinyLM};

/// Data fractions studied in the sample-efficiency table.
pub const DATA_FRACTIONS: [f64; 5] = [0.01, 0.03, 0.10, 0.30, 1.00];

/// Vocabulary size used by the pipelines in this crate.
pub const DEFAULT_VOCAB_SIZE: usize = 512;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error(transparent)]
    Loss(#[from] crate::loss::LossError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Nominal learning rate.
    pub learning_rate: f64,
    /// Multiplier turning the nominal rate into the SGD step size.
    pub lr_scale: f64,
    /// Upweighting factor for keyword tokens; forced to 1 without a lexicon.
    pub gamma: f64,
    /// Label of the keyword set in use (`none` for the standard loss).
    pub keyword_set: String,
    pub data_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dims: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.3,
            lr_scale: 1.0,
            gamma: 1.0,
            keyword_set: "none".to_string(),
            data_fraction: 1.0,
            epochs: 8,
            batch_size: 8,
            seed: 0,
            dims: ModelDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn step_size(&self) -> f64 {
        self.learning_rate * self.lr_scale
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.step_size().is_finite() && self.step_size() > 0.0) {
            return bad(format!(
                "learning rate {} x {} must be positive",
                self.learning_rate, self.lr_scale
            ));
        }
        if !(self.gamma.is_finite() && self.gamma >= 1.0) {
            return bad(format!("gamma {} must be >= 1", self.gamma));
        }
        if !DATA_FRACTIONS.iter().any(|&f| (f - self.data_fraction).abs() < 1e-12) {
            return bad(format!(
                "data fraction {} is not one of {DATA_FRACTIONS:?}",
                self.data_fraction
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        let d = self.dims;
        if d.embed == 0 || d.context == 0 || d.hidden == 0 {
            return bad("model dimensions must be positive".into());
        }
        Ok(())
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "set={} gamma={} lr={} fraction={} epochs={} batch={} seed={}",
            self.keyword_set,
            self.gamma,
            self.learning_rate,
            self.data_fraction,
            self.epochs,
            self.batch_size,
            self.seed
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: TinyLM,
    /// Mean per-report loss of the untrained model.
    pub initial_loss: f64,
    /// Running mean of batch losses for each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Every prompt code word with its leading space, plus the `oct` prefix.
pub fn prompt_code_pieces() -> Vec<String> {
    let mut out = vec!["oct".to_string()];
    for stage in crate::reporteval::AmdStage::CLASSES {
        out.push(format!(" {}", stage_code(stage)));
    }
    for b in crate::reporteval::Biomarker::ALL {
        for present in [false, true] {
            out.push(format!(" {}", biomarker_code(b, present)));
        }
    }
    out
}

/// Trains a vocabulary on prompts and reports, then adds the prompt code
/// words as whole pieces so every prompt is exactly ten tokens. The result
/// holds at most `size` pieces.
pub fn corpus_vocab(corpus: &[SynthSample], size: usize) -> Result<Vocabulary, TokenizerError> {
    let texts: Vec<&str> = corpus
        .iter()
        .flat_map(|s| [s.prompt.as_str(), s.report.as_str()])
        .collect();
    let codes = prompt_code_pieces();
    let base = train_vocab(&texts, size.saturating_sub(codes.len()))?;
    Ok(base.with_added_pieces(codes))
}

pub fn encode_corpus(
    corpus: &[SynthSample],
    vocab: &Vocabulary,
    lexicon: Option<&KeywordSet>,
    gamma: f64,
) -> Vec<EncodedSample> {
    corpus
        .iter()
        .map(|s| EncodedSample::new(s, vocab, lexicon, gamma))
        .collect()
}

/// Minimizes the mean per-report loss over report tokens with plain SGD.
/// Weights come from matching `lexicon` against each reference report; with
/// no lexicon every weight is one. Deterministic given the config seed.
pub fn train(
    corpus: &[SynthSample],
    vocab: Arc<Vocabulary>,
    lexicon: Option<&KeywordSet>,
    config: &TrainConfig,
) -> Result<TrainRun, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    config.validate()?;
    let encoded = encode_corpus(corpus, &vocab, lexicon, config.gamma);
    train_encoded(&encoded, vocab, config)
}

/// [`train`] over pre-encoded samples.
pub fn train_encoded(
    encoded: &[EncodedSample],
    vocab: Arc<Vocabulary>,
    config: &TrainConfig,
) -> Result<TrainRun, TrainError> {
    if encoded.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init_seed = rand::Rng::random::<u64>(&mut rng);
    let mut model = TinyLM::new(vocab, config.dims, init_seed);

    let all: Vec<&EncodedSample> = encoded.iter().collect();
    let initial_loss = model.batch_loss(&all)?;

    let lr = config.step_size();
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let batch: Vec<&EncodedSample> = chunk.iter().map(|&i| &encoded[i]).collect();
            let loss = model.sgd_step(&batch, lr)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, step, loss });
            }
            sum += loss;
            batches += 1;
        }
        epoch_losses.push(sum / batches as f64);
    }
    if !model.is_finite() {
        return Err(TrainError::Diverged {
            epoch: config.epochs,
            step,
            loss: f64::NAN,
        });
    }
    Ok(TrainRun {
        model,
        initial_loss,
        epoch_losses,
    })
}

/// Mean teacher-forced NLL over keyword-selected report positions. Returns
/// `None` when no sample contains a keyword.
pub fn keyword_nll(model: &TinyLM, samples: &[SynthSample], lexicon: &KeywordSet) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in samples {
        let e = EncodedSample::new(s, model.vocab(), Some(lexicon), 1.0);
        if e.keyword_targets.count() == 0 {
            continue;
        }
        let nll = model.target_nll(&e);
        for &p in e.keyword_targets.positions() {
            sum += nll[p];
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Greedy report for a prompt; at most `max_len` tokens.
pub fn generate_report(model: &TinyLM, prompt: &str, max_len: usize) -> String {
    model.generate(prompt, max_len)
}

impl ReportGenerator for TinyLM {
    fn generate(&self, prompt: &str, max_len: usize) -> String {
        TinyLM::generate(self, prompt, max_len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{builtin, BuiltinSet};

    fn vocab_for(corpus: &[SynthSample]) -> Arc<Vocabulary> {
        Arc::new(corpus_vocab(corpus, DEFAULT_VOCAB_SIZE).unwrap())
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                gamma: 0.5,
                ..Default::default()
            },
            TrainConfig {
                data_fraction: 0.5,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(TrainError::Config(_))), "{c}");
        }
    }

    #[test]
    fn prompt_codes_are_single_tokens() {
        let corpus = generate_corpus(400, 1);
        let vocab = vocab_for(&corpus);
        for s in &corpus[..20] {
            let toks = crate::tokenizer::tokenize(&s.prompt, &vocab);
            assert_eq!(toks.len(), 10, "{:?}", s.prompt);
        }
    }

    #[test]
    fn gamma_one_matches_no_lexicon_bitwise() {
        let corpus = generate_corpus(48, 2);
        let vocab = vocab_for(&corpus);
        let kw = builtin(BuiltinSet::Combined);
        let cfg = TrainConfig {
            epochs: 2,
            seed: 5,
            ..Default::default()
        };
        let a = train(&corpus, vocab.clone(), None, &cfg).unwrap();
        let b = train(&corpus, vocab, Some(&kw), &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn divergence_is_reported() {
        let corpus = generate_corpus(16, 2);
        let vocab = vocab_for(&corpus);
        let cfg = TrainConfig {
            learning_rate: 1e308,
            epochs: 3,
            ..Default::default()
        };
        assert!(matches!(
            train(&corpus, vocab, None, &cfg),
            Err(TrainError::Diverged { .. })
        ));
    }

    #[test]
    fn empty_corpus_rejected() {
        let vocab = vocab_for(&generate_corpus(8, 1));
        assert_eq!(
            train(&[], vocab, None, &TrainConfig::default()).unwrap_err(),
            TrainError::EmptyCorpus
        );
    }
}
