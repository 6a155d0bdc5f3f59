//! Fixed-context feed-forward language model conditioned on a prompt.
//!
//! The input for each predicted position is the concatenation of the
//! embeddings of the previous `context` tokens and of the first
//! `prompt_slots` prompt tokens (from a separate table, padded with the pad
//! row), followed by one tanh hidden layer and a softmax output over the
//! vocabulary.

use std::fmt::Write as _;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lexicon::KeywordSet;
use crate::loss::{token_nll, weighted_ce_view, LossError};
use crate::spanmap::{build_weight_vector, find_keyword_spans, spans_to_token_indices, TokenSpanIndex, WeightVector};
use crate::tokenizer::{decode_ids, tokenize, Vocabulary, BOS, EOS, PAD, UNK};

use super::corpus::SynthSample;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unsupported checkpoint version `{0}`")]
    Version(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelDims {
    /// Embedding width.
    pub embed: usize,
    /// Number of preceding tokens in the input window.
    pub context: usize,
    pub hidden: usize,
    /// Prompt positions fed to every prediction; longer prompts are cut.
    pub prompt_slots: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            embed: 16,
            context: 5,
            hidden: 32,
            prompt_slots: 10,
        }
    }
}

impl ModelDims {
    fn input_width(&self) -> usize {
        self.embed * (self.context + self.prompt_slots)
    }
}

/// A sample tokenized for training: `prompt ++ [BOS] ++ report ++ [EOS]`,
/// with weights over the targets (report tokens and EOS).
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub prompt: Vec<u32>,
    pub sequence: Vec<u32>,
    pub bos_pos: usize,
    pub weights: WeightVector,
    /// Target indices selected by the lexicon (empty without one).
    pub keyword_targets: TokenSpanIndex,
}

impl EncodedSample {
    /// Tokenizes prompt and report separately; keyword matching runs on the
    /// reference report only. EOS always gets weight 1.
    pub fn new(sample: &SynthSample, vocab: &Vocabulary, lexicon: Option<&KeywordSet>, gamma: f64) -> Self {
        let prompt = tokenize(&sample.prompt, vocab).ids().to_vec();
        let report = tokenize(&sample.report, vocab);
        let t = report.len() + 1;
        let positions: Vec<usize> = match lexicon {
            Some(set) => {
                let matches = find_keyword_spans(report.text(), set);
                spans_to_token_indices(&matches, &report)
                    .expect("matches come from the same text")
                    .positions()
                    .iter()
                    .copied()
                    .collect()
            }
            None => Vec::new(),
        };
        let keyword_targets = TokenSpanIndex::new(t, positions).expect("positions lie inside the report");
        let gamma = if lexicon.is_some() { gamma } else { 1.0 };
        let weights = build_weight_vector(t, &keyword_targets, gamma).expect("gamma validated by caller");
        let mut sequence = prompt.clone();
        let bos_pos = sequence.len();
        sequence.push(BOS);
        sequence.extend_from_slice(report.ids());
        sequence.push(EOS);
        EncodedSample {
            prompt,
            sequence,
            bos_pos,
            weights,
            keyword_targets,
        }
    }

    pub fn targets(&self) -> &[u32] {
        &self.sequence[self.bos_pos + 1..]
    }

    pub fn num_targets(&self) -> usize {
        self.sequence.len() - self.bos_pos - 1
    }

    /// Loss over a full-sequence logit block whose row `j` predicts
    /// `sequence[j + 1]`. Only rows from the BOS position on count.
    pub fn report_loss(&self, full_logits: ndarray::ArrayView2<'_, f64>) -> Result<f64, LossError> {
        let rows = full_logits.slice(s![self.bos_pos.., ..]);
        Ok(weighted_ce_view(rows, self.targets(), &self.weights, None)?.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyLM {
    vocab: Arc<Vocabulary>,
    dims: ModelDims,
    embed: Array2<f64>,
    prompt_embed: Array2<f64>,
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-scale..scale))
}

/// Gradient pieces produced by one backward pass.
struct Grads {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
    input: Array2<f64>,
}

impl TinyLM {
    pub fn new(vocab: Arc<Vocabulary>, dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = vocab.len();
        let inw = dims.input_width();
        let embed = uniform(&mut rng, (v, dims.embed), 0.1);
        let prompt_embed = uniform(&mut rng, (v, dims.embed), 0.1);
        let w1 = uniform(&mut rng, (inw, dims.hidden), (6.0 / (inw + dims.hidden) as f64).sqrt());
        let w2 = uniform(&mut rng, (dims.hidden, v), (6.0 / (dims.hidden + v) as f64).sqrt());
        TinyLM {
            vocab,
            dims,
            embed,
            prompt_embed,
            w1,
            b1: Array1::zeros(dims.hidden),
            w2,
            b2: Array1::zeros(v),
        }
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn num_parameters(&self) -> usize {
        self.embed.len() + self.prompt_embed.len() + self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_finite(&self) -> bool {
        [&self.embed, &self.prompt_embed, &self.w1, &self.w2]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
            && self.b1.iter().chain(self.b2.iter()).all(|v| v.is_finite())
    }

    fn prompt_slot_ids(&self, prompt: &[u32]) -> Vec<u32> {
        (0..self.dims.prompt_slots)
            .map(|k| prompt.get(k).copied().unwrap_or(PAD))
            .collect()
    }

    fn prompt_block(&self, prompt: &[u32]) -> Array1<f64> {
        let d = self.dims.embed;
        let mut block = Array1::zeros(d * self.dims.prompt_slots);
        for (k, p) in self.prompt_slot_ids(prompt).into_iter().enumerate() {
            block
                .slice_mut(s![k * d..(k + 1) * d])
                .assign(&self.prompt_embed.row(p as usize));
        }
        block
    }

    /// Writes the input vector for the position after `seq[..end]`.
    fn fill_input(
        &self,
        mut row: ndarray::ArrayViewMut1<'_, f64>,
        seq: &[u32],
        end: usize,
        block: ArrayView1<'_, f64>,
    ) {
        let d = self.dims.embed;
        let n = self.dims.context;
        for k in 0..n {
            // slot n-1 holds the most recent token
            let back = n - k;
            let tok = if end >= back { seq[end - back] } else { PAD };
            row.slice_mut(s![k * d..(k + 1) * d])
                .assign(&self.embed.row(tok as usize));
        }
        row.slice_mut(s![n * d..]).assign(&block);
    }

    /// Input rows for predicting `sequence[j + 1]`, for each `j` in `positions`.
    fn inputs(
        &self,
        sample: &EncodedSample,
        positions: impl Iterator<Item = usize>,
        out: &mut Array2<f64>,
        start_row: usize,
    ) -> usize {
        let block = self.prompt_block(&sample.prompt);
        let mut r = start_row;
        for j in positions {
            self.fill_input(out.row_mut(r), &sample.sequence, j + 1, block.view());
            r += 1;
        }
        r
    }

    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut h = x.dot(&self.w1);
        h += &self.b1;
        h.mapv_inplace(f64::tanh);
        let mut z = h.dot(&self.w2);
        z += &self.b2;
        (h, z)
    }

    fn backward(&self, x: &Array2<f64>, h: &Array2<f64>, dz: &Array2<f64>) -> Grads {
        let w2 = h.t().dot(dz);
        let b2 = dz.sum_axis(Axis(0));
        let mut da = dz.dot(&self.w2.t());
        Zip::from(&mut da).and(h).for_each(|g, &hv| *g *= 1.0 - hv * hv);
        let w1 = x.t().dot(&da);
        let b1 = da.sum_axis(Axis(0));
        let input = da.dot(&self.w1.t());
        Grads { w1, b1, w2, b2, input }
    }

    /// Logits for every target position of a sample (teacher forcing).
    pub fn target_logits(&self, sample: &EncodedSample) -> Array2<f64> {
        let t = sample.num_targets();
        let mut x = Array2::zeros((t, self.dims.input_width()));
        self.inputs(sample, sample.bos_pos..sample.bos_pos + t, &mut x, 0);
        self.forward(&x).1
    }

    /// Logits for every position of the full sequence, prompt included; row
    /// `j` predicts `sequence[j + 1]`.
    pub fn sequence_logits(&self, sample: &EncodedSample) -> Array2<f64> {
        let rows = sample.sequence.len() - 1;
        let mut x = Array2::zeros((rows, self.dims.input_width()));
        self.inputs(sample, 0..rows, &mut x, 0);
        self.forward(&x).1
    }

    /// Mean normalized loss over a batch of samples.
    pub fn batch_loss(&self, batch: &[&EncodedSample]) -> Result<f64, LossError> {
        let mut total = 0.0;
        for s in batch {
            total += weighted_ce_view(self.target_logits(s).view(), s.targets(), &s.weights, None)?.0;
        }
        Ok(total / batch.len() as f64)
    }

    /// One plain SGD step on the mean per-report weighted loss. Returns the
    /// batch loss before the update.
    pub fn sgd_step(&mut self, batch: &[&EncodedSample], lr: f64) -> Result<f64, LossError> {
        let rows: usize = batch.iter().map(|s| s.num_targets()).sum();
        let mut x = Array2::zeros((rows, self.dims.input_width()));
        let mut r = 0;
        for s in batch {
            r = self.inputs(s, s.bos_pos..s.bos_pos + s.num_targets(), &mut x, r);
        }
        let (h, z) = self.forward(&x);

        let mut dz = Array2::zeros(z.dim());
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut r = 0;
        for s in batch {
            let t = s.num_targets();
            let block = s![r..r + t, ..];
            let (value, _) = weighted_ce_view(
                z.slice(block),
                s.targets(),
                &s.weights,
                Some((dz.slice_mut(block), scale)),
            )?;
            loss += value * scale;
            r += t;
        }

        let g = self.backward(&x, &h, &dz);
        self.w1.scaled_add(-lr, &g.w1);
        self.b1.scaled_add(-lr, &g.b1);
        self.w2.scaled_add(-lr, &g.w2);
        self.b2.scaled_add(-lr, &g.b2);

        let d = self.dims.embed;
        let n = self.dims.context;
        let mut r = 0;
        for s in batch {
            let slots = self.prompt_slot_ids(&s.prompt);
            for j in s.bos_pos..s.bos_pos + s.num_targets() {
                let gi = g.input.row(r);
                let end = j + 1;
                for k in 0..n {
                    let back = n - k;
                    let tok = if end >= back { s.sequence[end - back] } else { PAD };
                    self.embed
                        .row_mut(tok as usize)
                        .scaled_add(-lr, &gi.slice(s![k * d..(k + 1) * d]));
                }
                for (k, &p) in slots.iter().enumerate() {
                    let off = (n + k) * d;
                    self.prompt_embed
                        .row_mut(p as usize)
                        .scaled_add(-lr, &gi.slice(s![off..off + d]));
                }
                r += 1;
            }
        }
        Ok(loss)
    }

    /// Per-target negative log-likelihoods under teacher forcing.
    pub fn target_nll(&self, sample: &EncodedSample) -> Vec<f64> {
        let z = self.target_logits(sample);
        z.outer_iter()
            .zip(sample.targets())
            .map(|(row, &t)| token_nll(row, t as usize))
            .collect()
    }

    /// Greedy decoding after `prompt ++ [BOS]` until EOS or `max_len` tokens.
    /// Pad, BOS and unk are never emitted.
    pub fn generate_ids(&self, prompt: &str, max_len: usize) -> Vec<u32> {
        let prompt_ids = tokenize(prompt, &self.vocab).ids().to_vec();
        let block = self.prompt_block(&prompt_ids);
        let mut seq = prompt_ids;
        seq.push(BOS);
        let start = seq.len();
        let mut x = Array1::zeros(self.dims.input_width());
        let mut h = Array1::zeros(self.dims.hidden);
        while seq.len() - start < max_len {
            self.fill_input(x.view_mut(), &seq, seq.len(), block.view());
            ndarray::linalg::general_mat_vec_mul(1.0, &self.w1.t(), &x, 0.0, &mut h);
            h += &self.b1;
            h.mapv_inplace(f64::tanh);
            let mut z = self.b2.clone();
            ndarray::linalg::general_mat_vec_mul(1.0, &self.w2.t(), &h, 1.0, &mut z);
            let mut best = EOS;
            let mut best_v = f64::NEG_INFINITY;
            for (id, &v) in z.iter().enumerate() {
                let id = id as u32;
                if id == PAD || id == BOS || id == UNK {
                    continue;
                }
                if v > best_v {
                    best_v = v;
                    best = id;
                }
            }
            if best == EOS {
                break;
            }
            seq.push(best);
        }
        seq.split_off(start)
    }

    pub fn generate(&self, prompt: &str, max_len: usize) -> String {
        decode_ids(&self.generate_ids(prompt, max_len), &self.vocab).expect("generated ids come from the vocabulary")
    }

    /// Text checkpoint. Floats use the shortest round-trip form, so loading
    /// restores the parameters bit for bit.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        writeln!(out, "keyweight-tinylm 1").unwrap();
        writeln!(
            out,
            "dims {} {} {} {} {}",
            self.vocab.len(),
            self.dims.embed,
            self.dims.context,
            self.dims.hidden,
            self.dims.prompt_slots
        )
        .unwrap();
        writeln!(out, "vocab").unwrap();
        out.push_str(&self.vocab.to_file_string());
        let mut matrix = |name: &str, m: &Array2<f64>| {
            writeln!(out, "{name} {} {}", m.nrows(), m.ncols()).unwrap();
            for row in m.outer_iter() {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", line.join(" ")).unwrap();
            }
        };
        matrix("embed", &self.embed);
        matrix("prompt_embed", &self.prompt_embed);
        matrix("w1", &self.w1);
        matrix("b1", &self.b1.clone().insert_axis(Axis(0)));
        matrix("w2", &self.w2);
        matrix("b2", &self.b2.clone().insert_axis(Axis(0)));
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, CheckpointError> {
        let lines: Vec<&str> = text.lines().collect();
        let err = |line: usize, reason: &str| CheckpointError::Parse {
            line: line + 1,
            reason: reason.to_string(),
        };
        let header = lines.first().ok_or_else(|| err(0, "empty checkpoint"))?;
        match header.strip_prefix("keyweight-tinylm ") {
            Some("1") => {}
            Some(v) => return Err(CheckpointError::Version(v.to_string())),
            None => return Err(err(0, "missing header")),
        }
        let dims: Vec<usize> = lines
            .get(1)
            .and_then(|l| l.strip_prefix("dims "))
            .ok_or_else(|| err(1, "missing dims"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(1, "bad dimension")))
            .collect::<Result<_, _>>()?;
        let [v, embed, context, hidden, prompt_slots] = dims[..] else {
            return Err(err(1, "expected 5 dimensions"));
        };
        if lines.get(2) != Some(&"vocab") {
            return Err(err(2, "missing vocab section"));
        }
        let vocab_end = 3 + v;
        if lines.len() < vocab_end {
            return Err(err(lines.len(), "truncated vocabulary"));
        }
        let vocab_text = lines[3..vocab_end].join("\n");
        let vocab = Vocabulary::from_file_str(&vocab_text).map_err(|e| err(3, &e.to_string()))?;

        let mut pos = vocab_end;
        let mut read = |name: &str, rows: usize, cols: usize| -> Result<Array2<f64>, CheckpointError> {
            let head = lines.get(pos).ok_or_else(|| err(pos, "truncated checkpoint"))?;
            if *head != format!("{name} {rows} {cols}") {
                return Err(err(pos, &format!("expected `{name} {rows} {cols}`")));
            }
            let mut vals = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let l = lines
                    .get(pos + 1 + r)
                    .ok_or_else(|| err(pos + 1 + r, "truncated matrix"))?;
                for t in l.split_whitespace() {
                    vals.push(t.parse::<f64>().map_err(|_| err(pos + 1 + r, "bad number"))?);
                }
            }
            if vals.len() != rows * cols {
                return Err(err(pos, "wrong number of values"));
            }
            pos += rows + 1;
            Ok(Array2::from_shape_vec((rows, cols), vals).expect("length checked"))
        };
        let dims = ModelDims {
            embed,
            context,
            hidden,
            prompt_slots,
        };
        let inw = dims.input_width();
        let embed_m = read("embed", v, embed)?;
        let prompt_embed = read("prompt_embed", v, embed)?;
        let w1 = read("w1", inw, hidden)?;
        let b1 = read("b1", 1, hidden)?.remove_axis(Axis(0));
        let w2 = read("w2", hidden, v)?;
        let b2 = read("b2", 1, v)?.remove_axis(Axis(0));
        Ok(TinyLM {
            vocab: Arc::new(vocab),
            dims,
            embed: embed_m,
            prompt_embed,
            w1,
            b1,
            w2,
            b2,
        })
    }
}
