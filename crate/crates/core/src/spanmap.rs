//! Keyword occurrences to token positions to per-token weights.
//!
//! Matching runs over the reference report only. A match is case-insensitive
//! and whole-word: the characters on either side must be absent or something
//! other than a letter, digit or hyphen. Every token whose character span
//! overlaps a match is selected, so a keyword split into several subwords
//! selects all of them.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::ops::Range;

use thiserror::Error;

use crate::lexicon::{Keyword, KeywordSet};
use crate::tokenizer::{TokenizedSequence, TokenizerError};

#[derive(Debug, Error, PartialEq)]
pub enum SpanMapError {
    #[error("match span {start}..{end} lies outside the text (length {len})")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("gamma must be a finite positive number, got {0}")]
    InvalidGamma(f64),
    #[error("an empty sequence has no weights (the normalizer would be zero)")]
    EmptySequence,
    #[error("index covers a sequence of length {index_len}, expected {expected}")]
    LengthMismatch { index_len: usize, expected: usize },
    #[error("weight {value} at position {index} is not a finite positive number")]
    InvalidWeight { index: usize, value: f64 },
    #[error(transparent)]
    Offsets(#[from] TokenizerError),
}

/// One keyword occurrence in a report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordSpan {
    pub keyword: Keyword,
    pub char_span: Range<usize>,
}

/// A keyword occurrence together with the token positions it selects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordMatch {
    pub keyword: Keyword,
    pub char_span: Range<usize>,
    pub token_indices: Vec<usize>,
}

impl fmt::Display for KeywordMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let idx: Vec<String> = self.token_indices.iter().map(|i| i.to_string()).collect();
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.char_span.start,
            self.char_span.end,
            self.keyword.surface(),
            idx.join(",")
        )
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '-'
}

fn fold(c: char) -> char {
    // First char of the lowercase mapping keeps offsets one-to-one.
    c.to_lowercase().next().unwrap_or(c)
}

/// Keywords grouped by first character, longest first, for scanning.
struct Matcher {
    by_first: HashMap<char, Vec<(Vec<char>, Keyword)>>,
}

impl Matcher {
    fn new(set: &KeywordSet) -> Self {
        let mut by_first: HashMap<char, Vec<(Vec<char>, Keyword)>> = HashMap::new();
        for kw in set.iter() {
            let chars: Vec<char> = kw.surface().chars().collect();
            if let Some(&first) = chars.first() {
                by_first.entry(first).or_default().push((chars, kw));
            }
        }
        for list in by_first.values_mut() {
            list.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        }
        Matcher { by_first }
    }

    fn find(&self, text: &str) -> Vec<KeywordSpan> {
        let chars: Vec<char> = text.chars().map(fold).collect();
        let mut out = Vec::new();
        for start in 0..chars.len() {
            if start > 0 && is_word_char(chars[start - 1]) {
                continue;
            }
            let Some(cands) = self.by_first.get(&chars[start]) else {
                continue;
            };
            for (kw_chars, kw) in cands {
                let end = start + kw_chars.len();
                if end > chars.len() || chars[start..end] != kw_chars[..] {
                    continue;
                }
                if end < chars.len() && is_word_char(chars[end]) {
                    continue;
                }
                out.push(KeywordSpan {
                    keyword: kw.clone(),
                    char_span: start..end,
                });
                break;
            }
        }
        out
    }
}

/// Whole-word, case-insensitive keyword occurrences sorted by start offset.
/// At a shared start offset only the longest keyword is reported.
pub fn find_keyword_spans(text: &str, set: &KeywordSet) -> Vec<KeywordSpan> {
    Matcher::new(set).find(text)
}

/// Positions `I ⊆ [0, T)` of clinically significant tokens, stored 0-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSpanIndex {
    positions: BTreeSet<usize>,
    len: usize,
}

impl TokenSpanIndex {
    pub fn new(len: usize, positions: impl IntoIterator<Item = usize>) -> Result<Self, SpanMapError> {
        let positions: BTreeSet<usize> = positions.into_iter().collect();
        if let Some(&p) = positions.iter().next_back() {
            if p >= len {
                return Err(SpanMapError::LengthMismatch {
                    index_len: p + 1,
                    expected: len,
                });
            }
        }
        Ok(TokenSpanIndex { positions, len })
    }

    pub fn empty(len: usize) -> Self {
        TokenSpanIndex {
            positions: BTreeSet::new(),
            len,
        }
    }

    pub fn positions(&self) -> &BTreeSet<usize> {
        &self.positions
    }

    pub fn contains(&self, i: usize) -> bool {
        self.positions.contains(&i)
    }

    /// Sequence length `T` this index refers to.
    pub fn seq_len(&self) -> usize {
        self.len
    }

    pub fn count(&self) -> usize {
        self.positions.len()
    }

    /// 1-based positions, for display.
    pub fn one_based(&self) -> Vec<usize> {
        self.positions.iter().map(|p| p + 1).collect()
    }
}

/// Token positions overlapping `span`. Token spans are sorted and
/// contiguous, so a binary search finds the first candidate.
fn overlapping_tokens(seq: &TokenizedSequence, span: &Range<usize>) -> Vec<usize> {
    let spans = seq.spans();
    let first = spans.partition_point(|s| s.end <= span.start);
    spans[first..]
        .iter()
        .take_while(|s| s.start < span.end)
        .enumerate()
        .map(|(k, _)| first + k)
        .collect()
}

/// Resolves each match to the tokens it overlaps.
pub fn match_tokens(matches: &[KeywordSpan], seq: &TokenizedSequence) -> Result<Vec<KeywordMatch>, SpanMapError> {
    let len = seq.char_len();
    matches
        .iter()
        .map(|m| {
            if m.char_span.start >= m.char_span.end || m.char_span.end > len {
                return Err(SpanMapError::SpanOutOfRange {
                    start: m.char_span.start,
                    end: m.char_span.end,
                    len,
                });
            }
            Ok(KeywordMatch {
                keyword: m.keyword.clone(),
                char_span: m.char_span.clone(),
                token_indices: overlapping_tokens(seq, &m.char_span),
            })
        })
        .collect()
}

/// Token `i` is selected iff its span overlaps some match.
pub fn spans_to_token_indices(
    matches: &[KeywordSpan],
    seq: &TokenizedSequence,
) -> Result<TokenSpanIndex, SpanMapError> {
    let resolved = match_tokens(matches, seq)?;
    Ok(TokenSpanIndex {
        positions: resolved.into_iter().flat_map(|m| m.token_indices).collect(),
        len: seq.len(),
    })
}

/// Per-token weights `λ` and their sum `Λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    lambdas: Vec<f64>,
    gamma: Option<f64>,
    total: f64,
}

impl WeightVector {
    /// Arbitrary positive weights, for callers that compute their own.
    pub fn from_lambdas(lambdas: Vec<f64>) -> Result<Self, SpanMapError> {
        if lambdas.is_empty() {
            return Err(SpanMapError::EmptySequence);
        }
        for (index, &value) in lambdas.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(SpanMapError::InvalidWeight { index, value });
            }
        }
        let total = lambdas.iter().sum();
        Ok(WeightVector {
            lambdas,
            gamma: None,
            total,
        })
    }

    /// All-ones weights: the unweighted objective.
    pub fn uniform(len: usize) -> Result<Self, SpanMapError> {
        build_weight_vector(len, &TokenSpanIndex::empty(len), 1.0)
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// The upweighting factor, when built from an index.
    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    /// `Λ = Σ λ_i`.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// `λ_i = γ` for selected positions and `1` elsewhere.
pub fn build_weight_vector(len: usize, idx: &TokenSpanIndex, gamma: f64) -> Result<WeightVector, SpanMapError> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(SpanMapError::InvalidGamma(gamma));
    }
    if len == 0 {
        return Err(SpanMapError::EmptySequence);
    }
    if idx.len != len {
        return Err(SpanMapError::LengthMismatch {
            index_len: idx.len,
            expected: len,
        });
    }
    let lambdas: Vec<f64> = (0..len).map(|i| if idx.contains(i) { gamma } else { 1.0 }).collect();
    // Summing exact integers and one product keeps Λ = T + (γ-1)|I| exact up to a single rounding.
    let total = (len - idx.count()) as f64 + gamma * idx.count() as f64;
    Ok(WeightVector {
        lambdas,
        gamma: Some(gamma),
        total,
    })
}

/// Full pipeline for a report tokenized by any tokenizer: match keywords,
/// select overlapping tokens, build weights.
pub fn weights_for_sequence(
    seq: &TokenizedSequence,
    set: &KeywordSet,
    gamma: f64,
) -> Result<WeightVector, SpanMapError> {
    let matches = find_keyword_spans(seq.text(), set);
    let idx = spans_to_token_indices(&matches, seq)?;
    build_weight_vector(seq.len(), &idx, gamma)
}

/// Same as [`weights_for_sequence`] but takes raw caller-provided offsets,
/// validating them first. This is the entry point for external training
/// loops that bring their own tokenizer.
pub fn weights_for(
    text: &str,
    ids: Vec<u32>,
    spans: Vec<Range<usize>>,
    set: &KeywordSet,
    gamma: f64,
) -> Result<Vec<f64>, SpanMapError> {
    let seq = TokenizedSequence::from_offsets(text, ids, spans)?;
    Ok(weights_for_sequence(&seq, set, gamma)?.lambdas)
}
