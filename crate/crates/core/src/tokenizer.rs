//! Deterministic subword tokenizer with character-offset tracking.
//!
//! Vocabularies are grown by byte-pair-style merging over a pre-split corpus
//! (a leading space stays attached to the following word). Encoding is greedy
//! longest-match over the piece table, so every token carries the exact
//! half-open character range it covers in the source text.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::Range;

use thiserror::Error;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const NUM_SPECIALS: usize = 4;

const SPECIAL_SURFACES: [&str; NUM_SPECIALS] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("target size {target} is below the minimum {minimum} ({chars} characters + {NUM_SPECIALS} specials)")]
    TargetTooSmall {
        target: usize,
        minimum: usize,
        chars: usize,
    },
    #[error("token id {id} at position {position} is outside the vocabulary (size {size})")]
    InvalidId { id: u32, position: usize, size: usize },
    #[error("vocabulary file line {line}: {reason}")]
    BadVocabFile { line: usize, reason: String },
    #[error("invalid offsets at token {index}: {reason}")]
    InvalidOffsets { index: usize, reason: String },
}

/// Piece table with dense ids. Ids `0..4` are the specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pieces: Vec<String>,
    id_of: HashMap<String, u32>,
    max_piece_chars: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from non-special pieces. Duplicates are rejected.
    pub fn from_pieces<I, S>(pieces: I) -> Result<Self, TokenizerError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = SPECIAL_SURFACES.iter().map(|s| s.to_string()).collect();
        let mut id_of = HashMap::new();
        let mut max_piece_chars = 0;
        for (i, p) in pieces.into_iter().enumerate() {
            let p: String = p.into();
            if p.is_empty() {
                return Err(TokenizerError::BadVocabFile {
                    line: i + NUM_SPECIALS + 1,
                    reason: "empty piece".into(),
                });
            }
            let id = all.len() as u32;
            if id_of.insert(p.clone(), id).is_some() {
                return Err(TokenizerError::BadVocabFile {
                    line: i + NUM_SPECIALS + 1,
                    reason: format!("duplicate piece {p:?}"),
                });
            }
            max_piece_chars = max_piece_chars.max(p.chars().count());
            all.push(p);
        }
        Ok(Vocabulary {
            pieces: all,
            id_of,
            max_piece_chars,
        })
    }

    /// Appends pieces not already present, keeping existing ids.
    pub fn with_added_pieces<I, S>(mut self, pieces: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        for p in pieces {
            let p: String = p.into();
            if p.is_empty() || self.id_of.contains_key(&p) {
                continue;
            }
            self.max_piece_chars = self.max_piece_chars.max(p.chars().count());
            self.id_of.insert(p.clone(), self.pieces.len() as u32);
            self.pieces.push(p);
        }
        self
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    /// Id of a non-special piece.
    pub fn id(&self, piece: &str) -> Option<u32> {
        self.id_of.get(piece).copied()
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    /// Serializes as one piece per line in id order, specials first.
    /// Backslash, newline, tab and carriage return are escaped, and a leading
    /// space is written as `\s`.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for p in &self.pieces {
            out.push_str(&escape_piece(p));
            out.push('\n');
        }
        out
    }

    pub fn from_file_str(text: &str) -> Result<Self, TokenizerError> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < NUM_SPECIALS {
            return Err(TokenizerError::BadVocabFile {
                line: lines.len() + 1,
                reason: "missing special tokens".into(),
            });
        }
        for (i, expected) in SPECIAL_SURFACES.iter().enumerate() {
            if lines[i] != *expected {
                return Err(TokenizerError::BadVocabFile {
                    line: i + 1,
                    reason: format!("expected special {expected}"),
                });
            }
        }
        let mut pieces = Vec::with_capacity(lines.len() - NUM_SPECIALS);
        for (i, l) in lines.iter().enumerate().skip(NUM_SPECIALS) {
            pieces.push(unescape_piece(l).map_err(|reason| TokenizerError::BadVocabFile { line: i + 1, reason })?);
        }
        Vocabulary::from_pieces(pieces)
    }
}

fn escape_piece(p: &str) -> String {
    let mut out = String::with_capacity(p.len() + 2);
    for (i, c) in p.chars().enumerate() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            ' ' if i == 0 => out.push_str("\\s"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_piece(line: &str) -> Result<String, String> {
    let mut out = String::with_capacity(line.len());
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('s') => out.push(' '),
            Some(other) => return Err(format!("unknown escape \\{other}")),
            None => return Err("dangling backslash".into()),
        }
    }
    if out.is_empty() {
        return Err("empty piece".into());
    }
    Ok(out)
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Splits text into merge domains: an optional single leading space followed
/// by a run of word characters or one punctuation character; other
/// whitespace stands alone.
fn pre_split(text: &[char]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let start = i;
        let c = text[i];
        if c == ' ' && i + 1 < text.len() && !text[i + 1].is_whitespace() {
            i += 1;
        } else if c.is_whitespace() {
            out.push(start..i + 1);
            i += 1;
            continue;
        }
        if is_word_char(text[i]) {
            while i < text.len() && is_word_char(text[i]) {
                i += 1;
            }
        } else {
            i += 1;
        }
        out.push(start..i);
    }
    out
}

/// Grows a vocabulary by greedy pair merging until it holds `target_size`
/// pieces (specials included) or no pair remains. The most frequent adjacent
/// pair wins; ties go to the lexicographically smallest `(left, right)`.
pub fn train_vocab<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<Vocabulary, TokenizerError> {
    if corpus.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }

    let mut alphabet = BTreeSet::new();
    let mut chunk_counts: BTreeMap<Vec<char>, usize> = BTreeMap::new();
    for line in corpus {
        let chars: Vec<char> = line.as_ref().chars().collect();
        alphabet.extend(chars.iter().copied());
        for r in pre_split(&chars) {
            *chunk_counts.entry(chars[r].to_vec()).or_insert(0) += 1;
        }
    }
    let minimum = alphabet.len() + NUM_SPECIALS;
    if target_size < minimum {
        return Err(TokenizerError::TargetTooSmall {
            target: target_size,
            minimum,
            chars: alphabet.len(),
        });
    }

    let mut pieces: Vec<String> = alphabet.iter().map(|c| c.to_string()).collect();
    let mut index: HashMap<String, usize> = pieces.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
    let mut words: Vec<(Vec<usize>, usize)> = chunk_counts
        .into_iter()
        .map(|(chars, n)| (chars.iter().map(|c| index[&c.to_string()]).collect(), n))
        .collect();

    while pieces.len() + NUM_SPECIALS < target_size {
        let mut pair_counts: HashMap<(usize, usize), usize> = HashMap::new();
        for (w, n) in &words {
            for pair in w.windows(2) {
                *pair_counts.entry((pair[0], pair[1])).or_insert(0) += n;
            }
        }
        let best = pair_counts.into_iter().max_by(|&(pa, ca), &(pb, cb)| {
            ca.cmp(&cb).then_with(|| {
                // Smaller (left, right) strings rank higher.
                (pieces[pb.0].as_str(), pieces[pb.1].as_str()).cmp(&(pieces[pa.0].as_str(), pieces[pa.1].as_str()))
            })
        });
        let Some(((a, b), _)) = best else { break };
        let merged = format!("{}{}", pieces[a], pieces[b]);
        let new_id = match index.get(&merged) {
            Some(&id) => id,
            None => {
                pieces.push(merged.clone());
                index.insert(merged, pieces.len() - 1);
                pieces.len() - 1
            }
        };
        for (w, _) in &mut words {
            let mut out = Vec::with_capacity(w.len());
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && w[i] == a && w[i + 1] == b {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(w[i]);
                    i += 1;
                }
            }
            *w = out;
        }
    }

    Vocabulary::from_pieces(pieces)
}

/// Token ids plus the half-open character range each token covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSequence {
    text: String,
    ids: Vec<u32>,
    spans: Vec<Range<usize>>,
}

impl TokenizedSequence {
    /// Wraps a tokenization produced elsewhere (for instance by an external
    /// model's tokenizer), checking that spans are contiguous, sorted and
    /// cover the whole text.
    pub fn from_offsets(
        text: impl Into<String>,
        ids: Vec<u32>,
        spans: Vec<Range<usize>>,
    ) -> Result<Self, TokenizerError> {
        let text = text.into();
        if ids.len() != spans.len() {
            return Err(TokenizerError::InvalidOffsets {
                index: ids.len().min(spans.len()),
                reason: format!("{} ids but {} spans", ids.len(), spans.len()),
            });
        }
        let n = text.chars().count();
        let mut cursor = 0;
        for (i, s) in spans.iter().enumerate() {
            if s.start != cursor {
                return Err(TokenizerError::InvalidOffsets {
                    index: i,
                    reason: format!("span starts at {} but previous token ended at {cursor}", s.start),
                });
            }
            if s.end <= s.start {
                return Err(TokenizerError::InvalidOffsets {
                    index: i,
                    reason: "empty or reversed span".into(),
                });
            }
            if s.end > n {
                return Err(TokenizerError::InvalidOffsets {
                    index: i,
                    reason: format!("span end {} exceeds text length {n}", s.end),
                });
            }
            cursor = s.end;
        }
        if cursor != n {
            return Err(TokenizerError::InvalidOffsets {
                index: spans.len(),
                reason: format!("spans cover {cursor} of {n} characters"),
            });
        }
        Ok(TokenizedSequence { text, ids, spans })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn spans(&self) -> &[Range<usize>] {
        &self.spans
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of characters in the source text.
    pub fn char_len(&self) -> usize {
        self.spans.last().map_or(0, |s| s.end)
    }
}

impl fmt::Display for TokenizedSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (id, s) in self.ids.iter().zip(&self.spans) {
            writeln!(f, "{id}\t{}\t{}", s.start, s.end)?;
        }
        Ok(())
    }
}

/// Greedy longest-match segmentation. Characters with no piece become a
/// single-character unk token.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> TokenizedSequence {
    let chars: Vec<char> = text.chars().collect();
    let mut ids = Vec::new();
    let mut spans = Vec::new();
    let mut buf = String::new();
    let mut i = 0;
    while i < chars.len() {
        let longest = vocab.max_piece_chars.min(chars.len() - i);
        let mut hit = None;
        for len in (1..=longest).rev() {
            buf.clear();
            buf.extend(&chars[i..i + len]);
            if let Some(id) = vocab.id(&buf) {
                hit = Some((id, len));
                break;
            }
        }
        let (id, len) = hit.unwrap_or((UNK, 1));
        ids.push(id);
        spans.push(i..i + len);
        i += len;
    }
    TokenizedSequence {
        text: text.to_string(),
        ids,
        spans,
    }
}

/// Concatenates pieces; unk tokens are restored from the source text via
/// their spans.
pub fn detokenize(seq: &TokenizedSequence, vocab: &Vocabulary) -> Result<String, TokenizerError> {
    let chars: Vec<char> = seq.text.chars().collect();
    let mut out = String::with_capacity(seq.text.len());
    for (pos, (&id, span)) in seq.ids.iter().zip(&seq.spans).enumerate() {
        let piece = vocab.piece(id).ok_or(TokenizerError::InvalidId {
            id,
            position: pos,
            size: vocab.len(),
        })?;
        if vocab.is_special(id) {
            out.extend(&chars[span.clone()]);
        } else {
            out.push_str(piece);
        }
    }
    Ok(out)
}

/// Concatenates the pieces of `ids`, dropping specials.
pub fn decode_ids(ids: &[u32], vocab: &Vocabulary) -> Result<String, TokenizerError> {
    let mut out = String::new();
    for (pos, &id) in ids.iter().enumerate() {
        let piece = vocab.piece(id).ok_or(TokenizerError::InvalidId {
            id,
            position: pos,
            size: vocab.len(),
        })?;
        if !vocab.is_special(id) {
            out.push_str(piece);
        }
    }
    Ok(out)
}
