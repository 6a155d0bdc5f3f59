//! Keyword-weighted token cross-entropy for data-efficient report generation.
//!
//! The pieces, bottom-up:
//!
//! - [`lexicon`]: the built-in diagnostic/quantitative keyword sets and user lexicons.
//! - [`tokenizer`]: a small subword tokenizer that keeps exact character offsets.
//! - [`spanmap`]: keyword occurrences to selected token positions to weights `λ`.
//! - [`loss`]: the `Λ`-normalized weighted cross-entropy and its gradient.
//! - [`trainer`]: a synthetic ophthalmology report corpus and a tiny conditional LM.
//! - [`reporteval`]: rule-based AMD stage / biomarker extraction and macro F1.
//! - [`sweep`]: k-fold CV, the learning-rate × γ grid, and standard-vs-weighted tables.
//! - [`cli`]: the `keyweight` command-line front end.
//!
//! See `examples/` for one runnable program per capability.

pub mod cli;
pub mod lexicon;
pub mod loss;
pub mod reporteval;
pub mod spanmap;
pub mod sweep;
pub mod tokenizer;
pub mod trainer;
