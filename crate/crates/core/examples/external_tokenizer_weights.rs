//! Weights for a sequence segmented by some other tokenizer, given only
//! its ids and character offsets.
use keyweight::lexicon::{builtin, BuiltinSet};
use keyweight::loss::{weighted_cross_entropy, LogitMatrix};
use keyweight::spanmap::{weights_for, WeightVector};

fn main() {
    let text = "Drusen and subretinal fluid";
    // character-level pieces for the first word, whole words afterwards
    let spans = vec![0..2, 2..4, 4..6, 6..10, 10..21, 21..27];
    let ids = vec![101, 102, 103, 7, 205, 309];
    let lambdas = weights_for(text, ids, spans, &builtin(BuiltinSet::Diagnostic), 2.0).unwrap();
    println!("{lambdas:?}");

    let logits = LogitMatrix::from_rows(6, 4, vec![0.0; 24]).unwrap();
    let w = WeightVector::from_lambdas(lambdas).unwrap();
    let r = weighted_cross_entropy(&logits, &[0, 1, 2, 3, 0, 1], &w).unwrap();
    println!("loss {:.6} (uniform logits give ln 4 = {:.6})", r.value, 4f64.ln());
}
