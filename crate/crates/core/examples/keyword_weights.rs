//! Match keywords in a report and build the per-token weight vector.
use keyweight::lexicon::{builtin, BuiltinSet};
use keyweight::spanmap::{find_keyword_spans, match_tokens, weights_for_sequence};
use keyweight::tokenizer::tokenize;
use keyweight::trainer::{corpus_vocab, generate_corpus, DEFAULT_VOCAB_SIZE};

fn main() {
    let vocab = corpus_vocab(&generate_corpus(500, 2), DEFAULT_VOCAB_SIZE).expect("vocabulary");
    let set = builtin(BuiltinSet::Combined);
    let text = "Intermediate AMD with multiple drusen. No subretinal fluid.";
    let seq = tokenize(text, &vocab);

    let matches = match_tokens(&find_keyword_spans(text, &set), &seq).expect("valid spans");
    for m in &matches {
        println!("{m}");
    }
    let w = weights_for_sequence(&seq, &set, 3.5).expect("weights");
    for ((id, l), span) in seq.ids().iter().zip(w.lambdas()).zip(seq.spans()) {
        let piece: String = text.chars().skip(span.start).take(span.end - span.start).collect();
        println!("{id:>4} {piece:<16?} λ={l}");
    }
    println!("Λ = {}", w.total());
}
