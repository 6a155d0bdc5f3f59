//! Train a small BPE vocabulary and show how words split into pieces with
//! character offsets.
use keyweight::tokenizer::{detokenize, tokenize, train_vocab};
use keyweight::trainer::generate_corpus;

fn main() {
    let corpus = generate_corpus(200, 1);
    let texts: Vec<&str> = corpus.iter().map(|s| s.report.as_str()).collect();
    let vocab = train_vocab(&texts, 120).expect("vocabulary");
    println!("vocabulary: {} pieces", vocab.len());

    let text = "Subretinal fluid with hypertransmission.";
    let seq = tokenize(text, &vocab);
    for (id, span) in seq.ids().iter().zip(seq.spans()) {
        let piece = vocab.piece(*id).unwrap_or("?");
        println!("{id:>4}  {:>2}..{:<2}  {piece:?}", span.start, span.end);
    }
    assert_eq!(detokenize(&seq, &vocab).unwrap(), text);
}
