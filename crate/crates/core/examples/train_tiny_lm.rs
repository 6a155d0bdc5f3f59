//! Train the small language model with and without keyword weighting and
//! compare loss curves and keyword NLL on held-out reports.
use std::sync::Arc;

use keyweight::lexicon::{builtin, BuiltinSet};
use keyweight::sweep::DEFAULT_LR_SCALE;
use keyweight::trainer::{corpus_vocab, generate_corpus, keyword_nll, train, TrainConfig, DEFAULT_VOCAB_SIZE};

fn main() {
    let corpus = generate_corpus(600, 4);
    let (train_set, held_out) = corpus.split_at(400);
    let vocab = Arc::new(corpus_vocab(train_set, DEFAULT_VOCAB_SIZE).unwrap());
    let kw = builtin(BuiltinSet::Combined);
    for gamma in [1.0, 6.0] {
        let cfg = TrainConfig {
            learning_rate: 6.5e-4,
            lr_scale: DEFAULT_LR_SCALE,
            gamma,
            keyword_set: "combined".into(),
            seed: 1,
            ..TrainConfig::default()
        };
        let run = train(train_set, vocab.clone(), Some(&kw), &cfg).unwrap();
        let curve: Vec<String> = run.epoch_losses.iter().map(|l| format!("{l:.3}")).collect();
        println!(
            "gamma={gamma}: initial {:.3}, epochs [{}]",
            run.initial_loss,
            curve.join(", ")
        );
        println!(
            "  keyword NLL on held-out: {:.4}",
            keyword_nll(&run.model, held_out, &kw).unwrap()
        );
        println!("  sample: {}", run.model.generate(&held_out[0].prompt, 60));
    }
}
