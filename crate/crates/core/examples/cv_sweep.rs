//! A reduced cross-validated sweep over learning rate and gamma.
use std::sync::Arc;

use keyweight::lexicon::BuiltinSet;
use keyweight::sweep::{run_sweep, SetChoice, SweepGrid};
use keyweight::trainer::{corpus_vocab, generate_corpus, DEFAULT_VOCAB_SIZE};

fn main() {
    let corpus = generate_corpus(800, 5);
    let vocab = Arc::new(corpus_vocab(&corpus, DEFAULT_VOCAB_SIZE).unwrap());
    let mut grid = SweepGrid::default().restricted(0.3, &[SetChoice::None, SetChoice::Builtin(BuiltinSet::Diagnostic)]);
    grid.learning_rates = vec![2.15e-4, 6.5e-4];
    println!("{} trials", grid.trial_count());
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    for t in run_sweep(&grid, &corpus, vocab, 5, jobs).unwrap() {
        println!("{}", t.log_line());
    }
}
