//! Standard vs weighted loss at two data fractions on held-out reports.
//! Takes a few minutes.
use keyweight::lexicon::BuiltinSet;
use keyweight::sweep::{comparison_table, relative_gain, Method, SweepGrid, DEFAULT_TEST_SHARE};
use keyweight::trainer::generate_corpus;

fn main() {
    let corpus = generate_corpus(2000, 1);
    let grid = SweepGrid {
        fractions: vec![0.1, 0.3],
        learning_rates: vec![6.5e-4],
        ..SweepGrid::default()
    };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let table = comparison_table(&corpus, &grid, BuiltinSet::Combined, DEFAULT_TEST_SHARE, 1, jobs).unwrap();
    print!("{}", table.to_tsv());
    for &f in &grid.fractions {
        let (s, w) = (
            table.row(f, Method::Standard).unwrap(),
            table.row(f, Method::Weighted).unwrap(),
        );
        if let Ok(g) = relative_gain(w.amd_f1, s.amd_f1) {
            println!("fraction {f}: AMD F1 gain {:+.1}%", 100.0 * g);
        }
    }
}
