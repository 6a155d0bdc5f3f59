//! Generate a few synthetic samples and grade their reports back to labels.
use keyweight::reporteval::extract_labels;
use keyweight::trainer::{generate_corpus, write_corpus};

fn main() {
    let corpus = generate_corpus(4, 7);
    for s in &corpus {
        println!("prompt: {}\nreport: {}", s.prompt, s.report);
        let (stage, found) = extract_labels(&s.report);
        println!(
            "graded: {stage} {}  gold: {} {}\n",
            found.to_flags(),
            s.labels.stage,
            s.labels.biomarkers.to_flags()
        );
    }
    print!("{}", write_corpus(&corpus[..1]));
}
