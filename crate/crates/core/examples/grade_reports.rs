//! Grade free-text reports against gold labels with macro F1.
use keyweight::reporteval::score_reports;
use keyweight::trainer::generate_corpus;

fn main() {
    let test = generate_corpus(8, 3);
    let mut reports: Vec<String> = test.iter().map(|s| s.report.clone()).collect();
    reports[0] = "Late AMD without drusen.".into();
    reports[1] = String::new();
    let score = score_reports(&reports, &test).unwrap();
    println!(
        "AMD stage F1 {:.3}, biomarker F1 {:.3}",
        score.amd_f1, score.biomarker_f1
    );
    for c in &score.stage_report.per_class {
        println!("  {:<13} tp={} fp={} fn={} f1={:.3}", c.class, c.tp, c.fp, c.fn_, c.f1);
    }
}
