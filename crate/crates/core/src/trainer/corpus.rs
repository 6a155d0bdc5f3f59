//! Synthetic OCT report corpus.
//!
//! Each sample pairs a structured prompt (a stand-in for the image: one code
//! word for the stage and one per biomarker flag) with a templated reference
//! report. Stage and biomarker mentions use the clinical keyword vocabulary;
//! filler sentences vary freely and carry no label information. Biomarker
//! sentences follow a fixed order.

use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::reporteval::{AmdStage, Biomarker, BiomarkerFindings};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("fraction {0} must lie in (0, 1]")]
    BadFraction(String),
    #[error("fraction {fraction} of {size} samples selects nothing")]
    EmptySubset { fraction: String, size: usize },
    #[error("corpus line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GoldLabels {
    pub stage: AmdStage,
    pub biomarkers: BiomarkerFindings,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSample {
    pub prompt: String,
    pub report: String,
    pub labels: GoldLabels,
    pub seed: u64,
}

/// Prompt code word for a stage.
pub fn stage_code(stage: AmdStage) -> &'static str {
    match stage {
        AmdStage::Healthy => "s0",
        AmdStage::EarlyIntermediate => "s1",
        AmdStage::LateWet => "s2",
        AmdStage::LateDry => "s3",
        AmdStage::Unknown => "s9",
    }
}

/// Prompt code word for a biomarker flag, e.g. `b61` for subretinal fluid present.
pub fn biomarker_code(b: Biomarker, present: bool) -> String {
    format!("b{}{}", b.index(), u8::from(present))
}

/// The structured prompt for a label set.
pub fn prompt_for(labels: &GoldLabels) -> String {
    let mut p = format!("oct {}", stage_code(labels.stage));
    for b in Biomarker::ALL {
        write!(p, " {}", biomarker_code(b, labels.biomarkers.get(b))).unwrap();
    }
    p
}

/// Per-stage presence probabilities in [`Biomarker::ALL`] order.
fn biomarker_rates(stage: AmdStage) -> [f64; 8] {
    match stage {
        AmdStage::Healthy | AmdStage::Unknown => [0.0; 8],
        AmdStage::EarlyIntermediate => [0.9, 0.4, 0.2, 0.3, 0.1, 0.02, 0.05, 0.05],
        AmdStage::LateWet => [0.6, 0.5, 0.5, 0.4, 0.2, 0.3, 0.6, 0.5],
        AmdStage::LateDry => [0.6, 0.6, 0.1, 0.4, 0.8, 0.1, 0.05, 0.05],
    }
}

const HEALTHY: &[&str] = &[
    "The retina appears healthy.",
    "Healthy retina.",
    "Normal retinal findings.",
    "The macula looks normal.",
];
const EARLY: &[&str] = &[
    "Findings are consistent with early AMD.",
    "Findings are consistent with intermediate AMD.",
    "There are signs of early AMD.",
    "The scan shows intermediate AMD.",
];
const LATE_WET: &[&str] = &[
    "Findings are consistent with late wet AMD.",
    "The scan shows late wet AMD.",
    "There are signs of active late wet AMD.",
];
const LATE_DRY: &[&str] = &[
    "Findings are consistent with late dry AMD.",
    "The scan shows late dry AMD with atrophy.",
    "There are signs of late dry AMD.",
];

const FILLER: &[&str] = &[
    "Image quality is good.",
    "Image quality is adequate.",
    "The foveal contour is preserved.",
    "The foveal depression is visible.",
    "Signal strength is sufficient.",
    "The choroid is unremarkable.",
    "Retinal layers are well delineated.",
    "The vitreous interface is clear.",
    "Centration on the fovea is acceptable.",
    "Follow-up imaging is recommended.",
    "Comparison with prior imaging is advised.",
    "The optic nerve head is outside the field of view.",
];

const SEEN: &[&str] = &["visible", "seen", "present"];

fn stage_sentence(stage: AmdStage, rng: &mut ChaCha8Rng) -> &'static str {
    let pool = match stage {
        AmdStage::Healthy | AmdStage::Unknown => HEALTHY,
        AmdStage::EarlyIntermediate => EARLY,
        AmdStage::LateWet => LATE_WET,
        AmdStage::LateDry => LATE_DRY,
    };
    pool.choose(rng).expect("non-empty")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn positive_sentence(b: Biomarker, rng: &mut ChaCha8Rng) -> String {
    let seen = SEEN.choose(rng).unwrap();
    let pick = |rng: &mut ChaCha8Rng, xs: &[&'static str]| *xs.choose(rng).unwrap();
    match b {
        Biomarker::Drusen => {
            let q = pick(rng, &["multiple", "several", "some", "many", "large", "small"]);
            format!("{} drusen are {seen}.", capitalize(q))
        }
        Biomarker::RpeIrregularity => {
            let q = pick(rng, &["slight", "moderate", "significant"]);
            format!("There is {q} irregularity of the retinal pigment epithelium.")
        }
        Biomarker::PigmentEpithelialDetachment => {
            let q = pick(rng, &["small", "large", "medium"]);
            format!("A {q} pigment epithelial detachment is {seen}.")
        }
        Biomarker::HyperreflectiveFoci => {
            let q = pick(rng, &["several", "multiple", "some", "many"]);
            format!("{} hyperreflective foci are {seen}.", capitalize(q))
        }
        Biomarker::Hypertransmission => {
            let q = pick(rng, &["increased", "significant", "extensive"]);
            format!("{} hypertransmission is {seen}.", capitalize(q))
        }
        Biomarker::Fibrosis => {
            let q = pick(rng, &["extensive", "moderate", "minimal", "slight"]);
            format!("{} fibrosis is {seen}.", capitalize(q))
        }
        Biomarker::SubretinalFluid | Biomarker::IntraretinalFluid => {
            let q = pick(rng, &["some", "moderate", "significant", "minimal"]);
            let term = if b == Biomarker::SubretinalFluid {
                "subretinal"
            } else {
                "intraretinal"
            };
            format!("{} {term} fluid is {seen}.", capitalize(q))
        }
    }
}

fn negative_sentence(b: Biomarker, rng: &mut ChaCha8Rng) -> String {
    let term = match b {
        Biomarker::Drusen => "drusen",
        Biomarker::RpeIrregularity => "irregularity of the retinal pigment epithelium",
        Biomarker::PigmentEpithelialDetachment => "pigment epithelial detachment",
        Biomarker::HyperreflectiveFoci => "hyperreflective foci",
        Biomarker::Hypertransmission => "hypertransmission",
        Biomarker::Fibrosis => "fibrosis",
        Biomarker::SubretinalFluid => "subretinal fluid",
        Biomarker::IntraretinalFluid => "intraretinal fluid",
    };
    match rng.random_range(0..4) {
        0 => format!("No {term} is seen."),
        1 => format!("There is no {term}."),
        2 => format!("The scan is free of {term}."),
        _ => format!("Without evidence of {term}."),
    }
}

/// Per-sample seed, so each sample depends only on `(seed, index)`.
fn sample_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws biomarker flags for `stage` and writes a matching report.
pub fn synth_sample(stage: AmdStage, sample_seed: u64) -> SynthSample {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let rates = biomarker_rates(stage);
    let mut biomarkers = BiomarkerFindings::default();
    for b in Biomarker::ALL {
        biomarkers.set(b, rng.random::<f64>() < rates[b.index()]);
    }
    let labels = GoldLabels { stage, biomarkers };

    let mut body: Vec<String> = Vec::new();
    let negative_rate = if stage == AmdStage::Healthy { 0.3 } else { 0.4 };
    for b in Biomarker::ALL {
        if biomarkers.get(b) {
            body.push(positive_sentence(b, &mut rng));
        } else if rng.random::<f64>() < negative_rate {
            body.push(negative_sentence(b, &mut rng));
        }
    }

    let mut sentences: Vec<String> = Vec::new();
    if rng.random::<f64>() < 0.4 {
        sentences.push(FILLER.choose(&mut rng).unwrap().to_string());
    }
    sentences.push(stage_sentence(stage, &mut rng).to_string());
    sentences.extend(body);
    for _ in 0..rng.random_range(0..3) {
        sentences.push(FILLER.choose(&mut rng).unwrap().to_string());
    }

    SynthSample {
        prompt: prompt_for(&labels),
        report: sentences.join(" "),
        labels,
        seed: sample_seed,
    }
}

/// `n` samples with stages balanced in blocks of four (each block is a
/// random permutation of the four classes). Sample `i` depends only on
/// `(seed, i)`, so shorter corpora are prefixes of longer ones.
pub fn generate_corpus(n_samples: usize, seed: u64) -> Vec<SynthSample> {
    (0..n_samples)
        .map(|i| {
            let block = i / 4;
            let mut order = AmdStage::CLASSES;
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(sample_seed(seed ^ 0x5354_4147, block)));
            synth_sample(order[i % 4], sample_seed(seed, i))
        })
        .collect()
}

fn stage_index(stage: AmdStage) -> usize {
    AmdStage::CLASSES
        .iter()
        .position(|&s| s == stage)
        .unwrap_or(AmdStage::CLASSES.len())
}

/// A stratified ordering of `0..labels.len()`: every prefix holds each stage
/// in proportion to its share of the whole, within one item.
pub fn stratified_order(labels: &[AmdStage], seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); AmdStage::CLASSES.len() + 1];
    for (i, &s) in labels.iter().enumerate() {
        groups[stage_index(s)].push(i);
    }
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(labels.len());
    for (g, members) in groups.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        for (rank, &idx) in members.iter().enumerate() {
            keyed.push(((rank as f64 + 0.5) / n, g, idx));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, i)| i).collect()
}

/// Indices of a stratified subset of `round(fraction · N)` items, ascending.
/// For a fixed seed, smaller fractions select subsets of larger ones.
pub fn subset_indices(labels: &[AmdStage], fraction: f64, seed: u64) -> Result<Vec<usize>, CorpusError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CorpusError::BadFraction(fraction.to_string()));
    }
    let take = (fraction * labels.len() as f64).round() as usize;
    if take == 0 {
        return Err(CorpusError::EmptySubset {
            fraction: fraction.to_string(),
            size: labels.len(),
        });
    }
    let mut idx: Vec<usize> = stratified_order(labels, seed).into_iter().take(take).collect();
    idx.sort_unstable();
    Ok(idx)
}

pub fn subset_fraction(corpus: &[SynthSample], fraction: f64, seed: u64) -> Result<Vec<SynthSample>, CorpusError> {
    let labels: Vec<AmdStage> = corpus.iter().map(|s| s.labels.stage).collect();
    Ok(subset_indices(&labels, fraction, seed)?
        .into_iter()
        .map(|i| corpus[i].clone())
        .collect())
}

/// One sample per line: `prompt<TAB>report<TAB>stage<TAB>flags`.
pub fn write_corpus(samples: &[SynthSample]) -> String {
    let mut out = String::new();
    for s in samples {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            s.prompt,
            s.report,
            s.labels.stage,
            s.labels.biomarkers.to_flags()
        )
        .unwrap();
    }
    out
}

/// Parses the corpus format. The report column may be empty. Samples read
/// from disk carry their line index as seed.
pub fn read_corpus(text: &str) -> Result<Vec<SynthSample>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| CorpusError::Parse { line: i + 1, reason };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(err(format!("expected 4 tab-separated columns, found {}", cols.len())));
        }
        let stage: AmdStage = cols[2].trim().parse().map_err(|e| err(format!("{e}")))?;
        let biomarkers =
            BiomarkerFindings::from_flags(cols[3]).ok_or_else(|| err(format!("bad flags `{}`", cols[3])))?;
        out.push(SynthSample {
            prompt: cols[0].to_string(),
            report: cols[1].to_string(),
            labels: GoldLabels { stage, biomarkers },
            seed: i as u64,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reporteval::extract_labels;

    #[test]
    fn deterministic_and_prefix_stable() {
        let a = generate_corpus(40, 11);
        assert_eq!(a, generate_corpus(40, 11));
        assert_eq!(&generate_corpus(60, 11)[..40], &a[..]);
        assert_ne!(a, generate_corpus(40, 12));
    }

    #[test]
    fn small_corpus_covers_all_stages() {
        let c = generate_corpus(8, 5);
        for s in AmdStage::CLASSES {
            assert_eq!(c.iter().filter(|x| x.labels.stage == s).count(), 2);
        }
    }

    #[test]
    fn healthy_has_no_biomarkers() {
        for s in generate_corpus(400, 2) {
            if s.labels.stage == AmdStage::Healthy {
                assert!(!s.labels.biomarkers.any());
            }
        }
    }

    #[test]
    fn late_wet_fluid_is_mentioned_without_negation() {
        let sample = (0..)
            .map(|i| synth_sample(AmdStage::LateWet, i))
            .find(|s| s.labels.biomarkers.get(Biomarker::SubretinalFluid))
            .unwrap();
        let lower = sample.report.to_lowercase();
        assert!(lower.contains("late") && lower.contains("wet"));
        let clause = lower
            .split('.')
            .find(|c| c.contains("subretinal fluid"))
            .expect("fluid mentioned");
        assert!(!clause.split_whitespace().any(|w| w == "no" || w == "without"));
        assert!(!clause.contains("free of"));
    }

    #[test]
    fn generator_round_trips_through_extractor() {
        for s in generate_corpus(1000, 9) {
            let (stage, findings) = extract_labels(&s.report);
            assert_eq!(stage, s.labels.stage, "{}", s.report);
            assert_eq!(findings, s.labels.biomarkers, "{}", s.report);
        }
    }

    #[test]
    fn subset_counts_and_nesting() {
        let c = generate_corpus(1000, 4);
        let sub = subset_fraction(&c, 0.10, 7).unwrap();
        assert_eq!(sub.len(), 100);
        for s in AmdStage::CLASSES {
            let total = c.iter().filter(|x| x.labels.stage == s).count() as f64;
            let got = sub.iter().filter(|x| x.labels.stage == s).count() as f64;
            assert!((got - 0.1 * total).abs() <= 1.0, "{s}: {got} vs {}", 0.1 * total);
        }
        let labels: Vec<AmdStage> = c.iter().map(|s| s.labels.stage).collect();
        let small = subset_indices(&labels, 0.01, 7).unwrap();
        let mid = subset_indices(&labels, 0.03, 7).unwrap();
        let big = subset_indices(&labels, 0.10, 7).unwrap();
        assert!(small.iter().all(|i| mid.contains(i)));
        assert!(mid.iter().all(|i| big.contains(i)));
    }

    #[test]
    fn full_fraction_is_identity() {
        let c = generate_corpus(50, 1);
        assert_eq!(subset_fraction(&c, 1.0, 3).unwrap(), c);
    }

    #[test]
    fn subset_errors() {
        let c = generate_corpus(10, 1);
        assert!(matches!(subset_fraction(&c, 0.0, 1), Err(CorpusError::BadFraction(_))));
        assert!(matches!(subset_fraction(&c, 1.5, 1), Err(CorpusError::BadFraction(_))));
        assert!(matches!(
            subset_fraction(&c, 0.01, 1),
            Err(CorpusError::EmptySubset { .. })
        ));
    }

    #[test]
    fn corpus_file_round_trip() {
        let c = generate_corpus(20, 3);
        let back = read_corpus(&write_corpus(&c)).unwrap();
        for (a, b) in c.iter().zip(&back) {
            assert_eq!((&a.prompt, &a.report, a.labels), (&b.prompt, &b.report, b.labels));
        }
        assert!(matches!(
            read_corpus("a\tb\tc\n"),
            Err(CorpusError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_corpus("a\tb\tnope\t0,0,0,0,0,0,0,0\n"),
            Err(CorpusError::Parse { .. })
        ));
        let gold_only = read_corpus("oct s0\t\thealthy\t0,0,0,0,0,0,0,0\n").unwrap();
        assert_eq!(gold_only[0].report, "");
    }
}
