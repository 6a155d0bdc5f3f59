//! Report grading: rule-based extraction of AMD stage and biomarker presence,
//! and macro-averaged F1 over the extracted labels.
//!
//! Negation is clause-scoped. A cue (`no`, `without`, `absence of`,
//! `free of`) negates every term that follows it up to the next comma,
//! period, semicolon, or coordinating `and` / `but`.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use thiserror::Error;

use crate::lexicon::{Category, KeywordSet};
use crate::spanmap::{find_keyword_spans, KeywordSpan};
use crate::trainer::SynthSample;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{predictions} predictions but {golds} gold labels")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("nothing to score")]
    Empty,
    #[error("gold label `{0}` at position {1} is not in the class set")]
    UnknownGold(String, usize),
    #[error("unknown stage `{0}`")]
    UnknownStage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AmdStage {
    Healthy,
    EarlyIntermediate,
    LateWet,
    LateDry,
    /// Prediction-only bucket for reports with no stage evidence.
    Unknown,
}

impl AmdStage {
    /// The four graded classes. `Unknown` is never a gold class.
    pub const CLASSES: [AmdStage; 4] = [
        AmdStage::Healthy,
        AmdStage::EarlyIntermediate,
        AmdStage::LateWet,
        AmdStage::LateDry,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AmdStage::Healthy => "healthy",
            AmdStage::EarlyIntermediate => "early_intermediate",
            AmdStage::LateWet => "late_wet",
            AmdStage::LateDry => "late_dry",
            AmdStage::Unknown => "unknown",
        }
    }
}

impl fmt::Display for AmdStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AmdStage {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "healthy" => Ok(AmdStage::Healthy),
            "early_intermediate" => Ok(AmdStage::EarlyIntermediate),
            "late_wet" => Ok(AmdStage::LateWet),
            "late_dry" => Ok(AmdStage::LateDry),
            "unknown" => Ok(AmdStage::Unknown),
            other => Err(EvalError::UnknownStage(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Biomarker {
    Drusen,
    RpeIrregularity,
    PigmentEpithelialDetachment,
    HyperreflectiveFoci,
    Hypertransmission,
    Fibrosis,
    SubretinalFluid,
    IntraretinalFluid,
}

impl Biomarker {
    pub const ALL: [Biomarker; 8] = [
        Biomarker::Drusen,
        Biomarker::RpeIrregularity,
        Biomarker::PigmentEpithelialDetachment,
        Biomarker::HyperreflectiveFoci,
        Biomarker::Hypertransmission,
        Biomarker::Fibrosis,
        Biomarker::SubretinalFluid,
        Biomarker::IntraretinalFluid,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Biomarker::Drusen => "drusen",
            Biomarker::RpeIrregularity => "rpe_irregularity",
            Biomarker::PigmentEpithelialDetachment => "pigment_epithelial_detachment",
            Biomarker::HyperreflectiveFoci => "hyperreflective_foci",
            Biomarker::Hypertransmission => "hypertransmission",
            Biomarker::Fibrosis => "fibrosis",
            Biomarker::SubretinalFluid => "subretinal_fluid",
            Biomarker::IntraretinalFluid => "intraretinal_fluid",
        }
    }

    /// Surface forms that count as a mention.
    pub fn terms(self) -> &'static [&'static str] {
        match self {
            Biomarker::Drusen => &["drusen"],
            Biomarker::RpeIrregularity => &["retinal pigment epithelium", "rpe"],
            Biomarker::PigmentEpithelialDetachment => {
                &["pigment epithelial detachment", "pigment epithelium detachment", "ped"]
            }
            Biomarker::HyperreflectiveFoci => &["hyperreflective foci", "hyperreflective focus"],
            Biomarker::Hypertransmission => &["hypertransmission"],
            Biomarker::Fibrosis => &["fibrosis", "fibrotic"],
            Biomarker::SubretinalFluid => &["subretinal fluid"],
            Biomarker::IntraretinalFluid => &["intraretinal fluid"],
        }
    }
}

impl fmt::Display for Biomarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Presence flags in [`Biomarker::ALL`] order; absent by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct BiomarkerFindings(pub [bool; 8]);

impl BiomarkerFindings {
    pub fn get(&self, b: Biomarker) -> bool {
        self.0[b.index()]
    }

    pub fn set(&mut self, b: Biomarker, present: bool) {
        self.0[b.index()] = present;
    }

    pub fn any(&self) -> bool {
        self.0.iter().any(|&x| x)
    }

    /// `0,1,...` flag string used in corpus files.
    pub fn to_flags(&self) -> String {
        self.0
            .iter()
            .map(|&b| if b { "1" } else { "0" })
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn from_flags(s: &str) -> Option<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 8 {
            return None;
        }
        let mut out = [false; 8];
        for (slot, p) in out.iter_mut().zip(parts) {
            *slot = match p {
                "1" => true,
                "0" => false,
                _ => return None,
            };
        }
        Some(BiomarkerFindings(out))
    }
}

const NEGATION_CUES: [&str; 4] = ["no", "without", "absence of", "free of"];
const CLAUSE_WORDS: [&str; 2] = ["and", "but"];
const CLAUSE_PUNCT: [char; 5] = [',', '.', ';', '!', '?'];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StageTerm {
    Late,
    Wet,
    Dry,
    Atrophy,
    EarlyOrIntermediate,
    HealthyOrNormal,
}

const STAGE_TERMS: [(&str, StageTerm); 10] = [
    ("late", StageTerm::Late),
    ("wet", StageTerm::Wet),
    ("dry", StageTerm::Dry),
    ("atrophy", StageTerm::Atrophy),
    ("atrophic", StageTerm::Atrophy),
    ("geographic atrophy", StageTerm::Atrophy),
    ("early", StageTerm::EarlyOrIntermediate),
    ("intermediate", StageTerm::EarlyOrIntermediate),
    ("healthy", StageTerm::HealthyOrNormal),
    ("normal", StageTerm::HealthyOrNormal),
];

struct Rules {
    cues: KeywordSet,
    clause_words: KeywordSet,
    stage: KeywordSet,
    biomarkers: Vec<KeywordSet>,
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| {
        let set = |name: &str, words: &[&str]| {
            KeywordSet::from_words(name, Category::Diagnostic, words.iter().copied())
                .expect("static term lists are valid")
        };
        Rules {
            cues: set("negation", &NEGATION_CUES),
            clause_words: set("clause", &CLAUSE_WORDS),
            stage: set("stage", &STAGE_TERMS.map(|(s, _)| s)),
            biomarkers: Biomarker::ALL.iter().map(|b| set(b.as_str(), b.terms())).collect(),
        }
    })
}

/// Negation-scope helper over one report.
struct Scopes {
    /// Sorted clause boundary end offsets.
    boundaries: Vec<usize>,
    cues: Vec<KeywordSpan>,
}

impl Scopes {
    fn new(text: &str) -> Self {
        let r = rules();
        let mut boundaries: Vec<usize> = text
            .chars()
            .enumerate()
            .filter(|(_, c)| CLAUSE_PUNCT.contains(c))
            .map(|(i, _)| i + 1)
            .collect();
        boundaries.extend(
            find_keyword_spans(text, &r.clause_words)
                .into_iter()
                .map(|m| m.char_span.end),
        );
        boundaries.sort_unstable();
        Scopes {
            boundaries,
            cues: find_keyword_spans(text, &r.cues),
        }
    }

    fn clause_start(&self, pos: usize) -> usize {
        let k = self.boundaries.partition_point(|&b| b <= pos);
        if k == 0 {
            0
        } else {
            self.boundaries[k - 1]
        }
    }

    fn is_negated(&self, span: &KeywordSpan) -> bool {
        let start = span.char_span.start;
        let clause = self.clause_start(start);
        self.cues
            .iter()
            .any(|c| c.char_span.start >= clause && c.char_span.end <= start)
    }
}

/// Stage and biomarker labels from free text. Total and deterministic.
pub fn extract_labels(report: &str) -> (AmdStage, BiomarkerFindings) {
    let r = rules();
    let scopes = Scopes::new(report);

    let mut seen = Vec::new();
    for m in find_keyword_spans(report, &r.stage) {
        if scopes.is_negated(&m) {
            continue;
        }
        if let Some(&(_, term)) = STAGE_TERMS.iter().find(|(s, _)| *s == m.keyword.surface()) {
            seen.push(term);
        }
    }
    let has = |t: StageTerm| seen.contains(&t);
    let stage = if has(StageTerm::Late) && has(StageTerm::Wet) {
        AmdStage::LateWet
    } else if has(StageTerm::Late) && (has(StageTerm::Dry) || has(StageTerm::Atrophy)) {
        AmdStage::LateDry
    } else if has(StageTerm::EarlyOrIntermediate) {
        AmdStage::EarlyIntermediate
    } else if has(StageTerm::HealthyOrNormal) {
        AmdStage::Healthy
    } else {
        AmdStage::Unknown
    };

    let mut findings = BiomarkerFindings::default();
    for (b, set) in Biomarker::ALL.iter().zip(&r.biomarkers) {
        let present = find_keyword_spans(report, set).iter().any(|m| !scopes.is_negated(m));
        findings.set(*b, present);
    }
    (stage, findings)
}

/// One-vs-rest scores for a single class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScore {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Report {
    pub per_class: Vec<ClassScore>,
    pub macro_f1: f64,
}

impl F1Report {
    pub fn class(&self, name: &str) -> Option<&ClassScore> {
        self.per_class.iter().find(|c| c.class == name)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro F1 over a fixed class set with the 0/0 → 0 convention. Predictions
/// outside `classes` count as misses for the gold class.
pub fn f1_macro<C>(predictions: &[C], golds: &[C], classes: &[C]) -> Result<F1Report, EvalError>
where
    C: PartialEq + fmt::Display,
{
    if predictions.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if golds.is_empty() || classes.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some((i, g)) = golds.iter().enumerate().find(|(_, g)| !classes.contains(g)) {
        return Err(EvalError::UnknownGold(g.to_string(), i));
    }

    let per_class: Vec<ClassScore> = classes
        .iter()
        .map(|c| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (p, g) in predictions.iter().zip(golds) {
                match (p == c, g == c) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScore {
                class: c.to_string(),
                precision,
                recall,
                f1,
                support: tp + fn_,
                tp,
                fp,
                fn_,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64;
    Ok(F1Report { per_class, macro_f1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Presence {
    Present,
    Absent,
}

impl fmt::Display for Presence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Presence::Present => "present",
            Presence::Absent => "absent",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiomarkerF1 {
    /// Binary present/absent macro F1 per biomarker, in [`Biomarker::ALL`] order.
    pub per_biomarker: Vec<(Biomarker, F1Report)>,
    /// Unweighted mean of the eight per-biomarker macro scores.
    pub aggregate: f64,
}

pub fn biomarker_f1(predictions: &[BiomarkerFindings], golds: &[BiomarkerFindings]) -> Result<BiomarkerF1, EvalError> {
    if predictions.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    let classes = [Presence::Present, Presence::Absent];
    let to_presence = |f: &BiomarkerFindings, b: Biomarker| if f.get(b) { Presence::Present } else { Presence::Absent };
    let mut per_biomarker = Vec::with_capacity(8);
    for b in Biomarker::ALL {
        let p: Vec<Presence> = predictions.iter().map(|f| to_presence(f, b)).collect();
        let g: Vec<Presence> = golds.iter().map(|f| to_presence(f, b)).collect();
        per_biomarker.push((b, f1_macro(&p, &g, &classes)?));
    }
    let aggregate = per_biomarker.iter().map(|(_, r)| r.macro_f1).sum::<f64>() / 8.0;
    Ok(BiomarkerF1 {
        per_biomarker,
        aggregate,
    })
}

/// Stage F1 over the four graded classes.
pub fn stage_f1(predictions: &[AmdStage], golds: &[AmdStage]) -> Result<F1Report, EvalError> {
    f1_macro(predictions, golds, &AmdStage::CLASSES)
}

/// Anything that can write a report for a prompt.
pub trait ReportGenerator {
    fn generate(&self, prompt: &str, max_len: usize) -> String;
}

/// Token budget for generated reports during scoring.
pub const DEFAULT_MAX_REPORT_TOKENS: usize = 160;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelScore {
    pub amd_f1: f64,
    pub biomarker_f1: f64,
    pub stage_report: F1Report,
    pub biomarkers: BiomarkerF1,
}

/// Grades already-generated reports against gold samples.
pub fn score_reports(reports: &[String], test_set: &[SynthSample]) -> Result<ModelScore, EvalError> {
    if test_set.is_empty() {
        return Err(EvalError::Empty);
    }
    if reports.len() != test_set.len() {
        return Err(EvalError::LengthMismatch {
            predictions: reports.len(),
            golds: test_set.len(),
        });
    }
    let (pred_stage, pred_bio): (Vec<AmdStage>, Vec<BiomarkerFindings>) =
        reports.iter().map(|r| extract_labels(r)).unzip();
    let gold_stage: Vec<AmdStage> = test_set.iter().map(|s| s.labels.stage).collect();
    let gold_bio: Vec<BiomarkerFindings> = test_set.iter().map(|s| s.labels.biomarkers).collect();
    let stage_report = stage_f1(&pred_stage, &gold_stage)?;
    let biomarkers = biomarker_f1(&pred_bio, &gold_bio)?;
    Ok(ModelScore {
        amd_f1: stage_report.macro_f1,
        biomarker_f1: biomarkers.aggregate,
        stage_report,
        biomarkers,
    })
}

/// Generates a report per test prompt, extracts labels, and scores both tasks.
pub fn score_model<M: ReportGenerator + ?Sized>(model: &M, test_set: &[SynthSample]) -> Result<ModelScore, EvalError> {
    let reports: Vec<String> = test_set
        .iter()
        .map(|s| model.generate(&s.prompt, DEFAULT_MAX_REPORT_TOKENS))
        .collect();
    score_reports(&reports, test_set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn findings(present: &[Biomarker]) -> BiomarkerFindings {
        let mut f = BiomarkerFindings::default();
        for &b in present {
            f.set(b, true);
        }
        f
    }

    #[test]
    fn late_wet_with_fluid() {
        let (stage, f) = extract_labels("The scan shows late wet AMD with subretinal fluid.");
        assert_eq!(stage, AmdStage::LateWet);
        assert_eq!(f, findings(&[Biomarker::SubretinalFluid]));
    }

    #[test]
    fn healthy_with_negated_drusen() {
        let (stage, f) = extract_labels("Healthy retina. No drusen.");
        assert_eq!(stage, AmdStage::Healthy);
        assert!(!f.any());
    }

    #[test]
    fn empty_text() {
        assert_eq!(extract_labels(""), (AmdStage::Unknown, BiomarkerFindings::default()));
    }

    #[test]
    fn negation_ends_at_clause_boundary() {
        let (_, f) = extract_labels("No drusen, but subretinal fluid is present.");
        assert_eq!(f, findings(&[Biomarker::SubretinalFluid]));
        let (_, f) = extract_labels("There is no drusen and intraretinal fluid is seen.");
        assert_eq!(f, findings(&[Biomarker::IntraretinalFluid]));
        let (_, f) = extract_labels("Free of fibrosis. Multiple drusen.");
        assert_eq!(f, findings(&[Biomarker::Drusen]));
        let (_, f) = extract_labels("Without signs of hyperreflective foci or hypertransmission.");
        assert!(!f.any());
        let (_, f) = extract_labels("In the absence of pigment epithelial detachment; RPE irregularity noted.");
        assert_eq!(f, findings(&[Biomarker::RpeIrregularity]));
    }

    #[test]
    fn cue_must_be_a_whole_word() {
        // "nothing"/"known" contain "no" but are not cues.
        let (_, f) = extract_labels("Nothing unusual, known drusen.");
        assert_eq!(f, findings(&[Biomarker::Drusen]));
        let (_, f) = extract_labels("Known drusen remain.");
        assert_eq!(f, findings(&[Biomarker::Drusen]));
    }

    #[test]
    fn stage_rules_are_ordered() {
        assert_eq!(extract_labels("Late dry AMD.").0, AmdStage::LateDry);
        assert_eq!(extract_labels("Late AMD with geographic atrophy.").0, AmdStage::LateDry);
        assert_eq!(extract_labels("Intermediate AMD.").0, AmdStage::EarlyIntermediate);
        assert_eq!(
            extract_labels("Early AMD in an otherwise normal retina.").0,
            AmdStage::EarlyIntermediate
        );
        assert_eq!(extract_labels("Normal findings.").0, AmdStage::Healthy);
        assert_eq!(extract_labels("Wet AMD.").0, AmdStage::Unknown);
        assert_eq!(extract_labels("No late disease, healthy retina.").0, AmdStage::Healthy);
    }

    #[test]
    fn f1_perfect_and_swapped() {
        let r = f1_macro(&["a", "b", "a"], &["a", "b", "a"], &["a", "b"]).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        let r = f1_macro(&["b", "a"], &["a", "b"], &["a", "b"]).unwrap();
        assert_eq!(r.macro_f1, 0.0);
    }

    #[test]
    fn f1_balanced_confusion() {
        // Class a: TP=1 FP=1 FN=1 TN=1, and symmetrically for b.
        let preds = ["a", "a", "b", "b"];
        let golds = ["a", "b", "a", "b"];
        let r = f1_macro(&preds, &golds, &["a", "b"]).unwrap();
        for c in &r.per_class {
            assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 1));
            assert_eq!(c.f1, 0.5);
        }
        assert_eq!(r.macro_f1, 0.5);
    }

    #[test]
    fn f1_errors() {
        assert_eq!(
            f1_macro(&["a"], &["a", "b"], &["a", "b"]).unwrap_err(),
            EvalError::LengthMismatch {
                predictions: 1,
                golds: 2
            }
        );
        assert_eq!(f1_macro::<&str>(&[], &[], &["a"]).unwrap_err(), EvalError::Empty);
        assert!(matches!(
            f1_macro(&["a"], &["z"], &["a", "b"]),
            Err(EvalError::UnknownGold(..))
        ));
    }

    #[test]
    fn unknown_prediction_counts_as_miss() {
        let r = stage_f1(
            &[AmdStage::Unknown, AmdStage::Healthy],
            &[AmdStage::Healthy, AmdStage::Healthy],
        )
        .unwrap();
        let h = r.class("healthy").unwrap();
        assert_eq!((h.tp, h.fp, h.fn_), (1, 0, 1));
        assert!(r.class("unknown").is_none());
    }

    #[test]
    fn biomarker_always_present() {
        let gold = [
            findings(&[Biomarker::Drusen]),
            findings(&[Biomarker::Drusen]),
            findings(&[]),
            findings(&[]),
        ];
        let pred = [findings(&[Biomarker::Drusen]); 4];
        let r = biomarker_f1(&pred, &gold).unwrap();
        let (b, drusen) = &r.per_biomarker[0];
        assert_eq!(*b, Biomarker::Drusen);
        assert!((drusen.class("present").unwrap().f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(drusen.class("absent").unwrap().f1, 0.0);
        assert!((drusen.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn biomarker_single_all_absent() {
        let r = biomarker_f1(&[findings(&[])], &[findings(&[])]).unwrap();
        assert_eq!(r.aggregate, 0.5);
        let r = biomarker_f1(&[findings(&[Biomarker::Fibrosis])], &[findings(&[Biomarker::Fibrosis])]).unwrap();
        // absent class has no support and no predictions: 0/0 -> 0
        assert_eq!(r.per_biomarker[5].1.macro_f1, 0.5);
    }

    #[test]
    fn flags_round_trip() {
        let f = findings(&[Biomarker::Drusen, Biomarker::IntraretinalFluid]);
        assert_eq!(f.to_flags(), "1,0,0,0,0,0,0,1");
        assert_eq!(BiomarkerFindings::from_flags(&f.to_flags()), Some(f));
        assert_eq!(BiomarkerFindings::from_flags("1,0"), None);
        assert_eq!(BiomarkerFindings::from_flags("1,0,0,0,0,0,0,2"), None);
    }
}
