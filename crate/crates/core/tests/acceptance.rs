//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the criteria execute one after another with stable timings.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use keyweight::lexicon::{builtin, load_lexicon, BuiltinSet, KeywordSet};
use keyweight::loss::{loss_and_gradient, mean_cross_entropy, token_nll, weighted_cross_entropy, LogitMatrix};
use keyweight::reporteval::{biomarker_f1, extract_labels, f1_macro, stage_f1, AmdStage, Biomarker, BiomarkerFindings};
use keyweight::spanmap::{
    build_weight_vector, find_keyword_spans, spans_to_token_indices, weights_for_sequence, TokenSpanIndex,
};
use keyweight::sweep::{comparison_table, relative_gain, run_sweep, Method, SetChoice, SweepGrid, DEFAULT_TEST_SHARE};
use keyweight::tokenizer::{tokenize, train_vocab, Vocabulary};
use keyweight::trainer::{corpus_vocab, generate_corpus, train, TrainConfig, DEFAULT_VOCAB_SIZE};
use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN: &str = include_str!("fixtures/keyword_lists.txt");

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, u64);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lexicon_fidelity() -> Outcome {
    let golden = load_lexicon("golden", GOLDEN).map_err(|e| e.to_string())?;
    ensure(golden.warnings.is_empty(), || {
        "golden copy has duplicate entries".into()
    })?;
    let mut checked = Vec::new();
    for (set, size) in [
        (BuiltinSet::Diagnostic, 22),
        (BuiltinSet::Quantitative, 34),
        (BuiltinSet::Combined, 56),
    ] {
        let got: Vec<String> = builtin(set).surfaces().map(str::to_string).collect();
        let want: Vec<String> = match set {
            BuiltinSet::Combined => golden.set.surfaces().map(str::to_string).collect(),
            _ => golden
                .set
                .iter()
                .filter(|k| Some(k.category()) == builtin(set).category_of(k.surface()))
                .map(|k| k.surface().to_string())
                .collect(),
        };
        ensure(got.len() == size, || {
            format!("{} has {} entries, want {size}", set.as_str(), got.len())
        })?;
        ensure(got == want, || format!("{} differs from the golden copy", set.as_str()))?;
        for k in builtin(set).iter() {
            ensure(golden.set.category_of(k.surface()) == Some(k.category()), || {
                format!("category of {} differs", k.surface())
            })?;
        }
        checked.push(size.to_string());
    }
    Ok(format!("sizes {}", checked.join("/")))
}

fn random_instance(rng: &mut ChaCha8Rng, max_t: usize, max_v: usize) -> (Array2<f64>, Vec<u32>) {
    let t = rng.random_range(1..=max_t);
    let v = rng.random_range(2..=max_v);
    let logits = Array2::from_shape_fn((t, v), |_| rng.random_range(-10.0..10.0));
    let targets = (0..t).map(|_| rng.random_range(0..v as u32)).collect();
    (logits, targets)
}

fn random_index(rng: &mut ChaCha8Rng, t: usize, at_least_one: bool) -> TokenSpanIndex {
    let mut idx: BTreeSet<usize> = (0..t).filter(|_| rng.random_bool(0.3)).collect();
    if at_least_one && idx.is_empty() {
        idx.insert(rng.random_range(0..t));
    }
    TokenSpanIndex::new(t, idx).unwrap()
}

fn gamma_one_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (logits, targets) = random_instance(&mut rng, 32, 64);
        let t = targets.len();
        let w = build_weight_vector(t, &random_index(&mut rng, t, false), 1.0).map_err(|e| e.to_string())?;
        let m = LogitMatrix::new(logits).map_err(|e| e.to_string())?;
        let a = weighted_cross_entropy(&m, &targets, &w)
            .map_err(|e| e.to_string())?
            .value;
        let b = mean_cross_entropy(&m, &targets).map_err(|e| e.to_string())?;
        worst = worst.max((a - b).abs());
    }
    ensure(worst <= 1e-12, || format!("max |weighted - mean| = {worst:e}"))?;

    let corpus = generate_corpus(160, 5);
    let vocab = Arc::new(corpus_vocab(&corpus, DEFAULT_VOCAB_SIZE).map_err(|e| e.to_string())?);
    let combined = builtin(BuiltinSet::Combined);
    for seed in 1..=3 {
        let cfg = TrainConfig {
            epochs: 2,
            seed,
            ..TrainConfig::default()
        };
        let plain = train(&corpus, vocab.clone(), None, &cfg).map_err(|e| e.to_string())?;
        let unit = train(
            &corpus,
            vocab.clone(),
            Some(&combined),
            &TrainConfig { gamma: 1.0, ..cfg },
        )
        .map_err(|e| e.to_string())?;
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        ensure(bits(&plain.epoch_losses) == bits(&unit.epoch_losses), || {
            format!("seed {seed}: loss trajectories differ")
        })?;
        ensure(plain.model.to_checkpoint() == unit.model.to_checkpoint(), || {
            format!("seed {seed}: parameters differ")
        })?;
    }
    Ok(format!("max diff {worst:.1e}; 3 seeds bitwise identical"))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (logits, targets) = random_instance(&mut rng, 32, 64);
        let t = targets.len();
        let gamma = rng.random_range(1.5..8.0);
        let w = build_weight_vector(t, &random_index(&mut rng, t, true), gamma).map_err(|e| e.to_string())?;
        let g = loss_and_gradient(&LogitMatrix::new(logits.clone()).unwrap(), &targets, &w)
            .map_err(|e| e.to_string())?
            .gradient
            .ok_or("no gradient")?;
        let mut fd = Array2::zeros(g.dim());
        let mut work = logits.clone();
        let f = |m: &Array2<f64>| {
            weighted_cross_entropy(&LogitMatrix::new(m.clone()).unwrap(), &targets, &w)
                .unwrap()
                .value
        };
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let orig = work[[i, j]];
                work[[i, j]] = orig + h;
                let up = f(&work);
                work[[i, j]] = orig - h;
                let down = f(&work);
                work[[i, j]] = orig;
                fd[[i, j]] = (up - down) / (2.0 * h);
            }
        }
        let norm = |m: &Array2<f64>| m.mapv(|v| v * v).sum().sqrt();
        let rel = norm(&(&fd - &g)) / norm(&fd).max(norm(&g)).max(1e-300);
        worst = worst.max(rel);
    }
    ensure(worst < 1e-5, || format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.1e}"))
}

/// Token `t` is selected iff its char span shares a character with a match.
fn overlap_oracle(text: &str, spans: &[std::ops::Range<usize>], set: &KeywordSet) -> BTreeSet<usize> {
    let matches = find_keyword_spans(text, set);
    spans
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            matches
                .iter()
                .any(|m| (s.start..s.end).any(|c| m.char_span.contains(&c)))
        })
        .map(|(t, _)| t)
        .collect()
}

fn random_text(rng: &mut ChaCha8Rng, keywords: &[&str]) -> String {
    let filler = [
        "the",
        "retina",
        "shows",
        "with",
        "mildly",
        "x",
        "drusenoid",
        "noted",
        "é",
        "in",
        "left",
        "eye",
    ];
    let seps = [" ", " ", " ", ", ", ". ", "; ", "-", "(", ") ", "\n"];
    let mut out = String::new();
    for _ in 0..rng.random_range(1..20) {
        let word = if rng.random_bool(0.4) {
            let k = *keywords.choose(rng).unwrap();
            match rng.random_range(0..3) {
                0 => k.to_uppercase(),
                1 => k
                    .chars()
                    .enumerate()
                    .map(|(i, c)| if i == 0 { c.to_ascii_uppercase() } else { c })
                    .collect(),
                _ => k.to_string(),
            }
        } else {
            filler.choose(rng).unwrap().to_string()
        };
        out.push_str(&word);
        out.push_str(seps.choose(rng).unwrap());
    }
    out
}

fn span_oracle() -> Outcome {
    let corpus = generate_corpus(300, 9);
    let texts: Vec<&str> = corpus.iter().map(|s| s.report.as_str()).collect();
    let small = train_vocab(&texts, 80).map_err(|e| e.to_string())?;
    let large = corpus_vocab(&corpus, DEFAULT_VOCAB_SIZE).map_err(|e| e.to_string())?;
    let set = builtin(BuiltinSet::Combined);
    let keywords: Vec<&str> = set.surfaces().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut multi = 0;
    let mut selected = 0;
    for i in 0..500 {
        let text = random_text(&mut rng, &keywords);
        let vocab: &Vocabulary = if i % 2 == 0 { &small } else { &large };
        let seq = tokenize(&text, vocab);
        let matches = find_keyword_spans(&text, &set);
        let idx = spans_to_token_indices(&matches, &seq).map_err(|e| e.to_string())?;
        let want = overlap_oracle(&text, seq.spans(), &set);
        ensure(idx.positions() == &want, || format!("mismatch on {text:?}"))?;
        for m in &matches {
            if seq
                .spans()
                .iter()
                .filter(|s| s.start < m.char_span.end && m.char_span.start < s.end)
                .count()
                > 1
            {
                multi += 1;
            }
        }
        selected += idx.count();
    }
    ensure(multi > 0, || "no keyword was split into several tokens".into())?;
    Ok(format!(
        "500 texts, {selected} selected tokens, {multi} multi-token keywords"
    ))
}

fn lambda_bookkeeping() -> Outcome {
    let corpus = generate_corpus(500, 14);
    let vocab = corpus_vocab(&corpus, DEFAULT_VOCAB_SIZE).map_err(|e| e.to_string())?;
    let sets = [BuiltinSet::Diagnostic, BuiltinSet::Quantitative, BuiltinSet::Combined].map(builtin);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut count = 0;
    let mut check = |t: usize,
                     k: usize,
                     gamma: f64,
                     w: &keyweight::spanmap::WeightVector,
                     rng: &mut ChaCha8Rng|
     -> Result<(), String> {
        let expected = t as f64 + (gamma - 1.0) * k as f64;
        ensure((w.total() - expected).abs() <= 1e-12 * expected.max(1.0), || {
            format!("Λ {} vs {expected}", w.total())
        })?;
        let logits = Array2::from_shape_fn((t, 24), |_| rng.random_range(-6.0..6.0));
        let targets: Vec<u32> = (0..t).map(|_| rng.random_range(0..24)).collect();
        let r = weighted_cross_entropy(&LogitMatrix::new(logits.clone()).unwrap(), &targets, w)
            .map_err(|e| e.to_string())?;
        let nll: Vec<f64> = logits
            .outer_iter()
            .zip(&targets)
            .map(|(row, &x)| token_nll(row, x as usize))
            .collect();
        let lo = nll.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = nll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ensure(r.value >= lo - 1e-12 && r.value <= hi + 1e-12, || {
            format!("value {} outside [{lo}, {hi}]", r.value)
        })?;
        count += 1;
        Ok(())
    };
    for s in &corpus {
        let seq = tokenize(&s.report, &vocab);
        let set = sets.choose(&mut rng).unwrap();
        let gamma = rng.random_range(1.0..8.0);
        let w = weights_for_sequence(&seq, set, gamma).map_err(|e| e.to_string())?;
        let k = spans_to_token_indices(&find_keyword_spans(&s.report, set), &seq)
            .map_err(|e| e.to_string())?
            .count();
        check(seq.len(), k, gamma, &w, &mut rng)?;
    }
    for _ in 0..500 {
        let t = rng.random_range(1..=32);
        let idx = random_index(&mut rng, t, false);
        let gamma = rng.random_range(1.0..8.0);
        let w = build_weight_vector(t, &idx, gamma).map_err(|e| e.to_string())?;
        check(t, idx.count(), gamma, &w, &mut rng)?;
    }
    Ok(format!("{count} weight vectors"))
}

fn f1_engine() -> Outcome {
    let r = f1_macro(&["a", "a", "b", "b"], &["a", "b", "a", "b"], &["a", "b"]).map_err(|e| e.to_string())?;
    ensure(r.per_class.iter().all(|c| c.f1 == 0.5) && r.macro_f1 == 0.5, || {
        "2x2 confusion is not 0.5".into()
    })?;

    let drusen = |on: bool| {
        let mut f = BiomarkerFindings::default();
        f.set(Biomarker::Drusen, on);
        f
    };
    let b = biomarker_f1(
        &[drusen(true); 4],
        &[drusen(true), drusen(true), drusen(false), drusen(false)],
    )
    .map_err(|e| e.to_string())?;
    let d = &b.per_biomarker[0].1;
    ensure((d.class("present").unwrap().f1 - 2.0 / 3.0).abs() < 1e-15, || {
        "present F1 is not 2/3".into()
    })?;
    ensure(d.class("absent").unwrap().f1 == 0.0, || "absent F1 is not 0".into())?;
    ensure((d.macro_f1 - 1.0 / 3.0).abs() < 1e-15, || {
        "drusen macro is not 1/3".into()
    })?;
    let single =
        biomarker_f1(&[BiomarkerFindings::default()], &[BiomarkerFindings::default()]).map_err(|e| e.to_string())?;
    ensure(single.aggregate == 0.5, || {
        format!("single all-absent aggregate {}", single.aggregate)
    })?;

    let golds: Vec<AmdStage> = (0..40).map(|i| AmdStage::CLASSES[i % 4]).collect();
    ensure(
        stage_f1(&golds, &golds).map_err(|e| e.to_string())?.macro_f1 == 1.0,
        || "perfect stages are not 1.0".into(),
    )?;
    let finds: Vec<BiomarkerFindings> = (0..16u32)
        .map(|i| BiomarkerFindings(std::array::from_fn(|b| (i >> (b % 4)) & 1 == 1 || b == 7 && i > 3)))
        .collect();
    let perfect = biomarker_f1(&finds, &finds).map_err(|e| e.to_string())?;
    ensure(perfect.aggregate == 1.0, || {
        format!("perfect biomarkers give {}", perfect.aggregate)
    })?;
    Ok("0.5, 2/3, 0, 1/3, 0.5 and perfect 1.0".into())
}

fn round_trip() -> Outcome {
    let corpus = generate_corpus(4000, 15);
    let hits = corpus
        .iter()
        .filter(|s| {
            let (stage, found) = extract_labels(&s.report);
            stage == s.labels.stage && found == s.labels.biomarkers
        })
        .count();
    let rate = hits as f64 / corpus.len() as f64;
    ensure(rate >= 0.99, || format!("recovered {hits}/4000"))?;
    Ok(format!("recovered {hits}/4000"))
}

fn directional() -> Outcome {
    let grid = SweepGrid::default();
    let mut wins = 0;
    let mut lower = 0;
    let mut lines = Vec::new();
    for seed in 1..=5u64 {
        let corpus = generate_corpus(4000, seed);
        let table = comparison_table(&corpus, &grid, BuiltinSet::Combined, DEFAULT_TEST_SHARE, seed, 1)
            .map_err(|e| e.to_string())?;
        let std = table.row(0.10, Method::Standard).ok_or("missing standard row")?;
        let wtd = table.row(0.10, Method::Weighted).ok_or("missing weighted row")?;
        wins += usize::from(wtd.amd_f1 >= std.amd_f1);
        lower += usize::from(wtd.keyword_nll < std.keyword_nll);
        let line = format!(
            "seed {seed}: amd {:.3} vs {:.3}, keyword nll {:.3} vs {:.3} (gamma {}, lr {})",
            wtd.amd_f1, std.amd_f1, wtd.keyword_nll, std.keyword_nll, wtd.config.gamma, wtd.config.learning_rate
        );
        println!("    {line}");
        lines.push(line);
    }
    ensure(wins >= 4 && lower == 5, || {
        format!("amd wins {wins}/5, nll lower {lower}/5")
    })?;
    Ok(format!("amd wins {wins}/5, nll lower {lower}/5"))
}

fn gain_arithmetic() -> Outcome {
    let g = relative_gain(0.490, 0.422).map_err(|e| e.to_string())?;
    ensure((g - 0.161).abs() <= 0.001, || format!("gain {g}"))?;
    let h = relative_gain(0.573, 0.481).map_err(|e| e.to_string())?;
    ensure((h - 0.191).abs() <= 0.001, || format!("gain {h}"))?;
    ensure(relative_gain(0.5, 0.0).is_err(), || "zero baseline accepted".into())?;
    Ok(format!("{g:.4}, {h:.4}"))
}

fn sweep_shape() -> Outcome {
    let corpus = generate_corpus(400, 16);
    let vocab = Arc::new(corpus_vocab(&corpus, DEFAULT_VOCAB_SIZE).map_err(|e| e.to_string())?);
    let mut grid = SweepGrid::default().restricted(0.10, &[SetChoice::None, SetChoice::Builtin(BuiltinSet::Combined)]);
    grid.base.epochs = 2;
    let a = run_sweep(&grid, &corpus, vocab.clone(), 16, 1).map_err(|e| e.to_string())?;
    let b = run_sweep(&grid, &corpus, vocab.clone(), 16, 1).map_err(|e| e.to_string())?;
    let c = run_sweep(&grid, &corpus, vocab, 16, 4).map_err(|e| e.to_string())?;
    let weighted = a.iter().filter(|t| t.config.keyword_set == "combined").count();
    let baseline = a.iter().filter(|t| t.config.keyword_set == "none").count();
    ensure(weighted == 12 && baseline == 4, || {
        format!("{weighted} weighted + {baseline} baseline trials")
    })?;
    ensure(a.iter().all(|t| t.fold_scores.len() == 4), || {
        "a trial lacks 4 fold scores".into()
    })?;
    let key = |r: &[keyweight::sweep::TrialResult]| r.iter().map(|t| t.log_line()).collect::<Vec<_>>();
    ensure(key(&a) == key(&b), || "ranking differs between reruns".into())?;
    ensure(key(&a) == key(&c), || "ranking differs with 4 workers".into())?;
    Ok(format!(
        "{weighted} weighted + {baseline} baseline, 4 folds each, stable ranking"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("lexicon fidelity", lexicon_fidelity, 1),
        ("gamma=1 reduction", gamma_one_reduction, 30),
        ("gradient correctness", gradient_check, 30),
        ("span-mapping oracle", span_oracle, 30),
        ("lambda bookkeeping", lambda_bookkeeping, 30),
        ("f1 engine", f1_engine, 1),
        ("generator/extractor round-trip", round_trip, 10),
        ("directional replication", directional, 600),
        ("relative-gain arithmetic", gain_arithmetic, 1),
        ("sweep shape", sweep_shape, 60),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, run, limit) in criteria {
        if filter.as_ref().is_some_and(|f| !name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > Duration::from_secs(limit) => Err(format!("{detail}; exceeded {limit} s")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{:.2} s]", elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{:.2} s]", elapsed.as_secs_f64());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
