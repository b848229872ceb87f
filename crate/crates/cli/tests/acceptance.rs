//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Every check pairs the implementation with an oracle written here.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use biascorpus_core::classifiers::mock::{mock_score, router, serve, MockOptions};
use biascorpus_core::classifiers::{
    classify_batch, parse_generative_response, rule_baseline_classify, AdapterRequest, BatchOptions, Classifier,
    FnClassifier, ParsedResponse, RemoteAdapter, ScoreOutcome, SubprocessAdapter,
};
use biascorpus_core::corpus::{fetch_documents, ingest, SourceConfig};
use biascorpus_core::dataset::extract_candidates;
use biascorpus_core::evaluation::{confusion, f1_scores, per_term_accuracy};
use biascorpus_core::explain::{cosine_distance, explain_instance, kernel, weighted_ridge, RIDGE_DAMPING};
use biascorpus_core::lexicon::TermClass;
use biascorpus_core::splits::{holdout_rare_terms, overlapping_ids, resample, split_dataset, split_sizes, HoldoutMode};
use biascorpus_core::{
    fleiss_kappa, BinaryLabel, Category, ClassifierError, DateWindow, ExplainConfig, LabeledInstance, Lexicon,
    Prediction, PromptTemplate, ResampleConfig, ResampleStrategy, Resolution, SplitConfig,
};
use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("lexicon-and-matching", lexicon_and_matching),
        ("pipeline-determinism", pipeline_determinism),
        ("fleiss-kappa", fleiss_kappa_criterion),
        ("splits", splits_criterion),
        ("out-of-domain-holdout", holdout_criterion),
        ("resampling", resampling_criterion),
        ("metrics", metrics_criterion),
        ("rule-baseline", rule_baseline_criterion),
        ("explanation", explanation_criterion),
        ("adapter-conformance", adapter_conformance),
        ("prompt-fidelity", prompt_fidelity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name:<24} {detail} ({secs:.2}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name:<24} {detail} ({secs:.2}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn fixture_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/corpus")
}

fn instance(id: usize, biased: bool, text: &str) -> LabeledInstance {
    LabeledInstance {
        item_id: format!("i{id:05}"),
        text: text.to_string(),
        context_before: String::new(),
        context_after: String::new(),
        matches: Vec::new(),
        label: BinaryLabel::from_bool(biased),
        resolution: Resolution::Direct,
    }
}

// ---------------------------------------------------------------- lexicon

fn oracle_tokens(text: &str) -> Vec<(String, usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_alphanumeric() {
            let s = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            out.push((chars[s..i].iter().collect(), s, i));
        } else {
            i += 1;
        }
    }
    out
}

/// Exhaustive window search: longest windows first, leftmost first.
fn oracle_match(forms: &HashMap<Vec<String>, String>, text: &str) -> Vec<(String, usize, usize)> {
    let toks = oracle_tokens(text);
    let mut taken = vec![false; toks.len()];
    let mut hits = Vec::new();
    for len in (1..=toks.len()).rev() {
        for start in 0..=toks.len() - len {
            let key: Vec<String> = toks[start..start + len].iter().map(|t| t.0.clone()).collect();
            if let Some(term) = forms.get(&key) {
                if taken[start..start + len].iter().all(|t| !t) {
                    taken[start..start + len].iter_mut().for_each(|t| *t = true);
                    hits.push((term.clone(), toks[start].1, toks[start + len - 1].2));
                }
            }
        }
    }
    hits.sort_by_key(|h| h.1);
    hits
}

fn lexicon_and_matching() -> Check {
    let lex = Lexicon::bundled();
    let counts = (
        lex.len(),
        lex.count_by_category(Category::Colonialism),
        lex.count_by_category(Category::Culture),
    );
    ensure(counts == (120, 28, 3), || {
        format!("term counts {counts:?}, expected (120, 28, 3)")
    })?;

    let mut forms = HashMap::new();
    let mut vocab: Vec<String> = Vec::new();
    for t in lex.terms() {
        for f in t.forms() {
            let key: Vec<String> = oracle_tokens(f).into_iter().map(|x| x.0).collect();
            vocab.extend(key.iter().cloned());
            forms.entry(key).or_insert_with(|| t.surface.clone());
        }
    }
    vocab.extend(
        [
            "de", "het", "een", "werd", "niet", "bij", "mensen", "over", "2024", "en",
        ]
        .map(String::from),
    );
    vocab.sort();
    vocab.dedup();
    let seps = [" ", " ", " ", ", ", ". ", " - ", "'"];

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let started = Instant::now();
    let mut mismatches = 0;
    let mut total_hits = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=20);
        let mut s = String::new();
        for _ in 0..n {
            s.push_str(vocab.choose(&mut rng).unwrap());
            s.push_str(seps.choose(&mut rng).unwrap());
        }
        let s = s.trim_end().to_string();
        let got: Vec<_> = lex
            .match_terms(&s)
            .into_iter()
            .map(|m| (m.term, m.start, m.end))
            .collect();
        total_hits += got.len();
        if got != oracle_match(&forms, &s) {
            mismatches += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(mismatches == 0, || {
        format!("{mismatches} of 1000 sentences disagree with brute force")
    })?;
    ensure(secs < 5.0, || format!("matching took {secs:.2}s"))?;
    Ok(format!(
        "120/28/3 terms; 1000 sentences, {total_hits} matches, 0 mismatches in {secs:.2}s"
    ))
}

// ---------------------------------------------------------------- pipeline

fn copy_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(to)?;
    for e in std::fs::read_dir(from)? {
        let e = e?;
        std::fs::copy(e.path(), to.join(e.file_name()))?;
    }
    Ok(())
}

fn run_pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    copy_dir(&fixture_corpus(), &dir.join("corpus")).map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_biascorpus");
    let steps: [&[&str]; 2] = [
        &[
            "--seed",
            "7",
            "--quiet",
            "ingest",
            "--source",
            "corpus",
            "--to",
            "2026-01-01",
        ],
        &["--seed", "7", "--quiet", "extract", "--sentences", "sentences.jsonl"],
    ];
    for args in steps {
        let out = Command::new(bin)
            .args(args)
            .current_dir(dir)
            .env("SOURCE_DATE_EPOCH", "1700000000")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    [
        "sentences.jsonl",
        "sentences.jsonl.manifest.json",
        "candidates.jsonl",
        "candidates.jsonl.manifest.json",
    ]
    .iter()
    .map(|f| {
        std::fs::read(dir.join(f))
            .map(|b| (f.to_string(), b))
            .map_err(|e| format!("{f}: {e}"))
    })
    .collect()
}

fn pipeline_determinism() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = run_pipeline(a.path())?;
    let second = run_pipeline(b.path())?;
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure(x == y, || format!("{name} differs between runs"))?;
        ensure(!x.is_empty(), || format!("{name} is empty"))?;
    }
    let lines = first[2].1.iter().filter(|&&c| c == b'\n').count();
    Ok(format!(
        "{} files byte-identical across two runs; {lines} candidates",
        first.len()
    ))
}

// ---------------------------------------------------------------- kappa

fn fleiss_kappa_criterion() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..100 {
        let k = rng.gen_range(2..=4);
        let raters = rng.gen_range(2..=6);
        let items = rng.gen_range(2..=40);
        let mut m: Vec<Vec<usize>> = (0..items)
            .map(|_| {
                let mut row = vec![0; k];
                row[rng.gen_range(0..k)] = raters;
                row
            })
            .collect();
        // two categories are always present
        m[0] = vec![0; k];
        m[0][0] = raters;
        m[1] = vec![0; k];
        m[1][1] = raters;
        let kappa = fleiss_kappa(&m, raters).map_err(|e| e.to_string())?.kappa;
        ensure(kappa == 1.0, || format!("perfect agreement trial {trial} gave {kappa}"))?;
    }

    // P_i = 1, 1, 0 so P_bar = 2/3; p = (1/2, 1/2) so P_e = 1/2; kappa = 1/3
    let hand = fleiss_kappa(&[vec![2, 0], vec![0, 2], vec![1, 1]], 2)
        .map_err(|e| e.to_string())?
        .kappa;
    ensure((hand - 1.0 / 3.0).abs() < 1e-12, || format!("hand example gave {hand}"))?;

    let started = Instant::now();
    let (items, raters, k) = (10_000, 3, 4);
    let m: Vec<Vec<usize>> = (0..items)
        .map(|_| {
            let mut row = vec![0; k];
            for _ in 0..raters {
                row[rng.gen_range(0..k)] += 1;
            }
            row
        })
        .collect();
    let sim = fleiss_kappa(&m, raters).map_err(|e| e.to_string())?.kappa;
    let secs = started.elapsed().as_secs_f64();
    ensure(sim.abs() < 0.05, || format!("uniform simulation gave kappa {sim}"))?;
    ensure(secs < 10.0, || format!("simulation took {secs:.2}s"))?;
    Ok(format!(
        "perfect = 1.0 exactly (100 matrices); hand 1/3 within 1e-12; uniform 10k kappa = {sim:.4}"
    ))
}

// ---------------------------------------------------------------- splits

fn splits_criterion() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for n in 5..=500 {
        let b = rng.gen_range(0..=n);
        let data: Vec<LabeledInstance> = (0..n).map(|i| instance(i, i < b, "x")).collect();
        // floor(0.2 n) computed in integers
        let expected = (n - 2 * (n / 5), n / 5, n / 5);
        ensure(split_sizes(n, 0.2, 0.2) == expected, || format!("sizes for n={n}"))?;
        for stratify in [false, true] {
            let cfg = SplitConfig {
                seed: n as u64,
                stratify,
                ..Default::default()
            };
            let s = split_dataset(&data, &cfg).map_err(|e| e.to_string())?;
            ensure((s.train.len(), s.val.len(), s.test.len()) == expected, || {
                format!(
                    "n={n} stratify={stratify}: got {}/{}/{}",
                    s.train.len(),
                    s.val.len(),
                    s.test.len()
                )
            })?;
            let mut ids: Vec<&str> = s
                .train
                .iter()
                .chain(&s.val)
                .chain(&s.test)
                .map(|i| i.item_id.as_str())
                .collect();
            ids.sort();
            let all: Vec<&str> = data.iter().map(|i| i.item_id.as_str()).collect();
            ensure(ids == all && overlapping_ids(&s).is_empty(), || {
                format!("n={n}: not a partition")
            })?;
            if stratify {
                let p = b as f64 / n as f64;
                for part in [&s.train, &s.val, &s.test] {
                    let nb = part.iter().filter(|i| i.label.is_biased()).count() as f64;
                    let dev = (nb - part.len() as f64 * p).abs();
                    worst = worst.max(dev);
                    ensure(dev <= 1.0 + 1e-9, || {
                        format!("n={n} b={b}: stratified deviation {dev:.3}")
                    })?;
                }
            }
        }
    }
    Ok(format!(
        "N = 5..500 partitions exact; worst stratified deviation {worst:.3} instances"
    ))
}

// ---------------------------------------------------------------- holdout

fn whole_token(text: &str, form: &str) -> bool {
    let chars: Vec<char> = text.chars().collect();
    let f: Vec<char> = form.chars().collect();
    if f.is_empty() || f.len() > chars.len() {
        return false;
    }
    (0..=chars.len() - f.len()).any(|i| {
        chars[i..i + f.len()] == f[..]
            && (i == 0 || !chars[i - 1].is_alphanumeric())
            && (i + f.len() == chars.len() || !chars[i + f.len()].is_alphanumeric())
    })
}

fn holdout_criterion() -> Check {
    let lex = Lexicon::bundled();
    let surfaces: Vec<&str> = lex.terms().iter().map(|t| t.surface.as_str()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut scanned = 0usize;
    for trial in 0..50u64 {
        let mut pick = surfaces.clone();
        pick.shuffle(&mut rng);
        let mut texts = Vec::new();
        for (k, t) in pick[..8].iter().enumerate() {
            for j in 0..25 {
                texts.push(format!("zin {k} {j} over {t} en {}.", pick[(k + 1) % 8]));
            }
        }
        let rare: Vec<&str> = pick[8..14].to_vec();
        for t in &rare {
            let forms: Vec<&str> = lex.term(t).unwrap().forms().collect();
            for j in 0..rng.gen_range(1..=10) {
                texts.push(format!(
                    "ook {} bij {} in dossier {j}.",
                    forms[j % forms.len()],
                    pick[0]
                ));
            }
        }
        let data: Vec<LabeledInstance> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| instance(i, rng.gen_bool(0.5), t))
            .collect();
        for mode in [HoldoutMode::MoveToTest, HoldoutMode::AppendToTest] {
            let cfg = SplitConfig {
                seed: trial,
                ..Default::default()
            };
            let s = holdout_rare_terms(&data, &lex, 10, &cfg, mode).map_err(|e| e.to_string())?;
            for t in &rare {
                ensure(s.held_out_terms.iter().any(|h| h == t), || {
                    format!("trial {trial}: '{t}' not held out")
                })?;
            }
            for held in &s.held_out_terms {
                for form in lex.term(held).unwrap().forms() {
                    for i in s.train.iter().chain(&s.val) {
                        scanned += 1;
                        ensure(!whole_token(&i.text, form), || {
                            format!("'{form}' leaked into {:?}", i.text)
                        })?;
                    }
                }
            }
        }
    }
    let mut detail = format!("50 planted datasets, {scanned} form scans, 0 leaks");
    match std::env::var_os("BIASCORPUS_DGDB") {
        Some(path) if Path::new(&path).exists() => {
            let file = std::fs::File::open(&path).map_err(|e| e.to_string())?;
            let data = biascorpus_core::dataset::read_csv(file, &lex).map_err(|e| e.to_string())?;
            let s = holdout_rare_terms(&data, &lex, 10, &SplitConfig::default(), HoldoutMode::MoveToTest)
                .map_err(|e| e.to_string())?;
            ensure(s.held_out_terms.len() == 12 && s.excluded_instances == 69, || {
                format!(
                    "real data: {} held-out terms, {} instances (expected 12, 69)",
                    s.held_out_terms.len(),
                    s.excluded_instances
                )
            })?;
            detail.push_str("; real data: 12 terms, 69 instances");
        }
        _ => detail.push_str("; real-data check SKIPPED (set BIASCORPUS_DGDB to a text,label CSV)"),
    }
    Ok(detail)
}

// ---------------------------------------------------------------- resampling

fn resampling_criterion() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let strategies = [
        ResampleStrategy::Undersample,
        ResampleStrategy::Oversample,
        ResampleStrategy::Balanced,
    ];
    let (mut ok, mut rejected) = (0, 0);
    for k in 0..200 {
        let nb = rng.gen_range(1..400);
        let nu = rng.gen_range(1..400);
        let data: Vec<LabeledInstance> = (0..nb + nu).map(|i| instance(i, i < nb, "x")).collect();
        let strategy = strategies[k % 3];
        // targets as integers: ratio m/1000, biased = floor(m * size / 1000 + 1/2)
        let (m, size) = if strategy == ResampleStrategy::Oversample && k % 2 == 0 {
            let b = nb + rng.gen_range(0..300);
            (None, b + nu)
        } else {
            (Some(rng.gen_range(0..=1000usize)), rng.gen_range(1..800))
        };
        let (ratio, b) = match m {
            Some(m) => (m as f64 / 1000.0, (m * size + 500) / 1000),
            None => ((size - nu) as f64 / size as f64, size - nu),
        };
        let u = size - b;
        let feasible = match strategy {
            ResampleStrategy::Undersample => b <= nb && u <= nu,
            ResampleStrategy::Oversample => u == nu && b >= nb,
            _ => true,
        };
        let cfg = ResampleConfig {
            strategy,
            target_biased_ratio: ratio,
            target_size: size,
            seed: k as u64,
        };
        match (feasible, resample(&data, &cfg)) {
            (true, Ok(out)) => {
                let got_b = out.iter().filter(|i| i.label.is_biased()).count();
                ensure(out.len() == size && got_b == b, || {
                    format!("config {k}: size {} biased {got_b}, expected {size}/{b}", out.len())
                })?;
                if strategy == ResampleStrategy::Undersample {
                    let uniq: HashSet<&str> = out.iter().map(|i| i.item_id.as_str()).collect();
                    ensure(uniq.len() == out.len(), || {
                        format!("config {k}: undersample repeated an instance")
                    })?;
                }
                ok += 1;
            }
            (false, Err(_)) => rejected += 1,
            (f, r) => return Err(format!("config {k}: feasible={f} but result {:?}", r.map(|v| v.len()))),
        }
    }
    let input =
        |nb: usize, nu: usize| -> Vec<LabeledInstance> { (0..nb + nu).map(|i| instance(i, i < nb, "x")).collect() };
    let presets = [
        (ResampleConfig::undersample_preset(1), input(600, 1300), 1649),
        (ResampleConfig::oversample_preset(1), input(900, 1626), 2648),
        (ResampleConfig::balanced_preset(1), input(600, 1300), 2137),
    ];
    for (cfg, data, expected) in presets {
        let n = resample(&data, &cfg)
            .map_err(|e| format!("{:?} preset: {e}", cfg.strategy))?
            .len();
        ensure(n == expected, || {
            format!("{:?} preset gave {n}, expected {expected}", cfg.strategy)
        })?;
    }
    Ok(format!(
        "200 configs: {ok} exact, {rejected} infeasible rejected; presets 1649/2648/2137"
    ))
}

// ---------------------------------------------------------------- metrics

fn oracle_f1(pairs: &[(bool, bool)], class: bool) -> f64 {
    let tp = pairs.iter().filter(|(p, g)| *p == class && *g == class).count() as f64;
    let predicted = pairs.iter().filter(|(p, _)| *p == class).count() as f64;
    let actual = pairs.iter().filter(|(_, g)| *g == class).count() as f64;
    let precision = if predicted == 0.0 { 0.0 } else { tp / predicted };
    let recall = if actual == 0.0 { 0.0 } else { tp / actual };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn pred(id: &str, biased: bool) -> Prediction {
    Prediction::from_score(id, if biased { 1.0 } else { 0.0 }, 0.5, "m", 0)
}

fn metrics_criterion() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for set in 0..1000 {
        let n = rng.gen_range(1..80);
        let (pg, pp) = (rng.gen::<f64>(), rng.gen::<f64>());
        let pairs: Vec<(bool, bool)> = (0..n).map(|_| (rng.gen_bool(pp), rng.gen_bool(pg))).collect();
        let gold: Vec<LabeledInstance> = pairs
            .iter()
            .enumerate()
            .map(|(i, (_, g))| instance(i, *g, ""))
            .collect();
        let mut preds: Vec<Prediction> = pairs
            .iter()
            .enumerate()
            .map(|(i, (p, _))| pred(&format!("i{i:05}"), *p))
            .collect();
        preds.shuffle(&mut rng);
        let cm = confusion(&preds, &gold).map_err(|e| e.to_string())?;
        let count = |p: bool, g: bool| pairs.iter().filter(|x| **x == (p, g)).count() as u64;
        ensure(
            (cm.tp, cm.fp, cm.fn_, cm.tn)
                == (
                    count(true, true),
                    count(true, false),
                    count(false, true),
                    count(false, false),
                ),
            || format!("set {set}: confusion {cm:?}"),
        )?;
        let f = f1_scores(&cm);
        let (pos, neg) = (oracle_f1(&pairs, true), oracle_f1(&pairs, false));
        ensure(
            (f.f1_positive - pos).abs() < 1e-12 && (f.f1_negative - neg).abs() < 1e-12,
            || {
                format!(
                    "set {set}: f1 {}/{} vs oracle {pos}/{neg}",
                    f.f1_positive, f.f1_negative
                )
            },
        )?;
        ensure((f.f1_macro - (pos + neg) / 2.0).abs() < 1e-12, || {
            format!("set {set}: macro")
        })?;
        ensure(f.f1_micro == f.accuracy, || {
            format!("set {set}: micro {} != accuracy {}", f.f1_micro, f.accuracy)
        })?;
    }

    let lex = Lexicon::bundled();
    let terms: Vec<String> = lex
        .terms()
        .iter()
        .filter(|t| !t.surface.contains(' '))
        .take(3)
        .map(|t| t.surface.clone())
        .collect();
    let rows = [
        (format!("{} en {}", terms[0], terms[1]), true, true),
        (format!("alleen {}", terms[0]), false, true),
        (format!("{} hier", terms[2]), true, false),
        (format!("{} {} {}", terms[0], terms[1], terms[2]), true, true),
        (format!("{} en nog eens {}", terms[1], terms[1]), false, false),
        ("geen term".to_string(), false, true),
    ];
    let gold: Vec<LabeledInstance> = rows.iter().enumerate().map(|(i, r)| instance(i, r.1, &r.0)).collect();
    let preds: Vec<Prediction> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| pred(&format!("i{i:05}"), r.2))
        .collect();
    let got = per_term_accuracy(&preds, &gold, &lex).map_err(|e| e.to_string())?;
    let mut oracle: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (text, g, p) in &rows {
        let words: HashSet<&str> = text.split(' ').collect();
        for t in &terms {
            if words.contains(t.as_str()) {
                let e = oracle.entry(t.as_str()).or_default();
                e.0 += 1;
                e.1 += usize::from(g == p);
            }
        }
    }
    ensure(got.len() == oracle.len(), || {
        format!("per-term keys {:?}", got.keys().collect::<Vec<_>>())
    })?;
    for (t, (n, c)) in oracle {
        let a = got[t];
        ensure(a.n == n && a.correct == c, || {
            format!("per-term '{t}': {}/{} vs {c}/{n}", a.correct, a.n)
        })?;
    }
    Ok("1000 random sets exact; micro == accuracy on all; 3-term group-by equal".into())
}

// ---------------------------------------------------------------- rule baseline

fn rule_baseline_criterion() -> Check {
    let lex = Lexicon::bundled();
    let window = DateWindow::new(
        NaiveDate::from_ymd_opt(2010, 1, 1).unwrap(),
        NaiveDate::from_ymd_opt(2026, 1, 1).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    let docs = fetch_documents(&lex, window, &SourceConfig::local(fixture_corpus()))
        .map_err(|e| e.to_string())?
        .documents;
    let candidates = extract_candidates(&ingest(&docs), &lex);
    // gold from the rule itself: any prohibited term makes the sentence biased
    let gold: Vec<LabeledInstance> = candidates
        .iter()
        .map(|c| LabeledInstance {
            item_id: c.item_id.clone(),
            text: c.sentence.text.clone(),
            context_before: c.sentence.context_before.clone(),
            context_after: c.sentence.context_after.clone(),
            matches: c.matches.clone(),
            label: BinaryLabel::from_bool(
                lex.terms()
                    .iter()
                    .filter(|t| t.term_class == TermClass::Prohibited)
                    .flat_map(|t| t.forms())
                    .any(|f| whole_token(&c.sentence.text, f)),
            ),
            resolution: Resolution::Direct,
        })
        .collect();
    let positives = gold.iter().filter(|g| g.label.is_biased()).count();
    ensure(positives > 0, || "fixture has no prohibited-term instances".into())?;
    let preds: Vec<Prediction> = gold.iter().map(rule_baseline_classify).collect();
    let cm = confusion(&preds, &gold).map_err(|e| e.to_string())?;
    let recall = cm.tp as f64 / (cm.tp + cm.fn_) as f64;
    ensure(recall == 1.0, || {
        format!("recall {recall} (tp {} fn {})", cm.tp, cm.fn_)
    })?;
    Ok(format!(
        "recall 1.0 on {positives} rule-positive fixture sentences of {}",
        gold.len()
    ))
}

// ---------------------------------------------------------------- explanation

const WORDS: [&str; 20] = [
    "de",
    "stroom",
    "bevolking",
    "regio",
    "besluit",
    "wet",
    "mensen",
    "werk",
    "school",
    "huis",
    "stad",
    "jaar",
    "plan",
    "zorg",
    "taal",
    "groep",
    "dorp",
    "markt",
    "haven",
    "brug",
];

fn linear(weights: HashMap<String, f64>, bias: f64) -> impl Fn(&str) -> f64 + Send + Sync {
    move |text: &str| {
        bias + text
            .split_whitespace()
            .map(|w| weights.get(w).copied().unwrap_or(0.0))
            .sum::<f64>()
    }
}

/// Weighted damped least squares by Cholesky.
fn oracle_ridge(masks: &[Vec<bool>], y: &[f64], w: &[f64]) -> Vec<f64> {
    let p = masks[0].len() + 1;
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for ((m, &yi), &wi) in masks.iter().zip(y).zip(w) {
        let x: Vec<f64> = std::iter::once(1.0)
            .chain(m.iter().map(|&v| if v { 1.0 } else { 0.0 }))
            .collect();
        for i in 0..p {
            b[i] += wi * x[i] * yi;
            for j in 0..p {
                a[i][j] += wi * x[i] * x[j];
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate().skip(1) {
        row[i] += RIDGE_DAMPING;
    }
    let mut l = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            l[i][j] = if i == j {
                (a[i][i] - s).sqrt()
            } else {
                (a[i][j] - s) / l[j][j]
            };
        }
    }
    let mut z = vec![0.0; p];
    for i in 0..p {
        z[i] = (b[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        x[i] = (z[i] - (i + 1..p).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

fn explanation_criterion() -> Check {
    let mut hits = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let n = rng.gen_range(4..=16);
        let mut words = WORDS.to_vec();
        words.shuffle(&mut rng);
        words.truncate(n);
        let planted = words[rng.gen_range(0..n)];
        let mut w: HashMap<String, f64> = words
            .iter()
            .map(|x| (x.to_string(), rng.gen_range(-0.05..0.05)))
            .collect();
        w.insert(planted.to_string(), 0.6);
        let clf = FnClassifier::new("planted", linear(w, 0.2));
        let cfg = ExplainConfig {
            n_samples: 500,
            seed: trial,
            ..Default::default()
        };
        let e = explain_instance("x", &words.join(" "), &clf, &cfg).map_err(|e| e.to_string())?;
        hits += usize::from(e.token_weights[0].token == planted);
    }
    ensure(hits >= 95, || format!("planted token first in {hits}/100"))?;

    let constant = FnClassifier::new("const", |_: &str| 0.3);
    let e = explain_instance("x", "de stroom bereikte de stad", &constant, &ExplainConfig::default())
        .map_err(|e| e.to_string())?;
    ensure(
        e.degenerate_variance && e.token_weights.iter().all(|t| t.weight == 0.0),
        || "constant classifier not flagged degenerate with zero weights".into(),
    )?;

    let mut worst = 0.0f64;
    for n in 1..=10usize {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let masks: Vec<Vec<bool>> = (0..1u32 << n)
            .map(|b| (0..n).map(|i| b & (1 << i) != 0).collect())
            .collect();
        let width = 0.75 * (n as f64).sqrt();
        let kw: Vec<f64> = masks.iter().map(|m| kernel(cosine_distance(m), width)).collect();
        let y: Vec<f64> = masks
            .iter()
            .map(|m| {
                (if m[0] && m[n - 1] { 0.6 } else { 0.0 })
                    + 0.05 * m.iter().filter(|&&b| b).count() as f64
                    + rng.gen_range(-0.01..0.01)
            })
            .collect();
        let (b0, coefs) = weighted_ridge(&masks, &y, &kw, RIDGE_DAMPING).map_err(|e| e.to_string())?;
        let oracle = oracle_ridge(&masks, &y, &kw);
        worst = worst.max((b0 - oracle[0]).abs());
        for (c, o) in coefs.iter().zip(&oracle[1..]) {
            worst = worst.max((c - o).abs());
        }
    }
    ensure(worst < 1e-8, || {
        format!("exhaustive-mask fit differs from oracle by {worst:e}")
    })?;
    Ok(format!(
        "planted top-1 in {hits}/100; constant -> degenerate; exhaustive masks n<=10 within {worst:.1e}"
    ))
}

// ---------------------------------------------------------------- adapters

fn req(id: &str, text: &str) -> AdapterRequest {
    AdapterRequest {
        id: id.into(),
        text: text.into(),
        context_before: String::new(),
        context_after: String::new(),
    }
}

fn mock_adapter(args: &[&str]) -> SubprocessAdapter {
    SubprocessAdapter::new(
        env!("CARGO_BIN_EXE_mock-adapter"),
        args.iter().map(|s| s.to_string()).collect(),
    )
    .with_model_id("mock")
    .with_timeout(Duration::from_secs(20))
}

fn conformance(adapter: &dyn Classifier, label: &str) -> Result<(), String> {
    let reqs: Vec<AdapterRequest> = (0..40)
        .map(|i| req(&format!("{label}-{i}"), &format!("zin {i} van {label}")))
        .collect();
    let out = adapter.score_batch(&reqs).map_err(|e| format!("{label}: {e}"))?;
    ensure(out.len() == reqs.len(), || {
        format!("{label}: {} outcomes for {} requests", out.len(), reqs.len())
    })?;
    for (r, o) in reqs.iter().zip(&out) {
        ensure(*o == ScoreOutcome::Score(mock_score(&r.text)), || {
            format!("{label}: {} got {o:?}", r.id)
        })?;
    }

    let reqs = vec![
        req("a", "goed"),
        req("b", "dit is kapot"),
        req("c", "ook goed"),
        req("d", "kapot weer"),
    ];
    let opts = BatchOptions {
        chunk_size: 3,
        retries: 1,
        ..Default::default()
    };
    let preds = classify_batch(adapter, &reqs, &opts).map_err(|e| format!("{label}: {e}"))?;
    let shape: Vec<Result<&str, &str>> = preds
        .iter()
        .map(|p| match p {
            Ok(p) => Ok(p.item_id.as_str()),
            Err(ClassifierError::InferenceError { id, .. }) => Err(id.as_str()),
            Err(_) => Err("?"),
        })
        .collect();
    ensure(shape == vec![Ok("a"), Err("b"), Ok("c"), Err("d")], || {
        format!("{label}: partial failure gave {shape:?}")
    })
}

fn adapter_conformance() -> Check {
    let jittery = mock_adapter(&["--jitter-ms", "15", "--fail-on", "kapot"]);
    conformance(&jittery, "stdio")?;

    // the child exits after 3 requests; the adapter restarts it on the next call
    let crashing = mock_adapter(&["--exit-after", "3"]);
    let first = crashing.score_batch(&[req("x1", "a"), req("x2", "b"), req("x3", "c"), req("x4", "d")]);
    let first = first.map_err(|e| format!("crash batch: {e}"))?;
    ensure(first[..3].iter().all(|o| matches!(o, ScoreOutcome::Score(_))), || {
        format!("crash batch {first:?}")
    })?;
    ensure(matches!(first[3], ScoreOutcome::Error(_)), || {
        format!("unanswered request not an error: {first:?}")
    })?;
    let again = crashing
        .score_batch(&[req("y", "e")])
        .map_err(|e| format!("after restart: {e}"))?;
    ensure(again == vec![ScoreOutcome::Score(mock_score("e"))], || {
        format!("after restart {again:?}")
    })?;

    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            let opts = MockOptions {
                fail_on: Some("kapot".into()),
                ..Default::default()
            };
            serve(listener, router(opts)).await.unwrap();
        });
    });
    let addr = rx.recv().map_err(|e| e.to_string())?;
    let remote = RemoteAdapter::new(&format!("http://{addr}"), Duration::from_secs(10));
    conformance(&remote, "http")?;
    Ok("stdio (jittered, out of order) and HTTP (reversed): ids matched, failures isolated, order kept; restart after exit".into())
}

// ---------------------------------------------------------------- prompt

const REFERENCE_PROMPT_PREFIX: &str = "Je bent een expert op het gebied van bias, stereotypering en discriminatie. Je taak is om zinnen te classificeren volgens de volgende definitie: een zin bevat bias als de zin een stereotype, uitsluiting, machtsverhoudingen of vooroordelen bevat, die impliciet of expliciet kunnen zijn, en die gaan over een af te bakenen groep personen, OF als een zin een woord bevat wat moet worden vermeden omdat het bias bevat. Geef de volgende zin een label, antwoord alleen met 0 of 1. Geef de zin het label 0 voor niet-biased en 1 voor biased. De zin is: ";

fn prompt_fidelity() -> Check {
    let sentence = "de stroom migranten bereikte de grens";
    let rendered = PromptTemplate::default().render(sentence).map_err(|e| e.to_string())?;
    let expected = format!("{REFERENCE_PROMPT_PREFIX}{sentence}.");
    ensure(rendered.as_bytes() == expected.as_bytes(), || {
        "rendered prompt differs from the reference bytes".into()
    })?;

    let adversarial = [
        "", " ", "01", "10", "11", "2", "-1", "+1", "0.5", "1.0", "1e0", "één", "nul", "ja", "nee", "true", "label: 1",
        "1 of 0", "0/1", "biased",
    ];
    let accepted: Vec<&str> = adversarial
        .iter()
        .copied()
        .filter(|r| parse_generative_response(r) != ParsedResponse::Abstain)
        .collect();
    ensure(accepted.is_empty(), || format!("parser accepted {accepted:?}"))?;
    for (text, want) in [
        ("0", BinaryLabel::NotBiased),
        ("1", BinaryLabel::Biased),
        (" 1.\n", BinaryLabel::Biased),
    ] {
        ensure(parse_generative_response(text) == ParsedResponse::Label(want), || {
            format!("parser rejected {text:?}")
        })?;
    }
    Ok(format!(
        "{} bytes identical; {} adversarial replies rejected",
        rendered.len(),
        adversarial.len()
    ))
}
