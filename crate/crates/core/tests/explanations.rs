use std::collections::HashMap;

use biascorpus_core::classifiers::FnClassifier;
use biascorpus_core::explain::{
    cosine_distance, explain_instance, kernel, perturb_samples, render_html, weighted_ridge, RIDGE_DAMPING,
};
use biascorpus_core::ExplainConfig;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 24] = [
    "de",
    "het",
    "een",
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
    "kerk",
    "markt",
    "haven",
    "brug",
    "veld",
];

/// Additive classifier over whitespace tokens.
fn linear(weights: HashMap<String, f64>, bias: f64) -> impl Fn(&str) -> f64 + Send + Sync {
    move |text: &str| {
        bias + text
            .split_whitespace()
            .map(|w| weights.get(w).copied().unwrap_or(0.0))
            .sum::<f64>()
    }
}

fn sentence(rng: &mut ChaCha8Rng, n: usize) -> Vec<&'static str> {
    let mut w = WORDS.to_vec();
    w.shuffle(rng);
    w.truncate(n);
    w
}

#[test]
fn planted_token_ranks_first() {
    let mut hits = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let n = rng.gen_range(4..=16);
        let words = sentence(&mut rng, n);
        let planted = words[rng.gen_range(0..n)];
        let mut weights: HashMap<String, f64> = words
            .iter()
            .map(|w| (w.to_string(), rng.gen_range(-0.05..0.05)))
            .collect();
        weights.insert(planted.to_string(), 0.6);
        let clf = FnClassifier::new("planted", linear(weights, 0.2));
        let cfg = ExplainConfig {
            n_samples: 500,
            seed: trial,
            ..Default::default()
        };
        let e = explain_instance("x", &words.join(" "), &clf, &cfg).unwrap();
        if e.token_weights[0].token == planted {
            hits += 1;
        }
    }
    assert!(hits >= 95, "planted token ranked first in {hits}/100 trials");
}

#[test]
fn constant_classifier_is_degenerate() {
    let clf = FnClassifier::new("const", |_: &str| 0.42);
    let e = explain_instance("x", "de stroom bereikte de grens", &clf, &ExplainConfig::default()).unwrap();
    assert!(e.degenerate_variance);
    assert!(e.token_weights.iter().all(|t| t.weight == 0.0));
    assert_eq!(e.intercept, 0.42);
    assert_eq!(e.local_fit_r2, 1.0);
}

#[test]
fn explanations_are_seed_deterministic() {
    let mut w = HashMap::new();
    w.insert("stroom".to_string(), 0.5);
    let clf = FnClassifier::new("m", linear(w, 0.0));
    let cfg = ExplainConfig {
        n_samples: 200,
        seed: 9,
        ..Default::default()
    };
    let a = explain_instance("x", "een stroom mensen in de stad", &clf, &cfg).unwrap();
    let b = explain_instance("x", "een stroom mensen in de stad", &clf, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let html = render_html(&[a]);
    assert!(html.contains("stroom") && html.starts_with("<!DOCTYPE html>"));
}

#[test]
fn bad_configs_and_empty_text() {
    let clf = FnClassifier::new("m", |_: &str| 0.0);
    let few = ExplainConfig {
        n_samples: 3,
        ..Default::default()
    };
    assert!(explain_instance("x", "de stad", &clf, &few).is_err());
    assert!(explain_instance("x", " ,. ", &clf, &ExplainConfig::default()).is_err());
}

fn all_masks(n: usize) -> Vec<Vec<bool>> {
    (0..1u32 << n)
        .map(|bits| (0..n).map(|i| bits & (1 << i) != 0).collect())
        .collect()
}

/// Damped weighted least squares via Cholesky, independent of the library solver.
fn oracle_ridge(masks: &[Vec<bool>], y: &[f64], w: &[f64], damping: f64) -> Vec<f64> {
    let p = masks[0].len() + 1;
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for ((m, &yi), &wi) in masks.iter().zip(y).zip(w) {
        let x: Vec<f64> = std::iter::once(1.0)
            .chain(m.iter().map(|&v| f64::from(u8::from(v))))
            .collect();
        for i in 0..p {
            b[i] += wi * x[i] * yi;
            for j in 0..p {
                a[i][j] += wi * x[i] * x[j];
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate().skip(1) {
        row[i] += damping;
    }
    let mut l = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][j] = (a[i][i] - s).sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
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

#[test]
fn exhaustive_masks_agree_with_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in 1..=10 {
        let masks = all_masks(n);
        let width = 0.75 * (n as f64).sqrt();
        let weights: Vec<f64> = masks.iter().map(|m| kernel(cosine_distance(m), width)).collect();
        // nonlinear target: an interaction term plus noise
        let y: Vec<f64> = masks
            .iter()
            .map(|m| {
                let on = m.iter().filter(|&&b| b).count() as f64;
                (if m[0] && m[n - 1] { 0.7 } else { 0.0 }) + 0.05 * on + rng.gen_range(-0.01..0.01)
            })
            .collect();
        let (b0, coefs) = weighted_ridge(&masks, &y, &weights, RIDGE_DAMPING).unwrap();
        let oracle = oracle_ridge(&masks, &y, &weights, RIDGE_DAMPING);
        assert!((b0 - oracle[0]).abs() < 1e-8, "n={n}");
        for (c, o) in coefs.iter().zip(&oracle[1..]) {
            assert!((c - o).abs() < 1e-8, "n={n}: {c} vs {o}");
        }
    }
}

#[test]
fn sampled_explanation_agrees_with_exhaustive_fit() {
    for n in 3..=10 {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let words = sentence(&mut rng, n);
        let w: HashMap<String, f64> = words
            .iter()
            .map(|x| (x.to_string(), rng.gen_range(-0.3..0.3)))
            .collect();
        let f = linear(w.clone(), 0.1);
        let masks = all_masks(n);
        let y: Vec<f64> = masks
            .iter()
            .map(|m| {
                f(&words
                    .iter()
                    .zip(m)
                    .filter(|(_, &k)| k)
                    .map(|(t, _)| *t)
                    .collect::<Vec<_>>()
                    .join(" "))
            })
            .collect();
        let width = 0.75 * (n as f64).sqrt();
        let kw: Vec<f64> = masks.iter().map(|m| kernel(cosine_distance(m), width)).collect();
        let exact = oracle_ridge(&masks, &y, &kw, RIDGE_DAMPING);

        let clf = FnClassifier::new("lin", f);
        let cfg = ExplainConfig {
            n_samples: 2000,
            top_k: n,
            seed: 1,
            ..Default::default()
        };
        let e = explain_instance("x", &words.join(" "), &clf, &cfg).unwrap();
        for tw in &e.token_weights {
            assert!(
                (tw.weight - exact[tw.position + 1]).abs() < 1e-2,
                "n={n} {}: {} vs {}",
                tw.token,
                tw.weight,
                exact[tw.position + 1]
            );
        }
        assert!(e.local_fit_r2 > 0.99);
    }
}

proptest! {
    #[test]
    fn masks_follow_the_sampling_rule(n in 1usize..30, samples in 1usize..200, seed in any::<u64>()) {
        let m = perturb_samples(n, samples, seed);
        prop_assert_eq!(m.len(), samples);
        prop_assert!(m[0].iter().all(|&b| b));
        for mask in &m[1..] {
            prop_assert_eq!(mask.len(), n);
            prop_assert!(mask.iter().any(|&b| !b));
        }
        prop_assert_eq!(m, perturb_samples(n, samples, seed));
    }

    #[test]
    fn kernel_decreases_with_dropped_tokens(n in 2usize..40) {
        let width = 0.75 * (n as f64).sqrt();
        let mut last = f64::INFINITY;
        for keep in (0..=n).rev() {
            let mask: Vec<bool> = (0..n).map(|i| i < keep).collect();
            let k = kernel(cosine_distance(&mask), width);
            prop_assert!(k <= last);
            prop_assert!(k > 0.0 && k <= 1.0);
            last = k;
        }
    }
}
