//! Synthetic inputs shared by the benchmarks.

use biascorpus_core::{BinaryLabel, LabeledInstance, Lexicon, Resolution};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FILLER: [&str; 12] = [
    "de", "het", "een", "werd", "niet", "bij", "mensen", "over", "stad", "haven", "plan", "jaar",
];

/// `count` sentences of 8 to 30 tokens, roughly one in five tokens a lexicon form.
pub fn sentences(lexicon: &Lexicon, count: usize, seed: u64) -> Vec<String> {
    let forms: Vec<&str> = lexicon.terms().iter().flat_map(|t| t.forms()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(8..=30);
            let words: Vec<&str> = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.2) {
                        *forms.choose(&mut rng).unwrap()
                    } else {
                        *FILLER.choose(&mut rng).unwrap()
                    }
                })
                .collect();
            words.join(" ") + "."
        })
        .collect()
}

/// Labelled instances over [`sentences`], a third of them biased.
pub fn dataset(lexicon: &Lexicon, count: usize, seed: u64) -> Vec<LabeledInstance> {
    sentences(lexicon, count, seed)
        .into_iter()
        .enumerate()
        .map(|(i, text)| LabeledInstance {
            item_id: format!("b{i:06}"),
            text,
            context_before: String::new(),
            context_after: String::new(),
            matches: Vec::new(),
            label: BinaryLabel::from_bool(i % 3 == 0),
            resolution: Resolution::Direct,
        })
        .collect()
}

/// Rating matrix of `items` rows, `raters` uniform votes over `k` categories.
pub fn ratings(items: usize, raters: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..items)
        .map(|_| {
            let mut row = vec![0; k];
            for _ in 0..raters {
                row[rng.gen_range(0..k)] += 1;
            }
            row
        })
        .collect()
}
