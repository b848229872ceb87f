//! Train/validation/test splits, the rare-term out-of-domain regime, and
//! class-ratio resampling of training sets.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{BinaryLabel, LabeledInstance};
use crate::lexicon::Lexicon;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("dataset of {0} instances is too small to split (need at least 5)")]
    TooSmall(usize),
    #[error("invalid split proportions: {0}")]
    InvalidProportions(String),
    #[error("invalid resample config: {0}")]
    InvalidConfig(String),
    #[error("infeasible target: {0}")]
    InfeasibleTarget(String),
    #[error("split manifest does not match dataset: {0}")]
    ManifestMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
    pub stratify: bool,
}

impl SplitConfig {
    pub fn new(train: f64, val: f64, test: f64, seed: u64, stratify: bool) -> Result<Self, SplitError> {
        let cfg = SplitConfig {
            train,
            val,
            test,
            seed,
            stratify,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SplitError> {
        for (name, p) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(SplitError::InvalidProportions(format!("{name}={p} not in (0,1)")));
            }
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SplitError::InvalidProportions(format!("sum is {sum}, expected 1")));
        }
        Ok(())
    }
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 0,
            stratify: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    InDomain,
    OutOfDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSplits {
    pub regime: Regime,
    pub train: Vec<LabeledInstance>,
    pub val: Vec<LabeledInstance>,
    pub test: Vec<LabeledInstance>,
    pub held_out_terms: Vec<String>,
    pub rare_threshold: usize,
    /// Instances moved to the out-of-domain test set.
    pub excluded_instances: usize,
    /// Set when no term fell under the threshold.
    pub nothing_held_out: bool,
}

fn floor_share(n: usize, p: f64) -> usize {
    // tolerance absorbs representation error such as 0.2 * 35
    ((n as f64) * p + 1e-9).floor() as usize
}

/// (train, val, test) sizes: val and test get floor shares, train the remainder.
pub fn split_sizes(n: usize, val: f64, test: f64) -> (usize, usize, usize) {
    let v = floor_share(n, val);
    let t = floor_share(n, test);
    (n - v - t, v, t)
}

type Parts = (Vec<LabeledInstance>, Vec<LabeledInstance>, Vec<LabeledInstance>);

fn cut(mut items: Vec<LabeledInstance>, val: f64, test: f64, rng: &mut ChaCha8Rng) -> Parts {
    items.shuffle(rng);
    let (tr, v, _) = split_sizes(items.len(), val, test);
    let test_part = items.split_off(tr + v);
    let val_part = items.split_off(tr);
    (items, val_part, test_part)
}

/// Sizes follow [`split_sizes`] on the whole set. When stratified, val and
/// test take `round_half_up(size × biased share)` biased instances and train
/// the rest, so every split is within one instance of the overall ratio.
fn partition(items: Vec<LabeledInstance>, val: f64, test: f64, stratify: bool, rng: &mut ChaCha8Rng) -> Parts {
    if !stratify {
        return cut(items, val, test, rng);
    }
    let n = items.len();
    let (_, nv, nt) = split_sizes(n, val, test);
    let (mut biased, mut unbiased): (Vec<_>, Vec<_>) = items.into_iter().partition(|i| i.label.is_biased());
    let share = biased.len() as f64 / n.max(1) as f64;
    let vb = round_half_up(nv as f64 * share);
    let tb = round_half_up(nt as f64 * share);
    biased.shuffle(rng);
    unbiased.shuffle(rng);
    let mut te = biased.split_off(biased.len() - tb);
    te.extend(unbiased.split_off(unbiased.len() - (nt - tb)));
    let mut va = biased.split_off(biased.len() - vb);
    va.extend(unbiased.split_off(unbiased.len() - (nv - vb)));
    let mut tr = biased;
    tr.extend(unbiased);
    tr.shuffle(rng);
    va.shuffle(rng);
    te.shuffle(rng);
    (tr, va, te)
}

fn canonical(dataset: &[LabeledInstance]) -> Vec<LabeledInstance> {
    let mut items = dataset.to_vec();
    items.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    items
}

/// Seeded shuffle and contiguous floor cut; see `partition` for stratification.
pub fn split_dataset(dataset: &[LabeledInstance], config: &SplitConfig) -> Result<RegimeSplits, SplitError> {
    config.validate()?;
    if dataset.len() < 5 {
        return Err(SplitError::TooSmall(dataset.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (train, val, test) = partition(canonical(dataset), config.val, config.test, config.stratify, &mut rng);
    Ok(RegimeSplits {
        regime: Regime::InDomain,
        train,
        val,
        test,
        held_out_terms: Vec::new(),
        rare_threshold: 0,
        excluded_instances: 0,
        nothing_held_out: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutMode {
    /// Held-out instances form the whole test set; the rest is split train/val.
    #[default]
    MoveToTest,
    /// The rest is split train/val/test as usual; held-out instances are
    /// appended to the test set.
    AppendToTest,
}

/// Per-term match counts computed by re-matching every text.
pub fn term_counts(dataset: &[LabeledInstance], lexicon: &Lexicon) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for inst in dataset {
        for m in lexicon.match_terms(&inst.text) {
            *counts.entry(m.term).or_default() += 1;
        }
    }
    counts
}

/// Holds out every term occurring `threshold` times or fewer.
pub fn holdout_rare_terms(
    dataset: &[LabeledInstance],
    lexicon: &Lexicon,
    threshold: usize,
    config: &SplitConfig,
    mode: HoldoutMode,
) -> Result<RegimeSplits, SplitError> {
    config.validate()?;
    if threshold < 1 {
        return Err(SplitError::InvalidConfig("threshold must be at least 1".into()));
    }
    let counts = term_counts(dataset, lexicon);
    let held: BTreeSet<String> = counts
        .iter()
        .filter(|(_, &c)| c <= threshold)
        .map(|(t, _)| t.clone())
        .collect();

    // nested occurrences count too, so no held-out form survives in train or val
    let (excluded, rest): (Vec<_>, Vec<_>) = canonical(dataset).into_iter().partition(|inst| {
        lexicon
            .occurring_terms(&inst.text)
            .into_iter()
            .any(|t| held.contains(t))
    });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (train, val, mut test) = match mode {
        HoldoutMode::MoveToTest => {
            let val_share = config.val / (config.train + config.val);
            let mut items = rest;
            items.shuffle(&mut rng);
            let v = floor_share(items.len(), val_share);
            let val = items.split_off(items.len() - v);
            (items, val, Vec::new())
        }
        HoldoutMode::AppendToTest => partition(rest, config.val, config.test, config.stratify, &mut rng),
    };
    let excluded_instances = excluded.len();
    test.extend(excluded);
    Ok(RegimeSplits {
        regime: Regime::OutOfDomain,
        train,
        val,
        test,
        nothing_held_out: held.is_empty(),
        held_out_terms: held.into_iter().collect(),
        rare_threshold: threshold,
        excluded_instances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleStrategy {
    None,
    Undersample,
    Oversample,
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleConfig {
    pub strategy: ResampleStrategy,
    pub target_biased_ratio: f64,
    pub target_size: usize,
    pub seed: u64,
}

impl ResampleConfig {
    /// 31.0% biased in 1,649 instances.
    pub fn undersample_preset(seed: u64) -> Self {
        ResampleConfig {
            strategy: ResampleStrategy::Undersample,
            target_biased_ratio: 0.310,
            target_size: 1649,
            seed,
        }
    }

    /// 38.6% biased in 2,648 instances.
    pub fn oversample_preset(seed: u64) -> Self {
        ResampleConfig {
            strategy: ResampleStrategy::Oversample,
            target_biased_ratio: 0.386,
            target_size: 2648,
            seed,
        }
    }

    /// 50/50 in 2,137 instances.
    pub fn balanced_preset(seed: u64) -> Self {
        ResampleConfig {
            strategy: ResampleStrategy::Balanced,
            target_biased_ratio: 0.5,
            target_size: 2137,
            seed,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        match name {
            "undersample" => Some(Self::undersample_preset(seed)),
            "oversample" => Some(Self::oversample_preset(seed)),
            "balanced" => Some(Self::balanced_preset(seed)),
            _ => None,
        }
    }

    /// (biased, unbiased) target counts.
    pub fn targets(&self) -> (usize, usize) {
        let b = round_half_up(self.target_biased_ratio * self.target_size as f64).min(self.target_size);
        (b, self.target_size - b)
    }
}

pub fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

fn draw(pool: &[LabeledInstance], target: usize, rng: &mut ChaCha8Rng) -> Vec<LabeledInstance> {
    if target <= pool.len() {
        sample(rng, pool.len(), target)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect()
    } else {
        let mut out = pool.to_vec();
        out.extend((0..target - pool.len()).map(|_| pool[rng.gen_range(0..pool.len())].clone()));
        out
    }
}

/// Resamples to exactly `target_size` with `round_half_up(ratio × size)` biased.
///
/// * undersample: both classes drawn without replacement (needs enough of each).
/// * oversample: every unbiased instance kept (the unbiased target must equal
///   the available count); biased kept and topped up with replacement.
/// * balanced: each class independently down-sampled or topped up.
pub fn resample(train: &[LabeledInstance], config: &ResampleConfig) -> Result<Vec<LabeledInstance>, SplitError> {
    if config.strategy == ResampleStrategy::None {
        return Ok(train.to_vec());
    }
    if !(0.0..=1.0).contains(&config.target_biased_ratio) {
        return Err(SplitError::InvalidConfig(format!(
            "ratio {} outside [0, 1]",
            config.target_biased_ratio
        )));
    }
    if config.target_size == 0 {
        return Err(SplitError::InvalidConfig("target size must be at least 1".into()));
    }
    let items = canonical(train);
    let (biased, unbiased): (Vec<_>, Vec<_>) = items.into_iter().partition(|i| i.label == BinaryLabel::Biased);
    let (b, u) = config.targets();
    let (nb, nu) = (biased.len(), unbiased.len());
    if (b > 0 && nb == 0) || (u > 0 && nu == 0) {
        return Err(SplitError::InfeasibleTarget(format!(
            "need {b} biased / {u} unbiased but a class is empty ({nb} / {nu})"
        )));
    }
    match config.strategy {
        ResampleStrategy::Undersample if b > nb || u > nu => {
            return Err(SplitError::InfeasibleTarget(format!(
                "undersampling to {b} biased / {u} unbiased needs that many unique instances (have {nb} / {nu})"
            )))
        }
        ResampleStrategy::Oversample if u != nu || b < nb => {
            return Err(SplitError::InfeasibleTarget(format!(
                "oversampling keeps all {nu} unbiased and {nb} biased; target is {u} unbiased / {b} biased"
            )))
        }
        _ => {}
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = draw(&biased, b, &mut rng);
    out.extend(draw(&unbiased, u, &mut rng));
    out.shuffle(&mut rng);
    Ok(out)
}

/// Item ids per split plus everything needed to rebuild the splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub regime: Regime,
    pub config: SplitConfig,
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub held_out_terms: Vec<String>,
    pub rare_threshold: usize,
    pub excluded_instances: usize,
    pub nothing_held_out: bool,
}

impl SplitManifest {
    pub fn from_splits(splits: &RegimeSplits, config: &SplitConfig) -> Self {
        let ids = |v: &[LabeledInstance]| v.iter().map(|i| i.item_id.clone()).collect();
        SplitManifest {
            regime: splits.regime,
            config: *config,
            seed: config.seed,
            train: ids(&splits.train),
            val: ids(&splits.val),
            test: ids(&splits.test),
            held_out_terms: splits.held_out_terms.clone(),
            rare_threshold: splits.rare_threshold,
            excluded_instances: splits.excluded_instances,
            nothing_held_out: splits.nothing_held_out,
        }
    }

    /// Rebuilds the splits from the dataset file contents.
    pub fn reconstruct(&self, dataset: &[LabeledInstance]) -> Result<RegimeSplits, SplitError> {
        let by_id: BTreeMap<&str, &LabeledInstance> = dataset.iter().map(|i| (i.item_id.as_str(), i)).collect();
        let pick = |ids: &[String]| -> Result<Vec<LabeledInstance>, SplitError> {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .map(|i| (*i).clone())
                        .ok_or_else(|| SplitError::ManifestMismatch(format!("unknown item '{id}'")))
                })
                .collect()
        };
        Ok(RegimeSplits {
            regime: self.regime,
            train: pick(&self.train)?,
            val: pick(&self.val)?,
            test: pick(&self.test)?,
            held_out_terms: self.held_out_terms.clone(),
            rare_threshold: self.rare_threshold,
            excluded_instances: self.excluded_instances,
            nothing_held_out: self.nothing_held_out,
        })
    }
}

/// Item ids shared between any two splits (empty for a valid partition).
pub fn overlapping_ids(splits: &RegimeSplits) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut dup = Vec::new();
    for inst in splits.train.iter().chain(&splits.val).chain(&splits.test) {
        if !seen.insert(inst.item_id.as_str()) {
            dup.push(inst.item_id.clone());
        }
    }
    dup
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Resolution;

    fn inst(i: usize, biased: bool, text: &str) -> LabeledInstance {
        LabeledInstance {
            item_id: format!("i{i:05}"),
            text: text.to_string(),
            context_before: String::new(),
            context_after: String::new(),
            matches: Vec::new(),
            label: BinaryLabel::from_bool(biased),
            resolution: Resolution::Direct,
        }
    }

    fn data(nb: usize, nu: usize) -> Vec<LabeledInstance> {
        (0..nb + nu).map(|i| inst(i, i < nb, "de stroom")).collect()
    }

    #[test]
    fn floor_arithmetic() {
        assert_eq!(split_sizes(10, 0.2, 0.2), (6, 2, 2));
        assert_eq!(split_sizes(5, 0.2, 0.2), (3, 1, 1));
        assert_eq!(split_sizes(35, 0.2, 0.2), (21, 7, 7));
        let s = split_dataset(&data(3, 7), &SplitConfig::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        assert!(overlapping_ids(&s).is_empty());
        assert!(matches!(
            split_dataset(&data(1, 3), &SplitConfig::default()),
            Err(SplitError::TooSmall(4))
        ));
    }

    #[test]
    fn proportions_validated() {
        assert!(SplitConfig::new(0.6, 0.2, 0.3, 0, false).is_err());
        assert!(SplitConfig::new(1.0, 0.0, 0.0, 0, false).is_err());
        assert!(SplitConfig::new(0.7, 0.2, 0.1, 0, false).is_ok());
    }

    #[test]
    fn seeds_change_shuffles() {
        let d = data(20, 80);
        let base = split_dataset(&d, &SplitConfig::default()).unwrap();
        let same = split_dataset(&d, &SplitConfig::default()).unwrap();
        assert_eq!(base, same);
        let differing = (1..=10)
            .filter(|s| {
                let cfg = SplitConfig {
                    seed: *s,
                    ..Default::default()
                };
                split_dataset(&d, &cfg).unwrap().train != base.train
            })
            .count();
        assert_eq!(differing, 10);
    }

    #[test]
    fn planted_rare_term_goes_to_test() {
        let lex = Lexicon::bundled();
        let mut d: Vec<_> = (0..40).map(|i| inst(i, i % 4 == 0, "een grote stroom")).collect();
        d.extend((40..43).map(|i| inst(i, true, "over het oostblok en de stroom")));
        let s = holdout_rare_terms(&d, &lex, 10, &SplitConfig::default(), HoldoutMode::MoveToTest).unwrap();
        assert_eq!(s.held_out_terms, vec!["oostblok".to_string()]);
        assert_eq!(s.excluded_instances, 3);
        assert_eq!(s.test.len(), 3);
        assert_eq!(s.train.len() + s.val.len(), 40);
        assert_eq!(s.val.len(), 10);
        assert!(s.train.iter().chain(&s.val).all(|i| !i.text.contains("oostblok")));
    }

    #[test]
    fn nothing_held_out_is_flagged() {
        let lex = Lexicon::bundled();
        let d: Vec<_> = (0..30).map(|i| inst(i, i % 3 == 0, "een grote stroom")).collect();
        let s = holdout_rare_terms(&d, &lex, 10, &SplitConfig::default(), HoldoutMode::MoveToTest).unwrap();
        assert!(s.nothing_held_out);
        assert!(s.held_out_terms.is_empty() && s.test.is_empty());
    }

    #[test]
    fn balanced_ten_and_ten() {
        let cfg = ResampleConfig {
            strategy: ResampleStrategy::Balanced,
            target_biased_ratio: 0.5,
            target_size: 20,
            seed: 1,
        };
        let out = resample(&data(10, 30), &cfg).unwrap();
        let b = out.iter().filter(|i| i.label.is_biased()).count();
        assert_eq!((b, out.len() - b), (10, 10));
    }

    #[test]
    fn none_is_identity() {
        let d = data(3, 4);
        let cfg = ResampleConfig {
            strategy: ResampleStrategy::None,
            target_biased_ratio: 0.0,
            target_size: 1,
            seed: 0,
        };
        assert_eq!(resample(&d, &cfg).unwrap(), d);
    }

    #[test]
    fn infeasible_targets() {
        let under = ResampleConfig {
            strategy: ResampleStrategy::Undersample,
            target_biased_ratio: 0.5,
            target_size: 30,
            seed: 0,
        };
        assert!(matches!(
            resample(&data(10, 30), &under),
            Err(SplitError::InfeasibleTarget(_))
        ));
        let over = ResampleConfig {
            strategy: ResampleStrategy::Oversample,
            target_biased_ratio: 0.5,
            target_size: 40,
            seed: 0,
        };
        assert!(resample(&data(10, 30), &over).is_err());
        assert_eq!(resample(&data(10, 20), &over).unwrap().len(), 40);
    }

    #[test]
    fn preset_targets() {
        assert_eq!(ResampleConfig::undersample_preset(0).targets(), (511, 1138));
        assert_eq!(ResampleConfig::oversample_preset(0).targets(), (1022, 1626));
        assert_eq!(ResampleConfig::balanced_preset(0).targets(), (1069, 1068));
    }

    #[test]
    fn manifest_reconstructs() {
        let d = data(10, 20);
        let cfg = SplitConfig {
            stratify: true,
            ..Default::default()
        };
        let s = split_dataset(&d, &cfg).unwrap();
        let m = SplitManifest::from_splits(&s, &cfg);
        assert_eq!(m.reconstruct(&d).unwrap(), s);
    }
}
