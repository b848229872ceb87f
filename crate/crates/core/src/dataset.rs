//! Candidate extraction, annotation batch sampling, label resolution and
//! dataset statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{Read, Write};

use chrono::{DateTime, Utc};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ContextSentence;
use crate::lexicon::{Category, Lexicon, TermClass, TermMatch};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("pool exhausted: {requested} items requested, {available} eligible")]
    PoolExhausted { requested: usize, available: usize },
    #[error("annotation references unknown item '{0}'")]
    UnknownItem(String),
    #[error("{0} item(s) still await expert resolution")]
    UnresolvedExpertItem(usize),
    #[error("invalid label {0}")]
    InvalidLabel(i64),
    #[error("csv: {0}")]
    Csv(String),
}

/// Four-way annotation label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub enum AnnotationLabel {
    NotBiased = 0,
    Biased = 1,
    Unsure = 2,
    Excluded = 3,
}

impl TryFrom<i64> for AnnotationLabel {
    type Error = DatasetError;

    fn try_from(v: i64) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(AnnotationLabel::NotBiased),
            1 => Ok(AnnotationLabel::Biased),
            2 => Ok(AnnotationLabel::Unsure),
            3 => Ok(AnnotationLabel::Excluded),
            other => Err(DatasetError::InvalidLabel(other)),
        }
    }
}

impl From<AnnotationLabel> for u8 {
    fn from(l: AnnotationLabel) -> u8 {
        l as u8
    }
}

impl AnnotationLabel {
    pub fn binary(self) -> Option<BinaryLabel> {
        match self {
            AnnotationLabel::NotBiased => Some(BinaryLabel::NotBiased),
            AnnotationLabel::Biased => Some(BinaryLabel::Biased),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub enum BinaryLabel {
    NotBiased = 0,
    Biased = 1,
}

impl BinaryLabel {
    pub fn from_bool(biased: bool) -> Self {
        if biased {
            BinaryLabel::Biased
        } else {
            BinaryLabel::NotBiased
        }
    }

    pub fn is_biased(self) -> bool {
        self == BinaryLabel::Biased
    }
}

impl TryFrom<i64> for BinaryLabel {
    type Error = DatasetError;

    fn try_from(v: i64) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(BinaryLabel::NotBiased),
            1 => Ok(BinaryLabel::Biased),
            other => Err(DatasetError::InvalidLabel(other)),
        }
    }
}

impl From<BinaryLabel> for u8 {
    fn from(l: BinaryLabel) -> u8 {
        l as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateItem {
    pub item_id: String,
    pub sentence: ContextSentence,
    pub matches: Vec<TermMatch>,
}

impl CandidateItem {
    pub fn terms(&self) -> BTreeSet<&str> {
        self.matches.iter().map(|m| m.term.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub item_id: String,
    pub annotator_id: String,
    pub session_id: String,
    /// 0 for the first pass, incremented for each re-annotation of an unsure item.
    #[serde(default)]
    pub round: u32,
    pub label: AnnotationLabel,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Direct,
    Reannotated,
    Expert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub item_id: String,
    pub text: String,
    #[serde(default)]
    pub context_before: String,
    #[serde(default)]
    pub context_after: String,
    #[serde(default)]
    pub matches: Vec<TermMatch>,
    pub label: BinaryLabel,
    pub resolution: Resolution,
}

impl LabeledInstance {
    pub fn terms(&self) -> BTreeSet<&str> {
        self.matches.iter().map(|m| m.term.as_str()).collect()
    }
}

/// Sentences with at least one lexicon match become candidates.
pub fn extract_candidates(sentences: &[ContextSentence], lexicon: &Lexicon) -> Vec<CandidateItem> {
    sentences
        .iter()
        .filter_map(|s| {
            let matches = lexicon.match_terms(&s.text);
            (!matches.is_empty()).then(|| CandidateItem {
                item_id: s.sentence_id.clone(),
                sentence: s.clone(),
                matches,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    Random,
    TermDiversity,
}

/// Draws an annotation batch uniformly without replacement from the eligible pool.
///
/// The pool is sorted by item_id before drawing, so the result depends only on
/// the candidate set and the seed.
pub fn sample_batch(
    candidates: &[CandidateItem],
    strategy: SamplingStrategy,
    n: usize,
    seed: u64,
    already_labeled: &HashSet<String>,
    seen_terms: &HashSet<String>,
) -> Result<Vec<CandidateItem>, DatasetError> {
    let mut pool: Vec<&CandidateItem> = candidates
        .iter()
        .filter(|c| !already_labeled.contains(&c.item_id))
        .filter(|c| match strategy {
            SamplingStrategy::Random => true,
            SamplingStrategy::TermDiversity => c.matches.iter().any(|m| !seen_terms.contains(&m.term)),
        })
        .collect();
    pool.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    pool.dedup_by(|a, b| a.item_id == b.item_id);
    if n > pool.len() {
        return Err(DatasetError::PoolExhausted {
            requested: n,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisagreementPolicy {
    /// Conflicting 0/1 labels wait for the expert.
    ExpertQueue,
    /// Strict majority wins; ties go to the expert.
    Majority,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionPolicy {
    pub disagreement: DisagreementPolicy,
    /// Annotator whose 0/1 label overrides everyone else's.
    pub expert_id: Option<String>,
    /// Re-annotation rounds allowed before a still-unsure item is dropped.
    pub max_requeue_rounds: u32,
}

impl Default for ResolutionPolicy {
    fn default() -> Self {
        ResolutionPolicy {
            disagreement: DisagreementPolicy::ExpertQueue,
            expert_id: None,
            max_requeue_rounds: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedItem {
    pub item_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionOutcome {
    pub instances: Vec<LabeledInstance>,
    /// Items whose latest round contains an unsure label.
    pub requeue: Vec<String>,
    /// Items with conflicting labels awaiting the expert.
    pub expert_queue: Vec<String>,
    pub dropped: Vec<DroppedItem>,
}

impl ResolutionOutcome {
    /// The final dataset; fails while expert items are outstanding.
    pub fn export(&self) -> Result<&[LabeledInstance], DatasetError> {
        if self.expert_queue.is_empty() {
            Ok(&self.instances)
        } else {
            Err(DatasetError::UnresolvedExpertItem(self.expert_queue.len()))
        }
    }
}

enum ItemDecision {
    Label(BinaryLabel, Resolution),
    Requeue,
    Expert,
    Drop(String),
}

fn decide(records: &[&AnnotationRecord], policy: &ResolutionPolicy) -> ItemDecision {
    if records.iter().any(|r| r.label == AnnotationLabel::Excluded) {
        return ItemDecision::Drop("labelled excluded".into());
    }
    let is_expert = |r: &&&AnnotationRecord| policy.expert_id.as_deref() == Some(r.annotator_id.as_str());
    // records are sorted by round, so the last expert verdict is the latest one
    if let Some(label) = records
        .iter()
        .filter(is_expert)
        .filter_map(|r| r.label.binary())
        .next_back()
    {
        return ItemDecision::Label(label, Resolution::Expert);
    }
    let regular: Vec<&&AnnotationRecord> = records.iter().filter(|r| !is_expert(r)).collect();
    let Some(latest) = regular.iter().map(|r| r.round).max() else {
        return ItemDecision::Requeue;
    };
    let current: Vec<AnnotationLabel> = regular.iter().filter(|r| r.round == latest).map(|r| r.label).collect();
    if current.contains(&AnnotationLabel::Unsure) {
        return if latest < policy.max_requeue_rounds {
            ItemDecision::Requeue
        } else {
            ItemDecision::Drop(format!("still unsure after {latest} re-annotation round(s)"))
        };
    }
    let resolution = if latest > 0 {
        Resolution::Reannotated
    } else {
        Resolution::Direct
    };
    let biased = current.iter().filter(|l| **l == AnnotationLabel::Biased).count();
    let not_biased = current.len() - biased;
    if biased == 0 || not_biased == 0 {
        return ItemDecision::Label(BinaryLabel::from_bool(biased > 0), resolution);
    }
    match policy.disagreement {
        DisagreementPolicy::ExpertQueue => ItemDecision::Expert,
        DisagreementPolicy::Majority if biased != not_biased => {
            ItemDecision::Label(BinaryLabel::from_bool(biased > not_biased), resolution)
        }
        DisagreementPolicy::Majority => ItemDecision::Expert,
    }
}

/// Resolves annotation records into labelled instances.
///
/// Records are grouped per item and canonically sorted (round, annotator,
/// session), so the outcome does not depend on input order.
pub fn resolve_labels(
    candidates: &[CandidateItem],
    annotations: &[AnnotationRecord],
    policy: &ResolutionPolicy,
) -> Result<ResolutionOutcome, DatasetError> {
    let by_id: HashMap<&str, &CandidateItem> = candidates.iter().map(|c| (c.item_id.as_str(), c)).collect();
    let mut grouped: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in annotations {
        if !by_id.contains_key(r.item_id.as_str()) {
            return Err(DatasetError::UnknownItem(r.item_id.clone()));
        }
        grouped.entry(r.item_id.as_str()).or_default().push(r);
    }
    let mut outcome = ResolutionOutcome::default();
    for (item_id, mut records) in grouped {
        records.sort_by(|a, b| {
            (a.round, &a.annotator_id, &a.session_id, a.label, a.timestamp).cmp(&(
                b.round,
                &b.annotator_id,
                &b.session_id,
                b.label,
                b.timestamp,
            ))
        });
        match decide(&records, policy) {
            ItemDecision::Label(label, resolution) => {
                let c = by_id[item_id];
                outcome.instances.push(LabeledInstance {
                    item_id: c.item_id.clone(),
                    text: c.sentence.text.clone(),
                    context_before: c.sentence.context_before.clone(),
                    context_after: c.sentence.context_after.clone(),
                    matches: c.matches.clone(),
                    label,
                    resolution,
                });
            }
            ItemDecision::Requeue => outcome.requeue.push(item_id.to_string()),
            ItemDecision::Expert => outcome.expert_queue.push(item_id.to_string()),
            ItemDecision::Drop(reason) => {
                log::info!("dropping {item_id}: {reason}");
                outcome.dropped.push(DroppedItem {
                    item_id: item_id.to_string(),
                    reason,
                });
            }
        }
    }
    Ok(outcome)
}

/// Suggests `Biased` when any match is a prohibited term. Advisory only.
pub fn prohibited_rule_suggest(matches: &[TermMatch]) -> Option<BinaryLabel> {
    matches
        .iter()
        .any(|m| m.term_class == TermClass::Prohibited)
        .then_some(BinaryLabel::Biased)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub total: usize,
    pub biased: usize,
    pub not_biased: usize,
    pub biased_fraction: f64,
    pub distinct_terms: usize,
    pub lexicon_terms: usize,
    pub max_term_count: usize,
    pub min_term_count: usize,
    pub per_term: BTreeMap<String, usize>,
    pub per_category: BTreeMap<Category, usize>,
}

/// Counts every match, so a sentence with k matches feeds k term counters.
pub fn dataset_stats(instances: &[LabeledInstance], lexicon: &Lexicon) -> StatsReport {
    let mut report = StatsReport {
        total: instances.len(),
        lexicon_terms: lexicon.len(),
        ..Default::default()
    };
    for inst in instances {
        if inst.label.is_biased() {
            report.biased += 1;
        }
        for m in &inst.matches {
            *report.per_term.entry(m.term.clone()).or_default() += 1;
            *report.per_category.entry(m.category).or_default() += 1;
        }
    }
    report.not_biased = report.total - report.biased;
    report.biased_fraction = if report.total == 0 {
        0.0
    } else {
        report.biased as f64 / report.total as f64
    };
    report.distinct_terms = report.per_term.len();
    report.max_term_count = report.per_term.values().copied().max().unwrap_or(0);
    report.min_term_count = report.per_term.values().copied().min().unwrap_or(0);
    report
}

impl StatsReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28}{:>8}", "instances", self.total);
        let _ = writeln!(
            out,
            "{:<28}{:>8} ({:.1}%)",
            "biased",
            self.biased,
            100.0 * self.biased_fraction
        );
        let _ = writeln!(out, "{:<28}{:>8}", "not biased", self.not_biased);
        let _ = writeln!(
            out,
            "{:<28}{:>8} of {}",
            "distinct terms present", self.distinct_terms, self.lexicon_terms
        );
        let _ = writeln!(out, "{:<28}{:>8}", "max term count", self.max_term_count);
        let _ = writeln!(out, "{:<28}{:>8}", "min term count", self.min_term_count);
        let _ = writeln!(out, "\n{:<28}{:>8}", "category", "count");
        for (cat, n) in &self.per_category {
            let _ = writeln!(out, "{:<28}{:>8}", cat.as_str(), n);
        }
        let _ = writeln!(out, "\n{:<28}{:>8}", "term", "count");
        let mut terms: Vec<_> = self.per_term.iter().collect();
        terms.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        for (term, n) in terms {
            let _ = writeln!(out, "{term:<28}{n:>8}");
        }
        out
    }
}

/// Writes the interoperable `item_id,text,label` CSV.
pub fn write_csv<W: Write>(writer: W, instances: &[LabeledInstance]) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["item_id", "text", "label"])
        .map_err(|e| DatasetError::Csv(e.to_string()))?;
    for inst in instances {
        w.write_record([
            inst.item_id.as_str(),
            inst.text.as_str(),
            &(inst.label as u8).to_string(),
        ])
        .map_err(|e| DatasetError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| DatasetError::Csv(e.to_string()))
}

/// Loads a labelled CSV with at least `text` and `label` columns (an
/// `item_id` column is optional) and recomputes matches with `lexicon`.
pub fn read_csv<R: Read>(reader: R, lexicon: &Lexicon) -> Result<Vec<LabeledInstance>, DatasetError> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers().map_err(|e| DatasetError::Csv(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let text_col = col("text").ok_or_else(|| DatasetError::Csv("missing 'text' column".into()))?;
    let label_col = col("label").ok_or_else(|| DatasetError::Csv("missing 'label' column".into()))?;
    let id_col = col("item_id");
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| DatasetError::Csv(e.to_string()))?;
        let text = crate::corpus::normalize_text(rec.get(text_col).unwrap_or_default());
        let raw_label = rec.get(label_col).unwrap_or_default().trim();
        let label = raw_label
            .parse::<f64>()
            .map_err(|_| DatasetError::Csv(format!("row {}: bad label '{raw_label}'", i + 1)))?;
        let label = BinaryLabel::try_from(label as i64)?;
        let item_id = id_col
            .and_then(|c| rec.get(c))
            .map(str::to_string)
            .unwrap_or_else(|| format!("row-{i:06}"));
        out.push(LabeledInstance {
            item_id,
            matches: lexicon.match_terms(&text),
            text,
            context_before: String::new(),
            context_after: String::new(),
            label,
            resolution: Resolution::Direct,
        });
    }
    Ok(out)
}
