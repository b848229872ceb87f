//! Scoring predictions against gold labels and rendering comparison tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::Prediction;
use crate::dataset::{BinaryLabel, LabeledInstance};
use crate::lexicon::Lexicon;
use crate::splits::{Regime, ResampleStrategy};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("predictions and gold are misaligned: {missing} missing, {extra} extra, {duplicate} duplicate ids (e.g. '{example}')")]
    Misaligned {
        missing: usize,
        extra: usize,
        duplicate: usize,
        example: String,
    },
    #[error("nothing to score")]
    Empty,
}

impl EvalError {
    pub fn kind(&self) -> &'static str {
        match self {
            EvalError::Misaligned { .. } => "Misaligned",
            EvalError::Empty => "Empty",
        }
    }
}

/// Biased is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, predicted: BinaryLabel, gold: BinaryLabel) {
        match (predicted, gold) {
            (BinaryLabel::Biased, BinaryLabel::Biased) => self.tp += 1,
            (BinaryLabel::Biased, BinaryLabel::NotBiased) => self.fp += 1,
            (BinaryLabel::NotBiased, BinaryLabel::Biased) => self.fn_ += 1,
            (BinaryLabel::NotBiased, BinaryLabel::NotBiased) => self.tn += 1,
        }
    }

    pub fn merge(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstainPolicy {
    /// Score abstentions as NotBiased.
    #[default]
    AsNotBiased,
    /// Leave abstained items out of every metric.
    Drop,
}

/// Joins predictions to gold by item id; pairs come back in gold order.
fn align<'a>(
    preds: &'a [Prediction],
    gold: &'a [LabeledInstance],
) -> Result<Vec<(&'a Prediction, &'a LabeledInstance)>, EvalError> {
    let mut by_id: HashMap<&str, &Prediction> = HashMap::with_capacity(preds.len());
    let mut duplicate = 0;
    let mut example = String::new();
    for p in preds {
        if by_id.insert(p.item_id.as_str(), p).is_some() {
            duplicate += 1;
            example.clone_from(&p.item_id);
        }
    }
    let mut seen_gold = BTreeSet::new();
    let mut pairs = Vec::with_capacity(gold.len());
    let mut missing = 0;
    for g in gold {
        if !seen_gold.insert(g.item_id.as_str()) {
            duplicate += 1;
            example.clone_from(&g.item_id);
            continue;
        }
        match by_id.get(g.item_id.as_str()) {
            Some(p) => pairs.push((*p, g)),
            None => {
                missing += 1;
                example.clone_from(&g.item_id);
            }
        }
    }
    let extra = by_id.keys().filter(|id| !seen_gold.contains(*id)).count();
    if extra > 0 && example.is_empty() {
        example = by_id
            .keys()
            .find(|id| !seen_gold.contains(*id))
            .map(|s| s.to_string())
            .unwrap_or_default();
    }
    if missing + extra + duplicate > 0 {
        return Err(EvalError::Misaligned {
            missing,
            extra,
            duplicate,
            example,
        });
    }
    Ok(pairs)
}

pub fn confusion(preds: &[Prediction], gold: &[LabeledInstance]) -> Result<ConfusionMatrix, EvalError> {
    Ok(confusion_with(preds, gold, AbstainPolicy::AsNotBiased)?.0)
}

/// Confusion under an abstain policy, plus the abstain count.
pub fn confusion_with(
    preds: &[Prediction],
    gold: &[LabeledInstance],
    policy: AbstainPolicy,
) -> Result<(ConfusionMatrix, usize), EvalError> {
    let mut cm = ConfusionMatrix::default();
    let mut abstained = 0;
    for (p, g) in align(preds, gold)? {
        if p.abstained {
            abstained += 1;
            if policy == AbstainPolicy::Drop {
                continue;
            }
        }
        cm.add(p.label, g.label);
    }
    Ok((cm, abstained))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub f1_positive: f64,
    pub f1_negative: f64,
    pub f1_macro: f64,
    pub f1_micro: f64,
    pub accuracy: f64,
    /// No gold Biased items.
    pub zero_support_positive: bool,
    /// No gold NotBiased items.
    pub zero_support_negative: bool,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Zero denominators yield 0.
pub fn f1_scores(cm: &ConfusionMatrix) -> F1Scores {
    let f1_positive = ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_);
    let f1_negative = ratio(2 * cm.tn, 2 * cm.tn + cm.fn_ + cm.fp);
    // pooled over both classes: every error is one FP for one class and one FN for the other
    let pooled_tp = cm.tp + cm.tn;
    let pooled_err = cm.fp + cm.fn_;
    F1Scores {
        f1_positive,
        f1_negative,
        f1_macro: (f1_positive + f1_negative) / 2.0,
        f1_micro: ratio(2 * pooled_tp, 2 * pooled_tp + 2 * pooled_err),
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        zero_support_positive: cm.tp + cm.fn_ == 0,
        zero_support_negative: cm.tn + cm.fp == 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermAccuracy {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Accuracy per matched term. A sentence counts once for every distinct
/// term it matches; terms never matched are omitted.
pub fn per_term_accuracy(
    preds: &[Prediction],
    gold: &[LabeledInstance],
    lexicon: &Lexicon,
) -> Result<BTreeMap<String, TermAccuracy>, EvalError> {
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (p, g) in align(preds, gold)? {
        let terms: BTreeSet<String> = lexicon.match_terms(&g.text).into_iter().map(|m| m.term).collect();
        for t in terms {
            let e = tally.entry(t).or_default();
            e.0 += 1;
            e.1 += usize::from(p.label == g.label);
        }
    }
    Ok(tally
        .into_iter()
        .map(|(t, (n, correct))| {
            (
                t,
                TermAccuracy {
                    n,
                    correct,
                    accuracy: correct as f64 / n as f64,
                },
            )
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: u32,
    pub model_id: String,
    pub regime: Regime,
    pub strategy: ResampleStrategy,
    pub confusion: ConfusionMatrix,
    pub f1_positive: f64,
    pub f1_negative: f64,
    pub f1_macro: f64,
    pub f1_micro: f64,
    pub accuracy: f64,
    pub zero_support_positive: bool,
    pub zero_support_negative: bool,
    pub per_term: BTreeMap<String, TermAccuracy>,
    pub abstain_count: usize,
    pub abstain_policy: AbstainPolicy,
    pub n_scored: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub model_id: String,
    pub regime: Regime,
    pub strategy: ResampleStrategy,
    pub predictions: Vec<Prediction>,
    pub gold: Vec<LabeledInstance>,
}

pub fn evaluate(run: &EvalRun, lexicon: &Lexicon, policy: AbstainPolicy) -> Result<EvalReport, EvalError> {
    let (cm, abstain_count) = confusion_with(&run.predictions, &run.gold, policy)?;
    if cm.total() == 0 {
        return Err(EvalError::Empty);
    }
    let f1 = f1_scores(&cm);
    let scored: Vec<Prediction> = match policy {
        AbstainPolicy::Drop => run.predictions.iter().filter(|p| !p.abstained).cloned().collect(),
        AbstainPolicy::AsNotBiased => run.predictions.clone(),
    };
    let kept: BTreeSet<&str> = scored.iter().map(|p| p.item_id.as_str()).collect();
    let gold: Vec<LabeledInstance> = run
        .gold
        .iter()
        .filter(|g| kept.contains(g.item_id.as_str()))
        .cloned()
        .collect();
    Ok(EvalReport {
        schema: REPORT_SCHEMA,
        model_id: run.model_id.clone(),
        regime: run.regime,
        strategy: run.strategy,
        confusion: cm,
        f1_positive: f1.f1_positive,
        f1_negative: f1.f1_negative,
        f1_macro: f1.f1_macro,
        f1_micro: f1.f1_micro,
        accuracy: f1.accuracy,
        zero_support_positive: f1.zero_support_positive,
        zero_support_negative: f1.zero_support_negative,
        per_term: per_term_accuracy(&scored, &gold, lexicon)?,
        abstain_count,
        abstain_policy: policy,
        n_scored: cm.total(),
    })
}

/// A grid of f1_positive values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::InDomain => "in_domain",
        Regime::OutOfDomain => "out_of_domain",
    }
}

fn strategy_name(s: ResampleStrategy) -> &'static str {
    match s {
        ResampleStrategy::None => "none",
        ResampleStrategy::Undersample => "undersample",
        ResampleStrategy::Oversample => "oversample",
        ResampleStrategy::Balanced => "balanced",
    }
}

impl ComparisonTable {
    /// Cells hold the best f1_positive seen for (row, regime).
    fn build(header: &str, reports: &[EvalReport], row_key: impl Fn(&EvalReport) -> String) -> Self {
        let columns: Vec<String> = [Regime::InDomain, Regime::OutOfDomain]
            .into_iter()
            .filter(|r| reports.iter().any(|x| x.regime == *r))
            .map(|r| regime_name(r).to_string())
            .collect();
        let mut cells: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for r in reports {
            let slot = cells
                .entry(row_key(r))
                .or_default()
                .entry(regime_name(r.regime).to_string())
                .or_insert(f64::NEG_INFINITY);
            *slot = slot.max(r.f1_positive);
        }
        let rows = cells
            .into_iter()
            .map(|(k, m)| (k, columns.iter().map(|c| m.get(c).copied()).collect()))
            .collect();
        ComparisonTable {
            row_header: header.to_string(),
            columns,
            rows,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.row_header.clone();
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (k, vals) in &self.rows {
            out.push_str(&csv_field(k));
            for v in vals {
                out.push(',');
                if let Some(v) = v {
                    let _ = write!(out, "{v:.4}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let first = self
            .rows
            .iter()
            .map(|(k, _)| k.chars().count())
            .chain([self.row_header.chars().count()])
            .max()
            .unwrap_or(0);
        let widths: Vec<usize> = self.columns.iter().map(|c| c.len().max(6)).collect();
        let mut out = format!("{:<first$}", self.row_header);
        for (c, w) in self.columns.iter().zip(&widths) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
        for (k, vals) in &self.rows {
            let _ = write!(out, "{k:<first$}");
            for (v, w) in vals.iter().zip(&widths) {
                match v {
                    Some(v) => {
                        let _ = write!(out, "  {v:>w$.3}");
                    }
                    None => {
                        let _ = write!(out, "  {:>w$}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub model_id: String,
    pub regime: Regime,
    pub strategy: ResampleStrategy,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema: u32,
    pub reports: Vec<EvalReport>,
    pub failures: Vec<RunFailure>,
    pub models_by_regime: ComparisonTable,
    pub strategies_by_regime: ComparisonTable,
}

impl ReportBundle {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Evaluates every run; failures are collected rather than aborting.
pub fn build_report(runs: &[EvalRun], lexicon: &Lexicon, policy: AbstainPolicy) -> ReportBundle {
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for run in runs {
        match evaluate(run, lexicon, policy) {
            Ok(r) => reports.push(r),
            Err(e) => failures.push(RunFailure {
                model_id: run.model_id.clone(),
                regime: run.regime,
                strategy: run.strategy,
                error: e.to_string(),
            }),
        }
    }
    ReportBundle {
        schema: REPORT_SCHEMA,
        models_by_regime: ComparisonTable::build("model", &reports, |r| r.model_id.clone()),
        strategies_by_regime: ComparisonTable::build("strategy", &reports, |r| strategy_name(r.strategy).to_string()),
        reports,
        failures,
    }
}
