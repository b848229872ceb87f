//! Classifier abstraction: the rule baseline, prompt rendering for
//! generative models, and the adapter wire protocol.

mod adapter;
mod chat;
pub mod mock;
mod prompt;

use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{BinaryLabel, CandidateItem, LabeledInstance};
use crate::lexicon::{Lexicon, TermClass, TermMatch};

pub use adapter::{AdapterRequest, AdapterResponse, RemoteAdapter, SubprocessAdapter};
pub use chat::{ChatCompletionClient, ChatConfig};
pub use prompt::{
    parse_generative_response, render_prompt, ParsedResponse, PromptTemplate, DUTCH_PROMPT, ENGLISH_PROMPT, PLACEHOLDER,
};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("adapter unavailable: {0}")]
    AdapterUnavailable(String),
    #[error("inference failed for '{id}': {message}")]
    InferenceError { id: String, message: String },
    #[error("prompt template has no [item] placeholder")]
    MissingPlaceholder,
    #[error("invalid prompt template: {0}")]
    InvalidTemplate(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl ClassifierError {
    pub fn kind(&self) -> &'static str {
        match self {
            ClassifierError::AdapterUnavailable(_) => "AdapterUnavailable",
            ClassifierError::InferenceError { .. } => "InferenceError",
            ClassifierError::MissingPlaceholder => "MissingPlaceholder",
            ClassifierError::InvalidTemplate(_) => "InvalidTemplate",
            ClassifierError::Protocol(_) => "Protocol",
        }
    }
}

/// Result of scoring one request.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreOutcome {
    /// Probability of Biased.
    Score(f64),
    /// Generative output outside the 0/1 grammar.
    Abstain,
    Error(String),
}

/// Anything that scores texts. Implementations must return one outcome per
/// request, in request order.
pub trait Classifier: Send + Sync {
    fn model_id(&self) -> &str;

    /// `Err` means the whole batch could not be attempted.
    fn score_batch(&self, requests: &[AdapterRequest]) -> Result<Vec<ScoreOutcome>, ClassifierError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub item_id: String,
    pub label: BinaryLabel,
    pub score: f64,
    pub model_id: String,
    pub latency_ms: u64,
    /// Unparseable generative response; label is NotBiased and score 0.
    #[serde(default)]
    pub abstained: bool,
}

impl Prediction {
    pub fn from_score(item_id: &str, score: f64, threshold: f64, model_id: &str, latency_ms: u64) -> Self {
        Prediction {
            item_id: item_id.to_string(),
            label: BinaryLabel::from_bool(score >= threshold),
            score,
            model_id: model_id.to_string(),
            latency_ms,
            abstained: false,
        }
    }

    pub fn abstain(item_id: &str, model_id: &str, latency_ms: u64) -> Self {
        Prediction {
            item_id: item_id.to_string(),
            label: BinaryLabel::NotBiased,
            score: 0.0,
            model_id: model_id.to_string(),
            latency_ms,
            abstained: true,
        }
    }
}

impl From<&LabeledInstance> for AdapterRequest {
    fn from(i: &LabeledInstance) -> Self {
        AdapterRequest {
            id: i.item_id.clone(),
            text: i.text.clone(),
            context_before: i.context_before.clone(),
            context_after: i.context_after.clone(),
        }
    }
}

impl From<&CandidateItem> for AdapterRequest {
    fn from(c: &CandidateItem) -> Self {
        AdapterRequest {
            id: c.item_id.clone(),
            text: c.sentence.text.clone(),
            context_before: c.sentence.context_before.clone(),
            context_after: c.sentence.context_after.clone(),
        }
    }
}

/// Biased iff any match is a prohibited term.
pub fn rule_baseline_label(matches: &[TermMatch]) -> BinaryLabel {
    BinaryLabel::from_bool(matches.iter().any(|m| m.term_class == TermClass::Prohibited))
}

pub const RULE_MODEL_ID: &str = "rule-prohibited";

pub fn rule_baseline_classify(item: &LabeledInstance) -> Prediction {
    let label = rule_baseline_label(&item.matches);
    let score = if label.is_biased() { 1.0 } else { 0.0 };
    Prediction::from_score(&item.item_id, score, DEFAULT_THRESHOLD, RULE_MODEL_ID, 0)
}

/// Rule baseline that re-matches arbitrary text, for batch use and
/// explanation.
#[derive(Debug, Clone)]
pub struct RuleBaseline {
    lexicon: Lexicon,
}

impl RuleBaseline {
    pub fn new(lexicon: Lexicon) -> Self {
        RuleBaseline { lexicon }
    }

    pub fn score(&self, text: &str) -> f64 {
        if rule_baseline_label(&self.lexicon.match_terms(text)).is_biased() {
            1.0
        } else {
            0.0
        }
    }
}

impl Classifier for RuleBaseline {
    fn model_id(&self) -> &str {
        RULE_MODEL_ID
    }

    fn score_batch(&self, requests: &[AdapterRequest]) -> Result<Vec<ScoreOutcome>, ClassifierError> {
        Ok(requests
            .iter()
            .map(|r| ScoreOutcome::Score(self.score(&r.text)))
            .collect())
    }
}

/// Wraps a closure as a native classifier.
pub struct FnClassifier<F> {
    model_id: String,
    f: F,
}

impl<F: Fn(&str) -> f64 + Send + Sync> FnClassifier<F> {
    pub fn new(model_id: impl Into<String>, f: F) -> Self {
        FnClassifier {
            model_id: model_id.into(),
            f,
        }
    }
}

impl<F: Fn(&str) -> f64 + Send + Sync> Classifier for FnClassifier<F> {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score_batch(&self, requests: &[AdapterRequest]) -> Result<Vec<ScoreOutcome>, ClassifierError> {
        Ok(requests
            .iter()
            .map(|r| ScoreOutcome::Score((self.f)(&r.text)))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchOptions {
    pub threshold: f64,
    /// Requests per adapter call.
    pub chunk_size: usize,
    /// Adapter calls in flight at once.
    pub max_in_flight: usize,
    /// Extra attempts for failed items or chunks.
    pub retries: u32,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            threshold: DEFAULT_THRESHOLD,
            chunk_size: 32,
            max_in_flight: 4,
            retries: 2,
        }
    }
}

/// Scores every request; outcomes are in request order.
///
/// Items that error are retried individually; a chunk whose adapter call
/// fails outright is retried as a whole. `AdapterUnavailable` is returned only
/// when no chunk could be scored at all.
pub fn score_all(
    classifier: &dyn Classifier,
    requests: &[AdapterRequest],
    options: &BatchOptions,
) -> Result<Vec<(ScoreOutcome, u64)>, ClassifierError> {
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    let chunk_size = options.chunk_size.max(1);
    let chunks: Vec<(usize, &[AdapterRequest])> = requests
        .chunks(chunk_size)
        .enumerate()
        .map(|(i, c)| (i * chunk_size, c))
        .collect();
    let workers = options.max_in_flight.max(1).min(chunks.len());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let chunks = &chunks;
            let next = &next;
            s.spawn(move || loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(&(offset, chunk)) = chunks.get(i) else { break };
                let _ = tx.send((offset, score_chunk(classifier, chunk, options.retries)));
            });
        }
    });
    drop(tx);
    let mut out: Vec<Option<(ScoreOutcome, u64)>> = vec![None; requests.len()];
    let mut last_err = None;
    let mut any_ok = false;
    for (offset, result) in rx {
        match result {
            Ok(outcomes) => {
                any_ok = true;
                for (j, o) in outcomes.into_iter().enumerate() {
                    out[offset + j] = Some(o);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    if !any_ok {
        return Err(last_err.unwrap_or_else(|| ClassifierError::AdapterUnavailable("no result".into())));
    }
    let message = last_err.map(|e| e.to_string()).unwrap_or_default();
    Ok(out
        .into_iter()
        .map(|o| o.unwrap_or_else(|| (ScoreOutcome::Error(message.clone()), 0)))
        .collect())
}

fn score_chunk(
    classifier: &dyn Classifier,
    chunk: &[AdapterRequest],
    retries: u32,
) -> Result<Vec<(ScoreOutcome, u64)>, ClassifierError> {
    let mut attempt = 0;
    let mut results: Vec<Option<(ScoreOutcome, u64)>> = vec![None; chunk.len()];
    let mut pending: Vec<usize> = (0..chunk.len()).collect();
    loop {
        let batch: Vec<AdapterRequest> = pending.iter().map(|&i| chunk[i].clone()).collect();
        let started = Instant::now();
        match classifier.score_batch(&batch) {
            Ok(outcomes) if outcomes.len() == batch.len() => {
                let per_item = (started.elapsed().as_millis() as u64) / batch.len().max(1) as u64;
                let mut still = Vec::new();
                for (&i, o) in pending.iter().zip(outcomes) {
                    if matches!(o, ScoreOutcome::Error(_)) && attempt < retries {
                        still.push(i);
                    }
                    results[i] = Some((o, per_item));
                }
                pending = still;
            }
            Ok(outcomes) => {
                let e = ClassifierError::Protocol(format!("{} outcomes for {} requests", outcomes.len(), batch.len()));
                if attempt >= retries {
                    return Err(e);
                }
            }
            Err(e) => {
                log::warn!("{}: attempt {} failed: {e}", classifier.model_id(), attempt + 1);
                if attempt >= retries {
                    if results.iter().any(Option::is_some) {
                        break;
                    }
                    return Err(e);
                }
            }
        }
        if pending.is_empty() {
            break;
        }
        attempt += 1;
        if attempt > retries {
            break;
        }
    }
    Ok(results
        .into_iter()
        .map(|r| r.unwrap_or_else(|| (ScoreOutcome::Error("no response".into()), 0)))
        .collect())
}

/// One prediction or per-item error for every item, in input order.
pub fn classify_batch(
    classifier: &dyn Classifier,
    items: &[AdapterRequest],
    options: &BatchOptions,
) -> Result<Vec<Result<Prediction, ClassifierError>>, ClassifierError> {
    let model = classifier.model_id().to_string();
    let scored = score_all(classifier, items, options)?;
    Ok(items
        .iter()
        .zip(scored)
        .map(|(req, (outcome, ms))| match outcome {
            ScoreOutcome::Score(s) if (0.0..=1.0).contains(&s) => {
                Ok(Prediction::from_score(&req.id, s, options.threshold, &model, ms))
            }
            ScoreOutcome::Score(s) => Err(ClassifierError::InferenceError {
                id: req.id.clone(),
                message: format!("score {s} outside [0, 1]"),
            }),
            ScoreOutcome::Abstain => Ok(Prediction::abstain(&req.id, &model, ms)),
            ScoreOutcome::Error(message) => Err(ClassifierError::InferenceError {
                id: req.id.clone(),
                message,
            }),
        })
        .collect())
}
