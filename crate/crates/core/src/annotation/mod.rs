//! Multi-annotator labelling sessions with agreement measurement.
//!
//! [`Session`] holds the pure assignment/labelling state machine;
//! [`AnnotationService`] persists it through an append-only event log and
//! serializes writers; [`http`] exposes the service over HTTP.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AnnotationLabel, AnnotationRecord, CandidateItem};

pub mod http;
pub mod kappa;
mod store;

pub use kappa::{fleiss_kappa, AgreementReport, KappaError};
pub use store::AnnotationService;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("session needs at least one annotator")]
    NoAnnotators,
    #[error("overlap fraction {0} outside [0, 1]")]
    InvalidOverlap(f64),
    #[error("unknown session '{0}'")]
    UnknownSession(String),
    #[error("session '{0}' already exists")]
    DuplicateSession(String),
    #[error("unknown annotator '{0}'")]
    UnknownAnnotator(String),
    #[error("unknown item '{0}'")]
    UnknownItem(String),
    #[error("item '{item}' is not assigned to '{annotator}'")]
    NotAssigned { item: String, annotator: String },
    #[error("item '{item}' already labelled by '{annotator}'")]
    AlreadyLabeled { item: String, annotator: String },
    #[error("invalid label {0}; expected 0, 1, 2 or 3")]
    InvalidLabel(i64),
    #[error(transparent)]
    Kappa(#[from] KappaError),
    #[error("no overlap items are fully labelled yet")]
    NoAgreementData,
    #[error("storage: {0}")]
    Storage(String),
}

impl AnnotationError {
    pub fn kind(&self) -> &'static str {
        match self {
            AnnotationError::EmptyBatch => "EmptyBatch",
            AnnotationError::NoAnnotators => "NoAnnotators",
            AnnotationError::InvalidOverlap(_) => "InvalidOverlap",
            AnnotationError::UnknownSession(_) => "UnknownSession",
            AnnotationError::DuplicateSession(_) => "DuplicateSession",
            AnnotationError::UnknownAnnotator(_) => "UnknownAnnotator",
            AnnotationError::UnknownItem(_) => "UnknownItem",
            AnnotationError::NotAssigned { .. } => "NotAssigned",
            AnnotationError::AlreadyLabeled { .. } => "AlreadyLabeled",
            AnnotationError::InvalidLabel(_) => "InvalidLabel",
            AnnotationError::Kappa(KappaError::DegenerateAgreement) => "DegenerateAgreement",
            AnnotationError::Kappa(KappaError::RowSumMismatch { .. }) => "RowSumMismatch",
            AnnotationError::Kappa(_) => "Kappa",
            AnnotationError::NoAgreementData => "NoAgreementData",
            AnnotationError::Storage(_) => "Storage",
        }
    }
}

/// How many batch items go to the full agreement panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overlap {
    Fraction(f64),
    Count(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub session_id: String,
    pub annotators: Vec<String>,
    pub overlap: Overlap,
    pub seed: u64,
    /// Annotation round recorded on every label (0 = first pass).
    #[serde(default)]
    pub round: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemStatus {
    Pending,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub round: u32,
    pub batch: Vec<CandidateItem>,
    pub annotators: Vec<String>,
    /// item_id → annotators, in panel order.
    pub assignment: BTreeMap<String, Vec<String>>,
    /// Items assigned to every annotator.
    pub overlap_items: Vec<String>,
    /// item_id → annotator → status.
    pub status: BTreeMap<String, BTreeMap<String, ItemStatus>>,
    pub records: Vec<AnnotationRecord>,
}

/// Assigns a seeded random subset to every annotator and round-robins the rest.
pub fn open_session(batch: Vec<CandidateItem>, spec: &SessionSpec) -> Result<Session, AnnotationError> {
    if batch.is_empty() {
        return Err(AnnotationError::EmptyBatch);
    }
    if spec.annotators.is_empty() {
        return Err(AnnotationError::NoAnnotators);
    }
    let n = batch.len();
    let k = match spec.overlap {
        Overlap::Fraction(f) if (0.0..=1.0).contains(&f) => ((f * n as f64) + 0.5).floor() as usize,
        Overlap::Fraction(f) => return Err(AnnotationError::InvalidOverlap(f)),
        Overlap::Count(c) => c.min(n),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut in_overlap = vec![false; n];
    for i in sample(&mut rng, n, k) {
        in_overlap[i] = true;
    }
    let mut annotators = spec.annotators.clone();
    annotators.dedup();

    let mut assignment = BTreeMap::new();
    let mut status = BTreeMap::new();
    let mut overlap_items = Vec::new();
    let mut next_single = 0usize;
    for (i, item) in batch.iter().enumerate() {
        let assignees: Vec<String> = if in_overlap[i] {
            overlap_items.push(item.item_id.clone());
            annotators.clone()
        } else {
            let a = annotators[next_single % annotators.len()].clone();
            next_single += 1;
            vec![a]
        };
        status.insert(
            item.item_id.clone(),
            assignees.iter().map(|a| (a.clone(), ItemStatus::Pending)).collect(),
        );
        assignment.insert(item.item_id.clone(), assignees);
    }
    Ok(Session {
        session_id: spec.session_id.clone(),
        round: spec.round,
        batch,
        annotators,
        assignment,
        overlap_items,
        status,
        records: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AgreementMode {
    /// All four labels are categories.
    #[default]
    FourWay,
    /// Items carrying any 2/3 label are excluded; κ over {0, 1}.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorProgress {
    pub assigned: usize,
    pub done: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub session_id: String,
    pub items: usize,
    pub assignments: usize,
    pub done: usize,
    pub overlap_items: usize,
    pub overlap_complete: usize,
    pub per_annotator: BTreeMap<String, AnnotatorProgress>,
    /// Submitted labels by code ("0".."3").
    pub label_counts: BTreeMap<String, usize>,
}

impl Session {
    fn check_annotator(&self, annotator: &str) -> Result<(), AnnotationError> {
        if self.annotators.iter().any(|a| a == annotator) {
            Ok(())
        } else {
            Err(AnnotationError::UnknownAnnotator(annotator.to_string()))
        }
    }

    pub fn item(&self, item_id: &str) -> Option<&CandidateItem> {
        self.batch.iter().find(|c| c.item_id == item_id)
    }

    /// Lowest-index pending item for the annotator; `None` when done.
    pub fn next_item(&self, annotator: &str) -> Result<Option<&CandidateItem>, AnnotationError> {
        self.check_annotator(annotator)?;
        Ok(self.batch.iter().find(|c| {
            self.status
                .get(&c.item_id)
                .and_then(|m| m.get(annotator))
                .is_some_and(|s| *s == ItemStatus::Pending)
        }))
    }

    /// Validates a submission without mutating state.
    pub fn check_submission(
        &self,
        annotator: &str,
        item_id: &str,
        label: i64,
    ) -> Result<AnnotationLabel, AnnotationError> {
        self.check_annotator(annotator)?;
        let label = AnnotationLabel::try_from(label).map_err(|_| AnnotationError::InvalidLabel(label))?;
        let per_item = self
            .status
            .get(item_id)
            .ok_or_else(|| AnnotationError::UnknownItem(item_id.to_string()))?;
        match per_item.get(annotator) {
            None => Err(AnnotationError::NotAssigned {
                item: item_id.to_string(),
                annotator: annotator.to_string(),
            }),
            Some(ItemStatus::Done) => Err(AnnotationError::AlreadyLabeled {
                item: item_id.to_string(),
                annotator: annotator.to_string(),
            }),
            Some(ItemStatus::Pending) => Ok(label),
        }
    }

    /// Applies an already validated record.
    pub(crate) fn apply(&mut self, record: AnnotationRecord) {
        if let Some(s) = self
            .status
            .get_mut(&record.item_id)
            .and_then(|m| m.get_mut(&record.annotator_id))
        {
            *s = ItemStatus::Done;
        }
        self.records.push(record);
    }

    /// Validates and applies a label in memory.
    pub fn submit_label(
        &mut self,
        annotator: &str,
        item_id: &str,
        label: i64,
        timestamp: DateTime<Utc>,
    ) -> Result<AnnotationRecord, AnnotationError> {
        let label = self.check_submission(annotator, item_id, label)?;
        let record = AnnotationRecord {
            item_id: item_id.to_string(),
            annotator_id: annotator.to_string(),
            session_id: self.session_id.clone(),
            round: self.round,
            label,
            timestamp,
        };
        self.apply(record.clone());
        Ok(record)
    }

    pub fn records_by_annotator(&self, annotator: &str) -> Vec<&AnnotationRecord> {
        self.records.iter().filter(|r| r.annotator_id == annotator).collect()
    }

    pub fn records_for_item(&self, item_id: &str) -> Vec<&AnnotationRecord> {
        self.records.iter().filter(|r| r.item_id == item_id).collect()
    }

    pub fn progress(&self) -> Progress {
        let mut per_annotator: BTreeMap<String, AnnotatorProgress> = self
            .annotators
            .iter()
            .map(|a| (a.clone(), AnnotatorProgress { assigned: 0, done: 0 }))
            .collect();
        let mut assignments = 0;
        let mut done = 0;
        for per_item in self.status.values() {
            for (a, s) in per_item {
                assignments += 1;
                let p = per_annotator.get_mut(a).expect("assigned annotator is in panel");
                p.assigned += 1;
                if *s == ItemStatus::Done {
                    done += 1;
                    p.done += 1;
                }
            }
        }
        let mut label_counts: BTreeMap<String, usize> = (0..4).map(|l: u8| (l.to_string(), 0)).collect();
        for r in &self.records {
            *label_counts.entry(u8::from(r.label).to_string()).or_default() += 1;
        }
        Progress {
            session_id: self.session_id.clone(),
            items: self.batch.len(),
            assignments,
            done,
            overlap_items: self.overlap_items.len(),
            overlap_complete: self.complete_overlap_items().len(),
            per_annotator,
            label_counts,
        }
    }

    fn complete_overlap_items(&self) -> Vec<&str> {
        self.overlap_items
            .iter()
            .filter(|id| self.status[*id].values().all(|s| *s == ItemStatus::Done))
            .map(String::as_str)
            .collect()
    }

    /// Fleiss' kappa over fully labelled overlap items.
    pub fn agreement(&self, mode: AgreementMode) -> Result<AgreementReport, AnnotationError> {
        let n_raters = self.annotators.len();
        let categories = match mode {
            AgreementMode::FourWay => 4,
            AgreementMode::Binary => 2,
        };
        let mut matrix = Vec::new();
        for item in self.complete_overlap_items() {
            let mut row = vec![0usize; categories];
            let mut keep = true;
            for r in self.records.iter().filter(|r| r.item_id == item) {
                let code = u8::from(r.label) as usize;
                if code >= categories {
                    keep = false;
                } else {
                    row[code] += 1;
                }
            }
            if keep {
                matrix.push(row);
            }
        }
        if matrix.is_empty() {
            return Err(AnnotationError::NoAgreementData);
        }
        let mut report = fleiss_kappa(&matrix, n_raters)?;
        report.interpretation = Some(format!(
            "{} overlap items x {} raters = {} annotations ({})",
            report.n_items,
            n_raters,
            report.n_items * n_raters,
            match mode {
                AgreementMode::FourWay => "labels 0/1/2/3",
                AgreementMode::Binary => "labels 0/1, items with 2/3 excluded",
            }
        ));
        Ok(report)
    }
}

/// Fleiss' kappa from exported records of one round.
///
/// The panel size is the largest number of distinct annotators on any item;
/// only items labelled by a full panel contribute.
pub fn agreement_from_records(
    records: &[AnnotationRecord],
    mode: AgreementMode,
) -> Result<AgreementReport, AnnotationError> {
    let categories = match mode {
        AgreementMode::FourWay => 4,
        AgreementMode::Binary => 2,
    };
    let mut per_item: BTreeMap<&str, BTreeMap<&str, AnnotationLabel>> = BTreeMap::new();
    for r in records {
        per_item
            .entry(r.item_id.as_str())
            .or_default()
            .entry(r.annotator_id.as_str())
            .or_insert(r.label);
    }
    let n_raters = per_item.values().map(BTreeMap::len).max().unwrap_or(0);
    if n_raters < 2 {
        return Err(AnnotationError::NoAgreementData);
    }
    let matrix: Vec<Vec<usize>> = per_item
        .values()
        .filter(|labels| labels.len() == n_raters)
        .filter(|labels| labels.values().all(|l| (u8::from(*l) as usize) < categories))
        .map(|labels| {
            let mut row = vec![0usize; categories];
            for l in labels.values() {
                row[u8::from(*l) as usize] += 1;
            }
            row
        })
        .collect();
    if matrix.is_empty() {
        return Err(AnnotationError::NoAgreementData);
    }
    let mut report = fleiss_kappa(&matrix, n_raters)?;
    report.interpretation = Some(format!(
        "{} items x {} raters from exported records",
        report.n_items, n_raters
    ));
    Ok(report)
}
