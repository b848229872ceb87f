//! Document ingestion: fetch, normalize, sentence-segment and deduplicate.

use std::collections::HashSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::lexicon::Lexicon;

pub mod source;

pub use source::{fetch_documents, DocumentSource, FetchOutcome, SourceConfig};

/// Abbreviations that never end a sentence.
pub const ABBREVIATIONS: [&str; 7] = ["o.a.", "bijv.", "art.", "nr.", "dhr.", "mevr.", "e.d."];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("source unreachable: {0}")]
    SourceUnreachable(String),
    #[error("malformed document {doc}: {reason}")]
    MalformedDocument { doc: String, reason: String },
    #[error("invalid source config: {0}")]
    InvalidConfig(String),
    #[error("invalid date window: {0}")]
    InvalidWindow(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub doc_type: String,
    pub published: NaiveDate,
    pub body: String,
    #[serde(default)]
    pub source_uri: String,
}

/// Publication-date window, `from` inclusive and `to` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub from: NaiveDate,
    pub to: NaiveDate,
}

impl DateWindow {
    pub fn new(from: NaiveDate, to: NaiveDate) -> Result<Self, CorpusError> {
        if from >= to {
            return Err(CorpusError::InvalidWindow(format!("{from} is not before {to}")));
        }
        Ok(DateWindow { from, to })
    }

    /// `[2010-01-01, today)`.
    pub fn default_until(today: NaiveDate) -> Self {
        DateWindow {
            from: NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid date"),
            to: today,
        }
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.from <= date && date < self.to
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSentence {
    pub sentence_id: String,
    pub text: String,
    pub context_before: String,
    pub context_after: String,
    pub doc_id: String,
    pub index: usize,
}

/// Lowercase, NFC, control characters stripped, whitespace runs collapsed.
pub fn normalize_text(raw: &str) -> String {
    let lowered: String = raw.nfc().collect::<String>().to_lowercase().nfc().collect();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_space = false;
    for ch in lowered.chars() {
        if ch.is_whitespace() {
            pending_space = true;
        } else if ch.is_control() {
            continue;
        } else {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        }
    }
    out
}

pub fn normalize_document(doc: &Document) -> String {
    normalize_text(&doc.body)
}

fn sentence_id(text: &str, doc_id: &str, index: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher.update([0u8]);
    hasher.update(doc_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(index.to_le_bytes());
    hex::encode(&hasher.finalize()[..8])
}

fn is_terminator(ch: char) -> bool {
    matches!(ch, '.' | '!' | '?')
}

/// Splits a normalized body into sentences (byte ranges are not exposed; each
/// sentence is trimmed text including its terminator).
pub fn split_sentences(body: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = body.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (_, ch) = chars[i];
        if !is_terminator(ch) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < chars.len() && is_terminator(chars[j + 1].1) {
            j += 1;
        }
        // boundary requires: terminator run, a space, then a letter
        let boundary = j + 2 < chars.len() && chars[j + 1].1 == ' ' && chars[j + 2].1.is_alphabetic();
        if boundary {
            let end = chars[j].0 + chars[j].1.len_utf8();
            let word_start = body[start..end].rfind(' ').map(|p| start + p + 1).unwrap_or(start);
            let word = &body[word_start..end];
            if !ABBREVIATIONS.contains(&word) {
                let s = body[start..end].trim();
                if !s.is_empty() {
                    sentences.push(s);
                }
                start = chars[j + 2].0;
            }
        }
        i = j + 1;
    }
    let tail = body[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail);
    }
    sentences
}

pub fn segment_sentences(body: &str, doc_id: &str) -> Vec<ContextSentence> {
    let parts = split_sentences(body);
    parts
        .iter()
        .enumerate()
        .map(|(index, text)| ContextSentence {
            sentence_id: sentence_id(text, doc_id, index),
            text: text.to_string(),
            context_before: if index > 0 {
                parts[index - 1].to_string()
            } else {
                String::new()
            },
            context_after: parts.get(index + 1).map(|s| s.to_string()).unwrap_or_default(),
            doc_id: doc_id.to_string(),
            index,
        })
        .collect()
}

/// Keeps the first occurrence of each normalized text, preserving order.
pub fn deduplicate(sentences: Vec<ContextSentence>) -> Vec<ContextSentence> {
    let mut seen = HashSet::new();
    sentences.into_iter().filter(|s| seen.insert(s.text.clone())).collect()
}

/// Normalize, segment and deduplicate a set of documents in doc_id order.
pub fn ingest(documents: &[Document]) -> Vec<ContextSentence> {
    let mut docs: Vec<&Document> = documents.iter().collect();
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let all = docs
        .into_iter()
        .flat_map(|d| segment_sentences(&normalize_document(d), &d.doc_id))
        .collect();
    deduplicate(all)
}

/// Documents whose normalized body has at least one lexicon match.
pub fn body_matches(doc: &Document, lexicon: &Lexicon) -> bool {
    lexicon.has_match(&normalize_document(doc))
}
