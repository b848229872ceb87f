//! Building and evaluating linguistic-bias detection datasets from
//! government documents.
//!
//! The pipeline runs lexicon matching ([`lexicon`]) over ingested documents
//! ([`corpus`]), samples candidates for annotation ([`dataset`],
//! [`annotation`]), resolves labels into a dataset, splits and resamples it
//! ([`splits`]), scores classifiers ([`classifiers`], [`evaluation`]) and
//! explains single predictions ([`explain`]). Commands record what they did
//! in a [`manifest::RunManifest`].

pub mod annotation;
pub mod classifiers;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod evaluation;
pub mod explain;
pub mod jsonl;
pub mod lexicon;
pub mod manifest;
pub mod splits;

pub use annotation::{fleiss_kappa, AgreementReport, AnnotationError, AnnotationService, KappaError};
pub use classifiers::{Classifier, ClassifierError, Prediction, PromptTemplate};
pub use config::{ConfigError, KeyValueConfig};
pub use corpus::{ContextSentence, CorpusError, DateWindow, Document};
pub use dataset::{
    AnnotationLabel, AnnotationRecord, BinaryLabel, CandidateItem, DatasetError, LabeledInstance, Resolution,
};
pub use evaluation::{ConfusionMatrix, EvalError, EvalReport};
pub use explain::{ExplainConfig, ExplainError, Explanation};
pub use jsonl::JsonlError;
pub use lexicon::{Category, Lexicon, LexiconError, LexiconTerm, TermClass, TermMatch};
pub use manifest::{ManifestError, RunManifest};
pub use splits::{Regime, RegimeSplits, ResampleConfig, ResampleStrategy, SplitConfig, SplitError};

use thiserror::Error;

/// Any error a pipeline stage can raise.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable error name for messages and logs.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Lexicon(_) => "MalformedLexicon",
            Error::Corpus(CorpusError::SourceUnreachable(_)) => "SourceUnreachable",
            Error::Corpus(CorpusError::MalformedDocument { .. }) => "MalformedDocument",
            Error::Corpus(_) => "InvalidConfig",
            Error::Config(_) => "ConfigError",
            Error::Jsonl(_) => "MalformedInput",
            Error::Dataset(DatasetError::PoolExhausted { .. }) => "PoolExhausted",
            Error::Dataset(DatasetError::UnknownItem(_)) => "UnknownItem",
            Error::Dataset(DatasetError::UnresolvedExpertItem(_)) => "UnresolvedExpertItem",
            Error::Dataset(DatasetError::InvalidLabel(_)) => "InvalidLabel",
            Error::Dataset(DatasetError::Csv(_)) => "MalformedInput",
            Error::Annotation(e) => e.kind(),
            Error::Split(SplitError::TooSmall(_)) => "TooSmall",
            Error::Split(SplitError::InfeasibleTarget(_)) => "InfeasibleTarget",
            Error::Split(SplitError::ManifestMismatch(_)) => "ManifestMismatch",
            Error::Split(_) => "InvalidConfig",
            Error::Classifier(e) => e.kind(),
            Error::Eval(e) => e.kind(),
            Error::Explain(e) => e.kind(),
            Error::Manifest(ManifestError::Drift { .. }) => "InputDrift",
            Error::Manifest(_) => "ManifestError",
            Error::Io(_) => "Io",
        }
    }
}
