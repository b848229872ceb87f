use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::dataset::BinaryLabel;

pub const PLACEHOLDER: &str = "[item]";

/// Zero-shot Dutch prompt.
pub const DUTCH_PROMPT: &str = "Je bent een expert op het gebied van bias, stereotypering en discriminatie. Je taak is om zinnen te classificeren volgens de volgende definitie: een zin bevat bias als de zin een stereotype, uitsluiting, machtsverhoudingen of vooroordelen bevat, die impliciet of expliciet kunnen zijn, en die gaan over een af te bakenen groep personen, OF als een zin een woord bevat wat moet worden vermeden omdat het bias bevat. Geef de volgende zin een label, antwoord alleen met 0 of 1. Geef de zin het label 0 voor niet-biased en 1 voor biased. De zin is: [item].";

/// English counterpart of [`DUTCH_PROMPT`].
pub const ENGLISH_PROMPT: &str = "You are an expert in bias, stereotyping, and discrimination. Your task is to classify sentences according to the following definition: a sentence contains bias if it includes stereotypes, exclusion, power dynamics, or prejudices\u{2014}which can be implicit or explicit\u{2014}about a specific group of people, OR if the sentence contains a word that should be avoided because it is biased. Label the following sentence by answering only with 0 or 1. Assign the label 0 for not biased and 1 for biased. The sentence is: [item].";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    text: String,
    language: String,
}

impl PromptTemplate {
    /// Requires exactly one `[item]` placeholder.
    pub fn new(text: impl Into<String>, language: impl Into<String>) -> Result<Self, ClassifierError> {
        let text = text.into();
        match text.matches(PLACEHOLDER).count() {
            0 => Err(ClassifierError::MissingPlaceholder),
            1 => Ok(PromptTemplate {
                text,
                language: language.into(),
            }),
            n => Err(ClassifierError::InvalidTemplate(format!(
                "{n} placeholders, expected exactly one"
            ))),
        }
    }

    pub fn dutch() -> Self {
        PromptTemplate {
            text: DUTCH_PROMPT.to_string(),
            language: "nl".to_string(),
        }
    }

    pub fn english() -> Self {
        PromptTemplate {
            text: ENGLISH_PROMPT.to_string(),
            language: "en".to_string(),
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    /// Substitutes the left-most placeholder; the sentence is not re-scanned.
    pub fn render(&self, sentence: &str) -> Result<String, ClassifierError> {
        if !self.text.contains(PLACEHOLDER) {
            return Err(ClassifierError::MissingPlaceholder);
        }
        Ok(self.text.replacen(PLACEHOLDER, sentence, 1))
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::dutch()
    }
}

pub fn render_prompt(template: &PromptTemplate, sentence: &str) -> Result<String, ClassifierError> {
    template.render(sentence)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsedResponse {
    Label(BinaryLabel),
    Abstain,
}

fn is_trimmable(c: char) -> bool {
    c.is_whitespace()
        || matches!(
            c,
            '.' | ',' | '!' | '?' | ';' | ':' | '"' | '\'' | '`' | '*' | '(' | ')' | '[' | ']'
        )
}

/// Strict grammar: exactly `0` or `1` once surrounding whitespace and
/// punctuation are trimmed. Signs are not trimmed.
pub fn parse_generative_response(text: &str) -> ParsedResponse {
    match text.trim_matches(is_trimmable) {
        "0" => ParsedResponse::Label(BinaryLabel::NotBiased),
        "1" => ParsedResponse::Label(BinaryLabel::Biased),
        _ => ParsedResponse::Abstain,
    }
}
