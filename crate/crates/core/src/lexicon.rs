//! Categorized bias-term lexicon and whole-token matching.
//!
//! Text is segmented into maximal runs of alphanumeric characters; every
//! other character (whitespace, punctuation, hyphen, slash, apostrophe) is a
//! separator. Lexicon forms are tokenized the same way, so a multi-word term
//! such as `dames en heren` or a hyphenated one such as `bi-cultureel` is
//! matched as a contiguous token sequence.
//!
//! Overlapping candidates are resolved longest-match-first (in tokens), then
//! leftmost.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The bundled Dutch lexicon (120 terms).
pub const DEFAULT_LEXICON_TSV: &str = include_str!("../data/lexicon_nl.tsv");

/// Suffixes tried by the optional suffix expansion.
pub const EXPANSION_SUFFIXES: [&str; 4] = ["e", "en", "s", "'s"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LexiconError {
    #[error("malformed lexicon: {0}")]
    Malformed(String),
    #[error("cannot read lexicon {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    General,
    Disabilities,
    Culture,
    Religion,
    Gender,
    Colonialism,
    Migration,
    Education,
    Sexuality,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::General,
        Category::Disabilities,
        Category::Culture,
        Category::Religion,
        Category::Gender,
        Category::Colonialism,
        Category::Migration,
        Category::Education,
        Category::Sexuality,
    ];

    /// Dutch category label as used in the source keyword table.
    pub fn dutch(self) -> &'static str {
        match self {
            Category::General => "algemeen",
            Category::Disabilities => "beperkingen",
            Category::Culture => "cultuur",
            Category::Religion => "geloof",
            Category::Gender => "gender",
            Category::Colonialism => "kolonialisme",
            Category::Migration => "migratie",
            Category::Education => "onderwijs",
            Category::Sexuality => "seksualiteit",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::General => "general",
            Category::Disabilities => "disabilities",
            Category::Culture => "culture",
            Category::Religion => "religion",
            Category::Gender => "gender",
            Category::Colonialism => "colonialism",
            Category::Migration => "migration",
            Category::Education => "education",
            Category::Sexuality => "sexuality",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = LexiconError;

    /// Accepts both the English and the Dutch label.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_lowercase();
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s || c.dutch() == s)
            .ok_or_else(|| LexiconError::Malformed(format!("unknown category '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TermClass {
    Prohibited,
    ConditionallyBiased,
    ContextSensitive,
}

impl TermClass {
    pub fn as_str(self) -> &'static str {
        match self {
            TermClass::Prohibited => "prohibited",
            TermClass::ConditionallyBiased => "conditional",
            TermClass::ContextSensitive => "context",
        }
    }
}

impl fmt::Display for TermClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TermClass {
    type Err = LexiconError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "prohibited" => Ok(TermClass::Prohibited),
            "conditional" | "conditionally_biased" | "conditionallybiased" => Ok(TermClass::ConditionallyBiased),
            "context" | "context_sensitive" | "contextsensitive" => Ok(TermClass::ContextSensitive),
            other => Err(LexiconError::Malformed(format!("unknown term class '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconTerm {
    pub surface: String,
    pub category: Category,
    pub term_class: TermClass,
    #[serde(default)]
    pub variants: Vec<String>,
}

impl LexiconTerm {
    /// Surface followed by the listed variants.
    pub fn forms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.surface.as_str()).chain(self.variants.iter().map(String::as_str))
    }
}

/// A lexicon hit inside a normalized sentence.
///
/// `start`/`end` are character (not byte) offsets, end exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermMatch {
    pub term: String,
    pub category: Category,
    pub term_class: TermClass,
    pub start: usize,
    pub end: usize,
    pub matched_form: String,
}

/// A token with byte and character offsets into its source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub byte_start: usize,
    pub byte_end: usize,
    pub char_start: usize,
    pub char_end: usize,
}

/// Splits text into maximal alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    let mut char_idx = 0;
    for (byte_idx, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if current.is_none() {
                current = Some((byte_idx, char_idx));
            }
        } else if let Some((bs, cs)) = current.take() {
            tokens.push(Token {
                text: &text[bs..byte_idx],
                byte_start: bs,
                byte_end: byte_idx,
                char_start: cs,
                char_end: char_idx,
            });
        }
        char_idx += 1;
    }
    if let Some((bs, cs)) = current {
        tokens.push(Token {
            text: &text[bs..],
            byte_start: bs,
            byte_end: text.len(),
            char_start: cs,
            char_end: char_idx,
        });
    }
    tokens
}

fn form_key(form: &str) -> Vec<String> {
    tokenize(form).into_iter().map(|t| t.text.to_string()).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOptions {
    /// Also match `form + {e, en, s, 's}` for every listed form.
    pub suffix_expansion: bool,
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    terms: Vec<LexiconTerm>,
    source_id: String,
    options: MatchOptions,
    index: HashMap<Vec<String>, (usize, String)>,
    max_tokens: usize,
}

impl Lexicon {
    /// Validates terms and builds the token-sequence index.
    pub fn new(terms: Vec<LexiconTerm>, source_id: impl Into<String>) -> Result<Self, LexiconError> {
        Self::with_options(terms, source_id, MatchOptions::default())
    }

    pub fn with_options(
        terms: Vec<LexiconTerm>,
        source_id: impl Into<String>,
        options: MatchOptions,
    ) -> Result<Self, LexiconError> {
        if terms.is_empty() {
            return Err(LexiconError::Malformed("lexicon has no terms".into()));
        }
        let mut surfaces = HashSet::new();
        for term in &terms {
            let s = &term.surface;
            if s.is_empty() || s.trim() != s || s.to_lowercase() != *s {
                return Err(LexiconError::Malformed(format!(
                    "surface '{s}' must be non-empty, trimmed and lowercase"
                )));
            }
            if tokenize(s).is_empty() {
                return Err(LexiconError::Malformed(format!("surface '{s}' has no word characters")));
            }
            if !surfaces.insert(s.clone()) {
                return Err(LexiconError::Malformed(format!("duplicate surface '{s}'")));
            }
            for v in &term.variants {
                if v.is_empty() || v.to_lowercase() != *v || v.trim() != v || v == s {
                    return Err(LexiconError::Malformed(format!(
                        "variant '{v}' of '{s}' must be non-empty, lowercase and differ from the surface"
                    )));
                }
            }
        }

        let mut index: HashMap<Vec<String>, (usize, String)> = HashMap::new();
        for (i, term) in terms.iter().enumerate() {
            for form in term.forms() {
                let key = form_key(form);
                if key.is_empty() {
                    return Err(LexiconError::Malformed(format!("form '{form}' has no word characters")));
                }
                if let Some((other, _)) = index.get(&key) {
                    if *other != i {
                        return Err(LexiconError::Malformed(format!(
                            "form '{form}' is claimed by both '{}' and '{}'",
                            terms[*other].surface, term.surface
                        )));
                    }
                    continue;
                }
                index.insert(key, (i, form.to_string()));
            }
        }
        if options.suffix_expansion {
            // explicit forms always take precedence over generated ones
            let explicit: Vec<(Vec<String>, usize, String)> = index
                .iter()
                .map(|(k, (i, f))| (k.clone(), *i, f.clone()))
                .collect::<Vec<_>>();
            let mut generated: Vec<(Vec<String>, usize, String)> = Vec::new();
            for (_, i, form) in explicit {
                for suffix in EXPANSION_SUFFIXES {
                    let expanded = format!("{form}{suffix}");
                    generated.push((form_key(&expanded), i, expanded));
                }
            }
            generated.sort_by(|a, b| (a.1, &a.2).cmp(&(b.1, &b.2)));
            for (key, i, form) in generated {
                index.entry(key).or_insert((i, form));
            }
        }
        let max_tokens = index.keys().map(Vec::len).max().unwrap_or(1);
        Ok(Lexicon {
            terms,
            source_id: source_id.into(),
            options,
            index,
            max_tokens,
        })
    }

    /// Parses the line-oriented TSV format:
    /// `surface<TAB>category<TAB>class<TAB>variant1,variant2,...`.
    pub fn parse(text: &str, source_id: impl Into<String>) -> Result<Self, LexiconError> {
        let mut terms = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 3 || fields.len() > 4 {
                return Err(LexiconError::Malformed(format!(
                    "line {}: expected 3 or 4 tab-separated fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let surface = fields[0].trim().to_string();
            let category = fields[1]
                .parse::<Category>()
                .map_err(|e| LexiconError::Malformed(format!("line {}: {e}", lineno + 1)))?;
            let term_class = fields[2]
                .parse::<TermClass>()
                .map_err(|e| LexiconError::Malformed(format!("line {}: {e}", lineno + 1)))?;
            let variants = fields
                .get(3)
                .map(|v| {
                    v.split(',')
                        .map(str::trim)
                        .filter(|v| !v.is_empty())
                        .map(str::to_string)
                        .collect()
                })
                .unwrap_or_default();
            terms.push(LexiconTerm {
                surface,
                category,
                term_class,
                variants,
            });
        }
        Lexicon::new(terms, source_id)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LexiconError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Lexicon::parse(&text, path.display().to_string())
    }

    pub fn bundled() -> Self {
        Lexicon::parse(DEFAULT_LEXICON_TSV, "bundled:lexicon_nl.tsv").expect("bundled lexicon is valid")
    }

    /// Rebuilds the index with different matching options.
    pub fn with_match_options(self, options: MatchOptions) -> Result<Self, LexiconError> {
        Lexicon::with_options(self.terms, self.source_id, options)
    }

    pub fn terms(&self) -> &[LexiconTerm] {
        &self.terms
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn options(&self) -> MatchOptions {
        self.options
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term(&self, surface: &str) -> Option<&LexiconTerm> {
        self.terms.iter().find(|t| t.surface == surface)
    }

    pub fn count_by_category(&self, category: Category) -> usize {
        self.terms.iter().filter(|t| t.category == category).count()
    }

    /// Every form (surface, variant, expansion) the matcher accepts, with its owning term.
    pub fn indexed_forms(&self) -> Vec<(&str, &LexiconTerm)> {
        let mut forms: Vec<_> = self
            .index
            .values()
            .map(|(i, f)| (f.as_str(), &self.terms[*i]))
            .collect();
        forms.sort_by(|a, b| a.0.cmp(b.0));
        forms
    }

    /// All non-overlapping whole-token matches, ordered by span start.
    pub fn match_terms(&self, sentence: &str) -> Vec<TermMatch> {
        let tokens = tokenize(sentence);
        let mut candidates: Vec<(usize, usize, usize)> = Vec::new(); // (start tok, len, term idx)
        let mut key: Vec<String> = Vec::with_capacity(self.max_tokens);
        for start in 0..tokens.len() {
            key.clear();
            for len in 1..=self.max_tokens.min(tokens.len() - start) {
                key.push(tokens[start + len - 1].text.to_string());
                if let Some((term_idx, _)) = self.index.get(&key) {
                    candidates.push((start, len, *term_idx));
                }
            }
        }
        candidates.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut taken = vec![false; tokens.len()];
        let mut chosen = Vec::new();
        for (start, len, term_idx) in candidates {
            if taken[start..start + len].iter().any(|t| *t) {
                continue;
            }
            taken[start..start + len].iter_mut().for_each(|t| *t = true);
            chosen.push((start, len, term_idx));
        }
        chosen.sort_by_key(|c| c.0);
        chosen
            .into_iter()
            .map(|(start, len, term_idx)| {
                let first = &tokens[start];
                let last = &tokens[start + len - 1];
                let term = &self.terms[term_idx];
                TermMatch {
                    term: term.surface.clone(),
                    category: term.category,
                    term_class: term.term_class,
                    start: first.char_start,
                    end: last.char_end,
                    matched_form: sentence[first.byte_start..last.byte_end].to_string(),
                }
            })
            .collect()
    }

    /// Every term with a whole-token occurrence of one of its forms, including
    /// occurrences that overlap a longer match.
    pub fn occurring_terms(&self, sentence: &str) -> BTreeSet<&str> {
        let tokens = tokenize(sentence);
        let mut found = BTreeSet::new();
        let mut key: Vec<String> = Vec::with_capacity(self.max_tokens);
        for start in 0..tokens.len() {
            key.clear();
            for len in 1..=self.max_tokens.min(tokens.len() - start) {
                key.push(tokens[start + len - 1].text.to_string());
                if let Some((term_idx, _)) = self.index.get(&key) {
                    found.insert(self.terms[*term_idx].surface.as_str());
                }
            }
        }
        found
    }

    /// True when the text contains at least one match.
    pub fn has_match(&self, text: &str) -> bool {
        !self.match_terms(text).is_empty()
    }
}

/// Extracts the substring at a character span.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let bs = indices.by_ref().nth(start).unwrap_or(text.len());
    let be = if end > start {
        indices.nth(end - start - 1).unwrap_or(text.len())
    } else {
        bs
    };
    &text[bs..be]
}
