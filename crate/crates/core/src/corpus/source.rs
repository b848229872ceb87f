//! Document sources: a local directory of extracted text, or a paginated
//! HTTP query endpoint.

use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::NaiveDate;
use log::warn;
use serde::{Deserialize, Serialize};

use super::{body_matches, CorpusError, DateWindow, Document};
use crate::config::KeyValueConfig;
use crate::lexicon::Lexicon;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DocumentSource {
    LocalDir(PathBuf),
    Remote(String),
}

/// Source settings, read from a `key = value` file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub source: DocumentSource,
    pub query_param: String,
    /// Joins the query keywords into one parameter value.
    pub query_joiner: String,
    pub from_param: String,
    pub to_param: String,
    pub page_param: String,
    pub page_size_param: String,
    pub page_size: usize,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub concurrency: usize,
}

impl SourceConfig {
    pub fn local(dir: impl Into<PathBuf>) -> Self {
        Self::with_source(DocumentSource::LocalDir(dir.into()))
    }

    pub fn remote(base_url: impl Into<String>) -> Self {
        Self::with_source(DocumentSource::Remote(base_url.into()))
    }

    fn with_source(source: DocumentSource) -> Self {
        SourceConfig {
            source,
            query_param: "q".into(),
            query_joiner: " OR ".into(),
            from_param: "from".into(),
            to_param: "to".into(),
            page_param: "page".into(),
            page_size_param: "page_size".into(),
            page_size: 100,
            timeout_secs: 30,
            max_retries: 3,
            concurrency: 4,
        }
    }

    /// Reads a source config file. Relative `local_dir` paths resolve against
    /// the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let kv = KeyValueConfig::load(path).map_err(|e| CorpusError::InvalidConfig(e.to_string()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_kv(&kv, base)
    }

    pub fn from_kv(kv: &KeyValueConfig, base: &Path) -> Result<Self, CorpusError> {
        let mut cfg = match (kv.get("base_url"), kv.get("local_dir")) {
            (Some(url), None) => Self::remote(url),
            (None, Some(dir)) => {
                let dir = PathBuf::from(dir);
                Self::local(if dir.is_absolute() { dir } else { base.join(dir) })
            }
            _ => {
                return Err(CorpusError::InvalidConfig(
                    "exactly one of base_url or local_dir must be set".into(),
                ))
            }
        };
        let text = |key: &str, slot: &mut String| {
            if let Some(v) = kv.get(key) {
                *slot = v.to_string();
            }
        };
        text("query_param", &mut cfg.query_param);
        text("query_joiner", &mut cfg.query_joiner);
        text("from_param", &mut cfg.from_param);
        text("to_param", &mut cfg.to_param);
        text("page_param", &mut cfg.page_param);
        text("page_size_param", &mut cfg.page_size_param);
        let num = |key: &str| -> Result<Option<u64>, CorpusError> {
            kv.get(key)
                .map(|v| {
                    v.parse::<u64>()
                        .map_err(|_| CorpusError::InvalidConfig(format!("{key} must be an integer, got '{v}'")))
                })
                .transpose()
        };
        if let Some(v) = num("page_size")? {
            cfg.page_size = v.max(1) as usize;
        }
        if let Some(v) = num("timeout_secs")? {
            cfg.timeout_secs = v;
        }
        if let Some(v) = num("max_retries")? {
            cfg.max_retries = v as u32;
        }
        if let Some(v) = num("concurrency")? {
            cfg.concurrency = v.max(1) as usize;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FetchOutcome {
    /// Accepted documents in doc_id order.
    pub documents: Vec<Document>,
    pub malformed: usize,
    pub outside_window: usize,
    pub without_match: usize,
}

/// Fetches every document in `window` whose body matches the lexicon.
pub fn fetch_documents(
    lexicon: &Lexicon,
    window: DateWindow,
    config: &SourceConfig,
) -> Result<FetchOutcome, CorpusError> {
    let (raw, malformed) = match &config.source {
        DocumentSource::LocalDir(dir) => read_local_dir(dir, config.concurrency)?,
        DocumentSource::Remote(url) => fetch_remote(url, lexicon, window, config)?,
    };
    let mut outcome = FetchOutcome {
        malformed,
        ..Default::default()
    };
    for doc in raw {
        if !window.contains(doc.published) {
            outcome.outside_window += 1;
        } else if !body_matches(&doc, lexicon) {
            outcome.without_match += 1;
        } else {
            outcome.documents.push(doc);
        }
    }
    outcome.documents.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let before = outcome.documents.len();
    outcome.documents.dedup_by(|a, b| a.doc_id == b.doc_id);
    if outcome.documents.len() != before {
        warn!(
            "{} documents with repeated doc_id dropped",
            before - outcome.documents.len()
        );
    }
    if outcome.malformed > 0 {
        warn!("{} malformed documents skipped", outcome.malformed);
    }
    Ok(outcome)
}

/// Parses a `.txt` document: an optional `key: value` header block terminated
/// by a blank line, then the body.
pub fn parse_text_document(stem: &str, text: &str) -> Result<Document, CorpusError> {
    let malformed = |reason: String| CorpusError::MalformedDocument {
        doc: stem.to_string(),
        reason,
    };
    let mut doc_id = stem.to_string();
    let mut title = String::new();
    let mut doc_type = String::new();
    let mut published: Option<NaiveDate> = None;
    let mut source_uri = String::new();

    let mut body_start = 0;
    let mut saw_header = false;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            if saw_header {
                body_start += line.len();
            }
            break;
        }
        let Some((key, value)) = trimmed.split_once(':') else {
            break;
        };
        let value = value.trim();
        match key.trim() {
            "doc_id" => doc_id = value.to_string(),
            "title" => title = value.to_string(),
            "doc_type" => doc_type = value.to_string(),
            "published" => {
                published = Some(
                    NaiveDate::parse_from_str(value, "%Y-%m-%d")
                        .map_err(|e| malformed(format!("bad published date '{value}': {e}")))?,
                )
            }
            "source_uri" => source_uri = value.to_string(),
            _ => break,
        }
        saw_header = true;
        body_start += line.len();
    }
    if !saw_header {
        body_start = 0;
    }
    let published = published.ok_or_else(|| malformed("missing published date".into()))?;
    if doc_id.is_empty() {
        return Err(malformed("empty doc_id".into()));
    }
    Ok(Document {
        doc_id,
        title,
        doc_type,
        published,
        body: text[body_start..].to_string(),
        source_uri: if source_uri.is_empty() {
            format!("file:{stem}")
        } else {
            source_uri
        },
    })
}

fn read_one(path: &Path) -> Result<Document, CorpusError> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let bytes = std::fs::read(path).map_err(|e| CorpusError::MalformedDocument {
        doc: stem.clone(),
        reason: e.to_string(),
    })?;
    let text = String::from_utf8(bytes).map_err(|_| CorpusError::MalformedDocument {
        doc: stem.clone(),
        reason: "body is not valid UTF-8".into(),
    })?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| CorpusError::MalformedDocument {
            doc: stem,
            reason: e.to_string(),
        }),
        _ => parse_text_document(&stem, &text),
    }
}

fn read_local_dir(dir: &Path, concurrency: usize) -> Result<(Vec<Document>, usize), CorpusError> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| CorpusError::SourceUnreachable(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("txt" | "json")))
        .collect();
    paths.sort();

    let workers = concurrency.max(1);
    let chunk = paths.len().div_ceil(workers).max(1);
    let results: Vec<Result<Document, CorpusError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = paths
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|p| read_one(p)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("reader thread panicked"))
            .collect()
    });

    let mut docs = Vec::new();
    let mut malformed = 0;
    for r in results {
        match r {
            Ok(d) => docs.push(d),
            Err(e) => {
                warn!("skipping document: {e}");
                malformed += 1;
            }
        }
    }
    Ok((docs, malformed))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Page {
    Wrapped { documents: Vec<serde_json::Value> },
    Bare(Vec<serde_json::Value>),
}

fn fetch_remote(
    base_url: &str,
    lexicon: &Lexicon,
    window: DateWindow,
    config: &SourceConfig,
) -> Result<(Vec<Document>, usize), CorpusError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
        .build()
        .into();
    let mut keywords: Vec<&str> = lexicon.terms().iter().map(|t| t.surface.as_str()).collect();
    keywords.sort_unstable();
    let query = keywords.join(&config.query_joiner);

    let mut docs = Vec::new();
    let mut malformed = 0;
    let mut page = 1usize;
    loop {
        let mut attempt = 0;
        let items = loop {
            let result = agent
                .get(base_url)
                .query(&config.query_param, &query)
                .query(&config.from_param, window.from.to_string())
                .query(&config.to_param, window.to.to_string())
                .query(&config.page_param, page.to_string())
                .query(&config.page_size_param, config.page_size.to_string())
                .call()
                .and_then(|mut r| r.body_mut().read_json::<Page>());
            match result {
                Ok(Page::Wrapped { documents }) | Ok(Page::Bare(documents)) => break documents,
                Err(e) if attempt < config.max_retries => {
                    attempt += 1;
                    warn!("page {page} failed ({e}); retry {attempt}/{}", config.max_retries);
                    std::thread::sleep(Duration::from_millis(50 * u64::from(attempt)));
                }
                Err(e) => return Err(CorpusError::SourceUnreachable(format!("{base_url}: {e}"))),
            }
        };
        let n = items.len();
        for value in items {
            match serde_json::from_value::<Document>(value) {
                Ok(d) => docs.push(d),
                Err(e) => {
                    warn!("skipping remote document: {e}");
                    malformed += 1;
                }
            }
        }
        if n < config.page_size {
            break;
        }
        page += 1;
    }
    Ok((docs, malformed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_body() {
        let text = "doc_id: kst-1\ntitle: Nota\ndoc_type: Nota\npublished: 2015-03-02\n\nDe tekst.\nNog meer.";
        let d = parse_text_document("file", text).unwrap();
        assert_eq!(d.doc_id, "kst-1");
        assert_eq!(d.published, NaiveDate::from_ymd_opt(2015, 3, 2).unwrap());
        assert_eq!(d.body, "De tekst.\nNog meer.");
    }

    #[test]
    fn missing_date_is_malformed() {
        assert!(matches!(
            parse_text_document("x", "gewoon tekst zonder kop"),
            Err(CorpusError::MalformedDocument { .. })
        ));
        assert!(parse_text_document("x", "published: 2015-13-40\n\nbody").is_err());
    }

    #[test]
    fn config_requires_one_source() {
        let kv = KeyValueConfig::parse("page_size = 5\n").unwrap();
        assert!(SourceConfig::from_kv(&kv, Path::new(".")).is_err());
        let kv = KeyValueConfig::parse("base_url = http://x\npage_size = 5\nconcurrency = 2").unwrap();
        let cfg = SourceConfig::from_kv(&kv, Path::new(".")).unwrap();
        assert_eq!(cfg.page_size, 5);
        assert_eq!(cfg.concurrency, 2);
        assert_eq!(cfg.source, DocumentSource::Remote("http://x".into()));
    }
}
