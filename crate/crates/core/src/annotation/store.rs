use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::Utc;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::{open_session, AgreementMode, AgreementReport, AnnotationError, Progress, Session, SessionSpec};
use crate::dataset::{prohibited_rule_suggest, AnnotationRecord, BinaryLabel, CandidateItem};
use crate::lexicon::TermMatch;

const EVENT_LOG: &str = "events.jsonl";
const SNAPSHOT: &str = "snapshot.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    SessionOpened {
        session: Session,
    },
    LabelSubmitted {
        record: AnnotationRecord,
        guideline_ack: bool,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Snapshot {
    events_applied: u64,
    sessions: BTreeMap<String, Session>,
}

impl Snapshot {
    fn apply(&mut self, event: Event) -> Result<(), AnnotationError> {
        match event {
            Event::SessionOpened { session } => {
                self.sessions.insert(session.session_id.clone(), session);
            }
            Event::LabelSubmitted { record, .. } => {
                let session = self
                    .sessions
                    .get_mut(&record.session_id)
                    .ok_or_else(|| AnnotationError::UnknownSession(record.session_id.clone()))?;
                session.apply(record);
            }
        }
        self.events_applied += 1;
        Ok(())
    }
}

/// Item as shown to annotators, with the advisory rule suggestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub item_id: String,
    pub text: String,
    pub context_before: String,
    pub context_after: String,
    pub matches: Vec<TermMatch>,
    pub suggestion: Option<BinaryLabel>,
}

impl From<&CandidateItem> for ItemView {
    fn from(c: &CandidateItem) -> Self {
        ItemView {
            item_id: c.item_id.clone(),
            text: c.sentence.text.clone(),
            context_before: c.sentence.context_before.clone(),
            context_after: c.sentence.context_after.clone(),
            matches: c.matches.clone(),
            suggestion: prohibited_rule_suggest(&c.matches),
        }
    }
}

/// Persistent annotation backend.
///
/// Writes go through one mutex-guarded event log (first write wins); reads
/// only take the state read lock.
pub struct AnnotationService {
    dir: Option<PathBuf>,
    state: RwLock<Snapshot>,
    log: Mutex<Option<File>>,
    snapshot_every: u64,
}

fn storage<E: std::fmt::Display>(e: E) -> AnnotationError {
    AnnotationError::Storage(e.to_string())
}

impl AnnotationService {
    /// Service without persistence.
    pub fn in_memory() -> Self {
        AnnotationService {
            dir: None,
            state: RwLock::new(Snapshot::default()),
            log: Mutex::new(None),
            snapshot_every: u64::MAX,
        }
    }

    /// Opens (or creates) a data directory, restoring the snapshot and
    /// replaying later events.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, AnnotationError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(storage)?;
        let mut state = match std::fs::read_to_string(dir.join(SNAPSHOT)) {
            Ok(text) => serde_json::from_str::<Snapshot>(&text).map_err(storage)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Snapshot::default(),
            Err(e) => return Err(storage(e)),
        };
        let log_path = dir.join(EVENT_LOG);
        if log_path.exists() {
            let reader = BufReader::new(File::open(&log_path).map_err(storage)?);
            let skip = state.events_applied;
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(storage)?;
                if line.trim().is_empty() || (i as u64) < skip {
                    continue;
                }
                let event: Event = serde_json::from_str(&line)
                    .map_err(|e| storage(format!("{}:{}: {e}", log_path.display(), i + 1)))?;
                state.apply(event)?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(storage)?;
        Ok(AnnotationService {
            dir: Some(dir),
            state: RwLock::new(state),
            log: Mutex::new(Some(file)),
            snapshot_every: 256,
        })
    }

    pub fn with_snapshot_interval(mut self, every: u64) -> Self {
        self.snapshot_every = every.max(1);
        self
    }

    fn append(&self, log: &mut Option<File>, event: &Event) -> Result<(), AnnotationError> {
        if let Some(file) = log.as_mut() {
            let mut line = serde_json::to_string(event).map_err(storage)?;
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(storage)?;
            file.sync_data().map_err(storage)?;
        }
        Ok(())
    }

    fn commit(&self, log: &mut Option<File>, event: Event) -> Result<(), AnnotationError> {
        self.append(log, &event)?;
        let mut state = self.state.write();
        state.apply(event)?;
        if state.events_applied.is_multiple_of(self.snapshot_every) {
            self.write_snapshot(&state)?;
        }
        Ok(())
    }

    fn write_snapshot(&self, state: &Snapshot) -> Result<(), AnnotationError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let tmp = dir.join(format!("{SNAPSHOT}.tmp"));
        std::fs::write(&tmp, serde_json::to_vec(state).map_err(storage)?).map_err(storage)?;
        std::fs::rename(&tmp, dir.join(SNAPSHOT)).map_err(storage)
    }

    /// Forces a snapshot of the current state.
    pub fn snapshot(&self) -> Result<(), AnnotationError> {
        let _log = self.log.lock();
        self.write_snapshot(&self.state.read())
    }

    pub fn open_session(&self, batch: Vec<CandidateItem>, spec: &SessionSpec) -> Result<Session, AnnotationError> {
        let mut log = self.log.lock();
        if self.state.read().sessions.contains_key(&spec.session_id) {
            return Err(AnnotationError::DuplicateSession(spec.session_id.clone()));
        }
        let session = open_session(batch, spec)?;
        self.commit(
            &mut log,
            Event::SessionOpened {
                session: session.clone(),
            },
        )?;
        Ok(session)
    }

    fn with_session<T>(
        &self,
        session_id: &str,
        f: impl FnOnce(&Session) -> Result<T, AnnotationError>,
    ) -> Result<T, AnnotationError> {
        let state = self.state.read();
        let session = state
            .sessions
            .get(session_id)
            .ok_or_else(|| AnnotationError::UnknownSession(session_id.to_string()))?;
        f(session)
    }

    pub fn session(&self, session_id: &str) -> Result<Session, AnnotationError> {
        self.with_session(session_id, |s| Ok(s.clone()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.state.read().sessions.keys().cloned().collect()
    }

    pub fn next_item(&self, session_id: &str, annotator: &str) -> Result<Option<ItemView>, AnnotationError> {
        self.with_session(session_id, |s| Ok(s.next_item(annotator)?.map(ItemView::from)))
    }

    pub fn submit_label(
        &self,
        session_id: &str,
        annotator: &str,
        item_id: &str,
        label: i64,
        guideline_ack: bool,
    ) -> Result<AnnotationRecord, AnnotationError> {
        let mut log = self.log.lock();
        let record = self.with_session(session_id, |s| {
            let label = s.check_submission(annotator, item_id, label)?;
            Ok(AnnotationRecord {
                item_id: item_id.to_string(),
                annotator_id: annotator.to_string(),
                session_id: session_id.to_string(),
                round: s.round,
                label,
                timestamp: Utc::now(),
            })
        })?;
        self.commit(
            &mut log,
            Event::LabelSubmitted {
                record: record.clone(),
                guideline_ack,
            },
        )?;
        Ok(record)
    }

    pub fn progress(&self, session_id: &str) -> Result<Progress, AnnotationError> {
        self.with_session(session_id, |s| Ok(s.progress()))
    }

    pub fn agreement(&self, session_id: &str, mode: AgreementMode) -> Result<AgreementReport, AnnotationError> {
        self.with_session(session_id, |s| s.agreement(mode))
    }

    pub fn records(&self, session_id: &str) -> Result<Vec<AnnotationRecord>, AnnotationError> {
        self.with_session(session_id, |s| Ok(s.records.clone()))
    }

    pub fn all_records(&self) -> Vec<AnnotationRecord> {
        self.state
            .read()
            .sessions
            .values()
            .flat_map(|s| s.records.iter().cloned())
            .collect()
    }

    /// Looks an item up across all sessions.
    pub fn item(&self, item_id: &str) -> Result<ItemView, AnnotationError> {
        let state = self.state.read();
        state
            .sessions
            .values()
            .find_map(|s| s.item(item_id))
            .map(ItemView::from)
            .ok_or_else(|| AnnotationError::UnknownItem(item_id.to_string()))
    }
}
