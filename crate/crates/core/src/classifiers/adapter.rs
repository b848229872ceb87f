//! Adapter wire protocol over a child process (NDJSON) or HTTP.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{Classifier, ClassifierError, ScoreOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub context_before: String,
    #[serde(default)]
    pub context_after: String,
}

/// Either `score` or `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterResponse {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AdapterResponse {
    pub fn score(id: impl Into<String>, score: f64) -> Self {
        AdapterResponse {
            id: id.into(),
            score: Some(score),
            error: None,
        }
    }

    pub fn error(id: impl Into<String>, error: impl Into<String>) -> Self {
        AdapterResponse {
            id: id.into(),
            score: None,
            error: Some(error.into()),
        }
    }

    fn outcome(self) -> ScoreOutcome {
        match (self.score, self.error) {
            (_, Some(e)) => ScoreOutcome::Error(e),
            (Some(s), None) if (0.0..=1.0).contains(&s) => ScoreOutcome::Score(s),
            (Some(s), None) => ScoreOutcome::Error(format!("score {s} outside [0, 1]")),
            (None, None) => ScoreOutcome::Error("response has neither score nor error".into()),
        }
    }
}

/// Assigns responses to requests by id, in any order. Duplicate request ids
/// are answered first come first served.
struct Pending {
    slots: Vec<Option<ScoreOutcome>>,
    by_id: HashMap<String, Vec<usize>>,
    open: usize,
}

impl Pending {
    fn new(requests: &[AdapterRequest]) -> Self {
        let mut by_id: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, r) in requests.iter().enumerate().rev() {
            by_id.entry(r.id.clone()).or_default().push(i);
        }
        Pending {
            slots: vec![None; requests.len()],
            by_id,
            open: requests.len(),
        }
    }

    fn accept(&mut self, response: AdapterResponse) {
        match self.by_id.get_mut(&response.id).and_then(Vec::pop) {
            Some(i) => {
                self.slots[i] = Some(response.outcome());
                self.open -= 1;
            }
            None => log::warn!("ignoring response for unknown or already answered id '{}'", response.id),
        }
    }

    fn answered(&self) -> usize {
        self.slots.len() - self.open
    }

    fn finish(self, missing: &str) -> Vec<ScoreOutcome> {
        self.slots
            .into_iter()
            .map(|s| s.unwrap_or_else(|| ScoreOutcome::Error(missing.to_string())))
            .collect()
    }
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    lines: mpsc::Receiver<String>,
}

impl Running {
    fn spawn(program: &PathBuf, args: &[String]) -> std::io::Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        // drains stdout continuously so the child never blocks on a full pipe
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Running { child, stdin, lines })
    }

    fn stop(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Long-lived child process speaking NDJSON on stdin/stdout. The process is
/// started on first use and restarted after it exits.
pub struct SubprocessAdapter {
    program: PathBuf,
    args: Vec<String>,
    model_id: String,
    timeout: Duration,
    running: Mutex<Option<Running>>,
}

impl SubprocessAdapter {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        let program = program.into();
        let model_id = program
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "subprocess".into());
        SubprocessAdapter {
            program,
            args,
            model_id,
            timeout: Duration::from_secs(60),
            running: Mutex::new(None),
        }
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    /// Per-batch deadline for collecting responses.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn unavailable(&self, what: impl std::fmt::Display) -> ClassifierError {
        ClassifierError::AdapterUnavailable(format!("{}: {what}", self.program.display()))
    }
}

impl Classifier for SubprocessAdapter {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score_batch(&self, requests: &[AdapterRequest]) -> Result<Vec<ScoreOutcome>, ClassifierError> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        let mut guard = self.running.lock();
        if guard.is_none() {
            *guard = Some(Running::spawn(&self.program, &self.args).map_err(|e| self.unavailable(e))?);
        }
        let proc = guard.as_mut().expect("spawned above");
        while proc.lines.try_recv().is_ok() {}

        let mut payload = String::new();
        for r in requests {
            payload.push_str(&serde_json::to_string(r).map_err(|e| ClassifierError::Protocol(e.to_string()))?);
            payload.push('\n');
        }
        if let Err(e) = proc
            .stdin
            .write_all(payload.as_bytes())
            .and_then(|_| proc.stdin.flush())
        {
            if let Some(running) = guard.take() {
                running.stop();
            }
            return Err(self.unavailable(e));
        }

        let mut pending = Pending::new(requests);
        let deadline = Instant::now() + self.timeout;
        let mut exited = false;
        while pending.open > 0 {
            let left = deadline.saturating_duration_since(Instant::now());
            match proc.lines.recv_timeout(left) {
                Ok(line) if line.trim().is_empty() => {}
                Ok(line) => match serde_json::from_str::<AdapterResponse>(&line) {
                    Ok(resp) => pending.accept(resp),
                    Err(e) => log::warn!("{}: malformed response line: {e}", self.model_id),
                },
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) => {
                    exited = true;
                    break;
                }
            }
        }
        if exited {
            if let Some(running) = guard.take() {
                running.stop();
            }
            if pending.answered() == 0 {
                return Err(self.unavailable("process exited"));
            }
            return Ok(pending.finish("adapter process exited"));
        }
        if pending.open > 0 {
            // late answers would be attributed to the next batch
            if let Some(running) = guard.take() {
                running.stop();
            }
            return Ok(pending.finish("timed out"));
        }
        Ok(pending.finish(""))
    }
}

impl Drop for SubprocessAdapter {
    fn drop(&mut self) {
        if let Some(r) = self.running.get_mut().take() {
            r.stop();
        }
    }
}

/// `POST {base}/classify` with a JSON array of requests.
pub struct RemoteAdapter {
    url: String,
    model_id: String,
    agent: ureq::Agent,
}

impl RemoteAdapter {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        RemoteAdapter {
            url: format!("{}/classify", base_url.trim_end_matches('/')),
            model_id: base_url.to_string(),
            agent,
        }
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }
}

impl Classifier for RemoteAdapter {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score_batch(&self, requests: &[AdapterRequest]) -> Result<Vec<ScoreOutcome>, ClassifierError> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        let responses: Vec<AdapterResponse> = self
            .agent
            .post(&self.url)
            .send_json(requests)
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| ClassifierError::AdapterUnavailable(format!("{}: {e}", self.url)))?;
        let mut pending = Pending::new(requests);
        for r in responses {
            pending.accept(r);
        }
        Ok(pending.finish("no response"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(id: &str) -> AdapterRequest {
        AdapterRequest {
            id: id.into(),
            text: String::new(),
            context_before: String::new(),
            context_after: String::new(),
        }
    }

    #[test]
    fn pending_matches_out_of_order() {
        let reqs = [req("a"), req("b"), req("a")];
        let mut p = Pending::new(&reqs);
        p.accept(AdapterResponse::score("b", 0.2));
        p.accept(AdapterResponse::score("a", 0.7));
        p.accept(AdapterResponse::error("zz", "x"));
        p.accept(AdapterResponse::score("a", 0.1));
        assert_eq!(
            p.finish("missing"),
            vec![
                ScoreOutcome::Score(0.7),
                ScoreOutcome::Score(0.2),
                ScoreOutcome::Score(0.1)
            ]
        );
    }

    #[test]
    fn wire_shapes() {
        let r: AdapterResponse = serde_json::from_str(r#"{"id":"x","error":"boom"}"#).unwrap();
        assert_eq!(r.outcome(), ScoreOutcome::Error("boom".into()));
        assert_eq!(
            serde_json::to_string(&AdapterResponse::score("x", 1.0)).unwrap(),
            r#"{"id":"x","score":1.0}"#
        );
        let q: AdapterRequest = serde_json::from_str(r#"{"id":"x","text":"t"}"#).unwrap();
        assert_eq!(q.context_before, "");
    }

    #[test]
    fn missing_program_is_unavailable() {
        let a = SubprocessAdapter::new("/nonexistent/adapter-binary", vec![]);
        assert!(matches!(
            a.score_batch(&[req("a")]),
            Err(ClassifierError::AdapterUnavailable(_))
        ));
    }
}
