//! Reference adapter that scores by hashing the text. Used for protocol
//! conformance tests of both transports.

use std::io::{BufRead, Write};
use std::sync::Arc;
use std::time::Duration;

use axum::routing::post;
use axum::{Json, Router};
use parking_lot::Mutex;
use sha2::{Digest, Sha256};

use super::{AdapterRequest, AdapterResponse};

/// Deterministic score in [0, 1] from the SHA-256 of the text.
pub fn mock_score(text: &str) -> f64 {
    let digest = Sha256::digest(text.as_bytes());
    let v = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
    (v >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, Default)]
pub struct MockOptions {
    /// Texts containing this substring get an error response.
    pub fail_on: Option<String>,
    /// Upper bound of a per-request delay derived from the hash; responses
    /// then leave in completion order rather than request order.
    pub jitter_ms: u64,
    /// Exit without answering once this many requests have been read.
    pub exit_after: Option<usize>,
}

pub fn respond(req: &AdapterRequest, opts: &MockOptions) -> AdapterResponse {
    match &opts.fail_on {
        Some(s) if req.text.contains(s.as_str()) => AdapterResponse::error(&req.id, "injected failure"),
        _ => AdapterResponse::score(&req.id, mock_score(&req.text)),
    }
}

fn delay(req: &AdapterRequest, opts: &MockOptions) -> Duration {
    if opts.jitter_ms == 0 {
        return Duration::ZERO;
    }
    Duration::from_millis((mock_score(&req.id) * opts.jitter_ms as f64) as u64)
}

/// Serves the NDJSON transport until EOF. Malformed lines get an error
/// response with an empty id.
pub fn run_stdio<R: BufRead, W: Write + Send + 'static>(
    reader: R,
    writer: W,
    opts: &MockOptions,
) -> std::io::Result<()> {
    let writer = Arc::new(Mutex::new(writer));
    let mut handles = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        if opts.exit_after.is_some_and(|limit| n >= limit) {
            std::process::exit(3);
        }
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<AdapterRequest>(&line) {
            Ok(req) => (respond(&req, opts), delay(&req, opts)),
            Err(e) => (
                AdapterResponse::error("", format!("malformed request: {e}")),
                Duration::ZERO,
            ),
        };
        let writer = Arc::clone(&writer);
        let emit = move |(resp, wait): (AdapterResponse, Duration)| -> std::io::Result<()> {
            std::thread::sleep(wait);
            let mut w = writer.lock();
            serde_json::to_writer(&mut *w, &resp)?;
            w.write_all(b"\n")?;
            w.flush()
        };
        if resp.1.is_zero() {
            emit(resp)?;
        } else {
            handles.push(std::thread::spawn(move || emit(resp)));
        }
        handles.retain(|h| !h.is_finished());
    }
    for h in handles {
        h.join().expect("writer thread")?;
    }
    Ok(())
}

/// HTTP transport: `POST /classify`.
pub fn router(opts: MockOptions) -> Router {
    let opts = Arc::new(opts);
    Router::new().route(
        "/classify",
        post(move |Json(reqs): Json<Vec<AdapterRequest>>| {
            let opts = Arc::clone(&opts);
            async move {
                let mut out: Vec<AdapterResponse> = reqs.iter().map(|r| respond(r, &opts)).collect();
                // answers are matched by id, so order carries no meaning
                out.reverse();
                Json(out)
            }
        }),
    )
}

/// Serves `router` on an already bound listener until the process ends.
pub async fn serve(listener: tokio::net::TcpListener, router: Router) -> std::io::Result<()> {
    axum::serve(listener, router).await
}
