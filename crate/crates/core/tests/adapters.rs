use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::routing::post;
use axum::{Json, Router};
use biascorpus_core::classifiers::mock::{mock_score, router, MockOptions};
use biascorpus_core::classifiers::{
    classify_batch, parse_generative_response, score_all, AdapterRequest, BatchOptions, ChatCompletionClient,
    ChatConfig, Classifier, ParsedResponse, RemoteAdapter, ScoreOutcome,
};
use biascorpus_core::{BinaryLabel, ClassifierError, PromptTemplate};
use serde_json::{json, Value};

/// Serves `app` on an ephemeral port from a background runtime.
fn spawn(app: Router) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn req(id: &str, text: &str) -> AdapterRequest {
    AdapterRequest {
        id: id.into(),
        text: text.into(),
        context_before: String::new(),
        context_after: String::new(),
    }
}

#[test]
fn remote_adapter_matches_reversed_responses_by_id() {
    let addr = spawn(router(MockOptions::default()));
    let adapter = RemoteAdapter::new(&format!("http://{addr}"), Duration::from_secs(5));
    let reqs: Vec<_> = (0..50)
        .map(|i| req(&format!("r{i}"), &format!("zin nummer {i}")))
        .collect();
    let out = adapter.score_batch(&reqs).unwrap();
    for (r, o) in reqs.iter().zip(out) {
        assert_eq!(o, ScoreOutcome::Score(mock_score(&r.text)));
    }
}

#[test]
fn remote_partial_failure_is_isolated() {
    let addr = spawn(router(MockOptions {
        fail_on: Some("kapot".into()),
        ..Default::default()
    }));
    let adapter = RemoteAdapter::new(&format!("http://{addr}"), Duration::from_secs(5)).with_model_id("mock");
    let reqs = vec![req("a", "goed"), req("b", "kapot"), req("c", "ook goed")];
    let opts = BatchOptions {
        chunk_size: 2,
        retries: 1,
        ..Default::default()
    };
    let preds = classify_batch(&adapter, &reqs, &opts).unwrap();
    assert_eq!(preds[0].as_ref().unwrap().item_id, "a");
    assert!(matches!(&preds[1], Err(ClassifierError::InferenceError { id, .. }) if id == "b"));
    assert_eq!(preds[2].as_ref().unwrap().item_id, "c");
    assert_eq!(preds[2].as_ref().unwrap().model_id, "mock");
}

#[test]
fn unreachable_remote_is_unavailable() {
    let adapter = RemoteAdapter::new("http://127.0.0.1:9", Duration::from_millis(500));
    let err = classify_batch(
        &adapter,
        &[req("a", "x")],
        &BatchOptions {
            retries: 0,
            ..Default::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, ClassifierError::AdapterUnavailable(_)));
}

/// Fails the first call outright, then answers.
struct Flaky {
    calls: AtomicUsize,
}

impl Classifier for Flaky {
    fn model_id(&self) -> &str {
        "flaky"
    }

    fn score_batch(&self, requests: &[AdapterRequest]) -> Result<Vec<ScoreOutcome>, ClassifierError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) == 0 {
            return Err(ClassifierError::AdapterUnavailable("warming up".into()));
        }
        Ok(requests.iter().map(|_| ScoreOutcome::Score(0.7)).collect())
    }
}

#[test]
fn failed_chunks_are_retried() {
    let clf = Flaky {
        calls: AtomicUsize::new(0),
    };
    let opts = BatchOptions {
        chunk_size: 10,
        max_in_flight: 1,
        retries: 1,
        ..Default::default()
    };
    let out = score_all(&clf, &[req("a", "x"), req("b", "y")], &opts).unwrap();
    assert!(out.iter().all(|(o, _)| *o == ScoreOutcome::Score(0.7)));
}

fn chat_server(seen: Arc<parking_lot::Mutex<Vec<Value>>>) -> SocketAddr {
    let app = Router::new().route(
        "/v1/chat/completions",
        post(move |Json(body): Json<Value>| {
            let seen = Arc::clone(&seen);
            async move {
                let prompt = body["messages"][0]["content"].as_str().unwrap_or_default().to_string();
                seen.lock().push(body);
                let reply = if prompt.contains("MARK-ONE") {
                    "1"
                } else if prompt.contains("MARK-ZERO") {
                    " 0.\n"
                } else {
                    "Ik denk 1"
                };
                Json(json!({"choices": [{"message": {"role": "assistant", "content": reply}}]}))
            }
        }),
    );
    spawn(app)
}

#[test]
fn chat_client_parses_strictly_and_abstains() {
    let seen = Arc::new(parking_lot::Mutex::new(Vec::new()));
    let addr = chat_server(Arc::clone(&seen));
    let cfg = ChatConfig::new(format!("http://{addr}/v1/chat/completions"), "llm");
    let client = ChatCompletionClient::new(cfg, PromptTemplate::dutch());
    let reqs = vec![req("1", "MARK-ONE"), req("0", "MARK-ZERO"), req("?", "twijfel")];
    let preds = classify_batch(&client, &reqs, &BatchOptions::default()).unwrap();
    let p: Vec<_> = preds.into_iter().map(Result::unwrap).collect();
    assert_eq!(p[0].label, BinaryLabel::Biased);
    assert!(!p[0].abstained);
    assert_eq!(p[1].label, BinaryLabel::NotBiased);
    assert!(p[2].abstained);
    assert_eq!(p[2].label, BinaryLabel::NotBiased);
    let bodies = seen.lock();
    assert_eq!(bodies.len(), 3);
    for b in bodies.iter() {
        assert_eq!(b["temperature"], 0.0);
        assert_eq!(b["max_tokens"], 4);
        assert_eq!(b["model"], "llm");
    }
}

#[test]
fn chat_client_without_token_is_unavailable() {
    let cfg = ChatConfig {
        token_env: Some("BIASCORPUS_TEST_TOKEN_THAT_IS_NOT_SET".into()),
        ..ChatConfig::new("http://127.0.0.1:9/v1/chat/completions", "llm")
    };
    let client = ChatCompletionClient::new(cfg, PromptTemplate::dutch());
    let err = client.score_batch(&[req("a", "x")]).unwrap_err();
    assert!(matches!(err, ClassifierError::AdapterUnavailable(_)));
}

const EXPECTED_DUTCH: &str = "Je bent een expert op het gebied van bias, stereotypering en discriminatie. Je taak is om zinnen te classificeren volgens de volgende definitie: een zin bevat bias als de zin een stereotype, uitsluiting, machtsverhoudingen of vooroordelen bevat, die impliciet of expliciet kunnen zijn, en die gaan over een af te bakenen groep personen, OF als een zin een woord bevat wat moet worden vermeden omdat het bias bevat. Geef de volgende zin een label, antwoord alleen met 0 of 1. Geef de zin het label 0 voor niet-biased en 1 voor biased. De zin is: ";

#[test]
fn dutch_prompt_is_byte_identical() {
    let s = "de stroom migranten [item] bleef groot";
    let rendered = PromptTemplate::dutch().render(s).unwrap();
    assert_eq!(rendered.as_bytes(), format!("{EXPECTED_DUTCH}{s}.").as_bytes());
    assert_eq!(PromptTemplate::default(), PromptTemplate::dutch());
}

#[test]
fn templates_need_exactly_one_placeholder() {
    assert!(matches!(
        PromptTemplate::new("geen plek", "nl"),
        Err(ClassifierError::MissingPlaceholder)
    ));
    assert!(matches!(
        PromptTemplate::new("[item] en [item]", "nl"),
        Err(ClassifierError::InvalidTemplate(_))
    ));
    assert_eq!(
        PromptTemplate::new("Zin: [item]", "nl").unwrap().render("x").unwrap(),
        "Zin: x"
    );
}

#[test]
fn parser_accepts_only_bare_digits() {
    for ok in ["0", "1", " 1 ", "1.", "\"0\"", "**1**", "(0)", "1\n"] {
        assert!(
            matches!(parse_generative_response(ok), ParsedResponse::Label(_)),
            "{ok:?}"
        );
    }
    for bad in [
        "", "01", "10", "-1", "+1", "2", "1 0", "één", "ja", "label: 1", "1/0", "0.5", "1e0", "true",
    ] {
        assert_eq!(parse_generative_response(bad), ParsedResponse::Abstain, "{bad:?}");
    }
}
