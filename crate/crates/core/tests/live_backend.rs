use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde_json::Value;

use tomuq::corpus::{Corpus, CorpusTag, DialogueRecord, LikertAnnotation, Perspective, Turn};
use tomuq::gateway::live::{LiveBackend, LiveConfig};
use tomuq::gateway::{
    build_prompt, BackendError, CompletionBackend, CompletionRequest, EmbeddingBackend, Gateway, GatewayError,
    PromptBundle, PromptOptions, SamplingOptions, Task,
};

struct Captured {
    path: String,
    auth: Option<String>,
    body: Value,
}

/// Serves one scripted `(status, body)` reply per connection and reports
/// each request it saw.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line.split_whitespace().nth(1).unwrap_or_default().to_string();
            let (mut length, mut auth) = (0, None);
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut raw = vec![0; length];
            reader.read_exact(&mut raw).unwrap();
            let _ = tx.send(Captured {
                path,
                auth,
                body: serde_json::from_slice(&raw).unwrap_or(Value::Null),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (base, rx)
}

fn config(base: &str) -> LiveConfig {
    LiveConfig {
        base_url: base.to_string(),
        api_key: Some("secret".into()),
        model: "chat-model".into(),
        embedding_model: Some("embed-model".into()),
        timeout: Duration::from_secs(10),
        min_interval: Duration::ZERO,
    }
}

fn prompt() -> PromptBundle {
    let annotation = |rater: &str, perspective| LikertAnnotation {
        question_key: "likes_partner".into(),
        rater_id: rater.into(),
        subject_id: "b".into(),
        value: 60,
        scale_min: 1,
        scale_max: 100,
        perspective,
    };
    let record = DialogueRecord {
        id: "d1".into(),
        corpus_tag: CorpusTag::Synthetic,
        turns: vec![
            Turn {
                speaker: "a".into(),
                text: "hello".into(),
            },
            Turn {
                speaker: "b".into(),
                text: "hi".into(),
            },
        ],
        speakers: Default::default(),
        annotations: vec![
            annotation("b", Perspective::SelfReport),
            annotation("a", Perspective::PerceptionOfOther),
        ],
    };
    let corpus = Corpus::new(vec![record]).unwrap();
    build_prompt(
        Task::TwoTuq,
        &corpus.records()[0],
        "likes_partner",
        &PromptOptions::default(),
    )
    .unwrap()
}

fn chat(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

#[test]
fn chat_completion_round_trip() {
    let (base, rx) = serve(vec![(200, chat("Seems warm.\nCERTAINTY = 7"))]);
    let backend = LiveBackend::new(config(&base)).unwrap();
    let prompt = prompt();
    let sampling = SamplingOptions::default();
    let text = backend
        .complete(&CompletionRequest {
            prompt: &prompt,
            sampling: &sampling,
            sample_index: 0,
            attempt: 0,
        })
        .unwrap();
    assert_eq!(text, "Seems warm.\nCERTAINTY = 7");
    let seen = rx.recv().unwrap();
    assert_eq!(seen.path, "/v1/chat/completions");
    assert_eq!(seen.auth.as_deref(), Some("Bearer secret"));
    assert_eq!(seen.body["model"], "chat-model");
    assert_eq!(seen.body["messages"][0]["role"], "system");
    assert_eq!(seen.body["messages"][1]["content"], prompt.user_text.as_str());
    assert_eq!(seen.body["temperature"], 1.0);
}

#[test]
fn embedding_round_trip() {
    let reply = serde_json::json!({"data": [{"embedding": [0.25, -0.5, 1.0]}]}).to_string();
    let (base, rx) = serve(vec![(200, reply)]);
    let backend = LiveBackend::new(config(&base)).unwrap();
    assert_eq!(backend.embed(&prompt()).unwrap(), vec![0.25, -0.5, 1.0]);
    let seen = rx.recv().unwrap();
    assert_eq!(seen.path, "/v1/embeddings");
    assert_eq!(seen.body["model"], "embed-model");
}

#[test]
fn status_codes_map_to_error_kinds() {
    let (base, _rx) = serve(vec![
        (429, "{}".into()),
        (503, "{}".into()),
        (400, "{\"error\":\"bad\"}".into()),
    ]);
    let backend = LiveBackend::new(config(&base)).unwrap();
    let prompt = prompt();
    let sampling = SamplingOptions::default();
    let request = CompletionRequest {
        prompt: &prompt,
        sampling: &sampling,
        sample_index: 0,
        attempt: 0,
    };
    assert!(matches!(backend.complete(&request), Err(BackendError::Transport(_))));
    assert!(matches!(backend.complete(&request), Err(BackendError::Transport(_))));
    assert!(matches!(backend.complete(&request), Err(BackendError::Rejected(_))));
}

#[test]
fn gateway_retries_rate_limits_then_succeeds() {
    let (base, _rx) = serve(vec![(429, "{}".into()), (200, chat("CERTAINTY: 4"))]);
    let gateway =
        Gateway::new(Arc::new(LiveBackend::new(config(&base)).unwrap())).with_retry_delay(Duration::from_millis(1));
    let samples = gateway.complete(&prompt(), &SamplingOptions::default()).unwrap();
    assert_eq!(samples.len(), 1);
    assert_eq!(samples[0].probability(), Some(0.4));
}

#[test]
fn gateway_does_not_retry_rejections() {
    let (base, rx) = serve(vec![(401, "{}".into()), (200, chat("CERTAINTY = 4"))]);
    let gateway =
        Gateway::new(Arc::new(LiveBackend::new(config(&base)).unwrap())).with_retry_delay(Duration::from_millis(1));
    let err = gateway.complete(&prompt(), &SamplingOptions::default()).unwrap_err();
    assert!(matches!(
        err,
        GatewayError::Sample {
            source: BackendError::Rejected(_),
            ..
        }
    ));
    rx.recv().unwrap();
    assert!(rx.recv_timeout(Duration::from_millis(200)).is_err());
}

#[test]
fn missing_embedding_model_is_rejected() {
    let backend = LiveBackend::new(LiveConfig {
        embedding_model: None,
        ..config("http://127.0.0.1:9")
    })
    .unwrap();
    assert!(matches!(backend.embed(&prompt()), Err(BackendError::Rejected(_))));
}
