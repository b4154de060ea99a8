use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rankr1::backend::{HttpBackend, HttpConfig, RetryPolicy};
use rankr1::prompts::{build_prompt, PromptMode};
use rankr1::{BackendError, CompletionBackend, Document, FinishReason, Query, RenderedPrompt, SamplingParams};

#[derive(Debug, Clone)]
struct Recorded {
    headers: Vec<String>,
    body: serde_json::Value,
}

/// Serves `responses` (status, body) in order, one per connection, and
/// records every request.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Recorded>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let log = Arc::new(Mutex::new(Vec::new()));
    let sink = Arc::clone(&log);
    thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut headers = Vec::new();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
                headers.push(line);
            }
            let mut raw = vec![0; length];
            reader.read_exact(&mut raw).unwrap();
            sink.lock().unwrap().push(Recorded {
                headers,
                body: serde_json::from_slice(&raw).unwrap(),
            });
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, log)
}

fn choices(texts: &[(&str, &str)]) -> String {
    let choices: Vec<_> = texts
        .iter()
        .enumerate()
        .map(|(i, (t, f))| serde_json::json!({"index": i, "message": {"role": "assistant", "content": t}, "finish_reason": f}))
        .collect();
    serde_json::json!({"id": "x", "choices": choices}).to_string()
}

fn prompt() -> RenderedPrompt {
    let docs = [
        Document {
            id: "a".into(),
            text: "alpha".into(),
        },
        Document {
            id: "b".into(),
            text: "beta".into(),
        },
    ];
    let refs: Vec<&Document> = docs.iter().collect();
    let query = Query {
        id: "q".into(),
        text: "greek letters".into(),
    };
    build_prompt(&query, &refs, PromptMode::RankR1, None).unwrap()
}

fn config(url: &str) -> HttpConfig {
    let mut config = HttpConfig::new(url, "test-model");
    config.retry = RetryPolicy {
        max_retries: 2,
        base_delay: Duration::from_millis(5),
    };
    config.timeout = Duration::from_secs(10);
    config
}

#[test]
fn sends_chat_request_and_parses_choices() {
    let (url, log) = serve(vec![(200, choices(&[("<answer>[2]</answer>", "stop")]))]);
    let mut config = config(&url);
    config.api_key = Some("secret".into());
    let backend = HttpBackend::new(config).unwrap();
    let p = prompt();
    let params = SamplingParams {
        seed: Some(7),
        ..SamplingParams::greedy()
    };
    let out = backend.complete(&p, &params).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].text, "<answer>[2]</answer>");
    assert_eq!(out[0].finish_reason, FinishReason::Stop);

    let log = log.lock().unwrap();
    let req = &log[0];
    assert!(req.headers[0].starts_with("POST /v1/chat/completions "));
    assert!(req
        .headers
        .iter()
        .any(|h| h.eq_ignore_ascii_case("authorization: Bearer secret")));
    assert_eq!(req.body["model"], "test-model");
    assert_eq!(req.body["n"], 1);
    assert_eq!(req.body["seed"], 7);
    assert_eq!(req.body["temperature"], 0.0);
    assert_eq!(req.body["max_tokens"], 2048);
    assert_eq!(req.body["messages"][0]["role"], "system");
    assert_eq!(req.body["messages"][0]["content"], p.system.as_str());
    assert_eq!(req.body["messages"][1]["content"], p.user.as_str());
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, log) = serve(vec![
        (503, "busy".into()),
        (429, "slow down".into()),
        (200, choices(&[("ok", "length")])),
    ]);
    let backend = HttpBackend::new(config(&url)).unwrap();
    let out = backend.complete(&prompt(), &SamplingParams::greedy()).unwrap();
    assert_eq!(out[0].finish_reason, FinishReason::Length);
    assert_eq!(log.lock().unwrap().len(), 3);
}

#[test]
fn surfaces_error_after_retries_exhausted() {
    let (url, log) = serve(vec![(500, "boom".into()), (500, "boom".into()), (500, "boom".into())]);
    let backend = HttpBackend::new(config(&url)).unwrap();
    let err = backend.complete(&prompt(), &SamplingParams::greedy()).unwrap_err();
    assert!(
        matches!(err, BackendError::Status { status: 500, ref body } if body == "boom"),
        "{err:?}"
    );
    assert_eq!(log.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, log) = serve(vec![(400, "bad request".into())]);
    let backend = HttpBackend::new(config(&url)).unwrap();
    let err = backend.complete(&prompt(), &SamplingParams::greedy()).unwrap_err();
    assert!(matches!(err, BackendError::Status { status: 400, .. }));
    assert_eq!(log.lock().unwrap().len(), 1);
}

#[test]
fn tops_up_when_server_ignores_n() {
    let (url, log) = serve(vec![
        (200, choices(&[("a", "stop"), ("b", "stop"), ("c", "stop")])),
        (200, choices(&[("d", "stop"), ("e", "stop"), ("f", "stop")])),
        (200, choices(&[("g", "stop"), ("h", "stop"), ("i", "stop")])),
    ]);
    let backend = HttpBackend::new(config(&url)).unwrap();
    let out = backend.complete(&prompt(), &SamplingParams::default()).unwrap();
    let texts: Vec<&str> = out.iter().map(|c| c.text.as_str()).collect();
    assert_eq!(texts, ["a", "b", "c", "d", "e", "f", "g", "h"]);
    let ns: Vec<u64> = log
        .lock()
        .unwrap()
        .iter()
        .map(|r| r.body["n"].as_u64().unwrap())
        .collect();
    assert_eq!(ns, [8, 5, 2]);
}

#[test]
fn malformed_response_is_an_error() {
    let (url, _log) = serve(vec![(200, "{\"nope\": 1}".into())]);
    let backend = HttpBackend::new(config(&url)).unwrap();
    let err = backend.complete(&prompt(), &SamplingParams::greedy()).unwrap_err();
    assert!(matches!(err, BackendError::Response(_)), "{err:?}");
}

#[test]
fn unreachable_endpoint_reports_attempts() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = HttpBackend::new(config(&format!("http://127.0.0.1:{port}"))).unwrap();
    match backend.complete(&prompt(), &SamplingParams::greedy()).unwrap_err() {
        BackendError::Transport { attempts, .. } => assert_eq!(attempts, 3),
        other => panic!("{other:?}"),
    }
}
