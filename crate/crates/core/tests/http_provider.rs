use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use eventevo::model::Relation;
use eventevo::provider::{EvolveRequest, HttpProvider, Provider, ProviderConfig, ProviderError, ProviderKind};

/// Serves `responses` in order (the last one repeats); returns the endpoint and a hit counter.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            let i = counter.fetch_add(1, Ordering::SeqCst);
            let (status, text) = &responses[i.min(responses.len() - 1)];
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (format!("http://{addr}/v1/chat/completions"), hits)
}

fn provider(endpoint: String, key_env: &str) -> HttpProvider {
    std::env::set_var(key_env, "test-key");
    HttpProvider::new(ProviderConfig {
        kind: ProviderKind::Http,
        endpoint,
        api_key_env: key_env.into(),
        max_retries: 2,
        timeout_ms: 5_000,
        backoff_ms: 1,
        ..ProviderConfig::default()
    })
    .unwrap()
}

fn request() -> EvolveRequest {
    EvolveRequest {
        parent_text: "The river flooded the village.".into(),
        caption: Some("a flooded street".into()),
        relations: vec![Relation::Result, Relation::After],
        n_per_relation: 1,
    }
}

fn chat(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

#[test]
fn parses_chat_completion() {
    let (url, hits) = serve(vec![(
        200,
        chat("1. Result: Families left their homes.\n2. After: Volunteers brought sandbags.\n3. Cause: ignored"),
    )]);
    let resp = provider(url, "EVENTEVO_TEST_KEY_OK").evolve(&request()).unwrap();
    assert_eq!(resp.candidates.len(), 2);
    assert_eq!(resp.candidates[0].relation, Relation::Result);
    assert_eq!(resp.candidates[1].text, "Volunteers brought sandbags.");
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn garbage_is_parse_failure() {
    let (url, _) = serve(vec![(200, chat("I cannot help with that."))]);
    let err = provider(url, "EVENTEVO_TEST_KEY_GARBAGE")
        .evolve(&request())
        .unwrap_err();
    assert!(matches!(err, ProviderError::ParseFailure), "{err:?}");
}

#[test]
fn server_errors_retry_then_unavailable() {
    let (url, hits) = serve(vec![(503, "busy".into())]);
    let err = provider(url, "EVENTEVO_TEST_KEY_503").evolve(&request()).unwrap_err();
    assert!(matches!(err, ProviderError::Unavailable { attempts: 3, .. }), "{err:?}");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn recovers_after_transient_error() {
    let (url, hits) = serve(vec![(500, "oops".into()), (200, chat("1. Result: Roads closed."))]);
    let resp = provider(url, "EVENTEVO_TEST_KEY_RECOVER").evolve(&request()).unwrap();
    assert_eq!(resp.candidates.len(), 1);
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, hits) = serve(vec![(401, "unauthorized".into())]);
    let err = provider(url, "EVENTEVO_TEST_KEY_401").evolve(&request()).unwrap_err();
    assert!(matches!(err, ProviderError::Unavailable { attempts: 1, .. }), "{err:?}");
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn missing_key_names_variable() {
    let err = HttpProvider::new(ProviderConfig {
        kind: ProviderKind::Http,
        api_key_env: "EVENTEVO_TEST_KEY_NEVER_SET".into(),
        ..ProviderConfig::default()
    })
    .err()
    .unwrap();
    assert!(err.to_string().contains("EVENTEVO_TEST_KEY_NEVER_SET"));
}
