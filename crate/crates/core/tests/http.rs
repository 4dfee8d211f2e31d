use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use qaforge_core::gateway::{
    template, ChatRequest, Gateway, HashEmbedder, HttpChatBackend, HttpEmbedder, RetryPolicy,
};
use qaforge_core::Error;
use serde_json::{json, Value};

struct Captured {
    path: String,
    authorization: Option<String>,
    body: Value,
}

/// Serves the given (status, body) replies in order, one connection each.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    std::thread::spawn(move || {
        for (status, body) in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut length = 0;
            let mut authorization = None;
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
                    "authorization" => authorization = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut raw = vec![0; length];
            reader.read_exact(&mut raw).unwrap();
            log.lock().unwrap().push(Captured {
                path: request_line.split_whitespace().nth(1).unwrap_or("").to_string(),
                authorization,
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
    (url, seen)
}

fn completion(text: &str) -> (u16, String) {
    (200, json!({"choices": [{"message": {"content": text}}]}).to_string())
}

fn chat_gateway(url: &str, key: Option<&str>) -> Gateway {
    let chat = HttpChatBackend::new(url, "text-model", "vision-model", key.map(String::from), 2, Duration::from_secs(5))
        .unwrap()
        .with_attachment_root(env!("CARGO_MANIFEST_DIR").to_string() + "/tests/fixtures/e2e/corpus");
    Gateway::new(Arc::new(chat), Arc::new(HashEmbedder::new(8, 0))).with_retry(RetryPolicy::immediate())
}

fn judge_request() -> ChatRequest {
    ChatRequest::new(template::JUDGE)
        .var("expert_persona", "analyst")
        .var("domain", "finance")
        .var("content", "text")
        .var("question", "q")
        .var("answer", "a")
}

#[test]
fn chat_success_sends_text_model_and_bearer() {
    let (url, seen) = serve(vec![completion("hello")]);
    let ex = chat_gateway(&url, Some("sk-test")).complete(&judge_request()).unwrap();
    assert_eq!(ex.raw_response, "hello");
    assert_eq!(ex.attempt, 1);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/chat/completions");
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer sk-test"));
    assert_eq!(seen[0].body["model"], "text-model");
    assert!(seen[0].body["messages"][0]["content"].as_str().unwrap().contains("finance"));
}

#[test]
fn chat_retries_server_errors() {
    let (url, seen) = serve(vec![(503, "busy".into()), completion("ok")]);
    let ex = chat_gateway(&url, None).complete(&judge_request()).unwrap();
    assert_eq!(ex.raw_response, "ok");
    assert_eq!(ex.attempt, 2);
    assert!(seen.lock().unwrap()[0].authorization.is_none());
}

#[test]
fn chat_gives_up_after_max_attempts() {
    let (url, _) = serve(vec![(500, "a".into()), (502, "b".into())]);
    let err = chat_gateway(&url, None)
        .complete(&judge_request().max_attempts(2))
        .unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 2, .. }), "{err}");
}

#[test]
fn chat_client_error_is_fatal() {
    let (url, seen) = serve(vec![(400, "bad".into()), completion("never")]);
    let err = chat_gateway(&url, None).complete(&judge_request()).unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 1, .. }));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn chat_malformed_body_is_fatal() {
    let (url, _) = serve(vec![(200, "{\"choices\": []}".into())]);
    let err = chat_gateway(&url, None).complete(&judge_request()).unwrap_err();
    assert!(err.to_string().contains("no message content"), "{err}");
}

#[test]
fn images_are_sent_as_data_urls_to_vision_model() {
    let (url, seen) = serve(vec![completion("a chart")]);
    let req = ChatRequest::new(template::DESCRIBE)
        .var("image", "img/speed.png")
        .var("context", "around")
        .attach(["img/speed.png".to_string()]);
    chat_gateway(&url, None).complete(&req).unwrap();
    let seen = seen.lock().unwrap();
    let body = &seen[0].body;
    assert_eq!(body["model"], "vision-model");
    let parts = body["messages"][0]["content"].as_array().unwrap();
    assert_eq!(parts[0]["type"], "text");
    let data = parts[1]["image_url"]["url"].as_str().unwrap();
    assert!(data.starts_with("data:image/png;base64,iVBOR"), "{data}");
}

#[test]
fn missing_image_fails_without_a_request() {
    let (url, seen) = serve(vec![]);
    let req = ChatRequest::new(template::DESCRIBE)
        .var("image", "img/none.png")
        .var("context", "")
        .attach(["img/none.png".to_string()]);
    assert!(chat_gateway(&url, None).complete(&req).is_err());
    assert!(seen.lock().unwrap().is_empty());
}

fn embed_gateway(url: &str) -> Gateway {
    let chat = HttpChatBackend::new(url, "m", "v", None, 1, Duration::from_secs(5)).unwrap();
    let embedder = HttpEmbedder::new(url, "embed-model", Some("k".into()), 1, Duration::from_secs(5)).unwrap();
    Gateway::new(Arc::new(chat), Arc::new(embedder)).with_retry(RetryPolicy::immediate())
}

#[test]
fn embeddings_are_reordered_and_normalized() {
    let body = json!({"data": [
        {"index": 1, "embedding": [0.0, 2.0]},
        {"index": 0, "embedding": [3.0, 4.0]},
    ]});
    let (url, seen) = serve(vec![(429, "slow down".into()), (200, body.to_string())]);
    let out = embed_gateway(&url).embed(&["a".into(), "b".into()]).unwrap();
    assert!((out[0].values[0] - 0.6).abs() < 1e-12 && (out[0].values[1] - 0.8).abs() < 1e-12);
    assert_eq!(out[1].values, vec![0.0, 1.0]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[1].path, "/embeddings");
    assert_eq!(seen[1].body["input"], json!(["a", "b"]));
    assert_eq!(seen[1].authorization.as_deref(), Some("Bearer k"));
}

#[test]
fn embedding_dimension_is_pinned() {
    let first = json!({"data": [{"embedding": [1.0, 0.0]}]});
    let second = json!({"data": [{"embedding": [1.0, 0.0, 0.0]}]});
    let (url, _) = serve(vec![(200, first.to_string()), (200, second.to_string())]);
    let gw = embed_gateway(&url);
    gw.embed_one("x").unwrap();
    let err = gw.embed_one("y").unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { expected: 2, got: 3 }));
}

#[test]
fn embedding_count_mismatch_is_an_error() {
    let body = json!({"data": [{"embedding": [1.0]}]});
    let (url, _) = serve(vec![(200, body.to_string())]);
    assert!(embed_gateway(&url).embed(&["a".into(), "b".into()]).is_err());
}
