//! OpenAI-compatible chat-completions and embeddings clients.

use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{BackendCall, BackendError, BackendReply, ChatBackend, Embedder};

/// Caps the number of requests in flight at once.
#[derive(Debug)]
pub struct InFlightLimiter {
    capacity: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a InFlightLimiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_use.lock().expect("limiter lock");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

impl InFlightLimiter {
    pub fn new(capacity: usize) -> Self {
        InFlightLimiter {
            capacity: capacity.max(1),
            in_use: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_use.lock().expect("limiter lock");
        while *n >= self.capacity {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n += 1;
        Permit(self)
    }

    pub fn in_use(&self) -> usize {
        *self.in_use.lock().expect("limiter lock")
    }
}

fn classify_status(status: StatusCode, body: &str) -> BackendError {
    let msg = format!("HTTP {status}: {}", body.chars().take(300).collect::<String>());
    if status == StatusCode::TOO_MANY_REQUESTS
        || status == StatusCode::REQUEST_TIMEOUT
        || status.is_server_error()
    {
        BackendError::Transient(msg)
    } else {
        BackendError::Fatal(msg)
    }
}

fn transport(e: reqwest::Error) -> BackendError {
    if e.is_timeout() || e.is_connect() || e.is_request() {
        BackendError::Transient(e.to_string())
    } else {
        BackendError::Fatal(e.to_string())
    }
}

fn image_data_url(root: Option<&Path>, path: &str) -> Result<String, BackendError> {
    let full = match root {
        Some(r) if Path::new(path).is_relative() => r.join(path),
        _ => PathBuf::from(path),
    };
    let bytes = std::fs::read(&full)
        .map_err(|e| BackendError::Fatal(format!("cannot read image {path}: {e}")))?;
    let mime = match Path::new(path)
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/png",
    };
    Ok(format!(
        "data:{mime};base64,{}",
        base64::engine::general_purpose::STANDARD.encode(bytes)
    ))
}

pub struct HttpChatBackend {
    client: Client,
    base_url: String,
    model: String,
    vision_model: String,
    api_key: Option<String>,
    limiter: InFlightLimiter,
    attachment_root: Option<PathBuf>,
}

impl HttpChatBackend {
    pub fn new(
        base_url: &str,
        model: &str,
        vision_model: &str,
        api_key: Option<String>,
        max_in_flight: usize,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Fatal(e.to_string()))?;
        Ok(HttpChatBackend {
            client,
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            vision_model: vision_model.to_string(),
            api_key,
            limiter: InFlightLimiter::new(max_in_flight),
            attachment_root: None,
        })
    }

    /// Relative attachment paths are resolved against `root`.
    pub fn with_attachment_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.attachment_root = Some(root.into());
        self
    }

    fn body(&self, call: &BackendCall<'_>) -> Result<Value, BackendError> {
        let use_vision = call.prompt.multimodal && !call.attachments.is_empty();
        let content = if use_vision {
            let mut parts = vec![json!({"type": "text", "text": call.prompt.text})];
            for path in call.attachments {
                parts.push(json!({
                    "type": "image_url",
                    "image_url": {"url": image_data_url(self.attachment_root.as_deref(), path)?}
                }));
            }
            Value::Array(parts)
        } else {
            Value::String(call.prompt.text.clone())
        };
        Ok(json!({
            "model": if use_vision { &self.vision_model } else { &self.model },
            "temperature": call.prompt.temperature,
            "messages": [{"role": "user", "content": content}],
        }))
    }
}

impl ChatBackend for HttpChatBackend {
    fn id(&self) -> &str {
        &self.model
    }

    fn send(&self, call: &BackendCall<'_>) -> Result<BackendReply, BackendError> {
        let body = self.body(call)?;
        let _permit = self.limiter.acquire();
        let started = Instant::now();
        let mut req = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(transport)?;
        let status = resp.status();
        let text = resp.text().map_err(transport)?;
        if !status.is_success() {
            return Err(classify_status(status, &text));
        }
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Fatal(format!("malformed completion body: {e}")))?;
        let content = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Fatal("completion body has no message content".into()))?;
        Ok(BackendReply {
            text: content.to_string(),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

pub struct HttpEmbedder {
    client: Client,
    base_url: String,
    model: String,
    api_key: Option<String>,
    limiter: InFlightLimiter,
}

impl HttpEmbedder {
    pub fn new(
        base_url: &str,
        model: &str,
        api_key: Option<String>,
        max_in_flight: usize,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Fatal(e.to_string()))?;
        Ok(HttpEmbedder {
            client,
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            limiter: InFlightLimiter::new(max_in_flight),
        })
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let _permit = self.limiter.acquire();
        let mut req = self
            .client
            .post(format!("{}/embeddings", self.base_url))
            .json(&json!({"model": self.model, "input": texts}));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(transport)?;
        let status = resp.status();
        let text = resp.text().map_err(transport)?;
        if !status.is_success() {
            return Err(classify_status(status, &text));
        }
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Fatal(format!("malformed embeddings body: {e}")))?;
        let data = v
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::Fatal("embeddings body has no data array".into()))?;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let index = item
                .get("index")
                .and_then(Value::as_u64)
                .map(|i| i as usize)
                .unwrap_or(pos);
            let values = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| BackendError::Fatal("embedding item has no vector".into()))?
                .iter()
                .map(|x| x.as_f64().unwrap_or(0.0))
                .collect();
            rows.push((index, values));
        }
        rows.sort_by_key(|(i, _)| *i);
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }
}
