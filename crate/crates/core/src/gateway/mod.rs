//! Uniform access to chat and embedding providers.
//!
//! Every agent call goes through [`Gateway::complete`], which renders a
//! [`ChatRequest`] from its template, retries transient transport failures with
//! exponential backoff, and returns the verbatim model text wrapped in a
//! [`ModelExchange`]. Stage code talks to the gateway through a [`Session`],
//! which keeps a per-task transcript so results can be merged in task order
//! regardless of how tasks were scheduled.

pub mod http;
pub mod mock;
pub mod template;

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use http::{HttpChatBackend, HttpEmbedder, InFlightLimiter};
pub use mock::{load_mock_script, HashEmbedder, MockBackend, ScriptEntry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub template_id: String,
    pub variables: BTreeMap<String, String>,
    #[serde(default)]
    pub attachments: Vec<String>,
    pub max_attempts: u32,
    /// Human-readable match key for scripted replay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alias: Option<String>,
    /// Set on the single corrective re-prompt after a malformed response.
    #[serde(default)]
    pub reprompt: bool,
}

impl ChatRequest {
    pub fn new(template_id: &str) -> Self {
        ChatRequest {
            template_id: template_id.to_string(),
            variables: BTreeMap::new(),
            attachments: Vec::new(),
            max_attempts: 3,
            alias: None,
            reprompt: false,
        }
    }

    pub fn var(mut self, name: &str, value: impl Into<String>) -> Self {
        self.variables.insert(name.to_string(), value.into());
        self
    }

    pub fn attach(mut self, images: impl IntoIterator<Item = String>) -> Self {
        self.attachments.extend(images);
        self
    }

    pub fn alias(mut self, alias: impl Into<String>) -> Self {
        self.alias = Some(alias.into());
        self
    }

    pub fn max_attempts(mut self, n: u32) -> Self {
        self.max_attempts = n.max(1);
        self
    }

    /// The corrective follow-up request issued after a parse failure.
    pub fn as_reprompt(&self) -> Self {
        let mut next = self.clone();
        next.reprompt = true;
        next
    }

    pub fn render(&self) -> Result<RenderedPrompt> {
        let template = template::lookup(&self.template_id)
            .ok_or_else(|| Error::Template(format!("unknown template `{}`", self.template_id)))?;
        if !self.attachments.is_empty() && !template.multimodal {
            return Err(Error::Template(format!(
                "template `{}` does not accept image attachments",
                self.template_id
            )));
        }
        let mut text = template::render(template, &self.variables)?;
        if self.reprompt {
            text.push_str(template::REPROMPT_SUFFIX);
        }
        let sha256 = prompt_hash(&text);
        Ok(RenderedPrompt {
            text,
            sha256,
            temperature: template.temperature,
            multimodal: template.multimodal,
        })
    }
}

pub fn prompt_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone)]
pub struct RenderedPrompt {
    pub text: String,
    pub sha256: String,
    pub temperature: f64,
    pub multimodal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelExchange {
    pub request: ChatRequest,
    pub prompt: String,
    pub prompt_sha256: String,
    pub raw_response: String,
    pub attempt: u32,
    pub backend_id: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Unit,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub norm_kind: NormKind,
}

impl EmbeddingVector {
    pub fn raw(values: Vec<f64>) -> Self {
        EmbeddingVector {
            values,
            norm_kind: NormKind::Raw,
        }
    }

    /// Unit-normalizes `values`. A zero vector stays zero and is marked raw.
    pub fn unit(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return EmbeddingVector::raw(values);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        EmbeddingVector {
            values,
            norm_kind: NormKind::Unit,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        cosine(&self.values, &other.values)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; 0 when either side has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// One call as seen by a chat backend.
#[derive(Debug, Clone)]
pub struct BackendCall<'a> {
    pub template_id: &'a str,
    pub prompt: &'a RenderedPrompt,
    pub alias: Option<&'a str>,
    pub reprompt: bool,
    pub attachments: &'a [String],
    pub attempt: u32,
}

#[derive(Debug, Clone)]
pub struct BackendReply {
    pub text: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone)]
pub enum BackendError {
    /// Retryable: connection failures, 429, 5xx.
    Transient(String),
    Fatal(String),
    ScriptMiss {
        template_id: String,
        alias: Option<String>,
        hash: String,
    },
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;
    fn send(&self, call: &BackendCall<'_>) -> Result<BackendReply, BackendError>;
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub base_delay: Duration,
    pub max_delay: Duration,
    pub embed_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            embed_attempts: 3,
        }
    }
}

impl RetryPolicy {
    pub fn immediate() -> Self {
        RetryPolicy {
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
            embed_attempts: 3,
        }
    }

    /// Delay before attempt `next` (2-based): base * 2^(next-2), capped.
    pub fn delay_before(&self, next: u32) -> Duration {
        let exp = next.saturating_sub(2).min(20);
        self.base_delay
            .saturating_mul(1u32 << exp)
            .min(self.max_delay)
    }
}

pub struct Gateway {
    chat: Arc<dyn ChatBackend>,
    embedder: Arc<dyn Embedder>,
    retry: RetryPolicy,
    dimension: OnceLock<usize>,
}

impl Gateway {
    pub fn new(chat: Arc<dyn ChatBackend>, embedder: Arc<dyn Embedder>) -> Self {
        Gateway {
            chat,
            embedder,
            retry: RetryPolicy::default(),
            dimension: OnceLock::new(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn backend_id(&self) -> &str {
        self.chat.id()
    }

    pub fn embedder_id(&self) -> &str {
        self.embedder.id()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dimension.get().copied()
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ModelExchange> {
        let prompt = req.render()?;
        let max_attempts = req.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            let call = BackendCall {
                template_id: &req.template_id,
                prompt: &prompt,
                alias: req.alias.as_deref(),
                reprompt: req.reprompt,
                attachments: &req.attachments,
                attempt,
            };
            match self.chat.send(&call) {
                Ok(reply) => {
                    return Ok(ModelExchange {
                        request: req.clone(),
                        prompt: prompt.text,
                        prompt_sha256: prompt.sha256,
                        raw_response: reply.text,
                        attempt,
                        backend_id: self.chat.id().to_string(),
                        latency_ms: reply.latency_ms,
                    })
                }
                Err(BackendError::Transient(message)) => {
                    if attempt >= max_attempts {
                        return Err(Error::Transport {
                            attempts: attempt,
                            message,
                        });
                    }
                    tracing::warn!(template = %req.template_id, attempt, %message, "transient failure, retrying");
                    attempt += 1;
                    let delay = self.retry.delay_before(attempt);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
                Err(BackendError::Fatal(message)) => {
                    return Err(Error::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(BackendError::ScriptMiss {
                    template_id,
                    alias,
                    hash,
                }) => {
                    return Err(Error::ScriptMiss {
                        template_id,
                        alias,
                        hash,
                    })
                }
            }
        }
    }

    /// Embeds `texts` in order; every output is unit-normalized.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::EmptyInput("embed called with no texts".into()));
        }
        let mut attempt = 1;
        let raw = loop {
            match self.embedder.embed(texts) {
                Ok(v) => break v,
                Err(BackendError::Transient(message)) if attempt < self.retry.embed_attempts => {
                    tracing::warn!(attempt, %message, "embedding failure, retrying");
                    attempt += 1;
                    let delay = self.retry.delay_before(attempt);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
                Err(BackendError::Transient(message)) | Err(BackendError::Fatal(message)) => {
                    return Err(Error::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(BackendError::ScriptMiss {
                    template_id,
                    alias,
                    hash,
                }) => {
                    return Err(Error::ScriptMiss {
                        template_id,
                        alias,
                        hash,
                    })
                }
            }
        };
        if raw.len() != texts.len() {
            return Err(Error::Transport {
                attempts: attempt,
                message: format!(
                    "embedder returned {} vectors for {} inputs",
                    raw.len(),
                    texts.len()
                ),
            });
        }
        let mut out = Vec::with_capacity(raw.len());
        for values in raw {
            let expected = *self.dimension.get_or_init(|| values.len());
            if values.len() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    got: values.len(),
                });
            }
            out.push(EmbeddingVector::unit(values));
        }
        Ok(out)
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.embed(&[text.to_string()])?.remove(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub subject: String,
    pub message: String,
}

/// Result of a call whose response went through a parser, with at most one
/// corrective re-prompt.
#[derive(Debug)]
pub struct Parsed<T> {
    pub result: Result<T>,
    pub reprompted: bool,
}

/// Per-task handle on the gateway that records exchanges and warnings.
pub struct Session<'g> {
    gateway: &'g Gateway,
    pub exchanges: Vec<ModelExchange>,
    pub flags: Vec<Flag>,
}

impl<'g> Session<'g> {
    pub fn new(gateway: &'g Gateway) -> Self {
        Session {
            gateway,
            exchanges: Vec::new(),
            flags: Vec::new(),
        }
    }

    pub fn gateway(&self) -> &'g Gateway {
        self.gateway
    }

    pub fn complete(&mut self, req: &ChatRequest) -> Result<String> {
        let exchange = self.gateway.complete(req)?;
        let text = exchange.raw_response.clone();
        self.exchanges.push(exchange);
        Ok(text)
    }

    /// Issues `req`, parses the response, and on a protocol error issues
    /// exactly one re-prompt. Transport errors propagate; a second protocol
    /// error is returned in [`Parsed::result`] for the caller's fallback.
    pub fn ask<T>(
        &mut self,
        req: &ChatRequest,
        parse: impl Fn(&str) -> Result<T>,
    ) -> Result<Parsed<T>> {
        let raw = self.complete(req)?;
        match parse(&raw) {
            Ok(v) => Ok(Parsed {
                result: Ok(v),
                reprompted: false,
            }),
            Err(e) if e.is_protocol() => {
                tracing::debug!(template = %req.template_id, error = %e, "re-prompting");
                let raw = self.complete(&req.as_reprompt())?;
                Ok(Parsed {
                    result: parse(&raw),
                    reprompted: true,
                })
            }
            Err(e) => Err(e),
        }
    }

    pub fn flag(&mut self, subject: impl Into<String>, message: impl Into<String>) {
        let flag = Flag {
            subject: subject.into(),
            message: message.into(),
        };
        tracing::warn!(subject = %flag.subject, message = %flag.message, "flagged");
        self.flags.push(flag);
    }

    pub fn absorb(&mut self, other: Session<'_>) {
        self.exchanges.extend(other.exchanges);
        self.flags.extend(other.flags);
    }
}

/// SHA-256 over the JSON serialization of each exchange, in order.
pub fn transcript_hash(exchanges: &[ModelExchange]) -> String {
    let mut hasher = Sha256::new();
    for ex in exchanges {
        hasher.update(serde_json::to_vec(ex).expect("exchange serializes"));
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}
