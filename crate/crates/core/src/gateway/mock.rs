//! Scripted chat backend and hash-based embedder for deterministic replay.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendCall, BackendError, BackendReply, ChatBackend, Embedder};
use crate::error::{Error, Result};

/// Matches any call of the entry's template.
pub const WILDCARD: &str = "*";
/// Suffix appended to an alias when looking up the response to a re-prompt.
pub const RETRY_SUFFIX: &str = "!retry";

/// One line of a mock script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub template_id: String,
    /// Prompt SHA-256, an alias, or `*`.
    #[serde(rename = "match")]
    pub matcher: String,
    pub response: String,
}

#[derive(Debug, Default)]
pub struct MockBackend {
    entries: HashMap<(String, String), String>,
    transient_failures: u32,
}

impl MockBackend {
    /// Later entries with the same key replace earlier ones.
    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let entries = entries
            .into_iter()
            .map(|e| ((e.template_id, e.matcher), e.response))
            .collect();
        MockBackend {
            entries,
            transient_failures: 0,
        }
    }

    /// Fail the first `n` attempts of every call with a transient error.
    pub fn with_transient_failures(mut self, n: u32) -> Self {
        self.transient_failures = n;
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn get(&self, template_id: &str, key: &str) -> Option<&String> {
        self.entries.get(&(template_id.to_string(), key.to_string()))
    }

    /// Lookup order: prompt hash, alias (`alias!retry` first for re-prompts),
    /// then the template wildcard.
    pub fn resolve(&self, call: &BackendCall<'_>) -> Option<&String> {
        let tid = call.template_id;
        if let Some(r) = self.get(tid, &call.prompt.sha256) {
            return Some(r);
        }
        if let Some(alias) = call.alias {
            if call.reprompt {
                if let Some(r) = self.get(tid, &format!("{alias}{RETRY_SUFFIX}")) {
                    return Some(r);
                }
            }
            if let Some(r) = self.get(tid, alias) {
                return Some(r);
            }
        }
        self.get(tid, WILDCARD)
    }
}

impl ChatBackend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn send(&self, call: &BackendCall<'_>) -> Result<BackendReply, BackendError> {
        if call.attempt <= self.transient_failures {
            return Err(BackendError::Transient(format!(
                "injected fault on attempt {}",
                call.attempt
            )));
        }
        match self.resolve(call) {
            Some(text) => Ok(BackendReply {
                text: text.clone(),
                latency_ms: 0,
            }),
            None => Err(BackendError::ScriptMiss {
                template_id: call.template_id.to_string(),
                alias: call.alias.map(str::to_string),
                hash: call.prompt.sha256.clone(),
            }),
        }
    }
}

pub fn parse_mock_script(text: &str) -> Result<Vec<ScriptEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let entry: ScriptEntry = serde_json::from_str(line).map_err(|e| Error::ScriptParse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if super::template::lookup(&entry.template_id).is_none() {
            return Err(Error::ScriptParse {
                line: i + 1,
                message: format!("unknown template `{}`", entry.template_id),
            });
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn load_mock_script(path: &Path) -> Result<MockBackend> {
    let text = std::fs::read_to_string(path)?;
    Ok(MockBackend::from_entries(parse_mock_script(&text)?))
}

/// Deterministic embedder: each lowercase word is hashed (with the seed) into
/// a few signed coordinates, so texts sharing vocabulary get similar vectors.
/// Texts without words fall back to a hash of the whole string.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

const FEATURES_PER_TOKEN: usize = 2;

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim, seed }
    }

    fn scatter(&self, key: &[u8], weight: f64, out: &mut [f64]) {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(key);
        let digest = h.finalize();
        for f in 0..FEATURES_PER_TOKEN {
            let chunk: [u8; 8] = digest[f * 8..f * 8 + 8].try_into().expect("8 bytes");
            let bits = u64::from_le_bytes(chunk);
            let idx = (bits % self.dim as u64) as usize;
            let sign = if bits >> 63 == 1 { -1.0 } else { 1.0 };
            out[idx] += sign * weight;
        }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let mut any = false;
        for token in crate::text::words(text) {
            self.scatter(token.as_bytes(), 1.0, &mut out);
            any = true;
        }
        if !any || out.iter().all(|v| *v == 0.0) {
            self.scatter(format!("\u{0}{text}").as_bytes(), 1.0, &mut out);
        }
        out
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> &str {
        "hash-embedder"
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}
