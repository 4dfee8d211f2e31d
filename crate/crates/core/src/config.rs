//! Run configuration: a flat TOML document whose keys double as CLI flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::context::ContextOptions;
use crate::corpus::{ChunkerKind, IngestOptions};
use crate::curator::CuratorOptions;
use crate::error::{Error, Result};
use crate::gateway::http::{HttpChatBackend, HttpEmbedder};
use crate::gateway::{mock::load_mock_script, Gateway, HashEmbedder, RetryPolicy};
use crate::profile::ProfileOptions;
use crate::qa::QaOptions;

pub const DEFAULT_API_KEY_ENV: &str = "QAFORGE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_dir: PathBuf,
    pub out_dir: PathBuf,

    pub chat_url: Option<String>,
    pub chat_model: String,
    pub vision_model: String,
    pub embedding_url: Option<String>,
    pub embedding_model: String,
    pub api_key_env: String,
    pub mock_script: Option<PathBuf>,
    pub mock_embedding_dim: usize,
    pub max_in_flight: usize,
    pub request_timeout_secs: u64,
    /// Worker threads for per-seed stages; 0 uses all cores.
    pub threads: usize,

    pub window_length: usize,
    pub window_overlap: usize,
    pub chunker: String,
    pub lambda: f64,

    pub projection_dims: usize,
    pub eps: f64,
    pub min_pts: usize,
    pub mmr_lambda: f64,
    pub keywords_k: usize,

    pub top_n: usize,
    pub keep_k: usize,
    pub max_depth: usize,
    pub member_budget: usize,

    pub candidates_per_context: usize,
    pub difficulty_min: f64,

    pub alpha: f64,
    pub tau: f64,
    pub question_threshold: f64,
    pub link_threshold: f64,

    pub no_multihop: bool,
    pub no_verifier: bool,
    pub no_persona: bool,
    pub image_only: bool,
    pub description_only: bool,

    pub judge: bool,
    pub seed: u64,
    pub target_count: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ingest = IngestOptions::default();
        let profile = ProfileOptions::default();
        let ctx = ContextOptions::default();
        let qa = QaOptions::default();
        let cur = CuratorOptions::default();
        RunConfig {
            corpus_dir: PathBuf::from("corpus"),
            out_dir: PathBuf::from("out"),
            chat_url: None,
            chat_model: "gpt-4o".into(),
            vision_model: "gpt-4o".into(),
            embedding_url: None,
            embedding_model: "text-embedding-3-small".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            mock_script: None,
            mock_embedding_dim: 64,
            max_in_flight: 8,
            request_timeout_secs: 120,
            threads: 0,
            window_length: ingest.window_length,
            window_overlap: ingest.window_overlap,
            chunker: ingest.chunker.to_string(),
            lambda: ingest.lambda,
            projection_dims: profile.dimensions,
            eps: profile.eps,
            min_pts: profile.min_pts,
            mmr_lambda: profile.mmr_lambda,
            keywords_k: profile.keywords,
            top_n: ctx.top_n,
            keep_k: ctx.keep_k,
            max_depth: ctx.max_depth,
            member_budget: ctx.member_budget,
            candidates_per_context: qa.candidates_per_context,
            difficulty_min: qa.difficulty_min,
            alpha: cur.alpha,
            tau: cur.tau,
            question_threshold: cur.question_threshold,
            link_threshold: cur.link_threshold,
            no_multihop: false,
            no_verifier: false,
            no_persona: false,
            image_only: false,
            description_only: false,
            judge: true,
            seed: 0,
            target_count: None,
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
    }
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v > 0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key = value` overrides using the same names as the TOML keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let current = table.get(key);
        let parsed = match current {
            Some(toml::Value::String(_)) | None => {
                if !Self::keys().contains(&key) {
                    return Err(Error::Config(format!("unknown key `{key}`")));
                }
                // optional keys are absent when unset; infer their type
                match key {
                    "target_count" => toml::Value::Integer(parse_int(key, value)?),
                    _ => toml::Value::String(value.to_string()),
                }
            }
            Some(toml::Value::Integer(_)) => toml::Value::Integer(parse_int(key, value)?),
            Some(toml::Value::Float(_)) => toml::Value::Float(
                value
                    .parse()
                    .map_err(|_| Error::Config(format!("{key} expects a number, got {value:?}")))?,
            ),
            Some(toml::Value::Boolean(_)) => toml::Value::Boolean(
                value
                    .parse()
                    .map_err(|_| Error::Config(format!("{key} expects true or false, got {value:?}")))?,
            ),
            Some(other) => {
                return Err(Error::Config(format!("{key} has unsupported type {}", other.type_str())))
            }
        };
        table.insert(key.to_string(), parsed);
        *self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn keys() -> Vec<&'static str> {
        vec![
            "corpus_dir", "out_dir", "chat_url", "chat_model", "vision_model", "embedding_url",
            "embedding_model", "api_key_env", "mock_script", "mock_embedding_dim", "max_in_flight",
            "request_timeout_secs", "threads", "window_length", "window_overlap", "chunker", "lambda",
            "projection_dims", "eps", "min_pts", "mmr_lambda", "keywords_k", "top_n", "keep_k",
            "max_depth", "member_budget", "candidates_per_context", "difficulty_min", "alpha", "tau",
            "question_threshold", "link_threshold", "no_multihop", "no_verifier", "no_persona",
            "image_only", "description_only", "judge", "seed", "target_count",
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_only && self.description_only {
            return Err(Error::Config("image_only and description_only are mutually exclusive".into()));
        }
        for (name, v) in [
            ("difficulty_min", self.difficulty_min),
            ("alpha", self.alpha),
            ("tau", self.tau),
            ("question_threshold", self.question_threshold),
            ("link_threshold", self.link_threshold),
            ("mmr_lambda", self.mmr_lambda),
        ] {
            unit_interval(name, v)?;
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        for (name, v) in [
            ("window_length", self.window_length),
            ("projection_dims", self.projection_dims),
            ("min_pts", self.min_pts),
            ("keywords_k", self.keywords_k),
            ("top_n", self.top_n),
            ("keep_k", self.keep_k),
            ("member_budget", self.member_budget),
            ("candidates_per_context", self.candidates_per_context),
            ("max_in_flight", self.max_in_flight),
        ] {
            positive(name, v)?;
        }
        if self.window_overlap >= self.window_length {
            return Err(Error::Config("window_overlap must be smaller than window_length".into()));
        }
        if self.keep_k > self.top_n {
            return Err(Error::Config("keep_k cannot exceed top_n".into()));
        }
        self.chunker_kind()?;
        if self.mock_script.is_none() && self.chat_url.is_none() {
            return Err(Error::Config("set either mock_script or chat_url".into()));
        }
        Ok(())
    }

    pub fn chunker_kind(&self) -> Result<ChunkerKind> {
        self.chunker.parse()
    }

    /// SHA-256 of the canonical JSON form, excluding `out_dir` and thread count.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("out_dir");
            obj.remove("threads");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn ingest_options(&self) -> Result<IngestOptions> {
        Ok(IngestOptions {
            chunker: self.chunker_kind()?,
            window_length: self.window_length,
            window_overlap: self.window_overlap,
            lambda: self.lambda,
            describe: !self.image_only,
        })
    }

    pub fn profile_options(&self) -> ProfileOptions {
        ProfileOptions {
            dimensions: self.projection_dims,
            eps: self.eps,
            min_pts: self.min_pts,
            mmr_lambda: self.mmr_lambda,
            keywords: self.keywords_k,
            no_persona: self.no_persona,
            ..ProfileOptions::default()
        }
    }

    pub fn context_options(&self) -> ContextOptions {
        ContextOptions {
            max_depth: self.max_depth,
            member_budget: self.member_budget,
            top_n: self.top_n,
            keep_k: self.keep_k,
            multihop: !self.no_multihop,
            attach_images: !self.description_only,
        }
    }

    pub fn qa_options(&self) -> QaOptions {
        QaOptions {
            candidates_per_context: self.candidates_per_context,
            verify: !self.no_verifier,
            attach_images: !self.description_only,
            difficulty_min: self.difficulty_min,
        }
    }

    pub fn curator_options(&self) -> CuratorOptions {
        CuratorOptions {
            question_threshold: self.question_threshold,
            link_threshold: self.link_threshold,
            alpha: self.alpha,
            tau: self.tau,
        }
    }

    /// Builds the model gateway: the mock backend when `mock_script` is set,
    /// otherwise the HTTP clients with the key read from `api_key_env`.
    pub fn gateway(&self) -> Result<Gateway> {
        if let Some(script) = &self.mock_script {
            let backend = load_mock_script(script)?;
            return Ok(Gateway::new(
                Arc::new(backend),
                Arc::new(HashEmbedder::new(self.mock_embedding_dim, self.seed)),
            )
            .with_retry(RetryPolicy::immediate()));
        }
        let chat_url = self
            .chat_url
            .as_deref()
            .ok_or_else(|| Error::Config("chat_url is required without mock_script".into()))?;
        let key = std::env::var(&self.api_key_env).ok();
        let timeout = Duration::from_secs(self.request_timeout_secs);
        let fatal = |e: crate::gateway::BackendError| Error::Config(format!("{e:?}"));
        let chat = HttpChatBackend::new(
            chat_url,
            &self.chat_model,
            &self.vision_model,
            key.clone(),
            self.max_in_flight,
            timeout,
        )
        .map_err(fatal)?
        .with_attachment_root(&self.corpus_dir);
        let embedder = HttpEmbedder::new(
            self.embedding_url.as_deref().unwrap_or(chat_url),
            &self.embedding_model,
            key,
            self.max_in_flight,
            timeout,
        )
        .map_err(fatal)?;
        Ok(Gateway::new(Arc::new(chat), Arc::new(embedder)))
    }
}

fn parse_int(key: &str, value: &str) -> Result<i64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key} expects an integer, got {value:?}")))
}
