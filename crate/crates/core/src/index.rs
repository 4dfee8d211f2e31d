//! Exact cosine index over chunk embeddings and the model reranking protocol.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::error::{Error, Result};
use crate::gateway::{dot, template, ChatRequest, EmbeddingVector, Gateway, Session};

pub const DEFAULT_TOP_N: usize = 20;
pub const DEFAULT_KEEP_K: usize = 5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    entries: BTreeMap<String, EmbeddingVector>,
    dimension: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Retrieved,
    Reranked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidates {
    pub query: String,
    pub items: Vec<(String, f64)>,
    pub stage: Stage,
}

impl RankedCandidates {
    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|(id, _)| id.clone()).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotLine {
    chunk_id: String,
    vector: Vec<f64>,
}

impl VectorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.entries.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    /// Inserts or replaces one vector, normalizing it to unit length.
    pub fn insert(&mut self, id: &str, vector: &EmbeddingVector) -> Result<()> {
        let dim = vector.dim();
        match self.dimension {
            Some(expected) if expected != dim => {
                return Err(Error::DimensionMismatch { expected, got: dim })
            }
            _ => self.dimension = Some(dim),
        }
        self.entries
            .insert(id.to_string(), EmbeddingVector::unit(vector.values.clone()));
        Ok(())
    }

    /// Adds embedded chunks; a chunk id already present is replaced. Returns
    /// the index size afterwards. Nothing is inserted if any chunk fails.
    pub fn upsert(&mut self, chunks: &[Chunk]) -> Result<usize> {
        let mut staged = self.clone();
        for c in chunks {
            let v = c.embedding.as_ref().ok_or_else(|| {
                Error::EmptyInput(format!("chunk {} has no embedding", c.id))
            })?;
            staged.insert(&c.id, v)?;
        }
        *self = staged;
        Ok(self.len())
    }

    /// Exact top-`n` by cosine; ties go to the smaller chunk id.
    pub fn search_vector(&self, query: &[f64], n: usize) -> Vec<(String, f64)> {
        let qn = dot(query, query).sqrt();
        let mut scored: Vec<(String, f64)> = self
            .entries
            .iter()
            .map(|(id, v)| {
                let s = if qn == 0.0 {
                    0.0
                } else {
                    dot(&v.values, query) / qn
                };
                (id.clone(), s)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(n);
        scored
    }

    pub fn search(&self, gateway: &Gateway, query: &str, n: usize) -> Result<RankedCandidates> {
        let q = gateway.embed_one(query)?;
        if let Some(expected) = self.dimension {
            if expected != q.dim() {
                return Err(Error::DimensionMismatch {
                    expected,
                    got: q.dim(),
                });
            }
        }
        Ok(RankedCandidates {
            query: query.to_string(),
            items: self.search_vector(&q.values, n),
            stage: Stage::Retrieved,
        })
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for (id, v) in &self.entries {
            let line = SnapshotLine {
                chunk_id: id.clone(),
                vector: v.values.clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_snapshot(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut index = VectorIndex::new();
        for line in file.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: SnapshotLine = serde_json::from_str(&line)?;
            index.insert(&entry.chunk_id, &EmbeddingVector::raw(entry.vector))?;
        }
        Ok(index)
    }
}

/// One candidate as shown to the reranker.
#[derive(Debug, Clone)]
pub struct RerankItem {
    pub id: String,
    pub content: String,
    /// Image files to attach, already resolved to readable paths.
    pub images: Vec<String>,
}

/// Parses `<Rank k>Chunk <id>` lines into a permutation of `expected`.
pub fn parse_rerank(raw: &str, expected: &[String]) -> Result<Vec<String>> {
    let mut ranked: Vec<(usize, String)> = Vec::new();
    for line in raw.lines() {
        let line = line.trim();
        let Some(rest) = line.strip_prefix("<Rank ") else {
            continue;
        };
        let Some((k, tail)) = rest.split_once('>') else {
            return Err(Error::protocol("rerank", format!("malformed line `{line}`")));
        };
        let k: usize = k
            .trim()
            .parse()
            .map_err(|_| Error::protocol("rerank", format!("bad rank in `{line}`")))?;
        let id = tail
            .trim()
            .strip_prefix("Chunk")
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::protocol("rerank", format!("missing chunk id in `{line}`")))?;
        ranked.push((k, id.to_string()));
    }
    ranked.sort_by_key(|(k, _)| *k);
    let known: HashSet<&str> = expected.iter().map(String::as_str).collect();
    let mut seen = HashSet::new();
    for (_, id) in &ranked {
        if !known.contains(id.as_str()) {
            return Err(Error::protocol("rerank", format!("unknown chunk id `{id}`")));
        }
        if !seen.insert(id.as_str()) {
            return Err(Error::protocol("rerank", format!("duplicate chunk id `{id}`")));
        }
    }
    if seen.len() != known.len() {
        let missing: Vec<&str> = expected
            .iter()
            .map(String::as_str)
            .filter(|id| !seen.contains(id))
            .collect();
        return Err(Error::protocol("rerank", format!("missing chunk ids {missing:?}")));
    }
    Ok(ranked.into_iter().map(|(_, id)| id).collect())
}

fn render_candidates(items: &[RerankItem]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&format!("<CHUNK_START id={}>\n{}\n", item.id, item.content));
        for img in &item.images {
            out.push_str(&format!("<IMAGE_START>{img}\n"));
        }
        out.push_str("<CHUNK_END>\n");
    }
    out
}

/// Reorders `candidates` with the reranking agent and keeps the first
/// `keep_k`. One candidate needs no call. A response that is not a
/// permutation gets one re-prompt; after that the retrieval order is kept
/// and the fallback is flagged.
pub fn rerank(
    session: &mut Session<'_>,
    query: &str,
    retrieved: &RankedCandidates,
    items: &[RerankItem],
    keep_k: usize,
    alias: &str,
) -> Result<RankedCandidates> {
    let ids = retrieved.ids();
    let score: BTreeMap<&str, f64> = retrieved
        .items
        .iter()
        .map(|(id, s)| (id.as_str(), *s))
        .collect();
    let order = if ids.len() <= 1 {
        ids.clone()
    } else {
        let req = ChatRequest::new(template::RERANK)
            .var("query", query)
            .var("chunks", render_candidates(items))
            .attach(items.iter().flat_map(|i| i.images.iter().cloned()))
            .alias(alias);
        match session.ask(&req, |raw| parse_rerank(raw, &ids))?.result {
            Ok(order) => order,
            Err(e) => {
                session.flag(alias, format!("rerank fell back to retrieval order: {e}"));
                ids.clone()
            }
        }
    };
    Ok(RankedCandidates {
        query: query.to_string(),
        items: order
            .into_iter()
            .take(keep_k)
            .map(|id| {
                let s = score.get(id.as_str()).copied().unwrap_or(0.0);
                (id, s)
            })
            .collect(),
        stage: Stage::Reranked,
    })
}
