//! Corpus-level topic discovery and domain/persona synthesis.
//!
//! Chunk embeddings are projected to a few principal components, clustered by
//! density, labeled with class-based TF-IDF keywords diversified by MMR, and
//! the dominant topics are handed to the domain/persona agent.

pub mod density;
pub mod keywords;
pub mod projection;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::error::{Error, Result};
use crate::gateway::{template, ChatRequest, Session};
use crate::text;

pub use density::{dbscan, Metric, OUTLIER};
pub use keywords::{ctfidf, mmr_select, Candidate};
pub use projection::{project, Projection};

pub const GENERIC_DOMAIN: &str = "general technical documentation";
pub const GENERIC_PERSONA: &str = "subject-matter expert";
pub const MAX_PROMPT_TOPICS: usize = 12;
pub const DEFAULT_KEYWORDS: usize = 10;
pub const DEFAULT_MMR_LAMBDA: f64 = 0.7;
const CANDIDATE_POOL: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicCluster {
    pub id: i64,
    pub member_chunk_ids: Vec<String>,
    pub keywords: Vec<(String, f64)>,
    pub mass: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusProfile {
    pub domain: String,
    pub persona: String,
    pub clusters: Vec<TopicCluster>,
    /// True when synthesis was skipped and placeholders are in use.
    pub generic: bool,
    pub projection_dims: usize,
    pub degenerate_projection: bool,
}

impl CorpusProfile {
    pub fn generic(clusters: Vec<TopicCluster>) -> Self {
        CorpusProfile {
            domain: GENERIC_DOMAIN.into(),
            persona: GENERIC_PERSONA.into(),
            clusters,
            generic: true,
            projection_dims: 0,
            degenerate_projection: false,
        }
    }

    /// Cluster id per chunk id.
    pub fn topic_of(&self) -> BTreeMap<String, i64> {
        self.clusters
            .iter()
            .flat_map(|c| c.member_chunk_ids.iter().map(move |id| (id.clone(), c.id)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptions {
    pub dimensions: usize,
    pub eps: f64,
    pub min_pts: usize,
    pub metric: Metric,
    pub mmr_lambda: f64,
    pub keywords: usize,
    pub no_persona: bool,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions {
            dimensions: projection::DEFAULT_DIMENSIONS,
            eps: density::DEFAULT_EPS,
            min_pts: density::DEFAULT_MIN_PTS,
            metric: Metric::Cosine,
            mmr_lambda: DEFAULT_MMR_LAMBDA,
            keywords: DEFAULT_KEYWORDS,
            no_persona: false,
        }
    }
}

/// Groups chunk ids by label; non-outlier clusters in id order, then the
/// outlier bucket if non-empty.
pub fn group_clusters(ids: &[String], labels: &[i64]) -> Vec<TopicCluster> {
    let mut groups: BTreeMap<i64, Vec<String>> = BTreeMap::new();
    for (id, &l) in ids.iter().zip(labels) {
        groups.entry(l).or_default().push(id.clone());
    }
    let outliers = groups.remove(&OUTLIER);
    groups
        .into_iter()
        .chain(outliers.map(|o| (OUTLIER, o)))
        .map(|(id, mut members)| {
            members.sort();
            TopicCluster {
                id,
                mass: members.len(),
                member_chunk_ids: members,
                keywords: Vec::new(),
            }
        })
        .collect()
}

fn label_clusters(
    session: &Session<'_>,
    clusters: &mut [TopicCluster],
    chunks: &BTreeMap<&str, &Chunk>,
    opts: &ProfileOptions,
) -> Result<()> {
    let tokens: Vec<Vec<String>> = clusters
        .iter()
        .map(|c| {
            c.member_chunk_ids
                .iter()
                .flat_map(|id| text::content_terms(&chunks[id.as_str()].enriched_content()))
                .collect()
        })
        .collect();
    let scores = ctfidf(&tokens);
    for (cluster, scores) in clusters.iter_mut().zip(scores) {
        let mut pool: Vec<(String, f64)> = scores.into_iter().collect();
        pool.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        pool.truncate(CANDIDATE_POOL);
        if pool.is_empty() {
            continue;
        }
        let max = pool[0].1;
        let terms: Vec<String> = pool.iter().map(|(t, _)| t.clone()).collect();
        let vectors = session.gateway().embed(&terms)?;
        let candidates: Vec<Candidate> = pool
            .iter()
            .zip(vectors)
            .map(|((term, s), v)| Candidate {
                term: term.clone(),
                relevance: if max > 0.0 { s / max } else { 0.0 },
                embedding: v.values,
            })
            .collect();
        let score: BTreeMap<&str, f64> = pool.iter().map(|(t, s)| (t.as_str(), *s)).collect();
        cluster.keywords = mmr_select(&candidates, opts.keywords, opts.mmr_lambda)
            .into_iter()
            .map(|t| {
                let s = score[t.as_str()];
                (t, s)
            })
            .collect();
    }
    Ok(())
}

/// Runs projection, clustering, and keyword labeling over embedded chunks,
/// then synthesizes the domain and persona unless `opts.no_persona`.
pub fn build_profile(
    session: &mut Session<'_>,
    chunks: &[Chunk],
    opts: &ProfileOptions,
) -> Result<CorpusProfile> {
    if chunks.is_empty() {
        return Err(Error::EmptyInput("no chunks to profile".into()));
    }
    let vectors: Vec<Vec<f64>> = chunks
        .iter()
        .map(|c| {
            c.embedding
                .as_ref()
                .map(|e| e.values.clone())
                .ok_or_else(|| Error::EmptyInput(format!("chunk {} has no embedding", c.id)))
        })
        .collect::<Result<_>>()?;
    let d = opts.dimensions.min(chunks.len() - 1);
    if d < opts.dimensions {
        session.flag(
            "profile",
            format!("projection reduced to {d} dimensions for {} chunks", chunks.len()),
        );
    }
    let proj = project(&vectors, d)?;
    if proj.degenerate {
        session.flag("profile", "chunk embeddings have zero variance");
    }
    let labels = dbscan(&proj.points, opts.eps, opts.min_pts, opts.metric);
    let ids: Vec<String> = chunks.iter().map(|c| c.id.clone()).collect();
    let mut clusters = group_clusters(&ids, &labels);
    let by_id: BTreeMap<&str, &Chunk> = chunks.iter().map(|c| (c.id.as_str(), c)).collect();
    label_clusters(session, &mut clusters, &by_id, opts)?;

    let mut profile = if opts.no_persona {
        CorpusProfile::generic(clusters)
    } else {
        let (domain, persona) = synthesize_profile(session, &clusters)?;
        CorpusProfile {
            domain,
            persona,
            clusters,
            generic: false,
            projection_dims: 0,
            degenerate_projection: false,
        }
    };
    profile.projection_dims = d;
    profile.degenerate_projection = proj.degenerate;
    Ok(profile)
}

/// Topic lines for the prompt: up to twelve non-outlier clusters by mass
/// (ties by id). Falls back to the outlier bucket when nothing clustered.
pub fn topic_list(session: &mut Session<'_>, clusters: &[TopicCluster]) -> Result<String> {
    let mut ranked: Vec<&TopicCluster> = clusters
        .iter()
        .filter(|c| c.id != OUTLIER && !c.keywords.is_empty())
        .collect();
    if ranked.is_empty() {
        ranked = clusters
            .iter()
            .filter(|c| c.id == OUTLIER && !c.keywords.is_empty())
            .collect();
        if ranked.is_empty() {
            return Err(Error::EmptyInput("no topic keywords to synthesize a profile from".into()));
        }
        session.flag("profile", "no dense topic clusters; using outlier keywords");
    }
    ranked.sort_by(|a, b| b.mass.cmp(&a.mass).then(a.id.cmp(&b.id)));
    Ok(ranked
        .iter()
        .take(MAX_PROMPT_TOPICS)
        .enumerate()
        .map(|(i, c)| {
            let kws: Vec<&str> = c.keywords.iter().map(|(t, _)| t.as_str()).collect();
            format!("Topic {}: {}", i + 1, kws.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n"))
}

/// Reads `Domain:` and `Expert Role:` between the START and END markers.
pub fn parse_domain_persona(raw: &str) -> Result<(String, String)> {
    const START: &str = "<|#|>START<|#|>";
    const END: &str = "<|#|>END<|#|>";
    let err = |m: &str| Error::protocol("domain_persona", m);
    let start = raw.find(START).ok_or_else(|| err("missing START marker"))?;
    let body = &raw[start + START.len()..];
    let end = body.find(END).ok_or_else(|| err("missing END marker"))?;
    let mut domain = None;
    let mut persona = None;
    for line in body[..end].lines() {
        let line = line.trim().trim_start_matches("<|#|>").trim();
        if let Some(v) = line.strip_prefix("Domain:") {
            domain = Some(v.trim().to_string());
        } else if let Some(v) = line.strip_prefix("Expert Role:") {
            persona = Some(v.trim().to_string());
        }
    }
    let domain = domain.filter(|s| !s.is_empty()).ok_or_else(|| err("missing Domain"))?;
    let persona = persona
        .filter(|s| !s.is_empty())
        .ok_or_else(|| err("missing Expert Role"))?;
    Ok((domain, persona))
}

/// Asks the domain/persona agent. A second malformed response is an error:
/// the profile is required for every later stage.
pub fn synthesize_profile(
    session: &mut Session<'_>,
    clusters: &[TopicCluster],
) -> Result<(String, String)> {
    let topics = topic_list(session, clusters)?;
    let req = ChatRequest::new(template::DOMAIN_PERSONA)
        .var("topic_list_str", topics)
        .alias("profile");
    session.ask(&req, parse_domain_persona)?.result
}
