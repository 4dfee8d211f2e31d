//! Recursive multi-hop context construction.
//!
//! Starting from a seed chunk, the completeness agent either accepts the
//! current member set or names search queries for what is missing. Each query
//! is retrieved, reranked, and every new candidate is judged by the addition
//! agent. The loop stops when the context is complete, when an iteration
//! admits nothing, or after `max_depth` expansions.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{evidence_images, render_evidence, Chunk, ChunkStore};
use crate::error::{Error, Result};
use crate::gateway::{template, ChatRequest, Session};
use crate::index::{rerank, RankedCandidates, RerankItem, VectorIndex, DEFAULT_KEEP_K, DEFAULT_TOP_N};
use crate::profile::CorpusProfile;

pub const DEFAULT_MAX_DEPTH: usize = 3;
pub const DEFAULT_MEMBER_BUDGET: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextStatus {
    Complete,
    Exhausted,
    BudgetStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AdmissionVerdict {
    Explanatory,
    Related,
    Unrelated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub query: String,
    pub chunk_id: String,
    pub verdict: AdmissionVerdict,
    pub admitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionStep {
    pub iteration: usize,
    pub queries: Vec<String>,
    pub evaluations: Vec<Evaluation>,
    pub admitted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticContext {
    pub seed_id: String,
    /// Seed first, then admissions in order.
    pub members: Vec<String>,
    pub status: ContextStatus,
    pub iterations: usize,
    pub trace: Vec<ExpansionStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextOptions {
    pub max_depth: usize,
    pub member_budget: usize,
    pub top_n: usize,
    pub keep_k: usize,
    pub multihop: bool,
    pub attach_images: bool,
}

impl Default for ContextOptions {
    fn default() -> Self {
        ContextOptions {
            max_depth: DEFAULT_MAX_DEPTH,
            member_budget: DEFAULT_MEMBER_BUDGET,
            top_n: DEFAULT_TOP_N,
            keep_k: DEFAULT_KEEP_K,
            multihop: true,
            attach_images: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assessment {
    pub complete: bool,
    pub queries: Vec<String>,
}

fn field<'a>(raw: &'a str, name: &str) -> Option<&'a str> {
    let start = raw.find(name)? + name.len();
    Some(&raw[start..])
}

/// Parses `Status: COMPLETE|INCOMPLETE, Query: a | b, Explanation: ...`.
pub fn parse_completeness(raw: &str) -> Result<Assessment> {
    let err = |m: String| Error::protocol("completeness", m);
    let status_tail = field(raw, "Status:").ok_or_else(|| err("missing Status".into()))?;
    let status = status_tail
        .split([',', '\n'])
        .next()
        .unwrap_or("")
        .trim();
    let query_tail = field(raw, "Query:").ok_or_else(|| err("missing Query".into()))?;
    let query_field = match query_tail.find("Explanation:") {
        Some(end) => &query_tail[..end],
        None => query_tail.lines().next().unwrap_or(""),
    };
    let query_field = query_field.trim().trim_end_matches(',').trim();
    match status {
        "COMPLETE" => Ok(Assessment {
            complete: true,
            queries: Vec::new(),
        }),
        "INCOMPLETE" => {
            let mut queries: Vec<String> = Vec::new();
            for q in query_field.split('|') {
                let q = q.trim();
                if q.is_empty() || q.eq_ignore_ascii_case("none") || queries.iter().any(|x| x == q) {
                    continue;
                }
                queries.push(q.to_string());
            }
            if queries.is_empty() {
                return Err(err("INCOMPLETE status without search queries".into()));
            }
            Ok(Assessment {
                complete: false,
                queries,
            })
        }
        other => Err(err(format!("unknown status `{other}`"))),
    }
}

/// Parses the `Status: EXPLANATORY|RELATED|UNRELATED` line.
pub fn parse_admission(raw: &str) -> Result<AdmissionVerdict> {
    let tail = field(raw, "Status:").ok_or_else(|| Error::protocol("admission", "missing Status"))?;
    let token = tail.split_whitespace().next().unwrap_or("");
    match token.trim_matches(|c: char| !c.is_ascii_alphabetic()) {
        "EXPLANATORY" => Ok(AdmissionVerdict::Explanatory),
        "RELATED" => Ok(AdmissionVerdict::Related),
        "UNRELATED" => Ok(AdmissionVerdict::Unrelated),
        other => Err(Error::protocol("admission", format!("unknown verdict `{other}`"))),
    }
}

fn images(chunks: &[&Chunk], opts: &ContextOptions) -> Vec<String> {
    if opts.attach_images {
        evidence_images(chunks)
    } else {
        Vec::new()
    }
}

/// Asks the completeness agent about `members`. A response still malformed
/// after the re-prompt counts as COMPLETE, flagged, so no query is invented.
pub fn assess_completeness(
    session: &mut Session<'_>,
    members: &[&Chunk],
    profile: &CorpusProfile,
    opts: &ContextOptions,
    alias: &str,
) -> Result<Assessment> {
    let req = ChatRequest::new(template::COMPLETENESS)
        .var("expert_persona", profile.persona.clone())
        .var("domain", profile.domain.clone())
        .var("content", render_evidence(members))
        .attach(images(members, opts))
        .alias(alias);
    match session.ask(&req, parse_completeness)?.result {
        Ok(a) => Ok(a),
        Err(e) => {
            session.flag(alias, format!("treated as COMPLETE after malformed assessment: {e}"));
            Ok(Assessment {
                complete: true,
                queries: Vec::new(),
            })
        }
    }
}

/// Asks the addition agent how `candidate` relates to the context for
/// `query`. A response still malformed after the re-prompt counts as
/// UNRELATED.
pub fn admit(
    session: &mut Session<'_>,
    members: &[&Chunk],
    query: &str,
    candidate: &Chunk,
    profile: &CorpusProfile,
    opts: &ContextOptions,
    alias: &str,
) -> Result<AdmissionVerdict> {
    let req = ChatRequest::new(template::ADDITION)
        .var("expert_persona", profile.persona.clone())
        .var("domain", profile.domain.clone())
        .var("query", query)
        .var("original", render_evidence(members))
        .var("candidate", render_evidence(&[candidate]))
        .attach(images(&[candidate], opts))
        .alias(alias);
    match session.ask(&req, parse_admission)?.result {
        Ok(v) => Ok(v),
        Err(e) => {
            session.flag(alias, format!("treated as UNRELATED after malformed verdict: {e}"));
            Ok(AdmissionVerdict::Unrelated)
        }
    }
}

/// Whether a verdict admits a candidate into a context of `member_count`.
pub fn admissible(verdict: AdmissionVerdict, member_count: usize, budget: usize) -> bool {
    match verdict {
        AdmissionVerdict::Explanatory => true,
        AdmissionVerdict::Related => member_count < budget,
        AdmissionVerdict::Unrelated => false,
    }
}

pub fn build_context(
    session: &mut Session<'_>,
    store: &ChunkStore,
    index: &VectorIndex,
    profile: &CorpusProfile,
    seed_id: &str,
    opts: &ContextOptions,
) -> Result<SemanticContext> {
    if store.get(seed_id).is_none() {
        return Err(Error::EmptyInput(format!("unknown seed chunk {seed_id}")));
    }
    let mut ctx = SemanticContext {
        seed_id: seed_id.to_string(),
        members: vec![seed_id.to_string()],
        status: ContextStatus::BudgetStop,
        iterations: 0,
        trace: Vec::new(),
    };
    if !opts.multihop {
        return Ok(ctx);
    }
    let mut evaluated: HashSet<String> = HashSet::from([seed_id.to_string()]);
    loop {
        let t = ctx.iterations;
        let members = store.select(&ctx.members);
        let assessment =
            assess_completeness(session, &members, profile, opts, &format!("comp:{seed_id}:t{t}"))?;
        if assessment.complete {
            ctx.status = ContextStatus::Complete;
            break;
        }
        if t >= opts.max_depth {
            ctx.status = ContextStatus::BudgetStop;
            break;
        }
        let mut step = ExpansionStep {
            iteration: t,
            queries: assessment.queries.clone(),
            evaluations: Vec::new(),
            admitted: Vec::new(),
        };
        for (qi, query) in assessment.queries.iter().enumerate() {
            let retrieved = index.search(session.gateway(), query, opts.top_n)?;
            let fresh = RankedCandidates {
                items: retrieved
                    .items
                    .into_iter()
                    .filter(|(id, _)| !evaluated.contains(id) && store.get(id).is_some())
                    .collect(),
                ..retrieved
            };
            if fresh.items.is_empty() {
                continue;
            }
            let items: Vec<RerankItem> = fresh
                .items
                .iter()
                .map(|(id, _)| {
                    let c = store.get(id).expect("filtered to known ids");
                    RerankItem {
                        id: id.clone(),
                        content: c.enriched_content(),
                        images: images(&[c], opts),
                    }
                })
                .collect();
            let ranked = rerank(
                session,
                query,
                &fresh,
                &items,
                opts.keep_k,
                &format!("rerank:{seed_id}:t{t}:q{qi}"),
            )?;
            for (cand_id, _) in ranked.items {
                if !evaluated.insert(cand_id.clone()) {
                    continue;
                }
                let candidate = store.get(&cand_id).expect("filtered to known ids");
                let members = store.select(&ctx.members);
                let verdict = admit(
                    session,
                    &members,
                    query,
                    candidate,
                    profile,
                    opts,
                    &format!("add:{seed_id}:{cand_id}"),
                )?;
                let admitted = admissible(verdict, ctx.members.len(), opts.member_budget);
                if admitted {
                    ctx.members.push(cand_id.clone());
                    step.admitted.push(cand_id.clone());
                }
                step.evaluations.push(Evaluation {
                    query: query.clone(),
                    chunk_id: cand_id,
                    verdict,
                    admitted,
                });
            }
        }
        let stalled = step.admitted.is_empty();
        ctx.trace.push(step);
        ctx.iterations += 1;
        if stalled {
            ctx.status = ContextStatus::Exhausted;
            break;
        }
    }
    Ok(ctx)
}
