//! Persona-conditioned QA generation, adversarial verification, and hop
//! counting.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::context::SemanticContext;
use crate::corpus::{evidence_images, render_evidence, ChunkStore};
use crate::error::{Error, Result};
use crate::gateway::{template, ChatRequest, Session};
use crate::profile::CorpusProfile;

pub const DEFAULT_CANDIDATES: usize = 2;

const ANALYSIS: &str = "<|#|>ANALYSIS<|#|>";
const GENERATION: &str = "<|#|>QA_GENERATION<|#|>";
const DECOMPOSITION: &str = "<|#|>DECOMPOSITION<|#|>";
const END: &str = "<|#|>END<|#|>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Question,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionEntry {
    pub fragment: String,
    pub chunk_id: String,
    pub side: Side,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analysis {
    pub chunk_count: Option<usize>,
    pub keywords_per_chunk: String,
    pub related_keywords: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaCandidate {
    pub question: String,
    pub answer: String,
    pub relevance_raw: u8,
    pub difficulty_raw: u8,
    pub analysis: Analysis,
    pub decomposition: Vec<DecompositionEntry>,
    /// A score was fractional and rounded half-up.
    #[serde(default)]
    pub rounded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub question_ok: bool,
    pub answer_ok: bool,
    pub requires_content: bool,
    pub justification: String,
}

impl Verdict {
    pub fn accepted(&self) -> bool {
        self.question_ok && self.answer_ok && self.requires_content
    }

    fn rejected(justification: String) -> Self {
        Verdict {
            question_ok: false,
            answer_ok: false,
            requires_content: false,
            justification,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaUnit {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub relevance: f64,
    pub difficulty: f64,
    pub hops: usize,
    #[serde(rename = "seed_chunk_id")]
    pub seed_id: String,
    #[serde(rename = "context_chunk_ids")]
    pub context_ids: Vec<String>,
    pub decomposition: Vec<DecompositionEntry>,
    #[serde(default)]
    pub topic_id: Option<i64>,
    /// Absent when verification was bypassed.
    #[serde(rename = "verdicts")]
    pub verdict: Option<Verdict>,
    #[serde(default)]
    pub lineage: Vec<String>,
}

/// Candidate plus its verification outcome, as persisted for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub seed_id: String,
    pub sample: usize,
    pub candidate: QaCandidate,
    pub verdict: Option<Verdict>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaOptions {
    pub candidates_per_context: usize,
    pub verify: bool,
    pub attach_images: bool,
    pub difficulty_min: f64,
}

impl Default for QaOptions {
    fn default() -> Self {
        QaOptions {
            candidates_per_context: DEFAULT_CANDIDATES,
            verify: true,
            attach_images: true,
            difficulty_min: 0.0,
        }
    }
}

fn section<'a>(raw: &'a str, start: &str, end: &str) -> Result<&'a str> {
    let s = raw
        .find(start)
        .ok_or_else(|| Error::protocol("qa_generation", format!("missing {start}")))?
        + start.len();
    let len = raw[s..]
        .find(end)
        .ok_or_else(|| Error::protocol("qa_generation", format!("missing {end}")))?;
    Ok(&raw[s..s + len])
}

/// Text after `label` up to the next of `stops` (or the end).
fn labeled<'a>(block: &'a str, label: &str, stops: &[&str]) -> Option<&'a str> {
    let s = block.find(label)? + label.len();
    let rest = &block[s..];
    let end = stops
        .iter()
        .filter_map(|st| rest.find(st))
        .min()
        .unwrap_or(rest.len());
    Some(rest[..end].trim())
}

/// Integer score in 0..=10. Fractional values round half-up; the flag
/// reports it. A trailing `/10` is accepted.
pub fn parse_score(field: &str) -> Result<(u8, bool)> {
    let t = field.trim();
    let t = t.strip_suffix("/10").unwrap_or(t).trim();
    let v: f64 = t
        .parse()
        .map_err(|_| Error::protocol("qa_generation", format!("score `{field}` is not a number")))?;
    if !(0.0..=10.0).contains(&v) {
        return Err(Error::protocol("qa_generation", format!("score {v} outside 0-10")));
    }
    let rounded = (v + 0.5).floor();
    Ok((rounded as u8, rounded != v))
}

fn resolve_chunk(token: &str, members: &[String]) -> Result<String> {
    let token = token.trim_matches(|c: char| ",.;:)]}>\"'".contains(c));
    if let Some(id) = members.iter().find(|m| m.as_str() == token) {
        return Ok(id.clone());
    }
    if let Ok(i) = token.parse::<usize>() {
        if (1..=members.len()).contains(&i) {
            return Ok(members[i - 1].clone());
        }
    }
    Err(Error::protocol(
        "qa_generation",
        format!("decomposition cites chunk `{token}` outside the context"),
    ))
}

fn parse_source_line(body: &str, side: Side, members: &[String]) -> Result<Vec<DecompositionEntry>> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(arrow) = rest.find("->") {
        let fragment = rest[..arrow]
            .trim()
            .trim_start_matches([',', ';'])
            .trim()
            .trim_matches('"')
            .trim()
            .to_string();
        let after = &rest[arrow + 2..];
        // references run until the next quoted fragment
        let end = after.find('"').unwrap_or(after.len());
        let refs = &after[..end];
        let mut found = false;
        let words: Vec<&str> = refs.split_whitespace().collect();
        for pair in words.windows(2) {
            if pair[0].eq_ignore_ascii_case("chunk") {
                let id = resolve_chunk(pair[1], members)?;
                out.push(DecompositionEntry {
                    fragment: fragment.clone(),
                    chunk_id: id,
                    side,
                });
                found = true;
            }
        }
        if !found {
            return Err(Error::protocol(
                "qa_generation",
                format!("decomposition entry `{}` names no chunk", refs.trim()),
            ));
        }
        rest = &after[end..];
    }
    Ok(out)
}

/// Parses the generation protocol. Chunk references may be context chunk ids
/// or 1-based positions in `members`.
pub fn parse_generation(raw: &str, members: &[String]) -> Result<QaCandidate> {
    let analysis_block = section(raw, ANALYSIS, GENERATION)?;
    let qa = section(raw, GENERATION, DECOMPOSITION)?;
    let decomposition_block = section(raw, DECOMPOSITION, END)?;

    let missing = |f: &str| Error::protocol("qa_generation", format!("missing {f}"));
    let question = labeled(qa, "Question:", &["Answer:", "Relevance:", "Difficulty:"])
        .filter(|s| !s.is_empty())
        .ok_or_else(|| missing("Question"))?;
    let answer = labeled(qa, "Answer:", &["Relevance:", "Difficulty:"])
        .filter(|s| !s.is_empty())
        .ok_or_else(|| missing("Answer"))?;
    let relevance = labeled(qa, "Relevance:", &["\n"]).ok_or_else(|| missing("Relevance"))?;
    let difficulty = labeled(qa, "Difficulty:", &["\n"]).ok_or_else(|| missing("Difficulty"))?;
    let (relevance_raw, r1) = parse_score(relevance)?;
    let (difficulty_raw, r2) = parse_score(difficulty)?;

    let analysis = Analysis {
        chunk_count: labeled(analysis_block, "Chunk Count:", &["\n"]).and_then(|s| s.parse().ok()),
        keywords_per_chunk: labeled(analysis_block, "Keywords per Chunk:", &["\n"])
            .unwrap_or("")
            .to_string(),
        related_keywords: labeled(analysis_block, "Related Keywords:", &["\n"])
            .unwrap_or("")
            .to_string(),
    };

    let mut decomposition = Vec::new();
    for line in decomposition_block.lines() {
        let line = line.trim();
        if let Some(body) = line.strip_prefix("Question Source:") {
            decomposition.extend(parse_source_line(body, Side::Question, members)?);
        } else if let Some(body) = line.strip_prefix("Answer Source:") {
            decomposition.extend(parse_source_line(body, Side::Answer, members)?);
        }
    }
    if decomposition.is_empty() {
        return Err(Error::protocol("qa_generation", "empty decomposition"));
    }
    Ok(QaCandidate {
        question: question.to_string(),
        answer: answer.to_string(),
        relevance_raw,
        difficulty_raw,
        analysis,
        decomposition,
        rounded: r1 || r2,
    })
}

fn pair(raw: &str, yes: &str, no: &str) -> Result<bool> {
    match (raw.contains(yes), raw.contains(no)) {
        (true, false) => Ok(true),
        (false, true) => Ok(false),
        (true, true) => Err(Error::protocol("verification", format!("both {yes} and {no}"))),
        (false, false) => Err(Error::protocol("verification", format!("missing {yes}|{no}"))),
    }
}

/// Parses the three verification tokens and the justification.
pub fn parse_verdict(raw: &str) -> Result<Verdict> {
    Ok(Verdict {
        question_ok: pair(raw, "QUESTION_CORRECT", "QUESTION_INCORRECT")?,
        answer_ok: pair(raw, "ANSWER_CORRECT", "ANSWER_INCORRECT")?,
        requires_content: pair(raw, "REQUIRES_CONTENT", "CAN_ANSWER_WITHOUT_CONTENT")?,
        justification: raw
            .find("Justification:")
            .map(|i| raw[i + "Justification:".len()..].trim().to_string())
            .unwrap_or_default(),
    })
}

/// Distinct chunks cited across both sides of the decomposition.
pub fn hop_count(decomposition: &[DecompositionEntry]) -> Result<usize> {
    if decomposition.is_empty() {
        return Err(Error::EmptyDecomposition);
    }
    Ok(decomposition
        .iter()
        .map(|d| d.chunk_id.as_str())
        .collect::<BTreeSet<_>>()
        .len())
}

pub fn difficulty_filter(units: Vec<QaUnit>, threshold: f64) -> Vec<QaUnit> {
    units.into_iter().filter(|u| u.difficulty >= threshold).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextOutput {
    pub candidates: Vec<CandidateRecord>,
    pub accepted: Vec<QaUnit>,
}

struct Prompt {
    content: String,
    images: Vec<String>,
}

fn prompt_for(store: &ChunkStore, ctx: &SemanticContext, opts: &QaOptions) -> Prompt {
    let chunks = store.select(&ctx.members);
    Prompt {
        content: render_evidence(&chunks),
        images: if opts.attach_images {
            evidence_images(&chunks)
        } else {
            Vec::new()
        },
    }
}

/// Issues `candidates_per_context` generation calls for `ctx`, verifies each
/// parsed candidate (unless verification is off), and turns the accepted ones
/// into units with ids `{seed}#{sample}`.
pub fn generate_for_context(
    session: &mut Session<'_>,
    store: &ChunkStore,
    ctx: &SemanticContext,
    profile: &CorpusProfile,
    opts: &QaOptions,
) -> Result<ContextOutput> {
    let prompt = prompt_for(store, ctx, opts);
    let seed = &ctx.seed_id;
    let mut out = ContextOutput::default();
    for sample in 0..opts.candidates_per_context {
        let req = ChatRequest::new(template::QA_GENERATION)
            .var("expert_persona", profile.persona.clone())
            .var("domain_context", profile.domain.clone())
            .var("content", prompt.content.clone())
            .attach(prompt.images.clone())
            .alias(format!("qa:{seed}:s{sample}"));
        let candidate = match session
            .ask(&req, |raw| parse_generation(raw, &ctx.members))?
            .result
        {
            Ok(c) => c,
            Err(e) => {
                session.flag(format!("qa:{seed}:s{sample}"), format!("no candidate: {e}"));
                continue;
            }
        };
        if candidate.rounded {
            session.flag(format!("qa:{seed}:s{sample}"), "fractional score rounded half-up");
        }
        let verdict = if opts.verify {
            Some(verify(session, &candidate, &prompt, profile, &format!("ver:{seed}:s{sample}"))?)
        } else {
            None
        };
        let accepted = verdict.as_ref().is_none_or(Verdict::accepted);
        if accepted {
            out.accepted.push(QaUnit {
                id: format!("{seed}#{sample}"),
                question: candidate.question.clone(),
                answer: candidate.answer.clone(),
                relevance: f64::from(candidate.relevance_raw) / 10.0,
                difficulty: f64::from(candidate.difficulty_raw) / 10.0,
                hops: hop_count(&candidate.decomposition)?,
                seed_id: seed.clone(),
                context_ids: ctx.members.clone(),
                decomposition: candidate.decomposition.clone(),
                topic_id: None,
                verdict: verdict.clone(),
                lineage: Vec::new(),
            });
        }
        out.candidates.push(CandidateRecord {
            seed_id: seed.clone(),
            sample,
            candidate,
            verdict,
            accepted,
        });
    }
    Ok(out)
}

fn verify(
    session: &mut Session<'_>,
    candidate: &QaCandidate,
    prompt: &Prompt,
    profile: &CorpusProfile,
    alias: &str,
) -> Result<Verdict> {
    let req = ChatRequest::new(template::VERIFY)
        .var("expert_persona", profile.persona.clone())
        .var("domain_context", profile.domain.clone())
        .var("content", prompt.content.clone())
        .var("question", candidate.question.clone())
        .var("answer", candidate.answer.clone())
        .attach(prompt.images.clone())
        .alias(alias);
    match session.ask(&req, parse_verdict)?.result {
        Ok(v) => Ok(v),
        Err(e) => {
            session.flag(alias, format!("rejected after malformed verdict: {e}"));
            Ok(Verdict::rejected(format!("malformed verification: {e}")))
        }
    }
}
