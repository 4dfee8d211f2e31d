//! Dataset curation: question communities, answer subclusters, and
//! merge-or-retain refinement of redundant groups.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{cosine, template, ChatRequest, Session};
use crate::profile::CorpusProfile;
use crate::qa::{hop_count, QaUnit};

pub const DEFAULT_QUESTION_THRESHOLD: f64 = 0.80;
pub const DEFAULT_LINK_THRESHOLD: f64 = 0.75;
pub const DEFAULT_ALPHA: f64 = 0.7;
pub const DEFAULT_TAU: f64 = 0.85;

const START: &str = "<|#|>START<|#|>";
const NEXT: &str = "<|#|>NEXT<|#|>";
const END: &str = "<|#|>END<|#|>";
const SEP: &str = "<|#|>";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CuratorOptions {
    pub question_threshold: f64,
    pub link_threshold: f64,
    pub alpha: f64,
    pub tau: f64,
}

impl Default for CuratorOptions {
    fn default() -> Self {
        CuratorOptions {
            question_threshold: DEFAULT_QUESTION_THRESHOLD,
            link_threshold: DEFAULT_LINK_THRESHOLD,
            alpha: DEFAULT_ALPHA,
            tau: DEFAULT_TAU,
        }
    }
}

/// A unit with its question and answer embeddings.
#[derive(Debug, Clone)]
pub struct EmbeddedUnit {
    pub unit: QaUnit,
    pub question_vec: Vec<f64>,
    pub answer_vec: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionCommunity {
    pub id: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSubcluster {
    pub id: String,
    pub community_id: String,
    pub members: Vec<String>,
    pub min_pairwise_sim: f64,
}

pub fn jaccard(a: &[String], b: &[String]) -> f64 {
    let a: BTreeSet<&String> = a.iter().collect();
    let b: BTreeSet<&String> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// `alpha * cos(answers) + (1 - alpha) * jaccard(contexts)`.
pub fn unit_similarity(a: &EmbeddedUnit, b: &EmbeddedUnit, alpha: f64) -> f64 {
    alpha * cosine(&a.answer_vec, &b.answer_vec)
        + (1.0 - alpha) * jaccard(&a.unit.context_ids, &b.unit.context_ids)
}

/// Connected components of the graph on `0..n` with an edge where `linked`
/// holds. Members ascend; components are ordered by smallest member.
pub fn components(n: usize, linked: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if linked(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by_key(|g| g[0]);
    out
}

fn sorted_by_id(units: &[EmbeddedUnit]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.sort_by(|&a, &b| units[a].unit.id.cmp(&units[b].unit.id));
    order
}

/// Thresholded question-cosine components. Community ids are the smallest
/// member unit id.
pub fn question_communities(units: &[EmbeddedUnit], threshold: f64) -> Vec<QuestionCommunity> {
    let order = sorted_by_id(units);
    components(order.len(), |i, j| {
        cosine(&units[order[i]].question_vec, &units[order[j]].question_vec) >= threshold
    })
    .into_iter()
    .map(|g| {
        let members: Vec<String> = g.iter().map(|&k| units[order[k]].unit.id.clone()).collect();
        QuestionCommunity {
            id: members[0].clone(),
            members,
        }
    })
    .collect()
}

fn min_pairwise(units: &[&EmbeddedUnit], alpha: f64) -> f64 {
    let mut min = 1.0f64;
    for i in 0..units.len() {
        for j in i + 1..units.len() {
            min = min.min(unit_similarity(units[i], units[j], alpha));
        }
    }
    min
}

/// Splits a community by thresholded unit similarity. A singleton has
/// `min_pairwise_sim = 1`.
pub fn answer_subclusters(
    community: &QuestionCommunity,
    units: &[EmbeddedUnit],
    alpha: f64,
    link_threshold: f64,
) -> Vec<AnswerSubcluster> {
    let members: Vec<&EmbeddedUnit> = community
        .members
        .iter()
        .filter_map(|id| units.iter().find(|u| &u.unit.id == id))
        .collect();
    components(members.len(), |i, j| {
        unit_similarity(members[i], members[j], alpha) >= link_threshold
    })
    .into_iter()
    .map(|g| {
        let group: Vec<&EmbeddedUnit> = g.iter().map(|&k| members[k]).collect();
        let ids: Vec<String> = group.iter().map(|u| u.unit.id.clone()).collect();
        AnswerSubcluster {
            id: format!("{}/{}", community.id, ids[0]),
            community_id: community.id.clone(),
            min_pairwise_sim: min_pairwise(&group, alpha),
            members: ids,
        }
    })
    .collect()
}

/// Parses `START ... NEXT ... END` blocks of `Question<|#|>Q<|#|>Answer<|#|>A`.
pub fn parse_pairs(raw: &str, protocol: &'static str) -> Result<Vec<(String, String)>> {
    let s = raw
        .find(START)
        .ok_or_else(|| Error::protocol(protocol, "missing START"))?
        + START.len();
    let len = raw[s..]
        .find(END)
        .ok_or_else(|| Error::protocol(protocol, "missing END"))?;
    let mut pairs = Vec::new();
    for block in raw[s..s + len].split(NEXT) {
        let fields: Vec<&str> = block.trim().split(SEP).map(str::trim).collect();
        match fields.as_slice() {
            ["Question", q, "Answer", a] if !q.is_empty() && !a.is_empty() => {
                pairs.push((q.to_string(), a.to_string()))
            }
            _ => {
                return Err(Error::protocol(
                    protocol,
                    format!("malformed pair block `{}`", block.trim()),
                ))
            }
        }
    }
    Ok(pairs)
}

fn candidates_text(units: &[&QaUnit]) -> String {
    units
        .iter()
        .enumerate()
        .map(|(i, u)| format!("[{}] Question: {}\nAnswer: {}", i + 1, u.question, u.answer))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Maps a ranked list back onto `members` by question text.
fn apply_ranking<'a>(ranked: &[(String, String)], members: &[&'a QaUnit]) -> Result<Vec<&'a QaUnit>> {
    if ranked.len() != members.len() {
        return Err(Error::protocol(
            "deduplication_rank",
            format!("ranked {} pairs, expected {}", ranked.len(), members.len()),
        ));
    }
    let mut used = vec![false; members.len()];
    let mut out = Vec::with_capacity(members.len());
    for (q, _) in ranked {
        let k = (0..members.len())
            .find(|&k| !used[k] && members[k].question.trim() == q)
            .ok_or_else(|| Error::protocol("deduplication_rank", format!("unknown question `{q}`")))?;
        used[k] = true;
        out.push(members[k]);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    Retained,
    Merged { outputs: usize },
    /// Refinement was due but a protocol failed; originals kept.
    Fallback { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubclusterReport {
    pub id: String,
    pub members: Vec<String>,
    pub min_pairwise_sim: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityReport {
    pub id: String,
    pub size: usize,
    pub subclusters: Vec<SubclusterReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub input_count: usize,
    pub output_count: usize,
    pub merged_subclusters: usize,
    pub communities: Vec<CommunityReport>,
}

fn merged_unit(id: String, question: String, answer: String, sources: &[&QaUnit]) -> Result<QaUnit> {
    let mut lineage: BTreeSet<String> = BTreeSet::new();
    let mut contexts: BTreeSet<String> = BTreeSet::new();
    let mut decomposition = Vec::new();
    for s in sources {
        lineage.insert(s.id.clone());
        lineage.extend(s.lineage.iter().cloned());
        contexts.extend(s.context_ids.iter().cloned());
        for d in &s.decomposition {
            if !decomposition.contains(d) {
                decomposition.push(d.clone());
            }
        }
    }
    let first = sources
        .iter()
        .min_by(|a, b| a.id.cmp(&b.id))
        .expect("merge has sources");
    Ok(QaUnit {
        id,
        question,
        answer,
        relevance: sources.iter().map(|s| s.relevance).fold(0.0, f64::max),
        difficulty: sources.iter().map(|s| s.difficulty).fold(0.0, f64::max),
        hops: hop_count(&decomposition).unwrap_or(first.hops),
        seed_id: first.seed_id.clone(),
        context_ids: contexts.into_iter().collect(),
        decomposition,
        topic_id: None,
        verdict: first.verdict.clone(),
        lineage: lineage.into_iter().collect(),
    })
}

/// Merge-or-retain for one subcluster. Refinement runs only for groups of
/// two or more whose `min_pairwise_sim` strictly exceeds `tau`: a rank call
/// orders the members, then a merge call produces the replacement pairs.
/// Any protocol failure keeps the originals.
pub fn refine(
    session: &mut Session<'_>,
    sub: &AnswerSubcluster,
    members: &[&QaUnit],
    profile: &CorpusProfile,
    tau: f64,
) -> Result<(Vec<QaUnit>, Decision)> {
    let originals = || members.iter().map(|u| (*u).clone()).collect::<Vec<_>>();
    if members.len() < 2 || sub.min_pairwise_sim <= tau {
        return Ok((originals(), Decision::Retained));
    }
    let fallback = |session: &mut Session<'_>, e: Error| {
        session.flag(format!("curate:{}", sub.id), format!("originals kept: {e}"));
        Ok((originals(), Decision::Fallback { reason: e.to_string() }))
    };

    let rank_req = ChatRequest::new(template::RANK)
        .var("expert_persona", profile.persona.clone())
        .var("domain", profile.domain.clone())
        .var("candidates_text", candidates_text(members))
        .alias(format!("rank:{}", sub.id));
    let ranked = match session
        .ask(&rank_req, |raw| {
            apply_ranking(&parse_pairs(raw, "deduplication_rank")?, members)
        })?
        .result
    {
        Ok(r) => r,
        Err(e) => return fallback(session, e),
    };

    let merge_req = ChatRequest::new(template::MERGE)
        .var("expert_persona", profile.persona.clone())
        .var("domain", profile.domain.clone())
        .var("candidates_text", candidates_text(&ranked))
        .alias(format!("merge:{}", sub.id));
    let pairs = match session
        .ask(&merge_req, |raw| parse_pairs(raw, "deduplication_merge"))?
        .result
    {
        Ok(p) => p,
        Err(e) => return fallback(session, e),
    };
    let outputs = pairs.len();
    let units = pairs
        .into_iter()
        .enumerate()
        .map(|(k, (q, a))| merged_unit(format!("{}~m{k}", sub.id), q, a, members))
        .collect::<Result<Vec<_>>>()?;
    Ok((units, Decision::Merged { outputs }))
}

/// Full curation: embeds questions and answers, clusters in two stages,
/// refines each subcluster, and assigns final ids `qa_NNNN`.
pub fn curate(
    session: &mut Session<'_>,
    units: Vec<QaUnit>,
    profile: &CorpusProfile,
    opts: &CuratorOptions,
) -> Result<(Vec<QaUnit>, CurationReport)> {
    let mut report = CurationReport {
        input_count: units.len(),
        ..CurationReport::default()
    };
    if units.is_empty() {
        session.flag("curate", "no accepted units to curate");
        return Ok((Vec::new(), report));
    }
    let gw = session.gateway();
    let questions = gw.embed(&units.iter().map(|u| u.question.clone()).collect::<Vec<_>>())?;
    let answers = gw.embed(&units.iter().map(|u| u.answer.clone()).collect::<Vec<_>>())?;
    let embedded: Vec<EmbeddedUnit> = units
        .into_iter()
        .zip(questions.into_iter().zip(answers))
        .map(|(unit, (q, a))| EmbeddedUnit {
            unit,
            question_vec: q.values,
            answer_vec: a.values,
        })
        .collect();

    let mut out = Vec::new();
    for community in question_communities(&embedded, opts.question_threshold) {
        let mut creport = CommunityReport {
            id: community.id.clone(),
            size: community.members.len(),
            subclusters: Vec::new(),
        };
        for sub in answer_subclusters(&community, &embedded, opts.alpha, opts.link_threshold) {
            let members: Vec<&QaUnit> = sub
                .members
                .iter()
                .filter_map(|id| embedded.iter().find(|e| &e.unit.id == id).map(|e| &e.unit))
                .collect();
            let (refined, decision) = refine(session, &sub, &members, profile, opts.tau)?;
            if matches!(decision, Decision::Merged { .. }) {
                report.merged_subclusters += 1;
            }
            out.extend(refined);
            creport.subclusters.push(SubclusterReport {
                id: sub.id,
                members: sub.members,
                min_pairwise_sim: sub.min_pairwise_sim,
                decision,
            });
        }
        report.communities.push(creport);
    }
    let out = assemble(out);
    report.output_count = out.len();
    Ok((out, report))
}

/// Union of refined units with ids reassigned in order.
pub fn assemble(units: Vec<QaUnit>) -> Vec<QaUnit> {
    units
        .into_iter()
        .enumerate()
        .map(|(i, mut u)| {
            u.id = format!("qa_{:04}", i + 1);
            u
        })
        .collect()
}
