//! Dataset scoring: topic coverage divergence, hop statistics, judge scores,
//! and visual grounding.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{evidence_images, render_evidence, ChunkStore};
use crate::error::{Error, Result};
use crate::gateway::{template, ChatRequest, Session};
use crate::profile::{CorpusProfile, OUTLIER};
use crate::qa::QaUnit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicDistribution {
    pub buckets: BTreeMap<i64, f64>,
}

impl TopicDistribution {
    pub fn from_counts(counts: &BTreeMap<i64, usize>) -> Result<Self> {
        let total: usize = counts.values().sum();
        if total == 0 {
            return Err(Error::EmptyInput("topic distribution has no mass".into()));
        }
        Ok(TopicDistribution {
            buckets: counts
                .iter()
                .map(|(&k, &c)| (k, c as f64 / total as f64))
                .collect(),
        })
    }

    /// Adds zero-mass buckets so both distributions share one bucket set.
    pub fn align(&self, other: &Self) -> (Self, Self) {
        let mut a = self.clone();
        let mut b = other.clone();
        for k in self.buckets.keys().chain(other.buckets.keys()) {
            a.buckets.entry(*k).or_insert(0.0);
            b.buckets.entry(*k).or_insert(0.0);
        }
        (a, b)
    }
}

/// Chunk share per profile cluster, outliers included.
pub fn corpus_distribution(profile: &CorpusProfile) -> Result<TopicDistribution> {
    let counts = profile
        .clusters
        .iter()
        .map(|c| (c.id, c.member_chunk_ids.len()))
        .collect();
    TopicDistribution::from_counts(&counts)
}

/// Most frequent topic among the unit's context chunks; ties go to the
/// lowest topic id. Chunks without a topic count as outliers.
pub fn majority_topic(context_ids: &[String], topic_of: &BTreeMap<String, i64>) -> i64 {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for id in context_ids {
        *counts.entry(topic_of.get(id).copied().unwrap_or(OUTLIER)).or_default() += 1;
    }
    let mut best = (OUTLIER, 0usize);
    for (topic, n) in counts {
        if n > best.1 {
            best = (topic, n);
        }
    }
    best.0
}

pub fn dataset_distribution(units: &[QaUnit], profile: &CorpusProfile) -> Result<TopicDistribution> {
    let topic_of = profile.topic_of();
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for u in units {
        *counts.entry(majority_topic(&u.context_ids, &topic_of)).or_default() += 1;
    }
    TopicDistribution::from_counts(&counts)
}

fn kl2(p: &BTreeMap<i64, f64>, m: &BTreeMap<i64, f64>) -> f64 {
    p.iter()
        .filter(|(_, &pi)| pi > 0.0)
        .map(|(k, &pi)| pi * (pi / m[k]).log2())
        .sum()
}

/// Jensen-Shannon divergence with base-2 logs, so the value lies in [0, 1].
pub fn jsd(p: &TopicDistribution, q: &TopicDistribution) -> Result<f64> {
    if !p.buckets.keys().eq(q.buckets.keys()) {
        return Err(Error::BucketMismatch);
    }
    let m: BTreeMap<i64, f64> = p
        .buckets
        .iter()
        .map(|(k, &pi)| (*k, 0.5 * (pi + q.buckets[k])))
        .collect();
    let d = 0.5 * kl2(&p.buckets, &m) + 0.5 * kl2(&q.buckets, &m);
    Ok(d.clamp(0.0, 1.0))
}

fn score_line(raw: &str, label: &str) -> Result<f64> {
    let line = raw
        .lines()
        .find_map(|l| l.trim().strip_prefix(label))
        .ok_or_else(|| Error::protocol("judge_scores", format!("missing {label}")))?;
    let t = line.trim();
    let t = t.strip_suffix("/10").unwrap_or(t).trim();
    let v: f64 = t
        .parse()
        .map_err(|_| Error::protocol("judge_scores", format!("`{t}` is not a score")))?;
    if !(0.0..=10.0).contains(&v) {
        return Err(Error::protocol("judge_scores", format!("score {v} outside 0-10")));
    }
    Ok(v / 10.0)
}

/// `(faithfulness, relevance)` normalized to [0, 1].
pub fn parse_judge(raw: &str) -> Result<(f64, f64)> {
    Ok((score_line(raw, "Faithfulness:")?, score_line(raw, "Relevance:")?))
}

pub fn parse_grounding(raw: &str) -> Result<bool> {
    if raw.contains("NOT_GROUNDED") {
        Ok(false)
    } else if raw.contains("GROUNDED") {
        Ok(true)
    } else {
        Err(Error::protocol("visual_grounding", "missing GROUNDED|NOT_GROUNDED"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitScore {
    pub id: String,
    pub topic_id: i64,
    pub hops: usize,
    pub multimodal: bool,
    pub faithfulness: Option<f64>,
    pub relevance: Option<f64>,
    pub grounded: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub units: usize,
    pub faithfulness: f64,
    pub relevance: f64,
    pub judged: usize,
    pub avg_hops: f64,
    pub hop_histogram: BTreeMap<usize, usize>,
    pub visual_grounding_rate: f64,
    pub grounding_evaluated: usize,
    pub multimodal_units: usize,
    pub multimodal_share: f64,
    pub jsd: f64,
    pub corpus_topics: TopicDistribution,
    pub dataset_topics: TopicDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub judge: bool,
    pub grounding: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            judge: true,
            grounding: true,
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (if n == 0 { 0.0 } else { sum / n as f64 }, n)
}

/// Scores one unit: judge call (`judge:{id}`) and, when its context holds
/// images, a grounding call (`vg:{id}`).
pub fn score_unit(
    session: &mut Session<'_>,
    unit: &QaUnit,
    store: &ChunkStore,
    profile: &CorpusProfile,
    topic_of: &BTreeMap<String, i64>,
    opts: &ScoreOptions,
) -> Result<UnitScore> {
    let chunks = store.select(&unit.context_ids);
    let images = evidence_images(&chunks);
    let mut score = UnitScore {
        id: unit.id.clone(),
        topic_id: majority_topic(&unit.context_ids, topic_of),
        hops: unit.hops,
        multimodal: !images.is_empty(),
        faithfulness: None,
        relevance: None,
        grounded: None,
    };
    if opts.judge {
        let req = ChatRequest::new(template::JUDGE)
            .var("expert_persona", profile.persona.clone())
            .var("domain", profile.domain.clone())
            .var("content", render_evidence(&chunks))
            .var("question", unit.question.clone())
            .var("answer", unit.answer.clone())
            .alias(format!("judge:{}", unit.id));
        match session.ask(&req, parse_judge)?.result {
            Ok((f, r)) => {
                score.faithfulness = Some(f);
                score.relevance = Some(r);
            }
            Err(e) => session.flag(format!("judge:{}", unit.id), format!("excluded from aggregate: {e}")),
        }
    }
    if opts.grounding && !images.is_empty() {
        let req = ChatRequest::new(template::GROUNDING)
            .var("question", unit.question.clone())
            .var("answer", unit.answer.clone())
            .var("images", images.join(", "))
            .attach(images.clone())
            .alias(format!("vg:{}", unit.id));
        score.grounded = Some(match session.ask(&req, parse_grounding)?.result {
            Ok(g) => g,
            Err(e) => {
                session.flag(format!("vg:{}", unit.id), format!("treated as not grounded: {e}"));
                false
            }
        });
    }
    Ok(score)
}

/// Folds per-unit scores and topic distributions into a report.
pub fn aggregate(scores: &[UnitScore], profile: &CorpusProfile) -> Result<ScoreReport> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("dataset has no units".into()));
    }
    let corpus = corpus_distribution(profile)?;
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    let mut hop_histogram = BTreeMap::new();
    for s in scores {
        *counts.entry(s.topic_id).or_default() += 1;
        *hop_histogram.entry(s.hops).or_default() += 1;
    }
    let (corpus_topics, dataset_topics) = corpus.align(&TopicDistribution::from_counts(&counts)?);
    let (faithfulness, judged) = mean(scores.iter().filter_map(|s| s.faithfulness));
    let (relevance, _) = mean(scores.iter().filter_map(|s| s.relevance));
    let (avg_hops, _) = mean(scores.iter().map(|s| s.hops as f64));
    let (visual_grounding_rate, grounding_evaluated) =
        mean(scores.iter().filter_map(|s| s.grounded.map(|g| if g { 1.0 } else { 0.0 })));
    let multimodal_units = scores.iter().filter(|s| s.multimodal).count();
    Ok(ScoreReport {
        units: scores.len(),
        faithfulness,
        relevance,
        judged,
        avg_hops,
        hop_histogram,
        visual_grounding_rate,
        grounding_evaluated,
        multimodal_units,
        multimodal_share: multimodal_units as f64 / scores.len() as f64,
        jsd: jsd(&corpus_topics, &dataset_topics)?,
        corpus_topics,
        dataset_topics,
    })
}
