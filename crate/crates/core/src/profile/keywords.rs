//! Class-based TF-IDF and maximal marginal relevance keyword selection.

use std::collections::BTreeMap;

use crate::gateway::cosine;

/// `tf(t, c) · ln(1 + A / f(t))` for every term of every cluster, where `f(t)`
/// is the term's frequency summed over clusters and `A` the mean token count
/// per cluster.
pub fn ctfidf(cluster_tokens: &[Vec<String>]) -> Vec<BTreeMap<String, f64>> {
    let tf: Vec<BTreeMap<&str, usize>> = cluster_tokens
        .iter()
        .map(|tokens| {
            let mut m = BTreeMap::new();
            for t in tokens {
                *m.entry(t.as_str()).or_insert(0) += 1;
            }
            m
        })
        .collect();
    let mut total: BTreeMap<&str, usize> = BTreeMap::new();
    for m in &tf {
        for (t, c) in m {
            *total.entry(t).or_insert(0) += c;
        }
    }
    let a = if cluster_tokens.is_empty() {
        0.0
    } else {
        cluster_tokens.iter().map(Vec::len).sum::<usize>() as f64 / cluster_tokens.len() as f64
    };
    tf.iter()
        .map(|m| {
            m.iter()
                .map(|(t, &c)| {
                    let f = total[t] as f64;
                    (t.to_string(), ctfidf_score(c as f64, f, a))
                })
                .collect()
        })
        .collect()
}

pub fn ctfidf_score(tf: f64, f: f64, a: f64) -> f64 {
    tf * (1.0 + a / f).ln()
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub term: String,
    pub relevance: f64,
    pub embedding: Vec<f64>,
}

/// Greedy MMR: repeatedly takes the candidate maximizing
/// `λ·rel − (1−λ)·max cos(selected)`, ties to higher relevance then the
/// lexicographically smaller term.
pub fn mmr_select(candidates: &[Candidate], k: usize, lambda: f64) -> Vec<String> {
    let mut chosen: Vec<usize> = Vec::new();
    let mut remaining: Vec<usize> = (0..candidates.len()).collect();
    while chosen.len() < k && !remaining.is_empty() {
        let score = |i: usize| {
            let c = &candidates[i];
            let redundancy = chosen
                .iter()
                .map(|&j| cosine(&c.embedding, &candidates[j].embedding))
                .fold(f64::NEG_INFINITY, f64::max);
            let redundancy = if chosen.is_empty() { 0.0 } else { redundancy };
            lambda * c.relevance - (1.0 - lambda) * redundancy
        };
        let (pos, _) = remaining
            .iter()
            .enumerate()
            .map(|(pos, &i)| (pos, (score(i), i)))
            .fold(None::<(usize, (f64, usize))>, |best, (pos, (s, i))| match best {
                None => Some((pos, (s, i))),
                Some((bp, (bs, bi))) => {
                    let (c, b) = (&candidates[i], &candidates[bi]);
                    let better = s > bs
                        || (s == bs
                            && (c.relevance > b.relevance
                                || (c.relevance == b.relevance && c.term < b.term)));
                    if better {
                        Some((pos, (s, i)))
                    } else {
                        Some((bp, (bs, bi)))
                    }
                }
            })
            .expect("remaining is non-empty");
        chosen.push(remaining.remove(pos));
    }
    chosen.into_iter().map(|i| candidates[i].term.clone()).collect()
}
