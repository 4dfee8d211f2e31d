//! Analytic semantic chunking.
//!
//! A window of atomic units is split into contiguous segments minimizing
//!
//! ```text
//! cost(C) = Σ_{j=1}^{|C|-1} (1 - cos(c_j, c_{j+1})) + λ·|C|
//! ```
//!
//! where a segment's vector is the normalized mean of its unit embeddings.
//! [`optimal_partition`] solves this exactly with a dynamic program over
//! (last segment start, last segment end) states; [`brute_force_partition`]
//! enumerates all `2^(n-1)` segmentations and serves as its oracle. Both report
//! cost through [`partition_cost`], which accumulates left to right in the
//! same order as the dynamic program, so equal segmentations give bit-equal
//! costs.
//!
//! Ties are broken toward fewer segments, then toward the lexicographically
//! smallest boundary list.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::cosine;

pub const DEFAULT_LAMBDA: f64 = 0.3;
pub const BRUTE_FORCE_LIMIT: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Exclusive segment ends, strictly increasing; the last equals the unit count.
    pub boundaries: Vec<usize>,
    pub cost: f64,
    pub lambda: f64,
}

impl Partition {
    pub fn segments(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let starts = std::iter::once(0).chain(self.boundaries.iter().copied());
        starts.zip(self.boundaries.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.boundaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }
}

fn segment_mean(units: &[Vec<f64>], start: usize, end: usize) -> Vec<f64> {
    let dim = units.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; dim];
    for u in &units[start..end] {
        for (m, x) in mean.iter_mut().zip(u) {
            *m += x;
        }
    }
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        mean.iter_mut().for_each(|v| *v /= norm);
    }
    mean
}

/// Objective value of the segmentation given by `boundaries`.
pub fn partition_cost(boundaries: &[usize], unit_embeddings: &[Vec<f64>], lambda: f64) -> f64 {
    if boundaries.is_empty() {
        return 0.0;
    }
    let mut start = 0;
    let mut prev: Option<Vec<f64>> = None;
    let mut cost = 0.0;
    for &end in boundaries {
        let mean = segment_mean(unit_embeddings, start, end);
        cost = match &prev {
            None => lambda,
            Some(p) => cost + (1.0 - cosine(p, &mean)) + lambda,
        };
        prev = Some(mean);
        start = end;
    }
    cost
}

/// Orders candidate solutions: lower cost, then fewer segments, then
/// lexicographically smaller boundaries.
fn better(a: (f64, &[usize]), b: (f64, &[usize])) -> bool {
    match a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => match a.1.len().cmp(&b.1.len()) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a.1 < b.1,
        },
    }
}

#[derive(Clone)]
struct State {
    cost: f64,
    boundaries: Vec<usize>,
}

/// Exact minimizer over all contiguous segmentations. O(n³) similarity
/// evaluations after O(n²) segment means.
pub fn optimal_partition(unit_embeddings: &[Vec<f64>], lambda: f64) -> Partition {
    let n = unit_embeddings.len();
    if n == 0 {
        return Partition {
            boundaries: Vec::new(),
            cost: 0.0,
            lambda,
        };
    }
    // means[s][e - s - 1] = normalized mean of units[s..e]
    let means: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|s| {
            (s + 1..=n)
                .map(|e| segment_mean(unit_embeddings, s, e))
                .collect()
        })
        .collect();
    let mean = |s: usize, e: usize| &means[s][e - s - 1];

    // best[s][e]: best segmentation of units[0..e) whose last segment is [s, e)
    let mut best: Vec<Vec<Option<State>>> = vec![vec![None; n + 1]; n + 1];
    for e in 1..=n {
        best[0][e] = Some(State {
            cost: lambda,
            boundaries: vec![e],
        });
        for s in 1..e {
            let mut chosen: Option<State> = None;
            for p in 0..s {
                let Some(prev) = &best[p][s] else { continue };
                let cost = prev.cost + (1.0 - cosine(mean(p, s), mean(s, e))) + lambda;
                let mut boundaries = prev.boundaries.clone();
                boundaries.push(e);
                let replace = match &chosen {
                    None => true,
                    Some(c) => better((cost, &boundaries), (c.cost, &c.boundaries)),
                };
                if replace {
                    chosen = Some(State { cost, boundaries });
                }
            }
            best[s][e] = chosen;
        }
    }

    let mut winner: Option<State> = None;
    for s in 0..n {
        if let Some(cand) = &best[s][n] {
            let replace = match &winner {
                None => true,
                Some(w) => better((cand.cost, &cand.boundaries), (w.cost, &w.boundaries)),
            };
            if replace {
                winner = Some(cand.clone());
            }
        }
    }
    let winner = winner.expect("n >= 1 has at least the single-segment solution");
    Partition {
        cost: partition_cost(&winner.boundaries, unit_embeddings, lambda),
        boundaries: winner.boundaries,
        lambda,
    }
}

/// Exhaustive search; windows are limited to [`BRUTE_FORCE_LIMIT`] units.
pub fn brute_force_partition(unit_embeddings: &[Vec<f64>], lambda: f64) -> Result<Partition> {
    let n = unit_embeddings.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::Size(n));
    }
    if n == 0 {
        return Ok(Partition {
            boundaries: Vec::new(),
            cost: 0.0,
            lambda,
        });
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    // bit i set = a segment boundary after unit i (i in 0..n-1)
    for mask in 0u32..(1u32 << (n - 1)) {
        let mut boundaries: Vec<usize> = (0..n - 1)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| i + 1)
            .collect();
        boundaries.push(n);
        let cost = partition_cost(&boundaries, unit_embeddings, lambda);
        let replace = match &best {
            None => true,
            Some((c, b)) => better((cost, &boundaries), (*c, b)),
        };
        if replace {
            best = Some((cost, boundaries));
        }
    }
    let (cost, boundaries) = best.expect("at least one partition");
    Ok(Partition {
        boundaries,
        cost,
        lambda,
    })
}

/// Greedy token-budget segmentation used by the fixed-size chunker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPartition {
    pub boundaries: Vec<usize>,
    /// Indices (into the segment list) of single units larger than the budget.
    pub oversized: Vec<usize>,
}

pub fn fixed_partition(token_counts: &[usize], size_tokens: usize) -> FixedPartition {
    assert!(size_tokens > 0, "token budget must be positive");
    let mut boundaries = Vec::new();
    let mut oversized = Vec::new();
    let mut current = 0usize;
    let mut current_len = 0usize;
    for (i, &tokens) in token_counts.iter().enumerate() {
        if current_len > 0 && current + tokens > size_tokens {
            boundaries.push(i);
            current = 0;
            current_len = 0;
        }
        current += tokens;
        current_len += 1;
        if current_len == 1 && tokens > size_tokens {
            oversized.push(boundaries.len());
        }
    }
    if current_len > 0 {
        boundaries.push(token_counts.len());
    }
    FixedPartition {
        boundaries,
        oversized,
    }
}
