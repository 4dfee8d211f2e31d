//! Density-based clustering with DBSCAN semantics.

use serde::{Deserialize, Serialize};

use crate::gateway::cosine;

pub const OUTLIER: i64 = -1;
pub const DEFAULT_EPS: f64 = 0.4;
pub const DEFAULT_MIN_PTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    /// `1 - cos`; equal vectors are at distance 0 even when zero.
    Cosine,
}

pub fn distance(metric: Metric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        Metric::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt(),
        Metric::Cosine => {
            if a == b {
                0.0
            } else {
                1.0 - cosine(a, b)
            }
        }
    }
}

/// Cluster label per point. A point is core when at least `min_pts` points,
/// itself included, lie within `eps`. Cluster ids follow the order in which
/// their first core point appears; unreachable points get [`OUTLIER`].
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize, metric: Metric) -> Vec<i64> {
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| distance(metric, &points[i], &points[j]) <= eps)
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts.max(1)).collect();
    let mut labels = vec![OUTLIER; n];
    let mut next = 0i64;
    for i in 0..n {
        if !core[i] || labels[i] != OUTLIER {
            continue;
        }
        labels[i] = next;
        let mut queue = vec![i];
        while let Some(p) = queue.pop() {
            for &q in &neighbors[p] {
                if labels[q] == OUTLIER {
                    labels[q] = next;
                    if core[q] {
                        queue.push(q);
                    }
                }
            }
        }
        next += 1;
    }
    labels
}
