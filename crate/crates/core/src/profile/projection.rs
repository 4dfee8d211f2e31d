//! Deterministic principal-component projection.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub const DEFAULT_DIMENSIONS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub points: Vec<Vec<f64>>,
    /// Unit principal axes in the input space, strongest first.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    /// Set when the input has no variance; all points are then zero.
    pub degenerate: bool,
}

const RELATIVE_EPS: f64 = 1e-12;

/// Projects onto the top `d` principal components of the centered set. Each
/// component is signed so that its largest-magnitude coordinate is positive
/// (first such coordinate on ties). Components with no variance project to 0.
pub fn project(vectors: &[Vec<f64>], d: usize) -> Result<Projection> {
    let n = vectors.len();
    if n < d + 1 {
        return Err(Error::InsufficientPoints { needed: d + 1, got: n });
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
    }

    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let x = DMatrix::from_fn(n, dim, |i, j| vectors[i][j] - mean[j]);

    // Eigen-decompose whichever of X^T X and X X^T is smaller.
    let (values, axes) = if dim <= n {
        let eig = SymmetricEigen::new(x.transpose() * &x);
        let axes: Vec<Vec<f64>> = (0..dim)
            .map(|k| eig.eigenvectors.column(k).iter().copied().collect())
            .collect();
        (eig.eigenvalues.iter().copied().collect::<Vec<_>>(), axes)
    } else {
        let eig = SymmetricEigen::new(&x * x.transpose());
        let axes: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let u = eig.eigenvectors.column(k);
                let v = x.transpose() * u;
                let norm = v.norm();
                if norm > 0.0 {
                    v.iter().map(|c| c / norm).collect()
                } else {
                    vec![0.0; dim]
                }
            })
            .collect();
        (eig.eigenvalues.iter().copied().collect::<Vec<_>>(), axes)
    };

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let top = values.iter().copied().fold(0.0f64, f64::max);
    let degenerate = top <= 0.0 || !top.is_finite();

    let mut components = Vec::with_capacity(d);
    let mut explained = Vec::with_capacity(d);
    for &k in order.iter().take(d) {
        let lambda = values[k].max(0.0);
        if degenerate || lambda <= top * RELATIVE_EPS {
            components.push(vec![0.0; dim]);
            explained.push(0.0);
            continue;
        }
        let mut axis = axes[k].clone();
        let pivot = axis
            .iter()
            .enumerate()
            .fold(0, |best, (i, c)| if c.abs() > axis[best].abs() { i } else { best });
        if axis[pivot] < 0.0 {
            axis.iter_mut().for_each(|c| *c = -*c);
        }
        components.push(axis);
        explained.push(lambda / (n as f64 - 1.0).max(1.0));
    }
    while components.len() < d {
        components.push(vec![0.0; dim]);
        explained.push(0.0);
    }

    let points = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| x.row(i).iter().zip(c).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    Ok(Projection {
        points,
        components,
        explained_variance: explained,
        degenerate,
    })
}
