//! Local weighting: Gaussian product kernels with rule-of-thumb bandwidths
//! and a k-nearest-neighbor alternative.

use crate::error::{invalid, Result};
use serde::{Deserialize, Serialize};

/// How to localize around a query point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Locality {
    /// Gaussian product kernel; per-coordinate bandwidth is
    /// `scale * sd_j * n^(-1/5)`.
    Kernel { scale: f64 },
    /// Uniform weights over the k nearest neighbors (Euclidean).
    Knn { k: usize },
}

impl Default for Locality {
    fn default() -> Self {
        Locality::Kernel { scale: 1.0 }
    }
}

impl Locality {
    pub fn validate(&self) -> Result<()> {
        match self {
            Locality::Kernel { scale } if !(scale.is_finite() && *scale > 0.0) => {
                Err(invalid(format!("bandwidth scale must be positive, got {scale}")))
            }
            Locality::Knn { k: 0 } => Err(invalid("k must be >= 1")),
            _ => Ok(()),
        }
    }
}

/// Rule-of-thumb bandwidths `scale * sd_j * n^(-1/5)`, floored away from zero
/// so constant columns do not collapse the kernel.
pub(crate) fn rule_of_thumb_bandwidths(xs: &[&[f64]], scale: f64) -> Vec<f64> {
    let n = xs.len();
    let dim = xs.first().map_or(0, |x| x.len());
    let nf = n as f64;
    let rate = nf.powf(-0.2);
    (0..dim)
        .map(|j| {
            let mean = xs.iter().map(|x| x[j]).sum::<f64>() / nf;
            let var = xs.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / nf.max(1.0);
            let sd = var.sqrt();
            (scale * sd * rate).max(1e-6)
        })
        .collect()
}

/// Kernel (or kNN) weights of each training point at the query.
///
/// Falls back to a point mass on the nearest neighbor if every kernel weight
/// underflows to zero, so a valid weighted sample always comes back.
pub(crate) fn local_weights(
    xs: &[&[f64]],
    bandwidths: &[f64],
    locality: Locality,
    query: &[f64],
) -> Vec<f64> {
    match locality {
        Locality::Kernel { .. } => {
            let mut w: Vec<f64> = xs
                .iter()
                .map(|x| {
                    let mut s = 0.0;
                    for ((xi, qi), h) in x.iter().zip(query).zip(bandwidths) {
                        let z = (xi - qi) / h;
                        s += z * z;
                    }
                    (-0.5 * s).exp()
                })
                .collect();
            if w.iter().sum::<f64>() <= f64::MIN_POSITIVE {
                let nearest = nearest_index(xs, query);
                w.iter_mut().for_each(|v| *v = 0.0);
                w[nearest] = 1.0;
            }
            w
        }
        Locality::Knn { k } => {
            let k = k.min(xs.len());
            let mut order: Vec<usize> = (0..xs.len()).collect();
            order.sort_by(|&a, &b| {
                sq_dist(xs[a], query)
                    .partial_cmp(&sq_dist(xs[b], query))
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let mut w = vec![0.0; xs.len()];
            for &i in order.iter().take(k) {
                w[i] = 1.0 / k as f64;
            }
            w
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_index(xs: &[&[f64]], query: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, x) in xs.iter().enumerate() {
        let d = sq_dist(x, query);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}
