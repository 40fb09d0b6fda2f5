//! Exact brute-force K-nearest-neighbor search and edge finishing.

use rayon::prelude::*;

use super::{FeatureMatrix, KnnGraph};
use crate::error::{CoreError, Result};

/// Squared Euclidean distance with a fixed four-way unrolled accumulation
/// order. Every caller (search, oracle, prediction) goes through this one
/// function so distance comparisons and ties are reproducible bit for bit.
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let p = i * 4;
        let d0 = a[p] - b[p];
        let d1 = a[p + 1] - b[p + 1];
        let d2 = a[p + 2] - b[p + 2];
        let d3 = a[p + 3] - b[p + 3];
        acc[0] += d0 * d0;
        acc[1] += d1 * d1;
        acc[2] += d2 * d2;
        acc[3] += d3 * d3;
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        let d = a[i] - b[i];
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Directed KNN result: for each row, its k nearest other rows with their
/// Euclidean distances, nearest first. Ties break toward the smaller index.
pub type DirectedKnn = Vec<Vec<(u32, f64)>>;

/// Exact brute-force Euclidean KNN, parallel over query rows.
pub fn knn_build(x: &FeatureMatrix, k: usize) -> Result<DirectedKnn> {
    if k == 0 {
        return Err(CoreError::InvalidParameter {
            name: "k",
            reason: "k must be at least 1".into(),
        });
    }
    if k >= x.n {
        return Err(CoreError::InvalidParameter {
            name: "k",
            reason: format!("k = {k} must be smaller than the row count {}", x.n),
        });
    }
    let n = x.n;
    let result: Vec<Vec<(u32, f64)>> = (0..n)
        .into_par_iter()
        .map(|q| {
            let qrow = x.row(q);
            let mut cand: Vec<(f64, u32)> = Vec::with_capacity(n - 1);
            for other in 0..n {
                if other == q {
                    continue;
                }
                cand.push((sq_dist(qrow, x.row(other)), other as u32));
            }
            // ties by smaller node index: (distance, index) lexicographic
            cand.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
            cand.truncate(k);
            cand.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            cand.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
        })
        .collect();
    Ok(result)
}

pub const DEFAULT_DISTANCE_EPS: f64 = 1e-8;

/// Inverse-distance edge weight: `1 / (distance + eps)`.
pub fn invert_distance(distance: f64, eps: f64) -> Result<f64> {
    if distance < 0.0 {
        return Err(CoreError::InvalidParameter {
            name: "distance",
            reason: format!("negative distance {distance}"),
        });
    }
    Ok(1.0 / (distance + eps))
}

/// Apply inverse-distance weighting to a directed KNN structure.
pub fn invert_distances(knn: &DirectedKnn, eps: f64) -> Result<Vec<Vec<(u32, f64)>>> {
    knn.iter()
        .map(|row| {
            row.iter()
                .map(|&(v, d)| invert_distance(d, eps).map(|w| (v, w)))
                .collect()
        })
        .collect()
}

/// Union-symmetrize directed weighted edges into an undirected [`KnnGraph`].
///
/// An edge present in both directions keeps the arithmetic mean of the two
/// weights; an edge present in one direction keeps its weight. Self-loops
/// are dropped.
pub fn symmetrize(directed: &[Vec<(u32, f64)>]) -> KnnGraph {
    symmetrize_with_k(directed, 0)
}

pub fn symmetrize_with_k(directed: &[Vec<(u32, f64)>], k_used: u32) -> KnnGraph {
    let n = directed.len();
    // bucket both directions per node, then merge duplicates by mean
    let mut buckets: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for (u, row) in directed.iter().enumerate() {
        for &(v, w) in row {
            if v as usize == u {
                continue;
            }
            buckets[u].push((v, w));
            buckets[v as usize].push((u as u32, w));
        }
    }
    let mut offsets = Vec::with_capacity(n + 1);
    let mut neighbors = Vec::new();
    let mut weights = Vec::new();
    offsets.push(0);
    for bucket in buckets.iter_mut() {
        bucket.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let mut i = 0;
        while i < bucket.len() {
            let (v, w) = bucket[i];
            // duplicates come from (u->v, v->u) pairs and from repeated
            // directed edges after our own mirroring: average the two
            // directions, dedupe exact mirror copies
            let mut j = i + 1;
            let mut ws = vec![w];
            while j < bucket.len() && bucket[j].0 == v {
                ws.push(bucket[j].1);
                j += 1;
            }
            // mirrored insertion duplicates every directed edge, so distinct
            // stored weights come in pairs; collapse to unique values first
            ws.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            ws.dedup();
            let w = ws.iter().sum::<f64>() / ws.len() as f64;
            neighbors.push(v);
            weights.push(w);
            i = j;
        }
        offsets.push(neighbors.len());
    }
    KnnGraph::from_csr(n, offsets, neighbors, weights, k_used)
}

/// Full graph construction pipeline: exact KNN, inverse-distance weights,
/// union symmetrization.
pub fn build_graph(x: &FeatureMatrix, k: usize, eps: f64) -> Result<KnnGraph> {
    let knn = knn_build(x, k)?;
    let weighted = invert_distances(&knn, eps)?;
    Ok(symmetrize_with_k(&weighted, k as u32))
}
