//! k-means with k-means++ seeding, Lloyd iterations, farthest-point repair
//! for emptied clusters, and best-of-restarts selection.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::graph::knn::sq_dist;
use crate::graph::FeatureMatrix;
use crate::rng::batch_rng;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Vec<f64>,
    pub k: usize,
    pub assignments: Vec<u32>,
    pub inertia: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct KMeansConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            max_iters: 300,
            tol: 1e-4,
            restarts: 5,
        }
    }
}

/// Assign every point to its nearest centroid (ties toward the lowest
/// centroid index) and report the summed squared distance.
fn assign_points(x: &FeatureMatrix, centroids: &[f64], k: usize, out: &mut [u32]) -> f64 {
    let dim = x.dim;
    let dists: Vec<f64> = out
        .par_iter_mut()
        .enumerate()
        .map(|(i, slot)| {
            let row = x.row(i);
            let mut best = f64::INFINITY;
            let mut pick = 0u32;
            for c in 0..k {
                let d = sq_dist(row, &centroids[c * dim..(c + 1) * dim]);
                if d < best {
                    best = d;
                    pick = c as u32;
                }
            }
            *slot = pick;
            best
        })
        .collect();
    dists.iter().sum()
}

/// k-means++ seeding: first center uniform, then proportional to the squared
/// distance to the nearest chosen center.
fn plus_plus_seed(x: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (n, dim) = (x.n, x.dim);
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // all mass at chosen centers (duplicate points): uniform fallback
            rng.random_range(0..n)
        };
        centroids.extend_from_slice(x.row(idx));
        let c = centroids.len() / dim - 1;
        for i in 0..n {
            let d = sq_dist(x.row(i), &centroids[c * dim..(c + 1) * dim]);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

/// Move every empty cluster's centroid onto the in-use point farthest from
/// its assigned centroid, farthest first.
fn repair_empty_clusters(
    x: &FeatureMatrix,
    centroids: &mut [f64],
    counts: &[usize],
    assignments: &[u32],
) {
    let dim = x.dim;
    let empties: Vec<usize> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(i, _)| i)
        .collect();
    if empties.is_empty() {
        return;
    }
    let mut dists: Vec<(f64, usize)> = (0..x.n)
        .map(|i| {
            let c = assignments[i] as usize;
            (sq_dist(x.row(i), &centroids[c * dim..(c + 1) * dim]), i)
        })
        .collect();
    dists.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
    for (slot, &(_, point)) in empties.iter().zip(dists.iter()) {
        centroids[slot * dim..(slot + 1) * dim].copy_from_slice(x.row(point));
    }
}

fn lloyd(x: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng, cfg: &KMeansConfig) -> KMeansResult {
    let (n, dim) = (x.n, x.dim);
    let mut centroids = plus_plus_seed(x, k, rng);
    let mut assignments = vec![0u32; n];
    let mut inertia = assign_points(x, &centroids, k, &mut assignments);
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        // means of assigned points
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignments[i] as usize;
            counts[c] += 1;
            let row = x.row(i);
            let acc = &mut sums[c * dim..(c + 1) * dim];
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        let mut new_centroids = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for j in 0..dim {
                    new_centroids[c * dim + j] = sums[c * dim + j] * inv;
                }
            }
        }
        repair_empty_clusters(x, &mut new_centroids, &counts, &assignments);
        let shift = (0..k)
            .map(|c| {
                sq_dist(
                    &centroids[c * dim..(c + 1) * dim],
                    &new_centroids[c * dim..(c + 1) * dim],
                )
                .sqrt()
            })
            .fold(0.0f64, f64::max);
        centroids = new_centroids;
        let new_inertia = assign_points(x, &centroids, k, &mut assignments);
        // Lloyd cannot increase inertia (within fp rounding)
        assert!(
            new_inertia <= inertia * (1.0 + 1e-9) + 1e-12,
            "inertia increased: {inertia} -> {new_inertia}"
        );
        inertia = new_inertia;
        if shift < cfg.tol {
            break;
        }
    }
    KMeansResult {
        centroids,
        k,
        assignments,
        inertia,
        iterations,
    }
}

/// Best-inertia k-means over seeded restarts (ties keep the earliest
/// restart). Bitwise deterministic for a fixed seed.
pub fn kmeans(x: &FeatureMatrix, k: usize, seed: u64, cfg: &KMeansConfig) -> Result<KMeansResult> {
    if k == 0 || k > x.n {
        return Err(CoreError::InvalidParameter {
            name: "k",
            reason: format!("k = {k} must be in [1, {}]", x.n),
        });
    }
    let restarts = cfg.restarts.max(1);
    let runs: Vec<KMeansResult> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = batch_rng(seed, 0x6b6d, r as u64);
            lloyd(x, k, &mut rng, cfg)
        })
        .collect();
    Ok(runs
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            a.inertia
                .partial_cmp(&b.inertia)
                .unwrap()
                .then(ia.cmp(ib))
        })
        .map(|(_, r)| r)
        .unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ari;
    use rand::SeedableRng;

    fn blobs(centers: &[(f64, f64)], per: usize, sigma: f64, seed: u64) -> (FeatureMatrix, Vec<u32>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (ci, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..per {
                // Box-Muller pairs around the center
                let (u1, u2): (f64, f64) = (rng.random::<f64>().max(1e-12), rng.random());
                let r = (-2.0 * u1.ln()).sqrt() * sigma;
                let th = 2.0 * std::f64::consts::PI * u2;
                values.push(cx + r * th.cos());
                values.push(cy + r * th.sin());
                labels.push(ci as u32);
            }
        }
        (
            FeatureMatrix::new(labels.len(), 2, values, None).unwrap(),
            labels,
        )
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let x = FeatureMatrix::new(4, 1, vec![0.0, 1.0, 5.0, 9.0], None).unwrap();
        let r = kmeans(&x, 4, 0, &KMeansConfig::default()).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut assigned: Vec<u32> = r.assignments.clone();
        assigned.sort_unstable();
        assigned.dedup();
        assert_eq!(assigned.len(), 4, "every point its own cluster");
    }

    #[test]
    fn k_equals_one_gives_mean_and_total_variance() {
        let x = FeatureMatrix::new(4, 2, vec![0.0, 0.0, 2.0, 0.0, 0.0, 2.0, 2.0, 2.0], None)
            .unwrap();
        let r = kmeans(&x, 1, 0, &KMeansConfig::default()).unwrap();
        assert!((r.centroids[0] - 1.0).abs() < 1e-12);
        assert!((r.centroids[1] - 1.0).abs() < 1e-12);
        // sum of squared distances to the mean: 4 points at distance sqrt(2)
        assert!((r.inertia - 8.0).abs() < 1e-12);
    }

    #[test]
    fn two_blobs_recover_perfectly() {
        let (x, truth) = blobs(&[(-10.0, 0.0), (10.0, 0.0)], 60, 0.5, 7);
        let r = kmeans(&x, 2, 3, &KMeansConfig::default()).unwrap();
        assert_eq!(ari(&truth, &r.assignments).unwrap(), 1.0);
    }

    #[test]
    fn fixed_seed_is_bitwise_deterministic() {
        let (x, _) = blobs(&[(0.0, 0.0), (4.0, 4.0), (-3.0, 5.0)], 40, 1.0, 11);
        let a = kmeans(&x, 3, 42, &KMeansConfig::default()).unwrap();
        let b = kmeans(&x, 3, 42, &KMeansConfig::default()).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.inertia.to_bits(), b.inertia.to_bits());
    }

    #[test]
    fn permuted_rows_cluster_identically_up_to_relabeling() {
        use rand::seq::SliceRandom;
        let (x, _) = blobs(&[(-8.0, 0.0), (8.0, 0.0)], 50, 0.4, 5);
        let base = kmeans(&x, 2, 9, &KMeansConfig::default()).unwrap();
        let mut perm: Vec<usize> = (0..x.n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
        let values: Vec<f64> = perm.iter().flat_map(|&p| x.row(p).to_vec()).collect();
        let px = FeatureMatrix::new(x.n, 2, values, None).unwrap();
        let permuted = kmeans(&px, 2, 9, &KMeansConfig::default()).unwrap();
        // compare assignments through the permutation
        let mapped: Vec<u32> = perm.iter().map(|&p| base.assignments[p]).collect();
        assert_eq!(ari(&mapped, &permuted.assignments).unwrap(), 1.0);
    }

    #[test]
    fn assignments_are_argmin_with_low_index_ties() {
        let (x, _) = blobs(&[(0.0, 0.0), (6.0, 0.0)], 30, 0.8, 13);
        let r = kmeans(&x, 2, 1, &KMeansConfig::default()).unwrap();
        for i in 0..x.n {
            let mut best = f64::INFINITY;
            let mut pick = 0u32;
            for c in 0..r.k {
                let d = sq_dist(x.row(i), &r.centroids[c * 2..(c + 1) * 2]);
                if d < best {
                    best = d;
                    pick = c as u32;
                }
            }
            assert_eq!(r.assignments[i], pick);
        }
    }

    #[test]
    fn empty_cluster_repair_reseeds_farthest_point() {
        let x = FeatureMatrix::new(4, 1, vec![0.0, 0.1, 0.2, 50.0], None).unwrap();
        let mut centroids = vec![0.1, 100.0, 200.0];
        let assignments = vec![0u32, 0, 0, 0];
        let counts = vec![4usize, 0, 0];
        repair_empty_clusters(&x, &mut centroids, &counts, &assignments);
        // farthest point (50.0) fills the first empty slot, next farthest next
        assert_eq!(centroids[1], 50.0);
        assert_eq!(centroids[2], 0.2);
    }

    #[test]
    fn rejects_bad_k() {
        let x = FeatureMatrix::new(3, 1, vec![0.0, 1.0, 2.0], None).unwrap();
        assert!(kmeans(&x, 0, 0, &KMeansConfig::default()).is_err());
        assert!(kmeans(&x, 4, 0, &KMeansConfig::default()).is_err());
    }
}
