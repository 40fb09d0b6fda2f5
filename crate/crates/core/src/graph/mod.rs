//! Weighted KNN graph construction and the adjacency operators derived from
//! it: exact brute-force nearest neighbors, inverse-distance weights, union
//! symmetrization, GCN normalization, and dense blocks for reference paths.

pub mod file;
pub mod knn;

use std::rc::Rc;

use crate::autodiff::Csr;
use crate::error::{CoreError, Result};

/// Row-major feature matrix with optional integer labels.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub n: usize,
    pub dim: usize,
    pub values: Vec<f64>,
    pub labels: Option<Vec<u32>>,
}

impl FeatureMatrix {
    pub fn new(n: usize, dim: usize, values: Vec<f64>, labels: Option<Vec<u32>>) -> Result<Self> {
        if values.len() != n * dim {
            return Err(CoreError::Malformed {
                what: "feature matrix",
                detail: format!("{} values for {n} x {dim}", values.len()),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(CoreError::InvalidInput(format!(
                "feature matrix contains non-finite value {bad}"
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(CoreError::Malformed {
                    what: "feature matrix labels",
                    detail: format!("{} labels for {n} rows", l.len()),
                });
            }
        }
        Ok(FeatureMatrix {
            n,
            dim,
            values,
            labels,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Number of distinct labels, assuming a dense [0, num_classes) range.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m as usize + 1))
    }
}

/// Flatten `n` images of `c x h x w` bytes into rows scaled to [0, 1].
pub fn vectorize_images(
    images: &[u8],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    labels: Option<Vec<u32>>,
) -> Result<FeatureMatrix> {
    if n == 0 {
        return Err(CoreError::EmptyBatch {
            op: "vectorize_images",
        });
    }
    let dim = c * h * w;
    if images.len() != n * dim {
        return Err(CoreError::Malformed {
            what: "image buffer",
            detail: format!("{} bytes for {n} x {dim}", images.len()),
        });
    }
    let values: Vec<f64> = images.iter().map(|&p| p as f64 / 255.0).collect();
    FeatureMatrix::new(n, dim, values, labels)
}

/// Undirected weighted graph in CSR form. Each undirected edge is stored in
/// both endpoint rows with the identical weight; self-loops are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    pub n: usize,
    pub offsets: Vec<usize>,
    pub neighbors: Vec<u32>,
    pub weights: Vec<f64>,
    pub degrees: Vec<f64>,
    pub total_weight_2m: f64,
    pub k_used: u32,
}

impl KnnGraph {
    pub(crate) fn from_csr(
        n: usize,
        offsets: Vec<usize>,
        neighbors: Vec<u32>,
        weights: Vec<f64>,
        k_used: u32,
    ) -> KnnGraph {
        let mut degrees = vec![0.0; n];
        for u in 0..n {
            degrees[u] = weights[offsets[u]..offsets[u + 1]].iter().sum();
        }
        let total_weight_2m = degrees.iter().sum();
        KnnGraph {
            n,
            offsets,
            neighbors,
            weights,
            degrees,
            total_weight_2m,
            k_used,
        }
    }

    pub fn row(&self, u: usize) -> (&[u32], &[f64]) {
        let (s, e) = (self.offsets[u], self.offsets[u + 1]);
        (&self.neighbors[s..e], &self.weights[s..e])
    }

    pub fn degree_count(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    /// Number of stored directed entries (twice the undirected edge count).
    pub fn entry_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn undirected_edge_count(&self) -> usize {
        self.entry_count() / 2
    }

    /// Weight of edge (u, v) if present.
    pub fn edge_weight(&self, u: usize, v: u32) -> Option<f64> {
        let (cols, vals) = self.row(u);
        cols.binary_search(&v).ok().map(|p| vals[p])
    }

    /// Plain weighted adjacency as a sparse matrix (no self-loops).
    pub fn adjacency(&self) -> Rc<Csr> {
        Rc::new(Csr {
            n: self.n,
            offsets: self.offsets.clone(),
            cols: self.neighbors.clone(),
            vals: self.weights.clone(),
        })
    }
}

/// Symmetric-normalized self-looped adjacency used by GCN propagation:
/// entries `(u,v) = w_uv / sqrt(d~_u d~_v)` and `(u,u) = 1 / d~_u` where
/// `d~_u = 1 + weighted_degree(u)`.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    pub matrix: Rc<Csr>,
}

/// Build the normalized operator from an undirected weighted edge structure.
pub fn gcn_normalize(g: &KnnGraph) -> NormalizedAdjacency {
    let matrix = normalize_edges(g.n, |u| {
        let (cols, ws) = g.row(u);
        (cols.to_vec(), ws.to_vec())
    });
    NormalizedAdjacency { matrix }
}

/// Shared normalization over any symmetric CSR-like row accessor; used both
/// for whole graphs and for batch-local induced subgraphs.
pub(crate) fn normalize_edges<F>(n: usize, row: F) -> Rc<Csr>
where
    F: Fn(usize) -> (Vec<u32>, Vec<f64>),
{
    let mut d_tilde = vec![1.0; n];
    for u in 0..n {
        let (_, ws) = row(u);
        d_tilde[u] += ws.iter().sum::<f64>();
    }
    let inv_sqrt: Vec<f64> = d_tilde.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut triples = Vec::new();
    for u in 0..n {
        let (cols, ws) = row(u);
        triples.push((u as u32, u as u32, 1.0 / d_tilde[u]));
        for (v, w) in cols.into_iter().zip(ws) {
            triples.push((u as u32, v, w * inv_sqrt[u] * inv_sqrt[v as usize]));
        }
    }
    Csr::from_triples(n, &triples)
}

pub const DEFAULT_DENSE_LIMIT: usize = 4096;

/// Dense symmetric weighted adjacency over the induced subgraph of `subset`
/// (dataset ids). Entry `(i, j)` refers to `subset[i], subset[j]`.
pub fn densify(g: &KnnGraph, subset: &[u32], limit: usize) -> Result<Vec<f64>> {
    if subset.len() > limit {
        return Err(CoreError::DenseLimit {
            requested: subset.len(),
            limit,
        });
    }
    let m = subset.len();
    let mut local = std::collections::HashMap::with_capacity(m);
    for (i, &id) in subset.iter().enumerate() {
        local.insert(id, i);
    }
    let mut dense = vec![0.0; m * m];
    for (i, &id) in subset.iter().enumerate() {
        let (cols, ws) = g.row(id as usize);
        for (&v, &w) in cols.iter().zip(ws) {
            if let Some(&j) = local.get(&v) {
                dense[i * m + j] = w;
            }
        }
    }
    Ok(dense)
}

#[cfg(test)]
mod tests {
    use super::knn::*;
    use super::*;

    #[test]
    fn vectorize_scales_to_unit_range() {
        let m = vectorize_images(&[0, 51, 255, 102], 1, 1, 2, 2, None).unwrap();
        assert_eq!(m.dim, 4);
        assert_eq!(m.values, vec![0.0, 0.2, 1.0, 0.4]);
        let z = vectorize_images(&[0; 784], 1, 1, 28, 28, None).unwrap();
        assert_eq!(z.dim, 784);
        assert!(z.values.iter().all(|&v| v == 0.0));
        assert!(vectorize_images(&[], 0, 1, 2, 2, None).is_err());
    }

    #[test]
    fn gcn_normalize_isolated_node_passes_through() {
        let g = KnnGraph::from_csr(1, vec![0, 0], vec![], vec![], 1);
        let adj = gcn_normalize(&g);
        assert_eq!(adj.matrix.to_dense(), vec![1.0]);
    }

    #[test]
    fn gcn_normalize_two_node_unit_edge_is_all_halves() {
        let g = KnnGraph::from_csr(2, vec![0, 1, 2], vec![1, 0], vec![1.0, 1.0], 1);
        let adj = gcn_normalize(&g);
        let d = adj.matrix.to_dense();
        for v in d {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn gcn_normalize_symmetric_and_contractive_on_random_graph() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 30;
        let mut directed = vec![Vec::new(); n];
        for u in 0..n {
            for _ in 0..3 {
                let v = rng.random_range(0..n);
                if v != u {
                    directed[u].push((v as u32, rng.random_range(0.2..2.0)));
                }
            }
        }
        let g = symmetrize(&directed);
        let adj = gcn_normalize(&g).matrix;
        assert!(adj.is_symmetric(1e-12));
        // spectral radius of the normalized self-looped operator is <= 1;
        // dense power-iteration oracle
        let dense = adj.to_dense();
        let mut v = vec![1.0; n];
        let mut lambda = 0.0;
        for _ in 0..500 {
            let mut w = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    w[i] += dense[i * n + j] * v[j];
                }
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            lambda = norm;
            for x in w.iter_mut() {
                *x /= norm;
            }
            v = w;
        }
        assert!(lambda <= 1.0 + 1e-9, "spectral radius {lambda}");
        // applying the operator to the all-ones vector keeps entries positive
        // and cannot expand the vector beyond the spectral bound
        let mut image = vec![0.0; n];
        for i in 0..n {
            image[i] = (0..n).map(|j| dense[i * n + j]).sum();
        }
        assert!(image.iter().all(|&s| s > 0.0));
        let image_norm = image.iter().map(|x| x * x).sum::<f64>().sqrt();
        let ones_norm = (n as f64).sqrt();
        assert!(
            image_norm <= ones_norm * (1.0 + 1e-9),
            "operator expanded the ones vector: {image_norm} vs {ones_norm}"
        );
    }

    #[test]
    fn densify_line_graph_and_limit() {
        let directed = vec![
            vec![(1u32, 1.0)],
            vec![(0u32, 1.0)],
            vec![(1u32, 0.5)],
        ];
        let g = symmetrize(&directed);
        let d = densify(&g, &[0, 1, 2], 10).unwrap();
        let want = [
            0.0, 1.0, 0.0, //
            1.0, 0.0, 0.5, //
            0.0, 0.5, 0.0,
        ];
        assert_eq!(d, want);
        // row sums equal degrees
        for u in 0..3 {
            let s: f64 = d[u * 3..(u + 1) * 3].iter().sum();
            assert!((s - g.degrees[u]).abs() < 1e-12);
        }
        assert!(matches!(
            densify(&g, &[0, 1, 2], 2),
            Err(CoreError::DenseLimit { .. })
        ));
        // empty subset -> zero matrix
        assert!(densify(&g, &[], 2).unwrap().is_empty());
    }
}
