//! Neighborhood-sampled minibatching: bounded random fanout expansion per
//! hop with local reindexing (seeds first), plus deterministic full-depth
//! extraction for evaluation.

use std::collections::HashSet;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Csr, Tensor};
use crate::error::{CoreError, Result};
use crate::graph::{normalize_edges, FeatureMatrix, KnnGraph};

/// Locally reindexed sampled neighborhood. `global_ids[local] = dataset row`;
/// seeds occupy local positions `[0, seed_count)`. Edges are the induced
/// subgraph edges stored once per undirected pair, in local indices.
#[derive(Debug, Clone)]
pub struct SubgraphBatch {
    pub seed_count: usize,
    pub global_ids: Vec<u32>,
    pub edges: Vec<(u32, u32, f64)>,
    pub features: Vec<f64>,
    pub dim: usize,
    pub labels: Option<Vec<u32>>,
}

impl SubgraphBatch {
    pub fn node_count(&self) -> usize {
        self.global_ids.len()
    }

    /// Batch features as a non-differentiable tensor.
    pub fn features_tensor(&self) -> Tensor {
        Tensor::constant(
            vec![self.node_count(), self.dim],
            self.features.clone(),
        )
    }

    fn local_rows(&self) -> Vec<Vec<(u32, f64)>> {
        let mut rows = vec![Vec::new(); self.node_count()];
        for &(u, v, w) in &self.edges {
            rows[u as usize].push((v, w));
            rows[v as usize].push((u, w));
        }
        for r in rows.iter_mut() {
            r.sort_unstable_by_key(|&(c, _)| c);
        }
        rows
    }

    /// Plain weighted adjacency of the induced subgraph (no self-loops).
    pub fn adjacency(&self) -> Rc<Csr> {
        let mut triples = Vec::with_capacity(self.edges.len() * 2);
        for &(u, v, w) in &self.edges {
            triples.push((u, v, w));
            triples.push((v, u, w));
        }
        Csr::from_triples(self.node_count(), &triples)
    }

    /// Symmetric-normalized self-looped adjacency over the induced subgraph,
    /// using batch-local degrees.
    pub fn normalized_adjacency(&self) -> Rc<Csr> {
        let rows = self.local_rows();
        normalize_edges(self.node_count(), |u| {
            let (c, w): (Vec<u32>, Vec<f64>) = rows[u].iter().copied().unzip();
            (c, w)
        })
    }

    /// Batch-local weighted degrees and their total (2m of the subgraph).
    pub fn modularity_context(&self) -> (Vec<f64>, f64) {
        let mut degrees = vec![0.0; self.node_count()];
        for &(u, v, w) in &self.edges {
            degrees[u as usize] += w;
            degrees[v as usize] += w;
        }
        let total: f64 = degrees.iter().sum();
        (degrees, total)
    }
}

fn validate_seeds(g: &KnnGraph, seeds: &[u32]) -> Result<()> {
    if seeds.is_empty() {
        return Err(CoreError::InvalidParameter {
            name: "seeds",
            reason: "empty seed set".into(),
        });
    }
    let mut seen = HashSet::with_capacity(seeds.len());
    for &s in seeds {
        if s as usize >= g.n {
            return Err(CoreError::InvalidParameter {
                name: "seeds",
                reason: format!("seed {s} out of range for {} nodes", g.n),
            });
        }
        if !seen.insert(s) {
            return Err(CoreError::InvalidParameter {
                name: "seeds",
                reason: format!("duplicate seed {s}"),
            });
        }
    }
    Ok(())
}

fn gather_batch(
    g: &KnnGraph,
    x: &FeatureMatrix,
    seeds: &[u32],
    order: Vec<u32>,
    local_of: &std::collections::HashMap<u32, u32>,
) -> SubgraphBatch {
    // induced edges: every source-graph edge with both endpoints visited,
    // stored once per undirected pair
    let mut edges = Vec::new();
    for (lu, &gu) in order.iter().enumerate() {
        let (cols, ws) = g.row(gu as usize);
        for (&gv, &w) in cols.iter().zip(ws) {
            if gv <= gu {
                continue;
            }
            if let Some(&lv) = local_of.get(&gv) {
                edges.push((lu as u32, lv, w));
            }
        }
    }
    edges.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let mut features = Vec::with_capacity(order.len() * x.dim);
    for &gid in &order {
        features.extend_from_slice(x.row(gid as usize));
    }
    let labels = x.labels.as_ref().map(|l| {
        seeds.iter().map(|&s| l[s as usize]).collect()
    });
    SubgraphBatch {
        seed_count: seeds.len(),
        global_ids: order,
        edges,
        features,
        dim: x.dim,
        labels,
    }
}

/// Breadth-wise neighborhood sampling: hop `h` picks up to `fanouts[h]`
/// distinct not-yet-visited neighbors per frontier node, without
/// replacement (all of them when fewer remain). Visited nodes are shared
/// across hops, so the node set is duplicate-free by construction.
pub fn sample_neighbors(
    g: &KnnGraph,
    x: &FeatureMatrix,
    seeds: &[u32],
    fanouts: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<SubgraphBatch> {
    validate_seeds(g, seeds)?;
    if fanouts.is_empty() {
        return Err(CoreError::InvalidParameter {
            name: "fanouts",
            reason: "empty fanout list".into(),
        });
    }
    let mut order: Vec<u32> = seeds.to_vec();
    let mut local_of: std::collections::HashMap<u32, u32> = order
        .iter()
        .enumerate()
        .map(|(i, &gid)| (gid, i as u32))
        .collect();
    let mut frontier: Vec<u32> = seeds.to_vec();
    let mut scratch: Vec<u32> = Vec::new();
    for &fanout in fanouts {
        let mut next = Vec::new();
        for &u in &frontier {
            let (cols, _) = g.row(u as usize);
            scratch.clear();
            scratch.extend(cols.iter().copied().filter(|c| !local_of.contains_key(c)));
            let take = fanout.min(scratch.len());
            // partial Fisher-Yates over the unvisited candidates
            for i in 0..take {
                let j = rng.random_range(i..scratch.len());
                scratch.swap(i, j);
                let v = scratch[i];
                local_of.insert(v, order.len() as u32);
                order.push(v);
                next.push(v);
            }
        }
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    Ok(gather_batch(g, x, seeds, order, &local_of))
}

/// Deterministic full breadth-first expansion to the given depth, with the
/// induced edge set.
pub fn full_neighborhood(
    g: &KnnGraph,
    x: &FeatureMatrix,
    seeds: &[u32],
    depth: usize,
) -> Result<SubgraphBatch> {
    validate_seeds(g, seeds)?;
    let mut order: Vec<u32> = seeds.to_vec();
    let mut local_of: std::collections::HashMap<u32, u32> = order
        .iter()
        .enumerate()
        .map(|(i, &gid)| (gid, i as u32))
        .collect();
    let mut frontier: Vec<u32> = seeds.to_vec();
    for _ in 0..depth {
        let mut next = Vec::new();
        for &u in &frontier {
            let (cols, _) = g.row(u as usize);
            for &v in cols {
                if !local_of.contains_key(&v) {
                    local_of.insert(v, order.len() as u32);
                    order.push(v);
                    next.push(v);
                }
            }
        }
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    Ok(gather_batch(g, x, seeds, order, &local_of))
}

/// Seeded permutation of `[0, n)` cut into consecutive `batch_size` chunks;
/// the final chunk may be short. Every node appears exactly once.
pub fn shuffle_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<u32>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut perm: Vec<u32> = (0..n as u32).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    perm.chunks(batch_size).map(|c| c.to_vec()).collect()
}
