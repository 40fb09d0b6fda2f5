//! Graph convolutions and the layer stack: each layer is the chosen
//! convolution followed by batch norm, relu, and 30% dropout, with a final
//! linear map to the output dimension.

use std::cell::RefCell;
use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use super::{xavier_uniform, zeros_param, ParamSet};
use crate::autodiff::ops::{self, BnStats};
use crate::autodiff::{Csr, Tape, Tensor};
use crate::error::{CoreError, Result};
use crate::sampler::SubgraphBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    Gcn,
    Gin,
}

impl std::str::FromStr for ConvKind {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(ConvKind::Gcn),
            "gin" => Ok(ConvKind::Gin),
            other => Err(CoreError::InvalidParameter {
                name: "conv_kind",
                reason: format!("{other} (expected gcn or gin)"),
            }),
        }
    }
}

impl std::fmt::Display for ConvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConvKind::Gcn => "gcn",
            ConvKind::Gin => "gin",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnnStackConfig {
    pub conv_kind: ConvKind,
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub out_dim: usize,
    pub dropout_p: f64,
}

impl GnnStackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 1 || self.in_dim == 0 || self.hidden_dim == 0 || self.out_dim == 0 {
            return Err(CoreError::InvalidParameter {
                name: "gnn_config",
                reason: format!("{self:?}"),
            });
        }
        Ok(())
    }
}

pub const BN_MOMENTUM: f64 = 0.1;

/// Batch-norm layer: learnable scale/shift plus running statistics that
/// training-mode forwards fold into.
pub struct BnLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub stats: RefCell<BnStats>,
}

impl BnLayer {
    fn new(features: usize) -> BnLayer {
        BnLayer {
            gamma: Tensor::param(vec![features], vec![1.0; features]),
            beta: zeros_param(vec![features]),
            stats: RefCell::new(BnStats::new(features)),
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Tensor, training: bool) -> Result<Tensor> {
        let mut stats = self.stats.borrow_mut();
        ops::batch_norm(tape, x, &self.gamma, &self.beta, &mut stats, BN_MOMENTUM, training)
    }
}

/// GCN convolution: `spmm(A_hat, x) W + b`.
pub fn gcn_layer(tape: &Tape, adj: &Rc<Csr>, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    ops::add_bias(tape, &ops::matmul(tape, &ops::spmm(tape, adj, x)?, w)?, b)
}

/// GIN aggregation: `(1 + eps) x_u + sum_v w_uv x_v` with the plain weighted
/// adjacency (no self-loops, no normalization).
pub fn gin_aggregate(tape: &Tape, adj: &Rc<Csr>, x: &Tensor, eps: &Tensor) -> Result<Tensor> {
    let neigh = ops::spmm(tape, adj, x)?;
    let one_plus = ops::add_const(tape, eps, 1.0);
    ops::add(tape, &ops::mul_by_scalar(tape, x, &one_plus)?, &neigh)
}

enum Conv {
    Gcn {
        w: Tensor,
        b: Tensor,
    },
    Gin {
        eps: Tensor,
        w1: Tensor,
        b1: Tensor,
        bn: BnLayer,
        w2: Tensor,
        b2: Tensor,
    },
}

/// The GNN body: `num_layers x [conv -> batch_norm -> relu -> dropout]`
/// followed by a final linear map to `out_dim`.
pub struct GnnStack {
    pub cfg: GnnStackConfig,
    convs: Vec<Conv>,
    bns: Vec<BnLayer>,
    final_w: Tensor,
    final_b: Tensor,
}

impl GnnStack {
    pub fn new(cfg: GnnStackConfig, rng: &mut ChaCha8Rng) -> Result<GnnStack> {
        cfg.validate()?;
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        let mut d_in = cfg.in_dim;
        for _ in 0..cfg.num_layers {
            let d_out = cfg.hidden_dim;
            let conv = match cfg.conv_kind {
                ConvKind::Gcn => Conv::Gcn {
                    w: xavier_uniform(rng, vec![d_in, d_out], d_in, d_out),
                    b: zeros_param(vec![d_out]),
                },
                ConvKind::Gin => Conv::Gin {
                    eps: zeros_param(vec![]),
                    w1: xavier_uniform(rng, vec![d_in, d_out], d_in, d_out),
                    b1: zeros_param(vec![d_out]),
                    bn: BnLayer::new(d_out),
                    w2: xavier_uniform(rng, vec![d_out, d_out], d_out, d_out),
                    b2: zeros_param(vec![d_out]),
                },
            };
            convs.push(conv);
            bns.push(BnLayer::new(d_out));
            d_in = d_out;
        }
        let final_w = xavier_uniform(rng, vec![d_in, cfg.out_dim], d_in, cfg.out_dim);
        let final_b = zeros_param(vec![cfg.out_dim]);
        Ok(GnnStack {
            cfg,
            convs,
            bns,
            final_w,
            final_b,
        })
    }

    pub fn params(&self) -> ParamSet {
        let mut p = ParamSet::default();
        for (i, conv) in self.convs.iter().enumerate() {
            match conv {
                Conv::Gcn { w, b } => {
                    p.push(format!("gnn.layer{i}.weight"), w.clone());
                    p.push(format!("gnn.layer{i}.bias"), b.clone());
                }
                Conv::Gin {
                    eps,
                    w1,
                    b1,
                    bn,
                    w2,
                    b2,
                } => {
                    p.push(format!("gnn.layer{i}.eps"), eps.clone());
                    p.push(format!("gnn.layer{i}.mlp1.weight"), w1.clone());
                    p.push(format!("gnn.layer{i}.mlp1.bias"), b1.clone());
                    p.push(format!("gnn.layer{i}.mlp.bn.gamma"), bn.gamma.clone());
                    p.push(format!("gnn.layer{i}.mlp.bn.beta"), bn.beta.clone());
                    p.push(format!("gnn.layer{i}.mlp2.weight"), w2.clone());
                    p.push(format!("gnn.layer{i}.mlp2.bias"), b2.clone());
                }
            }
            p.push(format!("gnn.layer{i}.bn.gamma"), self.bns[i].gamma.clone());
            p.push(format!("gnn.layer{i}.bn.beta"), self.bns[i].beta.clone());
        }
        p.push("gnn.final.weight".to_string(), self.final_w.clone());
        p.push("gnn.final.bias".to_string(), self.final_b.clone());
        p
    }

    /// Named running-stat blocks, in a fixed order, for checkpointing.
    pub fn bn_snapshot(&self) -> Vec<(String, BnStats)> {
        let mut out = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            if let Conv::Gin { bn, .. } = conv {
                out.push((format!("gnn.layer{i}.mlp.bn"), bn.stats.borrow().clone()));
            }
            out.push((format!("gnn.layer{i}.bn"), self.bns[i].stats.borrow().clone()));
        }
        out
    }

    pub fn bn_restore(&self, blocks: &[(String, BnStats)]) -> Result<()> {
        for (name, stats) in blocks {
            let slot = self.bn_slot(name).ok_or_else(|| CoreError::Malformed {
                what: "checkpoint batch-norm block",
                detail: format!("unknown block {name}"),
            })?;
            *slot.stats.borrow_mut() = stats.clone();
        }
        Ok(())
    }

    fn bn_slot(&self, name: &str) -> Option<&BnLayer> {
        for (i, conv) in self.convs.iter().enumerate() {
            if name == format!("gnn.layer{i}.bn") {
                return Some(&self.bns[i]);
            }
            if let Conv::Gin { bn, .. } = conv {
                if name == format!("gnn.layer{i}.mlp.bn") {
                    return Some(bn);
                }
            }
        }
        None
    }

    /// Pick the adjacency this stack's convolution consumes: symmetric
    /// normalized with self-loops for GCN, plain weighted for GIN.
    pub fn adjacency_for(&self, batch: &SubgraphBatch) -> Rc<Csr> {
        match self.cfg.conv_kind {
            ConvKind::Gcn => batch.normalized_adjacency(),
            ConvKind::Gin => batch.adjacency(),
        }
    }

    pub fn forward(
        &self,
        tape: &Tape,
        adj: &Rc<Csr>,
        x: &Tensor,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        if x.shape().len() != 2 || x.shape()[1] != self.cfg.in_dim {
            return Err(CoreError::ShapeMismatch {
                op: "gnn_stack_forward",
                lhs: x.shape().to_vec(),
                rhs: vec![x.shape().first().copied().unwrap_or(0), self.cfg.in_dim],
            });
        }
        let mut h = x.clone();
        for (conv, bn) in self.convs.iter().zip(&self.bns) {
            h = match conv {
                Conv::Gcn { w, b } => gcn_layer(tape, adj, &h, w, b)?,
                Conv::Gin {
                    eps,
                    w1,
                    b1,
                    bn: mlp_bn,
                    w2,
                    b2,
                } => {
                    let agg = gin_aggregate(tape, adj, &h, eps)?;
                    let z = ops::add_bias(tape, &ops::matmul(tape, &agg, w1)?, b1)?;
                    let z = ops::relu(tape, &mlp_bn.forward(tape, &z, training)?);
                    ops::add_bias(tape, &ops::matmul(tape, &z, w2)?, b2)?
                }
            };
            h = bn.forward(tape, &h, training)?;
            h = ops::relu(tape, &h);
            h = ops::dropout(tape, &h, self.cfg.dropout_p, training, rng)?;
        }
        ops::add_bias(tape, &ops::matmul(tape, &h, &self.final_w)?, &self.final_b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::knn::symmetrize;
    use crate::graph::FeatureMatrix;
    use crate::rng::{batch_rng, init_rng};
    use crate::sampler::full_neighborhood;

    #[test]
    fn gcn_layer_identity_case() {
        let tape = Tape::inference();
        let eye = Csr::from_triples(2, &[(0, 0, 1.0), (1, 1, 1.0)]);
        let x = Tensor::constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let w = Tensor::constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = Tensor::constant(vec![2], vec![0.0, 0.0]);
        let y = gcn_layer(&tape, &eye, &x, &w, &b).unwrap();
        assert_eq!(*y.values(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn gcn_layer_two_node_unit_edge() {
        // normalized adjacency of a two-node unit edge is all 0.5
        let tape = Tape::inference();
        let adj = Csr::from_triples(
            2,
            &[(0, 0, 0.5), (0, 1, 0.5), (1, 0, 0.5), (1, 1, 0.5)],
        );
        let x = Tensor::constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let w = Tensor::constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = Tensor::constant(vec![2], vec![0.0, 0.0]);
        let y = gcn_layer(&tape, &adj, &x, &w, &b).unwrap();
        assert_eq!(*y.values(), vec![0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn gcn_layer_gradcheck() {
        use crate::autodiff::gradcheck::check_gradients;
        use rand::Rng;
        let mut rng = init_rng(7);
        let adj = Csr::from_triples(
            3,
            &[(0, 1, 0.5), (1, 0, 0.5), (1, 2, 0.25), (2, 1, 0.25)],
        );
        let x = Tensor::constant(vec![3, 4], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect());
        let w = Tensor::param(vec![4, 2], (0..8).map(|_| rng.random_range(-1.0..1.0)).collect());
        let b = Tensor::param(vec![2], vec![0.1, -0.3]);
        let report = check_gradients(
            |tape| {
                let y = gcn_layer(tape, &adj, &x, &w, &b).unwrap();
                ops::sum_squares(tape, &y)
            },
            &[("w", &w), ("b", &b)],
            1e-5,
            None,
            0,
        );
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn gin_aggregate_examples() {
        let tape = Tape::inference();
        // edgeless graph, eps = 0: aggregation is the identity
        let empty = Csr::from_triples(2, &[]);
        let x = Tensor::constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let eps = Tensor::constant(vec![], vec![0.0]);
        let y = gin_aggregate(&tape, &empty, &x, &eps).unwrap();
        assert_eq!(*y.values(), vec![1.0, 2.0, 3.0, 4.0]);
        // two-node unit edge: each node gets x_u + x_v
        let adj = Csr::from_triples(2, &[(0, 1, 1.0), (1, 0, 1.0)]);
        let y = gin_aggregate(&tape, &adj, &x, &eps).unwrap();
        assert_eq!(*y.values(), vec![4.0, 6.0, 4.0, 6.0]);
    }

    #[test]
    fn gin_aggregate_matches_per_node_loop() {
        use rand::Rng;
        let mut rng = init_rng(8);
        let n = 12;
        let f = 3;
        let mut triples = Vec::new();
        for i in 0..n as u32 {
            for j in i + 1..n as u32 {
                if rng.random::<f64>() < 0.3 {
                    let w = rng.random_range(0.1..2.0);
                    triples.push((i, j, w));
                    triples.push((j, i, w));
                }
            }
        }
        let adj = Csr::from_triples(n, &triples);
        let xv: Vec<f64> = (0..n * f).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::constant(vec![n, f], xv.clone());
        let eps = Tensor::constant(vec![], vec![0.37]);
        let tape = Tape::inference();
        let y = gin_aggregate(&tape, &adj, &x, &eps).unwrap();
        let yv = y.values();
        for u in 0..n {
            let (cols, ws) = adj.row(u);
            for j in 0..f {
                let mut want = 1.37 * xv[u * f + j];
                for (&v, &w) in cols.iter().zip(ws) {
                    want += w * xv[v as usize * f + j];
                }
                assert!((yv[u * f + j] - want).abs() < 1e-12);
            }
        }
    }

    fn toy_batch(n: usize) -> crate::sampler::SubgraphBatch {
        let directed: Vec<Vec<(u32, f64)>> = (0..n)
            .map(|u| {
                if u + 1 < n {
                    vec![((u + 1) as u32, 1.0)]
                } else {
                    vec![]
                }
            })
            .collect();
        let g = symmetrize(&directed);
        let x = FeatureMatrix::new(
            n,
            4,
            (0..n * 4).map(|i| (i % 7) as f64 * 0.25).collect(),
            None,
        )
        .unwrap();
        let seeds: Vec<u32> = (0..n as u32).collect();
        full_neighborhood(&g, &x, &seeds, 0).unwrap()
    }

    #[test]
    fn stack_output_shape_and_eval_determinism() {
        let batch = toy_batch(9);
        for kind in [ConvKind::Gcn, ConvKind::Gin] {
            let cfg = GnnStackConfig {
                conv_kind: kind,
                in_dim: 4,
                hidden_dim: 6,
                num_layers: 2,
                out_dim: 3,
                dropout_p: 0.3,
            };
            let stack = GnnStack::new(cfg, &mut init_rng(9)).unwrap();
            let adj = stack.adjacency_for(&batch);
            let x = batch.features_tensor();
            let run = || {
                let tape = Tape::inference();
                let mut rng = batch_rng(0, 0, 0);
                stack
                    .forward(&tape, &adj, &x, false, &mut rng)
                    .unwrap()
                    .to_vec()
            };
            let a = run();
            assert_eq!(a.len(), 9 * 3);
            assert_eq!(a, run(), "eval forward must be deterministic");
        }
    }

    #[test]
    fn stack_rejects_wrong_input_dim() {
        let batch = toy_batch(4);
        let cfg = GnnStackConfig {
            conv_kind: ConvKind::Gcn,
            in_dim: 9,
            hidden_dim: 4,
            num_layers: 1,
            out_dim: 2,
            dropout_p: 0.3,
        };
        let stack = GnnStack::new(cfg, &mut init_rng(10)).unwrap();
        let adj = stack.adjacency_for(&batch);
        let x = batch.features_tensor();
        let mut rng = batch_rng(0, 0, 0);
        assert!(stack.forward(&Tape::inference(), &adj, &x, false, &mut rng).is_err());
    }

    #[test]
    fn layers_are_permutation_equivariant() {
        // dyadic weights and features make fp addition order-independent
        let n = 6;
        let triples_base: Vec<(u32, u32, f64)> = vec![
            (0, 1, 0.5),
            (1, 2, 0.25),
            (2, 3, 1.0),
            (3, 4, 0.5),
            (4, 5, 2.0),
            (0, 5, 0.125),
        ];
        let mut triples = Vec::new();
        for &(a, b, w) in &triples_base {
            triples.push((a, b, w));
            triples.push((b, a, w));
        }
        let adj = Csr::from_triples(n, &triples);
        let xv: Vec<f64> = (0..n * 2).map(|i| ((i % 5) as f64) * 0.5 - 1.0).collect();
        let x = Tensor::constant(vec![n, 2], xv.clone());
        let eps = Tensor::constant(vec![], vec![0.5]);
        let tape = Tape::inference();
        let base = gin_aggregate(&tape, &adj, &x, &eps).unwrap().to_vec();

        // permute nodes and rerun
        let perm: Vec<usize> = vec![3, 0, 5, 1, 4, 2];
        let mut inv = vec![0usize; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let ptriples: Vec<(u32, u32, f64)> = triples
            .iter()
            .map(|&(a, b, w)| (inv[a as usize] as u32, inv[b as usize] as u32, w))
            .collect();
        let padj = Csr::from_triples(n, &ptriples);
        let pxv: Vec<f64> = perm.iter().flat_map(|&p| xv[p * 2..p * 2 + 2].to_vec()).collect();
        let px = Tensor::constant(vec![n, 2], pxv);
        let permuted = gin_aggregate(&tape, &padj, &px, &eps).unwrap().to_vec();
        for i in 0..n {
            for j in 0..2 {
                assert_eq!(permuted[i * 2 + j], base[perm[i] * 2 + j]);
            }
        }
    }

    #[test]
    fn stack_end_to_end_gradcheck() {
        use crate::autodiff::gradcheck::check_gradients;
        let batch = toy_batch(8);
        let cfg = GnnStackConfig {
            conv_kind: ConvKind::Gcn,
            in_dim: 4,
            hidden_dim: 5,
            num_layers: 2,
            out_dim: 3,
            dropout_p: 0.3,
        };
        let stack = GnnStack::new(cfg, &mut init_rng(11)).unwrap();
        let adj = stack.adjacency_for(&batch);
        let x = batch.features_tensor();
        let params = stack.params();
        let leaves: Vec<(&str, &Tensor)> = params.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let report = check_gradients(
            |tape| {
                // reseed dropout per evaluation so the loss is pure
                let mut rng = batch_rng(123, 0, 0);
                let y = stack.forward(tape, &adj, &x, true, &mut rng).unwrap();
                ops::sum_squares(tape, &y)
            },
            &leaves,
            1e-5,
            None,
            0,
        );
        assert!(report.max_rel_err < 1e-3, "{report:?}");
        assert!(report.checked > 50);
    }
}
