//! Soft cluster assignment and its training losses: spectral modularity,
//! collapse regularization, orthogonality, and cluster-size balance.
//!
//! The modularity loss is `-(1/2m) Tr(C^T B C)` with `B = A - d d^T / 2m`.
//! The sparse path expands the trace into `Tr(C^T A C) - |C^T d|^2 / 2m`
//! and never materializes `B`; a dense reference path that does materialize
//! `B` is kept for equivalence testing.

use std::rc::Rc;

use crate::autodiff::{ops, Csr, Tape, Tensor};
use crate::error::Result;

/// Row-stochastic n x k soft assignment matrix.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    pub c: Tensor,
}

impl ClusterAssignment {
    pub fn n(&self) -> usize {
        self.c.shape()[0]
    }

    pub fn k(&self) -> usize {
        self.c.shape()[1]
    }

    /// Hard labels: per-row argmax, ties toward the lowest cluster index.
    pub fn argmax_labels(&self) -> Vec<u32> {
        let k = self.k();
        self.c
            .values()
            .chunks_exact(k)
            .map(|row| {
                let mut best = f64::NEG_INFINITY;
                let mut pick = 0u32;
                for (j, &v) in row.iter().enumerate() {
                    if v > best {
                        best = v;
                        pick = j as u32;
                    }
                }
                pick
            })
            .collect()
    }

    /// Check row-stochasticity within the stated tolerance.
    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        let k = self.k();
        self.c.values().chunks_exact(k).all(|row| {
            row.iter().all(|&v| (-tol..=1.0 + tol).contains(&v))
                && (row.iter().sum::<f64>() - 1.0).abs() <= tol
        })
    }
}

/// Weighted degrees and total weight of the (sub)graph the loss runs on.
#[derive(Debug, Clone)]
pub struct ModularityContext {
    pub degrees: Vec<f64>,
    pub total_weight_2m: f64,
}

impl ModularityContext {
    pub fn new(degrees: Vec<f64>, total_weight_2m: f64) -> Self {
        ModularityContext {
            degrees,
            total_weight_2m,
        }
    }
}

/// Soft assignment head: `C = softmax_rows(h W + b)`.
pub fn assign(tape: &Tape, h: &Tensor, w_head: &Tensor, b_head: &Tensor) -> Result<ClusterAssignment> {
    let logits = ops::add_bias(tape, &ops::matmul(tape, h, w_head)?, b_head)?;
    Ok(ClusterAssignment {
        c: ops::softmax_rows(tape, &logits),
    })
}

/// Spectral modularity loss, sparse path:
/// `-(1/2m) [ Tr(C^T A C) - |C^T d|^2 / 2m ]`.
///
/// An edgeless context (2m = 0) is defined as zero with zero gradient; the
/// caller is expected to flag it in its log.
pub fn modularity_loss(
    tape: &Tape,
    assignment: &ClusterAssignment,
    adj: &Rc<Csr>,
    ctx: &ModularityContext,
) -> Result<Tensor> {
    if ctx.total_weight_2m == 0.0 {
        return Ok(Tensor::scalar(0.0));
    }
    let inv_2m = 1.0 / ctx.total_weight_2m;
    let c = &assignment.c;
    // Tr(C^T A C) = sum(C . (A C))
    let ac = ops::spmm(tape, adj, c)?;
    let trace = ops::sum_all(tape, &ops::mul(tape, c, &ac)?);
    // |C^T d|^2
    let d = Tensor::constant(vec![ctx.degrees.len(), 1], ctx.degrees.clone());
    let ctd = ops::matmul_tn(tape, c, &d)?;
    let null_term = ops::sum_squares(tape, &ctd);
    let inner = ops::sub(tape, &trace, &ops::scale(tape, &null_term, inv_2m))?;
    Ok(ops::scale(tape, &inner, -inv_2m))
}

/// Dense reference path: materializes `B = A - d d^T / 2m` and evaluates
/// `-(1/2m) sum(C . (B C))` directly. Testing oracle for the sparse path.
pub fn modularity_loss_dense(
    tape: &Tape,
    assignment: &ClusterAssignment,
    dense_adj: &[f64],
    ctx: &ModularityContext,
) -> Result<Tensor> {
    if ctx.total_weight_2m == 0.0 {
        return Ok(Tensor::scalar(0.0));
    }
    let n = ctx.degrees.len();
    let inv_2m = 1.0 / ctx.total_weight_2m;
    let mut b = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] = dense_adj[i * n + j] - ctx.degrees[i] * ctx.degrees[j] * inv_2m;
        }
    }
    let bt = Tensor::constant(vec![n, n], b);
    let bc = ops::matmul(tape, &bt, &assignment.c)?;
    let trace = ops::sum_all(tape, &ops::mul(tape, &assignment.c, &bc)?);
    Ok(ops::scale(tape, &trace, -inv_2m))
}

/// Collapse regularization: `(sqrt(k)/n) * |column_sums(C)|_2 - 1`.
/// Zero at perfectly balanced soft assignments, `sqrt(k) - 1` at collapse.
pub fn collapse_loss(tape: &Tape, assignment: &ClusterAssignment) -> Tensor {
    let (n, k) = (assignment.n(), assignment.k());
    let cs = ops::col_sums(tape, &assignment.c);
    let norm = ops::frobenius_norm(tape, &cs);
    ops::add_const(
        tape,
        &ops::scale(tape, &norm, (k as f64).sqrt() / n as f64),
        -1.0,
    )
}

/// Orthogonality of assignment columns:
/// `| C^T C / |C^T C|_F - I_k / sqrt(k) |_F`; zero exactly at balanced
/// orthogonal assignments.
pub fn orthogonality_loss(tape: &Tape, assignment: &ClusterAssignment) -> Result<Tensor> {
    let k = assignment.k();
    let ctc = ops::matmul_tn(tape, &assignment.c, &assignment.c)?;
    let nrm = ops::frobenius_norm(tape, &ctc);
    let scaled = ops::div_by_scalar(tape, &ctc, &nrm)?;
    let mut eye = vec![0.0; k * k];
    let inv_sqrt_k = 1.0 / (k as f64).sqrt();
    for j in 0..k {
        eye[j * k + j] = inv_sqrt_k;
    }
    let target = Tensor::constant(vec![k, k], eye);
    let diff = ops::sub(tape, &scaled, &target)?;
    Ok(ops::frobenius_norm(tape, &diff))
}

/// Cluster-size balance: KL(p || uniform) over soft cluster masses
/// `p_j = column_sum_j / n`; zero iff balanced, `ln k` at full collapse.
pub fn balance_loss(tape: &Tape, assignment: &ClusterAssignment) -> Tensor {
    let n = assignment.n();
    let cs = ops::col_sums(tape, &assignment.c);
    let p = ops::scale(tape, &cs, 1.0 / n as f64);
    ops::kl_uniform(tape, &p)
}

/// Auxiliary loss weights; the collapse factor follows the stated 0.1, the
/// orthogonality and balance weights default to the same value and stay
/// configurable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub collapse: f64,
    pub ortho: f64,
    pub balance: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            collapse: 0.1,
            ortho: 0.1,
            balance: 0.1,
        }
    }
}

/// `modularity + w_c * collapse + w_o * orthogonality + w_b * balance`.
pub fn total_unsupervised_loss(
    tape: &Tape,
    assignment: &ClusterAssignment,
    adj: &Rc<Csr>,
    ctx: &ModularityContext,
    weights: &LossWeights,
) -> Result<Tensor> {
    let mut loss = modularity_loss(tape, assignment, adj, ctx)?;
    if weights.collapse != 0.0 {
        let c = ops::scale(tape, &collapse_loss(tape, assignment), weights.collapse);
        loss = ops::add(tape, &loss, &c)?;
    }
    if weights.ortho != 0.0 {
        let o = ops::scale(tape, &orthogonality_loss(tape, assignment)?, weights.ortho);
        loss = ops::add(tape, &loss, &o)?;
    }
    if weights.balance != 0.0 {
        let b = ops::scale(tape, &balance_loss(tape, assignment), weights.balance);
        loss = ops::add(tape, &loss, &b)?;
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn soft_assignment(tape: &Tape, logits: &Tensor) -> ClusterAssignment {
        ClusterAssignment {
            c: ops::softmax_rows(tape, logits),
        }
    }

    /// Random symmetric weighted graph as (csr, dense, context).
    fn random_graph(
        rng: &mut ChaCha8Rng,
        n: usize,
        p_edge: f64,
    ) -> (Rc<Csr>, Vec<f64>, ModularityContext) {
        let mut triples = Vec::new();
        for i in 0..n as u32 {
            for j in i + 1..n as u32 {
                if rng.random::<f64>() < p_edge {
                    let w = rng.random_range(0.1..2.0);
                    triples.push((i, j, w));
                    triples.push((j, i, w));
                }
            }
        }
        let csr = Csr::from_triples(n, &triples);
        let dense = csr.to_dense();
        let mut degrees = vec![0.0; n];
        for i in 0..n {
            degrees[i] = dense[i * n..(i + 1) * n].iter().sum();
        }
        let total: f64 = degrees.iter().sum();
        (csr, dense, ModularityContext::new(degrees, total))
    }

    fn two_triangles() -> (Rc<Csr>, Vec<f64>, ModularityContext) {
        let mut triples = Vec::new();
        for &(a, b) in &[(0u32, 1u32), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)] {
            triples.push((a, b, 1.0));
            triples.push((b, a, 1.0));
        }
        let csr = Csr::from_triples(6, &triples);
        let dense = csr.to_dense();
        let degrees = vec![2.0; 6];
        (csr, dense, ModularityContext::new(degrees, 12.0))
    }

    #[test]
    fn assign_head_examples() {
        let tape = Tape::inference();
        let h = Tensor::constant(vec![2, 3], vec![0.0; 6]);
        let w = Tensor::constant(vec![3, 3], vec![0.0; 9]);
        let b = Tensor::constant(vec![3], vec![0.0; 3]);
        let a = assign(&tape, &h, &w, &b).unwrap();
        for v in a.c.values().iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        // one dominant logit
        let b = Tensor::constant(vec![3], vec![1000.0, 0.0, 0.0]);
        let a = assign(&tape, &h, &w, &b).unwrap();
        let v = a.c.values();
        assert!(v[0] > 1.0 - 1e-12 && v[1] < 1e-12);
        drop(v);
        assert!(a.is_row_stochastic(1e-12));
    }

    #[test]
    fn single_cluster_modularity_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let n = rng.random_range(3..30);
            let (csr, _, ctx) = random_graph(&mut rng, n, 0.4);
            if ctx.total_weight_2m == 0.0 {
                continue;
            }
            let tape = Tape::inference();
            let c = ClusterAssignment {
                c: Tensor::constant(vec![n, 1], vec![1.0; n]),
            };
            let loss = modularity_loss(&tape, &c, &csr, &ctx).unwrap();
            assert!(loss.item().abs() < 1e-10, "k=1 loss {}", loss.item());
        }
    }

    #[test]
    fn two_triangle_hand_case_is_minus_half() {
        let (csr, dense, ctx) = two_triangles();
        let tape = Tape::inference();
        let mut hard = vec![0.0; 12];
        for i in 0..6 {
            hard[i * 2 + usize::from(i >= 3)] = 1.0;
        }
        let c = ClusterAssignment {
            c: Tensor::constant(vec![6, 2], hard),
        };
        let sparse = modularity_loss(&tape, &c, &csr, &ctx).unwrap().item();
        let densev = modularity_loss_dense(&tape, &c, &dense, &ctx).unwrap().item();
        assert!((sparse - (-0.5)).abs() < 1e-12, "sparse {sparse}");
        assert!((densev - (-0.5)).abs() < 1e-12, "dense {densev}");
    }

    #[test]
    fn sparse_path_equals_dense_reference_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for trial in 0..50 {
            let n = rng.random_range(4..=30);
            let k = rng.random_range(2..=5);
            let (csr, dense, ctx) = random_graph(&mut rng, n, 0.35);
            if ctx.total_weight_2m == 0.0 {
                continue;
            }
            let logits_vals: Vec<f64> = (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect();

            let run = |dense_path: bool| {
                let logits = Tensor::param(vec![n, k], logits_vals.clone());
                let tape = Tape::new();
                let a = soft_assignment(&tape, &logits);
                let loss = if dense_path {
                    modularity_loss_dense(&tape, &a, &dense, &ctx).unwrap()
                } else {
                    modularity_loss(&tape, &a, &csr, &ctx).unwrap()
                };
                let v = loss.item();
                tape.backward(&loss).unwrap();
                (v, logits.grad().unwrap())
            };
            let (v_sparse, g_sparse) = run(false);
            let (v_dense, g_dense) = run(true);
            assert!(
                (v_sparse - v_dense).abs() < 1e-10,
                "trial {trial}: {v_sparse} vs {v_dense}"
            );
            for (a, b) in g_sparse.iter().zip(&g_dense) {
                assert!((a - b).abs() < 1e-8, "gradient gap {}", (a - b).abs());
            }
            // modularity loss of a row-stochastic assignment is in [-1, 1]
            assert!((-1.0..=1.0).contains(&v_sparse), "{v_sparse}");
        }
    }

    #[test]
    fn modularity_gradcheck() {
        use crate::autodiff::gradcheck::check_gradients;
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let n = 10;
        let k = 3;
        let (csr, _, ctx) = random_graph(&mut rng, n, 0.5);
        let logits = Tensor::param(
            vec![n, k],
            (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        let report = check_gradients(
            |tape| {
                let a = soft_assignment(tape, &logits);
                modularity_loss(tape, &a, &csr, &ctx).unwrap()
            },
            &[("logits", &logits)],
            1e-5,
            None,
            0,
        );
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn edgeless_context_yields_zero_with_zero_gradient() {
        let csr = Csr::from_triples(4, &[]);
        let ctx = ModularityContext::new(vec![0.0; 4], 0.0);
        let logits = Tensor::param(vec![4, 2], vec![0.3; 8]);
        let tape = Tape::new();
        let a = soft_assignment(&tape, &logits);
        let loss = modularity_loss(&tape, &a, &csr, &ctx).unwrap();
        assert_eq!(loss.item(), 0.0);
        // connect to the graph so backward has something to do
        let aux = ops::scale(&tape, &collapse_loss(&tape, &a), 0.0);
        let total = ops::add(&tape, &loss, &aux).unwrap();
        tape.backward(&total).unwrap();
        let g = logits.grad().unwrap_or_else(|| vec![0.0; 8]);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn collapse_loss_examples_and_bounds() {
        let tape = Tape::inference();
        // uniform assignment: exactly balanced soft masses
        let n = 9;
        let k = 3;
        let c = ClusterAssignment {
            c: Tensor::constant(vec![n, k], vec![1.0 / k as f64; n * k]),
        };
        assert!(collapse_loss(&tape, &c).item().abs() < 1e-12);
        // all mass in one cluster, k = 2
        let mut hard = vec![0.0; 8];
        for i in 0..4 {
            hard[i * 2] = 1.0;
        }
        let c = ClusterAssignment {
            c: Tensor::constant(vec![4, 2], hard),
        };
        let got = collapse_loss(&tape, &c).item();
        assert!((got - (2f64.sqrt() - 1.0)).abs() < 1e-12);

        // random row-stochastic assignments stay within [0, sqrt(k) - 1];
        // direct evaluation oracle cross-check
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..100 {
            let n = rng.random_range(2..20);
            let k = rng.random_range(1..6);
            let logits = Tensor::constant(
                vec![n, k],
                (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect(),
            );
            let a = soft_assignment(&tape, &logits);
            let got = collapse_loss(&tape, &a).item();
            // oracle: direct column sums
            let mut cs = vec![0.0; k];
            for row in a.c.values().chunks_exact(k) {
                for (s, v) in cs.iter_mut().zip(row) {
                    *s += v;
                }
            }
            let want =
                (k as f64).sqrt() / n as f64 * cs.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0;
            assert!((got - want).abs() < 1e-12);
            assert!(got >= -1e-12 && got <= (k as f64).sqrt() - 1.0 + 1e-12);
        }
    }

    #[test]
    fn orthogonality_loss_examples() {
        let tape = Tape::inference();
        // perfectly balanced hard assignment: C^T C proportional to I
        let mut hard = vec![0.0; 12];
        for i in 0..6 {
            hard[i * 2 + (i % 2)] = 1.0;
        }
        let c = ClusterAssignment {
            c: Tensor::constant(vec![6, 2], hard),
        };
        assert!(orthogonality_loss(&tape, &c).unwrap().item() < 1e-12);

        // all mass in one cluster, k=2: direct 2x2 oracle
        let mut one = vec![0.0; 8];
        for i in 0..4 {
            one[i * 2] = 1.0;
        }
        let c = ClusterAssignment {
            c: Tensor::constant(vec![4, 2], one),
        };
        let got = orthogonality_loss(&tape, &c).unwrap().item();
        // C^T C = [[4,0],[0,0]], |.|_F = 4 -> scaled = diag(1, 0)
        // target = I / sqrt(2): diff diag(1 - 1/sqrt2, -1/sqrt2)
        let s = 1.0 / 2f64.sqrt();
        let want = ((1.0 - s).powi(2) + s * s).sqrt();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");

        // nonnegative, bounded around sqrt(2) on random assignments
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        for _ in 0..50 {
            let n = rng.random_range(2..15);
            let k = rng.random_range(1..5);
            let logits = Tensor::constant(
                vec![n, k],
                (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect(),
            );
            let a = soft_assignment(&tape, &logits);
            let v = orthogonality_loss(&tape, &a).unwrap().item();
            assert!((0.0..=1.4143).contains(&v), "{v}");
        }
    }

    #[test]
    fn balance_loss_examples() {
        let tape = Tape::inference();
        let c = ClusterAssignment {
            c: Tensor::constant(vec![6, 3], vec![1.0 / 3.0; 18]),
        };
        assert!(balance_loss(&tape, &c).item().abs() < 1e-12);
        let mut one = vec![0.0; 10];
        for i in 0..5 {
            one[i * 2] = 1.0;
        }
        let c = ClusterAssignment {
            c: Tensor::constant(vec![5, 2], one),
        };
        assert!((balance_loss(&tape, &c).item() - 2f64.ln()).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(36);
        for _ in 0..50 {
            let n = rng.random_range(2..15);
            let k = rng.random_range(1..6);
            let logits = Tensor::constant(
                vec![n, k],
                (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect(),
            );
            let a = soft_assignment(&tape, &logits);
            let v = balance_loss(&tape, &a).item();
            assert!(v >= -1e-12 && v <= (k as f64).ln() + 1e-12, "{v}");
        }
    }

    #[test]
    fn total_loss_composition() {
        let (csr, _, ctx) = two_triangles();
        let tape = Tape::inference();
        let mut hard = vec![0.0; 12];
        for i in 0..6 {
            hard[i * 2 + usize::from(i >= 3)] = 1.0;
        }
        let a = ClusterAssignment {
            c: Tensor::constant(vec![6, 2], hard),
        };
        // zero auxiliary weights: exactly the modularity loss
        let zero = LossWeights {
            collapse: 0.0,
            ortho: 0.0,
            balance: 0.0,
        };
        let only_mod = total_unsupervised_loss(&tape, &a, &csr, &ctx, &zero).unwrap();
        let modv = modularity_loss(&tape, &a, &csr, &ctx).unwrap();
        assert_eq!(only_mod.item(), modv.item());

        // defaults: component oracles summed
        let w = LossWeights::default();
        let total = total_unsupervised_loss(&tape, &a, &csr, &ctx, &w).unwrap();
        let want = modv.item()
            + 0.1 * collapse_loss(&tape, &a).item()
            + 0.1 * orthogonality_loss(&tape, &a).unwrap().item()
            + 0.1 * balance_loss(&tape, &a).item();
        assert!((total.item() - want).abs() < 1e-12);
        // the perfect two-triangle assignment is balanced: collapse 0
        assert!((total.item() - (-0.5)).abs() < 1e-9);
    }

    #[test]
    fn k1_total_reduces_to_weighted_aux_terms() {
        let (csr, _, ctx) = two_triangles();
        let tape = Tape::inference();
        let a = ClusterAssignment {
            c: Tensor::constant(vec![6, 1], vec![1.0; 6]),
        };
        let w = LossWeights {
            collapse: 0.3,
            ortho: 0.5,
            balance: 0.7,
        };
        let total = total_unsupervised_loss(&tape, &a, &csr, &ctx, &w).unwrap().item();
        // modularity = 0 and collapse = sqrt(1)/6*6 - 1 = 0 at k=1
        let want = 0.5 * orthogonality_loss(&tape, &a).unwrap().item()
            + 0.7 * balance_loss(&tape, &a).item();
        assert!((total - want).abs() < 1e-10, "{total} vs {want}");
    }

    #[test]
    fn losses_invariant_under_column_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let n = 12;
        let k = 4;
        let (csr, _, ctx) = random_graph(&mut rng, n, 0.5);
        let logits_vals: Vec<f64> = (0..n * k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let perm = [2usize, 0, 3, 1];
        let permuted: Vec<f64> = (0..n)
            .flat_map(|i| perm.iter().map(move |&j| (i, j)))
            .map(|(i, j)| logits_vals[i * k + j])
            .collect();
        let tape = Tape::inference();
        let a1 = soft_assignment(&tape, &Tensor::constant(vec![n, k], logits_vals.clone()));
        let a2 = soft_assignment(&tape, &Tensor::constant(vec![n, k], permuted));
        let m1 = modularity_loss(&tape, &a1, &csr, &ctx).unwrap().item();
        let m2 = modularity_loss(&tape, &a2, &csr, &ctx).unwrap().item();
        assert!((m1 - m2).abs() < 1e-12);
        assert!(
            (collapse_loss(&tape, &a1).item() - collapse_loss(&tape, &a2).item()).abs() < 1e-12
        );
        assert!(
            (orthogonality_loss(&tape, &a1).unwrap().item()
                - orthogonality_loss(&tape, &a2).unwrap().item())
            .abs()
                < 1e-12
        );
        assert!((balance_loss(&tape, &a1).item() - balance_loss(&tape, &a2).item()).abs() < 1e-12);
    }

    #[test]
    fn aux_losses_gradcheck() {
        use crate::autodiff::gradcheck::check_gradients;
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let (n, k) = (7, 3);
        let logits = Tensor::param(
            vec![n, k],
            (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        for which in 0..3 {
            let report = check_gradients(
                |tape| {
                    let a = soft_assignment(tape, &logits);
                    match which {
                        0 => collapse_loss(tape, &a),
                        1 => orthogonality_loss(tape, &a).unwrap(),
                        _ => balance_loss(tape, &a),
                    }
                },
                &[("logits", &logits)],
                1e-5,
                None,
                which as u64,
            );
            assert!(report.passes(1e-4), "loss {which}: {report:?}");
        }
    }
}
