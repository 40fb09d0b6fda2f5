//! Differentiable operations. Each function computes the forward value and,
//! on a recording tape, registers a [`TapeOp`] that routes gradients back to
//! its inputs during the reverse sweep.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::gemm::{dgemm, MatView};
use super::sparse::Csr;
use super::tape::{Tape, TapeOp};
use super::tensor::Tensor;
use crate::error::{CoreError, Result};

fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> CoreError {
    CoreError::ShapeMismatch {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

fn rank2(t: &Tensor, op: &str) -> (usize, usize) {
    assert!(t.shape().len() == 2, "{op} expects a rank-2 tensor, got {:?}", t.shape());
    (t.shape()[0], t.shape()[1])
}

// ---------------------------------------------------------------------------
// elementwise arithmetic
// ---------------------------------------------------------------------------

struct AddOp {
    a: Tensor,
    b: Tensor,
    out: Tensor,
    b_sign: f64,
}

impl TapeOp for AddOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        self.a.accum_grad(g);
        if self.b.needs_grad() {
            if self.b_sign == 1.0 {
                self.b.accum_grad(g);
            } else {
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.b.accum_grad_owned(neg);
            }
        }
    }
}

fn add_like(tape: &Tape, a: &Tensor, b: &Tensor, sign: f64, op: &'static str) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, a, b));
    }
    let values: Vec<f64> = a
        .values()
        .iter()
        .zip(b.values().iter())
        .map(|(x, y)| x + sign * y)
        .collect();
    let out = Tensor::intermediate(
        a.shape().to_vec(),
        values,
        tape.recording() && (a.needs_grad() || b.needs_grad()),
    );
    if out.needs_grad() {
        tape.record(Box::new(AddOp {
            a: a.clone(),
            b: b.clone(),
            out: out.clone(),
            b_sign: sign,
        }));
    }
    Ok(out)
}

pub fn add(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    add_like(tape, a, b, 1.0, "add")
}

pub fn sub(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    add_like(tape, a, b, -1.0, "sub")
}

struct MulOp {
    a: Tensor,
    b: Tensor,
    out: Tensor,
}

impl TapeOp for MulOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        if self.a.needs_grad() {
            let da: Vec<f64> = g.iter().zip(self.b.values().iter()).map(|(g, b)| g * b).collect();
            self.a.accum_grad_owned(da);
        }
        if self.b.needs_grad() {
            let db: Vec<f64> = g.iter().zip(self.a.values().iter()).map(|(g, a)| g * a).collect();
            self.b.accum_grad_owned(db);
        }
    }
}

/// Elementwise (Hadamard) product.
pub fn mul(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err("mul", a, b));
    }
    let values: Vec<f64> = a
        .values()
        .iter()
        .zip(b.values().iter())
        .map(|(x, y)| x * y)
        .collect();
    let out = Tensor::intermediate(
        a.shape().to_vec(),
        values,
        tape.recording() && (a.needs_grad() || b.needs_grad()),
    );
    if out.needs_grad() {
        tape.record(Box::new(MulOp {
            a: a.clone(),
            b: b.clone(),
            out: out.clone(),
        }));
    }
    Ok(out)
}

struct ScaleOp {
    x: Tensor,
    out: Tensor,
    c: f64,
}

impl TapeOp for ScaleOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        let dx: Vec<f64> = g.iter().map(|v| v * self.c).collect();
        self.x.accum_grad_owned(dx);
    }
}

/// `x * c` for a compile-time-known constant.
pub fn scale(tape: &Tape, x: &Tensor, c: f64) -> Tensor {
    let values: Vec<f64> = x.values().iter().map(|v| v * c).collect();
    let out = Tensor::intermediate(x.shape().to_vec(), values, tape.recording() && x.needs_grad());
    if out.needs_grad() {
        tape.record(Box::new(ScaleOp {
            x: x.clone(),
            out: out.clone(),
            c,
        }));
    }
    out
}

struct ShiftOp {
    x: Tensor,
    out: Tensor,
}

impl TapeOp for ShiftOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        self.x.accum_grad(g);
    }
}

/// `x + c` elementwise.
pub fn add_const(tape: &Tape, x: &Tensor, c: f64) -> Tensor {
    let values: Vec<f64> = x.values().iter().map(|v| v + c).collect();
    let out = Tensor::intermediate(x.shape().to_vec(), values, tape.recording() && x.needs_grad());
    if out.needs_grad() {
        tape.record(Box::new(ShiftOp {
            x: x.clone(),
            out: out.clone(),
        }));
    }
    out
}

// ---------------------------------------------------------------------------
// matmul and friends
// ---------------------------------------------------------------------------

struct MatmulOp {
    a: Tensor,
    b: Tensor,
    out: Tensor,
    ta: bool,
    tb: bool,
    m: usize,
    k: usize,
    n: usize,
}

fn view(data: &[f64], stored_rows: usize, stored_cols: usize, t: bool) -> MatView<'_> {
    if t {
        MatView::transposed(data, stored_rows, stored_cols)
    } else {
        MatView::row_major(data, stored_rows, stored_cols)
    }
}

impl TapeOp for MatmulOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        let (m, n) = (self.m, self.n);
        let _ = self.k;
        if self.a.needs_grad() {
            let bv = self.b.values();
            let (br, bc) = (self.b.shape()[0], self.b.shape()[1]);
            let mut da = vec![0.0; self.a.numel()];
            if !self.ta {
                // da[m,k] = g[m,n] * B'^T[n,k]
                dgemm(
                    MatView::row_major(g, m, n),
                    view(&bv, br, bc, !self.tb),
                    0.0,
                    &mut da,
                    true,
                );
            } else {
                // a stored [k,m]; da = B'[k,n] * g^T[n,m]
                dgemm(
                    view(&bv, br, bc, self.tb),
                    MatView::transposed(g, m, n),
                    0.0,
                    &mut da,
                    true,
                );
            }
            self.a.accum_grad_owned(da);
        }
        if self.b.needs_grad() {
            let av = self.a.values();
            let (ar, ac) = (self.a.shape()[0], self.a.shape()[1]);
            let mut db = vec![0.0; self.b.numel()];
            if !self.tb {
                // db[k,n] = A'^T[k,m] * g[m,n]
                dgemm(
                    view(&av, ar, ac, !self.ta),
                    MatView::row_major(g, m, n),
                    0.0,
                    &mut db,
                    true,
                );
            } else {
                // b stored [n,k]; db = g^T[n,m] * A'[m,k]
                dgemm(
                    MatView::transposed(g, m, n),
                    view(&av, ar, ac, self.ta),
                    0.0,
                    &mut db,
                    true,
                );
            }
            self.b.accum_grad_owned(db);
        }
    }
}

fn matmul_impl(tape: &Tape, a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
    let (ar, ac) = rank2(a, "matmul");
    let (br, bc) = rank2(b, "matmul");
    let (m, ka) = if ta { (ac, ar) } else { (ar, ac) };
    let (kb, n) = if tb { (bc, br) } else { (br, bc) };
    if ka != kb {
        return Err(shape_err("matmul", a, b));
    }
    let mut values = vec![0.0; m * n];
    {
        let av = a.values();
        let bv = b.values();
        dgemm(view(&av, ar, ac, ta), view(&bv, br, bc, tb), 0.0, &mut values, true);
    }
    let out = Tensor::intermediate(
        vec![m, n],
        values,
        tape.recording() && (a.needs_grad() || b.needs_grad()),
    );
    if out.needs_grad() {
        tape.record(Box::new(MatmulOp {
            a: a.clone(),
            b: b.clone(),
            out: out.clone(),
            ta,
            tb,
            m,
            k: ka,
            n,
        }));
    }
    Ok(out)
}

/// `a[m,k] * b[k,n]`.
pub fn matmul(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matmul_impl(tape, a, b, false, false)
}

/// `a^T * b` with `a` stored `[k,m]`.
pub fn matmul_tn(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matmul_impl(tape, a, b, true, false)
}

/// `a * b^T` with `b` stored `[n,k]`.
pub fn matmul_nt(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matmul_impl(tape, a, b, false, true)
}

struct AddBiasOp {
    x: Tensor,
    bias: Tensor,
    out: Tensor,
}

impl TapeOp for AddBiasOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        if self.x.needs_grad() {
            self.x.accum_grad(g);
        }
        if self.bias.needs_grad() {
            let f = self.bias.numel();
            let mut db = vec![0.0; f];
            for row in g.chunks_exact(f) {
                for (d, v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
            self.bias.accum_grad_owned(db);
        }
    }
}

/// Broadcast a length-f bias over the rows of an `n x f` matrix.
pub fn add_bias(tape: &Tape, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (_, f) = rank2(x, "add_bias");
    if bias.numel() != f {
        return Err(shape_err("add_bias", x, bias));
    }
    let bv = bias.to_vec();
    let values: Vec<f64> = x
        .values()
        .chunks_exact(f)
        .flat_map(|row| row.iter().zip(&bv).map(|(x, b)| x + b).collect::<Vec<_>>())
        .collect();
    let out = Tensor::intermediate(
        x.shape().to_vec(),
        values,
        tape.recording() && (x.needs_grad() || bias.needs_grad()),
    );
    if out.needs_grad() {
        tape.record(Box::new(AddBiasOp {
            x: x.clone(),
            bias: bias.clone(),
            out: out.clone(),
        }));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// sparse-dense product
// ---------------------------------------------------------------------------

struct SpmmOp {
    adj: Rc<Csr>,
    x: Tensor,
    out: Tensor,
    f: usize,
}

impl TapeOp for SpmmOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        // dx = A^T g; the adjacency is symmetric so A^T = A.
        let mut dx = vec![0.0; self.x.numel()];
        self.adj.mul_dense(g, self.f, &mut dx);
        self.x.accum_grad_owned(dx);
    }
}

/// Sparse adjacency times dense feature matrix. The adjacency is constant:
/// gradients flow to `x` only. Requires a symmetric matrix (all graph
/// builders in this crate produce one).
pub fn spmm(tape: &Tape, adj: &Rc<Csr>, x: &Tensor) -> Result<Tensor> {
    let (n, f) = rank2(x, "spmm");
    if adj.n != n {
        return Err(CoreError::ShapeMismatch {
            op: "spmm",
            lhs: vec![adj.n, adj.n],
            rhs: x.shape().to_vec(),
        });
    }
    let mut values = vec![0.0; n * f];
    adj.mul_dense(&x.values(), f, &mut values);
    let out = Tensor::intermediate(vec![n, f], values, tape.recording() && x.needs_grad());
    if out.needs_grad() {
        tape.record(Box::new(SpmmOp {
            adj: Rc::clone(adj),
            x: x.clone(),
            out: out.clone(),
            f,
        }));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// nonlinearities
// ---------------------------------------------------------------------------

struct ReluOp {
    x: Tensor,
    out: Tensor,
}

impl TapeOp for ReluOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        // Subgradient at 0 is 0, so the mask is `output > 0`.
        let ov = self.out.values();
        let dx: Vec<f64> = g
            .iter()
            .zip(ov.iter())
            .map(|(g, o)| if *o > 0.0 { *g } else { 0.0 })
            .collect();
        self.x.accum_grad_owned(dx);
    }
}

/// Elementwise `max(0, x)`.
pub fn relu(tape: &Tape, x: &Tensor) -> Tensor {
    let values: Vec<f64> = x.values().iter().map(|v| v.max(0.0)).collect();
    if tape.kink_tracking() {
        let mut word = 0u64;
        for (i, v) in values.iter().enumerate() {
            if *v > 0.0 {
                word ^= 1u64 << (i % 64);
            }
            if i % 64 == 63 {
                tape.fold_kink(word);
                word = 0;
            }
        }
        tape.fold_kink(word);
    }
    let out = Tensor::intermediate(x.shape().to_vec(), values, tape.recording() && x.needs_grad());
    if out.needs_grad() {
        tape.record(Box::new(ReluOp {
            x: x.clone(),
            out: out.clone(),
        }));
    }
    out
}

struct SoftmaxOp {
    out: Tensor,
    x: Tensor,
    k: usize,
}

impl TapeOp for SoftmaxOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        let s = self.out.values();
        let mut dx = vec![0.0; g.len()];
        for ((dxr, gr), sr) in dx
            .chunks_exact_mut(self.k)
            .zip(g.chunks_exact(self.k))
            .zip(s.chunks_exact(self.k))
        {
            let dot: f64 = gr.iter().zip(sr).map(|(g, s)| g * s).sum();
            for ((d, g), s) in dxr.iter_mut().zip(gr).zip(sr) {
                *d = s * (g - dot);
            }
        }
        self.x.accum_grad_owned(dx);
    }
}

/// Row-wise softmax with per-row max subtraction for stability.
pub fn softmax_rows(tape: &Tape, x: &Tensor) -> Tensor {
    let (_, k) = rank2(x, "softmax_rows");
    assert!(k >= 1, "softmax_rows needs k >= 1");
    let mut values = x.to_vec();
    for row in values.chunks_exact_mut(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    let out = Tensor::intermediate(x.shape().to_vec(), values, tape.recording() && x.needs_grad());
    if out.needs_grad() {
        tape.record(Box::new(SoftmaxOp {
            out: out.clone(),
            x: x.clone(),
            k,
        }));
    }
    out
}

struct LogSoftmaxOp {
    out: Tensor,
    x: Tensor,
    k: usize,
}

impl TapeOp for LogSoftmaxOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        let o = self.out.values();
        let mut dx = vec![0.0; g.len()];
        for ((dxr, gr), or) in dx
            .chunks_exact_mut(self.k)
            .zip(g.chunks_exact(self.k))
            .zip(o.chunks_exact(self.k))
        {
            let gsum: f64 = gr.iter().sum();
            for ((d, g), o) in dxr.iter_mut().zip(gr).zip(or) {
                *d = g - o.exp() * gsum;
            }
        }
        self.x.accum_grad_owned(dx);
    }
}

/// Row-wise log-softmax computed in the log domain.
pub fn log_softmax_rows(tape: &Tape, x: &Tensor) -> Tensor {
    let (_, k) = rank2(x, "log_softmax_rows");
    assert!(k >= 1, "log_softmax_rows needs k >= 1");
    let mut values = x.to_vec();
    for row in values.chunks_exact_mut(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    let out = Tensor::intermediate(x.shape().to_vec(), values, tape.recording() && x.needs_grad());
    if out.needs_grad() {
        tape.record(Box::new(LogSoftmaxOp {
            out: out.clone(),
            x: x.clone(),
            k,
        }));
    }
    out
}

struct DropoutOp {
    x: Tensor,
    out: Tensor,
    mask: Vec<u8>,
    keep_scale: f64,
}

impl TapeOp for DropoutOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        let dx: Vec<f64> = g
            .iter()
            .zip(&self.mask)
            .map(|(g, m)| if *m == 1 { g * self.keep_scale } else { 0.0 })
            .collect();
        self.x.accum_grad_owned(dx);
    }
}

/// Inverted dropout: zeroes elements with probability `p` in training mode
/// and scales survivors by `1/(1-p)`; identity in eval mode.
pub fn dropout(
    tape: &Tape,
    x: &Tensor,
    p: f64,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(CoreError::InvalidParameter {
            name: "dropout_p",
            reason: format!("{p} outside [0, 1)"),
        });
    }
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let keep_scale = 1.0 / (1.0 - p);
    let mut mask = vec![0u8; x.numel()];
    let values: Vec<f64> = x
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if rng.random::<f64>() >= p {
                mask[i] = 1;
                v * keep_scale
            } else {
                0.0
            }
        })
        .collect();
    let out = Tensor::intermediate(x.shape().to_vec(), values, tape.recording() && x.needs_grad());
    if out.needs_grad() {
        tape.record(Box::new(DropoutOp {
            x: x.clone(),
            out: out.clone(),
            mask,
            keep_scale,
        }));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

/// Running first/second moments carried by a batch-norm layer across steps.
#[derive(Debug, Clone)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnStats {
    pub fn new(features: usize) -> BnStats {
        BnStats {
            mean: vec![0.0; features],
            var: vec![1.0; features],
        }
    }
}

pub const BN_EPS: f64 = 1e-5;

struct BatchNormOp {
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    out: Tensor,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    f: usize,
    training: bool,
}

impl TapeOp for BatchNormOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        let f = self.f;
        let n = g.len() / f;
        let xv = self.x.values();
        let gv = self.gamma.values();

        if self.beta.needs_grad() {
            let mut dbeta = vec![0.0; f];
            for row in g.chunks_exact(f) {
                for (d, v) in dbeta.iter_mut().zip(row) {
                    *d += v;
                }
            }
            self.beta.accum_grad_owned(dbeta);
        }
        // dgamma needs xhat; recompute from saved mean / inv_std.
        let mut dgamma = vec![0.0; f];
        for (xrow, grow) in xv.chunks_exact(f).zip(g.chunks_exact(f)) {
            for j in 0..f {
                let xhat = (xrow[j] - self.mean[j]) * self.inv_std[j];
                dgamma[j] += grow[j] * xhat;
            }
        }
        if self.gamma.needs_grad() {
            self.gamma.accum_grad(&dgamma);
        }
        if self.x.needs_grad() {
            let mut dx = vec![0.0; n * f];
            if self.training {
                // per-feature: dx = (gamma*inv_std/n) * (n*g - sum_g - xhat*sum(g*xhat))
                let mut sum_g = vec![0.0; f];
                for grow in g.chunks_exact(f) {
                    for (s, v) in sum_g.iter_mut().zip(grow) {
                        *s += v;
                    }
                }
                let sum_g_xhat = &dgamma; // same reduction
                for i in 0..n {
                    for j in 0..f {
                        let xhat = (xv[i * f + j] - self.mean[j]) * self.inv_std[j];
                        dx[i * f + j] = gv[j] * self.inv_std[j] / (n as f64)
                            * ((n as f64) * g[i * f + j] - sum_g[j] - xhat * sum_g_xhat[j]);
                    }
                }
            } else {
                // eval mode is a per-feature affine map
                for i in 0..n {
                    for j in 0..f {
                        dx[i * f + j] = g[i * f + j] * gv[j] * self.inv_std[j];
                    }
                }
            }
            self.x.accum_grad_owned(dx);
        }
    }
}

/// Batch normalization over the row dimension of an `n x f` matrix.
///
/// Training mode normalizes by batch statistics (biased variance, eps 1e-5)
/// and folds them into `running` with the given momentum (unbiased variance
/// for the running estimate); eval mode normalizes by the running stats.
pub fn batch_norm(
    tape: &Tape,
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &mut BnStats,
    momentum: f64,
    training: bool,
) -> Result<Tensor> {
    let (n, f) = rank2(x, "batch_norm");
    if n == 0 {
        return Err(CoreError::EmptyBatch { op: "batch_norm" });
    }
    if gamma.numel() != f || beta.numel() != f || running.mean.len() != f {
        return Err(shape_err("batch_norm", x, gamma));
    }
    let xv = x.values();
    let (mean, var) = if training {
        let mut mean = vec![0.0; f];
        for row in xv.chunks_exact(f) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut var = vec![0.0; f];
        for row in xv.chunks_exact(f) {
            for j in 0..f {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= n as f64;
        }
        // update running stats; the running variance uses the unbiased estimate
        let unbias = if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 };
        for j in 0..f {
            running.mean[j] = (1.0 - momentum) * running.mean[j] + momentum * mean[j];
            running.var[j] = (1.0 - momentum) * running.var[j] + momentum * var[j] * unbias;
        }
        (mean, var)
    } else {
        (running.mean.clone(), running.var.clone())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let gv = gamma.values();
    let bv = beta.values();
    let mut values = vec![0.0; n * f];
    for (vrow, xrow) in values.chunks_exact_mut(f).zip(xv.chunks_exact(f)) {
        for j in 0..f {
            let xhat = (xrow[j] - mean[j]) * inv_std[j];
            vrow[j] = gv[j] * xhat + bv[j];
        }
    }
    drop(xv);
    drop(gv);
    drop(bv);
    let needs = tape.recording() && (x.needs_grad() || gamma.needs_grad() || beta.needs_grad());
    let out = Tensor::intermediate(vec![n, f], values, needs);
    if out.needs_grad() {
        tape.record(Box::new(BatchNormOp {
            x: x.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            out: out.clone(),
            mean,
            inv_std,
            f,
            training,
        }));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

struct SumAllOp {
    x: Tensor,
    out: Tensor,
    scale: f64,
}

impl TapeOp for SumAllOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        let dx = vec![g[0] * self.scale; self.x.numel()];
        self.x.accum_grad_owned(dx);
    }
}

pub fn sum_all(tape: &Tape, x: &Tensor) -> Tensor {
    let s: f64 = x.values().iter().sum();
    let out = Tensor::intermediate(vec![], vec![s], tape.recording() && x.needs_grad());
    if out.needs_grad() {
        tape.record(Box::new(SumAllOp {
            x: x.clone(),
            out: out.clone(),
            scale: 1.0,
        }));
    }
    out
}

pub fn mean_all(tape: &Tape, x: &Tensor) -> Tensor {
    let n = x.numel().max(1) as f64;
    let s: f64 = x.values().iter().sum::<f64>() / n;
    let out = Tensor::intermediate(vec![], vec![s], tape.recording() && x.needs_grad());
    if out.needs_grad() {
        tape.record(Box::new(SumAllOp {
            x: x.clone(),
            out: out.clone(),
            scale: 1.0 / n,
        }));
    }
    out
}

struct ColSumsOp {
    x: Tensor,
    out: Tensor,
    k: usize,
}

impl TapeOp for ColSumsOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        let n = self.x.numel() / self.k;
        let mut dx = Vec::with_capacity(n * self.k);
        for _ in 0..n {
            dx.extend_from_slice(g);
        }
        self.x.accum_grad_owned(dx);
    }
}

/// Column sums of an `n x k` matrix, as a length-k vector.
pub fn col_sums(tape: &Tape, x: &Tensor) -> Tensor {
    let (_, k) = rank2(x, "col_sums");
    let mut values = vec![0.0; k];
    for row in x.values().chunks_exact(k) {
        for (s, v) in values.iter_mut().zip(row) {
            *s += v;
        }
    }
    let out = Tensor::intermediate(vec![k], values, tape.recording() && x.needs_grad());
    if out.needs_grad() {
        tape.record(Box::new(ColSumsOp {
            x: x.clone(),
            out: out.clone(),
            k,
        }));
    }
    out
}

struct SumSquaresOp {
    x: Tensor,
    out: Tensor,
}

impl TapeOp for SumSquaresOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        let dx: Vec<f64> = self.x.values().iter().map(|v| 2.0 * v * g[0]).collect();
        self.x.accum_grad_owned(dx);
    }
}

/// `sum(x^2)` as a scalar; smooth everywhere, unlike the norm.
pub fn sum_squares(tape: &Tape, x: &Tensor) -> Tensor {
    let s: f64 = x.values().iter().map(|v| v * v).sum();
    let out = Tensor::intermediate(vec![], vec![s], tape.recording() && x.needs_grad());
    if out.needs_grad() {
        tape.record(Box::new(SumSquaresOp {
            x: x.clone(),
            out: out.clone(),
        }));
    }
    out
}

struct FrobeniusOp {
    x: Tensor,
    out: Tensor,
}

impl TapeOp for FrobeniusOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        let norm = self.out.values()[0];
        if norm == 0.0 {
            // gradient defined as zero at the origin
            return;
        }
        let dx: Vec<f64> = self.x.values().iter().map(|v| v / norm * g[0]).collect();
        self.x.accum_grad_owned(dx);
    }
}

/// Frobenius norm (sqrt of sum of squares) of any tensor; the zero tensor
/// maps to 0 with zero gradient.
pub fn frobenius_norm(tape: &Tape, x: &Tensor) -> Tensor {
    let s: f64 = x.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    let out = Tensor::intermediate(vec![], vec![s], tape.recording() && x.needs_grad());
    if out.needs_grad() {
        tape.record(Box::new(FrobeniusOp {
            x: x.clone(),
            out: out.clone(),
        }));
    }
    out
}

struct DivByScalarOp {
    x: Tensor,
    s: Tensor,
    out: Tensor,
}

impl TapeOp for DivByScalarOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        let sv = self.s.values()[0];
        if self.x.needs_grad() {
            let dx: Vec<f64> = g.iter().map(|g| g / sv).collect();
            self.x.accum_grad_owned(dx);
        }
        if self.s.needs_grad() {
            let xv = self.x.values();
            let ds: f64 = g
                .iter()
                .zip(xv.iter())
                .map(|(g, x)| -g * x / (sv * sv))
                .sum();
            self.s.accum_grad(&[ds]);
        }
    }
}

/// Divide a tensor by a scalar tensor (both differentiable).
pub fn div_by_scalar(tape: &Tape, x: &Tensor, s: &Tensor) -> Result<Tensor> {
    if !s.is_scalar() {
        return Err(shape_err("div_by_scalar", x, s));
    }
    let sv = s.item();
    let values: Vec<f64> = x.values().iter().map(|v| v / sv).collect();
    let out = Tensor::intermediate(
        x.shape().to_vec(),
        values,
        tape.recording() && (x.needs_grad() || s.needs_grad()),
    );
    if out.needs_grad() {
        tape.record(Box::new(DivByScalarOp {
            x: x.clone(),
            s: s.clone(),
            out: out.clone(),
        }));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// row selection and losses
// ---------------------------------------------------------------------------

struct GatherRowsOp {
    x: Tensor,
    out: Tensor,
    idx: Vec<usize>,
    f: usize,
}

impl TapeOp for GatherRowsOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        let mut dx = vec![0.0; self.x.numel()];
        for (pos, &row) in self.idx.iter().enumerate() {
            let src = &g[pos * self.f..(pos + 1) * self.f];
            let dst = &mut dx[row * self.f..(row + 1) * self.f];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        self.x.accum_grad_owned(dx);
    }
}

/// Select rows of an `n x f` matrix by index; backward scatter-adds.
pub fn gather_rows(tape: &Tape, x: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (n, f) = rank2(x, "gather_rows");
    if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
        return Err(CoreError::InvalidParameter {
            name: "gather_rows.idx",
            reason: format!("row {bad} out of range for {n} rows"),
        });
    }
    let xv = x.values();
    let mut values = Vec::with_capacity(idx.len() * f);
    for &i in idx {
        values.extend_from_slice(&xv[i * f..(i + 1) * f]);
    }
    drop(xv);
    let out = Tensor::intermediate(
        vec![idx.len(), f],
        values,
        tape.recording() && x.needs_grad(),
    );
    if out.needs_grad() {
        tape.record(Box::new(GatherRowsOp {
            x: x.clone(),
            out: out.clone(),
            idx: idx.to_vec(),
            f,
        }));
    }
    Ok(out)
}

struct NllProbsOp {
    probs: Tensor,
    out: Tensor,
    labels: Vec<u32>,
    floor: f64,
    k: usize,
}

impl TapeOp for NllProbsOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        let pv = self.probs.values();
        let n = self.labels.len();
        let mut dp = vec![0.0; pv.len()];
        for (i, &y) in self.labels.iter().enumerate() {
            let p = pv[i * self.k + y as usize];
            dp[i * self.k + y as usize] = -g[0] / (n as f64 * (p + self.floor));
        }
        drop(pv);
        self.probs.accum_grad_owned(dp);
    }
}

/// Negative log-likelihood over probability rows:
/// `-mean_i ln(p[i, y_i] + floor)`.
pub fn nll_probs(tape: &Tape, probs: &Tensor, labels: &[u32], floor: f64) -> Result<Tensor> {
    let (n, k) = rank2(probs, "nll_probs");
    if labels.len() != n {
        return Err(CoreError::InvalidParameter {
            name: "nll_probs.labels",
            reason: format!("{} labels for {} rows", labels.len(), n),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y as usize >= k) {
        return Err(CoreError::InvalidParameter {
            name: "nll_probs.labels",
            reason: format!("label {bad} out of range for {k} clusters"),
        });
    }
    let pv = probs.values();
    let loss = -labels
        .iter()
        .enumerate()
        .map(|(i, &y)| (pv[i * k + y as usize] + floor).ln())
        .sum::<f64>()
        / n as f64;
    drop(pv);
    let out = Tensor::intermediate(vec![], vec![loss], tape.recording() && probs.needs_grad());
    if out.needs_grad() {
        tape.record(Box::new(NllProbsOp {
            probs: probs.clone(),
            out: out.clone(),
            labels: labels.to_vec(),
            floor,
            k,
        }));
    }
    Ok(out)
}

struct KlUniformOp {
    p: Tensor,
    out: Tensor,
    k: f64,
}

impl TapeOp for KlUniformOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        let dp: Vec<f64> = self
            .p
            .values()
            .iter()
            .map(|&p| if p > 0.0 { ((self.k * p).ln() + 1.0) * g[0] } else { 0.0 })
            .collect();
        self.p.accum_grad_owned(dp);
    }
}

/// `sum_j p_j ln(k p_j)`: KL divergence of a length-k probability vector from
/// uniform. Zero entries contribute zero through the `x ln x` limit.
pub fn kl_uniform(tape: &Tape, p: &Tensor) -> Tensor {
    let k = p.numel() as f64;
    let s: f64 = p
        .values()
        .iter()
        .map(|&p| if p > 0.0 { p * (k * p).ln() } else { 0.0 })
        .sum();
    let out = Tensor::intermediate(vec![], vec![s], tape.recording() && p.needs_grad());
    if out.needs_grad() {
        tape.record(Box::new(KlUniformOp {
            p: p.clone(),
            out: out.clone(),
            k,
        }));
    }
    out
}

struct ReshapeOp {
    x: Tensor,
    out: Tensor,
}

impl TapeOp for ReshapeOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        self.x.accum_grad(g);
    }
}

/// Same data, new shape (copying).
pub fn reshape(tape: &Tape, x: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
    if shape.iter().product::<usize>() != x.numel() {
        return Err(CoreError::ShapeMismatch {
            op: "reshape",
            lhs: x.shape().to_vec(),
            rhs: shape,
        });
    }
    let out = Tensor::intermediate(shape, x.to_vec(), tape.recording() && x.needs_grad());
    if out.needs_grad() {
        tape.record(Box::new(ReshapeOp {
            x: x.clone(),
            out: out.clone(),
        }));
    }
    Ok(out)
}

/// Parallel elementwise max with a second pass kept sequential per row so the
/// result does not depend on thread count. (Used by larger activations.)
pub(crate) fn relu_inplace_values(values: &mut [f64]) {
    values.par_iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0;
        }
    });
}


struct MulByScalarOp {
    x: Tensor,
    s: Tensor,
    out: Tensor,
}

impl TapeOp for MulByScalarOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        let sv = self.s.values()[0];
        if self.x.needs_grad() {
            let dx: Vec<f64> = g.iter().map(|g| g * sv).collect();
            self.x.accum_grad_owned(dx);
        }
        if self.s.needs_grad() {
            let xv = self.x.values();
            let ds: f64 = g.iter().zip(xv.iter()).map(|(g, x)| g * x).sum();
            self.s.accum_grad(&[ds]);
        }
    }
}

/// Multiply a tensor by a scalar tensor (both differentiable).
pub fn mul_by_scalar(tape: &Tape, x: &Tensor, s: &Tensor) -> Result<Tensor> {
    if !s.is_scalar() {
        return Err(shape_err("mul_by_scalar", x, s));
    }
    let sv = s.item();
    let values: Vec<f64> = x.values().iter().map(|v| v * sv).collect();
    let out = Tensor::intermediate(
        x.shape().to_vec(),
        values,
        tape.recording() && (x.needs_grad() || s.needs_grad()),
    );
    if out.needs_grad() {
        tape.record(Box::new(MulByScalarOp {
            x: x.clone(),
            s: s.clone(),
            out: out.clone(),
        }));
    }
    Ok(out)
}
