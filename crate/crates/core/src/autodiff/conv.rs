//! 3x3 same-padding convolution (via im2col + GEMM) and 2x2/stride-2 max
//! pooling over NCHW tensors.

use rayon::prelude::*;

use super::gemm::MatView;
use super::tape::{Tape, TapeOp};
use super::tensor::Tensor;
use crate::error::{CoreError, Result};

fn rank4(t: &Tensor, op: &str) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert!(s.len() == 4, "{op} expects NCHW, got {:?}", s);
    (s[0], s[1], s[2], s[3])
}

/// Gather the 3x3 zero-padded patches of one `c x h x w` image into a
/// row-major `(h*w) x (c*9)` matrix, column order `(channel, dy, dx)`.
fn im2col(img: &[f64], c: usize, h: usize, w: usize, patches: &mut [f64]) {
    let ck = c * 9;
    debug_assert_eq!(patches.len(), h * w * ck);
    patches.fill(0.0);
    for y in 0..h {
        for x in 0..w {
            let row = (y * w + x) * ck;
            for ch in 0..c {
                let img_ch = &img[ch * h * w..(ch + 1) * h * w];
                let base = row + ch * 9;
                for dy in 0..3usize {
                    let sy = y as isize + dy as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    for dx in 0..3usize {
                        let sx = x as isize + dx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        patches[base + dy * 3 + dx] = img_ch[sy * w + sx as usize];
                    }
                }
            }
        }
    }
}

/// Scatter-add a `(h*w) x (c*9)` patch-gradient matrix back onto the
/// `c x h x w` input gradient (the transpose of im2col).
fn col2im_add(dpatches: &[f64], c: usize, h: usize, w: usize, dimg: &mut [f64]) {
    let ck = c * 9;
    for y in 0..h {
        for x in 0..w {
            let row = (y * w + x) * ck;
            for ch in 0..c {
                let base = row + ch * 9;
                let dimg_ch = &mut dimg[ch * h * w..(ch + 1) * h * w];
                for dy in 0..3usize {
                    let sy = y as isize + dy as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    for dx in 0..3usize {
                        let sx = x as isize + dx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        dimg_ch[sy * w + sx as usize] += dpatches[base + dy * 3 + dx];
                    }
                }
            }
        }
    }
}

struct Conv2dOp {
    x: Tensor,
    kernels: Tensor,
    bias: Tensor,
    out: Tensor,
    dims: (usize, usize, usize, usize),
    oc: usize,
}

impl TapeOp for Conv2dOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        let (n, c, h, w) = self.dims;
        let (oc, hw, ck) = (self.oc, h * w, c * 9);
        let xv_ref = self.x.values();
        let xv: &[f64] = &xv_ref;
        let kv_ref = self.kernels.values();
        let kv: &[f64] = &kv_ref;

        if self.x.needs_grad() {
            let mut dx = vec![0.0; n * c * hw];
            dx.par_chunks_mut(c * hw)
                .zip(g.par_chunks(oc * hw))
                .for_each(|(dimg, gimg)| {
                    let mut dpatches = vec![0.0; hw * ck];
                    // dpatches[hw, ck] = g^T[hw, oc] * K[oc, ck]
                    super::gemm::dgemm(
                        MatView::transposed(gimg, oc, hw),
                        MatView::row_major(kv, oc, ck),
                        0.0,
                        &mut dpatches,
                        false,
                    );
                    col2im_add(&dpatches, c, h, w, dimg);
                });
            self.x.accum_grad_owned(dx);
        }

        if self.kernels.needs_grad() || self.bias.needs_grad() {
            // partial reductions per image block, folded in block order
            let block = 32usize;
            let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n.div_ceil(block))
                .into_par_iter()
                .map(|b| {
                    let lo = b * block;
                    let hi = ((b + 1) * block).min(n);
                    let mut dk = vec![0.0; oc * ck];
                    let mut db = vec![0.0; oc];
                    let mut patches = vec![0.0; hw * ck];
                    for i in lo..hi {
                        let gimg = &g[i * oc * hw..(i + 1) * oc * hw];
                        im2col(&xv[i * c * hw..(i + 1) * c * hw], c, h, w, &mut patches);
                        // dk[oc, ck] += g[oc, hw] * patches[hw, ck]
                        super::gemm::dgemm(
                            MatView::row_major(gimg, oc, hw),
                            MatView::row_major(&patches, hw, ck),
                            1.0,
                            &mut dk,
                            false,
                        );
                        for ch in 0..oc {
                            db[ch] += gimg[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
                        }
                    }
                    (dk, db)
                })
                .collect();
            let mut dk = vec![0.0; oc * ck];
            let mut db = vec![0.0; oc];
            for (pk, pb) in &partials {
                for (d, p) in dk.iter_mut().zip(pk) {
                    *d += p;
                }
                for (d, p) in db.iter_mut().zip(pb) {
                    *d += p;
                }
            }
            if self.kernels.needs_grad() {
                self.kernels.accum_grad_owned(dk);
            }
            if self.bias.needs_grad() {
                self.bias.accum_grad_owned(db);
            }
        }
    }
}

/// Cross-correlation with 3x3 kernels, stride 1, zero padding 1, plus a
/// per-channel bias: output spatial size equals input spatial size.
pub fn conv2d(tape: &Tape, x: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = rank4(x, "conv2d");
    let ks = kernels.shape();
    if ks.len() != 4 || ks[1] != c || ks[2] != 3 || ks[3] != 3 {
        return Err(CoreError::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: ks.to_vec(),
        });
    }
    let oc = ks[0];
    if bias.numel() != oc {
        return Err(CoreError::ShapeMismatch {
            op: "conv2d bias",
            lhs: vec![oc],
            rhs: bias.shape().to_vec(),
        });
    }
    let (hw, ck) = (h * w, c * 9);
    let xv_ref = x.values();
    let xv: &[f64] = &xv_ref;
    let kv_ref = kernels.values();
    let kv: &[f64] = &kv_ref;
    let bv = bias.to_vec();
    let mut values = vec![0.0; n * oc * hw];
    values
        .par_chunks_mut(oc * hw)
        .zip(xv.par_chunks(c * hw))
        .for_each(|(out_img, img)| {
            let mut patches = vec![0.0; hw * ck];
            im2col(img, c, h, w, &mut patches);
            // out[oc, hw] = K[oc, ck] * patches^T[ck, hw]
            super::gemm::dgemm(
                MatView::row_major(kv, oc, ck),
                MatView::transposed(&patches, hw, ck),
                0.0,
                out_img,
                false,
            );
            for ch in 0..oc {
                let b = bv[ch];
                for v in out_img[ch * hw..(ch + 1) * hw].iter_mut() {
                    *v += b;
                }
            }
        });
    drop(xv_ref);
    drop(kv_ref);
    let needs =
        tape.recording() && (x.needs_grad() || kernels.needs_grad() || bias.needs_grad());
    let out = Tensor::intermediate(vec![n, oc, h, w], values, needs);
    if out.needs_grad() {
        tape.record(Box::new(Conv2dOp {
            x: x.clone(),
            kernels: kernels.clone(),
            bias: bias.clone(),
            out: out.clone(),
            dims: (n, c, h, w),
            oc,
        }));
    }
    Ok(out)
}

/// Direct nested-loop convolution used as the test oracle.
pub fn conv2d_reference(
    x: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kernels: &[f64],
    oc: usize,
    bias: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; n * oc * h * w];
    for i in 0..n {
        for o in 0..oc {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut acc = bias[o];
                    for ch in 0..c {
                        for dy in -1..=1isize {
                            for dx in -1..=1isize {
                                let (sy, sx) = (y + dy, xx + dx);
                                if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                let kv = kernels[((o * c + ch) * 3 + (dy + 1) as usize) * 3
                                    + (dx + 1) as usize];
                                acc += kv
                                    * x[((i * c + ch) * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[((i * oc + o) * h + y as usize) * w + xx as usize] = acc;
                }
            }
        }
    }
    out
}

struct MaxPoolOp {
    x: Tensor,
    out: Tensor,
    argmax: Vec<u8>,
    dims: (usize, usize, usize, usize),
}

impl TapeOp for MaxPoolOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        let (_, _, h, w) = self.dims;
        let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
        let mut dx = vec![0.0; self.x.numel()];
        let planes = self.x.numel() / (h * w);
        for p in 0..planes {
            let dplane = &mut dx[p * h * w..(p + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let oidx = (p * ho + oy) * wo + ox;
                    let pick = self.argmax[oidx];
                    let (dy, dxx) = ((pick / 2) as usize, (pick % 2) as usize);
                    let (sy, sx) = (oy * 2 + dy, ox * 2 + dxx);
                    dplane[sy * w + sx] += g[oidx];
                }
            }
        }
        self.x.accum_grad_owned(dx);
    }
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns pool over the
/// in-bounds window. Ties route the gradient to the first element in
/// row-major window order.
pub fn maxpool2d(tape: &Tape, x: &Tensor) -> Tensor {
    let (n, c, h, w) = rank4(x, "maxpool2d");
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let planes = n * c;
    let xv = x.values();
    let mut values = vec![0.0; planes * ho * wo];
    let mut argmax = vec![0u8; planes * ho * wo];
    for p in 0..planes {
        let plane = &xv[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut pick = 0u8;
                for dy in 0..2usize {
                    let sy = oy * 2 + dy;
                    if sy >= h {
                        continue;
                    }
                    for dxx in 0..2usize {
                        let sx = ox * 2 + dxx;
                        if sx >= w {
                            continue;
                        }
                        let v = plane[sy * w + sx];
                        if v > best {
                            best = v;
                            pick = (dy * 2 + dxx) as u8;
                        }
                    }
                }
                let oidx = (p * ho + oy) * wo + ox;
                values[oidx] = best;
                argmax[oidx] = pick;
            }
        }
    }
    drop(xv);
    if tape.kink_tracking() {
        let mut word = 0u64;
        for (i, &a) in argmax.iter().enumerate() {
            word = word.rotate_left(2) ^ a as u64;
            if i % 31 == 30 {
                tape.fold_kink(word);
                word = 0;
            }
        }
        tape.fold_kink(word);
    }
    let out = Tensor::intermediate(
        vec![n, c, ho, wo],
        values,
        tape.recording() && x.needs_grad(),
    );
    if out.needs_grad() {
        tape.record(Box::new(MaxPoolOp {
            x: x.clone(),
            out: out.clone(),
            argmax,
            dims: (n, c, h, w),
        }));
    }
    out
}
