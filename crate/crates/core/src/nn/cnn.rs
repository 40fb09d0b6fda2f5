//! Three-stage convolutional encoder: channels expand input -> 32 -> 64 ->
//! 128 with relu after every convolution and 2x2 max pooling after the later
//! two, then a fully-connected chain down to the 256-dim embedding.
//!
//! Training-mode forward runs in fixed-size image chunks and records a
//! single composite tape op that recomputes each chunk during backward, so
//! saved activations never exceed one chunk regardless of batch size.

use rand_chacha::ChaCha8Rng;

use super::{xavier_uniform, zeros_param, ParamSet};
use crate::autodiff::conv::{conv2d, maxpool2d};
use crate::autodiff::ops;
use crate::autodiff::tape::TapeOp;
use crate::autodiff::{Tape, Tensor};
use crate::error::{CoreError, Result};

pub const CHANNEL_WIDTHS: [usize; 3] = [32, 64, 128];
pub const EMBED_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnEncoderConfig {
    pub in_channels: usize,
    pub image_side: usize,
}

impl CnnEncoderConfig {
    pub fn new(in_channels: usize, image_side: usize) -> Result<Self> {
        if in_channels != 1 && in_channels != 3 {
            return Err(CoreError::InvalidParameter {
                name: "in_channels",
                reason: format!("{in_channels} (grayscale = 1, color = 3)"),
            });
        }
        if image_side < 4 {
            return Err(CoreError::InvalidParameter {
                name: "image_side",
                reason: format!("{image_side} is too small for two pooling stages"),
            });
        }
        Ok(CnnEncoderConfig {
            in_channels,
            image_side,
        })
    }

    /// Guess the image geometry from a flat feature dimension (e.g. 784 ->
    /// one 28x28 channel, 3072 -> three 32x32 channels).
    pub fn infer(dim: usize) -> Result<Self> {
        for c in [1usize, 3] {
            if dim % c == 0 {
                let side = ((dim / c) as f64).sqrt().round() as usize;
                if side * side * c == dim {
                    return CnnEncoderConfig::new(c, side);
                }
            }
        }
        Err(CoreError::InvalidInput(format!(
            "feature dimension {dim} is not a square image in 1 or 3 channels"
        )))
    }

    /// Spatial side after the two pooled stages.
    pub fn pooled_side(&self) -> usize {
        self.image_side.div_ceil(2).div_ceil(2)
    }

    pub fn flatten_dim(&self) -> usize {
        CHANNEL_WIDTHS[2] * self.pooled_side() * self.pooled_side()
    }

    /// Fully-connected widths after flatten: grayscale heads straight to
    /// 256, color goes through 512 first.
    pub fn embed_dims(&self) -> Vec<usize> {
        if self.in_channels == 3 {
            vec![512, EMBED_DIM]
        } else {
            vec![EMBED_DIM]
        }
    }

    pub fn pixel_dim(&self) -> usize {
        self.in_channels * self.image_side * self.image_side
    }
}

#[derive(Clone)]
pub struct CnnEncoder {
    pub cfg: CnnEncoderConfig,
    kernels: Vec<Tensor>,
    biases: Vec<Tensor>,
    fc: Vec<(Tensor, Tensor)>,
    chunk: usize,
}

pub const DEFAULT_CNN_CHUNK: usize = 128;

impl CnnEncoder {
    pub fn new(cfg: CnnEncoderConfig, rng: &mut ChaCha8Rng) -> CnnEncoder {
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        let mut c_in = cfg.in_channels;
        for &c_out in &CHANNEL_WIDTHS {
            kernels.push(xavier_uniform(
                rng,
                vec![c_out, c_in, 3, 3],
                c_in * 9,
                c_out * 9,
            ));
            biases.push(zeros_param(vec![c_out]));
            c_in = c_out;
        }
        let mut fc = Vec::new();
        let mut d_in = cfg.flatten_dim();
        for &d_out in &cfg.embed_dims() {
            fc.push((
                xavier_uniform(rng, vec![d_in, d_out], d_in, d_out),
                zeros_param(vec![d_out]),
            ));
            d_in = d_out;
        }
        CnnEncoder {
            cfg,
            kernels,
            biases,
            fc,
            chunk: DEFAULT_CNN_CHUNK,
        }
    }

    pub fn params(&self) -> ParamSet {
        let mut p = ParamSet::default();
        for (i, (k, b)) in self.kernels.iter().zip(&self.biases).enumerate() {
            p.push(format!("cnn.conv{}.weight", i + 1), k.clone());
            p.push(format!("cnn.conv{}.bias", i + 1), b.clone());
        }
        for (i, (w, b)) in self.fc.iter().enumerate() {
            p.push(format!("cnn.fc{}.weight", i + 1), w.clone());
            p.push(format!("cnn.fc{}.bias", i + 1), b.clone());
        }
        p
    }

    /// The raw op composition for one image tensor; used per chunk by both
    /// the forward pass and the checkpointed backward recomputation.
    fn compose(&self, tape: &Tape, images: &Tensor) -> Result<Tensor> {
        let n = images.shape()[0];
        let stage = |s: &'static str| {
            move |e: CoreError| CoreError::InvalidInput(format!("cnn stage {s}: {e}"))
        };
        let x = conv2d(tape, images, &self.kernels[0], &self.biases[0]).map_err(stage("conv1"))?;
        let x = ops::relu(tape, &x);
        let x = conv2d(tape, &x, &self.kernels[1], &self.biases[1]).map_err(stage("conv2"))?;
        let x = maxpool2d(tape, &ops::relu(tape, &x));
        let x = conv2d(tape, &x, &self.kernels[2], &self.biases[2]).map_err(stage("conv3"))?;
        let x = maxpool2d(tape, &ops::relu(tape, &x));
        let mut x =
            ops::reshape(tape, &x, vec![n, self.cfg.flatten_dim()]).map_err(stage("flatten"))?;
        for (i, (w, b)) in self.fc.iter().enumerate() {
            x = ops::add_bias(tape, &ops::matmul(tape, &x, w).map_err(stage("fc"))?, b)
                .map_err(stage("fc"))?;
            if i + 1 < self.fc.len() {
                x = ops::relu(tape, &x);
            }
        }
        Ok(x)
    }

    /// Encode a batch of images. `images` is an `n x c x h x w` constant
    /// tensor; the result is `n x 256`. On a recording tape this registers
    /// a composite op whose backward recomputes chunk activations.
    pub fn forward(&self, tape: &Tape, images: &Tensor) -> Result<Tensor> {
        let s = images.shape();
        if s.len() != 4
            || s[1] != self.cfg.in_channels
            || s[2] != self.cfg.image_side
            || s[3] != self.cfg.image_side
        {
            return Err(CoreError::ShapeMismatch {
                op: "cnn_encode",
                lhs: s.to_vec(),
                rhs: vec![
                    s.first().copied().unwrap_or(0),
                    self.cfg.in_channels,
                    self.cfg.image_side,
                    self.cfg.image_side,
                ],
            });
        }
        let n = s[0];
        let pix = self.cfg.pixel_dim();
        let iv = images.values();
        let mut values = vec![0.0; n * EMBED_DIM];
        let mut lo = 0;
        while lo < n {
            let hi = (lo + self.chunk).min(n);
            let chunk_imgs = Tensor::constant(
                vec![
                    hi - lo,
                    self.cfg.in_channels,
                    self.cfg.image_side,
                    self.cfg.image_side,
                ],
                iv[lo * pix..hi * pix].to_vec(),
            );
            let inner = Tape::inference();
            if tape.kink_tracking() {
                inner.enable_kink_tracking();
            }
            let emb = self.compose(&inner, &chunk_imgs)?;
            tape.absorb_kinks(&inner);
            values[lo * EMBED_DIM..hi * EMBED_DIM].copy_from_slice(&emb.values());
            lo = hi;
        }
        drop(iv);
        let needs = tape.recording();
        let out = Tensor::intermediate(vec![n, EMBED_DIM], values, needs);
        if needs {
            tape.record(Box::new(CnnCheckpointOp {
                encoder: self.clone(),
                images: images.clone(),
                out: out.clone(),
            }));
        }
        Ok(out)
    }

    /// Encode flat pixel rows (values already scaled to [0,1]) in eval mode.
    pub fn encode_rows(&self, rows: &[f64], n: usize) -> Result<Vec<f64>> {
        let images = Tensor::constant(
            vec![
                n,
                self.cfg.in_channels,
                self.cfg.image_side,
                self.cfg.image_side,
            ],
            rows.to_vec(),
        );
        let tape = Tape::inference();
        Ok(self.forward(&tape, &images)?.to_vec())
    }

    pub fn set_chunk(&mut self, chunk: usize) {
        self.chunk = chunk.max(1);
    }
}

/// Composite backward: re-runs the encoder chunk by chunk on a fresh inner
/// tape, forming `sum(emb . upstream)` so the inner backward deposits the
/// exact vector-Jacobian products into the shared parameter tensors.
struct CnnCheckpointOp {
    encoder: CnnEncoder,
    images: Tensor,
    out: Tensor,
}

impl TapeOp for CnnCheckpointOp {
    fn backward(&self) {
        let g = self.out.grad_ref();
        let Some(g) = g.as_ref() else { return };
        let n = self.images.shape()[0];
        let pix = self.encoder.cfg.pixel_dim();
        let iv = self.images.values();
        let mut lo = 0;
        while lo < n {
            let hi = (lo + self.encoder.chunk).min(n);
            let chunk_imgs = Tensor::constant(
                vec![
                    hi - lo,
                    self.encoder.cfg.in_channels,
                    self.encoder.cfg.image_side,
                    self.encoder.cfg.image_side,
                ],
                iv[lo * pix..hi * pix].to_vec(),
            );
            let upstream = Tensor::constant(
                vec![hi - lo, EMBED_DIM],
                g[lo * EMBED_DIM..hi * EMBED_DIM].to_vec(),
            );
            let inner = Tape::new();
            let emb = self
                .encoder
                .compose(&inner, &chunk_imgs)
                .expect("checkpointed recompute of a validated forward");
            let dot = ops::sum_all(&inner, &ops::mul(&inner, &emb, &upstream).unwrap());
            inner.backward(&dot).expect("inner backward");
            lo = hi;
        }
    }
}
