//! Neural building blocks over the tape: linear maps, layer norm, plain /
//! depthwise / deformable convolution, multi-head self-attention and the
//! channel+spatial attention gate used for residual connections.

use crate::params::{ParamId, ParamSet};
use crate::tensor::{Arr, Tape, Var};
use ndarray::{Array2, IxDyn};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub mod init {
    use super::*;

    pub fn zeros(shape: &[usize]) -> Arr {
        Arr::zeros(IxDyn(shape))
    }

    pub fn ones(shape: &[usize]) -> Arr {
        Arr::ones(IxDyn(shape))
    }

    pub fn normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Arr {
        let dist = Normal::new(0.0, std).expect("valid std");
        Arr::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
    }

    /// He initialization for convolution weights `(c_out, c_in, kh, kw)`.
    pub fn he_conv(rng: &mut ChaCha8Rng, shape: &[usize]) -> Arr {
        let fan_in: usize = shape[1..].iter().product();
        normal(rng, shape, (2.0 / fan_in as f64).sqrt())
    }

    /// Scaled-normal initialization for `(in, out)` linear weights.
    pub fn linear(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> Arr {
        normal(rng, &[in_dim, out_dim], (1.0 / in_dim as f64).sqrt())
    }
}

/// Attention matrices recorded during a forward pass, one per head.
#[derive(Debug, Default)]
pub struct AttentionProbe {
    pub matrices: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let w = ps.alloc(format!("{name}.w"), init::linear(rng, in_dim, out_dim));
        let b = ps.alloc(format!("{name}.b"), init::zeros(&[out_dim]));
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    /// `(rows, in) -> (rows, out)`
    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, x: Var) -> Var {
        let w = t.param(ps, self.w);
        let b = t.param(ps, self.b);
        let y = t.matmul(x, w);
        t.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: ps.alloc(format!("{name}.gamma"), init::ones(&[dim])),
            beta: ps.alloc(format!("{name}.beta"), init::zeros(&[dim])),
            eps: 1e-6,
        }
    }

    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, x: Var) -> Var {
        let g = t.param(ps, self.gamma);
        let b = t.param(ps, self.beta);
        let z = t.standardize_rows(x, self.eps);
        let z = t.mul_row(z, g);
        t.add_row(z, b)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = ps.alloc(format!("{name}.w"), init::he_conv(rng, &[c_out, c_in, k, k]));
        let b = ps.alloc(format!("{name}.b"), init::zeros(&[c_out]));
        Conv2d { w, b, stride, pad }
    }

    /// Zero-initialized variant; the offset head of deformable convolution
    /// must start at the regular sampling grid.
    pub fn new_zeros(
        ps: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = ps.alloc(format!("{name}.w"), init::zeros(&[c_out, c_in, k, k]));
        let b = ps.alloc(format!("{name}.b"), init::zeros(&[c_out]));
        Conv2d { w, b, stride, pad }
    }

    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, x: Var) -> Var {
        let w = t.param(ps, self.w);
        let b = t.param(ps, self.b);
        t.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct DepthwiseConv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub pad: usize,
}

impl DepthwiseConv2d {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        k: usize,
        pad: usize,
    ) -> Self {
        let fan_in = k * k;
        let w = ps.alloc(
            format!("{name}.w"),
            init::normal(rng, &[channels, k, k], (2.0 / fan_in as f64).sqrt()),
        );
        let b = ps.alloc(format!("{name}.b"), init::zeros(&[channels]));
        DepthwiseConv2d { w, b, pad }
    }

    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, x: Var) -> Var {
        let w = t.param(ps, self.w);
        let b = t.param(ps, self.b);
        t.depthwise_conv2d(x, w, b, self.pad)
    }
}

/// Deformable convolution (v1): a zero-initialized companion convolution
/// predicts per-tap offsets, features are gathered by bilinear interpolation
/// and mixed by a dense kernel.
#[derive(Debug, Clone)]
pub struct DeformConv2d {
    pub offset_head: Conv2d,
    pub w: ParamId,
    pub b: ParamId,
    pub k: usize,
    pub pad: usize,
    c_out: usize,
}

impl DeformConv2d {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
    ) -> Self {
        let pad = (k - 1) / 2;
        let offset_head =
            Conv2d::new_zeros(ps, &format!("{name}.offset"), c_in, 2 * k * k, k, 1, pad);
        let w = ps.alloc(
            format!("{name}.w"),
            init::he_conv(rng, &[c_out, c_in * k * k, 1, 1])
                .into_shape_with_order(IxDyn(&[c_out, c_in * k * k]))
                .unwrap(),
        );
        let b = ps.alloc(format!("{name}.b"), init::zeros(&[c_out]));
        DeformConv2d {
            offset_head,
            w,
            b,
            k,
            pad,
            c_out,
        }
    }

    /// `(c_in, h, w) -> (c_out, h, w)`
    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, x: Var) -> Var {
        let (h, w) = {
            let s = t.shape(x);
            (s[1], s[2])
        };
        let offsets = self.offset_head.forward(t, ps, x);
        let cols = t.deform_gather(x, offsets, self.k, self.pad);
        let weight = t.param(ps, self.w);
        let bias = t.param(ps, self.b);
        let out = t.matmul(weight, cols);
        let out = t.add_col(out, bias);
        t.reshape(out, &[self.c_out, h, w])
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadSelfAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadSelfAttention {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Self {
        assert!(dim % heads == 0, "attention width {dim} not divisible by {heads} heads");
        MultiHeadSelfAttention {
            wq: Linear::new(ps, rng, &format!("{name}.q"), dim, dim),
            wk: Linear::new(ps, rng, &format!("{name}.k"), dim, dim),
            wv: Linear::new(ps, rng, &format!("{name}.v"), dim, dim),
            wo: Linear::new(ps, rng, &format!("{name}.o"), dim, dim),
            heads,
            dim,
        }
    }

    /// `(tokens, dim) -> (tokens, dim)`
    pub fn forward(
        &self,
        t: &mut Tape,
        ps: &ParamSet,
        x: Var,
        probe: Option<&mut AttentionProbe>,
    ) -> Var {
        let q = self.wq.forward(t, ps, x);
        let k = self.wk.forward(t, ps, x);
        let v = self.wv.forward(t, ps, x);
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut head_outputs = Vec::with_capacity(self.heads);
        let mut recorded = Vec::new();
        for h in 0..self.heads {
            let qh = t.narrow_cols(q, h * dh, dh);
            let kh = t.narrow_cols(k, h * dh, dh);
            let vh = t.narrow_cols(v, h * dh, dh);
            let kt = t.transpose(kh);
            let logits = t.matmul(qh, kt);
            let logits = t.scale(logits, scale);
            let attn = t.softmax_rows(logits);
            recorded.push(attn);
            head_outputs.push(t.matmul(attn, vh));
        }
        if let Some(probe) = probe {
            for attn in &recorded {
                probe.matrices.push(
                    t.value(*attn)
                        .view()
                        .into_dimensionality()
                        .unwrap()
                        .to_owned(),
                );
            }
        }
        let merged = t.concat_cols(&head_outputs);
        self.wo.forward(t, ps, merged)
    }
}

/// Channel attention followed by spatial attention, used as the residual
/// gate in the multi-stream block.
#[derive(Debug, Clone)]
pub struct Cbam {
    pub mlp1: Linear,
    pub mlp2: Linear,
    pub spatial: Conv2d,
}

impl Cbam {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> Self {
        let hidden = (channels / reduction).max(1);
        Cbam {
            mlp1: Linear::new(ps, rng, &format!("{name}.mlp1"), channels, hidden),
            mlp2: Linear::new(ps, rng, &format!("{name}.mlp2"), hidden, channels),
            spatial: Conv2d::new(ps, rng, &format!("{name}.spatial"), 2, 1, 7, 1, 3),
        }
    }

    fn channel_gate(&self, t: &mut Tape, ps: &ParamSet, pooled: Var) -> Var {
        let h = self.mlp1.forward(t, ps, pooled);
        let h = t.relu(h);
        self.mlp2.forward(t, ps, h)
    }

    /// `(c, h, w) -> (c, h, w)`
    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, x: Var) -> Var {
        let c = t.shape(x)[0];
        let avg = t.spatial_mean(x);
        let avg = t.reshape(avg, &[1, c]);
        let mx = t.spatial_max(x);
        let mx = t.reshape(mx, &[1, c]);
        let a = self.channel_gate(t, ps, avg);
        let m = self.channel_gate(t, ps, mx);
        let gate = t.add(a, m);
        let gate = t.sigmoid(gate);
        let gate = t.reshape(gate, &[c]);
        let gated = t.mul_channel_gate(x, gate);

        let mean_map = t.channel_mean(gated);
        let max_map = t.channel_max(gated);
        let stacked = t.concat_axis0(&[mean_map, max_map]);
        let sgate = self.spatial.forward(t, ps, stacked);
        let sgate = t.sigmoid(sgate);
        t.mul_spatial_gate(gated, sgate)
    }
}
