//! Forward evaluation: each method validates shapes, computes the value and
//! records the op on the tape.

use super::kernels;
use super::{Arr, Op, Tape, Var};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayView3, ArrayView4, Axis, IxDyn};

pub(crate) fn as1(a: &Arr) -> ArrayView1<'_, f64> {
    a.view().into_dimensionality().expect("rank-1 array")
}

pub(crate) fn as2(a: &Arr) -> ArrayView2<'_, f64> {
    a.view().into_dimensionality().expect("rank-2 array")
}

pub(crate) fn as3(a: &Arr) -> ArrayView3<'_, f64> {
    a.view().into_dimensionality().expect("rank-3 array")
}

pub(crate) fn as4(a: &Arr) -> ArrayView4<'_, f64> {
    a.view().into_dimensionality().expect("rank-4 array")
}

pub(crate) fn scalar_arr(x: f64) -> Arr {
    Arr::from_elem(IxDyn(&[1]), x)
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn softmax_rows_value(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

impl Tape {
    fn binary_same_shape(&mut self, a: Var, b: Var, name: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{name}: shape mismatch");
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "add");
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(value, Op::Add(a, b), false)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "sub");
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(value, Op::Sub(a, b), false)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, "mul");
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(value, Op::Mul(a, b), false)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = &self.nodes[a.0].value * c;
        self.push(value, Op::Scale(a, c), false)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = &self.nodes[a.0].value + c;
        self.push(value, Op::AddScalar(a, c), false)
    }

    /// `(rows, cols) + (cols,)`, the usual bias add over token rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (as2(self.value(a)).to_owned(), as1(self.value(b)).to_owned());
        assert_eq!(am.shape()[1], bm.len(), "add_row: width mismatch");
        let value = (am + &bm).into_dyn();
        self.push(value, Op::AddRow(a, b), false)
    }

    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (as2(self.value(a)).to_owned(), as1(self.value(b)).to_owned());
        assert_eq!(am.shape()[1], bm.len(), "mul_row: width mismatch");
        let value = (am * &bm).into_dyn();
        self.push(value, Op::MulRow(a, b), false)
    }

    /// `(rows, cols) + (rows,)`, bias per output row (channel-major layouts).
    pub fn add_col(&mut self, a: Var, b: Var) -> Var {
        let am = as2(self.value(a)).to_owned();
        let bv = as1(self.value(b)).to_owned();
        assert_eq!(am.shape()[0], bv.len(), "add_col: height mismatch");
        let value = (am + &bv.insert_axis(Axis(1))).into_dyn();
        self.push(value, Op::AddCol(a, b), false)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a), false)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(gelu_scalar);
        self.push(value, Op::Gelu(a), false)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(value, Op::Sigmoid(a), false)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::abs);
        self.push(value, Op::Abs(a), false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (as2(self.value(a)), as2(self.value(b)));
        assert_eq!(
            am.shape()[1],
            bm.shape()[0],
            "matmul: inner dimension mismatch"
        );
        let value = am.dot(&bm).into_dyn();
        self.push(value, Op::Matmul(a, b), false)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = as2(self.value(a)).t().to_owned().into_dyn();
        self.push(value, Op::Transpose(a), false)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let len: usize = shape.iter().product();
        assert_eq!(self.nodes[a.0].value.len(), len, "reshape: element count");
        let value = self.nodes[a.0]
            .value
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("contiguous reshape");
        self.push(value, Op::Reshape(a), false)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows_value(as2(self.value(a))).into_dyn();
        self.push(value, Op::SoftmaxRows(a), false)
    }

    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let x = as2(self.value(a));
        let mut out = Array2::<f64>::zeros((x.shape()[0], 1));
        for (i, row) in x.rows().into_iter().enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            out[[i, 0]] = max + sum.ln();
        }
        self.push(out.into_dyn(), Op::LogSumExpRows(a), false)
    }

    pub fn standardize_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = as2(self.value(a));
        let n = x.shape()[1] as f64;
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
        }
        self.push(out.into_dyn(), Op::StandardizeRows(a, eps), false)
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let x = as2(self.value(a));
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            row.mapv_inplace(|v| v / norm);
        }
        self.push(out.into_dyn(), Op::L2NormalizeRows(a), false)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let value = scalar_arr(v.sum() / v.len() as f64);
        self.push(value, Op::MeanAll(a), false)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = scalar_arr(self.nodes[a.0].value.sum());
        self.push(value, Op::SumAll(a), false)
    }

    pub fn row_sums(&mut self, a: Var) -> Var {
        let x = as2(self.value(a));
        let value = x.sum_axis(Axis(1)).insert_axis(Axis(1)).into_dyn();
        self.push(value, Op::RowSums(a), false)
    }

    /// Mean over rows: `(rows, cols)` to `(1, cols)`; global average pooling
    /// when rows are spatial tokens.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = as2(self.value(a));
        let rows = x.shape()[0] as f64;
        let value = (x.sum_axis(Axis(0)) / rows).insert_axis(Axis(0)).into_dyn();
        self.push(value, Op::MeanRows(a), false)
    }

    pub fn concat_axis0(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_axis0: empty input");
        let views: Vec<_> = parts.iter().map(|v| self.nodes[v.0].value.view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_axis0 shapes");
        self.push(value, Op::ConcatAxis0(parts.to_vec()), false)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: empty input");
        let views: Vec<_> = parts.iter().map(|v| as2(self.value(*v))).collect();
        let rows = views[0].shape()[0];
        assert!(
            views.iter().all(|v| v.shape()[0] == rows),
            "concat_cols: row mismatch"
        );
        let value = ndarray::concatenate(
            Axis(1),
            &views.iter().map(|v| v.reborrow()).collect::<Vec<_>>(),
        )
        .expect("concat_cols shapes")
        .into_dyn();
        self.push(value, Op::ConcatCols(parts.to_vec()), false)
    }

    pub fn narrow_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = as2(self.value(a));
        assert!(start + len <= x.shape()[1], "narrow_cols: out of range");
        let value = x
            .slice(ndarray::s![.., start..start + len])
            .to_owned()
            .into_dyn();
        self.push(value, Op::NarrowCols { x: a, start, len }, false)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xv = as3(self.value(x));
        let wv = as4(self.value(w));
        let bv = as1(self.value(b)).to_owned();
        let (c_out, c_in, kh, kw) = (
            wv.shape()[0],
            wv.shape()[1],
            wv.shape()[2],
            wv.shape()[3],
        );
        assert_eq!(xv.shape()[0], c_in, "conv2d: channel mismatch");
        assert_eq!(bv.len(), c_out, "conv2d: bias length");
        let out_h = kernels::conv_out_dim(xv.shape()[1], kh, stride, pad);
        let out_w = kernels::conv_out_dim(xv.shape()[2], kw, stride, pad);
        let cols = kernels::im2col(xv, kh, kw, stride, pad);
        let w2 = wv
            .to_owned()
            .into_shape_with_order((c_out, c_in * kh * kw))
            .unwrap();
        let mut out = w2.dot(&cols);
        out += &bv.insert_axis(Axis(1));
        let value = out
            .into_shape_with_order(IxDyn(&[c_out, out_h, out_w]))
            .unwrap();
        self.push(value, Op::Conv2d { x, w, b, stride, pad }, false)
    }

    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Var {
        let xv = as3(self.value(x));
        let wv = as3(self.value(w));
        let bv = as1(self.value(b)).to_owned();
        assert_eq!(xv.shape()[0], wv.shape()[0], "depthwise: channel mismatch");
        assert_eq!(bv.len(), xv.shape()[0], "depthwise: bias length");
        let value = kernels::depthwise_forward(xv, wv, &bv, pad).into_dyn();
        self.push(value, Op::DepthwiseConv2d { x, w, b, pad }, false)
    }

    pub fn max_pool2(&mut self, a: Var) -> Var {
        let x = as3(self.value(a));
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool2: dims must be even");
        let mut out = ndarray::Array3::<f64>::zeros((c, h / 2, w / 2));
        for ci in 0..c {
            for oy in 0..h / 2 {
                for ox in 0..w / 2 {
                    let mut best = f64::NEG_INFINITY;
                    for iy in 0..2 {
                        for ix in 0..2 {
                            best = best.max(x[[ci, 2 * oy + iy, 2 * ox + ix]]);
                        }
                    }
                    out[[ci, oy, ox]] = best;
                }
            }
        }
        self.push(out.into_dyn(), Op::MaxPool2(a), false)
    }

    pub fn upsample_nearest2(&mut self, a: Var) -> Var {
        let x = as3(self.value(a));
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut out = ndarray::Array3::<f64>::zeros((c, 2 * h, 2 * w));
        for ci in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[[ci, y, xx]] = x[[ci, y / 2, xx / 2]];
                }
            }
        }
        self.push(out.into_dyn(), Op::UpsampleNearest2(a), false)
    }

    pub fn avg_pool_blocks(&mut self, a: Var, bh: usize, bw: usize) -> Var {
        let x = as3(self.value(a));
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        assert!(
            h % bh == 0 && w % bw == 0,
            "avg_pool_blocks: dims not divisible by block"
        );
        let (oh, ow) = (h / bh, w / bw);
        let norm = (bh * bw) as f64;
        let mut out = ndarray::Array3::<f64>::zeros((c, oh, ow));
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for iy in 0..bh {
                        for ix in 0..bw {
                            acc += x[[ci, oy * bh + iy, ox * bw + ix]];
                        }
                    }
                    out[[ci, oy, ox]] = acc / norm;
                }
            }
        }
        self.push(out.into_dyn(), Op::AvgPoolBlocks { x: a, bh, bw }, false)
    }

    pub fn spatial_mean(&mut self, a: Var) -> Var {
        let x = as3(self.value(a));
        let hw = (x.shape()[1] * x.shape()[2]) as f64;
        let value = (x.sum_axis(Axis(2)).sum_axis(Axis(1)) / hw).into_dyn();
        self.push(value, Op::SpatialMean(a), false)
    }

    pub fn spatial_max(&mut self, a: Var) -> Var {
        let x = as3(self.value(a));
        let c = x.shape()[0];
        let mut out = Array1::<f64>::zeros(c);
        for ci in 0..c {
            out[ci] = x
                .index_axis(Axis(0), ci)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
        }
        self.push(out.into_dyn(), Op::SpatialMax(a), false)
    }

    pub fn channel_mean(&mut self, a: Var) -> Var {
        let x = as3(self.value(a));
        let c = x.shape()[0] as f64;
        let value = (x.sum_axis(Axis(0)) / c).insert_axis(Axis(0)).into_dyn();
        self.push(value, Op::ChannelMean(a), false)
    }

    pub fn channel_max(&mut self, a: Var) -> Var {
        let x = as3(self.value(a));
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut out = ndarray::Array3::<f64>::zeros((1, h, w));
        for y in 0..h {
            for xx in 0..w {
                let mut best = f64::NEG_INFINITY;
                for ci in 0..c {
                    best = best.max(x[[ci, y, xx]]);
                }
                out[[0, y, xx]] = best;
            }
        }
        self.push(out.into_dyn(), Op::ChannelMax(a), false)
    }

    pub fn mul_channel_gate(&mut self, x: Var, gate: Var) -> Var {
        let xv = as3(self.value(x));
        let gv = as1(self.value(gate)).to_owned();
        assert_eq!(xv.shape()[0], gv.len(), "mul_channel_gate: channels");
        let mut out = xv.to_owned();
        for (ci, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
            plane.mapv_inplace(|v| v * gv[ci]);
        }
        self.push(out.into_dyn(), Op::MulChannelGate(x, gate), false)
    }

    pub fn mul_spatial_gate(&mut self, x: Var, gate: Var) -> Var {
        let xv = as3(self.value(x));
        let gv = as3(self.value(gate));
        assert_eq!(gv.shape()[0], 1, "mul_spatial_gate: gate must be (1,h,w)");
        assert_eq!(&xv.shape()[1..], &gv.shape()[1..], "mul_spatial_gate: dims");
        let plane = gv.index_axis(Axis(0), 0);
        let mut out = xv.to_owned();
        for mut ch in out.axis_iter_mut(Axis(0)) {
            ch.zip_mut_with(&plane, |v, g| *v *= g);
        }
        self.push(out.into_dyn(), Op::MulSpatialGate(x, gate), false)
    }

    pub fn patchify(&mut self, a: Var, patch: usize) -> Var {
        let x = as3(self.value(a));
        assert!(
            x.shape()[1] % patch == 0 && x.shape()[2] % patch == 0,
            "patchify: dims not divisible by patch"
        );
        let value = kernels::patchify_forward(x, patch).into_dyn();
        self.push(value, Op::Patchify { x: a, patch }, false)
    }

    pub fn deform_gather(&mut self, x: Var, offsets: Var, k: usize, pad: usize) -> Var {
        let xv = as3(self.value(x));
        let ov = as3(self.value(offsets));
        assert_eq!(ov.shape()[0], 2 * k * k, "deform_gather: offset channels");
        assert_eq!(&ov.shape()[1..], &xv.shape()[1..], "deform_gather: dims");
        let value = kernels::deform_gather_forward(xv, ov, k, pad).into_dyn();
        self.push(value, Op::DeformGather { x, offsets, k, pad }, false)
    }

    /// `(tokens, d)` to `(d, h, w)` feature map.
    pub fn tokens_to_map(&mut self, a: Var, h: usize, w: usize) -> Var {
        let d = self.shape(a)[1];
        assert_eq!(self.shape(a)[0], h * w, "tokens_to_map: token count");
        let t = self.transpose(a);
        self.reshape(t, &[d, h, w])
    }

    /// `(d, h, w)` feature map to `(h*w, d)` tokens.
    pub fn map_to_tokens(&mut self, a: Var) -> Var {
        let (d, h, w) = {
            let s = self.shape(a);
            (s[0], s[1], s[2])
        };
        let flat = self.reshape(a, &[d, h * w]);
        self.transpose(flat)
    }
}
