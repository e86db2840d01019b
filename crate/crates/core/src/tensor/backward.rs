//! Backward replay for every op on the tape.

use super::forward::{as1, as2, as3, as4, gelu_grad_scalar, softmax_rows_value};
use super::{accumulate, kernels, Arr, Op, Tape, Var};
use ndarray::{Array1, Array2, Array3, Axis, IxDyn};

pub(crate) fn propagate(tape: &Tape, idx: usize, grad: &Arr, grads: &mut Vec<Option<Arr>>) {
    let node = &tape.nodes[idx];
    let wants = |v: Var| tape.nodes[v.0].requires_grad;
    let value = |v: Var| &tape.nodes[v.0].value;
    let mut send = |v: Var, g: Arr| accumulate(grads, v.0, g);

    match &node.op {
        Op::Leaf { .. } => {}
        Op::Add(a, b) => {
            if wants(*a) {
                send(*a, grad.clone());
            }
            if wants(*b) {
                send(*b, grad.clone());
            }
        }
        Op::Sub(a, b) => {
            if wants(*a) {
                send(*a, grad.clone());
            }
            if wants(*b) {
                send(*b, grad.mapv(|g| -g));
            }
        }
        Op::Mul(a, b) => {
            if wants(*a) {
                send(*a, grad * value(*b));
            }
            if wants(*b) {
                send(*b, grad * value(*a));
            }
        }
        Op::Scale(a, c) => {
            if wants(*a) {
                send(*a, grad * *c);
            }
        }
        Op::AddScalar(a, _) => {
            if wants(*a) {
                send(*a, grad.clone());
            }
        }
        Op::AddRow(a, b) => {
            let g2 = as2(grad);
            if wants(*a) {
                send(*a, grad.clone());
            }
            if wants(*b) {
                send(*b, g2.sum_axis(Axis(0)).into_dyn());
            }
        }
        Op::MulRow(a, b) => {
            let g2 = as2(grad);
            if wants(*a) {
                let bv = as1(value(*b)).to_owned();
                send(*a, (g2.to_owned() * &bv).into_dyn());
            }
            if wants(*b) {
                let av = as2(value(*a));
                send(*b, (&g2 * &av).sum_axis(Axis(0)).into_dyn());
            }
        }
        Op::AddCol(a, b) => {
            let g2 = as2(grad);
            if wants(*a) {
                send(*a, grad.clone());
            }
            if wants(*b) {
                send(*b, g2.sum_axis(Axis(1)).into_dyn());
            }
        }
        Op::Relu(a) => {
            if wants(*a) {
                let mask = value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                send(*a, grad * &mask);
            }
        }
        Op::Gelu(a) => {
            if wants(*a) {
                let d = value(*a).mapv(gelu_grad_scalar);
                send(*a, grad * &d);
            }
        }
        Op::Sigmoid(a) => {
            if wants(*a) {
                let y = &node.value;
                send(*a, grad * &(y * &y.mapv(|v| 1.0 - v)));
            }
        }
        Op::Abs(a) => {
            if wants(*a) {
                // Subgradient 0 at exact ties.
                let sign = value(*a).mapv(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                send(*a, grad * &sign);
            }
        }
        Op::Matmul(a, b) => {
            let g2 = as2(grad);
            if wants(*a) {
                let bv = as2(value(*b));
                send(*a, g2.dot(&bv.t()).into_dyn());
            }
            if wants(*b) {
                let av = as2(value(*a));
                send(*b, av.t().dot(&g2).into_dyn());
            }
        }
        Op::Transpose(a) => {
            if wants(*a) {
                send(*a, as2(grad).t().to_owned().into_dyn());
            }
        }
        Op::Reshape(a) => {
            if wants(*a) {
                let shape = value(*a).shape().to_vec();
                send(
                    *a,
                    grad.clone()
                        .into_shape_with_order(IxDyn(&shape))
                        .expect("reshape backward"),
                );
            }
        }
        Op::SoftmaxRows(a) => {
            if wants(*a) {
                let y = as2(&node.value);
                let g2 = as2(grad);
                let mut dx = (&g2 * &y).to_owned();
                for (mut drow, yrow) in dx.rows_mut().into_iter().zip(y.rows()) {
                    let dot: f64 = drow.sum();
                    drow.zip_mut_with(&yrow, |d, yv| *d -= dot * yv);
                }
                send(*a, dx.into_dyn());
            }
        }
        Op::LogSumExpRows(a) => {
            if wants(*a) {
                let soft = softmax_rows_value(as2(value(*a)));
                let g2 = as2(grad);
                let mut dx = soft;
                for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
                    let g = g2[[i, 0]];
                    row.mapv_inplace(|v| v * g);
                }
                send(*a, dx.into_dyn());
            }
        }
        Op::StandardizeRows(a, eps) => {
            if wants(*a) {
                let x = as2(value(*a));
                let y = as2(&node.value);
                let g2 = as2(grad);
                let n = x.shape()[1] as f64;
                let mut dx = Array2::<f64>::zeros((x.shape()[0], x.shape()[1]));
                for i in 0..x.shape()[0] {
                    let row = x.row(i);
                    let mean = row.sum() / n;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let grow = g2.row(i);
                    let yrow = y.row(i);
                    let g_mean = grow.sum() / n;
                    let gy_mean = grow
                        .iter()
                        .zip(yrow.iter())
                        .map(|(g, yv)| g * yv)
                        .sum::<f64>()
                        / n;
                    for j in 0..x.shape()[1] {
                        dx[[i, j]] = inv * (grow[j] - g_mean - yrow[j] * gy_mean);
                    }
                }
                send(*a, dx.into_dyn());
            }
        }
        Op::L2NormalizeRows(a) => {
            if wants(*a) {
                let x = as2(value(*a));
                let y = as2(&node.value);
                let g2 = as2(grad);
                let mut dx = Array2::<f64>::zeros((x.shape()[0], x.shape()[1]));
                for i in 0..x.shape()[0] {
                    let norm = x
                        .row(i)
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>()
                        .sqrt()
                        .max(1e-12);
                    let dot: f64 = g2
                        .row(i)
                        .iter()
                        .zip(y.row(i).iter())
                        .map(|(g, yv)| g * yv)
                        .sum();
                    for j in 0..x.shape()[1] {
                        dx[[i, j]] = (g2[[i, j]] - y[[i, j]] * dot) / norm;
                    }
                }
                send(*a, dx.into_dyn());
            }
        }
        Op::MeanAll(a) => {
            if wants(*a) {
                let v = value(*a);
                let g = grad.iter().next().copied().unwrap() / v.len() as f64;
                send(*a, Arr::from_elem(v.raw_dim(), g));
            }
        }
        Op::SumAll(a) => {
            if wants(*a) {
                let v = value(*a);
                let g = grad.iter().next().copied().unwrap();
                send(*a, Arr::from_elem(v.raw_dim(), g));
            }
        }
        Op::RowSums(a) => {
            if wants(*a) {
                let x = as2(value(*a));
                let g2 = as2(grad);
                let mut dx = Array2::<f64>::zeros((x.shape()[0], x.shape()[1]));
                for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
                    row.fill(g2[[i, 0]]);
                }
                send(*a, dx.into_dyn());
            }
        }
        Op::MeanRows(a) => {
            if wants(*a) {
                let x = as2(value(*a));
                let g2 = as2(grad);
                let rows = x.shape()[0];
                let scale = 1.0 / rows as f64;
                let mut dx = Array2::<f64>::zeros((rows, x.shape()[1]));
                for mut row in dx.rows_mut() {
                    row.assign(&(&g2.row(0) * scale));
                }
                send(*a, dx.into_dyn());
            }
        }
        Op::ConcatAxis0(parts) => {
            let mut offset = 0;
            for part in parts {
                let rows = value(*part).shape()[0];
                if wants(*part) {
                    let slice = grad
                        .slice_axis(Axis(0), ndarray::Slice::from(offset..offset + rows))
                        .to_owned();
                    send(*part, slice);
                }
                offset += rows;
            }
        }
        Op::ConcatCols(parts) => {
            let g2 = as2(grad);
            let mut offset = 0;
            for part in parts {
                let cols = value(*part).shape()[1];
                if wants(*part) {
                    let slice = g2
                        .slice(ndarray::s![.., offset..offset + cols])
                        .to_owned()
                        .into_dyn();
                    send(*part, slice);
                }
                offset += cols;
            }
        }
        Op::NarrowCols { x, start, len } => {
            if wants(*x) {
                let full = as2(value(*x));
                let g2 = as2(grad);
                let mut dx = Array2::<f64>::zeros((full.shape()[0], full.shape()[1]));
                dx.slice_mut(ndarray::s![.., *start..*start + *len]).assign(&g2);
                send(*x, dx.into_dyn());
            }
        }
        Op::Conv2d { x, w, b, stride, pad } => {
            let xv = as3(value(*x));
            let wv = as4(value(*w));
            let (c_out, c_in, kh, kw) = (
                wv.shape()[0],
                wv.shape()[1],
                wv.shape()[2],
                wv.shape()[3],
            );
            let g3 = as3(grad);
            let hw = g3.shape()[1] * g3.shape()[2];
            let g2 = g3.to_owned().into_shape_with_order((c_out, hw)).unwrap();
            if wants(*b) {
                send(*b, g2.sum_axis(Axis(1)).into_dyn());
            }
            if wants(*w) {
                let cols = kernels::im2col(xv, kh, kw, *stride, *pad);
                let dw2 = g2.dot(&cols.t());
                send(
                    *w,
                    dw2.into_shape_with_order(IxDyn(&[c_out, c_in, kh, kw]))
                        .unwrap(),
                );
            }
            if wants(*x) {
                let w2 = wv
                    .to_owned()
                    .into_shape_with_order((c_out, c_in * kh * kw))
                    .unwrap();
                let dcols = w2.t().dot(&g2);
                let dx = kernels::col2im(
                    dcols.view(),
                    c_in,
                    xv.shape()[1],
                    xv.shape()[2],
                    kh,
                    kw,
                    *stride,
                    *pad,
                );
                send(*x, dx.into_dyn());
            }
        }
        Op::DepthwiseConv2d { x, w, b, pad } => {
            let xv = as3(value(*x));
            let wv = as3(value(*w));
            let g3 = as3(grad);
            let out = kernels::depthwise_backward(xv, wv, g3, *pad);
            if wants(*x) {
                send(*x, out.dx.into_dyn());
            }
            if wants(*w) {
                send(*w, out.dw.into_dyn());
            }
            if wants(*b) {
                send(*b, out.db.into_dyn());
            }
        }
        Op::MaxPool2(a) => {
            if wants(*a) {
                let x = as3(value(*a));
                let g3 = as3(grad);
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let mut dx = Array3::<f64>::zeros((c, h, w));
                for ci in 0..c {
                    for oy in 0..h / 2 {
                        for ox in 0..w / 2 {
                            // First maximum in row-major order wins, matching forward.
                            let (mut by, mut bx, mut best) = (0, 0, f64::NEG_INFINITY);
                            for iy in 0..2 {
                                for ix in 0..2 {
                                    let v = x[[ci, 2 * oy + iy, 2 * ox + ix]];
                                    if v > best {
                                        best = v;
                                        by = iy;
                                        bx = ix;
                                    }
                                }
                            }
                            dx[[ci, 2 * oy + by, 2 * ox + bx]] += g3[[ci, oy, ox]];
                        }
                    }
                }
                send(*a, dx.into_dyn());
            }
        }
        Op::UpsampleNearest2(a) => {
            if wants(*a) {
                let x = as3(value(*a));
                let g3 = as3(grad);
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let mut dx = Array3::<f64>::zeros((c, h, w));
                for ci in 0..c {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            dx[[ci, y / 2, xx / 2]] += g3[[ci, y, xx]];
                        }
                    }
                }
                send(*a, dx.into_dyn());
            }
        }
        Op::AvgPoolBlocks { x, bh, bw } => {
            if wants(*x) {
                let xv = as3(value(*x));
                let g3 = as3(grad);
                let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let norm = (*bh * *bw) as f64;
                let mut dx = Array3::<f64>::zeros((c, h, w));
                for ci in 0..c {
                    for y in 0..h {
                        for xx in 0..w {
                            dx[[ci, y, xx]] = g3[[ci, y / bh, xx / bw]] / norm;
                        }
                    }
                }
                send(*x, dx.into_dyn());
            }
        }
        Op::SpatialMean(a) => {
            if wants(*a) {
                let x = as3(value(*a));
                let g1 = as1(grad);
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let norm = (h * w) as f64;
                let mut dx = Array3::<f64>::zeros((c, h, w));
                for (ci, mut plane) in dx.axis_iter_mut(Axis(0)).enumerate() {
                    plane.fill(g1[ci] / norm);
                }
                send(*a, dx.into_dyn());
            }
        }
        Op::SpatialMax(a) => {
            if wants(*a) {
                let x = as3(value(*a));
                let g1 = as1(grad);
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let mut dx = Array3::<f64>::zeros((c, h, w));
                for ci in 0..c {
                    let (mut by, mut bx, mut best) = (0, 0, f64::NEG_INFINITY);
                    for y in 0..h {
                        for xx in 0..w {
                            let v = x[[ci, y, xx]];
                            if v > best {
                                best = v;
                                by = y;
                                bx = xx;
                            }
                        }
                    }
                    dx[[ci, by, bx]] = g1[ci];
                }
                send(*a, dx.into_dyn());
            }
        }
        Op::ChannelMean(a) => {
            if wants(*a) {
                let x = as3(value(*a));
                let g3 = as3(grad);
                let c = x.shape()[0];
                let scale = 1.0 / c as f64;
                let mut dx = x.to_owned();
                for mut plane in dx.axis_iter_mut(Axis(0)) {
                    plane.assign(&g3.index_axis(Axis(0), 0));
                    plane.mapv_inplace(|v| v * scale);
                }
                send(*a, dx.into_dyn());
            }
        }
        Op::ChannelMax(a) => {
            if wants(*a) {
                let x = as3(value(*a));
                let g3 = as3(grad);
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let mut dx = Array3::<f64>::zeros((c, h, w));
                for y in 0..h {
                    for xx in 0..w {
                        let (mut bc, mut best) = (0, f64::NEG_INFINITY);
                        for ci in 0..c {
                            let v = x[[ci, y, xx]];
                            if v > best {
                                best = v;
                                bc = ci;
                            }
                        }
                        dx[[bc, y, xx]] = g3[[0, y, xx]];
                    }
                }
                send(*a, dx.into_dyn());
            }
        }
        Op::MulChannelGate(x, gate) => {
            let xv = as3(value(*x));
            let gv = as1(value(*gate)).to_owned();
            let g3 = as3(grad);
            if wants(*x) {
                let mut dx = g3.to_owned();
                for (ci, mut plane) in dx.axis_iter_mut(Axis(0)).enumerate() {
                    plane.mapv_inplace(|v| v * gv[ci]);
                }
                send(*x, dx.into_dyn());
            }
            if wants(*gate) {
                let c = xv.shape()[0];
                let mut dg = Array1::<f64>::zeros(c);
                for ci in 0..c {
                    dg[ci] = (&g3.index_axis(Axis(0), ci) * &xv.index_axis(Axis(0), ci)).sum();
                }
                send(*gate, dg.into_dyn());
            }
        }
        Op::MulSpatialGate(x, gate) => {
            let xv = as3(value(*x));
            let gv = as3(value(*gate));
            let g3 = as3(grad);
            if wants(*x) {
                let plane = gv.index_axis(Axis(0), 0);
                let mut dx = g3.to_owned();
                for mut ch in dx.axis_iter_mut(Axis(0)) {
                    ch.zip_mut_with(&plane, |v, g| *v *= g);
                }
                send(*x, dx.into_dyn());
            }
            if wants(*gate) {
                let (h, w) = (xv.shape()[1], xv.shape()[2]);
                let mut dg = Array3::<f64>::zeros((1, h, w));
                for ci in 0..xv.shape()[0] {
                    let prod = &g3.index_axis(Axis(0), ci) * &xv.index_axis(Axis(0), ci);
                    dg.index_axis_mut(Axis(0), 0).zip_mut_with(&prod, |d, p| *d += p);
                }
                send(*gate, dg.into_dyn());
            }
        }
        Op::Patchify { x, patch } => {
            if wants(*x) {
                let xv = as3(value(*x));
                let dx = kernels::patchify_backward(
                    as2(grad),
                    xv.shape()[0],
                    xv.shape()[1],
                    xv.shape()[2],
                    *patch,
                );
                send(*x, dx.into_dyn());
            }
        }
        Op::DeformGather { x, offsets, k, pad } => {
            let xv = as3(value(*x));
            let ov = as3(value(*offsets));
            let out = kernels::deform_gather_backward(xv, ov, as2(grad), *k, *pad);
            if wants(*x) {
                send(*x, out.dx.into_dyn());
            }
            if wants(*offsets) {
                send(*offsets, out.doffsets.into_dyn());
            }
        }
    }
}
