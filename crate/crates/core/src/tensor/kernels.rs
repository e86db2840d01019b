//! Dense kernels shared by forward evaluation and backward replay.

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3};

pub fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Unfolds `(c, h, w)` into `(c*kh*kw, out_h*out_w)` columns, zero padding
/// outside the border. Row order is channel-major, then kernel tap.
pub fn im2col(
    x: ArrayView3<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array2<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let out_h = conv_out_dim(h, kh, stride, pad);
    let out_w = conv_out_dim(w, kw, stride, pad);
    let mut cols = Array2::<f64>::zeros((c * kh * kw, out_h * out_w));
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ci * kh * kw + ki * kw + kj;
                for oy in 0..out_h {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..out_w {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[[row, oy * out_w + ox]] = x[[ci, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of `im2col`: scatter-adds columns back onto the input grid.
pub fn col2im(
    cols: ArrayView2<f64>,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array3<f64> {
    let out_h = conv_out_dim(h, kh, stride, pad);
    let out_w = conv_out_dim(w, kw, stride, pad);
    let mut x = Array3::<f64>::zeros((c, h, w));
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ci * kh * kw + ki * kw + kj;
                for oy in 0..out_h {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..out_w {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[[ci, iy as usize, ix as usize]] += cols[[row, oy * out_w + ox]];
                    }
                }
            }
        }
    }
    x
}

pub fn depthwise_forward(
    x: ArrayView3<f64>,
    w: ArrayView3<f64>,
    b: &Array1<f64>,
    pad: usize,
) -> Array3<f64> {
    let (c, h, width) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw) = (w.shape()[1], w.shape()[2]);
    let mut out = Array3::<f64>::zeros((c, h, width));
    for ci in 0..c {
        for oy in 0..h {
            for ox in 0..width {
                let mut acc = b[ci];
                for ki in 0..kh {
                    let iy = (oy + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kj in 0..kw {
                        let ix = (ox + kj) as isize - pad as isize;
                        if ix < 0 || ix >= width as isize {
                            continue;
                        }
                        acc += w[[ci, ki, kj]] * x[[ci, iy as usize, ix as usize]];
                    }
                }
                out[[ci, oy, ox]] = acc;
            }
        }
    }
    out
}

pub struct DepthwiseGrads {
    pub dx: Array3<f64>,
    pub dw: Array3<f64>,
    pub db: Array1<f64>,
}

pub fn depthwise_backward(
    x: ArrayView3<f64>,
    w: ArrayView3<f64>,
    grad: ArrayView3<f64>,
    pad: usize,
) -> DepthwiseGrads {
    let (c, h, width) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw) = (w.shape()[1], w.shape()[2]);
    let mut dx = Array3::<f64>::zeros((c, h, width));
    let mut dw = Array3::<f64>::zeros((c, kh, kw));
    let mut db = Array1::<f64>::zeros(c);
    for ci in 0..c {
        for oy in 0..h {
            for ox in 0..width {
                let g = grad[[ci, oy, ox]];
                db[ci] += g;
                for ki in 0..kh {
                    let iy = (oy + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kj in 0..kw {
                        let ix = (ox + kj) as isize - pad as isize;
                        if ix < 0 || ix >= width as isize {
                            continue;
                        }
                        dx[[ci, iy as usize, ix as usize]] += w[[ci, ki, kj]] * g;
                        dw[[ci, ki, kj]] += x[[ci, iy as usize, ix as usize]] * g;
                    }
                }
            }
        }
    }
    DepthwiseGrads { dx, dw, db }
}

/// Bilinear sample with zero padding outside the grid; corners outside the
/// border contribute nothing, matching the deformable-convolution v1 rule.
pub fn bilinear_sample(plane: ArrayView2<f64>, py: f64, px: f64) -> f64 {
    let (h, w) = (plane.shape()[0] as isize, plane.shape()[1] as isize);
    if py <= -1.0 || py >= h as f64 || px <= -1.0 || px >= w as f64 {
        return 0.0;
    }
    let y0 = py.floor();
    let x0 = px.floor();
    let dy = py - y0;
    let dx = px - x0;
    let (y0, x0) = (y0 as isize, x0 as isize);
    let mut acc = 0.0;
    for (cy, wy) in [(y0, 1.0 - dy), (y0 + 1, dy)] {
        if cy < 0 || cy >= h || wy == 0.0 {
            continue;
        }
        for (cx, wx) in [(x0, 1.0 - dx), (x0 + 1, dx)] {
            if cx < 0 || cx >= w || wx == 0.0 {
                continue;
            }
            acc += wy * wx * plane[[cy as usize, cx as usize]];
        }
    }
    acc
}

/// Value plus partial derivatives w.r.t. the sampling coordinates.
pub fn bilinear_sample_with_coord_grad(
    plane: ArrayView2<f64>,
    py: f64,
    px: f64,
) -> (f64, f64, f64) {
    let (h, w) = (plane.shape()[0] as isize, plane.shape()[1] as isize);
    if py <= -1.0 || py >= h as f64 || px <= -1.0 || px >= w as f64 {
        return (0.0, 0.0, 0.0);
    }
    let y0f = py.floor();
    let x0f = px.floor();
    let dy = py - y0f;
    let dx = px - x0f;
    let (y0, x0) = (y0f as isize, x0f as isize);
    let fetch = |cy: isize, cx: isize| -> f64 {
        if cy < 0 || cy >= h || cx < 0 || cx >= w {
            0.0
        } else {
            plane[[cy as usize, cx as usize]]
        }
    };
    let f00 = fetch(y0, x0);
    let f01 = fetch(y0, x0 + 1);
    let f10 = fetch(y0 + 1, x0);
    let f11 = fetch(y0 + 1, x0 + 1);
    let value = (1.0 - dy) * (1.0 - dx) * f00
        + (1.0 - dy) * dx * f01
        + dy * (1.0 - dx) * f10
        + dy * dx * f11;
    let d_py = -(1.0 - dx) * f00 - dx * f01 + (1.0 - dx) * f10 + dx * f11;
    let d_px = -(1.0 - dy) * f00 + (1.0 - dy) * f01 - dy * f10 + dy * f11;
    (value, d_py, d_px)
}

/// Gathers deformed im2col columns: `(c*k*k, h*w)` where every kernel tap
/// samples at its regular grid position plus a learned offset.
pub fn deform_gather_forward(
    x: ArrayView3<f64>,
    offsets: ArrayView3<f64>,
    k: usize,
    pad: usize,
) -> Array2<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut cols = Array2::<f64>::zeros((c * k * k, h * w));
    for oy in 0..h {
        for ox in 0..w {
            let col = oy * w + ox;
            for ki in 0..k {
                for kj in 0..k {
                    let tap = ki * k + kj;
                    let py = oy as f64 - pad as f64 + ki as f64 + offsets[[2 * tap, oy, ox]];
                    let px = ox as f64 - pad as f64 + kj as f64 + offsets[[2 * tap + 1, oy, ox]];
                    for ci in 0..c {
                        let plane = x.index_axis(ndarray::Axis(0), ci);
                        cols[[ci * k * k + tap, col]] = bilinear_sample(plane, py, px);
                    }
                }
            }
        }
    }
    cols
}

pub struct DeformGrads {
    pub dx: Array3<f64>,
    pub doffsets: Array3<f64>,
}

pub fn deform_gather_backward(
    x: ArrayView3<f64>,
    offsets: ArrayView3<f64>,
    grad_cols: ArrayView2<f64>,
    k: usize,
    pad: usize,
) -> DeformGrads {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut dx = Array3::<f64>::zeros((c, h, w));
    let mut doffsets = Array3::<f64>::zeros((2 * k * k, h, w));
    for oy in 0..h {
        for ox in 0..w {
            let col = oy * w + ox;
            for ki in 0..k {
                for kj in 0..k {
                    let tap = ki * k + kj;
                    let py = oy as f64 - pad as f64 + ki as f64 + offsets[[2 * tap, oy, ox]];
                    let px = ox as f64 - pad as f64 + kj as f64 + offsets[[2 * tap + 1, oy, ox]];
                    if py <= -1.0 || py >= h as f64 || px <= -1.0 || px >= w as f64 {
                        continue;
                    }
                    let y0 = py.floor();
                    let x0 = px.floor();
                    let fy = py - y0;
                    let fx = px - x0;
                    let (y0, x0) = (y0 as isize, x0 as isize);
                    let mut d_py = 0.0;
                    let mut d_px = 0.0;
                    for ci in 0..c {
                        let g = grad_cols[[ci * k * k + tap, col]];
                        if g == 0.0 {
                            continue;
                        }
                        let plane = x.index_axis(ndarray::Axis(0), ci);
                        let (_, gy, gx) = bilinear_sample_with_coord_grad(plane, py, px);
                        d_py += gy * g;
                        d_px += gx * g;
                        for (cy, wy) in [(y0, 1.0 - fy), (y0 + 1, fy)] {
                            if cy < 0 || cy >= h as isize {
                                continue;
                            }
                            for (cx, wx) in [(x0, 1.0 - fx), (x0 + 1, fx)] {
                                if cx < 0 || cx >= w as isize {
                                    continue;
                                }
                                dx[[ci, cy as usize, cx as usize]] += wy * wx * g;
                            }
                        }
                    }
                    doffsets[[2 * tap, oy, ox]] += d_py;
                    doffsets[[2 * tap + 1, oy, ox]] += d_px;
                }
            }
        }
    }
    DeformGrads { dx, doffsets }
}

pub fn patchify_forward(x: ArrayView3<f64>, p: usize) -> Array2<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (gh, gw) = (h / p, w / p);
    let mut out = Array2::<f64>::zeros((gh * gw, c * p * p));
    for by in 0..gh {
        for bx in 0..gw {
            let token = by * gw + bx;
            for ci in 0..c {
                for iy in 0..p {
                    for ix in 0..p {
                        out[[token, ci * p * p + iy * p + ix]] =
                            x[[ci, by * p + iy, bx * p + ix]];
                    }
                }
            }
        }
    }
    out
}

pub fn patchify_backward(grad: ArrayView2<f64>, c: usize, h: usize, w: usize, p: usize) -> Array3<f64> {
    let (gh, gw) = (h / p, w / p);
    let mut dx = Array3::<f64>::zeros((c, h, w));
    for by in 0..gh {
        for bx in 0..gw {
            let token = by * gw + bx;
            for ci in 0..c {
                for iy in 0..p {
                    for ix in 0..p {
                        dx[[ci, by * p + iy, bx * p + ix]] =
                            grad[[token, ci * p * p + iy * p + ix]];
                    }
                }
            }
        }
    }
    dx
}
