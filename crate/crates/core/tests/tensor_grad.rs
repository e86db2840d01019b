//! Finite-difference validation of every tape op's backward rule, plus
//! forward cross-checks of the convolution kernels against naive loops.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use satqa_core::gradcheck::rel_err;
use satqa_core::rng::rng_from_seed;
use satqa_core::tensor::{Arr, Tape, Var};

fn random_arr(rng: &mut ChaCha8Rng, shape: &[usize]) -> Arr {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-1.0..1.0))
}

/// Checks d(loss)/d(input[i]) against central differences for every input
/// element, where the graph is rebuilt by `build` on a perturbed copy.
fn check_grads(
    inputs: &[Arr],
    build: &dyn Fn(&mut Tape, &[Var]) -> Var,
    eps: f64,
    tol: f64,
    label: &str,
) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.input(a.clone())).collect();
    let loss = build(&mut tape, &vars);
    assert_eq!(tape.value(loss).len(), 1, "{label}: loss must be scalar");
    let grads = tape.backward(loss);

    for (which, input) in inputs.iter().enumerate() {
        let analytic = grads
            .input(vars[which])
            .unwrap_or_else(|| panic!("{label}: missing grad for input {which}"))
            .as_standard_layout()
            .to_owned();
        for flat in 0..input.len() {
            let eval = |delta: f64| -> f64 {
                let mut perturbed: Vec<Arr> = inputs.to_vec();
                perturbed[which].as_slice_mut().unwrap()[flat] += delta;
                let mut t = Tape::new();
                let vs: Vec<Var> = perturbed.iter().map(|a| t.input(a.clone())).collect();
                let l = build(&mut t, &vs);
                t.scalar(l)
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let got = analytic.as_slice().unwrap()[flat];
            assert!(
                rel_err(got, numeric) < tol,
                "{label}: input {which} element {flat}: analytic {got} vs numeric {numeric}"
            );
        }
    }
}

/// Weighted sum with fixed coefficients turns any output into a scalar loss
/// that exercises all output elements with distinct sensitivities.
fn spread_loss(t: &mut Tape, y: Var) -> Var {
    let shape = t.shape(y).to_vec();
    let len: usize = shape.iter().product();
    let coeffs = Arr::from_shape_vec(
        IxDyn(&shape),
        (0..len).map(|i| 0.3 + 0.1 * i as f64).collect(),
    )
    .unwrap();
    let c = t.constant(coeffs);
    let prod = t.mul(y, c);
    t.sum_all(prod)
}

#[test]
fn elementwise_and_broadcast_ops() {
    let mut rng = rng_from_seed(11);
    let a = random_arr(&mut rng, &[3, 4]);
    let b = random_arr(&mut rng, &[3, 4]);
    let row = random_arr(&mut rng, &[4]);
    let col = random_arr(&mut rng, &[3]);

    check_grads(
        &[a.clone(), b.clone()],
        &|t, v| {
            let s = t.add(v[0], v[1]);
            let d = t.sub(s, v[1]);
            let m = t.mul(d, v[1]);
            let sc = t.scale(m, 1.7);
            let sh = t.add_scalar(sc, 0.3);
            spread_loss(t, sh)
        },
        1e-5,
        1e-6,
        "add/sub/mul/scale/add_scalar",
    );

    check_grads(
        &[a.clone(), row.clone()],
        &|t, v| {
            let y = t.add_row(v[0], v[1]);
            let y = t.mul_row(y, v[1]);
            spread_loss(t, y)
        },
        1e-5,
        1e-6,
        "add_row/mul_row",
    );

    check_grads(
        &[a, col],
        &|t, v| {
            let y = t.add_col(v[0], v[1]);
            spread_loss(t, y)
        },
        1e-5,
        1e-6,
        "add_col",
    );
}

#[test]
fn activations() {
    let mut rng = rng_from_seed(12);
    // Keep away from the relu/abs kinks so central differences are valid.
    let mut x = random_arr(&mut rng, &[4, 3]);
    x.mapv_inplace(|v| if v.abs() < 0.05 { v + 0.1 } else { v });

    for (name, f) in [
        ("relu", 0usize),
        ("gelu", 1),
        ("sigmoid", 2),
        ("abs", 3),
    ] {
        check_grads(
            &[x.clone()],
            &move |t: &mut Tape, v: &[Var]| {
                let y = match f {
                    0 => t.relu(v[0]),
                    1 => t.gelu(v[0]),
                    2 => t.sigmoid(v[0]),
                    _ => t.abs(v[0]),
                };
                spread_loss(t, y)
            },
            1e-5,
            1e-5,
            name,
        );
    }
}

#[test]
fn matmul_transpose_reshape_narrow_concat() {
    let mut rng = rng_from_seed(13);
    let a = random_arr(&mut rng, &[3, 5]);
    let b = random_arr(&mut rng, &[5, 2]);
    check_grads(
        &[a.clone(), b],
        &|t, v| {
            let y = t.matmul(v[0], v[1]);
            let yt = t.transpose(y);
            spread_loss(t, yt)
        },
        1e-5,
        1e-6,
        "matmul/transpose",
    );

    check_grads(
        &[a.clone()],
        &|t, v| {
            let r = t.reshape(v[0], &[5, 3]);
            let n = t.narrow_cols(r, 1, 2);
            spread_loss(t, n)
        },
        1e-5,
        1e-6,
        "reshape/narrow_cols",
    );

    let c = random_arr(&mut rng, &[2, 3]);
    let d = random_arr(&mut rng, &[2, 4]);
    check_grads(
        &[c.clone(), d.clone()],
        &|t, v| {
            let y = t.concat_cols(&[v[0], v[1]]);
            spread_loss(t, y)
        },
        1e-5,
        1e-6,
        "concat_cols",
    );
    check_grads(
        &[c, random_arr(&mut rng, &[4, 3])],
        &|t, v| {
            let y = t.concat_axis0(&[v[0], v[1]]);
            spread_loss(t, y)
        },
        1e-5,
        1e-6,
        "concat_axis0",
    );
}

#[test]
fn row_reductions_and_normalizers() {
    let mut rng = rng_from_seed(14);
    let x = random_arr(&mut rng, &[4, 6]);

    check_grads(
        &[x.clone()],
        &|t, v| {
            let s = t.softmax_rows(v[0]);
            spread_loss(t, s)
        },
        1e-5,
        1e-5,
        "softmax_rows",
    );
    check_grads(
        &[x.clone()],
        &|t, v| {
            let s = t.logsumexp_rows(v[0]);
            spread_loss(t, s)
        },
        1e-5,
        1e-6,
        "logsumexp_rows",
    );
    check_grads(
        &[x.clone()],
        &|t, v| {
            let s = t.standardize_rows(v[0], 1e-6);
            spread_loss(t, s)
        },
        1e-5,
        1e-4,
        "standardize_rows",
    );
    check_grads(
        &[x.clone()],
        &|t, v| {
            let s = t.l2_normalize_rows(v[0]);
            spread_loss(t, s)
        },
        1e-5,
        1e-5,
        "l2_normalize_rows",
    );
    for (name, which) in [("mean_all", 0usize), ("sum_all", 1), ("row_sums", 2), ("mean_rows", 3)] {
        check_grads(
            &[x.clone()],
            &move |t: &mut Tape, v: &[Var]| {
                let y = match which {
                    0 => t.mean_all(v[0]),
                    1 => t.sum_all(v[0]),
                    2 => t.row_sums(v[0]),
                    _ => t.mean_rows(v[0]),
                };
                spread_loss(t, y)
            },
            1e-5,
            1e-6,
            name,
        );
    }
}

#[test]
fn softmax_rows_are_stochastic() {
    let mut rng = rng_from_seed(15);
    let x = random_arr(&mut rng, &[7, 9]);
    let mut t = Tape::new();
    let v = t.constant(x);
    let s = t.softmax_rows(v);
    let val = t.value(s);
    for row in 0..7 {
        let sum: f64 = (0..9).map(|c| val[[row, c]]).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}

#[test]
fn conv2d_matches_naive_loop_and_grads() {
    let mut rng = rng_from_seed(16);
    let x = random_arr(&mut rng, &[2, 6, 5]);
    let w = random_arr(&mut rng, &[3, 2, 3, 3]);
    let b = random_arr(&mut rng, &[3]);

    let mut t = Tape::new();
    let (xv, wv, bv) = (
        t.constant(x.clone()),
        t.constant(w.clone()),
        t.constant(b.clone()),
    );
    let y = t.conv2d(xv, wv, bv, 1, 1);
    let out = t.value(y).clone();
    assert_eq!(out.shape(), &[3, 6, 5]);

    // Naive correlation with zero padding.
    for co in 0..3 {
        for oy in 0..6 {
            for ox in 0..5 {
                let mut acc = b[[co]];
                for ci in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = oy as isize + ky as isize - 1;
                            let ix = ox as isize + kx as isize - 1;
                            if iy < 0 || iy >= 6 || ix < 0 || ix >= 5 {
                                continue;
                            }
                            acc += x[[ci, iy as usize, ix as usize]] * w[[co, ci, ky, kx]];
                        }
                    }
                }
                assert!((out[[co, oy, ox]] - acc).abs() < 1e-12);
            }
        }
    }

    check_grads(
        &[x.clone(), w.clone(), b.clone()],
        &|t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 1, 1);
            spread_loss(t, y)
        },
        1e-5,
        1e-5,
        "conv2d pad1",
    );
    check_grads(
        &[x, w, b],
        &|t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 2, 1);
            spread_loss(t, y)
        },
        1e-5,
        1e-5,
        "conv2d stride2",
    );
}

#[test]
fn depthwise_conv_grads() {
    let mut rng = rng_from_seed(17);
    let x = random_arr(&mut rng, &[3, 4, 4]);
    let w = random_arr(&mut rng, &[3, 3, 3]);
    let b = random_arr(&mut rng, &[3]);
    check_grads(
        &[x, w, b],
        &|t, v| {
            let y = t.depthwise_conv2d(v[0], v[1], v[2], 1);
            spread_loss(t, y)
        },
        1e-5,
        1e-5,
        "depthwise_conv2d",
    );
}

#[test]
fn pooling_and_upsample_grads() {
    let mut rng = rng_from_seed(18);
    let x = random_arr(&mut rng, &[2, 4, 6]);
    check_grads(
        &[x.clone()],
        &|t, v| {
            let y = t.max_pool2(v[0]);
            spread_loss(t, y)
        },
        1e-6,
        1e-4,
        "max_pool2",
    );
    check_grads(
        &[x.clone()],
        &|t, v| {
            let y = t.upsample_nearest2(v[0]);
            spread_loss(t, y)
        },
        1e-5,
        1e-6,
        "upsample_nearest2",
    );
    check_grads(
        &[x.clone()],
        &|t, v| {
            let y = t.avg_pool_blocks(v[0], 2, 3);
            spread_loss(t, y)
        },
        1e-5,
        1e-6,
        "avg_pool_blocks",
    );
    check_grads(
        &[x.clone()],
        &|t, v| {
            let y = t.spatial_mean(v[0]);
            spread_loss(t, y)
        },
        1e-5,
        1e-6,
        "spatial_mean",
    );
    check_grads(
        &[x.clone()],
        &|t, v| {
            let y = t.spatial_max(v[0]);
            spread_loss(t, y)
        },
        1e-6,
        1e-4,
        "spatial_max",
    );
    check_grads(
        &[x.clone()],
        &|t, v| {
            let y = t.channel_mean(v[0]);
            spread_loss(t, y)
        },
        1e-5,
        1e-6,
        "channel_mean",
    );
    check_grads(
        &[x],
        &|t, v| {
            let y = t.channel_max(v[0]);
            spread_loss(t, y)
        },
        1e-6,
        1e-4,
        "channel_max",
    );
}

#[test]
fn gates_patchify_and_deform_grads() {
    let mut rng = rng_from_seed(19);
    let x = random_arr(&mut rng, &[3, 4, 4]);
    let cgate = random_arr(&mut rng, &[3]);
    let sgate = random_arr(&mut rng, &[1, 4, 4]);

    check_grads(
        &[x.clone(), cgate],
        &|t, v| {
            let y = t.mul_channel_gate(v[0], v[1]);
            spread_loss(t, y)
        },
        1e-5,
        1e-6,
        "mul_channel_gate",
    );
    check_grads(
        &[x.clone(), sgate],
        &|t, v| {
            let y = t.mul_spatial_gate(v[0], v[1]);
            spread_loss(t, y)
        },
        1e-5,
        1e-6,
        "mul_spatial_gate",
    );
    check_grads(
        &[x.clone()],
        &|t, v| {
            let y = t.patchify(v[0], 2);
            spread_loss(t, y)
        },
        1e-5,
        1e-6,
        "patchify",
    );

    // Offsets scaled down so sampling stays off the bilinear lattice kinks.
    let mut offsets = random_arr(&mut rng, &[18, 4, 4]);
    offsets.mapv_inplace(|v| v * 0.37);
    check_grads(
        &[x, offsets],
        &|t, v| {
            let y = t.deform_gather(v[0], v[1], 3, 1);
            spread_loss(t, y)
        },
        1e-5,
        1e-4,
        "deform_gather",
    );
}

#[test]
fn deform_with_zero_offsets_matches_plain_conv() {
    let mut rng = rng_from_seed(20);
    let x = random_arr(&mut rng, &[2, 5, 5]);
    let w = random_arr(&mut rng, &[4, 2, 3, 3]);
    let b = random_arr(&mut rng, &[4]);

    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let wv = t.constant(w.clone());
    let bv = t.constant(b.clone());
    let conv = t.conv2d(xv, wv, bv, 1, 1);

    let zero_off = t.constant(Arr::zeros(IxDyn(&[18, 5, 5])));
    let cols = t.deform_gather(xv, zero_off, 3, 1);
    let w2 = t.constant(
        w.into_shape_with_order(IxDyn(&[4, 18]))
            .unwrap(),
    );
    let lin = t.matmul(w2, cols);
    let lin = t.add_col(lin, bv);
    let deform = t.reshape(lin, &[4, 5, 5]);

    let a = t.value(conv);
    let d = t.value(deform);
    for (av, dv) in a.iter().zip(d.iter()) {
        assert!((av - dv).abs() < 1e-5, "conv {av} vs deform {dv}");
    }
}

#[test]
fn inference_tape_produces_no_param_grads() {
    let mut rng = rng_from_seed(21);
    let mut ps = satqa_core::ParamSet::new();
    let id = ps.alloc("w", random_arr(&mut rng, &[3, 3]));
    let mut t = Tape::inference();
    let x = t.constant(random_arr(&mut rng, &[2, 3]));
    let w = t.param(&ps, id);
    let y = t.matmul(x, w);
    let loss = t.mean_all(y);
    let grads = t.backward(loss);
    assert!(grads.params().is_empty());
}

#[test]
fn param_used_twice_accumulates() {
    let mut ps = satqa_core::ParamSet::new();
    let id = ps.alloc("w", Arr::from_elem(IxDyn(&[1]), 2.0));
    let mut t = Tape::new();
    let w1 = t.param(&ps, id);
    let w2 = t.param(&ps, id);
    let prod = t.mul(w1, w2); // w^2, d/dw = 2w = 4
    let loss = t.sum_all(prod);
    let grads = t.backward(loss);
    let g = grads.params().get(id).unwrap();
    assert!((g[[0]] - 4.0).abs() < 1e-12);
}
