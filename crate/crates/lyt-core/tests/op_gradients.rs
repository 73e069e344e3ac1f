//! Finite-difference verification of every differentiable operator, in
//! f64, over several random shapes each. The backward pass must agree with
//! central differences to a relative error below 1e-5.

use lyt_core::tensor::{finite_diff_check, Padding, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-5;
const EPS: f64 = 1e-5;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Random values kept away from zero so kinked ops (relu, abs, huber) are
/// differentiable at every sample point.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.1..1.5);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn assert_grad<G>(name: &str, f: G, x: &Tensor<f64>)
where
    G: Fn(&Tensor<f64>) -> lyt_core::tensor::Result<Tensor<f64>>,
{
    let err = finite_diff_check(f, x, EPS).unwrap();
    assert!(err < TOL, "{name}: max relative error {err:.3e} >= {TOL:.0e}");
}

fn shapes() -> Vec<Vec<usize>> {
    vec![
        vec![1, 2, 2, 3],
        vec![1, 4, 4, 2],
        vec![2, 3, 5, 1],
        vec![1, 5, 3, 4],
        vec![3, 2, 4, 2],
    ]
}

#[test]
fn binary_ops_same_shape() {
    for (i, shape) in shapes().iter().enumerate() {
        let mut r = rng(100 + i as u64);
        let a = rand_t(&mut r, shape, -1.0, 1.0);
        let b = rand_t(&mut r, shape, 0.5, 1.5); // divisor kept positive
        assert_grad("add/lhs", |x| Ok(x.add(&b)?.mul(&b)?.sum_all()), &a);
        assert_grad("sub/lhs", |x| Ok(x.sub(&b)?.mul(&b)?.sum_all()), &a);
        assert_grad("mul/lhs", |x| Ok(x.mul(&b)?.sum_all()), &a);
        assert_grad("div/lhs", |x| Ok(x.div(&b)?.sum_all()), &a);
        assert_grad("div/rhs", |x| Ok(a.div(x)?.sum_all()), &b);
    }
}

#[test]
fn binary_ops_broadcast() {
    for (i, shape) in shapes().iter().enumerate() {
        let mut r = rng(200 + i as u64);
        let full = rand_t(&mut r, shape, -1.0, 1.0);
        let chan = rand_t(&mut r, &[1, 1, 1, shape[3]], 0.5, 1.5);
        let scalar = rand_t(&mut r, &[1], 0.5, 1.5);
        assert_grad("mul/chan-lhs", |x| Ok(x.mul(&chan)?.sum_all()), &full);
        assert_grad("mul/chan-rhs", |x| Ok(full.mul(x)?.mul(x)?.sum_all()), &chan);
        assert_grad("add/chan-rhs", |x| Ok(full.add(x)?.mul(&full)?.sum_all()), &chan);
        assert_grad("div/scalar-rhs", |x| Ok(full.div(x)?.sum_all()), &scalar);
        assert_grad("sub/chan-rhs", |x| Ok(full.sub(x)?.mul(&full)?.sum_all()), &chan);
    }
}

#[test]
fn unary_ops() {
    for (i, shape) in shapes().iter().enumerate() {
        let mut r = rng(300 + i as u64);
        let x = rand_away_from_zero(&mut r, shape);
        let pos = rand_t(&mut r, shape, 0.2, 2.0);
        let w = rand_t(&mut r, shape, -1.0, 1.0);
        assert_grad("neg", |x| Ok(x.neg().mul(&w)?.sum_all()), &x);
        assert_grad("relu", |x| Ok(x.relu().mul(&w)?.sum_all()), &x);
        assert_grad("tanh", |x| Ok(x.tanh().mul(&w)?.sum_all()), &x);
        assert_grad("abs", |x| Ok(x.abs().mul(&w)?.sum_all()), &x);
        assert_grad("ln", |x| Ok(x.ln().mul(&w)?.sum_all()), &pos);
        assert_grad("powf", |x| Ok(x.powf_const(1.7).mul(&w)?.sum_all()), &pos);
        assert_grad(
            "clamp_min",
            |x| Ok(x.clamp_min(0.5).mul(&w)?.sum_all()),
            &pos,
        );
        assert_grad("scale", |x| Ok(x.scale(-2.5).mul(&w)?.sum_all()), &x);
        assert_grad("add_const", |x| Ok(x.add_const(3.0).mul(&w)?.sum_all()), &x);
        assert_grad("huber", |x| Ok(x.huber(0.7).sum_all()), &x);
        assert_grad("mean_all", |x| x.mean_all().mul(&Tensor::scalar(2.0)), &x);
    }
}

#[test]
fn shape_ops() {
    for (i, shape) in shapes().iter().enumerate() {
        let mut r = rng(400 + i as u64);
        let x = rand_t(&mut r, shape, -1.0, 1.0);
        let n = x.numel();
        let w = rand_t(&mut r, &[n], -1.0, 1.0);
        assert_grad("reshape", |x| Ok(x.reshape(&[n])?.mul(&w)?.sum_all()), &x);
        let c = shape[3];
        let rows = n / c;
        let wt = rand_t(&mut r, &[c, rows], -1.0, 1.0);
        assert_grad(
            "transpose2d",
            |x| Ok(x.reshape(&[rows, c])?.transpose2d()?.mul(&wt)?.sum_all()),
            &x,
        );
        if c > 1 {
            let ws = rand_t(&mut r, &[rows, 1], -1.0, 1.0);
            assert_grad(
                "slice_last",
                |x| {
                    Ok(x.reshape(&[rows, c])?
                        .slice_last(c - 1, 1)?
                        .mul(&ws)?
                        .sum_all())
                },
                &x,
            );
        }
        let other = rand_t(&mut r, shape, -1.0, 1.0);
        let wcat = rand_t(&mut r, &[shape[0], shape[1], shape[2], 2 * c], -1.0, 1.0);
        assert_grad(
            "concat_channels",
            |x| {
                Ok(Tensor::concat_channels(&[x.clone(), other.clone()])?
                    .mul(&wcat)?
                    .sum_all())
            },
            &x,
        );
    }
}

#[test]
fn matmul_and_dense() {
    for i in 0..5usize {
        let mut r = rng(500 + i as u64);
        let (m, k, n) = (2 + i, 3 + (i % 2), 2 + (i % 3));
        let a = rand_t(&mut r, &[m, k], -1.0, 1.0);
        let b = rand_t(&mut r, &[k, n], -1.0, 1.0);
        let wout = rand_t(&mut r, &[m, n], -1.0, 1.0);
        assert_grad("matmul/lhs", |x| Ok(x.matmul(&b)?.mul(&wout)?.sum_all()), &a);
        assert_grad("matmul/rhs", |x| Ok(a.matmul(x)?.mul(&wout)?.sum_all()), &b);
        let bias = rand_t(&mut r, &[n], -0.5, 0.5);
        assert_grad(
            "dense/input",
            |x| Ok(x.dense(&b, Some(&bias))?.mul(&wout)?.sum_all()),
            &a,
        );
        assert_grad(
            "dense/weight",
            |x| Ok(a.dense(x, Some(&bias))?.mul(&wout)?.sum_all()),
            &b,
        );
        assert_grad(
            "dense/bias",
            |x| Ok(a.dense(&b, Some(x))?.mul(&wout)?.sum_all()),
            &bias,
        );
    }
}

#[test]
fn softmax_all_axes() {
    for i in 0..5usize {
        let mut r = rng(600 + i as u64);
        let shape = [2 + i % 2, 3, 2 + i % 3];
        let x = rand_t(&mut r, &shape, -3.0, 3.0);
        let w = rand_t(&mut r, &shape, -1.0, 1.0);
        for axis in 0..3 {
            assert_grad(
                "softmax",
                |x| Ok(x.softmax(axis)?.mul(&w)?.sum_all()),
                &x,
            );
        }
    }
}

#[test]
fn layer_norm_all_inputs() {
    // Channel lanes of length 2 normalize to ~sign(x0 - x1), which is a
    // step function with an eps-width smoothing throat that central
    // differences cannot resolve; the network only uses C >= 3 lanes.
    let ln_shapes: Vec<Vec<usize>> = vec![
        vec![1, 2, 2, 3],
        vec![1, 4, 4, 8],
        vec![2, 3, 5, 4],
        vec![1, 5, 3, 16],
        vec![3, 2, 4, 6],
    ];
    for (i, shape) in ln_shapes.iter().enumerate() {
        let mut r = rng(700 + i as u64);
        let c = shape[3];
        let x = rand_t(&mut r, shape, -2.0, 2.0);
        let gain = rand_t(&mut r, &[c], 0.5, 1.5);
        let shift = rand_t(&mut r, &[c], -0.5, 0.5);
        let w = rand_t(&mut r, shape, -1.0, 1.0);
        assert_grad(
            "layer_norm/input",
            |x| Ok(x.layer_norm(&gain, &shift, 1e-5)?.mul(&w)?.sum_all()),
            &x,
        );
        assert_grad(
            "layer_norm/gain",
            |g| Ok(x.layer_norm(g, &shift, 1e-5)?.mul(&w)?.sum_all()),
            &gain,
        );
        assert_grad(
            "layer_norm/shift",
            |s| Ok(x.layer_norm(&gain, s, 1e-5)?.mul(&w)?.sum_all()),
            &shift,
        );
    }
}

#[test]
fn conv2d_all_inputs() {
    let cases = [
        (1usize, 4usize, 4usize, 1usize, 2usize, 1usize, Padding::Same),
        (1, 5, 5, 2, 3, 2, Padding::Same),
        (2, 4, 3, 2, 1, 1, Padding::Same),
        (1, 6, 6, 1, 2, 2, Padding::Valid),
        (1, 4, 5, 3, 2, 1, Padding::Valid),
    ];
    for (i, &(n, h, w, cin, cout, stride, padding)) in cases.iter().enumerate() {
        let mut r = rng(800 + i as u64);
        let x = rand_t(&mut r, &[n, h, w, cin], -1.0, 1.0);
        let wt = rand_t(&mut r, &[3, 3, cin, cout], -0.7, 0.7);
        let bias = rand_t(&mut r, &[cout], -0.3, 0.3);
        let probe = {
            let y = x.conv2d(&wt, Some(&bias), stride, padding).unwrap();
            rand_t(&mut r, y.shape(), -1.0, 1.0)
        };
        assert_grad(
            "conv2d/input",
            |x| Ok(x.conv2d(&wt, Some(&bias), stride, padding)?.mul(&probe)?.sum_all()),
            &x,
        );
        assert_grad(
            "conv2d/weight",
            |w| Ok(x.conv2d(w, Some(&bias), stride, padding)?.mul(&probe)?.sum_all()),
            &wt,
        );
        assert_grad(
            "conv2d/bias",
            |b| Ok(x.conv2d(&wt, Some(b), stride, padding)?.mul(&probe)?.sum_all()),
            &bias,
        );
    }
}

#[test]
fn depthwise_all_inputs() {
    for (i, shape) in shapes().iter().enumerate() {
        let mut r = rng(900 + i as u64);
        let c = shape[3];
        let x = rand_t(&mut r, shape, -1.0, 1.0);
        let wt = rand_t(&mut r, &[3, 3, c], -0.7, 0.7);
        let bias = rand_t(&mut r, &[c], -0.3, 0.3);
        let probe = rand_t(&mut r, shape, -1.0, 1.0);
        assert_grad(
            "depthwise/input",
            |x| {
                Ok(x.depthwise_conv2d(&wt, Some(&bias), Padding::Same)?
                    .mul(&probe)?
                    .sum_all())
            },
            &x,
        );
        assert_grad(
            "depthwise/weight",
            |w| {
                Ok(x.depthwise_conv2d(w, Some(&bias), Padding::Same)?
                    .mul(&probe)?
                    .sum_all())
            },
            &wt,
        );
        assert_grad(
            "depthwise/bias",
            |b| {
                Ok(x.depthwise_conv2d(&wt, Some(b), Padding::Same)?
                    .mul(&probe)?
                    .sum_all())
            },
            &bias,
        );
    }
}

#[test]
fn pooling_ops() {
    for i in 0..5usize {
        let mut r = rng(1000 + i as u64);
        let shape = [1 + i % 2, 4 + i % 3, 4, 2];
        let x = rand_t(&mut r, &shape, -1.0, 1.0);
        let avg_out = x.avg_pool(2, 2).unwrap();
        let pa = rand_t(&mut r, avg_out.shape(), -1.0, 1.0);
        assert_grad("avg_pool", |x| Ok(x.avg_pool(2, 2)?.mul(&pa)?.sum_all()), &x);
        assert_grad("max_pool", |x| Ok(x.max_pool(2, 2)?.mul(&pa)?.sum_all()), &x);
        let pg = rand_t(&mut r, &[shape[0], 1, 1, shape[3]], -1.0, 1.0);
        assert_grad(
            "global_avg_pool",
            |x| Ok(x.global_avg_pool()?.mul(&pg)?.sum_all()),
            &x,
        );
    }
}

#[test]
fn resize_pad_crop_ops() {
    for i in 0..5usize {
        let mut r = rng(1100 + i as u64);
        let shape = [1, 3 + i % 2, 3, 2];
        let x = rand_t(&mut r, &shape, -1.0, 1.0);
        let scale = 2 + i % 2;
        let up = x.upsample_bilinear(scale).unwrap();
        let pu = rand_t(&mut r, up.shape(), -1.0, 1.0);
        assert_grad(
            "upsample_bilinear",
            |x| Ok(x.upsample_bilinear(scale)?.mul(&pu)?.sum_all()),
            &x,
        );
        let padded = x.reflect_pad_hw(2, 1).unwrap();
        let pp = rand_t(&mut r, padded.shape(), -1.0, 1.0);
        assert_grad(
            "reflect_pad",
            |x| Ok(x.reflect_pad_hw(2, 1)?.mul(&pp)?.sum_all()),
            &x,
        );
        let pc = rand_t(&mut r, &[1, 2, 2, 2], -1.0, 1.0);
        assert_grad("crop_hw", |x| Ok(x.crop_hw(2, 2)?.mul(&pc)?.sum_all()), &x);
    }
}

#[test]
fn soft_histogram_gradient() {
    for i in 0..5usize {
        let mut r = rng(1200 + i as u64);
        let shape = [1, 3, 4, 1 + i % 3];
        let x = rand_t(&mut r, &shape, 0.05, 0.95);
        let bins = 32;
        let target = rand_t(&mut r, &shape, 0.05, 0.95)
            .soft_histogram(bins, 1.0 / bins as f64)
            .unwrap();
        assert_grad(
            "soft_histogram",
            |x| {
                Ok(x.soft_histogram(bins, 1.0 / bins as f64)?
                    .sub(&target)?
                    .mul(&target)? // smooth probe instead of |.|'s kink
                    .sum_all())
            },
            &x,
        );
    }
}

#[test]
fn tape_is_topologically_sorted() {
    let mut r = rng(42);
    let x = rand_t(&mut r, &[1, 4, 4, 2], -1.0, 1.0).tracked();
    let w = rand_t(&mut r, &[3, 3, 2, 2], -0.5, 0.5).tracked();
    let y = x.conv2d(&w, None, 1, Padding::Same).unwrap();
    let z = y.relu().add(&x).unwrap().mean_all();
    let tape = lyt_core::tensor::Tape::linearize(&z);
    assert!(tape.len() >= 5);
    assert!(tape.is_topologically_sorted());
}

#[test]
fn forward_replay_is_bit_identical() {
    // same seed + same inputs must give bit-identical forward results
    let build = || {
        let mut r = rng(77);
        let x = rand_t(&mut r, &[1, 8, 8, 3], -1.0, 1.0);
        let w = rand_t(&mut r, &[3, 3, 3, 4], -0.5, 0.5);
        let b = rand_t(&mut r, &[4], -0.1, 0.1);
        x.conv2d(&w, Some(&b), 2, Padding::Same)
            .unwrap()
            .relu()
            .global_avg_pool()
            .unwrap()
            .mean_all()
    };
    let a = build();
    let b = build();
    assert_eq!(a.item().to_bits(), b.item().to_bits());
}
