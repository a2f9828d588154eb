//! Engine ops against brute-force oracles, plus finite-difference checks of
//! every registered adjoint.

use aminet::tensor::{
    grad_check, BinaryOp, ConvOptions, GradCheckConfig, Graph, PoolKind, Rng, Tensor,
    TransposedConvOptions, Var,
};
use aminet::{Error, Shape};
use proptest::prelude::*;

/// Direct nested-loop convolution.
fn conv_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor<f64> {
    let [n, cin, h, wd] = x.shape().0;
    let [cout, cin_g, kh, kw] = w.shape().0;
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let cout_g = cout / groups;
    assert_eq!(cin_g * groups, cin);
    Tensor::from_fn([n, cout, ho, wo], |ni, co, oy, ox| {
        let grp = co / cout_g;
        let mut acc = b.map_or(0.0, |b| b.data()[co]);
        for ci in 0..cin_g {
            for ky in 0..kh {
                for kx in 0..kw {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                        continue;
                    }
                    acc += w.at(co, ci, ky, kx) * x.at(ni, grp * cin_g + ci, iy as usize, ix as usize);
                }
            }
        }
        acc
    })
}

fn inner(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn run1(f: impl FnOnce(&Graph<f64>) -> Result<Var, Error>) -> Tensor<f64> {
    let g = Graph::new();
    let v = f(&g).unwrap();
    g.tensor(v)
}

#[test]
fn depthwise_all_ones_sums_under_zero_padding() {
    let g = Graph::<f32>::new();
    let x = g.constant(Tensor::ones([1, 1, 3, 3]));
    let w = g.constant(Tensor::ones([1, 1, 3, 3]));
    let b = g.constant(Tensor::zeros([1, 1, 1, 1]));
    let y = g.conv2d(x, w, Some(b), ConvOptions::depthwise(3, 1)).unwrap();
    let y = g.tensor(y);
    assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
}

#[test]
fn delta_kernel_is_identity() {
    let mut rng = Rng::new(2);
    let x: Tensor<f32> = rng.normal_tensor([2, 3, 6, 5], 1.0);
    let mut w = Tensor::<f32>::zeros([3, 1, 3, 3]);
    for c in 0..3 {
        w.data_mut()[c * 9 + 4] = 1.0;
    }
    let g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.constant(w);
    let y = g.conv2d(xv, wv, None, ConvOptions::depthwise(3, 3)).unwrap();
    assert_eq!(g.tensor(y), x);
}

#[test]
fn conv_matches_nested_loop_oracle_f32() {
    let mut rng = Rng::new(3);
    let x64: Tensor<f64> = rng.normal_tensor([2, 4, 5, 5], 1.0);
    for (groups, k, stride, pad) in [(1, 3, 1, 1), (2, 3, 1, 1), (4, 5, 1, 2), (1, 3, 2, 1), (1, 1, 1, 0), (4, 7, 1, 3), (1, 2, 2, 0)] {
        let w64: Tensor<f64> = rng.normal_tensor([4, 4 / groups, k, k], 0.5);
        let b64: Tensor<f64> = rng.normal_tensor([1, 1, 1, 4], 0.5);
        let expect = conv_oracle(&x64, &w64, Some(&b64), stride, pad, groups);
        let g = Graph::<f32>::new();
        let (x, w, b) = (g.constant(x64.cast()), g.constant(w64.cast()), g.constant(b64.cast()));
        let y = g
            .conv2d(x, w, Some(b), ConvOptions { stride, padding: pad, groups })
            .unwrap();
        let got: Tensor<f64> = g.tensor(y).cast();
        assert_eq!(got.shape(), expect.shape());
        let err = got.max_abs_diff(&expect);
        assert!(err < 1e-5, "groups {groups} k {k} s {stride}: {err}");
    }
}

#[test]
fn conv_matches_oracle_exactly_in_f64() {
    let mut rng = Rng::new(4);
    let x: Tensor<f64> = rng.normal_tensor([2, 4, 5, 5], 1.0);
    let w: Tensor<f64> = rng.normal_tensor([6, 2, 3, 3], 1.0);
    let expect = conv_oracle(&x, &w, None, 1, 1, 2);
    let got = run1(|g| {
        let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
        g.conv2d(xv, wv, None, ConvOptions { stride: 1, padding: 1, groups: 2 })
    });
    assert!(got.max_abs_diff(&expect) < 1e-12);
}

#[test]
fn conv_shape_errors() {
    let g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros([1, 3, 4, 4]));
    let w = g.constant(Tensor::zeros([4, 2, 3, 3]));
    assert!(matches!(g.conv2d(x, w, None, ConvOptions::same(3)), Err(Error::Shape { .. })));
    let w = g.constant(Tensor::zeros([4, 1, 3, 3]));
    let r = g.conv2d(x, w, None, ConvOptions { stride: 1, padding: 1, groups: 2 });
    assert!(matches!(r, Err(Error::Shape { .. })));
}

#[test]
fn transposed_single_tap() {
    let out = run1(|g| {
        let x = g.constant(Tensor::from_vec([1, 1, 1, 1], vec![2.5]).unwrap());
        let w = g.constant(Tensor::ones([1, 1, 2, 2]));
        g.conv_transpose2d(x, w, None, TransposedConvOptions { stride: 2, ..Default::default() })
    });
    assert_eq!(out.shape(), Shape::new(1, 1, 2, 2));
    assert_eq!(out.data(), &[2.5; 4]);
}

#[test]
fn transposed_zero_kernel_gives_bias() {
    let out = run1(|g| {
        let x = g.constant(Tensor::ones([1, 2, 3, 3]));
        let w = g.constant(Tensor::zeros([2, 3, 2, 2]));
        let b = g.constant(Tensor::from_vec([1, 1, 1, 3], vec![0.0, 1.0, -2.0]).unwrap());
        g.conv_transpose2d(x, w, Some(b), TransposedConvOptions { stride: 2, ..Default::default() })
    });
    assert_eq!(out.shape(), Shape::new(1, 3, 6, 6));
    for c in 0..3 {
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(out.at(0, c, y, x), [0.0, 1.0, -2.0][c]);
            }
        }
    }
}

#[test]
fn transposed_is_adjoint_of_strided_conv() {
    let mut rng = Rng::new(5);
    // k=2, s=2 pair, plus the 3x3 s2 p1 pair used by the resamplers.
    for (k, pad, out_pad, h) in [(2, 0, 0, 8), (3, 1, 1, 8), (3, 1, 0, 7)] {
        let x: Tensor<f64> = rng.normal_tensor([2, 3, h, h], 1.0);
        let w: Tensor<f64> = rng.normal_tensor([4, 3, k, k], 1.0);
        let conv = run1(|g| {
            let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
            g.conv2d(xv, wv, None, ConvOptions::strided(2, pad))
        });
        let y: Tensor<f64> = rng.normal_tensor(conv.shape(), 1.0);
        let back = run1(|g| {
            let (yv, wv) = (g.constant(y.clone()), g.constant(w.clone()));
            g.conv_transpose2d(yv, wv, None, TransposedConvOptions { stride: 2, padding: pad, output_padding: out_pad })
        });
        assert_eq!(back.shape(), x.shape());
        let (lhs, rhs) = (inner(&conv, &y), inner(&x, &back));
        assert!((lhs - rhs).abs() < 1e-6 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}

#[test]
fn matmul_identity_zero_and_oracle() {
    let mut rng = Rng::new(6);
    let a: Tensor<f64> = rng.normal_tensor([1, 1, 2, 3], 1.0);
    let b: Tensor<f64> = rng.normal_tensor([1, 1, 3, 2], 1.0);
    let prod = run1(|g| {
        let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
        g.matmul(av, bv)
    });
    let oracle = Tensor::from_fn([1, 1, 2, 2], |_, _, i, j| (0..3).map(|k| a.at(0, 0, i, k) * b.at(0, 0, k, j)).sum());
    assert!(prod.max_abs_diff(&oracle) < 1e-12);

    let eye = Tensor::from_fn([1, 1, 2, 2], |_, _, i, j| if i == j { 1.0 } else { 0.0 });
    let same = run1(|g| {
        let (e, av) = (g.constant(eye.clone()), g.constant(a.clone()));
        g.matmul(e, av)
    });
    assert_eq!(same, a);
    let zero = run1(|g| {
        let (av, z) = (g.constant(a.clone()), g.constant(Tensor::zeros([1, 1, 3, 4])));
        g.matmul(av, z)
    });
    assert!(zero.data().iter().all(|&v| v == 0.0));

    let nt = run1(|g| {
        let (av, bv) = (g.constant(a.clone()), g.constant(a.clone()));
        g.matmul_nt(av, bv)
    });
    let gram = Tensor::from_fn([1, 1, 2, 2], |_, _, i, j| (0..3).map(|k| a.at(0, 0, i, k) * a.at(0, 0, j, k)).sum());
    assert!(nt.max_abs_diff(&gram) < 1e-12);

    let g = Graph::<f64>::new();
    let (av, bv) = (g.constant(a.clone()), g.constant(a));
    assert!(g.matmul(av, bv).is_err());
}

#[test]
fn softmax_closed_forms() {
    let out = run1(|g| {
        let x = g.constant(Tensor::from_vec([1, 1, 1, 3], vec![0.0, 2f64.ln(), 4f64.ln()]).unwrap());
        g.softmax(x, 3)
    });
    for (v, e) in out.data().iter().zip([1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0]) {
        assert!((v - e).abs() < 1e-12);
    }
    let uniform = run1(|g| {
        let x = g.constant(Tensor::full([2, 3, 1, 5], 0.7));
        g.softmax(x, 3)
    });
    assert!(uniform.data().iter().all(|&v| (v - 0.2).abs() < 1e-12));
}

#[test]
fn layer_norm_definitions() {
    let mut rng = Rng::new(8);
    let x: Tensor<f64> = rng.normal_tensor([2, 6, 4, 4], 2.0);
    let out = run1(|g| {
        let (xv, ga, be) = (g.constant(x.clone()), g.constant(Tensor::ones([1, 1, 1, 6])), g.constant(Tensor::zeros([1, 1, 1, 6])));
        g.layer_norm(xv, ga, be)
    });
    for n in 0..2 {
        for y in 0..4 {
            for xx in 0..4 {
                let vals: Vec<f64> = (0..6).map(|c| out.at(n, c, y, xx)).collect();
                let mean = vals.iter().sum::<f64>() / 6.0;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
                assert!(mean.abs() < 1e-6);
                assert!((var - 1.0).abs() < 1e-3, "{var}");
            }
        }
    }
    let constant = run1(|g| {
        let xv = g.constant(Tensor::from_fn([1, 4, 2, 2], |_, _, y, x| (y * 2 + x) as f64));
        let (ga, be) = (g.constant(Tensor::ones([1, 1, 1, 4])), g.constant(Tensor::zeros([1, 1, 1, 4])));
        g.layer_norm(xv, ga, be)
    });
    assert!(constant.data().iter().all(|&v| v == 0.0));
    let fives = run1(|g| {
        let xv = g.constant(x.clone());
        let (ga, be) = (g.constant(Tensor::zeros([1, 1, 1, 6])), g.constant(Tensor::full([1, 1, 1, 6], 5.0)));
        g.layer_norm(xv, ga, be)
    });
    assert!(fives.data().iter().all(|&v| v == 5.0));
}

#[test]
fn channel_pool_cases() {
    let x = Tensor::<f64>::from_fn([1, 2, 2, 2], |_, c, _, _| if c == 0 { 1.0 } else { 3.0 });
    let avg = run1(|g| {
        let v = g.constant(x.clone());
        g.channel_pool(v, PoolKind::Avg)
    });
    let max = run1(|g| {
        let v = g.constant(x.clone());
        g.channel_pool(v, PoolKind::Max)
    });
    assert!(avg.data().iter().all(|&v| v == 2.0));
    assert!(max.data().iter().all(|&v| v == 3.0));

    let mut rng = Rng::new(9);
    let single: Tensor<f64> = rng.normal_tensor([2, 1, 3, 3], 1.0);
    for kind in [PoolKind::Avg, PoolKind::Max] {
        let out = run1(|g| {
            let v = g.constant(single.clone());
            g.channel_pool(v, kind)
        });
        assert_eq!(out, single);
    }

    let r: Tensor<f64> = rng.normal_tensor([2, 5, 3, 4], 1.0);
    let (avg, max) = (
        run1(|g| {
            let v = g.constant(r.clone());
            g.channel_pool(v, PoolKind::Avg)
        }),
        run1(|g| {
            let v = g.constant(r.clone());
            g.channel_pool(v, PoolKind::Max)
        }),
    );
    for n in 0..2 {
        for y in 0..3 {
            for x in 0..4 {
                let vals: Vec<f64> = (0..5).map(|c| r.at(n, c, y, x)).collect();
                let mut s = 0.0;
                for v in &vals {
                    s += v;
                }
                assert!((avg.at(n, 0, y, x) - s / 5.0).abs() < 1e-15);
                assert_eq!(max.at(n, 0, y, x), vals.iter().cloned().fold(f64::MIN, f64::max));
            }
        }
    }
}

#[test]
fn shape_op_round_trips() {
    let mut rng = Rng::new(10);
    let a: Tensor<f32> = rng.normal_tensor([2, 2, 3, 3], 1.0);
    let b: Tensor<f32> = rng.normal_tensor([2, 3, 3, 3], 1.0);
    let g = Graph::new();
    let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
    let cat = g.concat_channels(&[av, bv]).unwrap();
    assert_eq!(cat.shape().c(), 5);
    let parts = g.split_channels(cat, &[2, 3]).unwrap();
    assert_eq!(g.tensor(parts[0]), a);
    assert_eq!(g.tensor(parts[1]), b);
    assert!(g.split_channels(cat, &[2, 2]).is_err());

    let r = g.reshape(av, [2, 1, 2, 9]).unwrap();
    let back = g.reshape(r, [2, 2, 3, 3]).unwrap();
    assert_eq!(g.tensor(back), a);

    let p = g.permute(bv, [0, 2, 3, 1]).unwrap();
    assert_eq!(p.shape(), Shape::new(2, 3, 3, 3));
    let q = g.permute(p, [0, 3, 1, 2]).unwrap();
    assert_eq!(g.tensor(q), b);
    assert!(g.permute(bv, [0, 0, 1, 2]).is_err());
}

#[test]
fn elementwise_cases() {
    let g = Graph::<f64>::new();
    let z = g.constant(Tensor::zeros([1, 1, 1, 1]));
    let s = g.sigmoid(z).unwrap();
    assert_eq!(g.value(s).item(), 0.5);

    let one = g.constant(Tensor::scalar(1.0));
    let ge = g.gelu(one).unwrap();
    let direct = 0.5 * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (1.0 + 0.044715)).tanh());
    assert!((g.value(ge).item() - direct).abs() < 1e-15);
    assert!((direct - 0.8412).abs() < 1e-4);

    let mut rng = Rng::new(11);
    let x: Tensor<f64> = rng.normal_tensor([2, 4, 3, 3], 1.0);
    let xv = g.constant(x.clone());
    let ones = g.constant(Tensor::ones([2, 1, 3, 3]));
    let prod = g.mul(xv, ones).unwrap();
    assert_eq!(g.tensor(prod), x);
    let prod = g.mul(ones, xv).unwrap();
    assert_eq!(g.tensor(prod), x);

    let bad = g.constant(Tensor::ones([2, 2, 3, 3]));
    assert!(g.binary(BinaryOp::Add, xv, bad).is_err());
}

#[test]
fn reductions() {
    let g = Graph::<f64>::new();
    let c = g.constant(Tensor::full([2, 3, 4, 5], -0.75));
    let m = g.mean_abs(c).unwrap();
    assert_eq!(g.value(m).item(), 0.75);
    let z = g.constant(Tensor::zeros([1, 2, 3, 3]));
    let s = g.sum(z).unwrap();
    assert_eq!(g.value(s).item(), 0.0);

    let mut rng = Rng::new(12);
    let x: Tensor<f32> = rng.normal_tensor([4, 16, 32, 32], 1.0);
    let gf = Graph::<f32>::new();
    let xv = gf.constant(x.clone());
    let s = gf.sum(xv).unwrap();
    let got = gf.value(s).item() as f64;
    // Kahan-compensated oracle.
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &v in x.data() {
        let y = v as f64 - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    assert!(((got - sum) / sum).abs() < 1e-6, "{got} vs {sum}");
}

#[test]
fn backward_simple_cases() {
    let mut rng = Rng::new(13);
    let x: Tensor<f64> = rng.normal_tensor([1, 2, 3, 3], 1.0);
    let g = Graph::new();
    let xv = g.leaf(x.clone());
    let s = g.sum(xv).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.get(xv).unwrap().data().iter().all(|&v| v == 1.0));
    assert!(matches!(g.backward(s), Err(Error::StaleTape)));

    let g = Graph::new();
    let xv = g.leaf(x.clone());
    let sq = g.mul(xv, xv).unwrap();
    assert!(matches!(g.backward(sq), Err(Error::NonScalarLoss(_))));
    let s = g.sum(sq).unwrap();
    let grads = g.backward(s).unwrap();
    let expect = x.map(|v| 2.0 * v);
    assert!(grads.get(xv).unwrap().max_abs_diff(&expect) < 1e-15);
}

#[test]
fn non_finite_is_an_error() {
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::full([1, 1, 1, 1], 1e300));
    assert!(matches!(g.mul(x, x), Err(Error::NonFinite { .. })));
}

fn check(f: impl Fn(&Graph<f64>, &[Var]) -> Result<Var, Error>, params: Vec<Tensor<f64>>) -> f64 {
    let r = grad_check(f, &params, &GradCheckConfig { samples: 150, ..Default::default() }).unwrap();
    assert!(r.checked >= 100.min(params.iter().map(|p| p.numel()).sum()));
    r.max_rel_err
}

/// Random linear functional, so every output element matters.
fn project(g: &Graph<f64>, y: Var, seed: u64) -> Result<Var, Error> {
    let w = g.constant(Rng::new(seed).normal_tensor(y.shape(), 1.0));
    let m = g.mul(y, w)?;
    g.sum(m)
}

#[test]
fn every_adjoint_passes_grad_check() {
    let mut rng = Rng::new(14);
    let mut t = |s: [usize; 4]| -> Tensor<f64> { rng.normal_tensor(s, 1.0) };
    let tol = 1e-5;
    let cases: Vec<(&str, f64)> = vec![
        ("conv2d", check(|g, p| { let y = g.conv2d(p[0], p[1], Some(p[2]), ConvOptions::same(3))?; project(g, y, 1) }, vec![t([2, 3, 5, 5]), t([4, 3, 3, 3]), t([1, 1, 1, 4])])),
        ("conv2d strided", check(|g, p| { let y = g.conv2d(p[0], p[1], Some(p[2]), ConvOptions::strided(2, 1))?; project(g, y, 2) }, vec![t([2, 3, 6, 6]), t([4, 3, 3, 3]), t([1, 1, 1, 4])])),
        ("conv2d depthwise", check(|g, p| { let y = g.conv2d(p[0], p[1], Some(p[2]), ConvOptions::depthwise(5, 3))?; project(g, y, 3) }, vec![t([2, 3, 5, 5]), t([3, 1, 5, 5]), t([1, 1, 1, 3])])),
        ("conv_transpose2d", check(|g, p| { let y = g.conv_transpose2d(p[0], p[1], Some(p[2]), TransposedConvOptions { stride: 2, padding: 1, output_padding: 1 })?; project(g, y, 4) }, vec![t([2, 3, 3, 3]), t([3, 2, 3, 3]), t([1, 1, 1, 2])])),
        ("matmul", check(|g, p| { let y = g.matmul(p[0], p[1])?; project(g, y, 5) }, vec![t([2, 2, 3, 4]), t([2, 2, 4, 5])])),
        ("matmul_nt", check(|g, p| { let y = g.matmul_nt(p[0], p[1])?; project(g, y, 6) }, vec![t([2, 2, 3, 4]), t([2, 2, 5, 4])])),
        ("softmax", check(|g, p| { let y = g.softmax(p[0], 3)?; project(g, y, 7) }, vec![t([2, 2, 3, 4])])),
        ("softmax axis1", check(|g, p| { let y = g.softmax(p[0], 1)?; project(g, y, 8) }, vec![t([2, 3, 3, 4])])),
        ("layer_norm", check(|g, p| { let y = g.layer_norm(p[0], p[1], p[2])?; project(g, y, 9) }, vec![t([2, 4, 3, 3]), t([1, 1, 1, 4]), t([1, 1, 1, 4])])),
        ("channel_pool avg", check(|g, p| { let y = g.channel_pool(p[0], PoolKind::Avg)?; project(g, y, 10) }, vec![t([2, 4, 3, 3])])),
        ("channel_pool max", check(|g, p| { let y = g.channel_pool(p[0], PoolKind::Max)?; project(g, y, 11) }, vec![t([2, 4, 3, 3])])),
        ("concat/split", check(|g, p| { let c = g.concat_channels(&[p[0], p[1]])?; let s = g.split_channels(c, &[1, 4])?; let m = g.mul(s[0], s[1])?; project(g, m, 12) }, vec![t([2, 2, 3, 3]), t([2, 3, 3, 3])])),
        ("reshape/permute", check(|g, p| { let r = g.reshape(p[0], [2, 3, 1, 9])?; let q = g.permute(r, [0, 3, 1, 2])?; project(g, q, 13) }, vec![t([2, 3, 3, 3])])),
        ("add/sub broadcast", check(|g, p| { let a = g.add(p[0], p[1])?; let s = g.sub(p[1], a)?; project(g, s, 14) }, vec![t([2, 3, 3, 3]), t([2, 1, 3, 3])])),
        ("mul broadcast", check(|g, p| { let m = g.mul(p[0], p[1])?; project(g, m, 15) }, vec![t([2, 3, 3, 3]), t([2, 1, 3, 3])])),
        ("sigmoid", check(|g, p| { let y = g.sigmoid(p[0])?; project(g, y, 16) }, vec![t([2, 3, 3, 3])])),
        ("gelu", check(|g, p| { let y = g.gelu(p[0])?; project(g, y, 17) }, vec![t([2, 3, 3, 3])])),
        ("scale", check(|g, p| { let y = g.scale(p[0], -0.3)?; project(g, y, 18) }, vec![t([2, 3, 3, 3])])),
        ("mean", check(|g, p| { let y = g.mul(p[0], p[0])?; g.mean(y) }, vec![t([2, 3, 3, 3])])),
        ("mean_abs", check(|g, p| g.mean_abs(p[0]), vec![t([2, 3, 3, 3])])),
        ("sample_mean", check(|g, p| { let y = g.sample_mean(p[0])?; project(g, y, 19) }, vec![t([3, 2, 3, 3])])),
        ("bce", check(|g, p| { let a = g.bce_with_logits(p[0], 1.0)?; let b = g.bce_with_logits(p[0], 0.0)?; let s = g.add(a, b)?; project(g, s, 20) }, vec![t([3, 1, 2, 2])])),
    ];
    for (name, err) in &cases {
        assert!(*err < tol, "{name}: max rel err {err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_is_linear(seed in 0u64..1000, alpha in -3.0f64..3.0) {
        let mut rng = Rng::new(seed);
        let x1: Tensor<f32> = rng.normal_tensor([1, 3, 6, 6], 1.0);
        let x2: Tensor<f32> = rng.normal_tensor([1, 3, 6, 6], 1.0);
        let w: Tensor<f32> = rng.normal_tensor([2, 3, 3, 3], 0.5);
        let g = Graph::new();
        let wv = g.constant(w.clone());
        let (a, b) = (g.constant(x1.clone()), g.constant(x2.clone()));
        let sa = g.scale(a, alpha).unwrap();
        let mix = g.add(sa, b).unwrap();
        let lhs = g.conv2d(mix, wv, None, ConvOptions::same(3)).unwrap();
        let ca = g.conv2d(a, wv, None, ConvOptions::same(3)).unwrap();
        let cb = g.conv2d(b, wv, None, ConvOptions::same(3)).unwrap();
        let sca = g.scale(ca, alpha).unwrap();
        let rhs = g.add(sca, cb).unwrap();
        prop_assert!(g.tensor(lhs).max_abs_diff(&g.tensor(rhs)) < 1e-5);
        // and linear in the kernel
        let w2: Tensor<f32> = rng.normal_tensor([2, 3, 3, 3], 0.5);
        let (wa, wb) = (g.constant(w), g.constant(w2));
        let swa = g.scale(wa, alpha).unwrap();
        let wmix = g.add(swa, wb).unwrap();
        let lhs = g.conv2d(a, wmix, None, ConvOptions::same(3)).unwrap();
        let c1 = g.conv2d(a, wa, None, ConvOptions::same(3)).unwrap();
        let c2 = g.conv2d(a, wb, None, ConvOptions::same(3)).unwrap();
        let s1 = g.scale(c1, alpha).unwrap();
        let rhs = g.add(s1, c2).unwrap();
        prop_assert!(g.tensor(lhs).max_abs_diff(&g.tensor(rhs)) < 1e-5);
    }

    #[test]
    fn softmax_sums_to_one_and_ignores_shift(seed in 0u64..1000, shift in -50.0f64..50.0) {
        let mut rng = Rng::new(seed);
        let x: Tensor<f64> = rng.normal_tensor([2, 3, 4, 6], 3.0);
        let g = Graph::new();
        let xv = g.constant(x.clone());
        let s = g.softmax(xv, 3).unwrap();
        let shifted = g.constant(x.map(|v| v + shift));
        let s2 = g.softmax(shifted, 3).unwrap();
        let (a, b) = (g.tensor(s), g.tensor(s2));
        prop_assert!(a.max_abs_diff(&b) < 1e-7);
        for row in a.data().chunks(6) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn split_inverts_concat(seed in 0u64..1000, c1 in 1usize..4, c2 in 1usize..4) {
        let mut rng = Rng::new(seed);
        let a: Tensor<f32> = rng.normal_tensor([2, c1, 3, 2], 1.0);
        let b: Tensor<f32> = rng.normal_tensor([2, c2, 3, 2], 1.0);
        let g = Graph::new();
        let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
        let cat = g.concat_channels(&[av, bv]).unwrap();
        let parts = g.split_channels(cat, &[c1, c2]).unwrap();
        prop_assert_eq!(g.tensor(parts[0]).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(g.tensor(parts[1]), b);
    }
}
