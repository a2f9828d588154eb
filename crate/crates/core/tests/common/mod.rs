//! Plain-loop reference implementations of every block and of the full
//! network, written directly from the block definitions without touching the
//! tape. Parameters are looked up by name in a store.

#![allow(dead_code)]

use aminet::network::ParamStore;
use aminet::Tensor;

pub type T4 = Tensor<f64>;

pub fn param<'a>(store: &'a ParamStore<f64>, name: &str) -> &'a T4 {
    store
        .get(name)
        .unwrap_or_else(|| panic!("oracle: missing parameter {name}"))
}

pub fn conv(x: &T4, w: &T4, b: Option<&T4>, stride: usize, pad: usize, groups: usize) -> T4 {
    let [n, cin, h, wd] = x.shape().0;
    let [cout, cin_g, kh, kw] = w.shape().0;
    assert_eq!(cin_g * groups, cin, "oracle conv: channel mismatch");
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let cout_g = cout / groups;
    Tensor::from_fn([n, cout, ho, wo], |ni, co, oy, ox| {
        let grp = co / cout_g;
        let mut acc = b.map_or(0.0, |b| b.data()[co]);
        for ci in 0..cin_g {
            for ky in 0..kh {
                for kx in 0..kw {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                        acc += w.at(co, ci, ky, kx) * x.at(ni, grp * cin_g + ci, iy as usize, ix as usize);
                    }
                }
            }
        }
        acc
    })
}

/// Scatter form of the transposed convolution; `w` is (C_in, C_out, k, k).
pub fn tconv(x: &T4, w: &T4, b: Option<&T4>, stride: usize, pad: usize, out_pad: usize) -> T4 {
    let [n, cin, h, wd] = x.shape().0;
    let [_, cout, kh, kw] = w.shape().0;
    let ho = (h - 1) * stride + kh + out_pad - 2 * pad;
    let wo = (wd - 1) * stride + kw + out_pad - 2 * pad;
    let mut out = vec![0.0; n * cout * ho * wo];
    for ni in 0..n {
        for ci in 0..cin {
            for iy in 0..h {
                for ix in 0..wd {
                    let v = x.at(ni, ci, iy, ix);
                    for co in 0..cout {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let oy = (iy * stride + ky) as isize - pad as isize;
                                let ox = (ix * stride + kx) as isize - pad as isize;
                                if oy >= 0 && ox >= 0 && (oy as usize) < ho && (ox as usize) < wo {
                                    out[((ni * cout + co) * ho + oy as usize) * wo + ox as usize] +=
                                        v * w.at(ci, co, ky, kx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let mut t = Tensor::from_vec([n, cout, ho, wo], out).unwrap();
    if let Some(b) = b {
        t = Tensor::from_fn([n, cout, ho, wo], |ni, co, y, xx| t.at(ni, co, y, xx) + b.data()[co]);
    }
    t
}

/// Named conv `name.w` / `name.b` with "same" padding.
pub fn conv_named(store: &ParamStore<f64>, name: &str, x: &T4, groups: usize) -> T4 {
    let w = param(store, &format!("{name}.w"));
    let b = param(store, &format!("{name}.b"));
    conv(x, w, Some(b), 1, w.shape().h() / 2, groups)
}

pub fn gelu(v: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * v * (1.0 + (k * (v + 0.044715 * v.powi(3))).tanh())
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn map(x: &T4, f: impl Fn(f64) -> f64) -> T4 {
    Tensor::from_fn(x.shape(), |n, c, y, xx| f(x.at(n, c, y, xx)))
}

pub fn add(a: &T4, b: &T4) -> T4 {
    assert_eq!(a.shape(), b.shape());
    Tensor::from_fn(a.shape(), |n, c, y, x| a.at(n, c, y, x) + b.at(n, c, y, x))
}

pub fn mul(a: &T4, b: &T4) -> T4 {
    assert_eq!(a.shape(), b.shape());
    Tensor::from_fn(a.shape(), |n, c, y, x| a.at(n, c, y, x) * b.at(n, c, y, x))
}

/// `a` scaled per pixel by the single-channel map `m`.
pub fn weight(a: &T4, m: &T4) -> T4 {
    assert_eq!(m.shape().c(), 1);
    Tensor::from_fn(a.shape(), |n, c, y, x| a.at(n, c, y, x) * m.at(n, 0, y, x))
}

pub fn concat(parts: &[&T4]) -> T4 {
    let s = parts[0].shape();
    let total: usize = parts.iter().map(|p| p.shape().c()).sum();
    Tensor::from_fn([s.n(), total, s.h(), s.w()], |n, c, y, x| {
        let mut c = c;
        for p in parts {
            if c < p.shape().c() {
                return p.at(n, c, y, x);
            }
            c -= p.shape().c();
        }
        unreachable!()
    })
}

pub fn channel(x: &T4, c0: usize) -> T4 {
    let s = x.shape();
    Tensor::from_fn([s.n(), 1, s.h(), s.w()], |n, _, y, xx| x.at(n, c0, y, xx))
}

pub fn layer_norm(x: &T4, g: &T4, b: &T4) -> T4 {
    let s = x.shape();
    let c = s.c() as f64;
    Tensor::from_fn(s, |n, ci, y, xx| {
        let mean = (0..s.c()).map(|k| x.at(n, k, y, xx)).sum::<f64>() / c;
        let var = (0..s.c()).map(|k| (x.at(n, k, y, xx) - mean).powi(2)).sum::<f64>() / c;
        (x.at(n, ci, y, xx) - mean) / (var + 1e-6).sqrt() * g.data()[ci] + b.data()[ci]
    })
}

pub fn norm_named(store: &ParamStore<f64>, name: &str, x: &T4) -> T4 {
    layer_norm(
        x,
        param(store, &format!("{name}.g")),
        param(store, &format!("{name}.b")),
    )
}

pub fn sa(store: &ParamStore<f64>, prefix: &str, x: &T4, heads: usize) -> T4 {
    let s = x.shape();
    let (c, hw) = (s.c(), s.plane());
    let proj = |part: &str| {
        let pw = conv_named(store, &format!("{prefix}.{part}.pw"), x, 1);
        conv_named(store, &format!("{prefix}.{part}.dw"), &pw, c)
    };
    let (q, k, v) = (proj("q"), proj("k"), proj("v"));
    let ch = c / heads;
    let scale = 1.0 / (hw as f64).sqrt();
    let flat = |t: &T4, n: usize, ci: usize, p: usize| t.at(n, ci, p / s.w(), p % s.w());
    let mut mixed = vec![0.0; s.numel()];
    for n in 0..s.n() {
        for h in 0..heads {
            let base = h * ch;
            for i in 0..ch {
                let logits: Vec<f64> = (0..ch)
                    .map(|j| (0..hw).map(|p| flat(&q, n, base + i, p) * flat(&k, n, base + j, p)).sum::<f64>() * scale)
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for p in 0..hw {
                    let acc: f64 = (0..ch).map(|j| e[j] / z * flat(&v, n, base + j, p)).sum();
                    mixed[(n * c + base + i) * hw + p] = acc;
                }
            }
        }
    }
    let mixed = Tensor::from_vec(s, mixed).unwrap();
    conv_named(store, &format!("{prefix}.out"), &mixed, 1)
}

pub fn frm(store: &ParamStore<f64>, prefix: &str, x: &T4) -> T4 {
    let z = norm_named(store, &format!("{prefix}.norm"), x);
    let z = conv_named(store, &format!("{prefix}.conv1"), &z, 1);
    let z = map(&z, gelu);
    let z = conv_named(store, &format!("{prefix}.conv2"), &z, 1);
    let d = conv(
        &z,
        param(store, &format!("{prefix}.down.w")),
        Some(param(store, &format!("{prefix}.down.b"))),
        2,
        1,
        1,
    );
    let d = map(&d, gelu);
    let out_pad = if x.shape().h().is_multiple_of(2) { 1 } else { 0 };
    let u = tconv(
        &d,
        param(store, &format!("{prefix}.up.w")),
        Some(param(store, &format!("{prefix}.up.b"))),
        2,
        1,
        out_pad,
    );
    add(x, &add(&z, &u))
}

/// Attention-unit weights f′ and the full RDFE output.
pub fn rdfe_parts(store: &ParamStore<f64>, prefix: &str, x: &T4, kernels: &[usize]) -> (T4, T4) {
    let c = x.shape().c();
    let feats: Vec<T4> = kernels
        .iter()
        .map(|k| conv_named(store, &format!("{prefix}.dw{k}"), x, c))
        .collect();
    let refs: Vec<&T4> = feats.iter().collect();
    let cat = concat(&refs);
    let a = conv_named(store, &format!("{prefix}.au1"), &cat, 1);
    let a = map(&a, gelu);
    let a = conv_named(store, &format!("{prefix}.au2"), &a, 1);
    let f_prime = map(&a, sigmoid);
    let modulated: Vec<T4> = feats.iter().map(|f| mul(f, &f_prime)).collect();
    let refs: Vec<&T4> = modulated.iter().collect();
    let merged = conv_named(store, &format!("{prefix}.merge"), &concat(&refs), 1);
    let f2 = add(&merged, x);
    (f_prime, frm(store, &format!("{prefix}.frm"), &f2))
}

pub fn rdfe(store: &ParamStore<f64>, prefix: &str, x: &T4, kernels: &[usize]) -> T4 {
    rdfe_parts(store, prefix, x, kernels).1
}

pub fn ffn(store: &ParamStore<f64>, prefix: &str, x: &T4) -> T4 {
    let h = conv_named(store, &format!("{prefix}.fc1"), x, 1);
    let h = map(&h, gelu);
    add(x, &conv_named(store, &format!("{prefix}.fc2"), &h, 1))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pool {
    Avg,
    Max,
    Both,
}

fn pool_ch(x: &T4, max: bool) -> T4 {
    let s = x.shape();
    Tensor::from_fn([s.n(), 1, s.h(), s.w()], |n, _, y, xx| {
        let vals = (0..s.c()).map(|c| x.at(n, c, y, xx));
        if max {
            vals.fold(f64::NEG_INFINITY, f64::max)
        } else {
            vals.sum::<f64>() / s.c() as f64
        }
    })
}

pub fn skaf(store: &ParamStore<f64>, prefix: &str, x: &T4, pool: Pool) -> (T4, T4) {
    let a = conv_named(store, &format!("{prefix}.k5"), x, 1);
    let b = conv_named(store, &format!("{prefix}.k7"), x, 1);
    let (p1, p2) = match pool {
        Pool::Both => {
            let x3 = concat(&[&a, &b]);
            (pool_ch(&x3, false), pool_ch(&x3, true))
        }
        Pool::Avg => (pool_ch(&a, false), pool_ch(&b, false)),
        Pool::Max => (pool_ch(&a, true), pool_ch(&b, true)),
    };
    (map(&p1, sigmoid), map(&p2, sigmoid))
}

pub fn edff(store: &ParamStore<f64>, prefix: &str, xe: &T4, xd: &T4, pool: Pool) -> T4 {
    let r = conv_named(store, &format!("{prefix}.reduce"), &concat(&[xe, xd]), 1);
    let (we, wd) = skaf(store, &format!("{prefix}.skaf"), &r, pool);
    add(&weight(xe, &we), &weight(xd, &wd))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Local {
    Rdfe(Vec<usize>),
    Ffn,
    Off,
}

#[derive(Clone, Debug)]
pub struct LgfiSpec {
    pub heads: usize,
    pub sa: bool,
    pub local: Local,
    pub skaf: bool,
    pub pool: Pool,
}

impl Default for LgfiSpec {
    fn default() -> Self {
        LgfiSpec {
            heads: 4,
            sa: true,
            local: Local::Rdfe(vec![3, 5, 7]),
            skaf: true,
            pool: Pool::Both,
        }
    }
}

pub fn lgfi(store: &ParamStore<f64>, prefix: &str, x: &T4, spec: &LgfiSpec) -> T4 {
    let n = norm_named(store, &format!("{prefix}.norm"), x);
    let xs = spec.sa.then(|| sa(store, &format!("{prefix}.sa"), &n, spec.heads));
    let xr = match &spec.local {
        Local::Rdfe(k) => Some(rdfe(store, &format!("{prefix}.rdfe"), &n, k)),
        Local::Ffn => Some(ffn(store, &format!("{prefix}.ffn"), &n)),
        Local::Off => None,
    };
    let half = |t: &T4| map(t, |v| 0.5 * v);
    let branch = match (&xs, &xr) {
        (Some(a), Some(b)) if spec.skaf => {
            let (wa, wb) = skaf(store, &format!("{prefix}.skaf"), &add(a, b), spec.pool);
            add(&weight(a, &wa), &weight(b, &wb))
        }
        (Some(a), Some(b)) => half(&add(a, b)),
        (Some(a), None) if spec.skaf => weight(a, &skaf(store, &format!("{prefix}.skaf"), a, spec.pool).0),
        (Some(a), None) => half(a),
        (None, Some(b)) if spec.skaf => weight(b, &skaf(store, &format!("{prefix}.skaf"), b, spec.pool).1),
        (None, Some(b)) => half(b),
        (None, None) => panic!("oracle: empty LGFI"),
    };
    add(x, &branch)
}

pub fn down(store: &ParamStore<f64>, name: &str, x: &T4) -> T4 {
    conv(
        x,
        param(store, &format!("{name}.w")),
        Some(param(store, &format!("{name}.b"))),
        2,
        1,
        1,
    )
}

pub fn up(store: &ParamStore<f64>, name: &str, x: &T4) -> T4 {
    tconv(
        x,
        param(store, &format!("{name}.w")),
        Some(param(store, &format!("{name}.b"))),
        2,
        0,
        0,
    )
}

pub fn max_abs_diff(a: &T4, b: &T4) -> f64 {
    assert_eq!(a.shape(), b.shape(), "oracle comparison shape mismatch");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Full network: stem, three (LGFI, down) encoders, two bottleneck LGFIs,
/// three (up, EDFF, LGFI) decoders, output conv plus the input.
pub fn aminet(store: &ParamStore<f64>, x: &T4, spec: &LgfiSpec, edff_on: bool) -> T4 {
    let mut f = conv_named(store, "stem.conv", x, 1);
    let mut skips = Vec::new();
    for i in 1..=3 {
        let e = lgfi(store, &format!("enc{i}.lgfi"), &f, spec);
        f = down(store, &format!("enc{i}.down"), &e);
        skips.push(e);
    }
    f = lgfi(store, "bott1.lgfi", &f, spec);
    f = lgfi(store, "bott2.lgfi", &f, spec);
    for i in 1..=3 {
        let u = up(store, &format!("dec{i}.up"), &f);
        let s = skips.pop().unwrap();
        let fused = if edff_on {
            edff(store, &format!("dec{i}.edff"), &s, &u, spec.pool)
        } else {
            add(&s, &u)
        };
        f = lgfi(store, &format!("dec{i}.lgfi"), &fused, spec);
    }
    add(&conv_named(store, "out.conv", &f, 1), x)
}

/// Every parameter (name, shape) the architecture description implies, in
/// no particular order.
pub fn enumerate_params(c: usize, spec: &LgfiSpec, reduction: usize, edff_on: bool) -> Vec<(String, [usize; 4])> {
    fn conv(out: &mut Vec<(String, [usize; 4])>, name: String, co: usize, ci: usize, k: usize) {
        out.push((format!("{name}.w"), [co, ci, k, k]));
        out.push((format!("{name}.b"), [1, 1, 1, co]));
    }
    let mut out = Vec::new();
    let lgfi_params = |out: &mut Vec<(String, [usize; 4])>, p: String, ch: usize| {
        out.push((format!("{p}.norm.g"), [1, 1, 1, ch]));
        out.push((format!("{p}.norm.b"), [1, 1, 1, ch]));
        if spec.sa {
            for part in ["q", "k", "v"] {
                conv(out, format!("{p}.sa.{part}.pw"), ch, ch, 1);
                conv(out, format!("{p}.sa.{part}.dw"), ch, 1, 3);
            }
            conv(out, format!("{p}.sa.out"), ch, ch, 1);
        }
        match &spec.local {
            Local::Rdfe(ks) => {
                for k in ks {
                    conv(out, format!("{p}.rdfe.dw{k}"), ch, 1, *k);
                }
                let wide = ch * ks.len();
                conv(out, format!("{p}.rdfe.au1"), ch / reduction, wide, 1);
                conv(out, format!("{p}.rdfe.au2"), ch, ch / reduction, 1);
                conv(out, format!("{p}.rdfe.merge"), ch, wide, 1);
                out.push((format!("{p}.rdfe.frm.norm.g"), [1, 1, 1, ch]));
                out.push((format!("{p}.rdfe.frm.norm.b"), [1, 1, 1, ch]));
                conv(out, format!("{p}.rdfe.frm.conv1"), ch, ch, 3);
                conv(out, format!("{p}.rdfe.frm.conv2"), ch, ch, 3);
                conv(out, format!("{p}.rdfe.frm.down"), ch, ch, 3);
                // Transposed kernels are stored (C_in, C_out, k, k).
                out.push((format!("{p}.rdfe.frm.up.w"), [ch, ch, 3, 3]));
                out.push((format!("{p}.rdfe.frm.up.b"), [1, 1, 1, ch]));
            }
            Local::Ffn => {
                conv(out, format!("{p}.ffn.fc1"), ch, ch, 1);
                conv(out, format!("{p}.ffn.fc2"), ch, ch, 1);
            }
            Local::Off => {}
        }
        if spec.skaf {
            conv(out, format!("{p}.skaf.k5"), ch, ch, 5);
            conv(out, format!("{p}.skaf.k7"), ch, ch, 7);
        }
    };

    conv(&mut out, "stem.conv".into(), c, 3, 3);
    for i in 1..=3 {
        let ch = c << (i - 1);
        lgfi_params(&mut out, format!("enc{i}.lgfi"), ch);
        conv(&mut out, format!("enc{i}.down"), 2 * ch, ch, 3);
    }
    lgfi_params(&mut out, "bott1.lgfi".into(), 8 * c);
    lgfi_params(&mut out, "bott2.lgfi".into(), 8 * c);
    for i in 1..=3 {
        let ch = (8 * c) >> i;
        out.push((format!("dec{i}.up.w"), [2 * ch, ch, 2, 2]));
        out.push((format!("dec{i}.up.b"), [1, 1, 1, ch]));
        if edff_on {
            conv(&mut out, format!("dec{i}.edff.reduce"), ch, 2 * ch, 1);
            conv(&mut out, format!("dec{i}.edff.skaf.k5"), ch, ch, 5);
            conv(&mut out, format!("dec{i}.edff.skaf.k7"), ch, ch, 7);
        }
        lgfi_params(&mut out, format!("dec{i}.lgfi"), ch);
    }
    conv(&mut out, "out.conv".into(), 3, c, 3);
    out
}
