mod common;

use aminet::data::{synth_face, Dataset, Manifest};
use aminet::network::{build, checkpoint, ArchConfig, Aminet, ParamGrads, ParamStore};
use aminet::tensor::Graph;
use aminet::training::*;
use aminet::{Error, Rng, Tensor};
use common::{conv, map, T4};

fn rand_t(rng: &mut Rng, shape: [usize; 4]) -> T4 {
    rng.uniform_tensor(shape, 0.0, 1.0)
}

fn scalar(g: &Graph<f64>, v: aminet::Var) -> f64 {
    g.value(v).item()
}

// ---- losses ---------------------------------------------------------------

#[test]
fn pixel_loss_values() {
    let g = Graph::<f64>::new();
    let a = g.constant(Tensor::full([1, 3, 4, 4], 0.5));
    let b = g.constant(Tensor::full([1, 3, 4, 4], 0.25));
    assert_eq!(scalar(&g, pixel_loss(&g, a, a).unwrap()), 0.0);
    assert!((scalar(&g, pixel_loss(&g, a, b).unwrap()) - 0.25).abs() < 1e-15);

    let mut rng = Rng::new(1);
    let (x, y) = (rand_t(&mut rng, [2, 3, 5, 6]), rand_t(&mut rng, [2, 3, 5, 6]));
    let oracle = x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.numel() as f64;
    let got = scalar(&g, pixel_loss(&g, g.constant(x), g.constant(y)).unwrap());
    assert!((got - oracle).abs() < 1e-14);
    let c = g.constant(Tensor::zeros([1, 3, 4, 5]));
    assert!(matches!(pixel_loss(&g, a, c), Err(Error::Shape { .. })));
}

#[test]
fn perceptual_loss_matches_direct_evaluation() {
    let proxy = PerceptualProxy::<f64>::new(PERCEPTUAL_SEED);
    assert_eq!(proxy, PerceptualProxy::new(PERCEPTUAL_SEED));
    assert_ne!(proxy, PerceptualProxy::new(PERCEPTUAL_SEED + 1));
    let mut rng = Rng::new(2);
    for _ in 0..3 {
        let (sr, hr) = (rand_t(&mut rng, [2, 3, 16, 16]), rand_t(&mut rng, [2, 3, 16, 16]));
        let mut oracle = 0.0;
        let (mut fs, mut fh) = (sr.clone(), hr.clone());
        for (w, b) in proxy.layers() {
            fs = map(&conv(&fs, w, Some(b), 2, 1, 1), common::gelu);
            fh = map(&conv(&fh, w, Some(b), 2, 1, 1), common::gelu);
            oracle += fs.data().iter().zip(fh.data()).map(|(p, q)| (p - q).abs()).sum::<f64>() / fs.numel() as f64;
        }
        let g = Graph::new();
        let got = scalar(&g, perceptual_loss(&g, g.constant(sr), g.constant(hr), &proxy).unwrap());
        assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
    }
}

#[test]
fn perceptual_loss_sees_structure() {
    let proxy = PerceptualProxy::<f64>::new(PERCEPTUAL_SEED);
    let img = synth_face(3, 32).unwrap().to_tensor::<f64>();
    // Reverse the pixel order within each channel plane.
    let shuffled = Tensor::from_fn([1, 3, 32, 32], |n, c, y, x| img.at(n, c, 31 - y, 31 - x));
    let g = Graph::new();
    let (a, s) = (g.constant(img), g.constant(shuffled));
    assert_eq!(scalar(&g, perceptual_loss(&g, a, a, &proxy).unwrap()), 0.0);
    assert_eq!(scalar(&g, pixel_loss(&g, s, s).unwrap()), 0.0);
    assert!(scalar(&g, perceptual_loss(&g, a, s, &proxy).unwrap()) > 1e-3);
}

#[test]
fn perceptual_proxy_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let proxy = PerceptualProxy::<f32>::new(9);
    let path = dir.path().join("pcp.amck");
    checkpoint::save(&path, &proxy.to_store(), &ArchConfig::default()).unwrap();
    assert_eq!(PerceptualProxy::<f32>::load(&path).unwrap(), proxy);
    assert!(PerceptualProxy::<f32>::from_store(&ParamStore::new()).is_err());
}

#[test]
fn adversarial_closed_forms() {
    let g = Graph::<f64>::new();
    let zero = g.constant(Tensor::zeros([3, 1, 2, 2]));
    let (ld, la) = adversarial_losses(&g, zero, zero).unwrap();
    let ln2 = std::f64::consts::LN_2;
    assert!((scalar(&g, ld) - 2.0 * ln2).abs() < 1e-12);
    assert!((scalar(&g, la) - ln2).abs() < 1e-12);

    let real = g.constant(Tensor::full([2, 1, 2, 2], 1e3));
    let fake = g.constant(Tensor::full([2, 1, 2, 2], -1e3));
    let limit = 2.0 * (1.0 / (1.0 - 1e-7f64)).ln();
    assert!((scalar(&g, discriminator_loss(&g, real, fake).unwrap()) - limit).abs() < 1e-12);

    let nan = g.constant(Tensor::full([1, 1, 2, 2], f64::NAN));
    assert!(matches!(generator_adv_loss(&g, nan), Err(Error::NonFinite { .. })));
}

#[test]
fn adversarial_losses_match_formula() {
    let mut rng = Rng::new(4);
    let clamp = |p: f64| p.clamp(1e-7, 1.0 - 1e-7);
    for _ in 0..5 {
        let real: T4 = rng.normal_tensor([3, 1, 4, 4], 2.0);
        let fake: T4 = rng.normal_tensor([3, 1, 4, 4], 2.0);
        let d = |t: &T4| -> Vec<f64> {
            t.data().chunks(16).map(|c| common::sigmoid(c.iter().sum::<f64>() / 16.0)).collect()
        };
        let (dr, df) = (d(&real), d(&fake));
        let want_dis = -dr.iter().map(|p| clamp(*p).ln()).sum::<f64>() / 3.0
            - df.iter().map(|p| (1.0 - clamp(*p)).ln()).sum::<f64>() / 3.0;
        let want_adv = -df.iter().map(|p| clamp(*p).ln()).sum::<f64>() / 3.0;
        let g = Graph::new();
        let (ld, la) = adversarial_losses(&g, g.constant(real), g.constant(fake)).unwrap();
        assert!((scalar(&g, ld) - want_dis).abs() < 1e-6);
        assert!((scalar(&g, la) - want_adv).abs() < 1e-6);
    }
}

#[test]
fn total_loss_is_the_weighted_sum() {
    let w = LossWeights::default();
    assert_eq!((w.pix, w.pcp, w.adv), (1.0, 0.01, 0.01));
    assert!((w.total(0.2, 1.0, 0.5) - 0.215).abs() < 1e-15);

    let g = Graph::<f64>::new();
    let k = |v: f64| g.constant(Tensor::scalar(v));
    let parts = |a, b, c| LossParts {
        pix: k(a),
        pcp: Some(k(b)),
        adv: Some(k(c)),
    };
    assert!((scalar(&g, total_loss(&g, &parts(0.2, 1.0, 0.5), &w).unwrap()) - 0.215).abs() < 1e-15);
    let zero = LossWeights {
        pix: 0.0,
        pcp: 0.0,
        adv: 0.0,
    };
    assert_eq!(scalar(&g, total_loss(&g, &parts(0.2, 1.0, 0.5), &zero).unwrap()), 0.0);

    // Linearity: moving one part by δ moves the total by λ·δ.
    let mut rng = Rng::new(5);
    for _ in 0..3 {
        let p = [rng.uniform(), rng.uniform(), rng.uniform()];
        let base = scalar(&g, total_loss(&g, &parts(p[0], p[1], p[2]), &w).unwrap());
        let lambdas = [w.pix, w.pcp, w.adv];
        for i in 0..3 {
            let mut q = p;
            q[i] += 0.37;
            let moved = scalar(&g, total_loss(&g, &parts(q[0], q[1], q[2]), &w).unwrap());
            assert!((moved - base - lambdas[i] * 0.37).abs() < 1e-12);
        }
    }
}

// ---- two-tape gradient isolation -------------------------------------------

fn tiny_gan() -> (ArchConfig, ParamStore<f64>, ParamStore<f64>, T4, T4) {
    let arch = ArchConfig::tiny(4, 32);
    let mut rng = Rng::new(6);
    let mut gen = build::<f64>(&arch, &mut rng).unwrap();
    aminet::network::randomize_output(&mut gen, &mut rng).unwrap();
    let disc = build_discriminator::<f64>(4, &mut rng).unwrap();
    let lr = rand_t(&mut rng, [2, 3, 32, 32]);
    let hr = rand_t(&mut rng, [2, 3, 32, 32]);
    (arch, gen, disc, lr, hr)
}

fn all_zero(grads: &ParamGrads<f64>) -> bool {
    grads.iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0))
}

#[test]
fn discriminator_loss_does_not_reach_the_generator() {
    let (arch, gen, disc, lr, hr) = tiny_gan();
    // Both networks trainable on one tape; the generated image is detached
    // before it meets the discriminator.
    let g = Graph::new();
    let gb = gen.bind(&g);
    let sr = Aminet::bind(&gb, &arch).unwrap().forward(&g, g.constant(lr)).unwrap();
    let db = disc.bind(&g);
    let real = disc_forward(&g, &db, g.constant(hr)).unwrap();
    let fake = disc_forward(&g, &db, g.detach(sr)).unwrap();
    let loss = discriminator_loss(&g, real, fake).unwrap();
    let mut grads = g.backward(loss).unwrap();
    assert!(all_zero(&gb.collect_grads(&mut grads).unwrap()));
    assert!(!all_zero(&db.collect_grads(&mut grads).unwrap()));
}

#[test]
fn adversarial_loss_does_not_reach_the_discriminator() {
    let (arch, gen, disc, lr, _) = tiny_gan();
    let g = Graph::new();
    let gb = gen.bind(&g);
    let sr = Aminet::bind(&gb, &arch).unwrap().forward(&g, g.constant(lr)).unwrap();
    let db = disc.bind_frozen(&g);
    let loss = generator_adv_loss(&g, disc_forward(&g, &db, sr).unwrap()).unwrap();
    let mut grads = g.backward(loss).unwrap();
    for (name, v) in db.iter() {
        assert!(grads.get(v).is_none(), "{name} received a gradient");
    }
    assert!(!all_zero(&gb.collect_grads(&mut grads).unwrap()));
}

#[test]
fn discriminator_output_is_one_sixteenth() {
    let disc = build_discriminator::<f32>(32, &mut Rng::new(0)).unwrap();
    assert_eq!(disc.get("d.conv4.w").unwrap().shape().0, [256, 128, 3, 3]);
    let g = Graph::new();
    let b = disc.bind_frozen(&g);
    let y = disc_forward(&g, &b, g.constant(Tensor::zeros([2, 3, 128, 96]))).unwrap();
    assert_eq!(y.shape().0, [2, 1, 8, 6]);
}

// ---- Adam -----------------------------------------------------------------

fn one_param(v: f64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.insert("p", Tensor::full([1, 1, 1, 3], v)).unwrap();
    s
}

fn grads_of(v: Vec<f64>) -> ParamGrads<f64> {
    ParamGrads::from_pairs([("p".to_string(), Tensor::from_vec([1, 1, 1, 3], v).unwrap())])
}

#[test]
fn adam_first_step_moves_by_lr() {
    let cfg = AdamConfig::default();
    let mut s = one_param(1.0);
    let mut adam = Adam::new(cfg);
    let g = [0.3, -2.0, 1e-3];
    adam.step(&mut s, &grads_of(g.to_vec())).unwrap();
    for (i, &gi) in g.iter().enumerate() {
        let delta = s.get("p").unwrap().data()[i] - 1.0;
        let want = -cfg.lr * gi.signum();
        assert!((delta - want).abs() <= cfg.lr * cfg.eps / gi.abs() * 1.01, "{delta} vs {want}");
    }
}

#[test]
fn adam_zero_gradient_leaves_parameters() {
    let mut s = one_param(0.7);
    let before = s.clone();
    let mut adam = Adam::new(AdamConfig::default());
    adam.step(&mut s, &grads_of(vec![0.0; 3])).unwrap();
    assert_eq!(s, before);
    assert_eq!(adam.steps(), 1);
    let err = adam.step(&mut s, &ParamGrads::from_pairs([])).unwrap_err();
    assert!(matches!(err, Error::MissingGradient(ref n) if n == "p"));
    assert_eq!(adam.steps(), 1);
}

#[test]
fn adam_trajectory_matches_reference() {
    // Minimize Σ a_i (θ_i − c_i)² for five steps with both implementations.
    let a = [0.5, 2.0, 7.0];
    let c = [1.0, -3.0, 0.25];
    let grad = |th: &[f64]| -> Vec<f64> { (0..3).map(|i| 2.0 * a[i] * (th[i] - c[i])).collect() };
    let cfg = AdamConfig {
        lr: 0.05,
        ..AdamConfig::default()
    };

    let mut th = vec![0.2, 0.4, -0.6];
    let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
    let mut reference = Vec::new();
    for t in 1..=5 {
        let gr = grad(&th);
        for i in 0..3 {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gr[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gr[i] * gr[i];
            let mh = m[i] / (1.0 - cfg.beta1.powi(t));
            let vh = v[i] / (1.0 - cfg.beta2.powi(t));
            th[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
        reference.push(th.clone());
    }

    let mut store = ParamStore::new();
    store.insert("p", Tensor::from_vec([1, 1, 1, 3], vec![0.2, 0.4, -0.6]).unwrap()).unwrap();
    let mut adam = Adam::new(cfg);
    for want in &reference {
        let gr = grad(store.get("p").unwrap().data());
        adam.step(&mut store, &grads_of(gr)).unwrap();
        for (got, w) in store.get("p").unwrap().data().iter().zip(want) {
            assert!((got - w).abs() < 1e-10);
        }
    }
}

#[test]
fn adam_first_step_is_scale_equivariant() {
    let cfg = AdamConfig {
        eps: 0.0,
        ..AdamConfig::default()
    };
    let g = [0.3, -2.0, 0.05];
    let step = |c: f64| {
        let mut s = one_param(0.0);
        Adam::new(cfg)
            .step(&mut s, &grads_of(g.iter().map(|v| v * c).collect()))
            .unwrap();
        s.get("p").unwrap().clone()
    };
    let base = step(1.0);
    for c in [0.1, 10.0] {
        assert!(step(c).max_abs_diff(&base) < 1e-6 * cfg.lr);
    }
}

// ---- training loops -------------------------------------------------------

fn toy(count: usize) -> (ArchConfig, Dataset) {
    let arch = ArchConfig::tiny(4, 32);
    let mut m = Manifest::synthetic(count, 20, 32);
    m.scale = 4;
    (arch, Dataset::load(&m, 32).unwrap())
}

fn plan(batch_size: usize) -> BatchPlan {
    BatchPlan {
        batch_size,
        shuffle_seed: 3,
    }
}

#[test]
fn first_loss_is_the_bicubic_residual() {
    let (arch, data) = toy(4);
    let mut store = build::<f32>(&arch, &mut Rng::new(0)).unwrap();
    let cfg = TrainConfig {
        steps: 1,
        batch: Some(4),
        ..TrainConfig::default()
    };
    let s = train(&mut store, &arch, &data, plan(4), &cfg, RunOutput::default()).unwrap();
    let residual: f64 = data
        .samples
        .iter()
        .flat_map(|s| s.lr_up.data().iter().zip(s.hr.data()))
        .map(|(a, b)| f64::from((a - b).abs()))
        .sum::<f64>()
        / (4 * 3 * 32 * 32) as f64;
    assert!((s.losses[0] - residual).abs() < 1e-6, "{} vs {residual}", s.losses[0]);
}

#[test]
fn training_is_bit_deterministic_and_logs_each_step() {
    let (arch, data) = toy(3);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        steps: 10,
        checkpoint_every: 3,
        ..TrainConfig::default()
    };
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        std::fs::create_dir_all(&out).unwrap();
        let mut log = Vec::new();
        let mut store = build::<f32>(&arch, &mut Rng::new(cfg.seed)).unwrap();
        let s = train(
            &mut store,
            &arch,
            &data,
            plan(2),
            &cfg,
            RunOutput {
                log: Some(&mut log),
                checkpoint_dir: Some(&out),
            },
        )
        .unwrap();
        (s, log, std::fs::read(out.join(FINAL_CHECKPOINT)).unwrap())
    };
    let (s1, log1, ck1) = run("a");
    let (s2, log2, ck2) = run("b");
    assert_eq!(ck1, ck2);
    assert_eq!(log1, log2);
    assert_eq!(s1.losses, s2.losses);
    // Steps 0, 3, 6, 9 plus the final checkpoint.
    assert_eq!(s1.checkpoints.len(), 10usize.div_ceil(3) + 1);
    assert!(s1.checkpoints[0].ends_with(checkpoint_name(0)));
    let lines: Vec<StepRecord> = String::from_utf8(log1)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 10);
    assert_eq!(lines[9].step, 9);
    assert!(lines.iter().all(|r| r.loss.is_finite() && r.psnr_train > 10.0));
    assert!(s1.losses[9] != s1.losses[0]);
}

#[test]
fn divergence_reports_the_step() {
    let (arch, data) = toy(2);
    let mut store = build::<f32>(&arch, &mut Rng::new(0)).unwrap();
    let cfg = TrainConfig {
        steps: 20,
        lr: 1e30,
        ..TrainConfig::default()
    };
    match train(&mut store, &arch, &data, plan(1), &cfg, RunOutput::default()) {
        Err(Error::Divergence { step, lr, .. }) => {
            assert!(step > 0);
            assert_eq!(lr, 1e30);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn gan_with_zero_adversarial_weights_follows_plain_training() {
    let (arch, data) = toy(3);
    let base = TrainConfig {
        steps: 6,
        lr: 3e-4,
        lr_g: 3e-4,
        loss_weights: LossWeights::pixel_only(),
        disc_base: 4,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let mut plain = build::<f32>(&arch, &mut Rng::new(0)).unwrap();
    let mut gan = plain.clone();
    let a = train(&mut plain, &arch, &data, plan(2), &base, RunOutput::default()).unwrap();
    let (b, _) = train_gan(&mut gan, &arch, &data, plan(2), &base, RunOutput::default()).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(plain, gan);
}

#[test]
fn gan_losses_stay_finite() {
    let (arch, data) = toy(4);
    let mut gen = build::<f32>(&arch, &mut Rng::new(0)).unwrap();
    let cfg = TrainConfig {
        steps: 1000,
        disc_base: 8,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let mut log = Vec::new();
    train_gan(
        &mut gen,
        &arch,
        &data,
        plan(2),
        &cfg,
        RunOutput {
            log: Some(&mut log),
            checkpoint_dir: None,
        },
    )
    .unwrap();
    let recs: Vec<GanStepRecord> = String::from_utf8(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(recs.len(), 1000);
    for r in &recs {
        assert!(r.loss.is_finite() && r.loss_d.is_finite() && r.loss_adv > 0.0 && r.loss_pcp > 0.0);
        assert!((r.loss - LossWeights::default().total(r.loss_pix, r.loss_pcp, r.loss_adv)).abs() < 1e-5);
    }
}

#[test]
fn discriminator_learns_real_versus_noise() {
    let mut rng = Rng::new(11);
    let mut disc = build_discriminator::<f32>(32, &mut rng).unwrap();
    let mut adam = Adam::new(AdamConfig::with_lr(4e-4));
    let faces: Vec<Tensor<f32>> = (0..16).map(|s| synth_face(s, 32).unwrap().to_tensor()).collect();
    let mut reached = None;
    for step in 0..200 {
        let idx: Vec<usize> = (0..4).map(|_| rng.below(16)).collect();
        let real = Tensor::stack(&idx.iter().map(|&i| faces[i].clone()).collect::<Vec<_>>()).unwrap();
        let fake = rng.uniform_tensor([4, 3, 32, 32], 0.0, 1.0);
        let (_, acc) = discriminator_step(&mut disc, &mut adam, &real, &fake).unwrap();
        if acc > 0.95 && reached.is_none() {
            reached = Some(step);
        }
    }
    // Evaluate on fresh samples.
    let real = Tensor::stack(&faces[..8]).unwrap();
    let fake = rng.uniform_tensor::<f32>([8, 3, 32, 32], 0.0, 1.0);
    let g = Graph::new();
    let b = disc.bind_frozen(&g);
    let score = |t: Tensor<f32>| g.tensor(g.sample_mean(disc_forward(&g, &b, g.constant(t)).unwrap()).unwrap());
    let (r, f) = (score(real), score(fake));
    let correct = r.data().iter().filter(|&&v| v > 0.0).count() + f.data().iter().filter(|&&v| v < 0.0).count();
    assert!(reached.is_some(), "batch accuracy never exceeded 0.95");
    assert!(correct as f64 / 16.0 > 0.95, "{correct}/16");
}
