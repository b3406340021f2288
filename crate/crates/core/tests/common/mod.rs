#![allow(dead_code)]

use ganlink::models::{
    AeConfig, Bidnn, BidnnConfig, CganConfig, DiscriminatorConfig, GeneratorConfig, ModelBundle, MultimodalAe, Presence,
};
use ganlink::tensor::gradcheck::{finite_diff_check, finite_diff_check_param, GradCheckReport};
use ganlink::tensor::{with_precision, BatchNormStats, Mode, Precision, Tape, Tensor, TensorError};
use ganlink::training::{discriminator_loss, generator_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Outcome {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub const OP_STEP: f64 = 1e-3;
pub const OP_TOL: f64 = 1e-3;
pub const MODEL_STEP: f64 = 1e-3;
/// The GAN losses pass thousands of values through leaky ReLUs, so a 1e-3
/// step almost always straddles a kink somewhere; this one stays inside the
/// linear pieces.
pub const GAN_STEP: f64 = 1e-6;
pub const MODEL_TOL: f64 = 1e-2;

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values in `±[lo, hi]`, kept away from zero so kinks are not crossed.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(lo..hi);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape, v).unwrap()
}

/// `Σ out ⊙ r` for a fixed random `r`, so every output coordinate matters.
fn project(tape: &Tape, out: &Tensor, seed: u64) -> Result<Tensor, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = uniform(&mut rng, out.shape(), -1.0, 1.0);
    tape.sum(&tape.mul(out, &r)?)
}

fn record(out: &mut Vec<Outcome>, name: String, r: Result<GradCheckReport, TensorError>) {
    match r {
        Ok(r) => out.push(Outcome { name, max_rel_error: r.max_rel_error, passed: r.passed }),
        Err(e) => out.push(Outcome { name: format!("{name} ({e})"), max_rel_error: f64::INFINITY, passed: false }),
    }
}

/// Check one argument of an op: `f(tape, args)` with `args[which]` varied.
fn op_case(
    out: &mut Vec<Outcome>,
    name: &str,
    args: &[Tensor],
    which: usize,
    f: impl Fn(&Tape, &[Tensor]) -> Result<Tensor, TensorError>,
) {
    let shape = format!("{:?}", args[which].shape());
    let r = finite_diff_check(
        |tape, x: &Tensor| {
            let mut a = args.to_vec();
            a[which] = x.clone();
            let y = f(tape, &a)?;
            project(tape, &y, 99)
        },
        &args[which],
        OP_STEP,
        OP_TOL,
    );
    record(out, format!("{name}[arg {which}] {shape}"), r);
}

fn op_checks(out: &mut Vec<Outcome>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 + seed as usize % 3;
    let (a, b) = (2 + seed as usize, 3 + (seed as usize * 2) % 4);
    let x = uniform(&mut rng, &[n, a], -1.0, 1.0);
    let w = uniform(&mut rng, &[a, b], -1.0, 1.0);
    let bias = uniform(&mut rng, &[b], -1.0, 1.0);
    for i in 0..3 {
        op_case(out, "dense", &[x.clone(), w.clone(), bias.clone()], i, |t, v| t.dense(&v[0], &v[1], &v[2]));
    }
    let wt = uniform(&mut rng, &[b, a], -1.0, 1.0);
    for i in 0..3 {
        op_case(out, "dense_transposed", &[x.clone(), wt.clone(), bias.clone()], i, |t, v| {
            t.dense_transposed(&v[0], &v[1], &v[2])
        });
    }
    let k = away_from_zero(&mut rng, &[n, a], 0.01, 2.0);
    op_case(out, "leaky_relu", &[k], 0, |t, v| t.leaky_relu(&v[0], 0.2));
    let y = uniform(&mut rng, &[n, a], -2.0, 2.0);
    op_case(out, "tanh", &[y.clone()], 0, |t, v| t.tanh(&v[0]));
    op_case(out, "sigmoid", &[y.clone()], 0, |t, v| t.sigmoid(&v[0]));
    op_case(out, "scale", &[y.clone()], 0, |t, v| t.scale(&v[0], -1.7));
    op_case(out, "sum", &[y.clone()], 0, |t, v| t.sum(&v[0]));
    op_case(out, "mean", &[y.clone()], 0, |t, v| t.mean(&v[0]));
    op_case(out, "reshape", &[y.clone()], 0, |t, v| t.reshape(&v[0], &[n * a]));
    let z = uniform(&mut rng, &[n, a], -2.0, 2.0);
    for i in 0..2 {
        op_case(out, "add", &[y.clone(), z.clone()], i, |t, v| t.add(&v[0], &v[1]));
        op_case(out, "sub", &[y.clone(), z.clone()], i, |t, v| t.sub(&v[0], &v[1]));
        op_case(out, "mul", &[y.clone(), z.clone()], i, |t, v| t.mul(&v[0], &v[1]));
    }
    // The target of a reconstruction loss is data, not a differentiable input.
    op_case(out, "mse_loss", &[y.clone(), z.clone()], 0, |t, v| t.mse_loss(&v[0], &v[1]));
    let c = uniform(&mut rng, &[n, b], -1.0, 1.0);
    for i in 0..2 {
        op_case(out, "concat axis 1", &[y.clone(), c.clone()], i, |t, v| t.concat(&[&v[0], &v[1]], 1));
    }
    let r = uniform(&mut rng, &[n + 1, a], -1.0, 1.0);
    op_case(out, "concat axis 0", &[y.clone(), r], 1, |t, v| t.concat(&[&v[0], &v[1]], 0));
    let s = uniform(&mut rng, &[n + 2], 0.05, 0.95);
    for target in [0.0, 1.0] {
        op_case(out, &format!("bce_loss target {target}"), &[s.clone()], 0, move |t, v| t.bce_loss(&v[0], target));
    }
    let tiled = uniform(&mut rng, &[n, b], -1.0, 1.0);
    op_case(out, "tile_spatial", &[tiled], 0, |t, v| t.tile_spatial(&v[0], 3, 2));

    let (ch, hw) = (1 + seed as usize % 3, 4 + 2 * (seed as usize % 3));
    let img = uniform(&mut rng, &[n, ch, hw, hw], -1.0, 1.0);
    let cb = uniform(&mut rng, &[ch], -1.0, 1.0);
    for i in 0..2 {
        op_case(out, "add_channel_bias", &[img.clone(), cb.clone()], i, |t, v| t.add_channel_bias(&v[0], &v[1]));
    }
    let f = 2 + seed as usize % 2;
    let kern = uniform(&mut rng, &[f, ch, 4, 4], -0.5, 0.5);
    for i in 0..2 {
        op_case(out, "conv2d s2p1", &[img.clone(), kern.clone()], i, |t, v| t.conv2d(&v[0], &v[1], 2, 1));
    }
    let k3 = uniform(&mut rng, &[f, ch, 3, 3], -0.5, 0.5);
    for i in 0..2 {
        op_case(out, "conv2d s1p1", &[img.clone(), k3.clone()], i, |t, v| t.conv2d(&v[0], &v[1], 1, 1));
    }
    let small = uniform(&mut rng, &[n, ch, hw / 2, hw / 2], -1.0, 1.0);
    let dk = uniform(&mut rng, &[ch, f, 4, 4], -0.5, 0.5);
    for i in 0..2 {
        op_case(out, "deconv2d s2p1", &[small.clone(), dk.clone()], i, |t, v| t.deconv2d(&v[0], &v[1], 2, 1));
    }
    let gamma = uniform(&mut rng, &[ch], 0.5, 1.5);
    let beta = uniform(&mut rng, &[ch], -0.5, 0.5);
    let stats = BatchNormStats::new(ch);
    for i in 0..3 {
        let st = stats.clone();
        op_case(out, "batchnorm train", &[img.clone(), gamma.clone(), beta.clone()], i, move |t, v| {
            t.batchnorm(&v[0], &v[1], &v[2], Mode::Train, &st)
        });
    }
    let stats = BatchNormStats::new(ch);
    stats.running_var.assign(vec![0.7; ch]).unwrap();
    for i in 0..3 {
        let st = stats.clone();
        op_case(out, "batchnorm infer", &[img.clone(), gamma.clone(), beta.clone()], i, move |t, v| {
            t.batchnorm(&v[0], &v[1], &v[2], Mode::Infer, &st)
        });
    }
}

fn cgan_configs() -> Vec<CganConfig> {
    let make = |text: usize, fc: usize, g: Vec<usize>, d: Vec<usize>, join: usize, size: usize| CganConfig {
        generator: GeneratorConfig { noise_dim: 3, text_dim: text, text_fc: fc, deconv_maps: g, image_size: size, channels: 3 },
        discriminator: DiscriminatorConfig { conv_maps: d, text_dim: text, text_fc: fc, join_maps: join, image_size: size, channels: 3 },
    };
    vec![
        make(5, 6, vec![6], vec![4], 4, 8),
        make(6, 8, vec![16, 8], vec![8, 16], 8, 16),
        make(4, 5, vec![8, 6], vec![6, 8], 5, 16),
    ]
}

/// Redraw every parameter at unit scale. The default 0.02 initialisation
/// leaves many leaky-ReLU inputs within a finite-difference step of the kink.
fn reinit<'a>(params: impl Iterator<Item = (&'a str, &'a Tensor)>, rng: &mut ChaCha8Rng) {
    for (name, p) in params {
        let (lo, hi) = if name.ends_with("gamma") {
            (0.5, 1.5)
        } else if name.ends_with("bias") || name.ends_with("beta") || name.ends_with("bias_tv") || name.ends_with("bias_vt") {
            (-0.3, 0.3)
        } else {
            (-0.5, 0.5)
        };
        let fan = (p.numel() as f64 / p.shape()[0] as f64).max(1.0).sqrt();
        let v = (0..p.numel()).map(|_| rng.random_range(lo..hi) / if lo < 0.0 { fan.min(4.0) } else { 1.0 }).collect();
        p.assign(v).unwrap();
    }
}

fn model_check(
    out: &mut Vec<Outcome>,
    name: String,
    param: &Tensor,
    step: f64,
    f: impl Fn(&Tape) -> Result<Tensor, TensorError>,
) {
    let r = finite_diff_check_param(f, param, step, MODEL_TOL, Some(8));
    record(out, name, r);
}

fn model_checks(out: &mut Vec<Outcome>) {
    for (ci, cfg) in cgan_configs().into_iter().enumerate() {
        let bundle = ModelBundle::cgan(&cfg, 10 + ci as u64).unwrap();
        let m = bundle.as_cgan().unwrap();
        let (g, d) = (&m.generator, &m.discriminator);
        let mut rng = ChaCha8Rng::seed_from_u64(ci as u64);
        reinit(g.params().iter(), &mut rng);
        reinit(d.params().iter(), &mut rng);
        let n = 3;
        let s = cfg.generator.image_size;
        let real = uniform(&mut rng, &[n, 3, s, s], -1.0, 1.0);
        let phi = uniform(&mut rng, &[n, cfg.generator.text_dim], -1.0, 1.0);
        let wrong = uniform(&mut rng, &[n, cfg.generator.text_dim], -1.0, 1.0);
        let z = uniform(&mut rng, &[n, 3], -1.0, 1.0);
        let fake = g.forward(&Tape::no_grad(), &z, &phi, Mode::Train).unwrap().detach();
        let d_loss = |tape: &Tape| -> Result<Tensor, TensorError> {
            let map = |e: ganlink::models::ModelError| TensorError::Usage(e.to_string());
            let sr = d.forward(tape, &real, &phi, Mode::Train).map_err(map)?.score;
            let sw = d.forward(tape, &real, &wrong, Mode::Train).map_err(map)?.score;
            let sf = d.forward(tape, &fake, &phi, Mode::Train).map_err(map)?.score;
            discriminator_loss(tape, &sr, &sw, &sf)
        };
        for name in ["conv0.weight", "text_fc.weight", "join.weight", "join.bn.gamma", "score.weight"] {
            model_check(out, format!("cgan#{ci} L_D d/d {name}"), &d.params().expect(name), GAN_STEP, d_loss);
        }
        let g_loss = |tape: &Tape| -> Result<Tensor, TensorError> {
            let map = |e: ganlink::models::ModelError| TensorError::Usage(e.to_string());
            let img = g.forward(tape, &z, &phi, Mode::Train).map_err(map)?;
            let sf = d.forward(tape, &img, &phi, Mode::Train).map_err(map)?.score;
            generator_loss(tape, &sf)
        };
        for name in ["text_fc.weight", "project.weight", "deconv0.weight", "deconv0.bn.beta", "out.weight", "out.bias"] {
            model_check(out, format!("cgan#{ci} L_G d/d {name}"), &g.params().expect(name), GAN_STEP, g_loss);
        }
    }
    for (ci, (t, v, b, h)) in [(4, 6, 5, 3), (6, 9, 7, 4), (3, 12, 4, 6)].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(50 + ci as u64);
        let text = uniform(&mut rng, &[4, t], -1.0, 1.0);
        let vis = uniform(&mut rng, &[4, v], -1.0, 1.0);
        let ae = MultimodalAe::new(AeConfig { text_dim: t, visual_dim: v, branch: b, hidden: h, modality_dropout: 0.0 }, ci as u64).unwrap();
        reinit(ae.params().iter(), &mut rng);
        let loss = |tape: &Tape| -> Result<Tensor, TensorError> {
            let o = ae.forward(tape, &text, &vis).map_err(|e| TensorError::Usage(e.to_string()))?;
            tape.add(&tape.mse_loss(&o.text_rec, &text)?, &tape.mse_loss(&o.visual_rec, &vis)?)
        };
        for (name, p) in ae.params().iter() {
            model_check(out, format!("ae#{ci} d/d {name}"), p, MODEL_STEP, loss);
        }
        let bi = Bidnn::new(BidnnConfig { text_dim: t, visual_dim: v, hidden: h }, ci as u64).unwrap();
        reinit(bi.params().iter(), &mut rng);
        let loss = |tape: &Tape| -> Result<Tensor, TensorError> {
            let o = bi.forward(tape, &text, &vis, Presence::Both).map_err(|e| TensorError::Usage(e.to_string()))?;
            tape.add(
                &tape.mse_loss(o.text_to_visual.as_ref().unwrap(), &vis)?,
                &tape.mse_loss(o.visual_to_text.as_ref().unwrap(), &text)?,
            )
        };
        for (name, p) in bi.params().iter() {
            model_check(out, format!("bidnn#{ci} d/d {name}"), p, MODEL_STEP, loss);
        }
    }
}

/// Finite-difference checks of every op on three shapes and of every model
/// loss on three configurations, all in 64-bit precision.
pub fn gradient_suite() -> Vec<Outcome> {
    with_precision(Precision::High, || {
        let mut out = Vec::new();
        for seed in 0..3 {
            op_checks(&mut out, seed);
        }
        model_checks(&mut out);
        out
    })
}

pub struct AdjointCase {
    pub description: String,
    pub rel_error: f64,
}

/// `⟨conv(x), y⟩ = ⟨x, deconv(y)⟩` with the same kernels on random geometries.
pub fn adjoint_suite(cases: usize, seed: u64) -> Vec<AdjointCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < cases {
        let k = rng.random_range(1..=5usize);
        let stride = rng.random_range(1..=3usize);
        let pad = rng.random_range(0..k);
        let ho = rng.random_range(1..=6usize);
        let h = (ho - 1) * stride + k;
        if h <= 2 * pad {
            continue;
        }
        let h = h - 2 * pad;
        let (n, c, f) = (rng.random_range(1..=2usize), rng.random_range(1..=4usize), rng.random_range(1..=4usize));
        let x = uniform(&mut rng, &[n, c, h, h], -1.0, 1.0);
        let kern = uniform(&mut rng, &[f, c, k, k], -1.0, 1.0);
        let tape = Tape::no_grad();
        let (lhs, rhs) = with_precision(Precision::Standard, || {
            let cx = tape.conv2d(&x, &kern, stride, pad).unwrap();
            let y = uniform(&mut rng, cx.shape(), -1.0, 1.0);
            let dy = tape.deconv2d(&y, &kern, stride, pad).unwrap();
            assert_eq!(dy.shape(), x.shape());
            let dot = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data().iter()).map(|(p, q)| p * q).sum::<f64>();
            (dot(&cx, &y), dot(&x, &dy))
        });
        let rel_error = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12);
        out.push(AdjointCase {
            description: format!("n{n} c{c} f{f} h{h} k{k} s{stride} p{pad}"),
            rel_error,
        });
    }
    out
}
