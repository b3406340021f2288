//! GAN-CLS training with a fixed discriminator:generator update ratio, and
//! reconstruction training for the autoencoder baselines.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, Segment};
use crate::models::{AeConfig, BidnnConfig, CganConfig, ModelBundle, ModelError, ModelKind, Presence};
use crate::nn::{NnError, OptimConfig};
use crate::tensor::{Mode, Tape, Tensor, TensorError};

/// Mixed into the seed for the data-order stream so it differs from initialization.
const SHUFFLE_STREAM: u64 = 0xD1B5_4A32_D192_ED03;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite loss at step {0}")]
    NonFinite(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub gen_updates_per_disc: usize,
    pub seed: u64,
    pub optimizer: OptimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 1000, batch_size: 64, gen_updates_per_disc: 4, seed: 0, optimizer: OptimConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("gen_updates_per_disc", self.gen_updates_per_disc),
        ] {
            if v == 0 {
                return Err(TrainError::Config(format!("{name} must be at least 1")));
            }
        }
        self.optimizer.validate().map_err(|e| TrainError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepLosses {
    /// One discriminator update followed by the generator updates of its cycle.
    Gan { d_loss: f64, g_loss: f64, d_count: u64, g_count: u64 },
    Reconstruction { loss: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub losses: StepLosses,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    /// Mean discriminator loss, or mean reconstruction loss.
    pub mean_loss: f64,
    /// Mean generator loss (GAN training only).
    pub mean_g_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub kind: ModelKind,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochSummary>,
}

impl TrainLog {
    fn new(kind: ModelKind) -> Self {
        TrainLog { kind, steps: Vec::new(), epochs: Vec::new() }
    }

    /// `(discriminator, generator)` update counts after the last step.
    pub fn update_counts(&self) -> (u64, u64) {
        match self.steps.last().map(|s| s.losses) {
            Some(StepLosses::Gan { d_count, g_count, .. }) => (d_count, g_count),
            _ => (0, 0),
        }
    }

    /// `step,d_loss,g_loss,d_count,g_count` for GAN runs, `step,loss` otherwise.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self.kind {
            ModelKind::Cgan => out.push_str("step,d_loss,g_loss,d_count,g_count\n"),
            _ => out.push_str("step,loss\n"),
        }
        for r in &self.steps {
            match r.losses {
                StepLosses::Gan { d_loss, g_loss, d_count, g_count } => {
                    writeln!(out, "{},{d_loss},{g_loss},{d_count},{g_count}", r.step).expect("string write")
                }
                StepLosses::Reconstruction { loss } => writeln!(out, "{},{loss}", r.step).expect("string write"),
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| DataError::Io { path: path.to_path_buf(), source: e })
    }

    fn close_epoch(&mut self, epoch: usize, from: usize, started: Instant) {
        let steps = &self.steps[from..];
        let n = steps.len().max(1) as f64;
        let (mut d, mut g) = (0.0, 0.0);
        for s in steps {
            match s.losses {
                StepLosses::Gan { d_loss, g_loss, .. } => {
                    d += d_loss;
                    g += g_loss;
                }
                StepLosses::Reconstruction { loss } => d += loss,
            }
        }
        let summary = EpochSummary {
            epoch,
            mean_loss: d / n,
            mean_g_loss: (self.kind == ModelKind::Cgan).then_some(g / n),
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} loss {:.5}{} ({:.1}s)",
            epoch + 1,
            summary.mean_loss,
            summary.mean_g_loss.map(|g| format!(" g_loss {g:.5}")).unwrap_or_default(),
            summary.seconds
        );
        self.epochs.push(summary);
    }
}

/// Discriminator and generator objectives for one batch of score triples.
///
/// `L_D = bce(real, 1) + ½·(bce(wrong, 0) + bce(fake, 0))` and
/// `L_G = bce(fake, 1)`.
pub fn gan_cls_losses(tape: &Tape, s_real: &Tensor, s_wrong: &Tensor, s_fake: &Tensor) -> Result<(Tensor, Tensor), TensorError> {
    Ok((discriminator_loss(tape, s_real, s_wrong, s_fake)?, generator_loss(tape, s_fake)?))
}

pub fn discriminator_loss(tape: &Tape, s_real: &Tensor, s_wrong: &Tensor, s_fake: &Tensor) -> Result<Tensor, TensorError> {
    let real = tape.bce_loss(s_real, 1.0)?;
    let other = tape.add(&tape.bce_loss(s_wrong, 0.0)?, &tape.bce_loss(s_fake, 0.0)?)?;
    tape.add(&real, &tape.scale(&other, 0.5)?)
}

pub fn generator_loss(tape: &Tape, s_fake: &Tensor) -> Result<Tensor, TensorError> {
    tape.bce_loss(s_fake, 1.0)
}

/// Partner for every batch position such that no position keeps its own
/// image: a uniformly random derangement of `0..n`.
///
/// Entry `i` is the batch position whose image is paired with φ of position `i`.
pub fn sample_mismatched<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<usize>, TrainError> {
    if n < 2 {
        return Err(TrainError::Data(DataError::Invalid(
            "mismatched pairs need at least 2 segments".into(),
        )));
    }
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return Ok(p);
        }
    }
}

/// Shuffled index batches for one epoch.
pub fn epoch_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>, tail: &[usize]) -> Result<Tensor, TensorError> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        data.extend_from_slice(r);
        n += 1;
    }
    let mut shape = vec![n];
    shape.extend_from_slice(tail);
    Tensor::new(&shape, data)
}

fn uniform_noise<R: Rng + ?Sized>(rng: &mut R, n: usize, dim: usize) -> Result<Tensor, TensorError> {
    Tensor::new(&[n, dim], (0..n * dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
}

fn check_finite(loss: f64, step: u64) -> Result<f64, TrainError> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(TrainError::NonFinite(step))
    }
}

fn data_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_STREAM)
}

/// Train a conditional GAN with matching, mismatched and generated pairs.
///
/// Each cycle is one discriminator update followed by
/// `gen_updates_per_disc` generator updates, each on a fresh random batch of
/// φ and fresh noise. An epoch is one pass of discriminator batches over the
/// shuffled corpus; batches with fewer than 2 segments are skipped.
pub fn train_cgan(data: &Dataset, cfg: &CganConfig, train: &TrainConfig) -> Result<(ModelBundle, TrainLog), TrainError> {
    train.validate()?;
    let mut bundle = ModelBundle::cgan(cfg, train.seed)?;
    let log = continue_cgan(&mut bundle, data, train)?;
    Ok((bundle, log))
}

/// Run `train.epochs` more epochs of GAN training on an existing bundle.
pub fn continue_cgan(bundle: &mut ModelBundle, data: &Dataset, train: &TrainConfig) -> Result<TrainLog, TrainError> {
    train.validate()?;
    if data.is_empty() {
        return Err(DataError::Invalid("dataset is empty".into()).into());
    }
    data.require_images()?;
    let epochs_done = bundle.meta.epochs as usize;
    let gan = bundle.as_cgan_mut()?;
    let gcfg = gan.generator.config().clone();
    if data.text_dim != gcfg.text_dim || data.image_size != gcfg.image_size {
        return Err(DataError::Dimension(format!(
            "dataset has text_dim {} and image_size {}, model expects {} and {}",
            data.text_dim, data.image_size, gcfg.text_dim, gcfg.image_size
        ))
        .into());
    }
    if data.len() < 2 {
        return Err(DataError::Invalid("GAN training needs at least 2 segments".into()).into());
    }
    let s = data.image_size;
    let img_tail = [gcfg.channels, s, s];
    let phi_of = |idx: &[usize]| stack(idx.iter().map(|&i| data.segments[i].phi.as_slice()), &[data.text_dim]);
    let img_of = |idx: &[usize]| stack(idx.iter().map(|&i| rep(&data.segments[i])), &img_tail);
    let mut rng = data_rng(train.seed.wrapping_add(epochs_done as u64));
    let opt = &train.optimizer;
    let mut log = TrainLog::new(ModelKind::Cgan);
    let (mut d_count, mut g_count, mut step) = (0u64, 0u64, 0u64);
    let g_batch = train.batch_size.min(data.len());
    for epoch in 0..train.epochs {
        let started = Instant::now();
        let first = log.steps.len();
        for batch in epoch_batches(data.len(), train.batch_size, &mut rng) {
            if batch.len() < 2 {
                continue;
            }
            step += 1;
            let partners = sample_mismatched(batch.len(), &mut rng)?;
            let wrong_idx: Vec<usize> = partners.iter().map(|&p| batch[p]).collect();
            let (x, wrong, phi) = (img_of(&batch)?, img_of(&wrong_idx)?, phi_of(&batch)?);
            let z = uniform_noise(&mut rng, batch.len(), gcfg.noise_dim)?;
            let fake = gan.generator.forward(&Tape::no_grad(), &z, &phi, Mode::Train)?;
            let tape = Tape::new();
            let d = &gan.discriminator;
            let s_real = d.forward(&tape, &x, &phi, Mode::Train)?.score;
            let s_wrong = d.forward(&tape, &wrong, &phi, Mode::Train)?.score;
            let s_fake = d.forward(&tape, &fake, &phi, Mode::Train)?.score;
            let l_d = discriminator_loss(&tape, &s_real, &s_wrong, &s_fake)?;
            let d_loss = check_finite(l_d.item(), step)?;
            tape.backward(&l_d)?;
            gan.discriminator.params_mut().adam_step(opt)?;
            d_count += 1;

            let mut g_sum = 0.0;
            for _ in 0..train.gen_updates_per_disc {
                let idx = index::sample(&mut rng, data.len(), g_batch).into_vec();
                let phi = phi_of(&idx)?;
                let z = uniform_noise(&mut rng, idx.len(), gcfg.noise_dim)?;
                let tape = Tape::new();
                let fake = gan.generator.forward(&tape, &z, &phi, Mode::Train)?;
                let s_fake = gan.discriminator.forward(&tape, &fake, &phi, Mode::Train)?.score;
                let l_g = generator_loss(&tape, &s_fake)?;
                g_sum += check_finite(l_g.item(), step)?;
                tape.backward(&l_g)?;
                gan.generator.params_mut().adam_step(opt)?;
                gan.discriminator.params().zero_grads();
                g_count += 1;
            }
            log.steps.push(StepRecord {
                step,
                epoch,
                losses: StepLosses::Gan {
                    d_loss,
                    g_loss: g_sum / train.gen_updates_per_disc as f64,
                    d_count,
                    g_count,
                },
            });
        }
        log.close_epoch(epoch, first, started);
    }
    bundle.meta.epochs += train.epochs as u64;
    Ok(log)
}

fn rep(s: &Segment) -> &[f64] {
    s.representative.as_deref().expect("checked by require_images")
}

fn feature(s: &Segment) -> &[f64] {
    s.visual_feature.as_deref().expect("checked by require_features")
}

fn check_dims(data: &Dataset, text_dim: usize, visual_dim: usize) -> Result<(), TrainError> {
    if data.is_empty() {
        return Err(DataError::Invalid("dataset is empty".into()).into());
    }
    if data.text_dim != text_dim {
        return Err(DataError::Dimension(format!("dataset text_dim {} but model expects {text_dim}", data.text_dim)).into());
    }
    data.require_features(visual_dim)?;
    Ok(())
}

/// Train the two-branch autoencoder on summed text and visual reconstruction MSE.
///
/// With `modality_dropout > 0` each training sample has, with that
/// probability, one modality (chosen evenly) zeroed at the input while both
/// reconstruction targets stay intact.
pub fn train_ae(data: &Dataset, cfg: &AeConfig, train: &TrainConfig) -> Result<(ModelBundle, TrainLog), TrainError> {
    train.validate()?;
    check_dims(data, cfg.text_dim, cfg.visual_dim)?;
    let mut bundle = ModelBundle::ae(cfg, train.seed)?;
    let mut rng = data_rng(train.seed);
    let mut log = TrainLog::new(ModelKind::Ae);
    let mut step = 0u64;
    for epoch in 0..train.epochs {
        let started = Instant::now();
        let first = log.steps.len();
        for batch in epoch_batches(data.len(), train.batch_size, &mut rng) {
            step += 1;
            let text = stack(batch.iter().map(|&i| data.segments[i].phi.as_slice()), &[cfg.text_dim])?;
            let visual = stack(batch.iter().map(|&i| feature(&data.segments[i])), &[cfg.visual_dim])?;
            let (text_in, visual_in) = if cfg.modality_dropout > 0.0 {
                let (mut t, mut v) = (text.to_vec(), visual.to_vec());
                for row in 0..batch.len() {
                    if rng.random::<f64>() < cfg.modality_dropout {
                        if rng.random::<bool>() {
                            t[row * cfg.text_dim..(row + 1) * cfg.text_dim].fill(0.0);
                        } else {
                            v[row * cfg.visual_dim..(row + 1) * cfg.visual_dim].fill(0.0);
                        }
                    }
                }
                (Tensor::new(text.shape(), t)?, Tensor::new(visual.shape(), v)?)
            } else {
                (text.clone(), visual.clone())
            };
            let ae = bundle.as_ae_mut()?;
            let tape = Tape::new();
            let out = ae.forward(&tape, &text_in, &visual_in)?;
            let loss = tape.add(&tape.mse_loss(&out.text_rec, &text)?, &tape.mse_loss(&out.visual_rec, &visual)?)?;
            let value = check_finite(loss.item(), step)?;
            tape.backward(&loss)?;
            ae.params_mut().adam_step(&train.optimizer)?;
            log.steps.push(StepRecord { step, epoch, losses: StepLosses::Reconstruction { loss: value } });
        }
        log.close_epoch(epoch, first, started);
    }
    bundle.meta.epochs = train.epochs as u64;
    Ok((bundle, log))
}

/// Train the BiDNN on `MSE(text→visual) + MSE(visual→text)`.
pub fn train_bidnn(data: &Dataset, cfg: &BidnnConfig, train: &TrainConfig) -> Result<(ModelBundle, TrainLog), TrainError> {
    train.validate()?;
    check_dims(data, cfg.text_dim, cfg.visual_dim)?;
    let mut bundle = ModelBundle::bidnn(cfg, train.seed)?;
    let mut rng = data_rng(train.seed);
    let mut log = TrainLog::new(ModelKind::Bidnn);
    let mut step = 0u64;
    for epoch in 0..train.epochs {
        let started = Instant::now();
        let first = log.steps.len();
        for batch in epoch_batches(data.len(), train.batch_size, &mut rng) {
            step += 1;
            let text = stack(batch.iter().map(|&i| data.segments[i].phi.as_slice()), &[cfg.text_dim])?;
            let visual = stack(batch.iter().map(|&i| feature(&data.segments[i])), &[cfg.visual_dim])?;
            let net = bundle.as_bidnn_mut()?;
            let tape = Tape::new();
            let out = net.forward(&tape, &text, &visual, Presence::Both)?;
            let t2v = out.text_to_visual.expect("text present");
            let v2t = out.visual_to_text.expect("visual present");
            let loss = tape.add(&tape.mse_loss(&t2v, &visual)?, &tape.mse_loss(&v2t, &text)?)?;
            let value = check_finite(loss.item(), step)?;
            tape.backward(&loss)?;
            net.params_mut().adam_step(&train.optimizer)?;
            log.steps.push(StepRecord { step, epoch, losses: StepLosses::Reconstruction { loss: value } });
        }
        log.close_epoch(epoch, first, started);
    }
    bundle.meta.epochs = train.epochs as u64;
    Ok((bundle, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_dataset, SyntheticSpec};
    use crate::models::{DiscriminatorConfig, GeneratorConfig};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn scores(v: &[f64]) -> Tensor {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    fn oracle(real: &[f64], wrong: &[f64], fake: &[f64]) -> (f64, f64) {
        let c = |s: f64| s.clamp(1e-7, 1.0 - 1e-7);
        let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&s| f(c(s))).sum::<f64>() / v.len() as f64;
        let ld = -(mean(real, &|s| s.ln()) + 0.5 * (mean(wrong, &|s| (1.0 - s).ln()) + mean(fake, &|s| (1.0 - s).ln())));
        (ld, -mean(fake, &|s| s.ln()))
    }

    #[test]
    fn gan_cls_loss_values() {
        let t = Tape::no_grad();
        let (ld, lg) = gan_cls_losses(&t, &scores(&[0.9]), &scores(&[0.2]), &scores(&[0.1])).unwrap();
        assert!((ld.item() - 0.269613).abs() < 1e-6);
        assert!((lg.item() - (-(0.1f64).ln())).abs() < 1e-6);
        let eps = 1e-7;
        let (ld, _) = gan_cls_losses(&t, &scores(&[1.0 - eps]), &scores(&[eps]), &scores(&[eps])).unwrap();
        assert!(ld.item() <= 1e-5);
        assert!((generator_loss(&t, &scores(&[0.5])).unwrap().item() - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn gan_cls_losses_match_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = Tape::no_grad();
        for _ in 0..100 {
            let n = rng.random_range(1..6);
            let mut draw = || (0..n).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<f64>>();
            let (r, w, f) = (draw(), draw(), draw());
            let (ld, lg) = crate::tensor::with_precision(crate::tensor::Precision::High, || {
                let (a, b) = gan_cls_losses(&t, &scores(&r), &scores(&w), &scores(&f)).unwrap();
                (a.item(), b.item())
            });
            let (od, og) = oracle(&r, &w, &f);
            assert!((ld - od).abs() <= 1e-6 && (lg - og).abs() <= 1e-6);
        }
    }

    #[test]
    fn mismatched_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(sample_mismatched(2, &mut rng).unwrap(), vec![1, 0]);
        assert!(sample_mismatched(1, &mut rng).is_err());
        let n = 5;
        let draws = 10_000;
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            let p = sample_mismatched(n, &mut rng).unwrap();
            assert!(p.iter().enumerate().all(|(i, &j)| i != j));
            counts[p[0]] += 1;
        }
        assert_eq!(counts[0], 0);
        let expected = draws as f64 / (n - 1) as f64;
        let chi2: f64 = counts[1..].iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let critical = ChiSquared::new((n - 2) as f64).unwrap().inverse_cdf(0.99);
        assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
    }

    #[test]
    fn shuffling_is_seed_deterministic() {
        let a = epoch_batches(50, 8, &mut data_rng(3));
        let b = epoch_batches(50, 8, &mut data_rng(3));
        assert_eq!(a, b);
        assert_ne!(a, epoch_batches(50, 8, &mut data_rng(4)));
        assert_eq!(a.iter().map(Vec::len).sum::<usize>(), 50);
    }

    fn tiny_cgan(text_dim: usize) -> CganConfig {
        CganConfig {
            generator: GeneratorConfig {
                noise_dim: 4,
                text_dim,
                text_fc: 8,
                deconv_maps: vec![8, 4],
                image_size: 16,
                channels: 3,
            },
            discriminator: DiscriminatorConfig {
                conv_maps: vec![4, 8],
                text_dim,
                text_fc: 8,
                join_maps: 4,
                image_size: 16,
                channels: 3,
            },
        }
    }

    fn synthetic(per: usize, text_dim: usize) -> Dataset {
        generate_synthetic_dataset(&SyntheticSpec { segments_per_class: per, text_dim, ..Default::default() })
            .unwrap()
            .dataset
    }

    #[test]
    fn update_schedule_ledger() {
        let data = synthetic(32, 6);
        let train = TrainConfig { epochs: 1, batch_size: 64, seed: 5, ..Default::default() };
        let (bundle, log) = train_cgan(&data, &tiny_cgan(6), &train).unwrap();
        assert_eq!(log.update_counts(), (2, 8));
        for r in &log.steps {
            let StepLosses::Gan { d_count, g_count, .. } = r.losses else { panic!() };
            assert_eq!(g_count, 4 * d_count);
        }
        assert_eq!(bundle.meta.epochs, 1);
        assert_eq!(log.to_csv().lines().count(), 3);
    }

    #[test]
    fn cgan_training_is_deterministic() {
        let data = synthetic(8, 6);
        let train = TrainConfig { epochs: 2, batch_size: 16, seed: 9, ..Default::default() };
        let (a, la) = train_cgan(&data, &tiny_cgan(6), &train).unwrap();
        let (b, lb) = train_cgan(&data, &tiny_cgan(6), &train).unwrap();
        assert_eq!(la.to_csv(), lb.to_csv());
        for ((na, ta), (nb, tb)) in a.named_tensors().iter().zip(b.named_tensors().iter()) {
            assert_eq!(na, nb);
            assert!(ta.bitwise_eq(tb), "{na}");
        }
        assert!(la.steps.iter().all(|s| matches!(s.losses, StepLosses::Gan { d_loss, g_loss, .. } if d_loss.is_finite() && g_loss.is_finite())));
    }

    #[test]
    fn missing_image_names_the_segment() {
        let mut data = synthetic(4, 6);
        data.segments[3].representative = None;
        let id = data.segments[3].id.clone();
        let err = train_cgan(&data, &tiny_cgan(6), &TrainConfig { epochs: 1, ..Default::default() }).unwrap_err();
        assert!(matches!(&err, TrainError::Data(DataError::Missing { segment, .. }) if *segment == id), "{err}");
        let err = train_ae(&data, &AeConfig { text_dim: 7, visual_dim: 768, ..Default::default() }, &TrainConfig::default());
        assert!(matches!(err, Err(TrainError::Data(DataError::Dimension(_)))));
    }

    fn small_ae() -> AeConfig {
        AeConfig { text_dim: 6, visual_dim: 768, branch: 32, hidden: 16, modality_dropout: 0.0 }
    }

    #[test]
    fn ae_loss_falls_and_is_deterministic() {
        let data = synthetic(25, 6);
        let train = TrainConfig { epochs: 20, batch_size: 16, seed: 1, ..Default::default() };
        let (_, log) = train_ae(&data, &small_ae(), &train).unwrap();
        assert!(log.epochs[19].mean_loss < log.epochs[0].mean_loss);
        let (_, again) = train_ae(&data, &small_ae(), &train).unwrap();
        let last = |l: &TrainLog| match l.steps.last().unwrap().losses {
            StepLosses::Reconstruction { loss } => loss.to_bits(),
            _ => unreachable!(),
        };
        assert_eq!(last(&log), last(&again));
        let dropout = AeConfig { modality_dropout: 0.5, ..small_ae() };
        let (_, l) = train_ae(&data, &dropout, &TrainConfig { epochs: 2, ..train }).unwrap();
        assert!(l.steps.iter().all(|s| matches!(s.losses, StepLosses::Reconstruction { loss } if loss.is_finite())));
    }

    #[test]
    fn ae_fits_a_zero_variance_dataset() {
        let mut data = synthetic(1, 6);
        let proto = data.segments[0].clone();
        for (i, s) in data.segments.iter_mut().enumerate() {
            *s = Segment { id: format!("copy{i}"), ..proto.clone() };
        }
        let train = TrainConfig {
            epochs: 200,
            batch_size: 4,
            seed: 2,
            optimizer: OptimConfig { learning_rate: 1e-3, ..Default::default() },
            ..Default::default()
        };
        let (_, log) = train_ae(&data, &small_ae(), &train).unwrap();
        assert_eq!(log.steps.len(), 200);
        let StepLosses::Reconstruction { loss } = log.steps.last().unwrap().losses else { panic!() };
        assert!(loss <= 1e-3, "{loss}");
    }

    #[test]
    fn bidnn_loss_falls_with_tied_weights() {
        let data = synthetic(25, 6);
        let cfg = BidnnConfig { text_dim: 6, visual_dim: 768, hidden: 16 };
        let train = TrainConfig { epochs: 20, batch_size: 16, seed: 3, ..Default::default() };
        let (bundle, log) = train_bidnn(&data, &cfg, &train).unwrap();
        assert!(log.epochs[19].mean_loss < log.epochs[0].mean_loss);
        // One stored matrix serves both directions.
        let names: Vec<String> = bundle.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.iter().filter(|n| n.starts_with("central.weight")).count(), 1);
        let (_, again) = train_bidnn(&data, &cfg, &train).unwrap();
        assert_eq!(log.to_csv(), again.to_csv());
    }
}
