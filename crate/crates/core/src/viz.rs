//! Text-to-image rendering and generator inversion to words.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{to_rgb, write_ppm, DataError, Vocabulary};
use crate::models::{Generator, ModelBundle, ModelError, START_EXTENT};
use crate::tensor::{conv2d_raw, deconv2d_raw, gemm, Geom2, MatRef, Mode, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum VizError {
    #[error("model has not been trained (0 epochs)")]
    Untrained,
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Where a generated image came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    /// [`ModelBundle::fingerprint`] of the generating model.
    pub checkpoint: String,
    /// Free-form description of the conditioning vector.
    pub phi_source: String,
    pub z_seed: u64,
    /// Position within the rendered batch.
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct GeneratedImage {
    /// `3×S×S` values in `[-1, 1]`.
    pub pixels: Vec<f64>,
    pub size: usize,
    pub provenance: Provenance,
}

/// Render `n` images for one text vector, each from its own `z ~ U(-1, 1)`
/// drawn from a generator seeded with `seed`.
pub fn render_text_to_images(bundle: &ModelBundle, phi: &[f64], n: usize, seed: u64) -> Result<Vec<GeneratedImage>, VizError> {
    let g = &bundle.as_cgan()?.generator;
    if bundle.meta.epochs == 0 {
        return Err(VizError::Untrained);
    }
    let cfg = g.config();
    if phi.len() != cfg.text_dim {
        return Err(VizError::Input(format!("phi has {} values, generator expects {}", phi.len(), cfg.text_dim)));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..n * cfg.noise_dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let z = Tensor::new(&[n, cfg.noise_dim], z)?;
    let phis = Tensor::new(&[n, cfg.text_dim], phi.repeat(n))?;
    let out = g.forward(&Tape::no_grad(), &z, &phis, Mode::Infer)?.to_vec();
    let per = cfg.channels * cfg.image_size * cfg.image_size;
    let checkpoint = bundle.fingerprint();
    Ok(out
        .chunks(per)
        .enumerate()
        .map(|(index, px)| GeneratedImage {
            pixels: px.to_vec(),
            size: cfg.image_size,
            provenance: Provenance { checkpoint: checkpoint.clone(), phi_source: "vector".into(), z_seed: seed, index },
        })
        .collect())
}

/// Map an image back through the generator's linear pieces.
///
/// Runs, in reverse order: the adjoint of the output convolution, the
/// batch-norm scale `γ/√(running_var + ε)` of each stage, each transposed
/// convolution's adjoint (a strided convolution with the same kernels), the
/// projection transpose and finally the text layer's transpose. Activations
/// pass through unchanged and biases and batch-norm shifts are dropped, so
/// the map is linear. The result is `[z-part ; φ-part]`.
pub fn invert_generator(bundle: &ModelBundle, image: &[f64]) -> Result<Vec<f64>, VizError> {
    invert(&bundle.as_cgan()?.generator, image)
}

pub(crate) fn invert(g: &Generator, image: &[f64]) -> Result<Vec<f64>, VizError> {
    let cfg = g.config();
    let p = g.params();
    let s = cfg.image_size;
    if image.len() != cfg.channels * s * s {
        return Err(VizError::Input(format!(
            "image has {} values, expected {}×{s}×{s}",
            image.len(),
            cfg.channels
        )));
    }
    let geom = |c, h, k, stride, pad| Geom2::new(c, h, h, k, stride, pad).expect("generator geometry is validated");
    let last = *cfg.deconv_maps.last().expect("non-empty");
    let mut h = deconv2d_raw(image, 1, &p.expect("out.weight").data(), cfg.channels, geom(last, s, 3, 1, 1));
    let mut extent = s;
    for (i, stats) in g.batchnorm_stats().iter().enumerate().rev() {
        let maps = cfg.deconv_maps[i];
        let gamma = p.expect(&format!("deconv{i}.bn.gamma")).to_vec();
        let var = stats.running_var.to_vec();
        let area = extent * extent;
        for c in 0..maps {
            let scale = gamma[c] / (var[c] + stats.eps).sqrt();
            h[c * area..(c + 1) * area].iter_mut().for_each(|v| *v *= scale);
        }
        let cin = if i == 0 { cfg.projected_channels() } else { cfg.deconv_maps[i - 1] };
        h = conv2d_raw(&h, 1, &p.expect(&format!("deconv{i}.weight")).data(), cin, geom(maps, extent, 4, 2, 1));
        extent /= 2;
    }
    debug_assert_eq!(extent, START_EXTENT);
    let joint = cfg.noise_dim + cfg.text_fc;
    let mut u = vec![0.0; joint];
    let wp = p.expect("project.weight").data().clone();
    gemm(1.0, MatRef::new(&wp, joint, h.len()), MatRef::new(&h, h.len(), 1), 0.0, &mut u);
    let mut out = u[..cfg.noise_dim].to_vec();
    let mut phi = vec![0.0; cfg.text_dim];
    let wt = p.expect("text_fc.weight").data().clone();
    gemm(1.0, MatRef::new(&wt, cfg.text_dim, cfg.text_fc), MatRef::new(&u[cfg.noise_dim..], cfg.text_fc, 1), 0.0, &mut phi);
    out.extend(phi);
    Ok(out)
}

/// The trailing `text_dim` coordinates of a `[z ; φ]` preimage.
pub fn slice_text_part(preimage: &[f64], noise_dim: usize, text_dim: usize) -> Result<Vec<f64>, VizError> {
    if preimage.len() != noise_dim + text_dim {
        return Err(VizError::Input(format!(
            "preimage has {} values, expected {noise_dim} + {text_dim}",
            preimage.len()
        )));
    }
    Ok(preimage[noise_dim..].to_vec())
}

/// Default number of words returned by [`nearest_words`].
pub const DEFAULT_TOP_WORDS: usize = 15;

/// Words ordered by descending cosine similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct WordRanking(pub Vec<(String, f64)>);

impl WordRanking {
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (w, sim) in &self.0 {
            writeln!(s, "{w}\t{sim:.6}").expect("string write");
        }
        s
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| DataError::io(path, e))
    }
}

/// The `k` vocabulary words closest to `query` by cosine similarity, ties
/// broken by lexicographic word order. Zero-norm words score 0.
pub fn nearest_words(query: &[f64], vocab: &Vocabulary, k: usize) -> Result<WordRanking, VizError> {
    if query.len() != vocab.dim() {
        return Err(VizError::Input(format!("query has {} values, vocabulary vectors {}", query.len(), vocab.dim())));
    }
    let qn = query.iter().map(|v| v * v).sum::<f64>().sqrt();
    if qn == 0.0 {
        return Err(VizError::Input("query vector is zero and has no direction".into()));
    }
    if vocab.is_empty() || k > vocab.len() {
        return Err(VizError::Input(format!("cannot take {k} words from a vocabulary of {}", vocab.len())));
    }
    let mut scored: Vec<(&str, f64)> = vocab
        .iter()
        .map(|(w, v)| {
            let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let sim = if vn == 0.0 { 0.0 } else { query.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (qn * vn) };
            (w, sim)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(WordRanking(scored.into_iter().take(k).map(|(w, s)| (w.to_string(), s)).collect()))
}

/// Write as binary PPM with `v ↦ round((v + 1)·127.5)` clamped to a byte.
pub fn write_image(image: &GeneratedImage, path: impl AsRef<Path>) -> Result<(), VizError> {
    Ok(write_ppm(path, &to_rgb(&image.pixels, image.size)?)?)
}

/// Hue in degrees `[0, 360)` of an RGB triple; grey maps to 0.
pub fn rgb_hue([r, g, b]: [f64; 3]) -> f64 {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d <= 0.0 {
        return 0.0;
    }
    let h = if max == r {
        60.0 * ((g - b) / d)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    h.rem_euclid(360.0)
}

/// Hue of the mean colour of one or more `3×S×S` images in `[-1, 1]`.
pub fn mean_hue(images: &[&[f64]]) -> f64 {
    let mut sum = [0.0; 3];
    let mut count = 0usize;
    for img in images {
        let area = img.len() / 3;
        for (c, s) in sum.iter_mut().enumerate() {
            *s += img[c * area..(c + 1) * area].iter().map(|v| (v + 1.0) / 2.0).sum::<f64>();
        }
        count += area;
    }
    rgb_hue(sum.map(|s| s / count.max(1) as f64))
}

/// Shortest distance between two hues on the colour circle.
pub fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CganConfig, DiscriminatorConfig, GeneratorConfig};
    use crate::tensor::{with_precision, Precision};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn small() -> ModelBundle {
        let cfg = CganConfig {
            generator: GeneratorConfig { noise_dim: 4, text_dim: 6, text_fc: 8, deconv_maps: vec![8, 4], image_size: 16, channels: 3 },
            discriminator: DiscriminatorConfig { conv_maps: vec![4, 8], text_dim: 6, text_fc: 8, join_maps: 8, image_size: 16, channels: 3 },
        };
        let mut b = ModelBundle::cgan(&cfg, 5).unwrap();
        b.meta.epochs = 1;
        for (i, s) in b.as_cgan().unwrap().generator.batchnorm_stats().iter().enumerate() {
            let n = s.running_var.numel();
            s.running_var.assign((0..n).map(|c| 0.5 + 0.1 * (c + i) as f64).collect()).unwrap();
        }
        b
    }

    fn lcg(seed: u64, n: usize) -> Vec<f64> {
        let mut x = seed;
        (0..n)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    /// Forward pass of the generator's linear skeleton built from tape ops.
    fn linear_forward(g: &Generator, v: &[f64]) -> Vec<f64> {
        let cfg = g.config();
        let p = g.params();
        let tape = Tape::no_grad();
        let z = Tensor::new(&[1, cfg.noise_dim], v[..cfg.noise_dim].to_vec()).unwrap();
        let phi = Tensor::new(&[1, cfg.text_dim], v[cfg.noise_dim..].to_vec()).unwrap();
        let t = tape.dense(&phi, &p.expect("text_fc.weight"), &Tensor::zeros(&[cfg.text_fc])).unwrap();
        let u = tape.concat(&[&z, &t], 1).unwrap();
        let cols = p.expect("project.weight").shape()[1];
        let h = tape.dense(&u, &p.expect("project.weight"), &Tensor::zeros(&[cols])).unwrap();
        let mut h = tape.reshape(&h, &[1, cfg.projected_channels(), START_EXTENT, START_EXTENT]).unwrap();
        for (i, s) in g.batchnorm_stats().iter().enumerate() {
            h = tape.deconv2d(&h, &p.expect(&format!("deconv{i}.weight")), 2, 1).unwrap();
            let m = cfg.deconv_maps[i];
            let gamma = p.expect(&format!("deconv{i}.bn.gamma")).to_vec();
            let var = s.running_var.to_vec();
            let mut diag = vec![0.0; m * m];
            for c in 0..m {
                diag[c * m + c] = gamma[c] / (var[c] + s.eps).sqrt();
            }
            h = tape.conv2d(&h, &Tensor::new(&[m, m, 1, 1], diag).unwrap(), 1, 0).unwrap();
        }
        tape.conv2d(&h, &p.expect("out.weight"), 1, 1).unwrap().to_vec()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn inversion_is_the_adjoint_of_the_linear_generator() {
        let b = small();
        let g = &b.as_cgan().unwrap().generator;
        with_precision(Precision::High, || {
            for seed in 0..5 {
                let v = lcg(seed, 10);
                let x = lcg(seed + 100, 3 * 16 * 16);
                let lhs = dot(&linear_forward(g, &v), &x);
                let rhs = dot(&v, &invert(g, &x).unwrap());
                assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
            }
        });
    }

    #[test]
    fn inversion_shapes_and_errors() {
        let b = small();
        assert_eq!(invert_generator(&b, &vec![0.1; 768]).unwrap().len(), 10);
        assert!(invert_generator(&b, &[0.0; 10]).is_err());
        let d = ModelBundle::cgan(&CganConfig { generator: Default::default(), discriminator: Default::default() }, 1).unwrap();
        assert_eq!(invert_generator(&d, &vec![0.0; 3 * 64 * 64]).unwrap().len(), 110);
        let ae = ModelBundle::ae(&Default::default(), 1).unwrap();
        assert!(matches!(invert_generator(&ae, &[0.0; 3]), Err(VizError::Model(ModelError::WrongKind { .. }))));
    }

    #[test]
    fn render_is_seeded_and_varied() {
        let b = small();
        let phi = lcg(3, 6);
        let a = render_text_to_images(&b, &phi, 4, 9).unwrap();
        let again = render_text_to_images(&b, &phi, 4, 9).unwrap();
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&again) {
            assert_eq!(x.pixels, y.pixels);
        }
        assert!(a[0].pixels != a[1].pixels);
        assert!(a.iter().all(|i| i.pixels.iter().all(|v| (-1.0..=1.0).contains(v))));
        assert_eq!(a[2].provenance.index, 2);
        assert_eq!(a[2].provenance.checkpoint, b.fingerprint());
        let mut fresh = small();
        fresh.meta.epochs = 0;
        assert!(matches!(render_text_to_images(&fresh, &phi, 1, 0), Err(VizError::Untrained)));
    }

    #[test]
    fn slicing() {
        let mut v = vec![0.5; 10];
        v.extend([1.0, 0.0, 0.0]);
        assert_eq!(slice_text_part(&v, 10, 3).unwrap(), [1.0, 0.0, 0.0]);
        assert_eq!(slice_text_part(&[0.0; 110], 10, 100).unwrap().len(), 100);
        assert!(slice_text_part(&[0.0; 5], 10, 3).is_err());
    }

    #[test]
    fn nearest_words_examples() {
        let mut vocab = Vocabulary::new(2);
        vocab.insert("b", vec![0.0, 1.0]).unwrap();
        vocab.insert("a", vec![1.0, 0.0]).unwrap();
        let r = nearest_words(&[1.0, 0.0], &vocab, 2).unwrap();
        assert_eq!(r.0, vec![("a".to_string(), 1.0), ("b".to_string(), 0.0)]);
        assert!(nearest_words(&[0.0, 0.0], &vocab, 1).is_err());
        assert!(nearest_words(&[1.0, 0.0], &vocab, 3).is_err());
        assert_eq!(r.to_tsv(), "a\t1.000000\nb\t0.000000\n");
        let tie = nearest_words(&[1.0, 1.0], &vocab, 2).unwrap();
        assert_eq!(tie.0[0].0, "a");
    }

    #[test]
    fn image_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let prov = Provenance { checkpoint: "x".into(), phi_source: "v".into(), z_seed: 0, index: 0 };
        for (v, byte) in [(-1.0, 0u8), (1.0, 255u8)] {
            let img = GeneratedImage { pixels: vec![v; 12], size: 2, provenance: prov.clone() };
            let path = dir.path().join("i.ppm");
            write_image(&img, &path).unwrap();
            let back = crate::data::read_image(&path).unwrap();
            assert!(back.data().iter().all(|&b| b == byte));
        }
        let vals = lcg(1, 48);
        let img = GeneratedImage { pixels: vals.clone(), size: 4, provenance: prov };
        let path = dir.path().join("r.ppm");
        write_image(&img, &path).unwrap();
        let back = crate::data::read_image(&path).unwrap();
        for c in 0..3 {
            for p in 0..16 {
                let v = back.data()[p * 3 + c] as f64 / 127.5 - 1.0;
                assert!((v - vals[c * 16 + p]).abs() <= 1.0 / 127.5);
            }
        }
    }

    #[test]
    fn hues() {
        assert_abs_diff_eq!(rgb_hue([1.0, 0.0, 0.0]), 0.0);
        assert_abs_diff_eq!(rgb_hue([0.0, 1.0, 0.0]), 120.0);
        assert_abs_diff_eq!(rgb_hue([0.0, 0.0, 1.0]), 240.0);
        assert_abs_diff_eq!(rgb_hue([1.0, 0.0, 1.0]), 300.0);
        assert_abs_diff_eq!(hue_distance(350.0, 10.0), 20.0);
        for c in 0..6 {
            let h = crate::data::class_hue(c, 6);
            let rgb = crate::data::hsv_to_rgb(h, 0.9, 0.75);
            assert_abs_diff_eq!(hue_distance(rgb_hue(rgb), h), 0.0, epsilon = 1e-9);
        }
    }

    fn vocab_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..30)
    }

    proptest! {
        #[test]
        fn nearest_words_sorted_and_scale_invariant(rows in vocab_strategy(), q in prop::collection::vec(0.1f64..1.0, 3), scale in 0.01f64..100.0) {
            let mut vocab = Vocabulary::new(3);
            for (i, r) in rows.iter().enumerate() {
                vocab.insert(format!("w{i:02}"), r.clone()).unwrap();
            }
            let k = rows.len();
            let a = nearest_words(&q, &vocab, k).unwrap();
            prop_assert!(a.0.windows(2).all(|w| w[0].1 >= w[1].1));
            let scaled: Vec<f64> = q.iter().map(|v| v * scale).collect();
            let b = nearest_words(&scaled, &vocab, k).unwrap();
            let wa: Vec<&String> = a.0.iter().map(|(w, _)| w).collect();
            let wb: Vec<&String> = b.0.iter().map(|(w, _)| w).collect();
            prop_assert_eq!(wa, wb);
        }

        #[test]
        fn inversion_is_linear(alpha in -3.0f64..3.0, s1 in 0u64..1000, s2 in 0u64..1000) {
            let b = small();
            let (x, y) = (lcg(s1, 768), lcg(s2 + 5000, 768));
            let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + b).collect();
            let (ix, iy, is) = (invert_generator(&b, &x).unwrap(), invert_generator(&b, &y).unwrap(), invert_generator(&b, &sum).unwrap());
            for i in 0..ix.len() {
                prop_assert!((alpha * ix[i] + iy[i] - is[i]).abs() <= 1e-5);
            }
        }
    }
}
