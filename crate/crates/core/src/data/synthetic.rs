use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::image::{preprocess_image, RgbImage};
use super::manifest::GroundTruth;
use super::text::Vocabulary;
use super::{DataError, Dataset, Segment};

/// Largest allowed cosine between two class prototypes.
const MAX_PROTOTYPE_COSINE: f64 = 0.3;
const MAX_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub segments_per_class: usize,
    pub image_size: usize,
    pub text_dim: usize,
    /// Standard deviation of per-coordinate noise added to the class prototype.
    pub text_noise: f64,
    /// Standard deviation of pixel noise, in `[-1, 1]` units.
    pub pixel_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 4,
            segments_per_class: 100,
            image_size: 16,
            text_dim: 32,
            text_noise: 0.1,
            pixel_noise: 0.1,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.classes < 2 {
            return Err(DataError::Invalid("synthetic data needs at least 2 classes".into()));
        }
        if self.segments_per_class == 0 || self.image_size == 0 || self.text_dim == 0 {
            return Err(DataError::Invalid("synthetic sizes must be positive".into()));
        }
        if !(self.text_noise >= 0.0 && self.pixel_noise >= 0.0) {
            return Err(DataError::Invalid("noise levels must be non-negative".into()));
        }
        Ok(())
    }

    /// Side of the square grid of class motif positions.
    fn grid(&self) -> usize {
        (self.classes as f64).sqrt().ceil() as usize
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub groundtruth: GroundTruth,
    /// One pseudo-word `class_{c}` per class, mapped to its prototype.
    pub vocabulary: Vocabulary,
    pub prototypes: Vec<Vec<f64>>,
    /// Class of each segment, in dataset order.
    pub labels: Vec<usize>,
    /// Clean (noise-free) motif of each class, `3×S×S` in `[-1, 1]`.
    pub motifs: Vec<Vec<f64>>,
}

impl SyntheticData {
    pub fn class_word(c: usize) -> String {
        format!("class_{c}")
    }
}

/// Hue in degrees of class `c`'s background.
pub fn class_hue(c: usize, classes: usize) -> f64 {
    360.0 * c as f64 / classes as f64
}

/// HSV with hue in degrees and `s`, `v` in `[0, 1]` to RGB in `[0, 1]`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn prototypes(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>, DataError> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
    let mut attempts = 0;
    while out.len() < spec.classes {
        attempts += 1;
        if attempts > MAX_RESAMPLES {
            return Err(DataError::Invalid(format!(
                "could not separate {} prototypes in {} dimensions to cosine <= {MAX_PROTOTYPE_COSINE}",
                spec.classes, spec.text_dim
            )));
        }
        let v: Vec<f64> = (0..spec.text_dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let v: Vec<f64> = v.iter().map(|x| ((x / norm) as f32) as f64).collect();
        if out.iter().all(|p| p.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() <= MAX_PROTOTYPE_COSINE) {
            out.push(v);
        }
    }
    Ok(out)
}

/// Byte motif of class `c`: hued background with a white square in the
/// class's grid cell.
fn motif(spec: &SyntheticSpec, c: usize) -> Vec<[f64; 3]> {
    let s = spec.image_size;
    let g = spec.grid();
    let cell = s as f64 / g as f64;
    let side = (cell / 2.0).max(1.0);
    let (cx, cy) = ((c % g) as f64 * cell + cell / 2.0, (c / g) as f64 * cell + cell / 2.0);
    let bg = hsv_to_rgb(class_hue(c, spec.classes), 0.9, 0.75);
    let mut px = vec![[0.0; 3]; s * s];
    for y in 0..s {
        for x in 0..s {
            let inside = (x as f64 + 0.5 - cx).abs() < side / 2.0 && (y as f64 + 0.5 - cy).abs() < side / 2.0;
            px[y * s + x] = if inside { [255.0; 3] } else { bg.map(|v| v * 255.0) };
        }
    }
    px
}

/// Build a labelled paired-modality corpus with known same-class relevance.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<SyntheticData, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let protos = prototypes(spec, &mut rng)?;
    let text_noise = Normal::new(0.0, spec.text_noise).map_err(|e| DataError::Invalid(e.to_string()))?;
    let pixel_noise = Normal::new(0.0, spec.pixel_noise * 127.5).map_err(|e| DataError::Invalid(e.to_string()))?;
    let s = spec.image_size;
    let mut segments = Vec::with_capacity(spec.classes * spec.segments_per_class);
    let mut labels = Vec::with_capacity(segments.capacity());
    let mut motifs = Vec::with_capacity(spec.classes);
    let mut gt = GroundTruth::new();
    let mut vocab = Vocabulary::new(spec.text_dim);
    let width = (spec.segments_per_class.max(2) - 1).to_string().len();
    for (c, proto) in protos.iter().enumerate() {
        vocab.insert(SyntheticData::class_word(c), proto.clone())?;
        let base = motif(spec, c);
        let clean: Vec<u8> = base.iter().flat_map(|p| p.map(|v| v.round() as u8)).collect();
        motifs.push(preprocess_image(&RgbImage::new(s, s, clean)?, s)?);
        for i in 0..spec.segments_per_class {
            let phi: Vec<f64> = proto.iter().map(|&p| ((p + rng.sample(text_noise)) as f32) as f64).collect();
            let bytes: Vec<u8> = base
                .iter()
                .flat_map(|p| p.map(|v| (v + rng.sample(pixel_noise)).round().clamp(0.0, 255.0) as u8))
                .collect();
            let representative = preprocess_image(&RgbImage::new(s, s, bytes)?, s)?;
            let mut seg = Segment::new(format!("c{c}_s{i:0width$}"), phi);
            seg.visual_feature = Some(representative.iter().map(|&v| (v as f32) as f64).collect());
            seg.representative = Some(representative);
            segments.push(seg);
            labels.push(c);
        }
    }
    for (a, la) in segments.iter().zip(&labels) {
        for (t, lt) in segments.iter().zip(&labels) {
            if la == lt && a.id != t.id {
                gt.add(a.id.clone(), t.id.clone());
            }
        }
    }
    Ok(SyntheticData {
        dataset: Dataset { segments, text_dim: spec.text_dim, image_size: s },
        groundtruth: gt,
        vocabulary: vocab,
        prototypes: protos,
        labels,
        motifs,
    })
}
