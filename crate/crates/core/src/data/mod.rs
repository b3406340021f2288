//! Segment datasets: image and text preprocessing, manifests, ground truth
//! and a synthetic paired-modality generator.

mod image;
mod manifest;
mod synthetic;
mod text;

pub use self::image::{
    preprocess_image, read_image, read_ppm, select_representative_keyframe, to_rgb, write_png, write_ppm, RgbImage,
};
pub use manifest::{load_dataset, write_dataset, GroundTruth, LoadOptions, LoadReport, ManifestRecord};
pub use synthetic::{generate_synthetic_dataset, hsv_to_rgb, class_hue, SyntheticData, SyntheticSpec};
pub use text::{average_word_embeddings, tokenize, Vocabulary};

use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::io::MmteError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("image error: {0}")]
    Image(String),
    #[error("segment `{segment}` has no {what}")]
    Missing { segment: String, what: &'static str },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Mmte { path: PathBuf, source: MmteError },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io { path: path.into(), source }
    }
}

/// One video segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: String,
    /// Averaged word embedding of the transcript.
    pub phi: Vec<f64>,
    /// Source keyframe files, when the segment came from disk.
    pub keyframes: Vec<PathBuf>,
    /// Index into `keyframes` of the chosen representative.
    pub representative_index: Option<usize>,
    /// Representative keyframe as a `3×S×S` array in `[-1, 1]`, channel-major.
    pub representative: Option<Vec<f64>>,
    pub visual_feature: Option<Vec<f64>>,
}

impl Segment {
    pub fn new(id: impl Into<String>, phi: Vec<f64>) -> Self {
        Segment {
            id: id.into(),
            phi,
            keyframes: Vec::new(),
            representative_index: None,
            representative: None,
            visual_feature: None,
        }
    }

    pub fn representative(&self) -> Result<&[f64], DataError> {
        self.representative
            .as_deref()
            .ok_or_else(|| DataError::Missing { segment: self.id.clone(), what: "representative image" })
    }

    pub fn visual_feature(&self) -> Result<&[f64], DataError> {
        self.visual_feature
            .as_deref()
            .ok_or_else(|| DataError::Missing { segment: self.id.clone(), what: "visual feature" })
    }
}

/// Segments sharing one text dimension and one image size.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub segments: Vec<Segment>,
    pub text_dim: usize,
    pub image_size: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.segments.iter().map(|s| s.id.clone()).collect()
    }

    /// Dimension of the visual features, if every segment has one of equal length.
    pub fn visual_dim(&self) -> Option<usize> {
        let first = self.segments.first()?.visual_feature.as_ref()?.len();
        self.segments
            .iter()
            .all(|s| s.visual_feature.as_ref().map(Vec::len) == Some(first))
            .then_some(first)
    }

    /// Checks every segment carries what image-and-text training needs.
    pub fn require_images(&self) -> Result<(), DataError> {
        let expected = 3 * self.image_size * self.image_size;
        for s in &self.segments {
            self.check_phi(s)?;
            if s.representative()?.len() != expected {
                return Err(DataError::Dimension(format!(
                    "segment `{}` image has {} values, expected {expected}",
                    s.id,
                    s.representative()?.len()
                )));
            }
        }
        Ok(())
    }

    /// Checks every segment carries φ and a visual feature of dimension `dim`.
    pub fn require_features(&self, dim: usize) -> Result<(), DataError> {
        for s in &self.segments {
            self.check_phi(s)?;
            let v = s.visual_feature()?;
            if v.len() != dim {
                return Err(DataError::Dimension(format!(
                    "segment `{}` visual feature has {} values, expected {dim}",
                    s.id,
                    v.len()
                )));
            }
        }
        Ok(())
    }

    fn check_phi(&self, s: &Segment) -> Result<(), DataError> {
        if s.phi.len() != self.text_dim {
            return Err(DataError::Dimension(format!(
                "segment `{}` phi has {} values, expected {}",
                s.id,
                s.phi.len(),
                self.text_dim
            )));
        }
        Ok(())
    }
}
