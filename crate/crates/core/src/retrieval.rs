//! Corpus embedding, cosine ranking, precision at K and run statistics.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::data::{DataError, Dataset, GroundTruth};
use crate::models::{Model, ModelBundle, ModelError, Presence};
use crate::tensor::io::{load_values, save_values, MmteError};
use crate::tensor::{current_precision, with_precision, Mode, Tape, Tensor, TensorError};

/// Rows embedded per forward pass.
const EMBED_CHUNK: usize = 32;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("unknown anchor `{0}`")]
    UnknownAnchor(String),
    #[error("invalid embeddings: {0}")]
    Invalid(String),
    #[error("degenerate statistics: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Mmte { path: PathBuf, source: MmteError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Where an embedding matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Cgan,
    Ae,
    Bidnn,
    TextOnly,
    VisualOnly,
}

impl EmbeddingSource {
    pub fn tag(self) -> &'static str {
        match self {
            EmbeddingSource::Cgan => "cgan",
            EmbeddingSource::Ae => "ae",
            EmbeddingSource::Bidnn => "bidnn",
            EmbeddingSource::TextOnly => "text_only",
            EmbeddingSource::VisualOnly => "visual_only",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        [Self::Cgan, Self::Ae, Self::Bidnn, Self::TextOnly, Self::VisualOnly].into_iter().find(|s| s.tag() == tag)
    }
}

/// One embedding row per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f64>,
    source: EmbeddingSource,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f64>, source: EmbeddingSource) -> Result<Self, RetrievalError> {
        if data.len() != ids.len() * dim {
            return Err(RetrievalError::Invalid(format!(
                "{} ids × {dim} columns needs {} values, got {}",
                ids.len(),
                ids.len() * dim,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(RetrievalError::Invalid(format!("row `{}` has a non-finite value", ids[i / dim.max(1)])));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(RetrievalError::Invalid(format!("duplicate id `{id}`")));
            }
        }
        Ok(EmbeddingMatrix { ids, dim, data, source, index })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Sidecar id file written next to an MMTE embedding file.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".ids");
        PathBuf::from(s)
    }

    /// Write the matrix as 32-bit MMTE plus `<path>.ids`: a `#source=<tag>`
    /// line followed by one id per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let path = path.as_ref();
        if let Some(bad) = self.ids.iter().find(|id| id.starts_with('#') || id.contains('\n')) {
            return Err(RetrievalError::Invalid(format!("id `{bad}` cannot be stored in a sidecar")));
        }
        save_values(path, &[self.len(), self.dim], &self.data)
            .map_err(|source| RetrievalError::Mmte { path: path.to_path_buf(), source })?;
        let mut text = format!("#source={}\n", self.source.tag());
        for id in &self.ids {
            text.push_str(id);
            text.push('\n');
        }
        let side = Self::sidecar_path(path);
        fs::write(&side, text).map_err(|source| RetrievalError::Io { path: side, source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let path = path.as_ref();
        let (shape, data) =
            load_values(path).map_err(|source| RetrievalError::Mmte { path: path.to_path_buf(), source })?;
        let side = Self::sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|source| RetrievalError::Io { path: side.clone(), source })?;
        let mut source = None;
        let mut ids = Vec::new();
        for line in text.lines() {
            if let Some(tag) = line.strip_prefix("#source=") {
                source = EmbeddingSource::from_tag(tag.trim());
            } else if !line.is_empty() {
                ids.push(line.to_string());
            }
        }
        let source =
            source.ok_or_else(|| RetrievalError::Invalid(format!("{}: missing or unknown #source tag", side.display())))?;
        let dim = match shape[..] {
            [n, d] if n == ids.len() => d,
            _ => {
                return Err(RetrievalError::Invalid(format!(
                    "{}: shape {shape:?} does not match {} ids",
                    path.display(),
                    ids.len()
                )))
            }
        };
        Self::new(ids, dim, data, source)
    }
}

/// Embed every segment with a trained model, in dataset order.
///
/// CGAN bundles use the discriminator tap on (representative image, φ), the
/// autoencoder its central layer, the BiDNN both central activations. All
/// forward passes run in inference mode.
pub fn embed_corpus(bundle: &ModelBundle, data: &Dataset) -> Result<EmbeddingMatrix, RetrievalError> {
    let n = data.len();
    let (source, dim) = match &bundle.model {
        Model::Cgan(m) => {
            data.require_images()?;
            (EmbeddingSource::Cgan, m.discriminator.embedding_dim())
        }
        Model::Ae(m) => {
            data.require_features(m.config().visual_dim)?;
            (EmbeddingSource::Ae, m.config().hidden)
        }
        Model::Bidnn(m) => {
            data.require_features(m.config().visual_dim)?;
            (EmbeddingSource::Bidnn, m.config().embedding_dim())
        }
    };
    let starts: Vec<usize> = (0..n).step_by(EMBED_CHUNK).collect();
    let precision = current_precision();
    let chunks: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&start| with_precision(precision, || embed_chunk(bundle, data, start, (start + EMBED_CHUNK).min(n))))
        .collect::<Result<_, _>>()?;
    EmbeddingMatrix::new(data.ids(), dim, chunks.concat(), source)
}

fn embed_chunk(bundle: &ModelBundle, data: &Dataset, start: usize, end: usize) -> Result<Vec<f64>, RetrievalError> {
    let segs = &data.segments[start..end];
    let rows = segs.len();
    let phi = Tensor::new(&[rows, data.text_dim], segs.iter().flat_map(|s| s.phi.iter().copied()).collect())?;
    let tape = Tape::no_grad();
    let out = match &bundle.model {
        Model::Cgan(m) => {
            let s = data.image_size;
            let mut pixels = Vec::with_capacity(rows * 3 * s * s);
            for seg in segs {
                pixels.extend_from_slice(seg.representative()?);
            }
            let img = Tensor::new(&[rows, 3, s, s], pixels)?;
            m.discriminator.forward(&tape, &img, &phi, Mode::Infer)?.embedding
        }
        Model::Ae(m) => {
            let vis = visual(segs, m.config().visual_dim)?;
            m.forward(&tape, &phi, &vis)?.embedding
        }
        Model::Bidnn(m) => {
            let vis = visual(segs, m.config().visual_dim)?;
            m.forward(&tape, &phi, &vis, Presence::Both)?.embedding
        }
    };
    Ok(out.to_vec())
}

fn visual(segs: &[crate::data::Segment], dim: usize) -> Result<Tensor, RetrievalError> {
    let mut v = Vec::with_capacity(segs.len() * dim);
    for s in segs {
        v.extend_from_slice(s.visual_feature()?);
    }
    Ok(Tensor::new(&[segs.len(), dim], v)?)
}

/// Single-modality baseline embeddings: φ alone or the visual feature alone.
pub fn modality_embeddings(data: &Dataset, source: EmbeddingSource) -> Result<EmbeddingMatrix, RetrievalError> {
    match source {
        EmbeddingSource::TextOnly => {
            let rows = data.segments.iter().flat_map(|s| s.phi.iter().copied()).collect();
            EmbeddingMatrix::new(data.ids(), data.text_dim, rows, source)
        }
        EmbeddingSource::VisualOnly => {
            let dim = data
                .visual_dim()
                .ok_or_else(|| RetrievalError::Invalid("segments lack uniform visual features".into()))?;
            let mut rows = Vec::with_capacity(data.len() * dim);
            for s in &data.segments {
                rows.extend_from_slice(s.visual_feature()?);
            }
            EmbeddingMatrix::new(data.ids(), dim, rows, source)
        }
        other => Err(RetrievalError::Invalid(format!("{} embeddings come from a trained model", other.tag()))),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cosine_from_parts(ab: f64, na: f64, nb: f64) -> (f64, bool) {
    if na == 0.0 || nb == 0.0 {
        return (1.0, true);
    }
    ((1.0 - ab / (na * nb)).clamp(0.0, 2.0), false)
}

/// `1 − a·b / (‖a‖‖b‖)` in `[0, 2]`. When either vector is zero the distance
/// is 1 and the flag is set.
///
/// # Panics
/// If the lengths differ.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> (f64, bool) {
    assert_eq!(a.len(), b.len(), "cosine_distance of vectors with different lengths");
    cosine_from_parts(dot(a, b), norm(a), norm(b))
}

/// The `k` segments nearest to `anchor` by cosine distance, the anchor itself
/// excluded, ties broken by id.
pub fn rank_targets(anchor: &str, emb: &EmbeddingMatrix, k: usize) -> Result<Vec<(String, f64)>, RetrievalError> {
    let a = emb.index_of(anchor).ok_or_else(|| RetrievalError::UnknownAnchor(anchor.to_string()))?;
    let norms: Vec<f64> = (0..emb.len()).map(|i| norm(emb.row(i))).collect();
    Ok(rank_with_norms(a, emb, &norms, k))
}

fn rank_with_norms(a: usize, emb: &EmbeddingMatrix, norms: &[f64], k: usize) -> Vec<(String, f64)> {
    let q = emb.row(a);
    let mut scored: Vec<(usize, f64)> = (0..emb.len())
        .filter(|&i| i != a)
        .map(|i| (i, cosine_from_parts(dot(q, emb.row(i)), norms[a], norms[i]).0))
        .collect();
    let cmp = |x: &(usize, f64), y: &(usize, f64)| x.1.total_cmp(&y.1).then_with(|| emb.ids[x.0].cmp(&emb.ids[y.0]));
    let k = k.min(scored.len());
    if k < scored.len() && k > 0 {
        scored.select_nth_unstable_by(k - 1, cmp);
    }
    scored.truncate(k);
    scored.sort_by(cmp);
    scored.into_iter().map(|(i, d)| (emb.ids[i].clone(), d)).collect()
}

/// Fraction of the first `k` ranked ids that are relevant; a short ranking
/// counts its missing places as non-relevant.
pub fn precision_at_k<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    ranking.iter().take(k).filter(|id| relevant.contains(id.as_ref())).count() as f64 / k as f64
}

/// Precision at K over anchors, aggregated across independent runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub k: usize,
    pub anchors: Vec<String>,
    /// `per_anchor[run][anchor]` precision values.
    pub per_anchor: Vec<Vec<f64>>,
    pub run_means: Vec<f64>,
    /// Mean of run means, as a fraction.
    pub mean: f64,
    /// Sample standard deviation of the run means; `None` for a single run.
    pub sigma: Option<f64>,
}

impl EvalReport {
    pub fn runs(&self) -> usize {
        self.run_means.len()
    }

    pub fn mean_percent(&self) -> f64 {
        100.0 * self.mean
    }

    pub fn sigma_percent(&self) -> Option<f64> {
        self.sigma.map(|s| 100.0 * s)
    }
}

/// Mean and sample standard deviation (`None` below two values).
pub fn mean_and_sigma(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sigma = (values.len() >= 2)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, sigma)
}

/// Evaluate precision at `k` for every run.
///
/// Anchors are the first run's ids that have ground-truth entries; ids
/// without judgments are skipped. Every anchor must exist in every run.
pub fn evaluate(runs: &[EmbeddingMatrix], gt: &GroundTruth, k: usize) -> Result<EvalReport, RetrievalError> {
    let first = runs.first().ok_or_else(|| RetrievalError::Invalid("no runs to evaluate".into()))?;
    if k == 0 {
        return Err(RetrievalError::Invalid("k must be at least 1".into()));
    }
    let anchors: Vec<String> = first.ids().iter().filter(|id| gt.relevant(id).is_some()).cloned().collect();
    let skipped = first.len() - anchors.len();
    if skipped > 0 {
        log::info!("{skipped} segments have no relevance judgments and are not used as anchors");
    }
    if anchors.is_empty() {
        return Err(RetrievalError::Invalid("no embedded segment has relevance judgments".into()));
    }
    let mut per_anchor = Vec::with_capacity(runs.len());
    for run in runs {
        let norms: Vec<f64> = (0..run.len()).map(|i| norm(run.row(i))).collect();
        let values = anchors
            .par_iter()
            .map(|a| {
                let i = run.index_of(a).ok_or_else(|| RetrievalError::UnknownAnchor(a.clone()))?;
                let ranking: Vec<String> = rank_with_norms(i, run, &norms, k).into_iter().map(|(id, _)| id).collect();
                Ok(precision_at_k(&ranking, gt.relevant(a).expect("filtered"), k))
            })
            .collect::<Result<Vec<f64>, RetrievalError>>()?;
        per_anchor.push(values);
    }
    let run_means: Vec<f64> = per_anchor.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let (mean, sigma) = mean_and_sigma(&run_means);
    Ok(EvalReport { k, anchors, per_anchor, run_means, mean, sigma })
}

/// Aligned text table: one row per method with mean P@K and σ in percent.
pub fn format_table(rows: &[(&str, &EvalReport)]) -> String {
    let k = rows.first().map(|(_, r)| r.k).unwrap_or(10);
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    writeln!(out, "{:<width$}  {:>7}  {:>5}  {:>4}", "Method", format!("P@{k}"), "σ", "runs").expect("string write");
    for (label, r) in rows {
        let sigma = r.sigma_percent().map(|s| format!("{s:.2}")).unwrap_or_default();
        writeln!(out, "{label:<width$}  {:>7.2}  {sigma:>5}  {:>4}", r.mean_percent(), r.runs()).expect("string write");
    }
    out
}

/// `method,k,runs,mean_pct,sigma_pct`, σ left empty for single runs.
pub fn format_csv(rows: &[(&str, &EvalReport)]) -> String {
    let mut out = String::from("method,k,runs,mean_pct,sigma_pct\n");
    for (label, r) in rows {
        let sigma = r.sigma_percent().map(|s| format!("{s:.6}")).unwrap_or_default();
        writeln!(out, "{label},{},{},{:.6},{sigma}", r.k, r.runs(), r.mean_percent()).expect("string write");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    /// One-sided p-value for `mean(a) > mean(b)`.
    pub p: f64,
    pub dof: f64,
}

/// Welch's unequal-variance t-test, one-sided for `mean(a) > mean(b)`.
///
/// Two samples that are both constant and equal give `t = 0`, `p = 0.5`;
/// constant samples with different means are degenerate.
pub fn one_sided_t_test(a: &[f64], b: &[f64]) -> Result<TTest, RetrievalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(RetrievalError::Degenerate("each sample needs at least 2 values".into()));
    }
    let (ma, sa) = mean_and_sigma(a);
    let (mb, sb) = mean_and_sigma(b);
    let (va, vb) = (sa.expect("n >= 2").powi(2) / a.len() as f64, sb.expect("n >= 2").powi(2) / b.len() as f64);
    let se2 = va + vb;
    if se2 == 0.0 {
        if ma == mb {
            return Ok(TTest { t: 0.0, p: 0.5, dof: (a.len() + b.len() - 2) as f64 });
        }
        return Err(RetrievalError::Degenerate("both samples have zero variance".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2
        / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| RetrievalError::Degenerate(e.to_string()))?;
    Ok(TTest { t, p: dist.sf(t), dof })
}
