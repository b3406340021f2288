use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::{preprocess_image, read_image, select_representative_keyframe, to_rgb, write_ppm};
use super::text::{average_word_embeddings, Vocabulary};
use super::{DataError, Dataset, Segment};
use crate::tensor::io::{load_values, save_values};

/// One line of a JSONL manifest. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<f64>>,
    /// MMTE file holding φ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_file: Option<String>,
    /// Transcript words, averaged through the vocabulary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub words: Option<Vec<String>>,
    #[serde(default)]
    pub keyframes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_feature: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_feature_file: Option<String>,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub image_size: usize,
    /// Expected φ length; taken from the first surviving segment when `None`.
    pub text_dim: Option<usize>,
    /// Needed for records that give `words` instead of φ.
    pub vocab: Option<Vocabulary>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { image_size: 64, text_dim: None, vocab: None }
    }
}

#[derive(Debug)]
pub struct LoadReport {
    pub dataset: Dataset,
    /// `(segment id, reason)` for every record that was not kept.
    pub dropped: Vec<(String, String)>,
}

enum Outcome {
    Keep(Segment),
    Drop(String),
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_vector(base: &Path, file: &str) -> Result<Vec<f64>, DataError> {
    let path = resolve(base, file);
    load_values(&path).map(|(_, v)| v).map_err(|source| DataError::Mmte { path, source })
}

fn build_segment(rec: ManifestRecord, base: &Path, opts: &LoadOptions) -> Result<Outcome, DataError> {
    let phi = if let Some(phi) = rec.phi {
        phi
    } else if let Some(f) = &rec.phi_file {
        load_vector(base, f)?
    } else if let Some(words) = &rec.words {
        let vocab = opts
            .vocab
            .as_ref()
            .ok_or_else(|| DataError::Invalid("record gives words but no vocabulary was supplied".into()))?;
        let (phi, coverage) = average_word_embeddings(words, vocab);
        if coverage == 0.0 {
            return Ok(Outcome::Drop("no transcript word is in the vocabulary".into()));
        }
        phi
    } else {
        return Ok(Outcome::Drop("no transcript".into()));
    };
    if rec.keyframes.is_empty() {
        return Ok(Outcome::Drop("no keyframes".into()));
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(DataError::Invalid("phi has a non-finite component".into()));
    }
    let keyframes: Vec<PathBuf> = rec.keyframes.iter().map(|k| resolve(base, k)).collect();
    let frames = keyframes.iter().map(read_image).collect::<Result<Vec<_>, _>>()?;
    let (index, frame) = select_representative_keyframe(&frames)?;
    let representative = preprocess_image(frame, opts.image_size)?;
    let visual_feature = match (rec.visual_feature, &rec.visual_feature_file) {
        (Some(v), _) => Some(v),
        (None, Some(f)) => Some(load_vector(base, f)?),
        (None, None) => None,
    };
    Ok(Outcome::Keep(Segment {
        id: rec.id,
        phi,
        keyframes,
        representative_index: Some(index),
        representative: Some(representative),
        visual_feature,
    }))
}

/// Read a JSONL manifest, keeping segments that have both text and imagery.
///
/// Per-segment problems are collected in [`LoadReport::dropped`]; loading
/// fails only when the manifest cannot be read or nothing survives.
pub fn load_dataset(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<LoadReport, DataError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut segments: Vec<Segment> = Vec::new();
    let mut dropped = Vec::new();
    let mut seen = HashSet::new();
    let mut records = 0usize;
    let mut text_dim = opts.text_dim;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records += 1;
        let rec: ManifestRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                dropped.push((format!("line {}", i + 1), e.to_string()));
                continue;
            }
        };
        let id = rec.id.clone();
        if !seen.insert(id.clone()) {
            dropped.push((id, "duplicate id".into()));
            continue;
        }
        match build_segment(rec, base, opts) {
            Ok(Outcome::Keep(s)) => {
                let dim = *text_dim.get_or_insert(s.phi.len());
                if s.phi.len() != dim {
                    dropped.push((id, format!("phi has {} values, expected {dim}", s.phi.len())));
                } else {
                    segments.push(s);
                }
            }
            Ok(Outcome::Drop(reason)) => dropped.push((id, reason)),
            Err(e) => dropped.push((id, e.to_string())),
        }
    }
    if records == 0 {
        return Err(DataError::Invalid(format!("{}: manifest has no segments", path.display())));
    }
    if !dropped.is_empty() {
        log::warn!("dropped {} of {records} segments from {}", dropped.len(), path.display());
        for (id, reason) in dropped.iter().take(10) {
            log::debug!("dropped `{id}`: {reason}");
        }
    }
    if segments.is_empty() {
        let first = dropped.first().map(|(id, r)| format!(" (first: `{id}`: {r})")).unwrap_or_default();
        return Err(DataError::Invalid(format!("{}: no segment survived loading{first}", path.display())));
    }
    let text_dim = text_dim.expect("set by the first kept segment");
    Ok(LoadReport { dataset: Dataset { segments, text_dim, image_size: opts.image_size }, dropped })
}

/// Write a dataset as `manifest.jsonl` plus one PPM keyframe and, when
/// present, one MMTE visual-feature file per segment. Returns the manifest path.
pub fn write_dataset(dir: impl AsRef<Path>, data: &Dataset) -> Result<PathBuf, DataError> {
    let dir = dir.as_ref();
    for sub in ["keyframes", "features"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| DataError::io(dir.join(sub), e))?;
    }
    let manifest = dir.join("manifest.jsonl");
    let io = |e| DataError::io(&manifest, e);
    let mut w = BufWriter::new(fs::File::create(&manifest).map_err(io)?);
    for (i, s) in data.segments.iter().enumerate() {
        let frame = format!("keyframes/{i:05}.ppm");
        write_ppm(dir.join(&frame), &to_rgb(s.representative()?, data.image_size)?)?;
        let visual_feature_file = match &s.visual_feature {
            Some(v) => {
                let f = format!("features/{i:05}.mmte");
                let p = dir.join(&f);
                save_values(&p, &[v.len()], v).map_err(|source| DataError::Mmte { path: p, source })?;
                Some(f)
            }
            None => None,
        };
        let rec = ManifestRecord {
            id: s.id.clone(),
            phi: Some(s.phi.clone()),
            keyframes: vec![frame],
            visual_feature_file,
            ..Default::default()
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| DataError::Invalid(e.to_string()))?;
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(manifest)
}

/// Binary relevance judgments: anchor id → relevant target ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    relevant: BTreeMap<String, BTreeSet<String>>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, anchor: impl Into<String>, target: impl Into<String>) {
        self.relevant.entry(anchor.into()).or_default().insert(target.into());
    }

    pub fn relevant(&self, anchor: &str) -> Option<&BTreeSet<String>> {
        self.relevant.get(anchor)
    }

    pub fn anchors(&self) -> impl Iterator<Item = &str> {
        self.relevant.keys().map(String::as_str)
    }

    pub fn num_pairs(&self) -> usize {
        self.relevant.values().map(BTreeSet::len).sum()
    }

    /// Parse `anchor<TAB>target` lines; blank lines and `#` comments are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let mut gt = GroundTruth::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split('\t').collect::<Vec<_>>()[..] {
                [a, t] if !a.is_empty() && !t.is_empty() => gt.add(a, t),
                _ => {
                    return Err(DataError::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        msg: "expected `anchor<TAB>target`".into(),
                    })
                }
            }
        }
        Ok(gt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        let io = |e| DataError::io(path, e);
        let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
        for (a, targets) in &self.relevant {
            for t in targets {
                writeln!(w, "{a}\t{t}").map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{write_ppm, RgbImage};

    fn setup() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        for (name, v) in [("a.ppm", 10u8), ("b.ppm", 100), ("c.ppm", 240)] {
            write_ppm(dir.path().join(name), &RgbImage::filled(6, 4, [v; 3])).unwrap();
        }
        (dir, PathBuf::new())
    }

    #[test]
    fn drops_segments_without_keyframes() {
        let (dir, _) = setup();
        let m = dir.path().join("m.jsonl");
        fs::write(
            &m,
            concat!(
                r#"{"id":"s1","phi":[1,2],"keyframes":["a.ppm","b.ppm","c.ppm"]}"#,
                "\n",
                r#"{"id":"s2","phi":[3,4],"keyframes":[]}"#,
                "\n\n",
                r#"{"id":"s3","phi":[5,6],"keyframes":["c.ppm"],"visual_feature":[0.5]}"#,
                "\n"
            ),
        )
        .unwrap();
        let r = load_dataset(&m, &LoadOptions { image_size: 4, ..Default::default() }).unwrap();
        assert_eq!(r.dataset.ids(), vec!["s1", "s3"]);
        assert_eq!(r.dropped.len(), 1);
        assert_eq!(r.dataset.text_dim, 2);
        assert_eq!(r.dataset.segments[0].representative_index, Some(1));
        assert_eq!(r.dataset.segments[1].visual_feature, Some(vec![0.5]));
        // Loading is idempotent.
        let again = load_dataset(&m, &LoadOptions { image_size: 4, ..Default::default() }).unwrap();
        assert_eq!(again.dataset, r.dataset);
    }

    #[test]
    fn words_go_through_the_vocabulary() {
        let (dir, _) = setup();
        let m = dir.path().join("m.jsonl");
        fs::write(
            &m,
            concat!(
                r#"{"id":"x","words":["a","b","nope"],"keyframes":["a.ppm"]}"#,
                "\n",
                r#"{"id":"y","words":["nope"],"keyframes":["a.ppm"]}"#,
                "\n"
            ),
        )
        .unwrap();
        let mut vocab = Vocabulary::new(2);
        vocab.insert("a", vec![1.0, 0.0]).unwrap();
        vocab.insert("b", vec![0.0, 1.0]).unwrap();
        let r = load_dataset(&m, &LoadOptions { image_size: 4, text_dim: None, vocab: Some(vocab) }).unwrap();
        assert_eq!(r.dataset.segments.len(), 1);
        assert_eq!(r.dataset.segments[0].phi, vec![0.5, 0.5]);
    }

    #[test]
    fn empty_or_hopeless_manifests_fail() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.jsonl");
        fs::write(&m, "\n").unwrap();
        assert!(load_dataset(&m, &LoadOptions::default()).is_err());
        fs::write(&m, r#"{"id":"a","phi":[1],"keyframes":["missing.ppm"]}"#).unwrap();
        assert!(load_dataset(&m, &LoadOptions::default()).is_err());
        assert!(matches!(load_dataset(dir.path().join("nope"), &LoadOptions::default()), Err(DataError::Io { .. })));
    }

    #[test]
    fn write_then_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img: Vec<f64> = (0..3 * 4 * 4).map(|i| (i * 5 % 256) as f64 / 127.5 - 1.0).collect();
        let mut segments = Vec::new();
        for i in 0..3 {
            let mut s = Segment::new(format!("seg{i}"), vec![0.1 * i as f64, 1.0 / 3.0, -2.5e-7]);
            s.representative = Some(img.clone());
            s.visual_feature = Some(vec![0.25, -1.0, i as f64]);
            segments.push(s);
        }
        let data = Dataset { segments, text_dim: 3, image_size: 4 };
        let m = write_dataset(dir.path(), &data).unwrap();
        let back = load_dataset(&m, &LoadOptions { image_size: 4, ..Default::default() }).unwrap().dataset;
        assert_eq!(back.ids(), data.ids());
        for (a, b) in back.segments.iter().zip(&data.segments) {
            assert_eq!(a.phi.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.phi.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            assert_eq!(a.visual_feature, b.visual_feature);
            for (x, y) in a.representative().unwrap().iter().zip(&img) {
                assert!((x - y).abs() <= 1.0 / 127.5);
            }
        }
    }

    #[test]
    fn ground_truth_tsv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gt.tsv");
        let mut gt = GroundTruth::new();
        gt.add("a", "b");
        gt.add("a", "c");
        gt.add("b", "a");
        gt.save(&p).unwrap();
        assert_eq!(GroundTruth::load(&p).unwrap(), gt);
        assert_eq!(gt.num_pairs(), 3);
        fs::write(&p, "a b\n").unwrap();
        assert!(matches!(GroundTruth::load(&p), Err(DataError::Parse { line: 1, .. })));
    }
}
