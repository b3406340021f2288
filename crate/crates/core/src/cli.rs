//! The `ganlink` command-line interface.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error, 3 data
//! error. Set `HYPERLINK_PRECISION=high` to run every tensor operation in
//! 64-bit precision.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::{
    average_word_embeddings, load_dataset, preprocess_image, read_image, tokenize, DataError, Dataset, GroundTruth,
    LoadOptions, Vocabulary,
};
use crate::models::{
    AeConfig, BidnnConfig, CganConfig, DiscriminatorConfig, GeneratorConfig, Model, ModelBundle, ModelKind,
};
use crate::nn::OptimConfig;
use crate::retrieval::{
    embed_corpus, evaluate, format_csv, format_table, modality_embeddings, one_sided_t_test, rank_targets,
    EmbeddingMatrix, EmbeddingSource, EvalReport,
};
use crate::tensor::io::load_values;
use crate::training::{train_ae, train_bidnn, train_cgan, TrainConfig};
use crate::viz::{invert_generator, nearest_words, render_text_to_images, slice_text_part, write_image, DEFAULT_TOP_WORDS};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "ganlink", version, about = "Multimodal embeddings for video hyperlinking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus a loss log.
    Train(TrainArgs),
    /// Embed every segment of a manifest.
    Embed(EmbedArgs),
    /// Rank the segments nearest to one anchor.
    Rank(RankArgs),
    /// Precision at K over anchors, optionally across several runs.
    Evaluate(EvaluateArgs),
    /// Render images for a text vector with a trained CGAN.
    Generate(GenerateArgs),
    /// Invert the generator on an image and list the nearest words.
    Invert(InvertArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: ModelKind,
    /// JSONL manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Flat JSON object of model, schedule and optimizer keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log CSV; defaults to the checkpoint path with a `.csv` extension.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Word vectors for manifest records that list words instead of φ.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Trained checkpoint; omit together with `--modality` for a baseline.
    #[arg(long, required_unless_present = "modality")]
    pub ckpt: Option<PathBuf>,
    /// Single-modality baseline instead of a model.
    #[arg(long, value_parser = ["text", "visual"], conflicts_with = "ckpt")]
    pub modality: Option<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Keyframe size for baselines; checkpoints carry their own.
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub anchor: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// `label=path` of one embedding file; repeat a label for several runs.
    #[arg(long)]
    pub embeddings: Vec<String>,
    /// `label=dir`: every `.mmte` file in the directory is one run.
    #[arg(long)]
    pub runs: Vec<String>,
    #[arg(long)]
    pub groundtruth: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// `a,b`: one-sided Welch t-test that label a beats label b.
    #[arg(long)]
    pub compare: Option<String>,
    /// Report CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// φ as MMTE or whitespace-separated numbers.
    #[arg(long, required_unless_present = "words", conflicts_with = "words")]
    pub phi: Option<PathBuf>,
    /// Words whose vectors are averaged into φ.
    #[arg(long, requires = "vocab")]
    pub words: Option<String>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// `3×S×S` MMTE tensor in `[-1, 1]`, or a PPM/PNG image.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_WORDS)]
    pub top: usize,
}

/// Every key a `--config` file may contain. Which keys apply depends on the
/// model; `text_dim` and `visual_dim` default to the dataset's.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub text_dim: Option<usize>,
    pub image_size: Option<usize>,
    pub channels: Option<usize>,
    pub noise_dim: Option<usize>,
    pub text_fc: Option<usize>,
    pub deconv_maps: Option<Vec<usize>>,
    pub conv_maps: Option<Vec<usize>>,
    pub join_maps: Option<usize>,
    pub visual_dim: Option<usize>,
    pub branch: Option<usize>,
    pub hidden: Option<usize>,
    pub modality_dropout: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub gen_updates_per_disc: Option<usize>,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub clip_norm: Option<f64>,
}

const CGAN_KEYS: &[&str] =
    &["text_dim", "image_size", "channels", "noise_dim", "text_fc", "deconv_maps", "conv_maps", "join_maps"];
const AE_KEYS: &[&str] = &["text_dim", "visual_dim", "branch", "hidden", "modality_dropout"];
const BIDNN_KEYS: &[&str] = &["text_dim", "visual_dim", "hidden"];
const TRAIN_KEYS: &[&str] =
    &["epochs", "batch_size", "gen_updates_per_disc", "learning_rate", "beta1", "beta2", "epsilon", "clip_norm"];

impl RunConfig {
    /// Parse a flat JSON object. Unknown and repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Reject keys that do not apply to `kind`.
    pub fn check_keys(&self, kind: ModelKind) -> Result<()> {
        let allowed = match kind {
            ModelKind::Cgan => CGAN_KEYS,
            ModelKind::Ae => AE_KEYS,
            ModelKind::Bidnn => BIDNN_KEYS,
        };
        let value = serde_json::to_value(self).expect("config serializes");
        let map = value.as_object().expect("struct serializes to an object");
        let mut bad: Vec<&str> = map
            .iter()
            .filter(|(k, v)| !v.is_null() && !allowed.contains(&k.as_str()) && !TRAIN_KEYS.contains(&k.as_str()))
            .map(|(k, _)| k.as_str())
            .collect();
        bad.sort_unstable();
        if !bad.is_empty() {
            return Err(Error::Config(format!("keys {bad:?} do not apply to a {kind} model")));
        }
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let d = TrainConfig::default();
        let o = OptimConfig::default();
        TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            gen_updates_per_disc: self.gen_updates_per_disc.unwrap_or(d.gen_updates_per_disc),
            seed,
            optimizer: OptimConfig {
                learning_rate: self.learning_rate.unwrap_or(o.learning_rate),
                beta1: self.beta1.unwrap_or(o.beta1),
                beta2: self.beta2.unwrap_or(o.beta2),
                epsilon: self.epsilon.unwrap_or(o.epsilon),
                clip_norm: self.clip_norm.or(o.clip_norm),
            },
        }
    }

    pub fn cgan_config(&self, data_text_dim: Option<usize>) -> CganConfig {
        let (g, d) = (GeneratorConfig::default(), DiscriminatorConfig::default());
        let text_dim = self.text_dim.or(data_text_dim).unwrap_or(g.text_dim);
        CganConfig {
            generator: GeneratorConfig {
                noise_dim: self.noise_dim.unwrap_or(g.noise_dim),
                text_dim,
                text_fc: self.text_fc.unwrap_or(g.text_fc),
                deconv_maps: self.deconv_maps.clone().unwrap_or(g.deconv_maps),
                image_size: self.image_size.unwrap_or(g.image_size),
                channels: self.channels.unwrap_or(g.channels),
            },
            discriminator: DiscriminatorConfig {
                conv_maps: self.conv_maps.clone().unwrap_or(d.conv_maps),
                text_dim,
                text_fc: self.text_fc.unwrap_or(d.text_fc),
                join_maps: self.join_maps.unwrap_or(d.join_maps),
                image_size: self.image_size.unwrap_or(d.image_size),
                channels: self.channels.unwrap_or(d.channels),
            },
        }
    }

    pub fn ae_config(&self, data: &Dataset) -> AeConfig {
        let d = AeConfig::default();
        AeConfig {
            text_dim: self.text_dim.unwrap_or(data.text_dim),
            visual_dim: self.visual_dim.or(data.visual_dim()).unwrap_or(d.visual_dim),
            branch: self.branch.unwrap_or(d.branch),
            hidden: self.hidden.unwrap_or(d.hidden),
            modality_dropout: self.modality_dropout.unwrap_or(d.modality_dropout),
        }
    }

    pub fn bidnn_config(&self, data: &Dataset) -> BidnnConfig {
        let d = BidnnConfig::default();
        BidnnConfig {
            text_dim: self.text_dim.unwrap_or(data.text_dim),
            visual_dim: self.visual_dim.or(data.visual_dim()).unwrap_or(d.visual_dim),
            hidden: self.hidden.unwrap_or(d.hidden),
        }
    }
}

/// Parse arguments (program name first) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Invert(a) => cmd_invert(a),
    }
}

fn load_vocab(path: Option<&PathBuf>) -> Result<Option<Vocabulary>> {
    Ok(path.map(Vocabulary::load).transpose()?)
}

fn load_data(path: &Path, opts: LoadOptions) -> Result<Dataset> {
    let report = load_dataset(path, &opts)?;
    for (id, reason) in &report.dropped {
        log::warn!("dropped segment {id}: {reason}");
    }
    if !report.dropped.is_empty() {
        eprintln!("{} segments dropped, {} kept", report.dropped.len(), report.dataset.len());
    }
    Ok(report.dataset)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.check_keys(a.model)?;
    let train = cfg.train_config(a.seed);
    train.validate()?;
    let vocab = load_vocab(a.vocab.as_ref())?;
    let image_size = match a.model {
        ModelKind::Cgan => cfg.image_size.unwrap_or(GeneratorConfig::default().image_size),
        _ => LoadOptions::default().image_size,
    };
    let data = load_data(&a.data, LoadOptions { image_size, text_dim: cfg.text_dim, vocab })?;
    let (bundle, log) = match a.model {
        ModelKind::Cgan => {
            let model = cfg.cgan_config(Some(data.text_dim));
            model.validate()?;
            train_cgan(&data, &model, &train)?
        }
        ModelKind::Ae => train_ae(&data, &cfg.ae_config(&data), &train)?,
        ModelKind::Bidnn => train_bidnn(&data, &cfg.bidnn_config(&data), &train)?,
    };
    save_checkpoint(&bundle, &a.out)?;
    let log_path = a.log.unwrap_or_else(|| a.out.with_extension("csv"));
    log.write_csv(&log_path)?;
    if let Some(last) = log.epochs.last() {
        println!("trained {} for {} epochs; final mean loss {:.6}", bundle.kind(), bundle.meta.epochs, last.mean_loss);
    }
    Ok(())
}

fn checkpoint_image_size(bundle: &ModelBundle) -> usize {
    match &bundle.model {
        Model::Cgan(m) => m.discriminator.config().image_size,
        _ => LoadOptions::default().image_size,
    }
}

fn cmd_embed(a: EmbedArgs) -> Result<()> {
    let vocab = load_vocab(a.vocab.as_ref())?;
    let emb = match (&a.ckpt, a.modality.as_deref()) {
        (Some(ckpt), _) => {
            let bundle = load_checkpoint(ckpt)?;
            let data = load_data(&a.data, LoadOptions { image_size: checkpoint_image_size(&bundle), text_dim: None, vocab })?;
            embed_corpus(&bundle, &data)?
        }
        (None, Some(m)) => {
            let data = load_data(&a.data, LoadOptions { image_size: a.image_size, text_dim: None, vocab })?;
            let source = if m == "text" { EmbeddingSource::TextOnly } else { EmbeddingSource::VisualOnly };
            modality_embeddings(&data, source)?
        }
        (None, None) => return Err(Error::Config("give --ckpt or --modality".into())),
    };
    emb.save(&a.out)?;
    println!("{} embeddings of dimension {} written to {}", emb.len(), emb.dim(), a.out.display());
    Ok(())
}

fn cmd_rank(a: RankArgs) -> Result<()> {
    let emb = EmbeddingMatrix::load(&a.embeddings)?;
    for (i, (id, d)) in rank_targets(&a.anchor, &emb, a.k)?.into_iter().enumerate() {
        println!("{}\t{id}\t{d:.6}", i + 1);
    }
    Ok(())
}

fn split_label(spec: &str) -> Result<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((l, p)) if !l.is_empty() && !p.is_empty() => Ok((l.to_string(), PathBuf::from(p))),
        Some(_) => Err(Error::Config(format!("`{spec}` is not label=path"))),
        None => {
            let p = PathBuf::from(spec);
            let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.to_string());
            Ok((label, p))
        }
    }
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let mut groups: Vec<(String, Vec<EmbeddingMatrix>)> = Vec::new();
    let mut push = |label: String, m: EmbeddingMatrix| match groups.iter_mut().find(|(l, _)| *l == label) {
        Some((_, runs)) => runs.push(m),
        None => groups.push((label, vec![m])),
    };
    for spec in &a.embeddings {
        let (label, path) = split_label(spec)?;
        push(label, EmbeddingMatrix::load(&path)?);
    }
    for spec in &a.runs {
        let (label, dir) = split_label(spec)?;
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| DataError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "mmte"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(DataError::Invalid(format!("{}: no .mmte runs", dir.display())).into());
        }
        for f in files {
            push(label.clone(), EmbeddingMatrix::load(&f)?);
        }
    }
    if groups.is_empty() {
        return Err(Error::Config("give at least one --embeddings or --runs".into()));
    }
    let gt = GroundTruth::load(&a.groundtruth)?;
    let mut reports: BTreeMap<String, EvalReport> = BTreeMap::new();
    let mut order = Vec::new();
    for (label, runs) in &groups {
        reports.insert(label.clone(), evaluate(runs, &gt, a.k)?);
        order.push(label.clone());
    }
    let rows: Vec<(&str, &EvalReport)> = order.iter().map(|l| (l.as_str(), &reports[l])).collect();
    print!("{}", format_table(&rows));
    if let Some(out) = &a.out {
        fs::write(out, format_csv(&rows)).map_err(|e| DataError::io(out, e))?;
    }
    if let Some(pair) = &a.compare {
        let (x, y) = pair.split_once(',').ok_or_else(|| Error::Config(format!("--compare `{pair}` is not a,b")))?;
        let get = |l: &str| reports.get(l.trim()).ok_or_else(|| Error::Config(format!("no label `{l}` to compare")));
        let (rx, ry) = (get(x)?, get(y)?);
        let t = one_sided_t_test(&rx.run_means, &ry.run_means)?;
        println!("t-test {} > {}: t = {:.4}, dof = {:.2}, p = {:.4}", x.trim(), y.trim(), t.t, t.dof, t.p);
    }
    Ok(())
}

fn read_vector(path: &Path) -> Result<Vec<f64>> {
    if path.extension().is_some_and(|e| e == "mmte") {
        let (_, v) = load_values(path).map_err(|e| DataError::Mmte { path: path.to_path_buf(), source: e })?;
        return Ok(v);
    }
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| DataError::Parse { path: path.to_path_buf(), line: 0, msg: format!("`{t}`: {e}") }.into())
        })
        .collect()
}

#[derive(Serialize)]
struct ProvenanceRecord<'a> {
    file: String,
    checkpoint: &'a str,
    phi_source: &'a str,
    z_seed: u64,
    index: usize,
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let bundle = load_checkpoint(&a.ckpt)?;
    let (phi, source) = match (&a.phi, &a.words) {
        (Some(p), _) => (read_vector(p)?, format!("file:{}", p.display())),
        (None, Some(words)) => {
            let vocab = Vocabulary::load(a.vocab.as_ref().expect("clap requires --vocab"))?;
            let tokens = tokenize(&words.replace(',', " "));
            let (phi, coverage) = average_word_embeddings(&tokens, &vocab);
            if coverage == 0.0 {
                return Err(DataError::Invalid(format!("none of the words `{words}` are in the vocabulary")).into());
            }
            (phi, format!("words:{}", tokens.join(" ")))
        }
        (None, None) => return Err(Error::Config("give --phi or --words".into())),
    };
    let mut images = render_text_to_images(&bundle, &phi, a.n, a.seed)?;
    fs::create_dir_all(&a.out).map_err(|e| DataError::io(&a.out, e))?;
    let mut records = Vec::new();
    for img in &mut images {
        img.provenance.phi_source = source.clone();
        let file = format!("image_{:03}.ppm", img.provenance.index);
        write_image(img, a.out.join(&file))?;
        records.push(file);
    }
    let sidecar: Vec<ProvenanceRecord> = images
        .iter()
        .zip(&records)
        .map(|(img, file)| ProvenanceRecord {
            file: file.clone(),
            checkpoint: &img.provenance.checkpoint,
            phi_source: &img.provenance.phi_source,
            z_seed: img.provenance.z_seed,
            index: img.provenance.index,
        })
        .collect();
    let path = a.out.join("provenance.json");
    let json = serde_json::to_string_pretty(&sidecar).expect("provenance serializes");
    fs::write(&path, json).map_err(|e| DataError::io(&path, e))?;
    println!("{} images written to {}", images.len(), a.out.display());
    Ok(())
}

fn cmd_invert(a: InvertArgs) -> Result<()> {
    let bundle = load_checkpoint(&a.ckpt)?;
    let g = bundle.as_cgan()?.generator.config().clone();
    let pixels = if a.image.extension().is_some_and(|e| e == "mmte") {
        read_vector(&a.image)?
    } else {
        preprocess_image(&read_image(&a.image)?, g.image_size)?
    };
    let vocab = Vocabulary::load(&a.vocab)?;
    let preimage = invert_generator(&bundle, &pixels)?;
    let query = slice_text_part(&preimage, g.noise_dim, g.text_dim)?;
    print!("{}", nearest_words(&query, &vocab, a.top.min(vocab.len()))?.to_tsv());
    Ok(())
}
