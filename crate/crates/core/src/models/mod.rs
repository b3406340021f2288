//! Model builders and forward passes.
//!
//! Every model owns its [`ParamSet`](crate::nn::ParamSet) and batch-norm
//! running statistics. Forward passes take `&self` and a [`Tape`]; a no-grad
//! tape in [`Mode::Infer`] is safe to use from several threads at once.

mod ae;
mod bidnn;
mod discriminator;
mod generator;

pub use ae::{AeConfig, AeOutput, MultimodalAe};
pub use bidnn::{Bidnn, BidnnConfig, BidnnOutput, Presence};
pub use discriminator::{Discriminator, DiscriminatorConfig, DiscriminatorOutput};
pub use generator::{Generator, GeneratorConfig, START_EXTENT};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::NnError;
use crate::tensor::{Mode, Tape, Tensor, TensorError};

/// Negative-side slope of every leaky ReLU in the models.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("operation needs a {expected} model, this bundle holds a {found}")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cgan,
    Ae,
    Bidnn,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Cgan => 0,
            ModelKind::Ae => 1,
            ModelKind::Bidnn => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ModelKind::Cgan),
            1 => Some(ModelKind::Ae),
            2 => Some(ModelKind::Bidnn),
            _ => None,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Cgan => "cgan",
            ModelKind::Ae => "ae",
            ModelKind::Bidnn => "bidnn",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cgan" => Ok(ModelKind::Cgan),
            "ae" => Ok(ModelKind::Ae),
            "bidnn" => Ok(ModelKind::Bidnn),
            other => Err(format!("unknown model kind `{other}` (expected cgan, ae or bidnn)")),
        }
    }
}

pub(crate) fn positive(name: &str, v: usize) -> Result<(), ModelError> {
    if v == 0 {
        return Err(ModelError::Config(format!("{name} must be positive")));
    }
    Ok(())
}

pub(crate) fn expect_2d(name: &str, t: &Tensor, cols: usize) -> Result<usize, ModelError> {
    if t.ndim() != 2 || t.shape()[1] != cols {
        return Err(ModelError::Input(format!("{name} must be N×{cols}, got {:?}", t.shape())));
    }
    Ok(t.shape()[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CganConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl CganConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.generator.text_dim != self.discriminator.text_dim {
            return Err(ModelError::Config("generator and discriminator text_dim differ".into()));
        }
        if self.generator.image_size != self.discriminator.image_size
            || self.generator.channels != self.discriminator.channels
        {
            return Err(ModelError::Config("generator output and discriminator input images differ".into()));
        }
        Ok(())
    }
}

/// Generator and discriminator trained together.
#[derive(Debug)]
pub struct Cgan {
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl Cgan {
    pub fn new(cfg: &CganConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        Ok(Cgan {
            generator: Generator::new(cfg.generator.clone(), seed)?,
            discriminator: Discriminator::new(cfg.discriminator.clone(), seed.wrapping_add(0x9E37_79B9_7F4A_7C15))?,
        })
    }

    pub fn config(&self) -> CganConfig {
        CganConfig { generator: self.generator.config().clone(), discriminator: self.discriminator.config().clone() }
    }
}

#[derive(Debug)]
pub enum Model {
    Cgan(Cgan),
    Ae(MultimodalAe),
    Bidnn(Bidnn),
}

/// Provenance carried alongside a model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: u64,
}

/// A built model plus the seed and epoch count it was trained with.
#[derive(Debug)]
pub struct ModelBundle {
    pub model: Model,
    pub meta: TrainingMeta,
}

impl ModelBundle {
    pub fn cgan(cfg: &CganConfig, seed: u64) -> Result<Self, ModelError> {
        Ok(ModelBundle { model: Model::Cgan(Cgan::new(cfg, seed)?), meta: TrainingMeta { seed, epochs: 0 } })
    }

    pub fn ae(cfg: &AeConfig, seed: u64) -> Result<Self, ModelError> {
        Ok(ModelBundle { model: Model::Ae(MultimodalAe::new(cfg.clone(), seed)?), meta: TrainingMeta { seed, epochs: 0 } })
    }

    pub fn bidnn(cfg: &BidnnConfig, seed: u64) -> Result<Self, ModelError> {
        Ok(ModelBundle { model: Model::Bidnn(Bidnn::new(cfg.clone(), seed)?), meta: TrainingMeta { seed, epochs: 0 } })
    }

    /// Rebuild a model from its kind and canonical config text.
    pub fn from_config_text(kind: ModelKind, text: &str, meta: TrainingMeta) -> Result<Self, ModelError> {
        let parse_err = |e: serde_json::Error| ModelError::Config(e.to_string());
        let mut bundle = match kind {
            ModelKind::Cgan => Self::cgan(&serde_json::from_str(text).map_err(parse_err)?, meta.seed)?,
            ModelKind::Ae => Self::ae(&serde_json::from_str(text).map_err(parse_err)?, meta.seed)?,
            ModelKind::Bidnn => Self::bidnn(&serde_json::from_str(text).map_err(parse_err)?, meta.seed)?,
        };
        bundle.meta = meta;
        Ok(bundle)
    }

    /// The model's configuration as canonical JSON.
    pub fn config_text(&self) -> String {
        let v = match &self.model {
            Model::Cgan(m) => serde_json::to_string(&m.config()),
            Model::Ae(m) => serde_json::to_string(m.config()),
            Model::Bidnn(m) => serde_json::to_string(m.config()),
        };
        v.expect("configs always serialize")
    }

    pub fn kind(&self) -> ModelKind {
        match self.model {
            Model::Cgan(_) => ModelKind::Cgan,
            Model::Ae(_) => ModelKind::Ae,
            Model::Bidnn(_) => ModelKind::Bidnn,
        }
    }

    fn wrong(&self, expected: ModelKind) -> ModelError {
        ModelError::WrongKind { expected, found: self.kind() }
    }

    pub fn as_cgan(&self) -> Result<&Cgan, ModelError> {
        match &self.model {
            Model::Cgan(m) => Ok(m),
            _ => Err(self.wrong(ModelKind::Cgan)),
        }
    }

    pub fn as_cgan_mut(&mut self) -> Result<&mut Cgan, ModelError> {
        let found = self.kind();
        match &mut self.model {
            Model::Cgan(m) => Ok(m),
            _ => Err(ModelError::WrongKind { expected: ModelKind::Cgan, found }),
        }
    }

    pub fn as_ae_mut(&mut self) -> Result<&mut MultimodalAe, ModelError> {
        let found = self.kind();
        match &mut self.model {
            Model::Ae(m) => Ok(m),
            _ => Err(ModelError::WrongKind { expected: ModelKind::Ae, found }),
        }
    }

    pub fn as_bidnn_mut(&mut self) -> Result<&mut Bidnn, ModelError> {
        let found = self.kind();
        match &mut self.model {
            Model::Bidnn(m) => Ok(m),
            _ => Err(ModelError::WrongKind { expected: ModelKind::Bidnn, found }),
        }
    }

    pub fn as_ae(&self) -> Result<&MultimodalAe, ModelError> {
        match &self.model {
            Model::Ae(m) => Ok(m),
            _ => Err(self.wrong(ModelKind::Ae)),
        }
    }

    pub fn as_bidnn(&self) -> Result<&Bidnn, ModelError> {
        match &self.model {
            Model::Bidnn(m) => Ok(m),
            _ => Err(self.wrong(ModelKind::Bidnn)),
        }
    }

    pub fn generator_forward(&self, tape: &Tape, z: &Tensor, phi: &Tensor, mode: Mode) -> Result<Tensor, ModelError> {
        self.as_cgan()?.generator.forward(tape, z, phi, mode)
    }

    pub fn discriminator_forward(
        &self,
        tape: &Tape,
        image: &Tensor,
        phi: &Tensor,
        mode: Mode,
    ) -> Result<DiscriminatorOutput, ModelError> {
        self.as_cgan()?.discriminator.forward(tape, image, phi, mode)
    }

    pub fn ae_forward(&self, tape: &Tape, text: &Tensor, visual: &Tensor) -> Result<AeOutput, ModelError> {
        self.as_ae()?.forward(tape, text, visual)
    }

    pub fn bidnn_forward(
        &self,
        tape: &Tape,
        text: &Tensor,
        visual: &Tensor,
        present: Presence,
    ) -> Result<BidnnOutput, ModelError> {
        self.as_bidnn()?.forward(tape, text, visual, present)
    }

    /// Every persisted tensor (parameters and running statistics) by unique name.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        match &self.model {
            Model::Cgan(m) => {
                m.generator.collect_tensors("generator.", &mut out);
                m.discriminator.collect_tensors("discriminator.", &mut out);
            }
            Model::Ae(m) => m.collect_tensors("", &mut out),
            Model::Bidnn(m) => m.collect_tensors("", &mut out),
        }
        out
    }

    /// Stable 64-bit FNV-1a digest of kind, config, seed, epochs and every
    /// persisted tensor, printed as 16 hex digits.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(&[self.kind().tag()]);
        eat(self.config_text().as_bytes());
        eat(&self.meta.seed.to_le_bytes());
        eat(&self.meta.epochs.to_le_bytes());
        for (name, t) in self.named_tensors() {
            eat(name.as_bytes());
            for v in t.data().iter() {
                eat(&v.to_le_bytes());
            }
        }
        format!("{h:016x}")
    }

    pub fn num_params(&self) -> usize {
        match &self.model {
            Model::Cgan(m) => m.generator.params().num_elements() + m.discriminator.params().num_elements(),
            Model::Ae(m) => m.params().num_elements(),
            Model::Bidnn(m) => m.params().num_elements(),
        }
    }
}

pub(crate) fn bn_tensors(prefix: &str, name: &str, s: &crate::tensor::BatchNormStats, out: &mut Vec<(String, Tensor)>) {
    out.push((format!("{prefix}{name}.running_mean"), s.running_mean.clone()));
    out.push((format!("{prefix}{name}.running_var"), s.running_var.clone()));
}
