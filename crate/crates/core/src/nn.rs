//! Parameter containers, initialization and the Adam optimizer.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

/// Standard deviation of the normal initializer for weight tensors.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("invalid optimizer configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Normal(0, 0.02).
    Weight,
    /// Zeros.
    Bias,
    /// Ones (batch-norm scale).
    Gamma,
    /// Zeros (batch-norm shift).
    Beta,
}

/// Declares one learned tensor of a layer.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], kind: ParamKind) -> Self {
        ParamSpec { name: name.into(), shape: shape.to_vec(), kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; off unless set.
    pub clip_norm: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { learning_rate: 1e-4, beta1: 0.5, beta2: 0.999, epsilon: 1e-8, clip_norm: None }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0) {
            return Err(NnError::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(NnError::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(NnError::Config("epsilon must be > 0".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(NnError::Config("clip_norm must be > 0".into()));
            }
        }
        Ok(())
    }
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named trainable tensors plus their Adam state.
pub struct ParamSet {
    params: IndexMap<String, Tensor>,
    moments: Vec<Moments>,
    step: u64,
}

impl std::fmt::Debug for ParamSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamSet")
            .field("names", &self.params.keys().collect::<Vec<_>>())
            .field("step", &self.step)
            .finish()
    }
}

impl ParamSet {
    /// Build every tensor in `specs`; weights draw from a ChaCha stream seeded by `seed`.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let mut params = IndexMap::new();
        for s in specs {
            let n: usize = s.shape.iter().product();
            let values = match s.kind {
                ParamKind::Weight => (0..n).map(|_| normal.sample(&mut rng)).collect(),
                ParamKind::Bias | ParamKind::Beta => vec![0.0; n],
                ParamKind::Gamma => vec![1.0; n],
            };
            let t = Tensor::parameter(&s.shape, values)?;
            if params.insert(s.name.clone(), t).is_some() {
                return Err(NnError::DuplicateName(s.name.clone()));
            }
        }
        let moments = params
            .values()
            .map(|t| Moments { m: vec![0.0; t.numel()], v: vec![0.0; t.numel()] })
            .collect();
        Ok(ParamSet { params, moments, step: 0 })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    /// Like [`ParamSet::get`] but panics on a missing name; for model builders
    /// that just declared the name themselves.
    pub fn expect(&self, name: &str) -> Tensor {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` was not declared"))
            .clone()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Number of completed optimizer steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn zero_grads(&self) {
        for t in self.params.values() {
            t.zero_grad();
        }
    }

    /// One Adam update with bias correction, then clears the gradients.
    pub fn adam_step(&mut self, cfg: &OptimConfig) -> Result<(), NnError> {
        let mut grads = Vec::with_capacity(self.params.len());
        for (name, t) in &self.params {
            grads.push(t.grad().ok_or_else(|| NnError::MissingGradient(name.clone()))?);
        }
        if let Some(max_norm) = cfg.clip_norm {
            let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max_norm {
                let s = max_norm / norm;
                grads.iter_mut().flatten().for_each(|g| *g *= s);
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for ((tensor, mom), g) in self.params.values().zip(self.moments.iter_mut()).zip(&grads) {
            let mut w = tensor.data().clone();
            for i in 0..w.len() {
                mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g[i];
                mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = mom.m[i] / bc1;
                let v_hat = mom.v[i] / bc2;
                w[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
            tensor.assign(w)?;
            tensor.zero_grad();
        }
        Ok(())
    }
}
