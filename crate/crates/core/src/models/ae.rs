use serde::{Deserialize, Serialize};

use super::{expect_2d, positive, ModelError, LEAKY_SLOPE};
use crate::nn::{ParamKind, ParamSet, ParamSpec};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeConfig {
    pub text_dim: usize,
    pub visual_dim: usize,
    pub branch: usize,
    pub hidden: usize,
    /// Probability of zeroing one whole modality of a training sample.
    pub modality_dropout: f64,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig { text_dim: 100, visual_dim: 4096, branch: 1000, hidden: 1000, modality_dropout: 0.0 }
    }
}

impl AeConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        positive("text_dim", self.text_dim)?;
        positive("visual_dim", self.visual_dim)?;
        positive("branch", self.branch)?;
        positive("hidden", self.hidden)?;
        if !(0.0..1.0).contains(&self.modality_dropout) {
            return Err(ModelError::Config(format!(
                "modality_dropout must lie in [0, 1), got {}",
                self.modality_dropout
            )));
        }
        Ok(())
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        use ParamKind::*;
        let (t, v, b, h) = (self.text_dim, self.visual_dim, self.branch, self.hidden);
        vec![
            ParamSpec::new("text_in.weight", &[t, b], Weight),
            ParamSpec::new("text_in.bias", &[b], Bias),
            ParamSpec::new("visual_in.weight", &[v, b], Weight),
            ParamSpec::new("visual_in.bias", &[b], Bias),
            ParamSpec::new("hidden.weight", &[2 * b, h], Weight),
            ParamSpec::new("hidden.bias", &[h], Bias),
            ParamSpec::new("text_dec.weight", &[h, b], Weight),
            ParamSpec::new("text_dec.bias", &[b], Bias),
            ParamSpec::new("visual_dec.weight", &[h, b], Weight),
            ParamSpec::new("visual_dec.bias", &[b], Bias),
            ParamSpec::new("text_out.weight", &[b, t], Weight),
            ParamSpec::new("text_out.bias", &[t], Bias),
            ParamSpec::new("visual_out.weight", &[b, v], Weight),
            ParamSpec::new("visual_out.bias", &[v], Bias),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct AeOutput {
    pub text_rec: Tensor,
    pub visual_rec: Tensor,
    /// Central `tanh` layer, shape `N×hidden`.
    pub embedding: Tensor,
}

/// Two-branch autoencoder with a shared central layer.
#[derive(Debug)]
pub struct MultimodalAe {
    cfg: AeConfig,
    params: ParamSet,
}

impl MultimodalAe {
    pub fn new(cfg: AeConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let params = ParamSet::init(&cfg.param_specs(), seed)?;
        Ok(MultimodalAe { cfg, params })
    }

    pub fn config(&self) -> &AeConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub(crate) fn collect_tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (name, t) in self.params.iter() {
            out.push((format!("{prefix}{name}"), t.clone()));
        }
    }

    fn layer(&self, tape: &Tape, x: &Tensor, name: &str) -> Result<Tensor, ModelError> {
        let p = &self.params;
        Ok(tape.dense(x, &p.expect(&format!("{name}.weight")), &p.expect(&format!("{name}.bias")))?)
    }

    pub fn forward(&self, tape: &Tape, text: &Tensor, visual: &Tensor) -> Result<AeOutput, ModelError> {
        let n = expect_2d("text", text, self.cfg.text_dim)?;
        if expect_2d("visual", visual, self.cfg.visual_dim)? != n {
            return Err(ModelError::Input("text and visual batch sizes differ".into()));
        }
        let t = tape.leaky_relu(&self.layer(tape, text, "text_in")?, LEAKY_SLOPE)?;
        let v = tape.leaky_relu(&self.layer(tape, visual, "visual_in")?, LEAKY_SLOPE)?;
        let joined = tape.concat(&[&t, &v], 1)?;
        let embedding = tape.tanh(&self.layer(tape, &joined, "hidden")?)?;
        let td = tape.leaky_relu(&self.layer(tape, &embedding, "text_dec")?, LEAKY_SLOPE)?;
        let vd = tape.leaky_relu(&self.layer(tape, &embedding, "visual_dec")?, LEAKY_SLOPE)?;
        Ok(AeOutput {
            text_rec: self.layer(tape, &td, "text_out")?,
            visual_rec: self.layer(tape, &vd, "visual_out")?,
            embedding,
        })
    }
}
