use serde::{Deserialize, Serialize};

use super::{bn_tensors, expect_2d, positive, ModelError, LEAKY_SLOPE};
use crate::nn::{ParamKind, ParamSet, ParamSpec};
use crate::tensor::{BatchNormStats, Mode, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub conv_maps: Vec<usize>,
    pub text_dim: usize,
    pub text_fc: usize,
    pub join_maps: usize,
    pub image_size: usize,
    pub channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            conv_maps: vec![32, 64, 128, 256],
            text_dim: 100,
            text_fc: 256,
            join_maps: 256,
            image_size: 64,
            channels: 3,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        positive("text_dim", self.text_dim)?;
        positive("text_fc", self.text_fc)?;
        positive("join_maps", self.join_maps)?;
        positive("image_size", self.image_size)?;
        positive("channels", self.channels)?;
        if self.conv_maps.is_empty() || self.conv_maps.contains(&0) {
            return Err(ModelError::Config("conv_maps must be a non-empty list of positive sizes".into()));
        }
        let div = 1usize << self.conv_maps.len();
        if !self.image_size.is_multiple_of(div) {
            return Err(ModelError::Config(format!(
                "image_size {} does not halve cleanly {} times",
                self.image_size,
                self.conv_maps.len()
            )));
        }
        Ok(())
    }

    /// Side of the grid left after the stride-2 convolutions.
    pub fn final_extent(&self) -> usize {
        self.image_size >> self.conv_maps.len()
    }

    /// Length of the embedding read after the joining 1×1 convolution.
    pub fn embedding_dim(&self) -> usize {
        self.join_maps * self.final_extent() * self.final_extent()
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        use ParamKind::*;
        let mut v = Vec::new();
        let mut cin = self.channels;
        for (i, &m) in self.conv_maps.iter().enumerate() {
            v.push(ParamSpec::new(format!("conv{i}.weight"), &[m, cin, 4, 4], Weight));
            if i == 0 {
                v.push(ParamSpec::new("conv0.bias", &[m], Bias));
            } else {
                v.push(ParamSpec::new(format!("conv{i}.bn.gamma"), &[m], Gamma));
                v.push(ParamSpec::new(format!("conv{i}.bn.beta"), &[m], Beta));
            }
            cin = m;
        }
        v.push(ParamSpec::new("text_fc.weight", &[self.text_dim, self.text_fc], Weight));
        v.push(ParamSpec::new("text_fc.bias", &[self.text_fc], Bias));
        v.push(ParamSpec::new("join.weight", &[self.join_maps, cin + self.text_fc, 1, 1], Weight));
        v.push(ParamSpec::new("join.bn.gamma", &[self.join_maps], Gamma));
        v.push(ParamSpec::new("join.bn.beta", &[self.join_maps], Beta));
        v.push(ParamSpec::new("score.weight", &[self.embedding_dim(), 1], Weight));
        v.push(ParamSpec::new("score.bias", &[1], Bias));
        v
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    /// Probability that each (image, text) pair is real and matching, shape `N`.
    pub score: Tensor,
    /// Flattened raw output of the joining 1×1 convolution, shape `N×E`.
    pub embedding: Tensor,
}

/// Scores (image, text) pairs and exposes the joint embedding.
#[derive(Debug)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    params: ParamSet,
    /// One entry per convolution after the first, then the join layer.
    bn: Vec<BatchNormStats>,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let params = ParamSet::init(&cfg.param_specs(), seed)?;
        let mut bn: Vec<BatchNormStats> = cfg.conv_maps[1..].iter().map(|&m| BatchNormStats::new(m)).collect();
        bn.push(BatchNormStats::new(cfg.join_maps));
        Ok(Discriminator { cfg, params, bn })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn embedding_dim(&self) -> usize {
        self.cfg.embedding_dim()
    }

    pub(crate) fn collect_tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (name, t) in self.params.iter() {
            out.push((format!("{prefix}{name}"), t.clone()));
        }
        let layers = self.cfg.conv_maps.len();
        for (i, s) in self.bn.iter().enumerate() {
            let name = if i + 1 < layers { format!("conv{}.bn", i + 1) } else { "join.bn".to_string() };
            bn_tensors(prefix, &name, s, out);
        }
    }

    pub fn forward(&self, tape: &Tape, image: &Tensor, phi: &Tensor, mode: Mode) -> Result<DiscriminatorOutput, ModelError> {
        let c = &self.cfg;
        let expected = [c.channels, c.image_size, c.image_size];
        if image.ndim() != 4 || image.shape()[1..] != expected {
            return Err(ModelError::Input(format!("image must be N×{expected:?}, got {:?}", image.shape())));
        }
        let n = image.shape()[0];
        if expect_2d("phi", phi, c.text_dim)? != n {
            return Err(ModelError::Input("image and phi batch sizes differ".into()));
        }
        let p = &self.params;
        let mut h = image.clone();
        for i in 0..c.conv_maps.len() {
            h = tape.conv2d(&h, &p.expect(&format!("conv{i}.weight")), 2, 1)?;
            if i == 0 {
                h = tape.add_channel_bias(&h, &p.expect("conv0.bias"))?;
            } else {
                h = tape.batchnorm(
                    &h,
                    &p.expect(&format!("conv{i}.bn.gamma")),
                    &p.expect(&format!("conv{i}.bn.beta")),
                    mode,
                    &self.bn[i - 1],
                )?;
            }
            h = tape.leaky_relu(&h, LEAKY_SLOPE)?;
        }
        let s = c.final_extent();
        let text = tape.dense(phi, &p.expect("text_fc.weight"), &p.expect("text_fc.bias"))?;
        let text = tape.leaky_relu(&text, LEAKY_SLOPE)?;
        let text = tape.tile_spatial(&text, s, s)?;
        let joined = tape.concat(&[&h, &text], 1)?;
        let joined = tape.conv2d(&joined, &p.expect("join.weight"), 1, 0)?;
        let embedding = tape.reshape(&joined, &[n, c.embedding_dim()])?;
        let h = tape.batchnorm(
            &joined,
            &p.expect("join.bn.gamma"),
            &p.expect("join.bn.beta"),
            mode,
            self.bn.last().expect("join batch-norm"),
        )?;
        let h = tape.leaky_relu(&h, LEAKY_SLOPE)?;
        let h = tape.reshape(&h, &[n, c.embedding_dim()])?;
        let logits = tape.dense(&h, &p.expect("score.weight"), &p.expect("score.bias"))?;
        let score = tape.sigmoid(&logits)?;
        let score = tape.reshape(&score, &[n])?;
        Ok(DiscriminatorOutput { score, embedding })
    }
}
