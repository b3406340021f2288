use serde::{Deserialize, Serialize};

use super::{bn_tensors, expect_2d, positive, ModelError, LEAKY_SLOPE};
use crate::nn::{ParamKind, ParamSet, ParamSpec};
use crate::tensor::{BatchNormStats, Mode, Tape, Tensor};

/// Spatial extent the projected noise+text vector is reshaped to.
pub const START_EXTENT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub noise_dim: usize,
    pub text_dim: usize,
    pub text_fc: usize,
    pub deconv_maps: Vec<usize>,
    pub image_size: usize,
    pub channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            noise_dim: 10,
            text_dim: 100,
            text_fc: 256,
            deconv_maps: vec![256, 128, 64, 32],
            image_size: 64,
            channels: 3,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        positive("noise_dim", self.noise_dim)?;
        positive("text_dim", self.text_dim)?;
        positive("text_fc", self.text_fc)?;
        positive("image_size", self.image_size)?;
        positive("channels", self.channels)?;
        if self.deconv_maps.is_empty() || self.deconv_maps.contains(&0) {
            return Err(ModelError::Config("deconv_maps must be a non-empty list of positive sizes".into()));
        }
        let reached = START_EXTENT << self.deconv_maps.len();
        if reached != self.image_size {
            return Err(ModelError::Config(format!(
                "{} stride-2 deconvolutions from {START_EXTENT}x{START_EXTENT} reach {reached}, not image_size {}",
                self.deconv_maps.len(),
                self.image_size
            )));
        }
        Ok(())
    }

    /// Channels of the reshaped projection that feeds the first deconvolution.
    pub fn projected_channels(&self) -> usize {
        2 * self.deconv_maps[0]
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        use ParamKind::*;
        let s2 = START_EXTENT * START_EXTENT;
        let mut v = vec![
            ParamSpec::new("text_fc.weight", &[self.text_dim, self.text_fc], Weight),
            ParamSpec::new("text_fc.bias", &[self.text_fc], Bias),
            ParamSpec::new("project.weight", &[self.noise_dim + self.text_fc, s2 * self.projected_channels()], Weight),
            ParamSpec::new("project.bias", &[s2 * self.projected_channels()], Bias),
        ];
        let mut cin = self.projected_channels();
        for (i, &m) in self.deconv_maps.iter().enumerate() {
            v.push(ParamSpec::new(format!("deconv{i}.weight"), &[cin, m, 4, 4], Weight));
            v.push(ParamSpec::new(format!("deconv{i}.bn.gamma"), &[m], Gamma));
            v.push(ParamSpec::new(format!("deconv{i}.bn.beta"), &[m], Beta));
            cin = m;
        }
        v.push(ParamSpec::new("out.weight", &[self.channels, cin, 3, 3], Weight));
        v.push(ParamSpec::new("out.bias", &[self.channels], Bias));
        v
    }
}

/// Maps `(z, φ)` to an image in `[-1, 1]`.
///
/// Text branch `dense → leaky ReLU`, concatenated after the noise as
/// `[z ; text]`, projected to a `4×4` grid, then one
/// `deconv(k4, s2, p1) → batch-norm → leaky ReLU` stage per entry of
/// `deconv_maps`, and a final `3×3` convolution with `tanh`.
#[derive(Debug)]
pub struct Generator {
    cfg: GeneratorConfig,
    params: ParamSet,
    bn: Vec<BatchNormStats>,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let params = ParamSet::init(&cfg.param_specs(), seed)?;
        let bn = cfg.deconv_maps.iter().map(|&m| BatchNormStats::new(m)).collect();
        Ok(Generator { cfg, params, bn })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn batchnorm_stats(&self) -> &[BatchNormStats] {
        &self.bn
    }

    pub(crate) fn collect_tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (name, t) in self.params.iter() {
            out.push((format!("{prefix}{name}"), t.clone()));
        }
        for (i, s) in self.bn.iter().enumerate() {
            bn_tensors(prefix, &format!("deconv{i}.bn"), s, out);
        }
    }

    pub fn forward(&self, tape: &Tape, z: &Tensor, phi: &Tensor, mode: Mode) -> Result<Tensor, ModelError> {
        let n = expect_2d("z", z, self.cfg.noise_dim)?;
        if expect_2d("phi", phi, self.cfg.text_dim)? != n {
            return Err(ModelError::Input("z and phi batch sizes differ".into()));
        }
        if z.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(ModelError::Input("noise values must lie in [-1, 1]".into()));
        }
        let p = &self.params;
        let text = tape.dense(phi, &p.expect("text_fc.weight"), &p.expect("text_fc.bias"))?;
        let text = tape.leaky_relu(&text, LEAKY_SLOPE)?;
        let h = tape.concat(&[z, &text], 1)?;
        let h = tape.dense(&h, &p.expect("project.weight"), &p.expect("project.bias"))?;
        let mut h = tape.reshape(&h, &[n, self.cfg.projected_channels(), START_EXTENT, START_EXTENT])?;
        for (i, stats) in self.bn.iter().enumerate() {
            h = tape.deconv2d(&h, &p.expect(&format!("deconv{i}.weight")), 2, 1)?;
            h = tape.batchnorm(
                &h,
                &p.expect(&format!("deconv{i}.bn.gamma")),
                &p.expect(&format!("deconv{i}.bn.beta")),
                mode,
                stats,
            )?;
            h = tape.leaky_relu(&h, LEAKY_SLOPE)?;
        }
        let h = tape.conv2d(&h, &p.expect("out.weight"), 1, 1)?;
        let h = tape.add_channel_bias(&h, &p.expect("out.bias"))?;
        Ok(tape.tanh(&h)?)
    }
}
