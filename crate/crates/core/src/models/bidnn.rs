use serde::{Deserialize, Serialize};

use super::{expect_2d, positive, ModelError};
use crate::nn::{ParamKind, ParamSet, ParamSpec};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BidnnConfig {
    pub text_dim: usize,
    pub visual_dim: usize,
    pub hidden: usize,
}

impl Default for BidnnConfig {
    fn default() -> Self {
        BidnnConfig { text_dim: 100, visual_dim: 4096, hidden: 1000 }
    }
}

impl BidnnConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        positive("text_dim", self.text_dim)?;
        positive("visual_dim", self.visual_dim)?;
        positive("hidden", self.hidden)
    }

    pub fn embedding_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        use ParamKind::*;
        let (t, v, h) = (self.text_dim, self.visual_dim, self.hidden);
        vec![
            ParamSpec::new("text_in.weight", &[t, h], Weight),
            ParamSpec::new("text_in.bias", &[h], Bias),
            ParamSpec::new("visual_in.weight", &[v, h], Weight),
            ParamSpec::new("visual_in.bias", &[h], Bias),
            ParamSpec::new("central.weight", &[h, h], Weight),
            ParamSpec::new("central.bias_tv", &[h], Bias),
            ParamSpec::new("central.bias_vt", &[h], Bias),
            ParamSpec::new("visual_out.weight", &[h, v], Weight),
            ParamSpec::new("visual_out.bias", &[v], Bias),
            ParamSpec::new("text_out.weight", &[h, t], Weight),
            ParamSpec::new("text_out.bias", &[t], Bias),
        ]
    }
}

/// Which modalities a sample carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Presence {
    Both,
    TextOnly,
    VisualOnly,
}

impl Presence {
    pub fn from_flags(text: bool, visual: bool) -> Result<Self, ModelError> {
        match (text, visual) {
            (true, true) => Ok(Presence::Both),
            (true, false) => Ok(Presence::TextOnly),
            (false, true) => Ok(Presence::VisualOnly),
            (false, false) => Err(ModelError::Input("at least one modality must be present".into())),
        }
    }

    pub fn has_text(self) -> bool {
        matches!(self, Presence::Both | Presence::TextOnly)
    }

    pub fn has_visual(self) -> bool {
        matches!(self, Presence::Both | Presence::VisualOnly)
    }
}

#[derive(Debug, Clone)]
pub struct BidnnOutput {
    /// Visual features predicted from text, when text is present.
    pub text_to_visual: Option<Tensor>,
    /// Text features predicted from visual input, when visual input is present.
    pub visual_to_text: Option<Tensor>,
    /// `[text-side central ; visual-side central]`, shape `N×2·hidden`.
    pub embedding: Tensor,
}

/// Two crossmodal networks, text→visual and visual→text, whose central
/// layers share one weight matrix used transposed in the reverse direction.
#[derive(Debug)]
pub struct Bidnn {
    cfg: BidnnConfig,
    params: ParamSet,
}

impl Bidnn {
    pub fn new(cfg: BidnnConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let params = ParamSet::init(&cfg.param_specs(), seed)?;
        Ok(Bidnn { cfg, params })
    }

    pub fn config(&self) -> &BidnnConfig {
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

    /// Runs the pathways of the present modalities; the absent tensor is ignored.
    pub fn forward(&self, tape: &Tape, text: &Tensor, visual: &Tensor, present: Presence) -> Result<BidnnOutput, ModelError> {
        let p = &self.params;
        let c = &self.cfg;
        let n_text = if present.has_text() { Some(expect_2d("text", text, c.text_dim)?) } else { None };
        let n_visual = if present.has_visual() { Some(expect_2d("visual", visual, c.visual_dim)?) } else { None };
        let n = match (n_text, n_visual) {
            (Some(a), Some(b)) if a != b => return Err(ModelError::Input("text and visual batch sizes differ".into())),
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => unreachable!("Presence always names a modality"),
        };
        let central = p.expect("central.weight");

        let (tv_mid, text_to_visual) = if present.has_text() {
            let h = tape.tanh(&tape.dense(text, &p.expect("text_in.weight"), &p.expect("text_in.bias"))?)?;
            let mid = tape.tanh(&tape.dense(&h, &central, &p.expect("central.bias_tv"))?)?;
            let out = tape.dense(&mid, &p.expect("visual_out.weight"), &p.expect("visual_out.bias"))?;
            (mid, Some(out))
        } else {
            (Tensor::zeros(&[n, c.hidden]), None)
        };
        let (vt_mid, visual_to_text) = if present.has_visual() {
            let h = tape.tanh(&tape.dense(visual, &p.expect("visual_in.weight"), &p.expect("visual_in.bias"))?)?;
            let mid = tape.tanh(&tape.dense_transposed(&h, &central, &p.expect("central.bias_vt"))?)?;
            let out = tape.dense(&mid, &p.expect("text_out.weight"), &p.expect("text_out.bias"))?;
            (mid, Some(out))
        } else {
            (Tensor::zeros(&[n, c.hidden]), None)
        };
        let embedding = tape.concat(&[&tv_mid, &vt_mid], 1)?;
        Ok(BidnnOutput { text_to_visual, visual_to_text, embedding })
    }
}
