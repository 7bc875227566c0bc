//! The four model variants: an optional pre-attention layer in front of one
//! of the two classifier heads.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::{AttBlstmCache, AttBlstmParams, Dense, TextCnnCache, TextCnnParams};
use crate::error::{Error, Result};
use crate::preattention::{PreAttentionOutput, PreAttentionParams};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    TextCnn,
    PreAttnTextCnn,
    AttBlstm,
    PreAttnAttBlstm,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::TextCnn,
        Variant::PreAttnTextCnn,
        Variant::AttBlstm,
        Variant::PreAttnAttBlstm,
    ];

    pub fn has_pre_attention(self) -> bool {
        matches!(self, Variant::PreAttnTextCnn | Variant::PreAttnAttBlstm)
    }

    pub fn is_cnn(self) -> bool {
        matches!(self, Variant::TextCnn | Variant::PreAttnTextCnn)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::TextCnn => "text-cnn",
            Variant::PreAttnTextCnn => "pre-attn-text-cnn",
            Variant::AttBlstm => "att-blstm",
            Variant::PreAttnAttBlstm => "pre-attn-att-blstm",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid_argument(format!("unknown variant `{s}`")))
    }
}

/// Sizes that determine the parameter shapes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub variant: Variant,
    pub embedding_dim: usize,
    pub classes: usize,
    pub windows: Vec<usize>,
    pub filters_per_window: usize,
    pub hidden_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    TextCnn(TextCnnParams),
    AttBlstm(AttBlstmParams),
}

pub enum HeadCache {
    TextCnn(TextCnnCache),
    AttBlstm(AttBlstmCache),
}

pub struct ForwardCache {
    pub pre_attention: Option<PreAttentionOutput>,
    pub head: HeadCache,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub pre_attention: Option<PreAttentionParams>,
    pub head: Head,
}

impl Model {
    pub fn init(arch: &Architecture, rng: &mut impl Rng) -> Result<Self> {
        let head = if arch.variant.is_cnn() {
            Head::TextCnn(TextCnnParams::init(
                arch.embedding_dim,
                &arch.windows,
                arch.filters_per_window,
                arch.classes,
                rng,
            )?)
        } else {
            Head::AttBlstm(AttBlstmParams::init(
                arch.embedding_dim,
                arch.hidden_size,
                arch.classes,
                rng,
            )?)
        };
        let pre_attention = arch
            .variant
            .has_pre_attention()
            .then(|| PreAttentionParams::zeros(arch.embedding_dim));
        Ok(Model { pre_attention, head })
    }

    pub fn variant(&self) -> Variant {
        match (&self.head, self.pre_attention.is_some()) {
            (Head::TextCnn(_), false) => Variant::TextCnn,
            (Head::TextCnn(_), true) => Variant::PreAttnTextCnn,
            (Head::AttBlstm(_), false) => Variant::AttBlstm,
            (Head::AttBlstm(_), true) => Variant::PreAttnAttBlstm,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Model {
            pre_attention: self
                .pre_attention
                .as_ref()
                .map(|p| PreAttentionParams::zeros(p.dim())),
            head: match &self.head {
                Head::TextCnn(p) => Head::TextCnn(p.zeros_like()),
                Head::AttBlstm(p) => Head::AttBlstm(p.zeros_like()),
            },
        }
    }

    pub fn dense(&self) -> &Dense {
        match &self.head {
            Head::TextCnn(p) => &p.dense,
            Head::AttBlstm(p) => &p.dense,
        }
    }

    pub fn dense_mut(&mut self) -> &mut Dense {
        match &mut self.head {
            Head::TextCnn(p) => &mut p.dense,
            Head::AttBlstm(p) => &mut p.dense,
        }
    }

    /// Width of the vector the dense layer reads (and dropout acts on).
    pub fn feature_width(&self) -> usize {
        self.dense().inputs()
    }

    pub fn classes(&self) -> usize {
        self.dense().classes()
    }

    /// Learnable tensors with stable names, pre-attention first.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        if let Some(p) = &self.pre_attention {
            out.extend(p.tensors().into_iter().map(|(n, t)| (n.to_string(), t)));
        }
        match &self.head {
            Head::TextCnn(p) => out.extend(p.tensors()),
            Head::AttBlstm(p) => out.extend(p.tensors()),
        }
        out
    }

    /// Same order as [`Model::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        if let Some(p) = &mut self.pre_attention {
            out.extend(p.tensors_mut());
        }
        match &mut self.head {
            Head::TextCnn(p) => out.extend(p.tensors_mut()),
            Head::AttBlstm(p) => out.extend(p.tensors_mut()),
        }
        out
    }

    /// Logits for the word vectors `s` (`[n, l]`). Without pre-attention the
    /// head reads `s` directly.
    pub fn forward(&self, s: &Tensor, dropout_mask: Option<&[f64]>) -> Result<(Vec<f64>, ForwardCache)> {
        let pre = match &self.pre_attention {
            Some(p) => Some(p.apply(s)?),
            None => None,
        };
        let u = pre.as_ref().map_or(s, |o| &o.u);
        let (logits, head) = match &self.head {
            Head::TextCnn(p) => {
                let (logits, c) = p.forward(u, dropout_mask)?;
                (logits, HeadCache::TextCnn(c))
            }
            Head::AttBlstm(p) => {
                let (logits, c) = p.forward(u, None, dropout_mask)?;
                (logits, HeadCache::AttBlstm(c))
            }
        };
        Ok((
            logits,
            ForwardCache {
                pre_attention: pre,
                head,
            },
        ))
    }

    pub fn logits(&self, s: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(s, None)?.0)
    }

    /// Accumulate `∂L/∂θ` into `grads`. Word vectors are frozen, so the
    /// input gradient is only formed when a pre-attention layer needs it.
    pub fn backward(&self, s: &Tensor, cache: &ForwardCache, dlogits: &[f64], grads: &mut Model) -> Result<()> {
        let need_input = self.pre_attention.is_some();
        let du = match (&self.head, &cache.head, &mut grads.head) {
            (Head::TextCnn(p), HeadCache::TextCnn(c), Head::TextCnn(g)) => p.backward(c, dlogits, g, need_input),
            (Head::AttBlstm(p), HeadCache::AttBlstm(c), Head::AttBlstm(g)) => {
                p.backward(c, dlogits, g, need_input)
            }
            _ => return Err(Error::invalid_state("cache or gradient does not match the model head")),
        };
        if let (Some(p), Some(out), Some(g), Some(du)) = (
            &self.pre_attention,
            &cache.pre_attention,
            grads.pre_attention.as_mut(),
            du,
        ) {
            p.backward(s, out, &du, g);
        }
        Ok(())
    }
}
