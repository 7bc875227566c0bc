//! Sentence classifiers that consume the (optionally re-weighted) word
//! vectors `U` and produce class logits.

pub mod attblstm;
pub mod textcnn;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

pub use attblstm::{
    bilstm_forward, lstm_step, sentence_attention, AttBlstmCache, AttBlstmParams, LstmParams,
};
pub use textcnn::{conv_feature, max_over_time, window_concat, ConvBank, TextCnnCache, TextCnnParams};

/// Glorot-uniform initialization, `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    t.data_mut()
        .iter_mut()
        .for_each(|x| *x = rng.gen_range(-limit..=limit));
    t
}

/// Fully connected output layer, `logits = W x + b` with `W` shaped `[c, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    pub fn init(inputs: usize, classes: usize, rng: &mut impl Rng) -> Self {
        Dense {
            w: glorot(&[classes, inputs], inputs, classes, rng),
            b: Tensor::zeros(&[classes]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Dense {
            w: self.w.zeros_like(),
            b: self.b.zeros_like(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.cols()
    }

    pub fn classes(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.classes()];
        tensor::matvec(&self.w, x, &mut out);
        tensor::axpy(1.0, self.b.data(), &mut out);
        out
    }

    /// Accumulates parameter gradients, returns `∂L/∂x`.
    pub fn backward(&self, x: &[f64], dlogits: &[f64], grads: &mut Dense) -> Vec<f64> {
        tensor::outer_acc(&mut grads.w, dlogits, x);
        tensor::axpy(1.0, dlogits, grads.b.data_mut());
        let mut dx = vec![0.0; self.inputs()];
        tensor::matvec_t_acc(&self.w, dlogits, &mut dx);
        dx
    }
}

/// Multiply by an inverted-dropout mask when one is given.
pub(crate) fn apply_mask(x: &[f64], mask: Option<&[f64]>) -> Result<Vec<f64>> {
    match mask {
        None => Ok(x.to_vec()),
        Some(m) if m.len() == x.len() => Ok(x.iter().zip(m).map(|(a, b)| a * b).collect()),
        Some(m) => Err(Error::invalid_argument(format!(
            "dropout mask of length {} for a layer of width {}",
            m.len(),
            x.len()
        ))),
    }
}
