//! Context-free per-word attention.
//!
//! Each word vector `w` gets the scalar weight `σ(v·w + b)` computed from the
//! vector alone, and is scaled by it before reaching the classifier. Weights
//! are independent across positions (no normalization over the sentence), so
//! a word's weight is a property of the word and the whole vocabulary can be
//! ranked by it.

use std::fmt::Write as _;

use crate::corpus::{EmbeddingMatrix, Vocabulary, PAD_ID, UNK_ID};
use crate::error::{Error, Result};
use crate::tensor::{dot, sigmoid, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct PreAttentionParams {
    /// Attention vector, shape `[l]`.
    pub v: Tensor,
    /// Bias, shape `[1]`.
    pub b: Tensor,
}

impl PreAttentionParams {
    /// `v = 0, b = 0`: every word starts at the neutral weight 0.5.
    pub fn zeros(dim: usize) -> Self {
        PreAttentionParams {
            v: Tensor::zeros(&[dim]),
            b: Tensor::zeros(&[1]),
        }
    }

    pub fn new(v: Vec<f64>, b: f64) -> Result<Self> {
        Ok(PreAttentionParams {
            v: Tensor::vector(v)?,
            b: Tensor::scalar(b),
        })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn bias(&self) -> f64 {
        self.b.data()[0]
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("pre_attention.v", &self.v), ("pre_attention.b", &self.b)]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.v, &mut self.b]
    }

    /// `σ(v·w + b)`.
    pub fn attention_weight(&self, w: &[f64]) -> Result<f64> {
        if w.len() != self.dim() {
            return Err(Error::invalid_argument(format!(
                "word vector has length {}, attention vector {}",
                w.len(),
                self.dim()
            )));
        }
        Ok(self.weight_unchecked(w))
    }

    #[inline]
    fn weight_unchecked(&self, w: &[f64]) -> f64 {
        sigmoid(dot(self.v.data(), w) + self.bias())
    }

    /// Scale each row of `s` (`[n, l]`) by its attention weight.
    pub fn apply(&self, s: &Tensor) -> Result<PreAttentionOutput> {
        if s.cols() != self.dim() {
            return Err(Error::invalid_argument(format!(
                "word vectors have length {}, attention vector {}",
                s.cols(),
                self.dim()
            )));
        }
        let mut u = s.clone();
        let mut weights = Vec::with_capacity(s.rows());
        for i in 0..s.rows() {
            let w = self.weight_unchecked(s.row(i));
            u.row_mut(i).iter_mut().for_each(|x| *x *= w);
            weights.push(w);
        }
        Ok(PreAttentionOutput { u, weights })
    }

    /// Accumulate `∂L/∂v` and `∂L/∂b` into `grads` given `∂L/∂U`. The word
    /// vectors themselves are frozen and receive nothing.
    pub fn backward(
        &self,
        s: &Tensor,
        out: &PreAttentionOutput,
        grad_u: &Tensor,
        grads: &mut PreAttentionParams,
    ) {
        let mut db = 0.0;
        for (i, &w) in out.weights.iter().enumerate() {
            let row = s.row(i);
            let dweight = dot(grad_u.row(i), row);
            let dz = dweight * w * (1.0 - w);
            if dz != 0.0 {
                crate::tensor::axpy(dz, row, grads.v.data_mut());
            }
            db += dz;
        }
        grads.b.data_mut()[0] += db;
    }
}

/// Apply pre-attention to a whole sentence, returning only the scaled vectors.
pub fn apply_pre_attention(s: &Tensor, params: &PreAttentionParams) -> Result<Tensor> {
    Ok(params.apply(s)?.u)
}

pub fn attention_weight(w: &[f64], params: &PreAttentionParams) -> Result<f64> {
    params.attention_weight(w)
}

#[derive(Clone, Debug)]
pub struct PreAttentionOutput {
    pub u: Tensor,
    pub weights: Vec<f64>,
}

/// Attention weight of every vocabulary entry, aligned with vocabulary order.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTable {
    values: Vec<f64>,
}

impl AttentionTable {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<f64> {
        self.values.get(id).copied()
    }

    /// Padding and unknown-word entries are computed but are not words.
    pub fn is_lexical(id: usize) -> bool {
        id != PAD_ID && id != UNK_ID
    }

    /// Lexical entries as `(vocabulary id, attention)`, sorted descending by
    /// attention with ties broken by ascending id.
    pub fn ranked_ids(&self) -> Vec<(usize, f64)> {
        let mut ranked: Vec<(usize, f64)> = self
            .values
            .iter()
            .enumerate()
            .filter(|&(id, _)| Self::is_lexical(id))
            .map(|(id, &a)| (id, a))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }

    /// `token<TAB>attention` lines in ranked order.
    pub fn to_tsv(&self, vocab: &Vocabulary) -> Result<String> {
        if vocab.len() != self.len() {
            return Err(Error::invalid_argument(format!(
                "table has {} entries, vocabulary {}",
                self.len(),
                vocab.len()
            )));
        }
        let mut out = String::new();
        for (id, a) in self.ranked_ids() {
            writeln!(out, "{}\t{}", vocab.tokens()[id], a).expect("write to string");
        }
        Ok(out)
    }
}

pub fn vocab_attention_table(m: &EmbeddingMatrix, params: &PreAttentionParams) -> Result<AttentionTable> {
    if m.dim() != params.dim() {
        return Err(Error::invalid_argument(format!(
            "embedding dimension {} does not match attention vector {}",
            m.dim(),
            params.dim()
        )));
    }
    Ok(AttentionTable {
        values: (0..m.vocab_size())
            .map(|id| params.weight_unchecked(m.row(id)))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, ScalarFn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weight_examples() {
        let p = PreAttentionParams::zeros(3);
        assert_eq!(p.attention_weight(&[4.0, -2.0, 9.0]).unwrap(), 0.5);
        // v·w + b = ln 3 gives 3/4, and -ln 3 gives 1/4
        let p = PreAttentionParams::new(vec![1.0, 0.0], 0.0).unwrap();
        let w = p.attention_weight(&[3f64.ln(), 5.0]).unwrap();
        assert!((w - 0.75).abs() < 1e-15);
        let w = p.attention_weight(&[-(3f64.ln()), 5.0]).unwrap();
        assert!((w - 0.25).abs() < 1e-15);
        assert!(p.attention_weight(&[1.0]).is_err());
    }

    #[test]
    fn apply_examples() {
        let p = PreAttentionParams::new(vec![0.0, 0.0], 3f64.ln()).unwrap();
        let s = Tensor::matrix(2, 2, vec![2.0, -4.0, 0.0, 0.0]).unwrap();
        let u = apply_pre_attention(&s, &p).unwrap();
        assert!((u.get(0, 0) - 1.5).abs() < 1e-15);
        assert!((u.get(0, 1) + 3.0).abs() < 1e-15);
        assert_eq!(u.row(1), [0.0, 0.0]);

        let p = PreAttentionParams::zeros(2);
        let s = Tensor::matrix(1, 2, vec![0.8, -2.0]).unwrap();
        assert_eq!(apply_pre_attention(&s, &p).unwrap().data(), [0.4, -1.0]);
    }

    #[test]
    fn table_is_consistent_with_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = EmbeddingMatrix::random(30, 4, &mut rng).unwrap();
        let p = PreAttentionParams::new((0..4).map(|_| rng.gen_range(-2.0..2.0)).collect(), 0.3).unwrap();
        let table = vocab_attention_table(&m, &p).unwrap();
        assert_eq!(table.len(), 30);
        for id in 0..30 {
            let independent = sigmoid(
                (0..4).map(|j| p.v.data()[j] * m.row(id)[j]).sum::<f64>() + 0.3,
            );
            assert!((table.get(id).unwrap() - independent).abs() < 1e-14);
            assert_eq!(table.get(id).unwrap(), p.attention_weight(m.row(id)).unwrap());
            assert!(table.get(id).unwrap() > 0.0 && table.get(id).unwrap() < 1.0);
        }
        let neutral = vocab_attention_table(&m, &PreAttentionParams::zeros(4)).unwrap();
        assert!(neutral.values().iter().all(|&a| a == 0.5));
        assert!(vocab_attention_table(&m, &PreAttentionParams::zeros(3)).is_err());
    }

    #[test]
    fn tsv_export_excludes_sentinels_and_breaks_ties_by_index() {
        let vocab = Vocabulary::from_tokens(
            ["<pad>", "<unk>", "a", "b", "c"].iter().map(|s| s.to_string()).collect(),
        )
        .unwrap();
        let table = AttentionTable {
            values: vec![0.99, 0.98, 0.2, 0.7, 0.2],
        };
        assert_eq!(table.to_tsv(&vocab).unwrap(), "b\t0.7\na\t0.2\nc\t0.2\n");
    }

    #[test]
    fn bias_derivative_is_w_times_one_minus_w() {
        let p = PreAttentionParams::new(vec![0.4, -0.3], 0.2).unwrap();
        let w = [1.1, 0.7];
        let a = p.attention_weight(&w).unwrap();
        let h = 1e-6;
        let up = PreAttentionParams::new(vec![0.4, -0.3], 0.2 + h).unwrap().attention_weight(&w).unwrap();
        let dn = PreAttentionParams::new(vec![0.4, -0.3], 0.2 - h).unwrap().attention_weight(&w).unwrap();
        let numeric = (up - dn) / (2.0 * h);
        assert!(((a * (1.0 - a)) - numeric).abs() / numeric.abs() < 1e-6);
    }

    #[test]
    fn summed_output_passes_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let n = rng.gen_range(1..5);
            let l = rng.gen_range(1..7);
            let s = Tensor::matrix(n, l, (0..n * l).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let v = Tensor::vector((0..l).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let b = Tensor::scalar(rng.gen_range(-1.0..1.0));
            let mut op = ScalarFn::new(|inputs: &[Tensor]| {
                let p = PreAttentionParams {
                    v: inputs[0].clone(),
                    b: inputs[1].clone(),
                };
                let out = p.apply(&s)?;
                let total = out.u.data().iter().sum();
                let mut ones = out.u.clone();
                ones.fill(1.0);
                let mut g = PreAttentionParams::zeros(l);
                p.backward(&s, &out, &ones, &mut g);
                Ok((total, vec![g.v, g.b]))
            });
            let r = grad_check(&mut op, &[v, b], 1e-5, 1e-4).unwrap();
            assert!(r.passed(), "max error {}", r.max_error());
        }
    }
}
