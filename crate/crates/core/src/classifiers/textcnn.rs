//! Convolutional sentence classifier: one bank of filters per window size,
//! ReLU feature maps, max-over-time pooling, dropout and a dense layer.
//!
//! Positions are 0-based here. A sentence shorter than the widest window is
//! right-padded with zero vectors up to that window, and no further, so a
//! prediction never depends on what else is in the batch.

use rand::Rng;

use super::{apply_mask, glorot, Dense};
use crate::error::{Error, Result};
use crate::tensor::{dot, relu, Tensor};

/// Filters for one window size `h`: `filters` is `[count, h·l]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBank {
    pub window: usize,
    pub filters: Tensor,
    pub bias: Tensor,
}

impl ConvBank {
    pub fn count(&self) -> usize {
        self.filters.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextCnnParams {
    pub banks: Vec<ConvBank>,
    pub dense: Dense,
}

/// Concatenation `u_i ⊕ … ⊕ u_{i+h-1}`, zero-filling past the end of a
/// sentence shorter than `h`.
pub fn window_concat(u: &Tensor, i: usize, h: usize) -> Result<Vec<f64>> {
    let n = u.rows();
    let l = u.cols();
    let positions = n.max(h) - h + 1;
    if h == 0 || i >= positions {
        return Err(Error::invalid_argument(format!(
            "window start {i} with width {h} outside a sentence of {n} words"
        )));
    }
    let mut out = vec![0.0; h * l];
    let avail = (n - i).min(h);
    out[..avail * l].copy_from_slice(&u.data()[i * l..(i + avail) * l]);
    Ok(out)
}

/// `o_i = ReLU(c · U[i..i+h] + b)` for every position. The sentence must
/// already be padded to at least `h` rows.
pub fn conv_feature(u: &Tensor, filter: &[f64], bias: f64, h: usize) -> Result<Vec<f64>> {
    let l = u.cols();
    if filter.len() != h * l {
        return Err(Error::invalid_argument(format!(
            "filter of length {} for window {h} over {l}-dim vectors",
            filter.len()
        )));
    }
    if u.rows() < h {
        return Err(Error::invalid_state(format!(
            "sentence of {} rows is shorter than window {h}; pad it first",
            u.rows()
        )));
    }
    Ok((0..=u.rows() - h)
        .map(|i| relu(dot(filter, &u.data()[i * l..(i + h) * l]) + bias))
        .collect())
}

/// Maximum of a feature map and the first position attaining it.
pub fn max_over_time(o: &[f64]) -> Result<(f64, usize)> {
    let idx = crate::tensor::argmax(o)
        .ok_or_else(|| Error::invalid_argument("max-over-time of an empty feature map"))?;
    Ok((o[idx], idx))
}

/// Zero rows appended until the tensor has at least `min_rows` rows.
pub fn pad_rows(u: &Tensor, min_rows: usize) -> Tensor {
    if u.rows() >= min_rows {
        return u.clone();
    }
    let mut data = u.data().to_vec();
    data.resize(min_rows * u.cols(), 0.0);
    Tensor::matrix(min_rows, u.cols(), data).expect("padded shape")
}

#[derive(Clone, Debug)]
pub struct TextCnnCache {
    padded: Tensor,
    rows: usize,
    /// Per filter (bank-major): argmax position and its pre-activation.
    argmax: Vec<(usize, f64)>,
    dropped: Vec<f64>,
    mask: Option<Vec<f64>>,
    pub pooled: Vec<f64>,
}

impl TextCnnParams {
    pub fn init(
        dim: usize,
        windows: &[usize],
        filters_per_window: usize,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if windows.is_empty() || windows.contains(&0) || filters_per_window == 0 || classes == 0 {
            return Err(Error::invalid_argument("text-cnn needs windows >= 1, filters >= 1 and classes >= 1"));
        }
        let banks: Vec<ConvBank> = windows
            .iter()
            .map(|&h| ConvBank {
                window: h,
                filters: glorot(&[filters_per_window, h * dim], h * dim, filters_per_window, rng),
                bias: Tensor::zeros(&[filters_per_window]),
            })
            .collect();
        let pooled = windows.len() * filters_per_window;
        Ok(TextCnnParams {
            banks,
            dense: Dense::init(pooled, classes, rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        TextCnnParams {
            banks: self
                .banks
                .iter()
                .map(|b| ConvBank {
                    window: b.window,
                    filters: b.filters.zeros_like(),
                    bias: b.bias.zeros_like(),
                })
                .collect(),
            dense: self.dense.zeros_like(),
        }
    }

    pub fn pooled_width(&self) -> usize {
        self.banks.iter().map(ConvBank::count).sum()
    }

    pub fn max_window(&self) -> usize {
        self.banks.iter().map(|b| b.window).max().unwrap_or(1)
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for b in &self.banks {
            out.push((format!("text_cnn.conv{}.filters", b.window), &b.filters));
            out.push((format!("text_cnn.conv{}.bias", b.window), &b.bias));
        }
        out.push(("text_cnn.dense.w".to_string(), &self.dense.w));
        out.push(("text_cnn.dense.b".to_string(), &self.dense.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in &mut self.banks {
            out.push(&mut b.filters);
            out.push(&mut b.bias);
        }
        out.push(&mut self.dense.w);
        out.push(&mut self.dense.b);
        out
    }

    /// Logits for `u` (`[n, l]`). `dropout_mask`, when present, multiplies the
    /// pooled vector before the dense layer.
    pub fn forward(&self, u: &Tensor, dropout_mask: Option<&[f64]>) -> Result<(Vec<f64>, TextCnnCache)> {
        if u.rows() == 0 {
            return Err(Error::invalid_argument("empty sentence"));
        }
        let l = u.cols();
        let padded = pad_rows(u, self.max_window());
        let data = padded.data();
        let mut pooled = Vec::with_capacity(self.pooled_width());
        let mut argmax = Vec::with_capacity(self.pooled_width());
        for bank in &self.banks {
            let h = bank.window;
            if bank.filters.cols() != h * l {
                return Err(Error::invalid_argument(format!(
                    "window-{h} filters expect {}-dim windows, input gives {}",
                    bank.filters.cols(),
                    h * l
                )));
            }
            let positions = padded.rows() - h + 1;
            for f in 0..bank.count() {
                let filter = bank.filters.row(f);
                let bias = bank.bias.data()[f];
                let mut best = (0usize, f64::NEG_INFINITY);
                for i in 0..positions {
                    let z = dot(filter, &data[i * l..(i + h) * l]) + bias;
                    if z > best.1 {
                        best = (i, z);
                    }
                }
                pooled.push(relu(best.1));
                argmax.push(best);
            }
        }
        let dropped = apply_mask(&pooled, dropout_mask)?;
        let logits = self.dense.forward(&dropped);
        Ok((
            logits,
            TextCnnCache {
                padded,
                rows: u.rows(),
                argmax,
                dropped,
                mask: dropout_mask.map(<[f64]>::to_vec),
                pooled,
            },
        ))
    }

    /// Accumulate parameter gradients; when `input_grad` is set also return
    /// `∂L/∂U` for the unpadded rows.
    pub fn backward(
        &self,
        cache: &TextCnnCache,
        dlogits: &[f64],
        grads: &mut TextCnnParams,
        input_grad: bool,
    ) -> Option<Tensor> {
        let l = cache.padded.cols();
        let mut dpooled = self.dense.backward(&cache.dropped, dlogits, &mut grads.dense);
        if let Some(m) = &cache.mask {
            dpooled.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
        }
        let mut du = input_grad.then(|| cache.padded.zeros_like());
        let data = cache.padded.data();
        let mut k = 0;
        for (bank, gbank) in self.banks.iter().zip(grads.banks.iter_mut()) {
            let h = bank.window;
            for f in 0..bank.count() {
                let (pos, z) = cache.argmax[k];
                let d = dpooled[k];
                k += 1;
                if z <= 0.0 || d == 0.0 {
                    continue;
                }
                let window = &data[pos * l..(pos + h) * l];
                crate::tensor::axpy(d, window, gbank.filters.row_mut(f));
                gbank.bias.data_mut()[f] += d;
                if let Some(du) = du.as_mut() {
                    crate::tensor::axpy(d, bank.filters.row(f), &mut du.data_mut()[pos * l..(pos + h) * l]);
                }
            }
        }
        du.map(|full| {
            Tensor::matrix(cache.rows, l, full.data()[..cache.rows * l].to_vec()).expect("unpadded shape")
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, ScalarFn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn u2() -> Tensor {
        Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn window_examples() {
        assert_eq!(window_concat(&u2(), 0, 2).unwrap(), [1.0, 2.0, 3.0, 4.0]);
        assert_eq!(window_concat(&u2(), 1, 1).unwrap(), [3.0, 4.0]);
        assert_eq!(window_concat(&u2(), 0, 3).unwrap(), [1.0, 2.0, 3.0, 4.0, 0.0, 0.0]);
        assert!(window_concat(&u2(), 1, 2).is_err());
        assert!(window_concat(&u2(), 2, 1).is_err());
    }

    #[test]
    fn conv_examples() {
        let u = u2();
        assert_eq!(conv_feature(&u, &[0.0; 4], 0.0, 2).unwrap(), [0.0]);
        assert_eq!(conv_feature(&u, &[0.0; 2], -1.0, 1).unwrap(), [0.0, 0.0]);
        let one = Tensor::matrix(1, 2, vec![3.0, -2.0]).unwrap();
        assert_eq!(conv_feature(&one, &[1.0, 0.0], 0.0, 1).unwrap(), [3.0]);
        assert!(matches!(
            conv_feature(&one, &[0.0; 4], 0.0, 2),
            Err(Error::InvalidState(_))
        ));
        assert!(conv_feature(&one, &[0.0; 3], 0.0, 1).is_err());
    }

    #[test]
    fn pooling_examples() {
        assert_eq!(max_over_time(&[3.0, 1.0, 2.0]).unwrap(), (3.0, 0));
        assert_eq!(max_over_time(&[-1.0, -5.0]).unwrap().0, -1.0);
        assert_eq!(max_over_time(&[7.0]).unwrap().0, 7.0);
        assert_eq!(max_over_time(&[2.0, 5.0, 5.0]).unwrap().1, 1);
        assert!(max_over_time(&[]).is_err());
    }

    #[test]
    fn pooled_width_and_zero_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = TextCnnParams::init(4, &[1, 2, 3, 4, 5], 128, 2, &mut rng).unwrap();
        assert_eq!(p.pooled_width(), 640);
        let u = Tensor::matrix(3, 4, vec![0.3; 12]).unwrap();
        let (_, cache) = p.forward(&u, None).unwrap();
        assert_eq!(cache.pooled.len(), 640);
        p.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        let (logits, _) = p.forward(&u, None).unwrap();
        assert_eq!(logits, [0.0, 0.0]);
    }

    #[test]
    fn forward_matches_constituent_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = TextCnnParams::init(3, &[1, 2, 4], 3, 2, &mut rng).unwrap();
        let u = Tensor::matrix(2, 3, (0..6).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let (_, cache) = p.forward(&u, None).unwrap();
        let padded = pad_rows(&u, 4);
        let mut k = 0;
        for bank in &p.banks {
            for f in 0..bank.count() {
                let o = conv_feature(&padded, bank.filters.row(f), bank.bias.data()[f], bank.window).unwrap();
                assert_eq!(max_over_time(&o).unwrap().0, cache.pooled[k]);
                k += 1;
            }
        }
    }

    #[test]
    fn permuting_filters_with_dense_columns_keeps_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = TextCnnParams::init(3, &[1, 2], 4, 2, &mut rng).unwrap();
        let u = Tensor::matrix(3, 3, (0..9).map(|i| (i as f64).cos()).collect()).unwrap();
        let (logits, cache) = p.forward(&u, None).unwrap();

        // reverse the filter order of the window-2 bank
        let perm = [3usize, 2, 1, 0];
        let mut q = p.clone();
        for (new, &old) in perm.iter().enumerate() {
            q.banks[1].filters.row_mut(new).copy_from_slice(p.banks[1].filters.row(old));
            q.banks[1].bias.data_mut()[new] = p.banks[1].bias.data()[old];
            for c in 0..2 {
                let w = p.dense.w.get(c, 4 + old);
                q.dense.w.row_mut(c)[4 + new] = w;
            }
        }
        let (qlogits, qcache) = q.forward(&u, None).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(qcache.pooled[4 + new], cache.pooled[4 + old]);
        }
        for (a, b) in logits.iter().zip(&qlogits) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_gradient_is_one_hot() {
        let u = Tensor::matrix(4, 1, vec![0.5, 2.0, 2.0, 1.0]).unwrap();
        let p = TextCnnParams {
            banks: vec![ConvBank {
                window: 1,
                filters: Tensor::matrix(1, 1, vec![1.0]).unwrap(),
                bias: Tensor::zeros(&[1]),
            }],
            dense: Dense {
                w: Tensor::matrix(1, 1, vec![1.0]).unwrap(),
                b: Tensor::zeros(&[1]),
            },
        };
        let (_, cache) = p.forward(&u, None).unwrap();
        let mut g = p.zeros_like();
        let du = p.backward(&cache, &[1.0], &mut g, true).unwrap();
        assert_eq!(du.data(), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn grad_check_with_input_and_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let n = rng.gen_range(1..5);
            let l = rng.gen_range(1..7);
            let mut p = TextCnnParams::init(l, &[1, 2, 3], 2, 2, &mut rng).unwrap();
            for bank in &mut p.banks {
                bank.bias.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
            }
            let u = Tensor::matrix(n, l, (0..n * l).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let mask: Vec<f64> = (0..p.pooled_width())
                .map(|_| if rng.gen_bool(0.7) { 1.0 / 0.7 } else { 0.0 })
                .collect();
            let proj = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let template = p.clone();
            let mut inputs: Vec<Tensor> = p.tensors().into_iter().map(|(_, t)| t.clone()).collect();
            inputs.push(u);
            let mut op = ScalarFn::new(|xs: &[Tensor]| {
                let mut q = template.clone();
                for (slot, x) in q.tensors_mut().into_iter().zip(xs) {
                    *slot = x.clone();
                }
                let u = xs.last().unwrap();
                let (logits, cache) = q.forward(u, Some(&mask))?;
                let value = logits[0] * proj[0] + logits[1] * proj[1];
                let mut g = q.zeros_like();
                let du = q.backward(&cache, &proj, &mut g, true).unwrap();
                let mut grads: Vec<Tensor> = g.tensors().into_iter().map(|(_, t)| t.clone()).collect();
                grads.push(du);
                Ok((value, grads))
            });
            let r = grad_check(&mut op, &inputs, 1e-5, 1e-4).unwrap();
            assert!(r.passed(), "max error {} at {:?}", r.max_error(), r.worst());
        }
    }
}
