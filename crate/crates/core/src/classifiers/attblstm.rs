//! Bidirectional LSTM with softmax attention over its outputs.
//!
//! Each direction runs a standard LSTM cell over `[h_{t-1}, x_t]`. The
//! per-position outputs `h_t = fwd_t ⊕ bwd_t` are squashed with `tanh`,
//! scored against a learned vector `w`, and averaged under the resulting
//! softmax; `tanh` of that average goes through dropout to the dense layer.
//! There is no projection matrix between `tanh(H)` and `w`.
//!
//! `H` is stored position-major (`[n, 2d]`): row `t` is `h_t`.

use rand::Rng;

use super::{apply_mask, glorot, Dense};
use crate::error::{Error, Result};
use crate::tensor::{self, sigmoid, Tensor};

/// One LSTM direction. Gate matrices are `[d, d + l]` acting on `[h_{t-1}, x_t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_f: Tensor,
    pub b_f: Tensor,
    pub w_i: Tensor,
    pub b_i: Tensor,
    pub w_c: Tensor,
    pub b_c: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
}

impl LstmParams {
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut gate = || glorot(&[hidden, hidden + input], hidden + input, hidden, rng);
        let (w_f, w_i, w_c, w_o) = (gate(), gate(), gate(), gate());
        let zero = Tensor::zeros(&[hidden]);
        LstmParams {
            w_f,
            b_f: zero.clone(),
            w_i,
            b_i: zero.clone(),
            w_c,
            b_c: zero.clone(),
            w_o,
            b_o: zero,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = Tensor::zeros(&[hidden, hidden + input]);
        let b = Tensor::zeros(&[hidden]);
        LstmParams {
            w_f: w.clone(),
            b_f: b.clone(),
            w_i: w.clone(),
            b_i: b.clone(),
            w_c: w.clone(),
            b_c: b.clone(),
            w_o: w,
            b_o: b,
        }
    }

    pub fn zeros_like(&self) -> Self {
        LstmParams::zeros(self.input(), self.hidden())
    }

    pub fn hidden(&self) -> usize {
        self.w_f.rows()
    }

    pub fn input(&self) -> usize {
        self.w_f.cols() - self.w_f.rows()
    }

    fn tensors(&self) -> [(&'static str, &Tensor); 8] {
        [
            ("w_f", &self.w_f),
            ("b_f", &self.b_f),
            ("w_i", &self.w_i),
            ("b_i", &self.b_i),
            ("w_c", &self.w_c),
            ("b_c", &self.b_c),
            ("w_o", &self.w_o),
            ("b_o", &self.b_o),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.w_f,
            &mut self.b_f,
            &mut self.w_i,
            &mut self.b_i,
            &mut self.w_c,
            &mut self.b_c,
            &mut self.w_o,
            &mut self.b_o,
        ]
    }
}

/// Saved activations of one cell step.
#[derive(Clone, Debug)]
pub(crate) struct StepCache {
    z: Vec<f64>,
    f: Vec<f64>,
    i: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn gate(w: &Tensor, b: &Tensor, z: &[f64], act: fn(f64) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; w.rows()];
    tensor::matvec(w, z, &mut out);
    out.iter_mut()
        .zip(b.data())
        .for_each(|(a, bias)| *a = act(*a + bias));
    out
}

pub(crate) fn step_cached(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmParams,
) -> (Vec<f64>, Vec<f64>, StepCache) {
    let mut z = Vec::with_capacity(h_prev.len() + x.len());
    z.extend_from_slice(h_prev);
    z.extend_from_slice(x);
    let f = gate(&p.w_f, &p.b_f, &z, sigmoid);
    let i = gate(&p.w_i, &p.b_i, &z, sigmoid);
    let g = gate(&p.w_c, &p.b_c, &z, f64::tanh);
    let o = gate(&p.w_o, &p.b_o, &z, sigmoid);
    let c: Vec<f64> = (0..f.len()).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();
    (
        h,
        c,
        StepCache {
            z,
            f,
            i,
            g,
            o,
            c_prev: c_prev.to_vec(),
            tanh_c,
        },
    )
}

/// One LSTM cell step, returning `(h_t, C_t)`.
pub fn lstm_step(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    params: &LstmParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = params.hidden();
    if x.len() != params.input() || h_prev.len() != d || c_prev.len() != d {
        return Err(Error::invalid_argument(format!(
            "lstm step expects x of {} and states of {d}, got {}, {}, {}",
            params.input(),
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let (h, c, _) = step_cached(x, h_prev, c_prev, params);
    Ok((h, c))
}

/// Backward through one step. `dh` and `dc` are the gradients flowing into
/// `h_t` and `C_t`; returns `(dh_{t-1}, dC_{t-1}, dx_t)`.
pub(crate) fn step_backward(
    p: &LstmParams,
    cache: &StepCache,
    dh: &[f64],
    dc: &[f64],
    grads: &mut LstmParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = p.hidden();
    let mut da_f = vec![0.0; d];
    let mut da_i = vec![0.0; d];
    let mut da_g = vec![0.0; d];
    let mut da_o = vec![0.0; d];
    let mut dc_prev = vec![0.0; d];
    for k in 0..d {
        let (f, i, g, o, tc) = (cache.f[k], cache.i[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
        let dck = dc[k] + dh[k] * o * (1.0 - tc * tc);
        da_o[k] = dh[k] * tc * o * (1.0 - o);
        da_f[k] = dck * cache.c_prev[k] * f * (1.0 - f);
        da_i[k] = dck * g * i * (1.0 - i);
        da_g[k] = dck * i * (1.0 - g * g);
        dc_prev[k] = dck * f;
    }
    let mut dz = vec![0.0; cache.z.len()];
    for (w, b, gw, gb, da) in [
        (&p.w_f, &p.b_f, &mut grads.w_f, &mut grads.b_f, &da_f),
        (&p.w_i, &p.b_i, &mut grads.w_i, &mut grads.b_i, &da_i),
        (&p.w_c, &p.b_c, &mut grads.w_c, &mut grads.b_c, &da_g),
        (&p.w_o, &p.b_o, &mut grads.w_o, &mut grads.b_o, &da_o),
    ] {
        let _ = b;
        tensor::outer_acc(gw, da, &cache.z);
        tensor::axpy(1.0, da, gb.data_mut());
        tensor::matvec_t_acc(w, da, &mut dz);
    }
    let dx = dz.split_off(d);
    (dz, dc_prev, dx)
}

struct DirectionCache {
    steps: Vec<StepCache>,
}

fn run_direction(u: &Tensor, p: &LstmParams, reverse: bool) -> (Vec<Vec<f64>>, DirectionCache) {
    let n = u.rows();
    let d = p.hidden();
    let mut h = vec![0.0; d];
    let mut c = vec![0.0; d];
    let mut outputs = vec![Vec::new(); n];
    let mut steps = Vec::with_capacity(n);
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    for &t in &order {
        let (h_next, c_next, cache) = step_cached(u.row(t), &h, &c, p);
        outputs[t] = h_next.clone();
        steps.push(cache);
        h = h_next;
        c = c_next;
    }
    (outputs, DirectionCache { steps })
}

/// BPTT for one direction given `∂L/∂h_t` per position; accumulates into `du`.
fn direction_backward(
    p: &LstmParams,
    cache: &DirectionCache,
    dh_out: &[Vec<f64>],
    reverse: bool,
    grads: &mut LstmParams,
    du: Option<&mut Tensor>,
) {
    let n = dh_out.len();
    let d = p.hidden();
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    let mut dh_next = vec![0.0; d];
    let mut dc_next = vec![0.0; d];
    let mut du = du;
    for (s, &t) in order.iter().enumerate().rev() {
        let dh: Vec<f64> = dh_out[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
        let (dh_prev, dc_prev, dx) = step_backward(p, &cache.steps[s], &dh, &dc_next, grads);
        if let Some(du) = du.as_deref_mut() {
            tensor::axpy(1.0, &dx, du.row_mut(t));
        }
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttBlstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
    /// Sentence attention vector, shape `[2d]`.
    pub attention: Tensor,
    pub dense: Dense,
}

/// Run both directions; returns `H` as `[n, 2d]`.
pub fn bilstm_forward(u: &Tensor, params: &AttBlstmParams) -> Result<Tensor> {
    Ok(params.encode(u)?.0)
}

/// Softmax attention over the rows of `h` (`[n, 2d]`). Positions with
/// `mask[t] == true` are padding: they get zero weight and take no part
/// in the normalization. Returns `(α, γ)`.
pub fn sentence_attention(h: &Tensor, w: &[f64], mask: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (alpha, gamma, _) = attend(h, w, mask)?;
    Ok((alpha, gamma))
}

fn attend(h: &Tensor, w: &[f64], mask: &[bool]) -> Result<(Vec<f64>, Vec<f64>, Tensor)> {
    if w.len() != h.cols() {
        return Err(Error::invalid_argument(format!(
            "attention vector of length {} for outputs of width {}",
            w.len(),
            h.cols()
        )));
    }
    if mask.len() != h.rows() {
        return Err(Error::invalid_argument("mask length differs from sequence length"));
    }
    let live: Vec<usize> = (0..h.rows()).filter(|&t| !mask[t]).collect();
    if live.is_empty() {
        return Err(Error::invalid_state("every position is masked"));
    }
    let mut m = h.clone();
    m.data_mut().iter_mut().for_each(|x| *x = x.tanh());
    let scores: Vec<f64> = live.iter().map(|&t| tensor::dot(w, m.row(t))).collect();
    let probs = tensor::softmax(&scores)?;
    let mut alpha = vec![0.0; h.rows()];
    let mut gamma = vec![0.0; h.cols()];
    for (&t, &a) in live.iter().zip(&probs) {
        alpha[t] = a;
        tensor::axpy(a, h.row(t), &mut gamma);
    }
    Ok((alpha, gamma, m))
}

pub struct AttBlstmCache {
    fwd: DirectionCache,
    bwd: DirectionCache,
    pub h: Tensor,
    m: Tensor,
    pub alpha: Vec<f64>,
    /// `h* = tanh(γ)`
    pub sentence: Vec<f64>,
    dropped: Vec<f64>,
    mask: Option<Vec<f64>>,
}

impl AttBlstmParams {
    pub fn init(dim: usize, hidden: usize, classes: usize, rng: &mut impl Rng) -> Result<Self> {
        if dim == 0 || hidden == 0 || classes == 0 {
            return Err(Error::invalid_argument("att-blstm needs positive dimensions"));
        }
        let forward = LstmParams::init(dim, hidden, rng);
        let backward = LstmParams::init(dim, hidden, rng);
        let attention = glorot(&[2 * hidden], 2 * hidden, 1, rng);
        Ok(AttBlstmParams {
            forward,
            backward,
            attention,
            dense: Dense::init(2 * hidden, classes, rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        AttBlstmParams {
            forward: self.forward.zeros_like(),
            backward: self.backward.zeros_like(),
            attention: self.attention.zeros_like(),
            dense: self.dense.zeros_like(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (dir, p) in [("fwd", &self.forward), ("bwd", &self.backward)] {
            for (name, t) in p.tensors() {
                out.push((format!("att_blstm.{dir}.{name}"), t));
            }
        }
        out.push(("att_blstm.attention".to_string(), &self.attention));
        out.push(("att_blstm.dense.w".to_string(), &self.dense.w));
        out.push(("att_blstm.dense.b".to_string(), &self.dense.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.extend(self.forward.tensors_mut());
        out.extend(self.backward.tensors_mut());
        out.push(&mut self.attention);
        out.push(&mut self.dense.w);
        out.push(&mut self.dense.b);
        out
    }

    fn encode(&self, u: &Tensor) -> Result<(Tensor, DirectionCache, DirectionCache)> {
        if u.rows() == 0 {
            return Err(Error::invalid_argument("empty sentence"));
        }
        if u.cols() != self.forward.input() || u.cols() != self.backward.input() {
            return Err(Error::invalid_argument(format!(
                "lstm expects {}-dim inputs, got {}",
                self.forward.input(),
                u.cols()
            )));
        }
        let d = self.hidden();
        let (fo, fc) = run_direction(u, &self.forward, false);
        let (bo, bc) = run_direction(u, &self.backward, true);
        let mut h = Tensor::zeros(&[u.rows(), 2 * d]);
        for t in 0..u.rows() {
            let row = h.row_mut(t);
            row[..d].copy_from_slice(&fo[t]);
            row[d..].copy_from_slice(&bo[t]);
        }
        Ok((h, fc, bc))
    }

    /// Logits for `u`. `pad_mask[t]` marks padding positions excluded from
    /// the attention softmax; `None` means no padding.
    pub fn forward(
        &self,
        u: &Tensor,
        pad_mask: Option<&[bool]>,
        dropout_mask: Option<&[f64]>,
    ) -> Result<(Vec<f64>, AttBlstmCache)> {
        let (h, fwd, bwd) = self.encode(u)?;
        let no_pad = vec![false; h.rows()];
        let (alpha, gamma, m) = attend(&h, self.attention.data(), pad_mask.unwrap_or(&no_pad))?;
        let sentence: Vec<f64> = gamma.iter().map(|g| g.tanh()).collect();
        let dropped = apply_mask(&sentence, dropout_mask)?;
        let logits = self.dense.forward(&dropped);
        Ok((
            logits,
            AttBlstmCache {
                fwd,
                bwd,
                h,
                m,
                alpha,
                sentence,
                dropped,
                mask: dropout_mask.map(<[f64]>::to_vec),
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &AttBlstmCache,
        dlogits: &[f64],
        grads: &mut AttBlstmParams,
        input_grad: bool,
    ) -> Option<Tensor> {
        let n = cache.h.rows();
        let width = cache.h.cols();
        let d = self.hidden();
        let mut ds = self.dense.backward(&cache.dropped, dlogits, &mut grads.dense);
        if let Some(m) = &cache.mask {
            ds.iter_mut().zip(m).for_each(|(g, k)| *g *= k);
        }
        let dgamma: Vec<f64> = ds
            .iter()
            .zip(&cache.sentence)
            .map(|(g, s)| g * (1.0 - s * s))
            .collect();

        // γ = Σ α_t h_t, α = softmax(w · tanh(h_t)) over live positions
        let mut dh = vec![vec![0.0; width]; n];
        let dalpha: Vec<f64> = (0..n).map(|t| tensor::dot(&dgamma, cache.h.row(t))).collect();
        let inner: f64 = (0..n).map(|t| cache.alpha[t] * dalpha[t]).sum();
        for t in 0..n {
            let a = cache.alpha[t];
            tensor::axpy(a, &dgamma, &mut dh[t]);
            let dscore = a * (dalpha[t] - inner);
            if dscore == 0.0 {
                continue;
            }
            let mrow = cache.m.row(t);
            tensor::axpy(dscore, mrow, grads.attention.data_mut());
            for k in 0..width {
                dh[t][k] += dscore * self.attention.data()[k] * (1.0 - mrow[k] * mrow[k]);
            }
        }

        let dh_f: Vec<Vec<f64>> = dh.iter().map(|r| r[..d].to_vec()).collect();
        let dh_b: Vec<Vec<f64>> = dh.iter().map(|r| r[d..].to_vec()).collect();
        let mut du = input_grad.then(|| Tensor::zeros(&[n, self.forward.input()]));
        direction_backward(&self.forward, &cache.fwd, &dh_f, false, &mut grads.forward, du.as_mut());
        direction_backward(&self.backward, &cache.bwd, &dh_b, true, &mut grads.backward, du.as_mut());
        du
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, ScalarFn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
    }

    #[test]
    fn zero_weights_step() {
        let p = LstmParams::zeros(3, 2);
        let (h, c) = lstm_step(&[1.0, -1.0, 2.0], &[0.0; 2], &[0.0; 2], &p).unwrap();
        assert_eq!(h, [0.0, 0.0]);
        assert_eq!(c, [0.0, 0.0]);

        // f = i = o = 1/2 and C~ = 0
        let cp = [0.8, -1.2];
        let (h, c) = lstm_step(&[1.0, -1.0, 2.0], &[0.3, 0.1], &cp, &p).unwrap();
        for k in 0..2 {
            assert_eq!(c[k], 0.5 * cp[k]);
            assert!((h[k] - 0.5 * (0.5 * cp[k]).tanh()).abs() < 1e-15);
        }
        assert!(lstm_step(&[1.0], &[0.0; 2], &[0.0; 2], &p).is_err());
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = LstmParams::init(3, 2, &mut rng);
        p.w_f.fill(0.0);
        p.b_f.fill(30.0);
        let x = [0.4, -0.2, 0.9];
        let hp = [0.1, -0.3];
        let cp = [1.5, -0.7];
        let (_, c) = lstm_step(&x, &hp, &cp, &p).unwrap();
        let mut z = hp.to_vec();
        z.extend_from_slice(&x);
        for k in 0..2 {
            let i = sigmoid(tensor::dot(p.w_i.row(k), &z) + p.b_i.data()[k]);
            let g = (tensor::dot(p.w_c.row(k), &z) + p.b_c.data()[k]).tanh();
            assert!((c[k] - (cp[k] + i * g)).abs() < 1e-9);
        }
    }

    #[test]
    fn bilstm_shapes_and_zero_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = AttBlstmParams::init(4, 50, 2, &mut rng).unwrap();
        let u = rand_tensor(&mut rng, &[3, 4], 1.0);
        let h = bilstm_forward(&u, &p).unwrap();
        assert_eq!(h.shape(), &[3, 100]);
        let one = rand_tensor(&mut rng, &[1, 4], 1.0);
        assert_eq!(bilstm_forward(&one, &p).unwrap().rows(), 1);

        p.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        assert!(bilstm_forward(&u, &p).unwrap().data().iter().all(|&x| x == 0.0));
        let (logits, cache) = p.forward(&u, None, None).unwrap();
        assert_eq!(logits, [0.0, 0.0]);
        assert!(cache.sentence.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mirrored_directions_are_time_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = AttBlstmParams::init(3, 4, 2, &mut rng).unwrap();
        p.backward = p.forward.clone();
        let u = rand_tensor(&mut rng, &[5, 3], 1.0);
        let mut rev = u.clone();
        for t in 0..5 {
            rev.row_mut(t).copy_from_slice(u.row(4 - t));
        }
        let h = bilstm_forward(&u, &p).unwrap();
        let hr = bilstm_forward(&rev, &p).unwrap();
        for t in 0..5 {
            assert_eq!(h.row(t)[..4], hr.row(4 - t)[4..]);
            assert_eq!(h.row(t)[4..], hr.row(4 - t)[..4]);
        }
    }

    #[test]
    fn attention_examples() {
        let single = Tensor::matrix(1, 2, vec![0.3, -0.6]).unwrap();
        let (a, g) = sentence_attention(&single, &[0.5, 2.0], &[false]).unwrap();
        assert_eq!(a, [1.0]);
        assert_eq!(g, [0.3, -0.6]);

        let h = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (a, g) = sentence_attention(&h, &[0.0, 0.0], &[false, true, false]).unwrap();
        assert_eq!(a, [0.5, 0.0, 0.5]);
        assert_eq!(g, [3.0, 4.0]);

        // columns h_1 = (1, 2), h_2 = (3, 0) and w = (1, 0)
        let h = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 0.0]).unwrap();
        let (a, g) = sentence_attention(&h, &[1.0, 0.0], &[false, false]).unwrap();
        let e1 = 1f64.tanh().exp();
        let e2 = 3f64.tanh().exp();
        let (a1, a2) = (e1 / (e1 + e2), e2 / (e1 + e2));
        assert!((a[0] - a1).abs() < 1e-15 && (a[1] - a2).abs() < 1e-15);
        assert!((g[0] - (a1 + 3.0 * a2)).abs() < 1e-14);
        assert!((g[1] - 2.0 * a1).abs() < 1e-14);

        assert!(matches!(
            sentence_attention(&h, &[1.0, 0.0], &[true, true]),
            Err(Error::InvalidState(_))
        ));
    }

    /// Scalar re-derivation of the whole head on a 3-token input, written
    /// out gate by gate without any of the module's helpers.
    #[test]
    fn forward_matches_hand_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = AttBlstmParams::init(2, 2, 2, &mut rng).unwrap();
        let u = rand_tensor(&mut rng, &[3, 2], 1.0);
        let (logits, _) = p.forward(&u, None, None).unwrap();

        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let affine = |w: &Tensor, b: &Tensor, k: usize, z: &[f64]| -> f64 {
            let mut s = b.data()[k];
            for j in 0..z.len() {
                s += w.get(k, j) * z[j];
            }
            s
        };
        let run = |lp: &LstmParams, order: [usize; 3]| -> Vec<[f64; 2]> {
            let mut h = [0.0f64; 2];
            let mut c = [0.0f64; 2];
            let mut out = vec![[0.0; 2]; 3];
            for &t in &order {
                let z = [h[0], h[1], u.get(t, 0), u.get(t, 1)];
                let mut nh = [0.0; 2];
                for k in 0..2 {
                    let f = sig(affine(&lp.w_f, &lp.b_f, k, &z));
                    let i = sig(affine(&lp.w_i, &lp.b_i, k, &z));
                    let g = affine(&lp.w_c, &lp.b_c, k, &z).tanh();
                    let o = sig(affine(&lp.w_o, &lp.b_o, k, &z));
                    c[k] = f * c[k] + i * g;
                    nh[k] = o * c[k].tanh();
                }
                h = nh;
                out[t] = h;
            }
            out
        };
        let fwd = run(&p.forward, [0, 1, 2]);
        let bwd = run(&p.backward, [2, 1, 0]);
        let cols: Vec<[f64; 4]> = (0..3)
            .map(|t| [fwd[t][0], fwd[t][1], bwd[t][0], bwd[t][1]])
            .collect();
        let w = p.attention.data();
        let scores: Vec<f64> = cols
            .iter()
            .map(|c| (0..4).map(|k| w[k] * c[k].tanh()).sum())
            .collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        let mut gamma = [0.0; 4];
        for t in 0..3 {
            for k in 0..4 {
                gamma[k] += scores[t].exp() / z * cols[t][k];
            }
        }
        for c in 0..2 {
            let mut want = p.dense.b.data()[c];
            for k in 0..4 {
                want += p.dense.w.get(c, k) * gamma[k].tanh();
            }
            assert!((logits[c] - want).abs() < 1e-13, "{} vs {}", logits[c], want);
        }
    }

    #[test]
    fn attention_sums_to_one_and_ignores_masked() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in 1..8 {
            let h = rand_tensor(&mut rng, &[n, 4], 3.0);
            let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
            mask[0] = false;
            let (a, _) = sentence_attention(&h, &w, &mask).unwrap();
            assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for t in 0..n {
                if mask[t] {
                    assert_eq!(a[t], 0.0);
                }
            }
        }
    }

    #[test]
    fn grad_check_full_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let n = rng.gen_range(1..5);
            let l = rng.gen_range(1..7);
            let d = rng.gen_range(1..4);
            let p = AttBlstmParams::init(l, d, 2, &mut rng).unwrap();
            let u = rand_tensor(&mut rng, &[n, l], 1.0);
            let mask: Vec<f64> = (0..2 * d).map(|_| if rng.gen_bool(0.6) { 2.0 } else { 0.0 }).collect();
            let proj = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let template = p.clone();
            let mut inputs: Vec<Tensor> = p.tensors().into_iter().map(|(_, t)| t.clone()).collect();
            inputs.push(u);
            let mut op = ScalarFn::new(|xs: &[Tensor]| {
                let mut q = template.clone();
                for (slot, x) in q.tensors_mut().into_iter().zip(xs) {
                    *slot = x.clone();
                }
                let (logits, cache) = q.forward(xs.last().unwrap(), None, Some(&mask))?;
                let mut g = q.zeros_like();
                let du = q.backward(&cache, &proj, &mut g, true).unwrap();
                let mut grads: Vec<Tensor> = g.tensors().into_iter().map(|(_, t)| t.clone()).collect();
                grads.push(du);
                Ok((logits[0] * proj[0] + logits[1] * proj[1], grads))
            });
            let r = grad_check(&mut op, &inputs, 1e-5, 1e-4).unwrap();
            assert!(r.passed(), "max error {} at {:?}", r.max_error(), r.worst());
        }
    }
}
