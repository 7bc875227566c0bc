//! The named gradient checks behind `prelex grad-check`.
//!
//! Each check draws small random instances (at most 4 tokens, 6 embedding
//! dimensions, 3 hidden units, 2 filters per window) and compares the
//! hand-written backward pass against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifiers::attblstm::{step_backward, step_cached};
use crate::classifiers::{AttBlstmParams, LstmParams, TextCnnParams};
use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckReport, ScalarFn};
use crate::model::{Architecture, Head, Model, Variant};
use crate::preattention::PreAttentionParams;
use crate::tensor::Tensor;
use crate::training::{batch_loss, Sample};

pub const EPSILON: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub const CHECKS: [&str; 6] = [
    "pre-attention",
    "conv-pool",
    "lstm-step",
    "bilstm-attention",
    "pre-attn-text-cnn-loss",
    "pre-attn-att-blstm-loss",
];

#[derive(Clone, Debug)]
pub struct CheckSummary {
    pub name: &'static str,
    pub instances: usize,
    pub passed: usize,
    pub max_error: f64,
    /// First failure message, if any instance failed.
    pub failure: Option<String>,
}

impl CheckSummary {
    pub fn ok(&self) -> bool {
        self.passed == self.instances
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).expect("valid shape")
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn mask(rng: &mut ChaCha8Rng, width: usize, keep: f64) -> Vec<f64> {
    (0..width)
        .map(|_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
        .collect()
}

/// Conv biases away from zero so that zero-padded windows do not sit
/// exactly on the ReLU corner.
fn jitter_conv_biases(p: &mut TextCnnParams, rng: &mut ChaCha8Rng) {
    for bank in &mut p.banks {
        bank.bias.data_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    }
}

fn with_tensors<T: Clone>(template: &T, xs: &[Tensor], slots: impl Fn(&mut T) -> Vec<&mut Tensor>) -> T {
    let mut q = template.clone();
    for (slot, x) in slots(&mut q).into_iter().zip(xs) {
        *slot = x.clone();
    }
    q
}

fn check_pre_attention(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let n = rng.gen_range(1..=4);
    let l = rng.gen_range(1..=6);
    let s = rand_tensor(rng, &[n, l], 1.0);
    let proj = rand_tensor(rng, &[n, l], 1.0);
    let p = PreAttentionParams::new(rand_vec(rng, l, 1.0), rng.gen_range(-1.0..1.0))?;
    let mut op = ScalarFn::new(|xs: &[Tensor]| {
        let q = PreAttentionParams {
            v: xs[0].clone(),
            b: xs[1].clone(),
        };
        let out = q.apply(&s)?;
        let value = crate::tensor::dot(out.u.data(), proj.data());
        let mut g = PreAttentionParams::zeros(l);
        q.backward(&s, &out, &proj, &mut g);
        Ok((value, vec![g.v, g.b]))
    });
    grad_check(&mut op, &[p.v.clone(), p.b.clone()], EPSILON, TOLERANCE)
}

fn check_conv_pool(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let n = rng.gen_range(1..=4);
    let l = rng.gen_range(1..=6);
    let mut p = TextCnnParams::init(l, &[1, 2, 3], 2, 2, rng)?;
    jitter_conv_biases(&mut p, rng);
    let u = rand_tensor(rng, &[n, l], 1.0);
    let drop = mask(rng, p.pooled_width(), 0.6);
    let proj = rand_vec(rng, 2, 1.0);
    let mut inputs: Vec<Tensor> = p.tensors().into_iter().map(|(_, t)| t.clone()).collect();
    inputs.push(u);
    let mut op = ScalarFn::new(|xs: &[Tensor]| {
        let q = with_tensors(&p, xs, TextCnnParams::tensors_mut);
        let (logits, cache) = q.forward(xs.last().expect("input"), Some(&drop))?;
        let mut g = q.zeros_like();
        let du = q.backward(&cache, &proj, &mut g, true).expect("input gradient");
        let mut grads: Vec<Tensor> = g.tensors().into_iter().map(|(_, t)| t.clone()).collect();
        grads.push(du);
        Ok((crate::tensor::dot(&logits, &proj), grads))
    });
    grad_check(&mut op, &inputs, EPSILON, TOLERANCE)
}

fn lstm_slots(p: &mut LstmParams) -> Vec<&mut Tensor> {
    vec![
        &mut p.w_f, &mut p.b_f, &mut p.w_i, &mut p.b_i, &mut p.w_c, &mut p.b_c, &mut p.w_o, &mut p.b_o,
    ]
}

fn check_lstm_step(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let l = rng.gen_range(1..=6);
    let d = rng.gen_range(1..=3);
    let mut p = LstmParams::init(l, d, rng);
    for b in [&mut p.b_f, &mut p.b_i, &mut p.b_c, &mut p.b_o] {
        b.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-0.5..0.5));
    }
    let ph = rand_vec(rng, d, 1.0);
    let pc = rand_vec(rng, d, 1.0);
    let mut inputs: Vec<Tensor> = lstm_slots(&mut p.clone()).into_iter().map(|t| t.clone()).collect();
    inputs.push(rand_tensor(rng, &[l], 1.0));
    inputs.push(rand_tensor(rng, &[d], 1.0));
    inputs.push(rand_tensor(rng, &[d], 1.0));
    let mut op = ScalarFn::new(|xs: &[Tensor]| {
        let q = with_tensors(&p, xs, lstm_slots);
        let (x, h_prev, c_prev) = (&xs[8], &xs[9], &xs[10]);
        let (h, c, cache) = step_cached(x.data(), h_prev.data(), c_prev.data(), &q);
        let value = crate::tensor::dot(&h, &ph) + crate::tensor::dot(&c, &pc);
        let mut g = q.zeros_like();
        let (dh, dc, dx) = step_backward(&q, &cache, &ph, &pc, &mut g);
        let mut grads: Vec<Tensor> = lstm_slots(&mut g).into_iter().map(|t| t.clone()).collect();
        grads.push(Tensor::vector(dx)?);
        grads.push(Tensor::vector(dh)?);
        grads.push(Tensor::vector(dc)?);
        Ok((value, grads))
    });
    grad_check(&mut op, &inputs, EPSILON, TOLERANCE)
}

fn check_bilstm_attention(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let n = rng.gen_range(1..=4);
    let l = rng.gen_range(1..=6);
    let d = rng.gen_range(1..=3);
    let p = AttBlstmParams::init(l, d, 2, rng)?;
    let u = rand_tensor(rng, &[n, l], 1.0);
    let mut pad: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.25)).collect();
    pad[0] = false;
    let drop = mask(rng, 2 * d, 0.6);
    let proj = rand_vec(rng, 2, 1.0);
    let mut inputs: Vec<Tensor> = p.tensors().into_iter().map(|(_, t)| t.clone()).collect();
    inputs.push(u);
    let mut op = ScalarFn::new(|xs: &[Tensor]| {
        let q = with_tensors(&p, xs, AttBlstmParams::tensors_mut);
        let (logits, cache) = q.forward(xs.last().expect("input"), Some(&pad), Some(&drop))?;
        let mut g = q.zeros_like();
        let du = q.backward(&cache, &proj, &mut g, true).expect("input gradient");
        let mut grads: Vec<Tensor> = g.tensors().into_iter().map(|(_, t)| t.clone()).collect();
        grads.push(du);
        Ok((crate::tensor::dot(&logits, &proj), grads))
    });
    grad_check(&mut op, &inputs, EPSILON, TOLERANCE)
}

/// The training objective of a whole pre-attention model on a random
/// two-sentence batch, with respect to every learnable tensor.
fn check_model_loss(rng: &mut ChaCha8Rng, variant: Variant) -> Result<GradCheckReport> {
    let l = rng.gen_range(1..=6);
    let arch = Architecture {
        variant,
        embedding_dim: l,
        classes: 2,
        windows: vec![1, 2, 3],
        filters_per_window: 2,
        hidden_size: rng.gen_range(1..=3),
    };
    let mut model = Model::init(&arch, rng)?;
    if let Head::TextCnn(p) = &mut model.head {
        jitter_conv_biases(p, rng);
    }
    model.pre_attention = Some(PreAttentionParams::new(rand_vec(rng, l, 1.0), rng.gen_range(-1.0..1.0))?);
    let width = model.feature_width();
    let batch: Vec<Sample> = (0..2)
        .map(|_| {
            let n = rng.gen_range(1..=4);
            Sample {
                words: rand_tensor(rng, &[n, l], 1.0),
                label: rng.gen_range(0..2),
                dropout: Some(mask(rng, width, 0.6)),
            }
        })
        .collect();
    let l2 = rng.gen_range(0.0..1.0);
    let inputs: Vec<Tensor> = model.tensors().into_iter().map(|(_, t)| t.clone()).collect();
    let mut op = ScalarFn::new(|xs: &[Tensor]| {
        let q = with_tensors(&model, xs, Model::tensors_mut);
        let (loss, grads) = batch_loss(&q, &batch, l2)?;
        Ok((loss.total, grads.tensors().into_iter().map(|(_, t)| t.clone()).collect()))
    });
    grad_check(&mut op, &inputs, EPSILON, TOLERANCE)
}

pub fn run_check(name: &str, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    match name {
        "pre-attention" => check_pre_attention(rng),
        "conv-pool" => check_conv_pool(rng),
        "lstm-step" => check_lstm_step(rng),
        "bilstm-attention" => check_bilstm_attention(rng),
        "pre-attn-text-cnn-loss" => check_model_loss(rng, Variant::PreAttnTextCnn),
        "pre-attn-att-blstm-loss" => check_model_loss(rng, Variant::PreAttnAttBlstm),
        other => Err(crate::error::Error::invalid_argument(format!("unknown gradient check `{other}`"))),
    }
}

/// Run every check on `instances` random instances each.
pub fn run_suite(seed: u64, instances: usize) -> Result<Vec<CheckSummary>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(CHECKS.len());
    for name in CHECKS {
        let mut summary = CheckSummary {
            name,
            instances,
            passed: 0,
            max_error: 0.0,
            failure: None,
        };
        for i in 0..instances {
            let report = run_check(name, &mut rng)?;
            summary.max_error = summary.max_error.max(report.max_error());
            if report.passed() {
                summary.passed += 1;
            } else if summary.failure.is_none() {
                summary.failure = Some(match (&report.diagnostic, report.worst()) {
                    (Some(d), _) => format!("instance {i}: {d}"),
                    (None, Some(w)) => format!(
                        "instance {i}: input {} entry {}: analytic {} vs numeric {}",
                        w.input, w.index, w.analytic, w.numeric
                    ),
                    (None, None) => format!("instance {i}: no entries checked"),
                });
            }
        }
        out.push(summary);
    }
    Ok(out)
}
