//! Loss, regularization, Adam, the training loop and evaluation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingMatrix, Example, DatasetSplit, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{Architecture, Model, Variant};
use crate::tensor::{self, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// `-log softmax(logits)[label]`, evaluated as `logsumexp(logits) - logits[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::invalid_argument(format!(
            "label {label} outside {} classes",
            logits.len()
        )));
    }
    Ok((tensor::log_sum_exp(logits)? - logits[label]).max(0.0))
}

/// `(λ/2) Σ w²` over the dense-layer weight matrix. Biases are not penalized.
pub fn l2_penalty(dense_weights: &Tensor, coeff: f64) -> f64 {
    if coeff == 0.0 {
        return 0.0;
    }
    0.5 * coeff * dense_weights.sum_squares()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L2Mode {
    /// Add `(λ/2)‖W‖²` to the loss.
    Penalty,
    /// Rescale each class row of `W` to norm at most `λ` after every step.
    Maxnorm,
}

fn check_rate(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid_argument(format!("dropout rate {p} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted-dropout multipliers: 0 with probability `p`, else `1/(1-p)`.
pub fn dropout_mask(width: usize, p: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    check_rate(p)?;
    let keep = 1.0 / (1.0 - p);
    Ok((0..width)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect())
}

pub fn dropout(x: &[f64], p: f64, mode: Mode, rng: &mut impl Rng) -> Result<Vec<f64>> {
    check_rate(p)?;
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x.to_vec());
    }
    let mask = dropout_mask(x.len(), p, rng)?;
    Ok(x.iter().zip(mask).map(|(a, m)| a * m).collect())
}

/// First and second moment estimates, one pair per learnable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros_like).collect();
        AdamState {
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn for_model(model: &Model) -> Self {
        AdamState::new(model.tensors().into_iter().map(|(_, t)| t))
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn optimizer_step(params: Vec<&mut Tensor>, grads: &[&Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid_argument(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::invalid_argument(format!(
                "shape mismatch at parameter {i}: {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, (x, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * gk;
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * gk * gk;
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            *x -= lr * mhat / (vhat.sqrt() + ADAM_EPSILON);
        }
    }
    Ok(())
}

fn clamp_rows(w: &mut Tensor, max_norm: f64) {
    for r in 0..w.rows() {
        let row = w.row_mut(r);
        let norm = tensor::dot(row, row).sqrt();
        if norm > max_norm {
            let s = max_norm / norm;
            row.iter_mut().for_each(|x| *x *= s);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub l2_coeff: f64,
    pub l2_mode: L2Mode,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub max_len: usize,
    pub embedding_dim: usize,
    pub min_count: usize,
    pub windows: Vec<usize>,
    pub filters_per_window: usize,
    pub hidden_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_variant(Variant::PreAttnTextCnn)
    }
}

impl TrainConfig {
    /// Per-head defaults: the CNN uses dropout 0.4, λ = 1, lr = 0.001; the
    /// BLSTM dropout 0.5, λ = 0.1, lr = 0.01 with 50 hidden units.
    pub fn for_variant(variant: Variant) -> Self {
        let (learning_rate, dropout_rate, l2_coeff) = if variant.is_cnn() {
            (0.001, 0.4, 1.0)
        } else {
            (0.01, 0.5, 0.1)
        };
        TrainConfig {
            variant,
            learning_rate,
            dropout_rate,
            l2_coeff,
            l2_mode: L2Mode::Penalty,
            batch_size: 64,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            max_len: 60,
            embedding_dim: 300,
            min_count: 1,
            windows: vec![1, 2, 3, 4, 5],
            filters_per_window: 128,
            hidden_size: 50,
        }
    }

    /// Fill unspecified keys from the defaults of the variant named in the
    /// object (or the default variant), rejecting unknown keys.
    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let serde_json::Value::Object(map) = value else {
            return Err(Error::invalid_argument("config must be a JSON object"));
        };
        let variant = match map.get("variant") {
            Some(v) => serde_json::from_value::<Variant>(v.clone())?,
            None => Variant::PreAttnTextCnn,
        };
        let mut base = match serde_json::to_value(TrainConfig::for_variant(variant))? {
            serde_json::Value::Object(m) => m,
            _ => unreachable!("config serializes to an object"),
        };
        for (k, v) in map {
            if !base.contains_key(&k) {
                return Err(Error::invalid_argument(format!("unknown config key `{k}`")));
            }
            base.insert(k, v);
        }
        let config: TrainConfig = serde_json::from_value(serde_json::Value::Object(base))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid_argument(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        check_rate(self.dropout_rate)?;
        if !(self.l2_coeff >= 0.0 && self.l2_coeff.is_finite()) {
            return fail(format!("l2_coeff must be non-negative, got {}", self.l2_coeff));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("max_len", self.max_len),
            ("embedding_dim", self.embedding_dim),
            ("min_count", self.min_count),
            ("filters_per_window", self.filters_per_window),
            ("hidden_size", self.hidden_size),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.windows.is_empty() || self.windows.contains(&0) {
            return fail("windows must be a non-empty list of positive sizes".to_string());
        }
        Ok(())
    }

    pub fn architecture(&self, classes: usize) -> Architecture {
        Architecture {
            variant: self.variant,
            embedding_dim: self.embedding_dim,
            classes,
            windows: self.windows.clone(),
            filters_per_window: self.filters_per_window,
            hidden_size: self.hidden_size,
        }
    }

    fn penalty_coeff(&self) -> f64 {
        match self.l2_mode {
            L2Mode::Penalty => self.l2_coeff,
            L2Mode::Maxnorm => 0.0,
        }
    }
}

/// One training input: the looked-up word vectors, the label, and the
/// dropout multipliers for the classifier features.
#[derive(Clone, Debug)]
pub struct Sample {
    pub words: Tensor,
    pub label: usize,
    pub dropout: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchLoss {
    /// Mean cross-entropy over the batch.
    pub cross_entropy: f64,
    pub penalty: f64,
    pub total: f64,
}

/// Batch objective (mean cross-entropy plus the L2 penalty) and its gradient.
pub fn batch_loss(model: &Model, batch: &[Sample], l2_coeff: f64) -> Result<(BatchLoss, Model)> {
    if batch.is_empty() {
        return Err(Error::invalid_argument("empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = model.zeros_like();
    let mut ce = 0.0;
    for s in batch {
        let (logits, cache) = model.forward(&s.words, s.dropout.as_deref())?;
        ce += cross_entropy(&logits, s.label)?;
        let mut d = tensor::softmax(&logits)?;
        d[s.label] -= 1.0;
        d.iter_mut().for_each(|x| *x *= scale);
        model.backward(&s.words, &cache, &d, &mut grads)?;
    }
    let penalty = l2_penalty(&model.dense().w, l2_coeff);
    if l2_coeff != 0.0 {
        tensor::axpy(l2_coeff, model.dense().w.data(), grads.dense_mut().w.data_mut());
    }
    let cross_entropy = ce * scale;
    Ok((
        BatchLoss {
            cross_entropy,
            penalty,
            total: cross_entropy + penalty,
        },
        grads,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

/// Everything needed to resume, evaluate or extract a lexicon.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocabulary: Vocabulary,
    pub embeddings: EmbeddingMatrix,
    pub model: Model,
    pub optimizer: AdamState,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn best_dev_accuracy(&self) -> f64 {
        self.history
            .get(self.best_epoch.wrapping_sub(1))
            .map_or(0.0, |r| r.dev_accuracy)
    }
}

fn check_inputs(examples: &[Example], embeddings: &EmbeddingMatrix, classes: usize) -> Result<()> {
    for e in examples {
        if e.label >= classes {
            return Err(Error::invalid_argument(format!("label {} outside {classes} classes", e.label)));
        }
        if let Some(&id) = e.token_ids.iter().find(|&&id| id >= embeddings.vocab_size()) {
            return Err(Error::invalid_argument(format!(
                "token id {id} outside embedding matrix of {} rows",
                embeddings.vocab_size()
            )));
        }
    }
    Ok(())
}

/// Mini-batch training with per-epoch dev evaluation and early stopping.
///
/// The returned checkpoint holds the parameters (and optimizer state) of the
/// epoch with the highest dev accuracy; the earliest such epoch wins ties.
/// When the dev split is empty the training split is used for selection.
pub fn train(
    config: &TrainConfig,
    split: &DatasetSplit,
    vocabulary: &Vocabulary,
    embeddings: &EmbeddingMatrix,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::invalid_argument("empty training split"));
    }
    if embeddings.dim() != config.embedding_dim {
        return Err(Error::invalid_argument(format!(
            "embeddings have dimension {}, config says {}",
            embeddings.dim(),
            config.embedding_dim
        )));
    }
    if embeddings.vocab_size() != vocabulary.len() {
        return Err(Error::invalid_argument(format!(
            "embedding matrix has {} rows for a vocabulary of {}",
            embeddings.vocab_size(),
            vocabulary.len()
        )));
    }
    let classes = split.num_classes;
    check_inputs(&split.train, embeddings, classes)?;
    check_inputs(&split.dev, embeddings, classes)?;
    let monitor = if split.dev.is_empty() {
        log::warn!("empty dev split, selecting on training accuracy");
        &split.train
    } else {
        &split.dev
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::init(&config.architecture(classes), &mut rng)?;
    let mut adam = AdamState::for_model(&model);
    let width = model.feature_width();
    let penalty = config.penalty_coeff();

    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model, AdamState)> = None;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let e = &split.train[i];
                let mask = if config.dropout_rate > 0.0 {
                    Some(dropout_mask(width, config.dropout_rate, &mut rng)?)
                } else {
                    None
                };
                batch.push(Sample {
                    words: embeddings.lookup(&e.token_ids)?,
                    label: e.label,
                    dropout: mask,
                });
            }
            let (loss, grads) = batch_loss(&model, &batch, penalty)?;
            let grad_tensors: Vec<&Tensor> = grads.tensors().into_iter().map(|(_, t)| t).collect();
            if !loss.total.is_finite() || grad_tensors.iter().any(|t| !t.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite loss or gradient in epoch {epoch}, batch {}",
                    batches + 1
                )));
            }
            optimizer_step(model.tensors_mut(), &grad_tensors, &mut adam, config.learning_rate)?;
            if config.l2_mode == L2Mode::Maxnorm && config.l2_coeff > 0.0 {
                clamp_rows(&mut model.dense_mut().w, config.l2_coeff);
            }
            loss_sum += loss.total;
            batches += 1;
        }
        let dev_accuracy = evaluate_model(&model, embeddings, monitor)?.accuracy;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            dev_accuracy,
        };
        observer(&record);
        history.push(record);
        if best.as_ref().is_none_or(|b| dev_accuracy > b.0) {
            best = Some((dev_accuracy, epoch, model.clone(), adam.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (_, best_epoch, model, optimizer) = best.expect("at least one epoch ran");
    Ok(Checkpoint {
        config: config.clone(),
        vocabulary: vocabulary.clone(),
        embeddings: embeddings.clone(),
        model,
        optimizer,
        best_epoch,
        history,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub label: usize,
    /// Examples whose gold label is this class.
    pub support: usize,
    /// Examples predicted as this class.
    pub predicted: usize,
    pub correct: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub per_class: Vec<ClassCounts>,
    /// Mean cross-entropy.
    pub loss: f64,
}

/// Index of the largest logit (the first one on ties).
pub fn predict(model: &Model, words: &Tensor) -> Result<usize> {
    let logits = model.logits(words)?;
    tensor::argmax(&logits).ok_or_else(|| Error::invalid_state("model produced no logits"))
}

pub fn evaluate_model(model: &Model, embeddings: &EmbeddingMatrix, examples: &[Example]) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::invalid_argument("cannot evaluate on zero examples"));
    }
    let classes = model.classes();
    check_inputs(examples, embeddings, classes)?;
    let mut per_class: Vec<ClassCounts> = (0..classes)
        .map(|label| ClassCounts {
            label,
            support: 0,
            predicted: 0,
            correct: 0,
        })
        .collect();
    let mut loss = 0.0;
    for e in examples {
        let logits = model.logits(&embeddings.lookup(&e.token_ids)?)?;
        loss += cross_entropy(&logits, e.label)?;
        let guess = tensor::argmax(&logits).expect("non-empty logits");
        per_class[e.label].support += 1;
        per_class[guess].predicted += 1;
        if guess == e.label {
            per_class[guess].correct += 1;
        }
    }
    let correct: usize = per_class.iter().map(|c| c.correct).sum();
    Ok(EvalReport {
        accuracy: correct as f64 / examples.len() as f64,
        correct,
        total: examples.len(),
        per_class,
        loss: loss / examples.len() as f64,
    })
}

/// Evaluate a checkpoint on examples encoded with `vocabulary`, which must be
/// the vocabulary the checkpoint was trained with.
pub fn evaluate(checkpoint: &Checkpoint, vocabulary: &Vocabulary, examples: &[Example]) -> Result<EvalReport> {
    let (have, want) = (vocabulary.fingerprint(), checkpoint.vocabulary.fingerprint());
    if have != want {
        return Err(Error::invalid_state(format!(
            "vocabulary fingerprint {have} does not match the checkpoint's {want}"
        )));
    }
    evaluate_model(&checkpoint.model, &checkpoint.embeddings, examples)
}
