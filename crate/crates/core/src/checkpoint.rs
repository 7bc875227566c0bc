//! On-disk checkpoints: `meta.json` plus `weights.bin`.
//!
//! `weights.bin` is every tensor of the manifest concatenated as
//! little-endian `f64`, in manifest order: the model parameters, the frozen
//! embedding matrix, then Adam's first and second moments. Nothing
//! time-dependent is written, so equal checkpoints give equal bytes.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingMatrix, Vocabulary};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;
use crate::training::{AdamState, Checkpoint, EpochRecord, TrainConfig};

pub const META_FILE: &str = "meta.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
const FORMAT_VERSION: u32 = 1;
const EMBEDDINGS: &str = "embeddings";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub format_version: u32,
    pub config: TrainConfig,
    pub classes: usize,
    pub vocab_fingerprint: String,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub optimizer_step: u64,
    pub embedding_coverage: f64,
    pub tensors: Vec<TensorEntry>,
    pub vocabulary: Vec<String>,
}

fn manifest(ck: &Checkpoint) -> Vec<(String, &Tensor)> {
    let mut out = ck.model.tensors();
    out.push((EMBEDDINGS.to_string(), ck.embeddings.tensor()));
    let names: Vec<String> = ck.model.tensors().into_iter().map(|(n, _)| n).collect();
    for (n, t) in names.iter().zip(&ck.optimizer.m) {
        out.push((format!("adam.m.{n}"), t));
    }
    for (n, t) in names.iter().zip(&ck.optimizer.v) {
        out.push((format!("adam.v.{n}"), t));
    }
    out
}

pub fn meta(ck: &Checkpoint) -> Meta {
    Meta {
        format_version: FORMAT_VERSION,
        config: ck.config.clone(),
        classes: ck.model.classes(),
        vocab_fingerprint: ck.vocabulary.fingerprint(),
        best_epoch: ck.best_epoch,
        history: ck.history.clone(),
        optimizer_step: ck.optimizer.step,
        embedding_coverage: ck.embeddings.coverage(),
        tensors: manifest(ck)
            .into_iter()
            .map(|(name, t)| TensorEntry {
                name,
                shape: t.shape().to_vec(),
            })
            .collect(),
        vocabulary: ck.vocabulary.tokens().to_vec(),
    }
}

/// Serialized `(meta.json, weights.bin)` contents.
pub fn to_bytes(ck: &Checkpoint) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut json = serde_json::to_vec_pretty(&meta(ck))?;
    json.push(b'\n');
    let tensors = manifest(ck);
    let total: usize = tensors.iter().map(|(_, t)| t.len()).sum();
    let mut weights = Vec::with_capacity(total * 8);
    for (_, t) in tensors {
        for x in t.data() {
            weights.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok((json, weights))
}

/// Write `meta.json` and `weights.bin` into `dir`, creating it if needed.
pub fn save(ck: &Checkpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (json, weights) = to_bytes(ck)?;
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
    let weights_path = dir.join(WEIGHTS_FILE);
    fs::write(&weights_path, weights).map_err(|e| Error::io(&weights_path, e))?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let meta_path = dir.join(META_FILE);
    let json = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let weights_path = dir.join(WEIGHTS_FILE);
    let weights = fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    from_bytes(&json, &weights, &weights_path.display().to_string())
}

pub fn from_bytes(json: &[u8], weights: &[u8], origin: &str) -> Result<Checkpoint> {
    let meta: Meta = serde_json::from_slice(json)?;
    let corrupt = |message: String| Error::Parse {
        path: origin.to_string(),
        line: 0,
        message,
    };
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::invalid_state(format!(
            "unsupported checkpoint format {}",
            meta.format_version
        )));
    }
    meta.config.validate()?;
    let vocabulary = Vocabulary::from_tokens(meta.vocabulary.clone())?;
    if vocabulary.fingerprint() != meta.vocab_fingerprint {
        return Err(Error::invalid_state("stored vocabulary does not match its fingerprint"));
    }

    let expected_bytes: usize = meta.tensors.iter().map(|e| e.shape.iter().product::<usize>() * 8).sum();
    if weights.len() != expected_bytes {
        return Err(corrupt(format!(
            "manifest needs {expected_bytes} bytes, file has {}",
            weights.len()
        )));
    }
    let mut offset = 0;
    let mut read = |entry: &TensorEntry| -> Result<Tensor> {
        let n: usize = entry.shape.iter().product();
        let data = weights[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        offset += n * 8;
        Tensor::new(entry.shape.clone(), data)
    };

    let mut model = Model::init(
        &meta.config.architecture(meta.classes),
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
    let mut expected: Vec<TensorEntry> = model
        .tensors()
        .into_iter()
        .map(|(name, t)| TensorEntry {
            name,
            shape: t.shape().to_vec(),
        })
        .collect();
    expected.push(TensorEntry {
        name: EMBEDDINGS.to_string(),
        shape: vec![vocabulary.len(), meta.config.embedding_dim],
    });
    for prefix in ["adam.m", "adam.v"] {
        for (n, e) in names.iter().zip(expected.clone()) {
            expected.push(TensorEntry {
                name: format!("{prefix}.{n}"),
                shape: e.shape,
            });
        }
    }
    if expected != meta.tensors {
        return Err(Error::invalid_state("tensor manifest does not match the configured architecture"));
    }

    let mut entries = meta.tensors.iter();
    for slot in model.tensors_mut() {
        *slot = read(entries.next().expect("manifest length checked"))?;
    }
    let embeddings = EmbeddingMatrix::from_tensor(read(entries.next().expect("manifest length checked"))?)?
        .with_coverage(meta.embedding_coverage);
    let mut m = Vec::with_capacity(names.len());
    let mut v = Vec::with_capacity(names.len());
    for _ in &names {
        m.push(read(entries.next().expect("manifest length checked"))?);
    }
    for _ in &names {
        v.push(read(entries.next().expect("manifest length checked"))?);
    }
    Ok(Checkpoint {
        config: meta.config,
        vocabulary,
        embeddings,
        model,
        optimizer: AdamState {
            step: meta.optimizer_step,
            m,
            v,
        },
        best_epoch: meta.best_epoch,
        history: meta.history,
    })
}
