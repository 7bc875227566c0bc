//! Tokenization, vocabulary, dataset loading and the frozen embedding matrix.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Range of the uniform initializer for words without a pretrained vector.
pub const OOV_INIT_RANGE: f64 = 0.25;

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Lowercase, split on whitespace, and peel leading and trailing
/// punctuation runs off each chunk as tokens of their own. Interior
/// punctuation (apostrophes, hyphens) stays attached.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chunk = chunk.to_lowercase();
        let start = chunk.find(|c: char| !is_punct(c));
        let Some(start) = start else {
            out.push(chunk);
            continue;
        };
        let end = chunk
            .char_indices()
            .rev()
            .find(|&(_, c)| !is_punct(c))
            .map(|(i, c)| i + c.len_utf8())
            .unwrap_or(chunk.len());
        if start > 0 {
            out.push(chunk[..start].to_string());
        }
        out.push(chunk[start..end].to_string());
        if end < chunk.len() {
            out.push(chunk[end..].to_string());
        }
    }
    out
}

/// Token ↔ index map. Index 0 is padding, index 1 the unknown word; the
/// remaining tokens are ordered by descending frequency, then lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build from an explicit token list that already carries the sentinels.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD || tokens[UNK_ID] != UNK {
            return Err(Error::invalid_argument(
                "vocabulary must start with the padding and unknown sentinels",
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid_argument(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn is_sentinel(id: usize) -> bool {
        id == PAD_ID || id == UNK_ID
    }

    /// SHA-256 over the ordered token list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::invalid_argument("min_count must be at least 1"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for sentence in corpus {
        for tok in sentence {
            *counts.entry(tok.as_ref()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count && t != PAD && t != UNK)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut tokens = vec![PAD.to_string(), UNK.to_string()];
    tokens.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
    Vocabulary::from_tokens(tokens)
}

/// Map tokens to ids, truncating to `max_len`. Unknown tokens become
/// [`UNK_ID`] and an empty sentence becomes a single unknown token.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    let max_len = max_len.max(1);
    let ids: Vec<usize> = tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.index_of(t.as_ref()).unwrap_or(UNK_ID))
        .collect();
    if ids.is_empty() {
        vec![UNK_ID]
    } else {
        ids
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub token_ids: Vec<usize>,
    pub label: usize,
}

/// A raw labelled text before vocabulary construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedExample {
    pub tokens: Vec<String>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawSplit {
    pub train: Vec<TokenizedExample>,
    pub dev: Vec<TokenizedExample>,
    pub test: Vec<TokenizedExample>,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
    pub num_classes: usize,
}

impl RawSplit {
    /// Build the vocabulary from the training portion and encode all three parts.
    pub fn encode(&self, min_count: usize, max_len: usize) -> Result<(Vocabulary, DatasetSplit)> {
        let corpus: Vec<&[String]> = self.train.iter().map(|e| e.tokens.as_slice()).collect();
        let corpus: Vec<Vec<&str>> = corpus
            .iter()
            .map(|s| s.iter().map(String::as_str).collect())
            .collect();
        let vocab = build_vocab(&corpus, min_count)?;
        let split = self.encode_with(&vocab, max_len);
        Ok((vocab, split))
    }

    pub fn encode_with(&self, vocab: &Vocabulary, max_len: usize) -> DatasetSplit {
        let enc = |xs: &[TokenizedExample]| -> Vec<Example> {
            xs.iter()
                .map(|e| Example {
                    token_ids: encode(&e.tokens, vocab, max_len),
                    label: e.label,
                })
                .collect()
        };
        DatasetSplit {
            train: enc(&self.train),
            dev: enc(&self.dev),
            test: enc(&self.test),
            num_classes: self.num_classes,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Imdb,
    Subj,
    Mr,
}

impl DatasetKind {
    pub fn default_max_len(self) -> usize {
        match self {
            DatasetKind::Imdb => 400,
            DatasetKind::Subj | DatasetKind::Mr => 60,
        }
    }

    /// Class files for the two-file layouts, in label order.
    pub fn default_class_files(self) -> Option<[&'static str; 2]> {
        match self {
            DatasetKind::Imdb => None,
            DatasetKind::Subj => Some(["plot.tok.gt9.5000", "quote.tok.gt9.5000"]),
            DatasetKind::Mr => Some(["rt-polarity.neg", "rt-polarity.pos"]),
        }
    }

    /// Published (train, test, dev) sizes.
    pub fn expected_sizes(self) -> (usize, usize, usize) {
        match self {
            DatasetKind::Imdb => (20000, 25000, 5000),
            DatasetKind::Subj => (7000, 2000, 1000),
            DatasetKind::Mr => (7464, 2132, 1066),
        }
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "imdb" => Ok(DatasetKind::Imdb),
            "subj" => Ok(DatasetKind::Subj),
            "mr" => Ok(DatasetKind::Mr),
            other => Err(Error::invalid_argument(format!("unknown dataset {other:?}"))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Imdb => "imdb",
            DatasetKind::Subj => "subj",
            DatasetKind::Mr => "mr",
        })
    }
}

fn read_lossy(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn read_class_file(path: &Path, label: usize) -> Result<Vec<TokenizedExample>> {
    Ok(read_lossy(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| TokenizedExample {
            tokens: tokenize(l),
            label,
        })
        .collect())
}

fn read_review_dir(dir: &Path, label: usize) -> Result<Vec<TokenizedExample>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    // directory order is platform dependent
    files.sort();
    files
        .iter()
        .map(|p| {
            Ok(TokenizedExample {
                tokens: tokenize(&read_lossy(p)?.replace("<br />", " ")),
                label,
            })
        })
        .collect()
}

fn floor_fraction(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction + 1e-9).floor() as usize
}

/// Shuffle and cut into (train, test, dev); fractional sizes are floored
/// and the remainder goes to training.
fn split_three(
    mut all: Vec<TokenizedExample>,
    test_frac: f64,
    dev_frac: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<TokenizedExample>, Vec<TokenizedExample>, Vec<TokenizedExample>) {
    all.shuffle(rng);
    let n = all.len();
    let n_test = floor_fraction(n, test_frac);
    let n_dev = floor_fraction(n, dev_frac);
    let dev = all.split_off(n - n_dev);
    let test = all.split_off(n - n_dev - n_test);
    (all, test, dev)
}

/// Load one of the three benchmark corpora.
///
/// IMDB expects `train/{pos,neg}/*.txt` and `test/{pos,neg}/*.txt`; 20% of the
/// training reviews are held out as the dev set. Subj and MR expect one
/// sentence per line, one file per class (`class_files` in label order, or the
/// conventional names), split 70/20/10 into train/test/dev.
pub fn load_dataset(
    kind: DatasetKind,
    root: &Path,
    class_files: Option<&[String]>,
    seed: u64,
) -> Result<RawSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, test, dev) = match kind {
        DatasetKind::Imdb => {
            let mut train = read_review_dir(&root.join("train/neg"), 0)?;
            train.extend(read_review_dir(&root.join("train/pos"), 1)?);
            let mut test = read_review_dir(&root.join("test/neg"), 0)?;
            test.extend(read_review_dir(&root.join("test/pos"), 1)?);
            train.shuffle(&mut rng);
            let n_dev = floor_fraction(train.len(), 0.2);
            let dev = train.split_off(train.len() - n_dev);
            (train, test, dev)
        }
        DatasetKind::Subj | DatasetKind::Mr => {
            let names: Vec<String> = match class_files {
                Some(files) => files.to_vec(),
                None => kind
                    .default_class_files()
                    .expect("two-file layout")
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            };
            if names.len() != 2 {
                return Err(Error::invalid_argument(format!(
                    "{kind} needs exactly two class files, got {}",
                    names.len()
                )));
            }
            let mut all = Vec::new();
            for (label, name) in names.iter().enumerate() {
                all.extend(read_class_file(&root.join(name), label)?);
            }
            split_three(all, 0.2, 0.1, &mut rng)
        }
    };
    let expected = kind.expected_sizes();
    if (train.len(), test.len(), dev.len()) != expected {
        log::warn!(
            "{kind}: split sizes train/test/dev = {}/{}/{} differ from the reference {}/{}/{}",
            train.len(),
            test.len(),
            dev.len(),
            expected.0,
            expected.1,
            expected.2
        );
    }
    Ok(RawSplit {
        train,
        dev,
        test,
        num_classes: 2,
    })
}

/// The frozen `|V| × l` lookup table. Row 0 (padding) is always zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    matrix: Tensor,
    coverage: f64,
}

impl EmbeddingMatrix {
    pub fn from_tensor(matrix: Tensor) -> Result<Self> {
        if matrix.shape().len() != 2 || matrix.rows() < 2 {
            return Err(Error::invalid_argument("embedding matrix must be |V| x l with |V| >= 2"));
        }
        if matrix.row(PAD_ID).iter().any(|&x| x != 0.0) {
            return Err(Error::invalid_argument("padding row must be zero"));
        }
        if !matrix.is_finite() {
            return Err(Error::invalid_argument("embedding matrix has non-finite entries"));
        }
        Ok(EmbeddingMatrix {
            matrix,
            coverage: 0.0,
        })
    }

    /// Every non-padding row drawn uniformly from ±[`OOV_INIT_RANGE`].
    pub fn random(vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if vocab_size < 2 || dim == 0 {
            return Err(Error::invalid_argument("embedding needs |V| >= 2 and dim >= 1"));
        }
        let mut m = Tensor::zeros(&[vocab_size, dim]);
        for r in 1..vocab_size {
            for x in m.row_mut(r) {
                *x = rng.gen_range(-OOV_INIT_RANGE..=OOV_INIT_RANGE);
            }
        }
        Ok(EmbeddingMatrix {
            matrix: m,
            coverage: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.matrix.row(id)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.matrix
    }

    /// Fraction of non-sentinel vocabulary rows copied from a pretrained file.
    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn with_coverage(mut self, coverage: f64) -> Self {
        self.coverage = coverage;
        self
    }

    /// Stack the rows for a token sequence into an `[n, l]` tensor.
    pub fn lookup(&self, ids: &[usize]) -> Result<Tensor> {
        let l = self.dim();
        let mut data = Vec::with_capacity(ids.len() * l);
        for &id in ids {
            if id >= self.vocab_size() {
                return Err(Error::invalid_argument(format!(
                    "token id {id} outside vocabulary of {}",
                    self.vocab_size()
                )));
            }
            data.extend_from_slice(self.row(id));
        }
        Tensor::matrix(ids.len(), l, data)
    }
}

/// Read a word2vec text file (`count dim` header, then `token x1 … x_dim`).
///
/// Vocabulary rows found in the file are copied verbatim (exact match wins
/// over a lowercased match); the rest are drawn from `rng` in vocabulary
/// order. Binary word2vec files must be converted to text first.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut impl Rng,
) -> Result<EmbeddingMatrix> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let origin = path.display().to_string();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: origin.clone(),
        line,
        message,
    };

    // 0 = missing, 1 = lowercased match, 2 = exact match
    let mut found = vec![0u8; vocab.len()];
    let mut m = Tensor::zeros(&[vocab.len(), dim]);
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(parse_err(1, "empty file".into())),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (count, file_dim) = match fields.as_slice() {
        [c, d] => match (c.parse::<usize>(), d.parse::<usize>()) {
            (Ok(c), Ok(d)) => (c, d),
            _ => return Err(parse_err(1, format!("malformed header {header:?}"))),
        },
        _ => return Err(parse_err(1, format!("malformed header {header:?}"))),
    };
    if file_dim != dim {
        return Err(Error::invalid_argument(format!(
            "embedding file has dimension {file_dim}, expected {dim}"
        )));
    }

    let mut rows = 0usize;
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows += 1;
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line");
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(parse_err(
                i + 1,
                format!("expected {dim} values after {token:?}, got {}", values.len()),
            ));
        }
        let (id, rank) = match vocab.index_of(token) {
            Some(id) => (id, 2u8),
            None => match vocab.index_of(&token.to_lowercase()) {
                Some(id) => (id, 1u8),
                None => continue,
            },
        };
        if id == PAD_ID || found[id] >= rank {
            continue;
        }
        let row = m.row_mut(id);
        for (slot, v) in row.iter_mut().zip(&values) {
            *slot = v
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_err(i + 1, format!("bad number {v:?}")))?;
        }
        found[id] = rank;
    }
    if rows != count {
        log::warn!("{origin}: header announces {count} vectors, file has {rows}");
    }

    let mut covered = 0usize;
    for id in 1..vocab.len() {
        if found[id] > 0 {
            if id != UNK_ID {
                covered += 1;
            }
            continue;
        }
        for x in m.row_mut(id) {
            *x = rng.gen_range(-OOV_INIT_RANGE..=OOV_INIT_RANGE);
        }
    }
    let lexical = vocab.len().saturating_sub(2);
    Ok(EmbeddingMatrix {
        matrix: m,
        coverage: if lexical == 0 {
            0.0
        } else {
            covered as f64 / lexical as f64
        },
    })
}
