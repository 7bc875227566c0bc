//! A generated two-class corpus with planted signal words.
//!
//! Every sentence mixes filler words shared by both classes with one to three
//! signal words that occur only in its own class. Any model that separates
//! the classes must rely on the signal words, so they are the expected top
//! of an attention ranking.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_vocab, encode, DatasetSplit, EmbeddingMatrix, Example, Vocabulary};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlantedSpec {
    pub sentences: usize,
    pub signal_per_class: usize,
    pub fillers: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub embedding_dim: usize,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            sentences: 200,
            signal_per_class: 5,
            fillers: 50,
            min_len: 6,
            max_len: 12,
            embedding_dim: 16,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlantedCorpus {
    pub vocab: Vocabulary,
    /// The generated sentences form the training split; the dev split is the
    /// same list, and the test split a fresh draw from the same process.
    pub split: DatasetSplit,
    pub embeddings: EmbeddingMatrix,
    /// Signal words by class.
    pub signal: [Vec<String>; 2],
    pub sentences: Vec<(Vec<String>, usize)>,
}

impl PlantedCorpus {
    pub fn signal_tokens(&self) -> impl Iterator<Item = &str> {
        self.signal.iter().flatten().map(String::as_str)
    }
}

fn draw(spec: &PlantedSpec, signal: &[Vec<String>; 2], fillers: &[String], n: usize, rng: &mut impl Rng) -> Vec<(Vec<String>, usize)> {
    (0..n)
        .map(|i| {
            let label = i % 2;
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let planted = rng.gen_range(1..=3.min(len));
            let mut words: Vec<String> = (0..planted)
                .map(|_| signal[label].choose(rng).expect("signal words").clone())
                .collect();
            words.extend((planted..len).map(|_| fillers.choose(rng).expect("filler words").clone()));
            words.shuffle(rng);
            (words, label)
        })
        .collect()
}

pub fn planted_corpus(spec: &PlantedSpec, seed: u64) -> Result<PlantedCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signal = [
        (0..spec.signal_per_class).map(|i| format!("neg{i}")).collect::<Vec<_>>(),
        (0..spec.signal_per_class).map(|i| format!("pos{i}")).collect::<Vec<_>>(),
    ];
    let fillers: Vec<String> = (0..spec.fillers).map(|i| format!("filler{i}")).collect();
    let mut sentences = draw(spec, &signal, &fillers, spec.sentences, &mut rng);
    sentences.shuffle(&mut rng);
    let test = draw(spec, &signal, &fillers, spec.sentences, &mut rng);

    // every word is listed once so the vocabulary is complete even if a
    // draw happens to miss one
    let mut corpus: Vec<Vec<&str>> = sentences
        .iter()
        .map(|(w, _)| w.iter().map(String::as_str).collect())
        .collect();
    corpus.push(signal.iter().flatten().chain(&fillers).map(String::as_str).collect());
    let vocab = build_vocab(&corpus, 1)?;
    let embeddings = EmbeddingMatrix::random(vocab.len(), spec.embedding_dim, &mut rng)?;

    let to_examples = |xs: &[(Vec<String>, usize)]| -> Vec<Example> {
        xs.iter()
            .map(|(w, label)| Example {
                token_ids: encode(w, &vocab, spec.max_len),
                label: *label,
            })
            .collect()
    };
    let train = to_examples(&sentences);
    let split = DatasetSplit {
        dev: train.clone(),
        test: to_examples(&test),
        train,
        num_classes: 2,
    };
    Ok(PlantedCorpus {
        vocab,
        split,
        embeddings,
        signal,
        sentences,
    })
}
