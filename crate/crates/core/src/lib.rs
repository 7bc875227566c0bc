//! Pre-attention text classification.
//!
//! A context-free sigmoid weight `σ(v·w + b)` rescales each frozen word
//! vector before a Text-CNN or attention BiLSTM classifier. Because the
//! weight depends on the word alone, a trained model ranks the whole
//! vocabulary, and [`lexicon`] turns those rankings into lexicons and
//! compares them.
//!
//! Everything is double precision, single threaded and driven by
//! caller-seeded [`rand_chacha::ChaCha8Rng`] generators.

pub mod checkpoint;
pub mod classifiers;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod lexicon;
pub mod model;
pub mod preattention;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use corpus::{
    build_vocab, encode, load_dataset, load_embeddings, tokenize, DatasetKind, DatasetSplit, EmbeddingMatrix,
    Example, Vocabulary,
};
pub use error::{Error, Result};
pub use lexicon::{HandLexicon, RankedLexicon};
pub use model::{Model, Variant};
pub use preattention::{vocab_attention_table, AttentionTable, PreAttentionParams};
pub use tensor::Tensor;
pub use training::{evaluate, train, Checkpoint, EvalReport, TrainConfig};
