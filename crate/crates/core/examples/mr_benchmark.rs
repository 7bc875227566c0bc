//! Pre-attention Text-CNN on the movie-review polarity corpus with random
//! 50-dimensional embeddings.
//!
//!     cargo run --release --example mr_benchmark [data/mr] [seed]

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use prelex::corpus::{load_dataset, DatasetKind, EmbeddingMatrix};
use prelex::model::Variant;
use prelex::training::{evaluate, train, L2Mode, TrainConfig};

fn main() -> prelex::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/mr".into()));
    let seed = args.next().map_or(1, |s| s.parse().expect("seed"));
    let config = TrainConfig {
        embedding_dim: 50,
        l2_mode: L2Mode::Maxnorm,
        l2_coeff: 3.0,
        dropout_rate: 0.6,
        learning_rate: 0.002,
        max_epochs: 40,
        patience: 10,
        seed,
        ..TrainConfig::for_variant(Variant::PreAttnTextCnn)
    };
    let raw = load_dataset(DatasetKind::Mr, &dir, None, seed)?;
    let (vocab, split) = raw.encode(config.min_count, config.max_len)?;
    println!(
        "train {} / dev {} / test {}, vocabulary {}",
        split.train.len(),
        split.dev.len(),
        split.test.len(),
        vocab.len()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let embeddings = EmbeddingMatrix::random(vocab.len(), config.embedding_dim, &mut rng)?;
    let start = std::time::Instant::now();
    let ck = train(&config, &split, &vocab, &embeddings, &mut |r| {
        println!("epoch {:>2} loss {:.4} dev accuracy {:.4}", r.epoch, r.train_loss, r.dev_accuracy);
    })?;
    let report = evaluate(&ck, &vocab, &split.test)?;
    println!(
        "best epoch {}, test accuracy {:.4} in {:.1?}",
        ck.best_epoch,
        report.accuracy,
        start.elapsed()
    );
    Ok(())
}
