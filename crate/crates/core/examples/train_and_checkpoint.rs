//! Train a pre-attention Text-CNN starting from a word2vec text file, save
//! the checkpoint, reload it and evaluate.
//!
//!     cargo run --release --example train_and_checkpoint

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use prelex::checkpoint;
use prelex::model::Variant;
use prelex::synthetic::{planted_corpus, PlantedSpec};
use prelex::training::{evaluate, train, TrainConfig};
use prelex::load_embeddings;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = planted_corpus(&PlantedSpec::default(), 4)?;
    let dir = std::env::temp_dir().join(format!("prelex-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;

    // write the corpus vectors for all but the filler words, as a
    // pretrained file would cover only part of a vocabulary
    let mut text = String::new();
    let known: Vec<usize> = (2..corpus.vocab.len())
        .filter(|&id| !corpus.vocab.tokens()[id].starts_with("filler"))
        .collect();
    writeln!(text, "{} 16", known.len()).unwrap();
    for &id in &known {
        let row: Vec<String> = corpus.embeddings.row(id).iter().map(|x| x.to_string()).collect();
        writeln!(text, "{} {}", corpus.vocab.tokens()[id], row.join(" ")).unwrap();
    }
    let vectors = dir.join("vectors.txt");
    std::fs::write(&vectors, text)?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let embeddings = load_embeddings(&vectors, &corpus.vocab, 16, &mut rng)?;
    println!("pretrained coverage {:.1}%", 100.0 * embeddings.coverage());

    let config = TrainConfig {
        embedding_dim: 16,
        max_epochs: 30,
        ..TrainConfig::for_variant(Variant::PreAttnTextCnn)
    };
    let ck = train(&config, &corpus.split, &corpus.vocab, &embeddings, &mut |r| {
        println!("epoch {:>2} loss {:.4} dev accuracy {:.3}", r.epoch, r.train_loss, r.dev_accuracy);
    })?;
    println!("kept epoch {}", ck.best_epoch);

    let ck_dir = dir.join("checkpoint");
    checkpoint::save(&ck, &ck_dir)?;
    let back = checkpoint::load(&ck_dir)?;
    assert_eq!(back, ck);
    let report = evaluate(&back, &back.vocabulary, &corpus.split.test)?;
    println!(
        "reloaded from {}: test accuracy {:.3} ({}/{})",
        ck_dir.display(),
        report.accuracy,
        report.correct,
        report.total
    );
    for (label, c) in report.per_class.iter().enumerate() {
        println!("  class {label}: {c:?}");
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
