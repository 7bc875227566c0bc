//! Train all four variants on the planted-signal corpus, then compare the
//! attention rankings of the two pre-attention models.
//!
//!     cargo run --release --example planted_lexicon [seed]

use prelex::lexicon::{relative_similarity, similarity};
use prelex::model::Variant;
use prelex::synthetic::{planted_corpus, PlantedSpec};
use prelex::training::{evaluate_model, train, TrainConfig};
use prelex::{vocab_attention_table, RankedLexicon};

fn main() -> prelex::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let corpus = planted_corpus(&PlantedSpec::default(), seed)?;
    let mut rankings = Vec::new();
    for variant in Variant::ALL {
        let config = TrainConfig {
            embedding_dim: 16,
            max_epochs: 200,
            patience: 20,
            seed,
            ..TrainConfig::for_variant(variant)
        };
        let start = std::time::Instant::now();
        let ck = train(&config, &corpus.split, &corpus.vocab, &corpus.embeddings, &mut |_| {})?;
        let acc = evaluate_model(&ck.model, &ck.embeddings, &corpus.split.train)?.accuracy;
        println!(
            "{variant:<20} train accuracy {acc:.3} after {} epochs (best {}) in {:.1?}",
            ck.history.len(),
            ck.best_epoch,
            start.elapsed()
        );
        if let Some(p) = &ck.model.pre_attention {
            let table = vocab_attention_table(&ck.embeddings, p)?;
            let lex = RankedLexicon::from_table(&table, &corpus.vocab, variant.as_str())?;
            let ranks: Vec<usize> = corpus.signal_tokens().map(|t| lex.rank_of(t).unwrap() + 1).collect();
            println!("  signal token ranks (of {}): {ranks:?}", lex.len());
            println!("  top 10: {:?}", &lex.tokens()[..10]);
            rankings.push(lex);
        }
    }
    for p in [0.5, 0.6, 0.7, 0.8, 0.9] {
        let y = similarity(&rankings[0], &rankings[1], p)?;
        println!("p={p} y={y:.4} Y={:.4}", relative_similarity(y, p)?);
    }
    Ok(())
}
