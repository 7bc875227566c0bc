//! Contrast the two kinds of attention in a trained pre-attention
//! Att-BLSTM: the context-free word weight and the per-sentence softmax.
//!
//!     cargo run --release --example sentence_attention

use prelex::model::{HeadCache, Variant};
use prelex::synthetic::{planted_corpus, PlantedSpec};
use prelex::training::{train, TrainConfig};

fn main() -> prelex::Result<()> {
    let corpus = planted_corpus(&PlantedSpec::default(), 6)?;
    let config = TrainConfig {
        embedding_dim: 16,
        max_epochs: 200,
        patience: 20,
        ..TrainConfig::for_variant(Variant::PreAttnAttBlstm)
    };
    let ck = train(&config, &corpus.split, &corpus.vocab, &corpus.embeddings, &mut |_| {})?;
    println!("kept epoch {} of {}", ck.best_epoch, ck.history.len());
    for (words, label) in corpus.sentences.iter().take(3) {
        let ids: Vec<usize> = words.iter().map(|w| corpus.vocab.index_of(w).expect("known word")).collect();
        let s = ck.embeddings.lookup(&ids)?;
        let (logits, cache) = ck.model.forward(&s, None)?;
        let pre = cache.pre_attention.expect("pre-attention variant");
        let HeadCache::AttBlstm(head) = cache.head else {
            unreachable!("Att-BLSTM head")
        };
        println!("label {label}, logits {logits:.3?}");
        for (i, w) in words.iter().enumerate() {
            println!("  {w:<9} word weight {:.3}  sentence attention {:.3}", pre.weights[i], head.alpha[i]);
        }
    }
    Ok(())
}
