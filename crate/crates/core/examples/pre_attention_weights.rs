//! The pre-attention layer on a hand-made three-word vocabulary: every word
//! gets one weight, wherever it appears.
//!
//!     cargo run --example pre_attention_weights

use prelex::corpus::{encode, Vocabulary};
use prelex::preattention::PreAttentionParams;
use prelex::{vocab_attention_table, EmbeddingMatrix, RankedLexicon, Tensor};

fn main() -> prelex::Result<()> {
    let vocab = Vocabulary::from_tokens(["<pad>", "<unk>", "superb", "film", "the"].map(String::from).to_vec())?;
    let embeddings = EmbeddingMatrix::from_tensor(Tensor::matrix(
        5,
        3,
        vec![
            0.0, 0.0, 0.0, //
            0.1, -0.2, 0.0, //
            0.9, 0.4, -0.3, //
            0.1, 0.2, 0.1, //
            -0.5, 0.1, 0.2,
        ],
    )?)?;

    // at initialization v = 0 and b = 0, so every weight is exactly 1/2
    let fresh = PreAttentionParams::zeros(3);
    let params = PreAttentionParams::new(vec![2.0, 1.0, -1.0], -0.5)?;

    for sentence in [["the", "superb", "film"], ["film", "the", "superb"]] {
        let ids = encode(&sentence, &vocab, 10);
        let s = embeddings.lookup(&ids)?;
        let init = fresh.apply(&s)?;
        let out = params.apply(&s)?;
        println!("{sentence:?}");
        for (i, word) in sentence.iter().enumerate() {
            println!(
                "  {word:<7} W at init {:.3}  W {:.6}  u {:?}",
                init.weights[i],
                out.weights[i],
                out.u.row(i).iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>()
            );
        }
    }

    let table = vocab_attention_table(&embeddings, &params)?;
    let lexicon = RankedLexicon::from_table(&table, &vocab, "example")?;
    println!("ranked vocabulary:");
    print!("{}", lexicon.to_tsv());
    Ok(())
}
