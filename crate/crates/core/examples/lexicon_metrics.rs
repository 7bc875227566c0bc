//! Overlap, relative overlap and precision curves on small rankings, plus
//! the random-ranking baseline the relative overlap is measured against.
//!
//!     cargo run --release --example lexicon_metrics

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use prelex::lexicon::{
    precision_curve, random_baseline, relative_curve, similarity_curve, CurvePoint, DEFAULT_GRID,
};
use prelex::{HandLexicon, RankedLexicon};

fn ranking(words: &[&str], source: &str) -> prelex::Result<RankedLexicon> {
    let n = words.len();
    let pairs = words.iter().enumerate().map(|(i, w)| (w.to_string(), (n - i) as f64 / n as f64)).collect();
    RankedLexicon::from_ranked(pairs, source)
}

fn show(name: &str, curve: &[CurvePoint]) {
    let cells: Vec<String> = curve.iter().map(|c| format!("{}:{:.3}", c.p, c.value)).collect();
    println!("{name:<4} {}", cells.join("  "));
}

fn main() -> prelex::Result<()> {
    let a = ranking(
        &["superb", "awful", "dull", "moving", "great", "plot", "film", "the", "a", "of"],
        "model-a",
    )?;
    let b = ranking(
        &["awful", "great", "superb", "film", "dull", "moving", "the", "plot", "of", "a"],
        "model-b",
    )?;
    let hand = HandLexicon::from_tokens(["superb", "awful", "dull", "moving", "great", "boring"])?;

    let y = similarity_curve(&a, &b, &DEFAULT_GRID)?;
    show("y", &y);
    show("Y", &relative_curve(&y)?);
    show("L", &precision_curve(&a, &hand, &[0.1, 0.3, 0.5])?);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for p in DEFAULT_GRID {
        let s = random_baseline(10_000, p, 200, &mut rng)?;
        println!("random rankings, p={p}: mean y {:.4} (sd {:.4}), 1-p = {:.1}", s.mean, s.std_dev, 1.0 - p);
    }
    Ok(())
}
