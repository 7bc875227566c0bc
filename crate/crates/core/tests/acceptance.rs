//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the criteria execute in order, one at a time, and their
//! timings are not inflated by each other.

use std::collections::HashSet;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prelex::checkpoint::{load, save, to_bytes};
use prelex::corpus::{load_dataset, DatasetKind, EmbeddingMatrix};
use prelex::gradsuite::run_suite;
use prelex::lexicon::{precision, random_baseline, relative_similarity, similarity, DEFAULT_GRID};
use prelex::model::Variant;
use prelex::synthetic::{planted_corpus, PlantedCorpus, PlantedSpec};
use prelex::training::{evaluate, evaluate_model, train, Checkpoint, L2Mode, TrainConfig};
use prelex::{vocab_attention_table, HandLexicon, RankedLexicon};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Planted-corpus models shared by criteria 4 to 7.
struct Planted {
    corpus: PlantedCorpus,
    models: Vec<(Variant, Checkpoint, Duration)>,
}

impl Planted {
    fn checkpoint(&self, v: Variant) -> &Checkpoint {
        &self.models.iter().find(|(w, _, _)| *w == v).expect("trained variant").1
    }

    fn ranking(&self, v: Variant) -> RankedLexicon {
        let ck = self.checkpoint(v);
        let table = vocab_attention_table(&ck.embeddings, ck.model.pre_attention.as_ref().expect("pre-attention")).unwrap();
        RankedLexicon::from_table(&table, &self.corpus.vocab, v.as_str()).unwrap()
    }
}

const PLANTED_SEED: u64 = 0;

fn planted_config(variant: Variant) -> TrainConfig {
    TrainConfig {
        embedding_dim: 16,
        max_epochs: 200,
        patience: 20,
        seed: PLANTED_SEED,
        ..TrainConfig::for_variant(variant)
    }
}

fn train_planted() -> Planted {
    let corpus = planted_corpus(&PlantedSpec::default(), PLANTED_SEED).unwrap();
    let models = Variant::ALL
        .into_iter()
        .map(|v| {
            let start = Instant::now();
            let ck = train(&planted_config(v), &corpus.split, &corpus.vocab, &corpus.embeddings, &mut |_| {}).unwrap();
            (v, ck, start.elapsed())
        })
        .collect();
    Planted { corpus, models }
}

fn gradient_gate() -> Outcome {
    let start = Instant::now();
    let summaries = run_suite(0, 10).unwrap();
    let elapsed = start.elapsed();
    let failed: Vec<String> = summaries
        .iter()
        .filter(|s| !s.ok())
        .map(|s| format!("{} {}", s.name, s.failure.as_deref().unwrap_or("")))
        .collect();
    let worst = summaries.iter().map(|s| s.max_error).fold(0.0, f64::max);
    let enough = summaries.iter().all(|s| s.instances >= 10);
    outcome(
        failed.is_empty() && enough && elapsed < Duration::from_secs(120),
        format!(
            "{} checks x 10 instances, max relative error {worst:.2e}, {elapsed:.1?}{}",
            summaries.len(),
            if failed.is_empty() { String::new() } else { format!(", failed: {failed:?}") }
        ),
    )
}

/// Slice size for fraction `tenths / 10` in integer arithmetic.
fn oracle_slice(k: usize, tenths: usize) -> usize {
    (k * tenths / 10).clamp(1, k)
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for pair in 0..100 {
        let k = rng.gen_range(2..=1000);
        let tokens: Vec<String> = (0..k).map(|i| format!("tok{i}")).collect();
        let mut order_a = tokens.clone();
        let mut order_b = tokens.clone();
        order_a.shuffle(&mut rng);
        order_b.shuffle(&mut rng);
        let as_lexicon = |order: &[String], name: &str| {
            let pairs = order.iter().enumerate().map(|(i, t)| (t.clone(), (k - i) as f64)).collect();
            RankedLexicon::from_ranked(pairs, name).unwrap()
        };
        let (a, b) = (as_lexicon(&order_a, "a"), as_lexicon(&order_b, "b"));
        let hand_size = rng.gen_range(1..=k);
        let hand_tokens: Vec<String> = tokens.choose_multiple(&mut rng, hand_size).cloned().collect();
        let hand_set: HashSet<&String> = hand_tokens.iter().collect();
        let hand = HandLexicon::from_tokens(hand_tokens.iter().cloned()).unwrap();

        for (g, &p) in DEFAULT_GRID.iter().enumerate() {
            let tenths = 5 + g;
            let m = oracle_slice(k, 10 - tenths);
            let top_a: HashSet<&String> = order_a[..m].iter().collect();
            let top_b: HashSet<&String> = order_b[..m].iter().collect();
            let y_oracle = top_a.intersection(&top_b).count() as f64 / m as f64;
            let big_y_oracle = y_oracle / (1.0 - p);
            let n = oracle_slice(k, tenths);
            let l_oracle = order_a[..n].iter().filter(|t| hand_set.contains(t)).count() as f64 / n as f64;

            let y = similarity(&a, &b, p).unwrap();
            let big_y = relative_similarity(y, p).unwrap();
            let l = precision(&a, &hand, p).unwrap();
            compared += 3;
            for (name, got, want) in [("y", y, y_oracle), ("Y", big_y, big_y_oracle), ("L", l, l_oracle)] {
                if got.to_bits() != want.to_bits() {
                    mismatches.push(format!("pair {pair} k={k} p={p} {name}: {got} vs {want}"));
                }
            }
        }
    }
    outcome(
        mismatches.is_empty(),
        format!(
            "{compared} values on 100 ranking pairs, {} mismatches{}",
            mismatches.len(),
            mismatches.first().map(|m| format!(" (first: {m})")).unwrap_or_default()
        ),
    )
}

fn random_baseline_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut pass = true;
    let mut parts = Vec::new();
    for p in DEFAULT_GRID {
        let stats = random_baseline(10_000, p, 1000, &mut rng).unwrap();
        pass &= (stats.mean - (1.0 - p)).abs() <= 0.02;
        parts.push(format!("p={p}: {:.4}", stats.mean));
    }
    outcome(pass, format!("mean y over 1000 pairs, k=10000: {}", parts.join(", ")))
}

fn context_freeness(planted: &Planted) -> Outcome {
    let mut pass = true;
    let mut occurrences = 0;
    let mut detail = Vec::new();
    for v in [Variant::PreAttnTextCnn, Variant::PreAttnAttBlstm] {
        let ck = planted.checkpoint(v);
        let params = ck.model.pre_attention.as_ref().unwrap();
        let table = vocab_attention_table(&ck.embeddings, params).unwrap();
        let mut bad = 0;
        for ex in &planted.corpus.split.test {
            let s = ck.embeddings.lookup(&ex.token_ids).unwrap();
            let out = params.apply(&s).unwrap();
            for (&id, w) in ex.token_ids.iter().zip(&out.weights) {
                occurrences += 1;
                if w.to_bits() != table.get(id).unwrap().to_bits() {
                    bad += 1;
                }
            }
        }
        pass &= bad == 0;
        detail.push(format!("{v}: {bad} differing"));
    }
    outcome(pass, format!("{occurrences} test-set token occurrences; {}", detail.join(", ")))
}

fn overfit(planted: &Planted) -> Outcome {
    let mut pass = true;
    let mut total = Duration::ZERO;
    let mut parts = Vec::new();
    for (v, ck, elapsed) in &planted.models {
        let acc = evaluate_model(&ck.model, &ck.embeddings, &planted.corpus.split.train).unwrap().accuracy;
        pass &= acc >= 0.95 && ck.history.len() <= 200;
        total += *elapsed;
        parts.push(format!("{v} {acc:.3} ({} epochs)", ck.history.len()));
    }
    pass &= total < Duration::from_secs(300);
    outcome(pass, format!("train accuracy {}; {total:.1?}", parts.join(", ")))
}

fn lexicon_recovery(planted: &Planted) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for v in [Variant::PreAttnTextCnn, Variant::PreAttnAttBlstm] {
        let lex = planted.ranking(v);
        let top: HashSet<&str> = lex.top_fraction(0.1).unwrap();
        let inside = planted.corpus.signal_tokens().filter(|t| top.contains(t)).count();
        let mut ranks: Vec<usize> = planted.corpus.signal_tokens().map(|t| lex.rank_of(t).unwrap() + 1).collect();
        ranks.sort_unstable();
        pass &= inside == 10;
        parts.push(format!("{v}: {inside}/10 in top {} of {}, signal ranks {ranks:?}", top.len(), lex.len()));
    }
    outcome(pass, parts.join("; "))
}

fn stability(planted: &Planted) -> Outcome {
    let a = planted.ranking(Variant::PreAttnTextCnn);
    let b = planted.ranking(Variant::PreAttnAttBlstm);
    let y = similarity(&a, &b, 0.9).unwrap();
    let big_y = relative_similarity(y, 0.9).unwrap();
    outcome(big_y >= 2.0, format!("y(0.9)={y:.4}, Y(0.9)={big_y:.3}"))
}

/// Where the two MR class files live.
fn mr_dir() -> PathBuf {
    match std::env::var_os("PRELEX_MR_DIR") {
        Some(d) => PathBuf::from(d),
        None => PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mr"),
    }
}

/// The desk-scale MR setup: random 50-dimensional embeddings, max-norm
/// constrained dense rows.
fn mr_config(seed: u64) -> TrainConfig {
    TrainConfig {
        embedding_dim: 50,
        l2_mode: L2Mode::Maxnorm,
        l2_coeff: 3.0,
        dropout_rate: 0.6,
        learning_rate: 0.002,
        max_epochs: 40,
        patience: 10,
        seed,
        ..TrainConfig::for_variant(Variant::PreAttnTextCnn)
    }
}

fn mr_benchmark() -> Outcome {
    let dir = mr_dir();
    let start = Instant::now();
    let mut accuracies = Vec::new();
    for seed in [1, 2, 3] {
        let config = mr_config(seed);
        let raw = match load_dataset(DatasetKind::Mr, &dir, None, seed) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("MR data unavailable at {}: {e}", dir.display())),
        };
        let (vocab, split) = raw.encode(config.min_count, config.max_len).unwrap();
        let mut emb_rng = ChaCha8Rng::seed_from_u64(seed);
        emb_rng.set_stream(1);
        let embeddings = EmbeddingMatrix::random(vocab.len(), config.embedding_dim, &mut emb_rng).unwrap();
        let ck = train(&config, &split, &vocab, &embeddings, &mut |_| {}).unwrap();
        accuracies.push(evaluate(&ck, &vocab, &split.test).unwrap().accuracy);
    }
    let elapsed = start.elapsed();
    let mut sorted = accuracies.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[1];
    outcome(
        median >= 0.68 && elapsed < Duration::from_secs(900),
        format!("test accuracy by seed {accuracies:.4?}, median {median:.4}, {elapsed:.1?}"),
    )
}

fn determinism() -> Outcome {
    let corpus = planted_corpus(&PlantedSpec::default(), 3).unwrap();
    let mut detail = Vec::new();
    let mut pass = true;
    for v in Variant::ALL {
        let config = TrainConfig {
            embedding_dim: 16,
            max_epochs: 5,
            seed: 9,
            ..TrainConfig::for_variant(v)
        };
        let run = || train(&config, &corpus.split, &corpus.vocab, &corpus.embeddings, &mut |_| {}).unwrap();
        let (first, second) = (to_bytes(&run()).unwrap(), to_bytes(&run()).unwrap());
        let ck = run();
        let dir = tempfile::tempdir().unwrap();
        save(&ck, dir.path()).unwrap();
        let back = load(dir.path()).unwrap();
        let round_trip = to_bytes(&back).unwrap() == first && back == ck;
        pass &= first == second && round_trip;
        detail.push(format!(
            "{v}: reruns {}, round trip {}",
            if first == second { "identical" } else { "DIFFER" },
            if round_trip { "exact" } else { "INEXACT" }
        ));
    }
    outcome(pass, detail.join("; "))
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("criterion {n} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "gradient gate", gradient_gate());
    report(2, "metric oracle equivalence", metric_oracle());
    report(3, "random baseline", random_baseline_check());
    let planted = train_planted();
    report(4, "context-freeness", context_freeness(&planted));
    report(5, "overfit smoke test", overfit(&planted));
    report(6, "lexicon recovery", lexicon_recovery(&planted));
    report(7, "desk-scale stability", stability(&planted));
    report(8, "desk-scale MR benchmark", mr_benchmark());
    report(9, "determinism", determinism());

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failed {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
