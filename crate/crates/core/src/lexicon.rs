//! Attention-ranked lexicons and the statistics comparing them.
//!
//! A [`RankedLexicon`] is the vocabulary sorted by descending attention. Its
//! top slices are compared against a handcrafted word list (precision) or
//! against another model's ranking (overlap `y(p)` and the random-normalized
//! `Y(p) = y(p) / (1 - p)`).

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{tokenize, Vocabulary};
use crate::error::{Error, Result};
use crate::preattention::AttentionTable;

/// The default `p` grid for curve output.
pub const DEFAULT_GRID: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

/// Guards the floor against products such as `100 * (1 - 0.9)` landing a hair
/// below an integer.
const SLICE_EPSILON: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct RankedLexicon {
    tokens: Vec<String>,
    values: Vec<f64>,
    source: String,
}

fn check_fraction(q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid_argument(format!("fraction {q} outside (0, 1)")));
    }
    Ok(())
}

/// `max(1, floor(k q))`, capped at `k`.
pub fn slice_size(k: usize, q: f64) -> usize {
    ((k as f64 * q + SLICE_EPSILON).floor() as usize).clamp(1, k.max(1))
}

impl RankedLexicon {
    pub fn from_table(table: &AttentionTable, vocab: &Vocabulary, source: impl Into<String>) -> Result<Self> {
        if table.len() != vocab.len() {
            return Err(Error::invalid_argument(format!(
                "attention table has {} entries, vocabulary {}",
                table.len(),
                vocab.len()
            )));
        }
        let (tokens, values) = table
            .ranked_ids()
            .into_iter()
            .map(|(id, a)| (vocab.tokens()[id].clone(), a))
            .unzip();
        Ok(RankedLexicon {
            tokens,
            values,
            source: source.into(),
        })
    }

    /// Build from `(token, attention)` pairs already in ranked order.
    pub fn from_ranked(pairs: Vec<(String, f64)>, source: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for (i, (t, a)) in pairs.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::invalid_argument(format!("non-finite attention for {t:?}")));
            }
            if !seen.insert(t.as_str()) {
                return Err(Error::invalid_argument(format!("duplicate token {t:?}")));
            }
            if i > 0 && pairs[i - 1].1 < *a {
                return Err(Error::invalid_argument(format!(
                    "attention increases at rank {} ({t:?})",
                    i + 1
                )));
            }
        }
        let (tokens, values) = pairs.into_iter().unzip();
        Ok(RankedLexicon {
            tokens,
            values,
            source: source.into(),
        })
    }

    /// Parse `token<TAB>attention` lines.
    pub fn parse_tsv(text: &str, source: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message,
            };
            let (token, value) = line
                .split_once('\t')
                .ok_or_else(|| err("expected token<TAB>attention".into()))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| err(format!("bad attention value {value:?}")))?;
            pairs.push((token.to_string(), value));
        }
        Self::from_ranked(pairs, source).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Parse {
                path: source.to_string(),
                line: 0,
                message: m,
            },
            other => other,
        })
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text, &path.display().to_string())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (t, a) in self.tokens.iter().zip(&self.values) {
            writeln!(out, "{t}\t{a}").expect("write to string");
        }
        out
    }

    /// Number of ranked tokens, `k`.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// 0-based rank of `token`.
    pub fn rank_of(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    /// The first `max(1, floor(k q))` tokens.
    pub fn top_fraction(&self, q: f64) -> Result<HashSet<&str>> {
        Ok(self.top_slice(q)?.iter().map(String::as_str).collect())
    }

    pub fn top_slice(&self, q: f64) -> Result<&[String]> {
        check_fraction(q)?;
        if self.is_empty() {
            return Err(Error::invalid_argument("empty lexicon"));
        }
        Ok(&self.tokens[..slice_size(self.len(), q)])
    }
}

/// The reference word list `D`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HandLexicon {
    tokens: BTreeSet<String>,
}

impl HandLexicon {
    /// One entry per line; blank lines and lines starting with `#` are
    /// skipped, and each entry goes through the corpus tokenizer.
    pub fn parse(text: &str) -> Result<Self> {
        let tokens: BTreeSet<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .flat_map(tokenize)
            .collect();
        if tokens.is_empty() {
            return Err(Error::invalid_argument("hand lexicon has no entries"));
        }
        Ok(HandLexicon { tokens })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::invalid_argument(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_tokens<I: IntoIterator<Item = S>, S: Into<String>>(tokens: I) -> Result<Self> {
        let tokens: BTreeSet<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::invalid_argument("hand lexicon has no entries"));
        }
        Ok(HandLexicon { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.tokens.contains(token)
    }

    pub fn tokens(&self) -> &BTreeSet<String> {
        &self.tokens
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub p: f64,
    pub value: f64,
}

/// `L(p)`: the share of the top-`p` slice that belongs to `hand`.
pub fn precision(lexicon: &RankedLexicon, hand: &HandLexicon, p: f64) -> Result<f64> {
    let slice = lexicon.top_slice(p)?;
    let hits = slice.iter().filter(|t| hand.contains(t)).count();
    Ok(hits as f64 / slice.len() as f64)
}

pub fn precision_curve(lexicon: &RankedLexicon, hand: &HandLexicon, grid: &[f64]) -> Result<Vec<CurvePoint>> {
    grid.iter()
        .map(|&p| Ok(CurvePoint { p, value: precision(lexicon, hand, p)? }))
        .collect()
}

fn check_same_vocabulary(a: &RankedLexicon, b: &RankedLexicon) -> Result<()> {
    let mismatch = || Error::invalid_argument(format!(
        "lexicons `{}` ({} tokens) and `{}` ({} tokens) rank different vocabularies",
        a.source, a.len(), b.source, b.len()
    ));
    if a.len() != b.len() {
        return Err(mismatch());
    }
    let set: HashSet<&str> = a.tokens.iter().map(String::as_str).collect();
    if b.tokens.iter().any(|t| !set.contains(t.as_str())) {
        return Err(mismatch());
    }
    Ok(())
}

/// `y(p)`: overlap of the two top-`(1-p)` slices over the slice size.
pub fn similarity(a: &RankedLexicon, b: &RankedLexicon, p: f64) -> Result<f64> {
    check_fraction(p)?;
    check_same_vocabulary(a, b)?;
    let q = 1.0 - p;
    let top_a = a.top_fraction(q)?;
    let shared = b.top_slice(q)?.iter().filter(|t| top_a.contains(t.as_str())).count();
    Ok(shared as f64 / slice_size(a.len(), q) as f64)
}

/// `Y(p) = y / (1 - p)`; 1 means random-level overlap.
pub fn relative_similarity(y: f64, p: f64) -> Result<f64> {
    check_fraction(p)?;
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::invalid_argument(format!("similarity {y} outside [0, 1]")));
    }
    Ok(y / (1.0 - p))
}

pub fn similarity_curve(a: &RankedLexicon, b: &RankedLexicon, grid: &[f64]) -> Result<Vec<CurvePoint>> {
    grid.iter()
        .map(|&p| Ok(CurvePoint { p, value: similarity(a, b, p)? }))
        .collect()
}

pub fn relative_curve(similarities: &[CurvePoint]) -> Result<Vec<CurvePoint>> {
    similarities
        .iter()
        .map(|c| Ok(CurvePoint { p: c.p, value: relative_similarity(c.value, c.p)? }))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineStats {
    pub mean: f64,
    pub std_dev: f64,
    pub trials: usize,
}

/// Monte-Carlo `y(p)` between pairs of independent uniformly random rankings
/// of `k` items.
pub fn random_baseline(k: usize, p: f64, trials: usize, rng: &mut impl Rng) -> Result<BaselineStats> {
    check_fraction(p)?;
    if trials == 0 || k < 2 {
        return Err(Error::invalid_argument("random baseline needs trials >= 1 and k >= 2"));
    }
    let m = slice_size(k, 1.0 - p);
    let mut a: Vec<usize> = (0..k).collect();
    let mut b = a.clone();
    let mut in_a = vec![false; k];
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        a.shuffle(rng);
        b.shuffle(rng);
        in_a.iter_mut().for_each(|x| *x = false);
        a[..m].iter().for_each(|&i| in_a[i] = true);
        let shared = b[..m].iter().filter(|&&i| in_a[i]).count();
        samples.push(shared as f64 / m as f64);
    }
    let mean = samples.iter().sum::<f64>() / trials as f64;
    let var = if trials > 1 {
        samples.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (trials - 1) as f64
    } else {
        0.0
    };
    Ok(BaselineStats {
        mean,
        std_dev: var.sqrt(),
        trials,
    })
}

/// Parse a comma-separated `p` grid such as `0.5,0.6,0.7`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let grid: Vec<f64> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid_argument(format!("bad grid value {s:?}")))
        })
        .collect::<Result<_>>()?;
    if grid.is_empty() {
        return Err(Error::invalid_argument("empty grid"));
    }
    for &p in &grid {
        check_fraction(p)?;
    }
    Ok(grid)
}

/// `p,value` CSV with six-decimal values.
pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("p,value\n");
    for c in points {
        writeln!(out, "{},{:.6}", c.p, c.value).expect("write to string");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ranked(tokens: &[&str]) -> RankedLexicon {
        let n = tokens.len();
        RankedLexicon::from_ranked(
            tokens
                .iter()
                .enumerate()
                .map(|(i, t)| (t.to_string(), 1.0 - i as f64 / (n + 1) as f64))
                .collect(),
            "test",
        )
        .unwrap()
    }

    #[test]
    fn ranking_from_table() {
        let vocab = Vocabulary::from_tokens(
            ["<pad>", "<unk>", "b", "a", "c"].iter().map(|s| s.to_string()).collect(),
        )
        .unwrap();
        let m = crate::corpus::EmbeddingMatrix::from_tensor(
            crate::tensor::Tensor::matrix(5, 1, vec![0.0, 5.0, -3.0, 2.0, -3.0]).unwrap(),
        )
        .unwrap();
        let p = crate::preattention::PreAttentionParams::new(vec![1.0], 0.0).unwrap();
        let table = crate::preattention::vocab_attention_table(&m, &p).unwrap();
        let lex = RankedLexicon::from_table(&table, &vocab, "m").unwrap();
        assert_eq!(lex.tokens(), ["a", "b", "c"]);
        assert_eq!(lex.len(), vocab.len() - 2);
        let tsv = lex.to_tsv();
        assert_eq!(tsv, table.to_tsv(&vocab).unwrap());
        assert_eq!(RankedLexicon::parse_tsv(&tsv, "m").unwrap(), lex);
    }

    #[test]
    fn tsv_errors() {
        assert!(RankedLexicon::parse_tsv("a\t0.2\nb\t0.9\n", "x").is_err());
        assert!(RankedLexicon::parse_tsv("a\t0.9\na\t0.2\n", "x").is_err());
        match RankedLexicon::parse_tsv("a\t0.9\nb 0.2\n", "x") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn slice_examples() {
        let lex = ranked(&["t0", "t1", "t2", "t3", "t4", "t5", "t6", "t7", "t8", "t9"]);
        assert_eq!(lex.top_slice(0.2).unwrap(), ["t0", "t1"]);
        assert_eq!(lex.top_slice(0.05).unwrap(), ["t0"]);
        assert_eq!(lex.top_fraction(0.3).unwrap(), lex.top_fraction(0.3).unwrap());
        assert!(lex.top_fraction(0.0).is_err());
        assert!(lex.top_fraction(1.0).is_err());
        assert_eq!(slice_size(100, 1.0 - 0.9), 10);
        assert_eq!(slice_size(1000, 1.0 - 0.7), 300);
    }

    #[test]
    fn precision_examples() {
        let lex = ranked(&["good", "bad", "the", "a"]);
        let hand = HandLexicon::from_tokens(["good", "bad"]).unwrap();
        assert_eq!(precision(&lex, &hand, 0.5).unwrap(), 1.0);
        let all = HandLexicon::from_tokens(["good", "bad", "the", "a"]).unwrap();
        let none = HandLexicon::from_tokens(["zzz"]).unwrap();
        for c in precision_curve(&lex, &all, &DEFAULT_GRID).unwrap() {
            assert_eq!(c.value, 1.0);
        }
        for c in precision_curve(&lex, &none, &DEFAULT_GRID).unwrap() {
            assert_eq!(c.value, 0.0);
        }
    }

    #[test]
    fn hand_lexicon_file_rules() {
        let h = HandLexicon::parse("# polarity words\nGood\n\nbad!\ngood\n  # indented comment\n").unwrap();
        assert_eq!(h.tokens().iter().cloned().collect::<Vec<_>>(), ["!", "bad", "good"]);
        assert!(HandLexicon::parse("# only comments\n\n").is_err());
    }

    #[test]
    fn similarity_examples() {
        let toks: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = toks.iter().map(String::as_str).collect();
        let a = ranked(&refs);
        for p in DEFAULT_GRID {
            assert_eq!(similarity(&a, &a, p).unwrap(), 1.0);
        }
        let rev: Vec<&str> = refs.iter().rev().copied().collect();
        assert_eq!(similarity(&a, &ranked(&rev), 0.5).unwrap(), 0.0);
        // top halves share w0, w1, w2
        let b = ranked(&["w0", "w1", "w2", "w7", "w8", "w3", "w4", "w5", "w6", "w9"]);
        assert_eq!(similarity(&a, &b, 0.5).unwrap(), 0.6);
        assert!(similarity(&a, &ranked(&refs[..9]), 0.5).is_err());
    }

    #[test]
    fn relative_examples() {
        assert!((relative_similarity(0.6, 0.5).unwrap() - 1.2).abs() < 1e-15);
        assert_eq!(relative_similarity(1.0 - 0.75, 0.75).unwrap(), 1.0);
        assert!((relative_similarity(0.8261, 0.5).unwrap() - 1.6522).abs() < 1e-12);
        assert!(relative_similarity(1.5, 0.5).is_err());
    }

    #[test]
    fn baseline_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_baseline(10_000, 0.9, 200, &mut rng).unwrap();
        assert!((s.mean - 0.1).abs() < 0.01, "{s:?}");
        let s = random_baseline(10_000, 0.5, 200, &mut rng).unwrap();
        assert!((s.mean - 0.5).abs() < 0.01, "{s:?}");
        for _ in 0..20 {
            let s = random_baseline(2, 0.5, 1, &mut rng).unwrap();
            assert!(s.mean == 0.0 || s.mean == 1.0);
        }
        assert!(random_baseline(1, 0.5, 1, &mut rng).is_err());
    }

    #[test]
    fn grid_and_csv() {
        assert_eq!(parse_grid("0.5,0.6, 0.7").unwrap(), [0.5, 0.6, 0.7]);
        assert!(parse_grid("0.5,1.0").is_err());
        assert!(parse_grid("x").is_err());
        let csv = curve_to_csv(&[CurvePoint { p: 0.5, value: 0.826_123_4 }, CurvePoint { p: 0.9, value: 1.0 }]);
        assert_eq!(csv, "p,value\n0.5,0.826123\n0.9,1.000000\n");
    }

    fn shuffled(k: usize, seed: u64) -> RankedLexicon {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut toks: Vec<String> = (0..k).map(|i| format!("t{i}")).collect();
        toks.shuffle(&mut rng);
        let refs: Vec<&str> = toks.iter().map(String::as_str).collect();
        ranked(&refs)
    }

    proptest! {
        #[test]
        fn similarity_is_symmetric_and_bounded(k in 2usize..200, s1 in 0u64..500, s2 in 0u64..500, p in 0.01f64..0.99) {
            let a = shuffled(k, s1);
            let b = shuffled(k, s2);
            let y = similarity(&a, &b, p).unwrap();
            prop_assert_eq!(y, similarity(&b, &a, p).unwrap());
            prop_assert!((0.0..=1.0).contains(&y));
            let big = relative_similarity(y, p).unwrap();
            prop_assert!(big >= 0.0 && big <= 1.0 / (1.0 - p));
        }

        #[test]
        fn slices_are_nested(k in 1usize..300, q1 in 0.001f64..0.999, q2 in 0.001f64..0.999, seed in 0u64..100) {
            let lex = shuffled(k, seed);
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let small = lex.top_fraction(lo).unwrap();
            let large = lex.top_fraction(hi).unwrap();
            prop_assert!(small.is_subset(&large));
        }
    }
}
