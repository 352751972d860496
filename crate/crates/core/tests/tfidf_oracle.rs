//! TF-IDF weights against a direct, unoptimized recomputation: count every
//! term by rescanning the corpus, apply the smoothed idf, then normalize.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textcausal::text_vectorizer::{fit_vocabulary, VectorizerConfig};

const WORDS: [&str; 12] = [
    "alpha", "beta", "gamma", "delta", "Alpha", "eps", "zeta", "eta", "theta", "iota", "kappa", "mu",
];

fn random_corpus(rng: &mut ChaCha8Rng, n_docs: usize) -> Vec<String> {
    (0..n_docs)
        .map(|_| {
            let len = rng.random_range(0..15);
            let mut doc = String::new();
            for k in 0..len {
                if k > 0 {
                    doc.push_str([" ", ", ", "! ", "\t"][rng.random_range(0..4)]);
                }
                doc.push_str(WORDS[rng.random_range(0..WORDS.len())]);
            }
            doc
        })
        .collect()
}

/// Terms of one document by hand: alphanumeric runs, then adjacent pairs.
fn brute_terms(doc: &str, lowercase: bool, ngram_max: usize) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in doc.chars() {
        if ch.is_alphanumeric() {
            cur.push(ch);
        } else if !cur.is_empty() {
            tokens.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    if lowercase {
        tokens = tokens.into_iter().map(|t| t.to_lowercase()).collect();
    }
    let mut terms = tokens.clone();
    if ngram_max == 2 {
        for i in 1..tokens.len() {
            terms.push(format!("{} {}", tokens[i - 1], tokens[i]));
        }
    }
    terms
}

/// Dense TF-IDF row of `doc` over `vocab` computed from scratch.
fn brute_row(corpus: &[String], vocab: &[String], doc: &str, cfg: &VectorizerConfig) -> Vec<f64> {
    let n = corpus.len() as f64;
    let terms = brute_terms(doc, cfg.lowercase, cfg.ngram_max);
    let mut row: Vec<f64> = vocab
        .iter()
        .map(|term| {
            let tf = terms.iter().filter(|t| *t == term).count() as f64;
            let df = corpus
                .iter()
                .filter(|d| brute_terms(d, cfg.lowercase, cfg.ngram_max).contains(term))
                .count() as f64;
            tf * (((1.0 + n) / (1.0 + df)).ln() + 1.0)
        })
        .collect();
    if cfg.l2_normalize {
        let norm = row.iter().map(|w| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|w| *w /= norm);
        }
    }
    row
}

fn brute_vocab(corpus: &[String], cfg: &VectorizerConfig) -> Vec<String> {
    let mut all: Vec<String> = corpus
        .iter()
        .flat_map(|d| brute_terms(d, cfg.lowercase, cfg.ngram_max))
        .collect();
    all.sort();
    all.dedup();
    all.into_iter()
        .filter(|term| {
            corpus
                .iter()
                .filter(|d| brute_terms(d, cfg.lowercase, cfg.ngram_max).contains(term))
                .count()
                >= cfg.min_df
        })
        .collect()
}

fn check(seed: u64, cfg: &VectorizerConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus = random_corpus(&mut rng, 50);
    let vocab = fit_vocabulary(&corpus, cfg).unwrap();
    let expected_terms = brute_vocab(&corpus, cfg);
    assert_eq!(vocab.terms(), expected_terms.as_slice(), "seed {seed}");
    let mut probes = corpus.clone();
    probes.push("unseen words only".into());
    probes.push(String::new());
    for doc in &probes {
        let got = vocab.transform(doc).to_dense();
        let want = brute_row(&corpus, &expected_terms, doc, cfg);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12, "seed {seed} doc {doc:?}: {g} vs {w}");
        }
    }
}

#[test]
fn matches_brute_force_unigrams() {
    for seed in 0..20 {
        check(seed, &VectorizerConfig::default());
    }
}

#[test]
fn matches_brute_force_variants() {
    let variants = [
        VectorizerConfig {
            min_df: 1,
            ..VectorizerConfig::default()
        },
        VectorizerConfig {
            lowercase: false,
            ..VectorizerConfig::default()
        },
        VectorizerConfig {
            ngram_max: 2,
            ..VectorizerConfig::default()
        },
        VectorizerConfig {
            l2_normalize: false,
            min_df: 3,
            ..VectorizerConfig::default()
        },
    ];
    for (k, cfg) in variants.iter().enumerate() {
        for seed in 0..5 {
            check(100 + 10 * k as u64 + seed, cfg);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rows_are_unit_or_zero(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = random_corpus(&mut rng, 30);
        let vocab = fit_vocabulary(&corpus, &VectorizerConfig::default()).unwrap();
        for doc in &corpus {
            let v = vocab.transform(doc);
            let norm = v.norm();
            prop_assert!(v.nnz() == 0 || (norm - 1.0).abs() < 1e-12);
            prop_assert!(v.entries().windows(2).all(|w| w[0].0 < w[1].0));
            prop_assert!(v.entries().iter().all(|&(_, w)| w > 0.0));
        }
    }

    #[test]
    fn idf_never_below_one(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = random_corpus(&mut rng, 30);
        let cfg = VectorizerConfig { min_df: 1, ..VectorizerConfig::default() };
        let vocab = fit_vocabulary(&corpus, &cfg).unwrap();
        for i in 0..vocab.len() {
            prop_assert!(vocab.idf(i) >= 1.0);
        }
    }
}
