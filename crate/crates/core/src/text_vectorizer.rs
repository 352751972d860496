//! TF-IDF vectorization of raw text.
//!
//! Tokens are maximal runs of alphanumeric characters (optionally lowercased).
//! Weights are raw term counts times the smoothed inverse document frequency
//! `ln((1 + n_docs) / (1 + df)) + 1`, followed by optional L2 normalization.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorizerConfig {
    pub lowercase: bool,
    pub min_df: usize,
    pub max_features: Option<usize>,
    pub ngram_max: usize,
    pub l2_normalize: bool,
}

impl Default for VectorizerConfig {
    fn default() -> Self {
        VectorizerConfig {
            lowercase: true,
            min_df: 2,
            max_features: Some(20_000),
            ngram_max: 1,
            l2_normalize: true,
        }
    }
}

impl VectorizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_df < 1 {
            return Err(Error::Config("min_df must be at least 1".into()));
        }
        if self.max_features == Some(0) {
            return Err(Error::Config("max_features must be at least 1".into()));
        }
        if !(1..=2).contains(&self.ngram_max) {
            return Err(Error::Config("ngram_max must be 1 or 2".into()));
        }
        Ok(())
    }
}

/// Splits text into maximal alphanumeric runs.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_string() })
        .collect()
}

fn terms_of(text: &str, config: &VectorizerConfig) -> Vec<String> {
    let tokens = tokenize(text, config.lowercase);
    let mut terms = tokens.clone();
    if config.ngram_max >= 2 {
        terms.extend(tokens.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    }
    terms
}

/// Sparse vector with strictly increasing indices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    entries: Vec<(usize, f64)>,
    width: usize,
}

impl SparseVector {
    pub fn new(mut entries: Vec<(usize, f64)>, width: usize) -> Self {
        entries.sort_by_key(|&(i, _)| i);
        SparseVector { entries, width }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.width];
        for &(i, w) in &self.entries {
            v[i] = w;
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawVocabulary")]
pub struct Vocabulary {
    terms: Vec<String>,
    document_frequency: Vec<usize>,
    n_docs: usize,
    config: VectorizerConfig,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct RawVocabulary {
    terms: Vec<String>,
    document_frequency: Vec<usize>,
    n_docs: usize,
    config: VectorizerConfig,
}

impl From<RawVocabulary> for Vocabulary {
    fn from(raw: RawVocabulary) -> Self {
        Vocabulary::from_parts(raw.terms, raw.document_frequency, raw.n_docs, raw.config)
    }
}

impl Vocabulary {
    fn from_parts(
        terms: Vec<String>,
        document_frequency: Vec<usize>,
        n_docs: usize,
        config: VectorizerConfig,
    ) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            terms,
            document_frequency,
            n_docs,
            config,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn config(&self) -> &VectorizerConfig {
        &self.config
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn document_frequency(&self, term: &str) -> Option<usize> {
        self.index_of(term).map(|i| self.document_frequency[i])
    }

    pub fn idf(&self, index: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.document_frequency[index] as f64)).ln() + 1.0
    }

    /// In-vocabulary term indices of `doc`, in token order, with repeats.
    pub fn token_indices(&self, doc: &str) -> Vec<usize> {
        terms_of(doc, &self.config)
            .iter()
            .filter_map(|t| self.index_of(t))
            .collect()
    }

    pub fn transform(&self, doc: &str) -> SparseVector {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for i in self.token_indices(doc) {
            *counts.entry(i).or_insert(0.0) += 1.0;
        }
        let mut entries: Vec<(usize, f64)> = counts
            .into_iter()
            .map(|(i, tf)| (i, tf * self.idf(i)))
            .collect();
        if self.config.l2_normalize {
            let norm = entries.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt();
            if norm > 0.0 {
                for e in &mut entries {
                    e.1 /= norm;
                }
            }
        }
        SparseVector {
            entries,
            width: self.len(),
        }
    }

    /// Line-oriented dump: one header line, then `term<TAB>index<TAB>df`.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = format!(
            "# n_docs={} lowercase={} min_df={} max_features={} ngram_max={} l2_normalize={}\n",
            self.n_docs,
            c.lowercase,
            c.min_df,
            c.max_features.map_or("none".to_string(), |m| m.to_string()),
            c.ngram_max,
            c.l2_normalize
        );
        for (i, (t, df)) in self.terms.iter().zip(&self.document_frequency).enumerate() {
            let _ = writeln!(out, "{t}\t{i}\t{df}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|h| h.strip_prefix("# "))
            .ok_or_else(|| Error::Config("vocabulary header missing".into()))?;
        let mut fields = HashMap::new();
        for kv in header.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad header field `{kv}`")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Config(format!("vocabulary header lacks `{k}`")))
        };
        let parse_usize = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("bad value for `{k}`")))
        };
        let parse_bool = |k: &str| -> Result<bool> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("bad value for `{k}`")))
        };
        let config = VectorizerConfig {
            lowercase: parse_bool("lowercase")?,
            min_df: parse_usize("min_df")?,
            max_features: match get("max_features")? {
                "none" => None,
                _ => Some(parse_usize("max_features")?),
            },
            ngram_max: parse_usize("ngram_max")?,
            l2_normalize: parse_bool("l2_normalize")?,
        };
        let n_docs = parse_usize("n_docs")?;
        let mut terms = Vec::new();
        let mut dfs = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Parse {
                line: lineno as u64 + 2,
                message: format!("bad vocabulary line `{line}`"),
            };
            if parts.len() != 3 {
                return Err(bad());
            }
            let idx: usize = parts[1].parse().map_err(|_| bad())?;
            if idx != terms.len() {
                return Err(bad());
            }
            terms.push(parts[0].to_string());
            dfs.push(parts[2].parse().map_err(|_| bad())?);
        }
        Ok(Vocabulary::from_parts(terms, dfs, n_docs, config))
    }
}

/// Builds the vocabulary: terms with document frequency ≥ `min_df`, capped
/// at `max_features` by (df desc, term asc), indexed lexicographically.
pub fn fit_vocabulary<S: AsRef<str>>(corpus: &[S], config: &VectorizerConfig) -> Result<Vocabulary> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Config("cannot fit a vocabulary on an empty corpus".into()));
    }
    let mut df: HashMap<String, usize> = HashMap::new();
    for doc in corpus {
        let unique: HashSet<String> = terms_of(doc.as_ref(), config).into_iter().collect();
        for t in unique {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = df.into_iter().filter(|&(_, d)| d >= config.min_df).collect();
    if let Some(cap) = config.max_features {
        if kept.len() > cap {
            kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            kept.truncate(cap);
        }
    }
    kept.sort_by(|a, b| a.0.cmp(&b.0));
    let (terms, dfs) = kept.into_iter().unzip();
    Ok(Vocabulary::from_parts(terms, dfs, corpus.len(), config.clone()))
}
