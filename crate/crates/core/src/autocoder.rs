//! Derive numeric columns (sentiment, emotion, topics, user-defined scores)
//! from raw text so they can serve as treatments, outcomes, or controls.
//!
//! The default scorers are lexicon and keyword based. Anything implementing
//! [`Scorer`] can be plugged in instead, e.g. a model-backed classifier.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tabular::{Column, ColumnData, Table};
use crate::text_vectorizer::tokenize;

const DEFAULT_SENTIMENT: &str = include_str!("../data/sentiment.lex");
const DEFAULT_EMOTION: &str = include_str!("../data/emotion.lex");

pub const SENTIMENT_COLUMNS: [&str; 2] = ["positive", "negative"];
pub const EMOTION_COLUMNS: [&str; 4] = ["joy", "anger", "fear", "sadness"];

/// Maps a text to named scores in `[0, 1]`.
///
/// Implementations must be pure functions of the text: rows are scored in
/// parallel and the result must not depend on evaluation order.
pub trait Scorer: Send + Sync {
    /// Output columns, in the order they are appended.
    fn columns(&self) -> Vec<String>;

    /// Scores for one text. Keys must be a subset of [`Scorer::columns`];
    /// omitted keys become 0.
    fn score(&self, text: &str) -> BTreeMap<String, f64>;
}

/// Adapts a closure into a [`Scorer`].
pub struct FnScorer<F> {
    columns: Vec<String>,
    f: F,
}

impl<F> FnScorer<F>
where
    F: Fn(&str) -> BTreeMap<String, f64> + Send + Sync,
{
    pub fn new(columns: Vec<String>, f: F) -> Self {
        FnScorer { columns, f }
    }
}

impl<F> Scorer for FnScorer<F>
where
    F: Fn(&str) -> BTreeMap<String, f64> + Send + Sync,
{
    fn columns(&self) -> Vec<String> {
        self.columns.clone()
    }

    fn score(&self, text: &str) -> BTreeMap<String, f64> {
        (self.f)(text)
    }
}

/// Weighted term lists grouped by label.
///
/// File format: `[label]` header lines followed by `term<TAB>weight` lines.
/// Blank lines and lines starting with `#` are ignored; a missing weight
/// defaults to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    labels: Vec<(String, HashMap<String, f64>)>,
}

impl Lexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut labels: Vec<(String, HashMap<String, f64>)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::Parse {
                line: lineno as u64 + 1,
                message: msg,
            };
            if let Some(label) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                if labels.iter().any(|(l, _)| l == label) {
                    return Err(bad(format!("duplicate label `{label}`")));
                }
                labels.push((label.to_string(), HashMap::new()));
                continue;
            }
            let (_, terms) = labels
                .last_mut()
                .ok_or_else(|| bad("term before any [label] header".into()))?;
            let mut parts = line.split('\t');
            let term = parts.next().unwrap_or_default().trim().to_lowercase();
            let weight = match parts.next() {
                Some(w) => w
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad weight `{w}`")))?,
                None => 1.0,
            };
            if !(weight > 0.0 && weight.is_finite()) {
                return Err(bad(format!("weight for `{term}` must be positive")));
            }
            terms.insert(term, weight);
        }
        Ok(Lexicon { labels })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Lexicon::parse(&text)
    }

    pub fn default_sentiment() -> Self {
        Lexicon::parse(DEFAULT_SENTIMENT).expect("bundled sentiment lexicon is valid")
    }

    pub fn default_emotion() -> Self {
        Lexicon::parse(DEFAULT_EMOTION).expect("bundled emotion lexicon is valid")
    }

    /// Unit-weight lexicon from keyword sets.
    pub fn from_keywords(labels: &[String], keyword_map: &HashMap<String, HashSet<String>>) -> Result<Self> {
        let mut out = Vec::new();
        for label in labels {
            let terms = keyword_map
                .get(label)
                .ok_or_else(|| Error::Config(format!("no keywords for label `{label}`")))?;
            if terms.is_empty() {
                return Err(Error::Config(format!("label `{label}` has an empty term set")));
            }
            out.push((
                label.clone(),
                terms.iter().map(|t| (t.to_lowercase(), 1.0)).collect(),
            ));
        }
        Ok(Lexicon { labels: out })
    }

    pub fn labels(&self) -> Vec<&str> {
        self.labels.iter().map(|(l, _)| l.as_str()).collect()
    }

    pub fn terms(&self, label: &str) -> Option<&HashMap<String, f64>> {
        self.labels.iter().find(|(l, _)| l == label).map(|(_, t)| t)
    }

    fn require(&self, wanted: &[&str]) -> Result<Vec<&HashMap<String, f64>>> {
        wanted
            .iter()
            .map(|w| {
                self.terms(w)
                    .ok_or_else(|| Error::Config(format!("lexicon lacks label `{w}`")))
            })
            .collect()
    }

    /// Total weight of token hits per requested label.
    fn hits(tables: &[&HashMap<String, f64>], text: &str) -> Vec<f64> {
        let tokens = tokenize(text, true);
        tables
            .iter()
            .map(|t| tokens.iter().filter_map(|tok| t.get(tok)).sum())
            .collect()
    }
}

/// Two-class lexicon sentiment with add-one smoothing:
/// `positive = (1 + Σw_pos) / (2 + Σw_pos + Σw_neg)`.
pub struct SentimentScorer {
    positive: HashMap<String, f64>,
    negative: HashMap<String, f64>,
}

impl SentimentScorer {
    pub fn new(lexicon: &Lexicon) -> Result<Self> {
        let t = lexicon.require(&SENTIMENT_COLUMNS)?;
        Ok(SentimentScorer {
            positive: t[0].clone(),
            negative: t[1].clone(),
        })
    }
}

impl Scorer for SentimentScorer {
    fn columns(&self) -> Vec<String> {
        SENTIMENT_COLUMNS.iter().map(|s| s.to_string()).collect()
    }

    fn score(&self, text: &str) -> BTreeMap<String, f64> {
        let h = Lexicon::hits(&[&self.positive, &self.negative], text);
        let positive = (1.0 + h[0]) / (2.0 + h[0] + h[1]);
        BTreeMap::from([
            ("positive".to_string(), positive),
            ("negative".to_string(), 1.0 - positive),
        ])
    }
}

/// Four-way emotion shares with add-one smoothing per class.
pub struct EmotionScorer {
    classes: Vec<HashMap<String, f64>>,
}

impl EmotionScorer {
    pub fn new(lexicon: &Lexicon) -> Result<Self> {
        let classes = lexicon
            .require(&EMOTION_COLUMNS)?
            .into_iter()
            .cloned()
            .collect();
        Ok(EmotionScorer { classes })
    }
}

impl Scorer for EmotionScorer {
    fn columns(&self) -> Vec<String> {
        EMOTION_COLUMNS.iter().map(|s| s.to_string()).collect()
    }

    fn score(&self, text: &str) -> BTreeMap<String, f64> {
        let refs: Vec<&HashMap<String, f64>> = self.classes.iter().collect();
        let h = Lexicon::hits(&refs, text);
        let total = EMOTION_COLUMNS.len() as f64 + h.iter().sum::<f64>();
        EMOTION_COLUMNS
            .iter()
            .zip(h)
            .map(|(name, hits)| (name.to_string(), (1.0 + hits) / total))
            .collect()
    }
}

/// Keyword topics. Each label scores `hits / (n_tokens + 1)` independently,
/// so scores lie in `[0, 1)` and need not sum to one.
pub struct TopicScorer {
    labels: Vec<String>,
    keywords: Vec<HashMap<String, f64>>,
}

impl TopicScorer {
    pub fn new(lexicon: &Lexicon) -> Result<Self> {
        if lexicon.labels.is_empty() {
            return Err(Error::Config("at least one topic label is required".into()));
        }
        for (label, terms) in &lexicon.labels {
            if terms.is_empty() {
                return Err(Error::Config(format!("label `{label}` has an empty term set")));
            }
        }
        Ok(TopicScorer {
            labels: lexicon.labels.iter().map(|(l, _)| l.clone()).collect(),
            keywords: lexicon.labels.iter().map(|(_, t)| t.clone()).collect(),
        })
    }
}

impl Scorer for TopicScorer {
    fn columns(&self) -> Vec<String> {
        self.labels.clone()
    }

    fn score(&self, text: &str) -> BTreeMap<String, f64> {
        let tokens = tokenize(text, true);
        let denom = tokens.len() as f64 + 1.0;
        self.labels
            .iter()
            .zip(&self.keywords)
            .map(|(label, kw)| {
                let hits = tokens.iter().filter(|t| kw.contains_key(*t)).count() as f64;
                (label.clone(), hits / denom)
            })
            .collect()
    }
}

/// What to do when an output column name already exists.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum CollisionPolicy {
    #[default]
    Error,
    /// Prepend this prefix to every output column.
    Prefix(String),
}

pub struct Autocoder {
    collision: CollisionPolicy,
    sentiment: Box<dyn Scorer>,
    emotion: Box<dyn Scorer>,
}

impl Default for Autocoder {
    fn default() -> Self {
        Autocoder::new()
    }
}

impl Autocoder {
    pub fn new() -> Self {
        Autocoder {
            collision: CollisionPolicy::Error,
            sentiment: Box::new(
                SentimentScorer::new(&Lexicon::default_sentiment()).expect("bundled lexicon"),
            ),
            emotion: Box::new(
                EmotionScorer::new(&Lexicon::default_emotion()).expect("bundled lexicon"),
            ),
        }
    }

    pub fn with_collision_policy(mut self, policy: CollisionPolicy) -> Self {
        self.collision = policy;
        self
    }

    pub fn with_sentiment_scorer(mut self, scorer: Box<dyn Scorer>) -> Self {
        self.sentiment = scorer;
        self
    }

    pub fn with_emotion_scorer(mut self, scorer: Box<dyn Scorer>) -> Self {
        self.emotion = scorer;
        self
    }

    /// Appends `positive` and `negative`.
    pub fn code_sentiment<S: AsRef<str> + Sync>(&self, texts: &[S], table: &Table) -> Result<Table> {
        self.code_callable(texts, table, self.sentiment.as_ref())
    }

    /// Appends `joy`, `anger`, `fear`, `sadness`.
    pub fn code_emotion<S: AsRef<str> + Sync>(&self, texts: &[S], table: &Table) -> Result<Table> {
        self.code_callable(texts, table, self.emotion.as_ref())
    }

    /// Appends one column per label, scored against `keyword_map[label]`.
    pub fn code_custom_topics<S: AsRef<str> + Sync>(
        &self,
        texts: &[S],
        table: &Table,
        labels: &[String],
        keyword_map: &HashMap<String, HashSet<String>>,
    ) -> Result<Table> {
        if labels.is_empty() {
            return Err(Error::Config("at least one topic label is required".into()));
        }
        let scorer = TopicScorer::new(&Lexicon::from_keywords(labels, keyword_map)?)?;
        self.code_callable(texts, table, &scorer)
    }

    /// Appends one column per declared output of `scorer`.
    pub fn code_callable<S: AsRef<str> + Sync>(
        &self,
        texts: &[S],
        table: &Table,
        scorer: &dyn Scorer,
    ) -> Result<Table> {
        if texts.len() != table.n_rows() {
            return Err(Error::Schema(format!(
                "{} texts for a table of {} rows",
                texts.len(),
                table.n_rows()
            )));
        }
        let declared = scorer.columns();
        let names: Vec<String> = declared
            .iter()
            .map(|c| match &self.collision {
                CollisionPolicy::Error => c.clone(),
                CollisionPolicy::Prefix(p) => format!("{p}{c}"),
            })
            .collect();
        for name in &names {
            if table.has_column(name) {
                return Err(Error::Collision(name.clone()));
            }
        }
        let position: HashMap<&str, usize> = declared
            .iter()
            .enumerate()
            .map(|(k, c)| (c.as_str(), k))
            .collect();

        let rows: Vec<Vec<f64>> = texts
            .par_iter()
            .enumerate()
            .map(|(row, text)| {
                let mut out = vec![0.0; declared.len()];
                for (key, value) in scorer.score(text.as_ref()) {
                    let &k = position.get(key.as_str()).ok_or_else(|| Error::Scoring {
                        row,
                        message: format!("undeclared output `{key}`"),
                    })?;
                    if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                        return Err(Error::Scoring {
                            row,
                            message: format!("score {value} for `{key}` is outside [0, 1]"),
                        });
                    }
                    out[k] = value;
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;

        let mut result = table.clone();
        for (k, name) in names.into_iter().enumerate() {
            let values = rows.iter().map(|r| r[k]).collect();
            result = result.with_column(Column::numeric(name, values))?;
        }
        Ok(result)
    }
}

/// Appends `<column>_bin`, equal to 1 iff the score is strictly above `threshold`.
pub fn binarize(table: &Table, column: &str, threshold: f64) -> Result<Table> {
    let col = table.column(column)?;
    let values = match col.data() {
        ColumnData::Numeric(v) => v.iter().map(|&x| u8::from(x > threshold)).collect(),
        ColumnData::Binary(v) => v.iter().map(|&x| u8::from(f64::from(x) > threshold)).collect(),
        _ => {
            return Err(Error::Schema(format!(
                "cannot binarize {} column `{column}`",
                col.kind()
            )))
        }
    };
    table.with_column(Column::binary(format!("{column}_bin"), values))
}
