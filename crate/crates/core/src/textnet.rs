//! A small text network with one outcome head per treatment value.
//!
//! The text representation `b(W)` is the mean of learned token embeddings.
//! The outcome model is `Q(t, b, c) = σ(M_t^b·b + M_t^c·c + bias)` with `c` a
//! one-hot encoding of the covariates. A training sample with observed
//! treatment `t` updates the shared encoder, the shared bias, and head `t`
//! only. The effect estimate is the sample average of `Q(1,·) − Q(0,·)`.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{mean, sigmoid, softplus};
use crate::metalearners::{summarize_ites, EffectEstimate, Mask};
use crate::tabular::Table;
use crate::text_vectorizer::{fit_vocabulary, VectorizerConfig, Vocabulary};

const FORMAT_VERSION: u32 = 1;
pub const METHOD_LABEL: &str = "textnet";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextNetSpec {
    pub embed_dim: usize,
    pub vectorizer: VectorizerConfig,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(rename = "Q_weight")]
    pub q_weight: f64,
    pub seed: u64,
}

impl Default for TextNetSpec {
    fn default() -> Self {
        TextNetSpec {
            embed_dim: 64,
            vectorizer: VectorizerConfig::default(),
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 32,
            q_weight: 0.1,
            seed: 0,
        }
    }
}

impl TextNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.batch_size == 0 {
            return Err(Error::Config("embed_dim and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite())
            || !(self.q_weight > 0.0 && self.q_weight.is_finite())
        {
            return Err(Error::Config("learning_rate and Q_weight must be positive".into()));
        }
        self.vectorizer.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    /// `M_t^b`, length `d`.
    pub text: Vec<f64>,
    /// `M_t^c`, one weight per one-hot covariate slot.
    pub covariates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextNetParams {
    pub embed_dim: usize,
    /// Row-major `|V| × d` embedding table.
    pub embeddings: Vec<f64>,
    pub heads: [Head; 2],
    pub bias: f64,
}

impl TextNetParams {
    pub fn zeros(vocab_size: usize, embed_dim: usize, n_covariates: usize) -> TextNetParams {
        let head = Head {
            text: vec![0.0; embed_dim],
            covariates: vec![0.0; n_covariates],
        };
        TextNetParams {
            embed_dim,
            embeddings: vec![0.0; vocab_size * embed_dim],
            heads: [head.clone(), head],
            bias: 0.0,
        }
    }

    /// Embeddings uniform in `±1/√d`, zero heads, bias at the log-odds of
    /// `base_rate`.
    pub fn initialize(
        vocab_size: usize,
        embed_dim: usize,
        n_covariates: usize,
        base_rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> TextNetParams {
        let mut p = TextNetParams::zeros(vocab_size, embed_dim, n_covariates);
        let r = 1.0 / (embed_dim as f64).sqrt();
        for e in &mut p.embeddings {
            *e = rng.random_range(-r..r);
        }
        let b = base_rate.clamp(1e-6, 1.0 - 1e-6);
        p.bias = (b / (1.0 - b)).ln();
        p
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.len() / self.embed_dim.max(1)
    }

    pub fn n_covariates(&self) -> usize {
        self.heads[0].covariates.len()
    }

    fn is_finite(&self) -> bool {
        let all = self
            .embeddings
            .iter()
            .chain(self.heads.iter().flat_map(|h| h.text.iter().chain(&h.covariates)));
        self.bias.is_finite() && all.into_iter().all(|v| v.is_finite())
    }
}

/// One training or scoring row: vocabulary indices (with repeats), one-hot
/// covariates, and, for training, the observed treatment and outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub covariates: Vec<f64>,
    pub t: u8,
    pub y: f64,
}

/// `b(W)`: mean embedding of the in-vocabulary tokens; zero when there are none.
pub fn encode(tokens: &[usize], params: &TextNetParams) -> Vec<f64> {
    let d = params.embed_dim;
    let mut b = vec![0.0; d];
    if tokens.is_empty() {
        return b;
    }
    for &k in tokens {
        for (bj, e) in b.iter_mut().zip(&params.embeddings[k * d..(k + 1) * d]) {
            *bj += e;
        }
    }
    let inv = tokens.len() as f64;
    b.iter_mut().for_each(|v| *v /= inv);
    b
}

fn logit(t: u8, b: &[f64], c: &[f64], params: &TextNetParams) -> f64 {
    let h = &params.heads[t as usize];
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    dot(&h.text, b) + dot(&h.covariates, c) + params.bias
}

/// `Q(t, b, c)`.
pub fn forward(t: u8, b: &[f64], c: &[f64], params: &TextNetParams) -> Result<f64> {
    if t > 1 {
        return Err(Error::Config("treatment must be 0 or 1".into()));
    }
    if b.len() != params.embed_dim {
        return Err(Error::WidthMismatch {
            expected: params.embed_dim,
            got: b.len(),
        });
    }
    if c.len() != params.n_covariates() {
        return Err(Error::WidthMismatch {
            expected: params.n_covariates(),
            got: c.len(),
        });
    }
    Ok(sigmoid(logit(t, b, c, params)))
}

/// Summed `Q_weight`-scaled binary cross-entropy of a batch.
pub fn batch_loss(params: &TextNetParams, batch: &[Example], q_weight: f64) -> f64 {
    batch
        .iter()
        .map(|ex| {
            let z = logit(ex.t, &encode(&ex.tokens, params), &ex.covariates, params);
            // −[y ln σ(z) + (1−y) ln(1−σ(z))] = softplus(z) − y·z
            q_weight * (softplus(z) - ex.y * z)
        })
        .sum()
}

/// Gradient of [`batch_loss`] with respect to every parameter, laid out like
/// the parameters themselves.
pub fn batch_gradient(params: &TextNetParams, batch: &[Example], q_weight: f64) -> TextNetParams {
    let d = params.embed_dim;
    let mut g = TextNetParams::zeros(params.vocab_size(), d, params.n_covariates());
    for ex in batch {
        let b = encode(&ex.tokens, params);
        let head = &params.heads[ex.t as usize];
        let z = logit(ex.t, &b, &ex.covariates, params);
        let dz = q_weight * (sigmoid(z) - ex.y);
        let gh = &mut g.heads[ex.t as usize];
        for (gj, bj) in gh.text.iter_mut().zip(&b) {
            *gj += dz * bj;
        }
        for (gj, cj) in gh.covariates.iter_mut().zip(&ex.covariates) {
            *gj += dz * cj;
        }
        g.bias += dz;
        if !ex.tokens.is_empty() {
            let scale = dz / ex.tokens.len() as f64;
            for &k in &ex.tokens {
                for (ge, m) in g.embeddings[k * d..(k + 1) * d].iter_mut().zip(&head.text) {
                    *ge += scale * m;
                }
            }
        }
    }
    g
}

/// Plain gradient step `θ ← θ − lr·∇`.
pub fn sgd_step(params: &mut TextNetParams, grad: &TextNetParams, learning_rate: f64) {
    let step = |p: &mut [f64], g: &[f64]| {
        for (pi, gi) in p.iter_mut().zip(g) {
            *pi -= learning_rate * gi;
        }
    };
    step(&mut params.embeddings, &grad.embeddings);
    for (h, gh) in params.heads.iter_mut().zip(&grad.heads) {
        step(&mut h.text, &gh.text);
        step(&mut h.covariates, &gh.covariates);
    }
    params.bias -= learning_rate * grad.bias;
}

/// Categorical encoding of the covariates: every column contributes one slot
/// per level seen at fit time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneHot {
    pub columns: Vec<(String, Vec<String>)>,
}

impl OneHot {
    pub fn fit(table: &Table, columns: &[String]) -> Result<OneHot> {
        let mut out = Vec::new();
        for name in columns {
            let col = table.column(name)?;
            if col.kind() == crate::tabular::ColumnKind::Text {
                return Err(Error::Schema(format!(
                    "covariate `{name}` is text; pass it as the text column instead"
                )));
            }
            let mut levels = col.levels();
            if col.kind() == crate::tabular::ColumnKind::Binary {
                levels = vec!["0".into(), "1".into()];
            }
            out.push((name.clone(), levels));
        }
        Ok(OneHot { columns: out })
    }

    pub fn width(&self) -> usize {
        self.columns.iter().map(|(_, l)| l.len()).sum()
    }

    pub fn transform(&self, table: &Table) -> Result<Vec<Vec<f64>>> {
        let width = self.width();
        let mut rows = vec![vec![0.0; width]; table.n_rows()];
        let mut offset = 0;
        for (name, levels) in &self.columns {
            let col = table.column(name)?;
            let index: HashMap<&str, usize> =
                levels.iter().enumerate().map(|(k, l)| (l.as_str(), k)).collect();
            for (i, row) in rows.iter_mut().enumerate() {
                if let Some(&k) = index.get(col.level_key(i).as_str()) {
                    row[offset + k] = 1.0;
                }
            }
            offset += levels.len();
        }
        Ok(rows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextNetModel {
    version: u32,
    spec: TextNetSpec,
    text_col: String,
    covariates: OneHot,
    treatment_col: String,
    outcome_col: String,
    vocabulary: Vocabulary,
    params: TextNetParams,
    /// Mean unscaled cross-entropy over the training set after each epoch.
    loss_history: Vec<f64>,
}

fn examples(
    table: &Table,
    text_col: &str,
    covariates: &OneHot,
    vocabulary: &Vocabulary,
    labels: Option<(&[u8], &[f64])>,
) -> Result<Vec<Example>> {
    let texts = table.text(text_col)?;
    let c = covariates.transform(table)?;
    Ok(texts
        .iter()
        .zip(c)
        .enumerate()
        .map(|(i, (text, covariates))| Example {
            tokens: vocabulary.token_indices(text),
            covariates,
            t: labels.map_or(0, |(t, _)| t[i]),
            y: labels.map_or(0.0, |(_, y)| y[i]),
        })
        .collect())
}

/// Mean unscaled cross-entropy.
pub fn mean_loss(params: &TextNetParams, data: &[Example]) -> f64 {
    batch_loss(params, data, 1.0) / data.len().max(1) as f64
}

/// Minibatch SGD on the per-head cross-entropy.
pub fn train(
    table: &Table,
    text_col: &str,
    covariate_cols: &[String],
    treatment_col: &str,
    outcome_col: &str,
    spec: &TextNetSpec,
) -> Result<TextNetModel> {
    spec.validate()?;
    let t = table.binary(treatment_col)?;
    let y: Vec<f64> = table.binary(outcome_col)?.into_iter().map(f64::from).collect();
    if !t.contains(&1) {
        return Err(Error::Positivity {
            arm: "treated (T=1)",
        });
    }
    if !t.contains(&0) {
        return Err(Error::Positivity {
            arm: "control (T=0)",
        });
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::DegenerateTarget(format!(
            "outcome `{outcome_col}` contains a single class"
        )));
    }
    let vocabulary = fit_vocabulary(&table.text(text_col)?, &spec.vectorizer)?;
    let covariates = OneHot::fit(table, covariate_cols)?;
    let data = examples(table, text_col, &covariates, &vocabulary, Some((&t, &y)))?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    shuffle_rng.set_stream(1);
    let mut params = TextNetParams::initialize(
        vocabulary.len(),
        spec.embed_dim,
        covariates.width(),
        mean(&y),
        &mut init_rng,
    );
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_history = Vec::with_capacity(spec.epochs);
    for _ in 0..spec.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(spec.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| data[i].clone()).collect();
            let grad = batch_gradient(&params, &batch, spec.q_weight);
            sgd_step(&mut params, &grad, spec.learning_rate);
        }
        if !params.is_finite() {
            return Err(Error::DegenerateTarget(
                "training diverged; lower the learning rate".into(),
            ));
        }
        loss_history.push(mean_loss(&params, &data));
    }
    Ok(TextNetModel {
        version: FORMAT_VERSION,
        spec: spec.clone(),
        text_col: text_col.to_string(),
        covariates,
        treatment_col: treatment_col.to_string(),
        outcome_col: outcome_col.to_string(),
        vocabulary,
        params,
        loss_history,
    })
}

impl TextNetModel {
    pub fn spec(&self) -> &TextNetSpec {
        &self.spec
    }

    pub fn params(&self) -> &TextNetParams {
        &self.params
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn text_col(&self) -> &str {
        &self.text_col
    }

    pub fn treatment_col(&self) -> &str {
        &self.treatment_col
    }

    pub fn outcome_col(&self) -> &str {
        &self.outcome_col
    }

    pub fn covariate_cols(&self) -> Vec<String> {
        self.covariates.columns.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    /// Per-row `Q(1,·) − Q(0,·)`.
    pub fn predict_ite(&self, table: &Table) -> Result<Vec<f64>> {
        let data = examples(table, &self.text_col, &self.covariates, &self.vocabulary, None)?;
        Ok(data
            .iter()
            .map(|ex| {
                let b = encode(&ex.tokens, &self.params);
                sigmoid(logit(1, &b, &ex.covariates, &self.params))
                    - sigmoid(logit(0, &b, &ex.covariates, &self.params))
            })
            .collect())
    }

    pub fn estimate_ate(
        &self,
        table: &Table,
        mask: Option<&Mask>,
        bootstrap: usize,
        seed: u64,
    ) -> Result<EffectEstimate> {
        summarize_ites(METHOD_LABEL, &self.predict_ite(table)?, mask, bootstrap, seed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: TextNetModel = serde_json::from_str(s)?;
        model.check_version()?;
        Ok(model)
    }

    pub(crate) fn check_version(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported textnet format version {}",
                self.version
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        TextNetModel::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::Column;

    fn tiny_params() -> TextNetParams {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = TextNetParams::initialize(3, 2, 2, 0.5, &mut rng);
        p.heads[1].text = vec![0.5, -0.25];
        p
    }

    #[test]
    fn encode_single_and_pair() {
        let p = tiny_params();
        assert_eq!(encode(&[1], &p), p.embeddings[2..4].to_vec());
        let two = encode(&[0, 2], &p);
        for j in 0..2 {
            assert_eq!(two[j], (p.embeddings[j] + p.embeddings[4 + j]) / 2.0);
        }
        assert_eq!(encode(&[], &p), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_params_give_half() {
        let p = TextNetParams::zeros(4, 3, 2);
        assert_eq!(forward(1, &[0.3, 0.1, 0.2], &[1.0, 0.0], &p).unwrap(), 0.5);
    }

    #[test]
    fn hand_set_logit_ln3() {
        let mut p = TextNetParams::zeros(1, 1, 1);
        p.heads[1].text = vec![1.0];
        p.heads[1].covariates = vec![0.5];
        p.bias = 3f64.ln() - 2.0;
        let q = forward(1, &[1.0], &[2.0], &p).unwrap();
        assert!((q - 0.75).abs() < 1e-12);
    }

    #[test]
    fn forward_dimension_checked() {
        let p = TextNetParams::zeros(1, 2, 1);
        assert!(forward(0, &[1.0], &[0.0], &p).is_err());
        assert!(forward(0, &[1.0, 0.0], &[], &p).is_err());
        assert!(forward(2, &[1.0, 0.0], &[0.0], &p).is_err());
    }

    #[test]
    fn identical_heads_give_zero_ite() {
        let table = Table::new(vec![
            Column::text("w", vec!["good day".into(), "bad day".into(), "good".into(), "bad".into()]),
            Column::binary("c", vec![0, 1, 0, 1]),
            Column::binary("t", vec![1, 0, 1, 0]),
            Column::binary("y", vec![1, 0, 0, 1]),
        ])
        .unwrap();
        let spec = TextNetSpec {
            embed_dim: 3,
            epochs: 2,
            vectorizer: VectorizerConfig {
                min_df: 1,
                ..VectorizerConfig::default()
            },
            ..TextNetSpec::default()
        };
        let mut model = train(&table, "w", &["c".into()], "t", "y", &spec).unwrap();
        model.params.heads[0] = model.params.heads[1].clone();
        let est = model.estimate_ate(&table, None, 0, 0).unwrap();
        assert_eq!(est.ate, 0.0);
    }
}
