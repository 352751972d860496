//! Text-confounded datasets with an exactly known treatment effect.
//!
//! A binary confounder `C` (product type) drives both the binary treatment
//! `T` (true sentiment) and the binary outcome `Y` (clicked). Each row's text
//! is emitted from a `(T, C)`-dependent token distribution, so the treatment
//! can be recovered from the text and the text also carries confounding
//! signal. Rows may additionally carry a marker token whose presence raises
//! the treated outcome probability, giving a known heterogeneous effect.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::autocoder::Lexicon;
use crate::error::{Error, Result};
use crate::tabular::{Column, Table};

pub const CONFOUNDER_COL: &str = "C_true";
pub const TREATMENT_COL: &str = "T_true";
pub const TEXT_COL: &str = "text";
pub const OUTCOME_COL: &str = "Y_sim";

const C0_WORDS: &str = "kitchen blender toaster kettle skillet pan knife mug spatula grater \
    oven microwave cutlery cookware ladle whisk colander saucepan juicer mixer";
const C1_WORDS: &str = "toy puzzle blocks doll crayons stroller rattle teether playmat plush \
    lego costume kite marbles sandbox tricycle bubbles stacker xylophone scooter";
const NEUTRAL_WORDS: &str = "the a it this i we my was is and for with after box order \
    item package day week arrived size color came bought use used time also still";

/// Knobs for the built-in emission model.
///
/// Each token is a sentiment token with probability `sentiment_share`, a
/// product-type token with probability `confounder_share`, otherwise neutral.
/// Within the sentiment group, tokens matching the row's treatment are
/// `signal_odds` times as likely as the opposite polarity; likewise for the
/// product-type group and the confounder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmissionConfig {
    pub mean_length: f64,
    pub sentiment_share: f64,
    pub confounder_share: f64,
    pub signal_odds: f64,
}

impl Default for EmissionConfig {
    fn default() -> Self {
        EmissionConfig {
            mean_length: 20.0,
            sentiment_share: 0.85,
            confounder_share: 0.10,
            signal_odds: 3.0,
        }
    }
}

/// Explicit per-cell token emission weights. `weights[t][c][k]` is the
/// relative weight of `tokens[k]` in cell `(T = t, C = c)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextModel {
    pub mean_length: f64,
    pub tokens: Vec<String>,
    pub weights: [[Vec<f64>; 2]; 2],
}

impl TextModel {
    pub fn from_emission(cfg: &EmissionConfig) -> Result<TextModel> {
        let shares_ok = cfg.sentiment_share >= 0.0
            && cfg.confounder_share >= 0.0
            && cfg.sentiment_share + cfg.confounder_share <= 1.0;
        if !shares_ok || !(cfg.signal_odds > 0.0) || !(cfg.mean_length > 0.0) {
            return Err(Error::Config("invalid emission configuration".into()));
        }
        let lex = Lexicon::default_sentiment();
        let sorted = |label: &str| {
            let mut v: Vec<String> = lex
                .terms(label)
                .map(|t| t.keys().cloned().collect())
                .unwrap_or_default();
            v.sort();
            v
        };
        let words = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
        let groups = [
            sorted("positive"),
            sorted("negative"),
            words(C1_WORDS),
            words(C0_WORDS),
            words(NEUTRAL_WORDS),
        ];
        let odds = cfg.signal_odds / (1.0 + cfg.signal_odds);
        let neutral = 1.0 - cfg.sentiment_share - cfg.confounder_share;
        let mut tokens = Vec::new();
        let mut weights: [[Vec<f64>; 2]; 2] = Default::default();
        for (g, group) in groups.iter().enumerate() {
            for word in group {
                tokens.push(word.clone());
                for t in 0..2 {
                    for c in 0..2 {
                        let aligned = |flag: usize, positive_group: bool| {
                            if (flag == 1) == positive_group {
                                odds
                            } else {
                                1.0 - odds
                            }
                        };
                        let mass = match g {
                            0 => cfg.sentiment_share * aligned(t, true),
                            1 => cfg.sentiment_share * aligned(t, false),
                            2 => cfg.confounder_share * aligned(c, true),
                            3 => cfg.confounder_share * aligned(c, false),
                            _ => neutral,
                        };
                        weights[t][c].push(mass / group.len() as f64);
                    }
                }
            }
        }
        Ok(TextModel {
            mean_length: cfg.mean_length,
            tokens,
            weights,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Config("text model vocabulary is empty".into()));
        }
        if !(self.mean_length >= 0.0 && self.mean_length.is_finite()) {
            return Err(Error::Config("mean document length must be non-negative".into()));
        }
        for row in &self.weights {
            for w in row {
                if w.len() != self.tokens.len() || w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                    return Err(Error::Config("emission weights must be non-negative, one per token".into()));
                }
                if w.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::Config("every cell needs positive emission mass".into()));
                }
            }
        }
        Ok(())
    }
}

/// A real text tagged with the cell it belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedText {
    pub t: u8,
    pub c: u8,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSource {
    Emission(EmissionConfig),
    Weights(TextModel),
    /// Texts drawn without replacement from the matching cell's pool.
    Pool(Vec<TaggedText>),
}

impl Default for TextSource {
    fn default() -> Self {
        TextSource::Emission(EmissionConfig::default())
    }
}

/// Rows are marked with probability `probability`; marked rows contain
/// `token` and have `boost` added to `P(Y=1 | T=1, C)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub token: String,
    pub probability: f64,
    pub boost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub n: usize,
    pub p_c: f64,
    /// `(P(T=1 | C=0), P(T=1 | C=1))`.
    pub p_t_given_c: [f64; 2],
    /// `p_y[t][c] = P(Y=1 | T=t, C=c)`.
    pub p_y: [[f64; 2]; 2],
    #[serde(default)]
    pub text: TextSource,
    #[serde(default)]
    pub marker: Option<Marker>,
    #[serde(default)]
    pub seed: u64,
}

impl SimulationSpec {
    /// The reference configuration: balanced confounder, confounded
    /// assignment (0.2, 0.8), and a true effect of 0.20.
    pub fn reference(n: usize, seed: u64) -> SimulationSpec {
        SimulationSpec {
            n,
            p_c: 0.5,
            p_t_given_c: [0.2, 0.8],
            p_y: [[0.2, 0.6], [0.4, 0.8]],
            text: TextSource::default(),
            marker: None,
            seed,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SimulationSpec> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let spec: SimulationSpec = serde_json::from_str(&s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        let mut all = vec![self.p_c];
        all.extend(self.p_t_given_c);
        all.extend(self.p_y.iter().flatten());
        if !all.into_iter().all(prob) {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        if let Some(m) = &self.marker {
            if !prob(m.probability) || !(m.boost.is_finite()) {
                return Err(Error::Config("invalid marker probability or boost".into()));
            }
            if !self.p_y[1].iter().all(|&p| prob(p + m.boost)) {
                return Err(Error::Config("boosted outcome probability leaves [0, 1]".into()));
            }
            if m.token.is_empty() || !m.token.chars().all(char::is_alphanumeric) {
                return Err(Error::Config("marker token must be a single alphanumeric word".into()));
            }
        }
        match &self.text {
            TextSource::Emission(cfg) => TextModel::from_emission(cfg)?.validate(),
            TextSource::Weights(m) => m.validate(),
            TextSource::Pool(pool) => {
                for (t, c) in self.active_cells() {
                    if !pool.iter().any(|x| x.t == t && x.c == c) {
                        return Err(Error::Config(format!(
                            "corpus pool has no texts for cell T={t}, C={c}"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Cells with positive probability.
    fn active_cells(&self) -> Vec<(u8, u8)> {
        let mut cells = Vec::new();
        for c in 0..2u8 {
            let pc = if c == 1 { self.p_c } else { 1.0 - self.p_c };
            for t in 0..2u8 {
                let pt = if t == 1 {
                    self.p_t_given_c[c as usize]
                } else {
                    1.0 - self.p_t_given_c[c as usize]
                };
                if pc > 0.0 && pt > 0.0 {
                    cells.push((t, c));
                }
            }
        }
        cells
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTruth {
    pub marked: f64,
    pub unmarked: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleTruth {
    pub ate_true: f64,
    pub cate_true: Option<ConditionalTruth>,
    pub p_c: f64,
    pub p_t_given_c: [f64; 2],
    pub p_y: [[f64; 2]; 2],
    pub marker: Option<Marker>,
}

impl OracleTruth {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `Σ_c P(c)·[P(Y=1|1,c) − P(Y=1|0,c)]`, plus `P(marked)·boost` when a marker
/// is set. Evaluated in decimal arithmetic on the shortest decimal form of
/// each probability, so decimal inputs give the decimal answer (0.20, not
/// 0.20000000000000004); falls back to binary arithmetic if a value does not
/// fit a decimal.
pub fn oracle_ate(spec: &SimulationSpec) -> f64 {
    oracle_ate_decimal(spec).unwrap_or_else(|| oracle_ate_binary(spec))
}

fn oracle_ate_binary(spec: &SimulationSpec) -> f64 {
    let base = (1.0 - spec.p_c) * (spec.p_y[1][0] - spec.p_y[0][0])
        + spec.p_c * (spec.p_y[1][1] - spec.p_y[0][1]);
    match &spec.marker {
        Some(m) => base + m.probability * m.boost,
        None => base,
    }
}

fn oracle_ate_decimal(spec: &SimulationSpec) -> Option<f64> {
    let d = |x: f64| Decimal::from_str_exact(&x.to_string()).ok();
    let p_c = d(spec.p_c)?;
    let one = Decimal::ONE;
    let c0 = (one - p_c).checked_mul(d(spec.p_y[1][0])?.checked_sub(d(spec.p_y[0][0])?)?)?;
    let c1 = p_c.checked_mul(d(spec.p_y[1][1])?.checked_sub(d(spec.p_y[0][1])?)?)?;
    let mut ate = c0.checked_add(c1)?;
    if let Some(m) = &spec.marker {
        ate = ate.checked_add(d(m.probability)?.checked_mul(d(m.boost)?)?)?;
    }
    ate.to_string().parse().ok()
}

pub fn oracle_truth(spec: &SimulationSpec) -> OracleTruth {
    let base = oracle_ate(&SimulationSpec {
        marker: None,
        ..spec.clone()
    });
    OracleTruth {
        ate_true: oracle_ate(spec),
        cate_true: spec.marker.as_ref().map(|m| ConditionalTruth {
            marked: oracle_ate(&SimulationSpec {
                marker: Some(Marker {
                    probability: 1.0,
                    ..m.clone()
                }),
                ..spec.clone()
            }),
            unmarked: base,
        }),
        p_c: spec.p_c,
        p_t_given_c: spec.p_t_given_c,
        p_y: spec.p_y,
        marker: spec.marker.clone(),
    }
}

/// Replaces synthetic emission with sampling from a pool of real texts.
pub fn inject_corpus(spec: &SimulationSpec, texts: Vec<TaggedText>) -> Result<SimulationSpec> {
    let out = SimulationSpec {
        text: TextSource::Pool(texts),
        ..spec.clone()
    };
    out.validate()?;
    Ok(out)
}

enum Emitter {
    Synthetic {
        tokens: Vec<String>,
        cells: Vec<WeightedIndex<f64>>,
        length: Option<Poisson<f64>>,
    },
    Pool(BTreeMap<(u8, u8), std::vec::IntoIter<String>>),
}

impl Emitter {
    fn new(source: &TextSource, rng: &mut ChaCha8Rng) -> Result<Emitter> {
        let model = match source {
            TextSource::Emission(cfg) => TextModel::from_emission(cfg)?,
            TextSource::Weights(m) => m.clone(),
            TextSource::Pool(pool) => {
                let mut cells: BTreeMap<(u8, u8), Vec<String>> = BTreeMap::new();
                for x in pool {
                    cells.entry((x.t, x.c)).or_default().push(x.text.clone());
                }
                let cells = cells
                    .into_iter()
                    .map(|(k, mut v)| {
                        v.shuffle(rng);
                        (k, v.into_iter())
                    })
                    .collect();
                return Ok(Emitter::Pool(cells));
            }
        };
        let mut cells = Vec::with_capacity(4);
        for t in 0..2 {
            for c in 0..2 {
                cells.push(
                    WeightedIndex::new(&model.weights[t][c])
                        .map_err(|e| Error::Config(format!("bad emission weights: {e}")))?,
                );
            }
        }
        let length = if model.mean_length > 0.0 {
            Some(
                Poisson::new(model.mean_length)
                    .map_err(|e| Error::Config(format!("bad mean length: {e}")))?,
            )
        } else {
            None
        };
        Ok(Emitter::Synthetic {
            tokens: model.tokens,
            cells,
            length,
        })
    }

    fn emit(&mut self, t: u8, c: u8, rng: &mut ChaCha8Rng) -> Result<Vec<String>> {
        match self {
            Emitter::Synthetic {
                tokens,
                cells,
                length,
            } => {
                let len = length.as_ref().map_or(0, |d| d.sample(rng) as usize);
                let dist = &cells[2 * t as usize + c as usize];
                Ok((0..len).map(|_| tokens[dist.sample(rng)].clone()).collect())
            }
            Emitter::Pool(cells) => cells
                .get_mut(&(t, c))
                .and_then(Iterator::next)
                .map(|s| vec![s])
                .ok_or_else(|| {
                    Error::Config(format!("corpus pool for cell T={t}, C={c} is exhausted"))
                }),
        }
    }
}

/// Draws `spec.n` rows with columns `C_true`, `T_true`, `text`, `Y_sim`.
pub fn simulate(spec: &SimulationSpec) -> Result<(Table, OracleTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut emitter = Emitter::new(&spec.text, &mut rng)?;
    let mut cs = Vec::with_capacity(spec.n);
    let mut ts = Vec::with_capacity(spec.n);
    let mut ys = Vec::with_capacity(spec.n);
    let mut texts = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let c = u8::from(rng.random::<f64>() < spec.p_c);
        let t = u8::from(rng.random::<f64>() < spec.p_t_given_c[c as usize]);
        let mut p = spec.p_y[t as usize][c as usize];
        let mut words = emitter.emit(t, c, &mut rng)?;
        if let Some(m) = &spec.marker {
            if rng.random::<f64>() < m.probability {
                if t == 1 {
                    p += m.boost;
                }
                let at = rng.random_range(0..=words.len());
                words.insert(at, m.token.clone());
            }
        }
        let y = u8::from(rng.random::<f64>() < p);
        cs.push(c);
        ts.push(t);
        ys.push(y);
        texts.push(words.join(" "));
    }
    let table = Table::new(vec![
        Column::binary(CONFOUNDER_COL, cs),
        Column::binary(TREATMENT_COL, ts),
        Column::text(TEXT_COL, texts),
        Column::binary(OUTCOME_COL, ys),
    ])?;
    Ok((table, oracle_truth(spec)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_oracle_is_point_two() {
        assert_eq!(oracle_ate(&SimulationSpec::reference(10, 0)), 0.20);
    }

    #[test]
    fn flat_outcome_has_zero_effect() {
        let spec = SimulationSpec {
            p_y: [[0.3, 0.3], [0.3, 0.3]],
            ..SimulationSpec::reference(10, 0)
        };
        assert_eq!(oracle_ate(&spec), 0.0);
    }

    #[test]
    fn marker_effect_is_integrated() {
        let spec = SimulationSpec {
            marker: Some(Marker {
                token: "toddler".into(),
                probability: 0.25,
                boost: 0.2,
            }),
            ..SimulationSpec::reference(10, 0)
        };
        let truth = oracle_truth(&spec);
        assert!((truth.ate_true - 0.25).abs() < 1e-12);
        let cate = truth.cate_true.unwrap();
        assert!((cate.marked - 0.4).abs() < 1e-12);
        assert!((cate.unmarked - 0.2).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = SimulationSpec::reference(10, 0);
        spec.p_c = 1.5;
        assert!(simulate(&spec).is_err());
        let spec = SimulationSpec {
            marker: Some(Marker {
                token: "x".into(),
                probability: 0.5,
                boost: 0.3,
            }),
            ..SimulationSpec::reference(10, 0)
        };
        assert!(spec.validate().is_err());
        let spec = SimulationSpec {
            text: TextSource::Weights(TextModel {
                mean_length: 5.0,
                tokens: vec![],
                weights: Default::default(),
            }),
            ..SimulationSpec::reference(10, 0)
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = simulate(&SimulationSpec::reference(200, 4)).unwrap().0;
        let b = simulate(&SimulationSpec::reference(200, 4)).unwrap().0;
        let c = simulate(&SimulationSpec::reference(200, 5)).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.column_names(), vec!["C_true", "T_true", "text", "Y_sim"]);
    }

    #[test]
    fn marked_rows_contain_token() {
        let spec = SimulationSpec {
            marker: Some(Marker {
                token: "toddler".into(),
                probability: 0.3,
                boost: 0.1,
            }),
            ..SimulationSpec::reference(500, 1)
        };
        let (table, _) = simulate(&spec).unwrap();
        let marked = table
            .text(TEXT_COL)
            .unwrap()
            .iter()
            .filter(|t| t.split(' ').any(|w| w == "toddler"))
            .count();
        assert!(marked > 100 && marked < 200, "{marked}");
    }

    fn pool(per_cell: usize) -> Vec<TaggedText> {
        let mut v = Vec::new();
        for t in 0..2 {
            for c in 0..2 {
                for k in 0..per_cell {
                    v.push(TaggedText {
                        t,
                        c,
                        text: format!("review t{t} c{c} number{k}"),
                    });
                }
            }
        }
        v
    }

    #[test]
    fn injected_pool_used_without_replacement() {
        let base = SimulationSpec::reference(40, 2);
        let spec = inject_corpus(&base, pool(40)).unwrap();
        assert_eq!(oracle_ate(&spec), oracle_ate(&base));
        let (table, _) = simulate(&spec).unwrap();
        let texts = table.text(TEXT_COL).unwrap();
        let mut unique = texts.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), texts.len());
        let t = table.binary(TREATMENT_COL).unwrap();
        let c = table.binary(CONFOUNDER_COL).unwrap();
        for i in 0..texts.len() {
            assert!(texts[i].starts_with(&format!("review t{} c{}", t[i], c[i])));
        }
    }

    #[test]
    fn empty_cell_pool_rejected() {
        let mut p = pool(3);
        p.retain(|x| !(x.t == 1 && x.c == 0));
        assert!(inject_corpus(&SimulationSpec::reference(10, 0), p).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = SimulationSpec::reference(100, 9);
        let json = serde_json::to_string(&spec).unwrap();
        let back: SimulationSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let minimal: SimulationSpec = serde_json::from_str(
            r#"{"n": 10, "p_c": 0.5, "p_t_given_c": [0.2, 0.8], "p_y": [[0.2, 0.6], [0.4, 0.8]]}"#,
        )
        .unwrap();
        assert_eq!(minimal.text, TextSource::default());
    }
}
