//! S-, T-, X-, and R-Learners over pluggable base learners.
//!
//! Every component learner of one [`CausalModel`] sees the same feature space,
//! built by a single [`DesignRecipe`] whose TF-IDF vocabulary is fit once on
//! the full text column. Binary outcomes are modelled by classifiers, so ITEs
//! are on the probability scale.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{self, mean, FittedLearner, LearnerSpec, Task};
use crate::tabular::{ColumnKind, DesignRecipe, FeatureMatrix, Table};
use crate::text_vectorizer::{fit_vocabulary, VectorizerConfig};

const FORMAT_VERSION: u32 = 1;
pub const PROPENSITY_CLIP: (f64, f64) = (0.01, 0.99);
pub const DEFAULT_BOOTSTRAP: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    S,
    T,
    X,
    R,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::S => "s-learner",
            Method::T => "t-learner",
            Method::X => "x-learner",
            Method::R => "r-learner",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase();
        let key = key.trim_end_matches("-learner").trim_end_matches("learner");
        match key {
            "s" => Ok(Method::S),
            "t" => Ok(Method::T),
            "x" => Ok(Method::X),
            "r" => Ok(Method::R),
            _ => Err(Error::Config(format!("unknown meta-learner `{s}`"))),
        }
    }
}

fn default_folds() -> usize {
    5
}

/// Configuration of one meta-learner fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalSpec {
    pub method: Method,
    pub treatment_col: String,
    pub outcome_col: String,
    #[serde(default)]
    pub include_cols: Vec<String>,
    #[serde(default)]
    pub text_col: Option<String>,
    #[serde(default)]
    pub ignore_cols: Vec<String>,
    /// Outcome models (μ̂, μ̂0, μ̂1, m̂).
    #[serde(default = "LearnerSpec::gbdt")]
    pub outcome_learner: LearnerSpec,
    /// X-Learner stage-2 and R-Learner final-stage model; defaults to the
    /// regression counterpart of `outcome_learner`.
    #[serde(default)]
    pub effect_learner: Option<LearnerSpec>,
    #[serde(default = "LearnerSpec::logistic")]
    pub propensity_learner: LearnerSpec,
    #[serde(default)]
    pub vectorizer: VectorizerConfig,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
}

impl CausalSpec {
    pub fn new(
        method: Method,
        treatment_col: impl Into<String>,
        outcome_col: impl Into<String>,
    ) -> CausalSpec {
        CausalSpec {
            method,
            treatment_col: treatment_col.into(),
            outcome_col: outcome_col.into(),
            include_cols: Vec::new(),
            text_col: None,
            ignore_cols: Vec::new(),
            outcome_learner: LearnerSpec::gbdt(),
            effect_learner: None,
            propensity_learner: LearnerSpec::logistic(),
            vectorizer: VectorizerConfig::default(),
            folds: default_folds(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.treatment_col == self.outcome_col {
            return Err(Error::Config("treatment and outcome columns must differ".into()));
        }
        for role in [&self.treatment_col, &self.outcome_col] {
            if self.include_cols.contains(role) {
                return Err(Error::Config(format!(
                    "`{role}` cannot also be an included covariate"
                )));
            }
            if self.text_col.as_ref() == Some(role) {
                return Err(Error::Config(format!("`{role}` cannot also be the text column")));
            }
        }
        if let Some(t) = &self.text_col {
            if self.include_cols.contains(t) {
                return Err(Error::Config(format!(
                    "text column `{t}` cannot also be an included covariate"
                )));
            }
        }
        if self.method == Method::R && self.folds < 2 {
            return Err(Error::Config("cross-fitting needs at least 2 folds".into()));
        }
        self.outcome_learner.validate()?;
        self.propensity_learner.validate()?;
        if let Some(e) = &self.effect_learner {
            e.validate()?;
        }
        self.vectorizer.validate()
    }

    fn effect_spec(&self) -> LearnerSpec {
        self.effect_learner
            .clone()
            .unwrap_or_else(|| self.outcome_learner.for_regression())
    }

    fn outcome_spec(&self, task: Task) -> LearnerSpec {
        match task {
            Task::Regression => self.outcome_learner.for_regression(),
            Task::Classification => self.outcome_learner.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Components {
    S {
        mu: FittedLearner,
    },
    T {
        mu0: FittedLearner,
        mu1: FittedLearner,
    },
    X {
        mu0: FittedLearner,
        mu1: FittedLearner,
        tau0: FittedLearner,
        tau1: FittedLearner,
        g: FittedLearner,
    },
    R {
        m_folds: Vec<FittedLearner>,
        e_folds: Vec<FittedLearner>,
        tau: FittedLearner,
    },
}

/// Overlap diagnostics recorded at fit time. Never fatal.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_treated: usize,
    pub n_control: usize,
    /// Share of fitted propensities that hit a clipping bound (X and R only).
    pub clipped_fraction: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalModel {
    version: u32,
    spec: CausalSpec,
    outcome_task: Task,
    recipe: DesignRecipe,
    components: Components,
    diagnostics: Diagnostics,
}

/// Row selection for conditional effects.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub rows: Vec<bool>,
    pub description: String,
}

impl Mask {
    pub fn new(rows: Vec<bool>, description: impl Into<String>) -> Mask {
        Mask {
            rows,
            description: description.into(),
        }
    }

    /// Rows whose `text_col` contains `needle` as a substring.
    pub fn text_contains(table: &Table, text_col: &str, needle: &str) -> Result<Mask> {
        let texts = table.text(text_col)?;
        Ok(Mask::new(
            texts.iter().map(|t| t.contains(needle)).collect(),
            format!("{text_col} contains {needle:?}"),
        ))
    }

    pub fn complement(&self) -> Mask {
        Mask::new(
            self.rows.iter().map(|r| !r).collect(),
            format!("not ({})", self.description),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub method: String,
    pub ate: f64,
    pub std_error: f64,
    pub n: usize,
    pub mask: Option<String>,
    pub runtime_seconds: Option<f64>,
}

impl EffectEstimate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Sample-average effect of `ites` over the masked rows, with a row-resampling
/// bootstrap standard error over `bootstrap` replicates.
pub fn summarize_ites(
    method: &str,
    ites: &[f64],
    mask: Option<&Mask>,
    bootstrap: usize,
    seed: u64,
) -> Result<EffectEstimate> {
    let selected: Vec<f64> = match mask {
        Some(m) => {
            if m.rows.len() != ites.len() {
                return Err(Error::Schema(format!(
                    "mask has {} entries for {} rows",
                    m.rows.len(),
                    ites.len()
                )));
            }
            ites.iter()
                .zip(&m.rows)
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| v)
                .collect()
        }
        None => ites.to_vec(),
    };
    if selected.is_empty() {
        return Err(Error::EmptySelection);
    }
    let ate = mean(&selected);
    let std_error = bootstrap_sd(&selected, bootstrap, seed);
    Ok(EffectEstimate {
        method: method.to_string(),
        ate,
        std_error,
        n: selected.len(),
        mask: mask.map(|m| m.description.clone()),
        runtime_seconds: None,
    })
}

pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

fn bootstrap_sd(values: &[f64], replicates: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let means: Vec<f64> = (0..replicates)
        .map(|_| {
            let draw: Vec<f64> = (0..n).map(|_| values[rng.random_range(0..n)]).collect();
            mean(&draw)
        })
        .collect();
    sample_sd(&means)
}

/// Difference in outcome means between arms, with its analytic standard
/// error `sqrt(s1²/n1 + s0²/n0)`.
pub fn naive_ate(table: &Table, treatment_col: &str, outcome_col: &str) -> Result<EffectEstimate> {
    let t = table.binary(treatment_col)?;
    let y = outcome_values(table, outcome_col)?.0;
    let (y1, y0) = split_arms(&t, &y);
    check_arms(y1.len(), y0.len())?;
    Ok(EffectEstimate {
        method: "naive".into(),
        ate: mean(&y1) - mean(&y0),
        std_error: (sample_var(&y1) / y1.len() as f64 + sample_var(&y0) / y0.len() as f64).sqrt(),
        n: t.len(),
        mask: None,
        runtime_seconds: None,
    })
}

fn sample_var(v: &[f64]) -> f64 {
    let sd = sample_sd(v);
    sd * sd
}

fn split_arms(t: &[u8], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut y1 = Vec::new();
    let mut y0 = Vec::new();
    for (&ti, &yi) in t.iter().zip(y) {
        if ti == 1 {
            y1.push(yi);
        } else {
            y0.push(yi);
        }
    }
    (y1, y0)
}

fn check_arms(n1: usize, n0: usize) -> Result<()> {
    if n1 == 0 {
        return Err(Error::Positivity {
            arm: "treated (T=1)",
        });
    }
    if n0 == 0 {
        return Err(Error::Positivity {
            arm: "control (T=0)",
        });
    }
    Ok(())
}

fn outcome_values(table: &Table, outcome_col: &str) -> Result<(Vec<f64>, Task)> {
    let col = table.column(outcome_col)?;
    match col.kind() {
        ColumnKind::Binary => Ok((
            table.binary(outcome_col)?.into_iter().map(f64::from).collect(),
            Task::Classification,
        )),
        ColumnKind::Numeric => {
            let y = table.numeric(outcome_col)?;
            if y.iter().any(|v| v.is_nan()) {
                return Err(Error::DegenerateTarget(format!(
                    "outcome `{outcome_col}` has missing values"
                )));
            }
            Ok((y, Task::Regression))
        }
        k => Err(Error::Schema(format!(
            "outcome `{outcome_col}` is {k}; expected binary or numeric"
        ))),
    }
}

fn clip(p: f64) -> f64 {
    p.clamp(PROPENSITY_CLIP.0, PROPENSITY_CLIP.1)
}

fn indices_where(t: &[u8], value: u8) -> Vec<usize> {
    (0..t.len()).filter(|&i| t[i] == value).collect()
}

fn pick(v: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| v[i]).collect()
}

fn with_fold_context<T>(fold: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::DegenerateTarget(m) => {
            Error::DegenerateTarget(format!("cross-fitting fold {fold}: {m}"))
        }
        other => other,
    })
}

/// Fits the meta-learner named by `spec.method`.
pub fn fit(table: &Table, spec: &CausalSpec) -> Result<CausalModel> {
    spec.validate()?;
    let t = table.binary(&spec.treatment_col)?;
    let (y, outcome_task) = outcome_values(table, &spec.outcome_col)?;
    let treated = indices_where(&t, 1);
    let control = indices_where(&t, 0);
    check_arms(treated.len(), control.len())?;

    let vocabulary = match &spec.text_col {
        Some(col) => Some(fit_vocabulary(&table.text(col)?, &spec.vectorizer)?),
        None => None,
    };
    let recipe = DesignRecipe::fit(
        table,
        &spec.include_cols,
        spec.text_col.as_deref(),
        vocabulary,
        &spec.ignore_cols,
    )?;
    let x = recipe.transform(table)?;
    let tf: Vec<f64> = t.iter().map(|&v| f64::from(v)).collect();
    let outcome = spec.outcome_spec(outcome_task);
    let seed = spec.seed;

    let mut diagnostics = Diagnostics {
        n_treated: treated.len(),
        n_control: control.len(),
        ..Diagnostics::default()
    };

    let components = match spec.method {
        Method::T => {
            let (mu0, mu1) = fit_arms(&outcome, &x, &y, &control, &treated, outcome_task, seed)?;
            Components::T { mu0, mu1 }
        }
        Method::S => {
            let xs = x.with_column(&spec.treatment_col, &tf)?;
            let mu = learners::fit(&outcome.with_seed(seed), &xs, &y, None, outcome_task)?;
            Components::S { mu }
        }
        Method::X => {
            let (mu0, mu1) = fit_arms(&outcome, &x, &y, &control, &treated, outcome_task, seed)?;
            let (p0, p1) = (mu0.predict(&x)?, mu1.predict(&x)?);
            let d1: Vec<f64> = treated.iter().map(|&i| y[i] - p0[i]).collect();
            let d0: Vec<f64> = control.iter().map(|&i| p1[i] - y[i]).collect();
            let effect = spec.effect_spec();
            let x0 = x.select_rows(&control);
            let x1 = x.select_rows(&treated);
            let (tau0, (tau1, g)) = rayon::join(
                || learners::fit(&effect.with_seed(seed + 2), &x0, &d0, None, Task::Regression),
                || {
                    rayon::join(
                        || learners::fit(&effect.with_seed(seed + 3), &x1, &d1, None, Task::Regression),
                        || {
                            learners::fit(
                                &spec.propensity_learner.with_seed(seed + 4),
                                &x,
                                &tf,
                                None,
                                Task::Classification,
                            )
                        },
                    )
                },
            );
            let g = g?;
            diagnostics.clipped_fraction = Some(clipped_fraction(&g.predict(&x)?));
            Components::X {
                mu0,
                mu1,
                tau0: tau0?,
                tau1: tau1?,
                g,
            }
        }
        Method::R => fit_r(spec, &x, &y, &tf, &outcome, outcome_task, &mut diagnostics)?,
    };

    for (arm, n) in [("treated", diagnostics.n_treated), ("control", diagnostics.n_control)] {
        if n < 10 {
            diagnostics
                .warnings
                .push(format!("the {arm} arm has only {n} rows"));
        }
    }
    if let Some(f) = diagnostics.clipped_fraction {
        if f > 0.0 {
            diagnostics.warnings.push(format!(
                "{:.1}% of propensities were clipped to [{}, {}]; overlap may be poor",
                100.0 * f,
                PROPENSITY_CLIP.0,
                PROPENSITY_CLIP.1
            ));
        }
    }
    for w in &diagnostics.warnings {
        log::warn!("{w}");
    }

    Ok(CausalModel {
        version: FORMAT_VERSION,
        spec: spec.clone(),
        outcome_task,
        recipe,
        components,
        diagnostics,
    })
}

fn clipped_fraction(p: &[f64]) -> f64 {
    let hits = p
        .iter()
        .filter(|&&v| v <= PROPENSITY_CLIP.0 || v >= PROPENSITY_CLIP.1)
        .count();
    hits as f64 / p.len().max(1) as f64
}

fn fit_arms(
    spec: &LearnerSpec,
    x: &FeatureMatrix,
    y: &[f64],
    control: &[usize],
    treated: &[usize],
    task: Task,
    seed: u64,
) -> Result<(FittedLearner, FittedLearner)> {
    let (a, b) = rayon::join(
        || learners::fit(&spec.with_seed(seed), &x.select_rows(control), &pick(y, control), None, task),
        || {
            learners::fit(
                &spec.with_seed(seed + 1),
                &x.select_rows(treated),
                &pick(y, treated),
                None,
                task,
            )
        },
    );
    Ok((a?, b?))
}

fn fit_r(
    spec: &CausalSpec,
    x: &FeatureMatrix,
    y: &[f64],
    t: &[f64],
    outcome: &LearnerSpec,
    task: Task,
    diagnostics: &mut Diagnostics,
) -> Result<Components> {
    use rayon::prelude::*;

    let n = x.n_rows();
    let k = spec.folds;
    if n < 5 * k {
        return Err(Error::TooFewRows(format!(
            "the R-Learner needs at least {} rows for {k} folds, got {n}",
            5 * k
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }

    type FoldFit = (FittedLearner, FittedLearner, Vec<usize>, Vec<f64>, Vec<f64>);
    let fits: Vec<Result<FoldFit>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
            let held: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
            let xt = x.select_rows(&train);
            let xh = x.select_rows(&held);
            let fold_seed = spec.seed + 10 + 2 * f as u64;
            let m = with_fold_context(
                f,
                learners::fit(&outcome.with_seed(fold_seed), &xt, &pick(y, &train), None, task),
            )?;
            let e = with_fold_context(
                f,
                learners::fit(
                    &spec.propensity_learner.with_seed(fold_seed + 1),
                    &xt,
                    &pick(t, &train),
                    None,
                    Task::Classification,
                ),
            )?;
            let m_hat = m.predict(&xh)?;
            let e_hat = e.predict(&xh)?;
            Ok((m, e, held, m_hat, e_hat))
        })
        .collect();

    let mut m_folds = Vec::with_capacity(k);
    let mut e_folds = Vec::with_capacity(k);
    let mut m_oof = vec![0.0; n];
    let mut e_raw = vec![0.0; n];
    for r in fits {
        let (m, e, held, m_hat, e_hat) = r?;
        for (j, &i) in held.iter().enumerate() {
            m_oof[i] = m_hat[j];
            e_raw[i] = e_hat[j];
        }
        m_folds.push(m);
        e_folds.push(e);
    }
    diagnostics.clipped_fraction = Some(clipped_fraction(&e_raw));

    let mut pseudo = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let t_res = t[i] - clip(e_raw[i]);
        let y_res = y[i] - m_oof[i];
        pseudo.push(y_res / t_res);
        weights.push(t_res * t_res);
    }
    let tau = learners::fit(
        &spec.effect_spec().with_seed(spec.seed + 5),
        x,
        &pseudo,
        Some(&weights),
        Task::Regression,
    )?;
    Ok(Components::R {
        m_folds,
        e_folds,
        tau,
    })
}

impl CausalModel {
    pub fn spec(&self) -> &CausalSpec {
        &self.spec
    }

    pub fn method(&self) -> Method {
        self.spec.method
    }

    pub fn outcome_task(&self) -> Task {
        self.outcome_task
    }

    pub fn recipe(&self) -> &DesignRecipe {
        &self.recipe
    }

    pub fn components(&self) -> &Components {
        &self.components
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    fn check(learner: &FittedLearner, x: &FeatureMatrix) -> Result<()> {
        if learner.fingerprint() != x.fingerprint() {
            return Err(Error::Schema(
                "feature fingerprint differs from the fitted recipe".into(),
            ));
        }
        Ok(())
    }

    fn predict_with(learner: &FittedLearner, x: &FeatureMatrix) -> Result<Vec<f64>> {
        Self::check(learner, x)?;
        learner.predict(x)
    }

    /// Per-row effect estimates τ̂(x_i).
    pub fn predict_ite(&self, table: &Table) -> Result<Vec<f64>> {
        let x = self.recipe.transform(table)?;
        let n = x.n_rows();
        let diff = |a: Vec<f64>, b: Vec<f64>| a.iter().zip(&b).map(|(p, q)| p - q).collect();
        match &self.components {
            Components::T { mu0, mu1 } => Ok(diff(
                Self::predict_with(mu1, &x)?,
                Self::predict_with(mu0, &x)?,
            )),
            Components::S { mu } => {
                let x1 = x.with_column(&self.spec.treatment_col, &vec![1.0; n])?;
                let x0 = x.with_column(&self.spec.treatment_col, &vec![0.0; n])?;
                Ok(diff(Self::predict_with(mu, &x1)?, Self::predict_with(mu, &x0)?))
            }
            Components::X {
                tau0, tau1, g, ..
            } => {
                let t0 = Self::predict_with(tau0, &x)?;
                let t1 = Self::predict_with(tau1, &x)?;
                let g = Self::predict_with(g, &x)?;
                Ok((0..n)
                    .map(|i| {
                        let gi = clip(g[i]);
                        gi * t0[i] + (1.0 - gi) * t1[i]
                    })
                    .collect())
            }
            Components::R { tau, .. } => Self::predict_with(tau, &x),
        }
    }

    /// Mean ITE over the masked rows with a row-resampling bootstrap error.
    pub fn estimate_ate(
        &self,
        table: &Table,
        mask: Option<&Mask>,
        bootstrap: usize,
        seed: u64,
    ) -> Result<EffectEstimate> {
        let ites = self.predict_ite(table)?;
        summarize_ites(self.method().label(), &ites, mask, bootstrap, seed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: CausalModel = serde_json::from_str(s)?;
        model.check_version()?;
        Ok(model)
    }

    pub(crate) fn check_version(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format version {}",
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
        CausalModel::from_json(&s)
    }
}

pub fn fit_t_learner(table: &Table, spec: &CausalSpec) -> Result<CausalModel> {
    fit(table, &CausalSpec { method: Method::T, ..spec.clone() })
}

pub fn fit_s_learner(table: &Table, spec: &CausalSpec) -> Result<CausalModel> {
    fit(table, &CausalSpec { method: Method::S, ..spec.clone() })
}

pub fn fit_x_learner(table: &Table, spec: &CausalSpec) -> Result<CausalModel> {
    fit(table, &CausalSpec { method: Method::X, ..spec.clone() })
}

pub fn fit_r_learner(table: &Table, spec: &CausalSpec) -> Result<CausalModel> {
    fit(table, &CausalSpec { method: Method::R, ..spec.clone() })
}
