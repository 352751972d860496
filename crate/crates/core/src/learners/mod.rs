//! Base learners composed by the meta-learners.
//!
//! Every learner fits on a [`FeatureMatrix`] plus targets and optional
//! sample weights, and exposes the same [`FittedLearner::predict`] contract:
//! raw values for regression, probabilities for binary classification.

mod gbdt;
mod linear;
mod logistic;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::FeatureMatrix;

pub use gbdt::{GbdtModel, GbdtSpec, Node, Tree};
pub use linear::LinearModel;
pub use logistic::{logistic_objective, LogisticModel, LogisticSpec, Objective, Penalty};

const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

/// Which base learner to fit, with its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LearnerSpec {
    /// Predicts the (weighted) mean target, ignoring all features.
    Constant,
    Linear,
    Logistic(LogisticSpec),
    Gbdt(GbdtSpec),
}

impl LearnerSpec {
    pub fn gbdt() -> Self {
        LearnerSpec::Gbdt(GbdtSpec::default())
    }

    pub fn logistic() -> Self {
        LearnerSpec::Logistic(LogisticSpec::default())
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::Logistic(s) => s.validate(),
            LearnerSpec::Gbdt(s) => s.validate(),
            _ => Ok(()),
        }
    }

    /// Regression counterpart used when a learner must fit continuous
    /// targets (imputed effects, pseudo-outcomes).
    pub fn for_regression(&self) -> LearnerSpec {
        match self {
            LearnerSpec::Logistic(_) => LearnerSpec::Linear,
            other => other.clone(),
        }
    }

    pub fn with_seed(&self, seed: u64) -> LearnerSpec {
        match self {
            LearnerSpec::Gbdt(s) => LearnerSpec::Gbdt(GbdtSpec { seed, ..s.clone() }),
            other => other.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LearnerParams {
    Constant { value: f64 },
    Linear(LinearModel),
    Logistic(LogisticModel),
    Gbdt(GbdtModel),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedLearner {
    version: u32,
    spec: LearnerSpec,
    task: Task,
    n_features: usize,
    fingerprint: String,
    params: LearnerParams,
}

fn check_inputs(x: &FeatureMatrix, y: &[f64], weights: Option<&[f64]>) -> Result<()> {
    if x.n_rows() == 0 {
        return Err(Error::TooFewRows("cannot fit on zero rows".into()));
    }
    if y.len() != x.n_rows() {
        return Err(Error::Schema(format!(
            "{} targets for {} rows",
            y.len(),
            x.n_rows()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateTarget("targets must be finite".into()));
    }
    if let Some(w) = weights {
        if w.len() != y.len() {
            return Err(Error::Schema("weight length differs from target length".into()));
        }
        if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("sample weights must be non-negative with positive sum".into()));
        }
    }
    Ok(())
}

fn check_binary(y: &[f64]) -> Result<()> {
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::DegenerateTarget("classification targets must be 0 or 1".into()));
    }
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::DegenerateTarget(
            "classification targets contain a single class".into(),
        ));
    }
    Ok(())
}

/// Fits `spec` on `(x, y)` with optional non-negative sample weights.
pub fn fit(
    spec: &LearnerSpec,
    x: &FeatureMatrix,
    y: &[f64],
    weights: Option<&[f64]>,
    task: Task,
) -> Result<FittedLearner> {
    spec.validate()?;
    check_inputs(x, y, weights)?;
    let params = match spec {
        LearnerSpec::Constant => {
            if task == Task::Classification {
                check_binary(y)?;
            }
            let value = match weights {
                Some(w) => {
                    y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>()
                }
                None => mean(y),
            };
            LearnerParams::Constant { value }
        }
        LearnerSpec::Linear => {
            if task == Task::Classification {
                return Err(Error::Config(
                    "the linear learner only supports regression".into(),
                ));
            }
            LearnerParams::Linear(linear::fit(x, y, weights)?)
        }
        LearnerSpec::Logistic(s) => {
            if task == Task::Regression {
                return Err(Error::Config(
                    "the logistic learner only supports binary classification".into(),
                ));
            }
            check_binary(y)?;
            LearnerParams::Logistic(logistic::fit(x, y, weights, s)?)
        }
        LearnerSpec::Gbdt(s) => {
            if task == Task::Classification {
                check_binary(y)?;
            }
            LearnerParams::Gbdt(gbdt::fit(x, y, weights, s, task)?)
        }
    };
    Ok(FittedLearner {
        version: FORMAT_VERSION,
        spec: spec.clone(),
        task,
        n_features: x.n_features(),
        fingerprint: x.fingerprint(),
        params,
    })
}

/// Ordinary least squares with an intercept.
pub fn fit_linear(x: &FeatureMatrix, y: &[f64]) -> Result<FittedLearner> {
    fit(&LearnerSpec::Linear, x, y, None, Task::Regression)
}

pub fn fit_logistic(x: &FeatureMatrix, y: &[f64], spec: &LogisticSpec) -> Result<FittedLearner> {
    fit(
        &LearnerSpec::Logistic(spec.clone()),
        x,
        y,
        None,
        Task::Classification,
    )
}

pub fn fit_gbdt(x: &FeatureMatrix, y: &[f64], spec: &GbdtSpec, task: Task) -> Result<FittedLearner> {
    fit(&LearnerSpec::Gbdt(spec.clone()), x, y, None, task)
}

impl FittedLearner {
    pub fn spec(&self) -> &LearnerSpec {
        &self.spec
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn params(&self) -> &LearnerParams {
        &self.params
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.n_features() != self.n_features {
            return Err(Error::WidthMismatch {
                expected: self.n_features,
                got: x.n_features(),
            });
        }
        let csr = x.to_csr();
        let out = match &self.params {
            LearnerParams::Constant { value } => vec![*value; x.n_rows()],
            LearnerParams::Linear(m) => m.predict(&csr),
            LearnerParams::Logistic(m) => m.predict_proba(&csr),
            LearnerParams::Gbdt(m) => {
                let margin = m.predict_margin(&csr);
                match self.task {
                    Task::Regression => margin,
                    Task::Classification => margin.into_iter().map(sigmoid).collect(),
                }
            }
        };
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: FittedLearner = serde_json::from_str(s)?;
        if model.version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported learner format version {}",
                model.version
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        FittedLearner::from_json(&s)
    }
}

/// Logistic function, kept strictly inside (0, 1).
pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Running arithmetic mean; exact for constant inputs, `NaN` when empty.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut m = 0.0;
    for (k, &x) in xs.iter().enumerate() {
        m += (x - m) / (k + 1) as f64;
    }
    m
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_data() -> (FeatureMatrix, Vec<f64>) {
        let x = FeatureMatrix::from_dense_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        (x, vec![0.0, 0.0, 1.0, 1.0])
    }

    #[test]
    fn constant_model_predicts_constant() {
        let (x, _) = line_data();
        let m = fit(&LearnerSpec::Constant, &x, &[3.0; 4], None, Task::Regression).unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![3.0; 4]);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let (x, y) = line_data();
        let m = fit_linear(&x, &y).unwrap();
        let wide = FeatureMatrix::from_dense_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!(matches!(m.predict(&wide), Err(Error::WidthMismatch { expected: 1, got: 2 })));
    }

    #[test]
    fn kind_task_mismatch() {
        let (x, y) = line_data();
        assert!(fit(&LearnerSpec::Linear, &x, &y, None, Task::Classification).is_err());
        assert!(fit(&LearnerSpec::logistic(), &x, &y, None, Task::Regression).is_err());
        assert!(matches!(
            fit(&LearnerSpec::logistic(), &x, &[1.0; 4], None, Task::Classification),
            Err(Error::DegenerateTarget(_))
        ));
    }

    #[test]
    fn zero_rows_rejected() {
        let x = FeatureMatrix::from_dense_rows(&[]).unwrap();
        assert!(matches!(fit_linear(&x, &[]), Err(Error::TooFewRows(_))));
    }

    #[test]
    fn sigmoid_is_strictly_inside_unit_interval() {
        for z in [-1000.0, -40.0, 0.0, 40.0, 1000.0] {
            let p = sigmoid(z);
            assert!(p > 0.0 && p < 1.0, "{z} -> {p}");
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn save_load_predicts_identically() {
        let (x, y) = line_data();
        for spec in [LearnerSpec::Linear, LearnerSpec::logistic(), LearnerSpec::gbdt()] {
            let task = if spec == LearnerSpec::Linear {
                Task::Regression
            } else {
                Task::Classification
            };
            let spec = match spec {
                LearnerSpec::Gbdt(s) => LearnerSpec::Gbdt(GbdtSpec {
                    min_child_samples: 1,
                    ..s
                }),
                s => s,
            };
            let m = fit(&spec, &x, &y, None, task).unwrap();
            let back = FittedLearner::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
        }
    }
}
