//! One handle over every effect estimator: the meta-learners and the text
//! network. Used by the benchmark harness and the command-line tool.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metalearners::{self, sample_sd, CausalModel, CausalSpec, EffectEstimate, Mask};
use crate::tabular::Table;
use crate::textnet::{self, TextNetModel, TextNetSpec};

/// Column roles and hyperparameters of a text-network fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextNetConfig {
    pub treatment_col: String,
    pub outcome_col: String,
    pub text_col: String,
    #[serde(default)]
    pub include_cols: Vec<String>,
    #[serde(default)]
    pub net: TextNetSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "lowercase")]
pub enum EstimatorSpec {
    Meta(CausalSpec),
    TextNet(TextNetConfig),
}

impl EstimatorSpec {
    pub fn seed(&self) -> u64 {
        match self {
            EstimatorSpec::Meta(s) => s.seed,
            EstimatorSpec::TextNet(c) => c.net.seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> EstimatorSpec {
        match self {
            EstimatorSpec::Meta(s) => EstimatorSpec::Meta(CausalSpec { seed, ..s.clone() }),
            EstimatorSpec::TextNet(c) => {
                let mut c = c.clone();
                c.net.seed = seed;
                EstimatorSpec::TextNet(c)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum FittedEstimator {
    Meta(CausalModel),
    TextNet(TextNetModel),
}

impl FittedEstimator {
    pub fn fit(table: &Table, spec: &EstimatorSpec) -> Result<FittedEstimator> {
        match spec {
            EstimatorSpec::Meta(s) => Ok(FittedEstimator::Meta(metalearners::fit(table, s)?)),
            EstimatorSpec::TextNet(c) => Ok(FittedEstimator::TextNet(textnet::train(
                table,
                &c.text_col,
                &c.include_cols,
                &c.treatment_col,
                &c.outcome_col,
                &c.net,
            )?)),
        }
    }

    /// The specification this model was fit from.
    pub fn spec(&self) -> EstimatorSpec {
        match self {
            FittedEstimator::Meta(m) => EstimatorSpec::Meta(m.spec().clone()),
            FittedEstimator::TextNet(m) => EstimatorSpec::TextNet(TextNetConfig {
                treatment_col: m.treatment_col().into(),
                outcome_col: m.outcome_col().into(),
                text_col: m.text_col().into(),
                include_cols: m.covariate_cols(),
                net: m.spec().clone(),
            }),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            FittedEstimator::Meta(m) => m.method().label(),
            FittedEstimator::TextNet(_) => textnet::METHOD_LABEL,
        }
    }

    pub fn text_col(&self) -> Option<&str> {
        match self {
            FittedEstimator::Meta(m) => m.spec().text_col.as_deref(),
            FittedEstimator::TextNet(m) => Some(m.text_col()),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            FittedEstimator::Meta(m) => m.spec().seed,
            FittedEstimator::TextNet(m) => m.spec().seed,
        }
    }

    pub fn predict_ite(&self, table: &Table) -> Result<Vec<f64>> {
        match self {
            FittedEstimator::Meta(m) => m.predict_ite(table),
            FittedEstimator::TextNet(m) => m.predict_ite(table),
        }
    }

    pub fn estimate_ate(
        &self,
        table: &Table,
        mask: Option<&Mask>,
        bootstrap: usize,
        seed: u64,
    ) -> Result<EffectEstimate> {
        match self {
            FittedEstimator::Meta(m) => m.estimate_ate(table, mask, bootstrap, seed),
            FittedEstimator::TextNet(m) => m.estimate_ate(table, mask, bootstrap, seed),
        }
    }

    /// Warnings recorded at fit time.
    pub fn warnings(&self) -> &[String] {
        match self {
            FittedEstimator::Meta(m) => &m.diagnostics().warnings,
            FittedEstimator::TextNet(_) => &[],
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: FittedEstimator = serde_json::from_str(s)?;
        match &model {
            FittedEstimator::Meta(m) => m.check_version()?,
            FittedEstimator::TextNet(m) => m.check_version()?,
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
        FittedEstimator::from_json(&s)
    }
}

/// Bootstrap that refits the estimator on each row resample of `table`; the
/// standard error is the spread of the resampled (masked) ATEs. The point
/// estimate comes from the fit on the full table.
pub fn estimate_ate_refit(
    table: &Table,
    spec: &EstimatorSpec,
    mask: Option<&Mask>,
    replicates: usize,
    seed: u64,
) -> Result<EffectEstimate> {
    let model = FittedEstimator::fit(table, spec)?;
    let mut est = model.estimate_ate(table, mask, 0, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = table.n_rows();
    let mut ates = Vec::with_capacity(replicates);
    for b in 0..replicates {
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let sample = table.select_rows(&rows);
        let sub_mask = mask.map(|m| Mask::new(rows.iter().map(|&i| m.rows[i]).collect(), ""));
        let refit = spec.with_seed(spec.seed().wrapping_add(1 + b as u64));
        match FittedEstimator::fit(&sample, &refit)
            .and_then(|m| m.estimate_ate(&sample, sub_mask.as_ref(), 0, 0))
        {
            Ok(e) => ates.push(e.ate),
            Err(e) => log::warn!("bootstrap replicate {b} skipped: {e}"),
        }
    }
    est.std_error = sample_sd(&ates);
    Ok(est)
}
