//! Simulate → autocode → fit → estimate across seeds and methods, scored
//! against the simulator's oracle effect.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autocoder::{binarize, Autocoder};
use crate::error::{Error, Result};
use crate::estimator::{EstimatorSpec, FittedEstimator, TextNetConfig};
use crate::learners::{mean, GbdtSpec, LearnerSpec, LogisticSpec, Penalty};
use crate::metalearners::{naive_ate, CausalSpec, Method};
use crate::simulator::{self, SimulationSpec, OUTCOME_COL, TEXT_COL, TREATMENT_COL};
use crate::tabular::{Column, Table};
use crate::text_vectorizer::VectorizerConfig;
use crate::textnet::TextNetSpec;

/// Multiplier applied to every effect in the report.
pub const REPORT_SCALE: f64 = 100.0;

/// How the analysis treatment is obtained from each simulated table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "coder", rename_all = "lowercase")]
pub enum TreatmentSource {
    /// The hidden true treatment flag.
    True,
    /// Lexicon sentiment, binarized as `positive > threshold`.
    Sentiment { threshold: f64 },
}

impl Default for TreatmentSource {
    fn default() -> Self {
        TreatmentSource::Sentiment { threshold: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub name: String,
    /// `s`, `t`, `x`, `r`, or `textnet`.
    pub method: String,
    #[serde(default)]
    pub outcome_learner: Option<LearnerSpec>,
    #[serde(default)]
    pub effect_learner: Option<LearnerSpec>,
    #[serde(default)]
    pub propensity_learner: Option<LearnerSpec>,
    #[serde(default)]
    pub folds: Option<usize>,
    #[serde(default)]
    pub vectorizer: Option<VectorizerConfig>,
    #[serde(default)]
    pub textnet: Option<TextNetSpec>,
}

impl MethodConfig {
    fn meta(name: &str, method: &str, outcome: LearnerSpec) -> MethodConfig {
        MethodConfig {
            name: name.into(),
            method: method.into(),
            outcome_learner: Some(outcome),
            effect_learner: None,
            propensity_learner: None,
            folds: None,
            vectorizer: None,
            textnet: None,
        }
    }

    /// Resolves this method against the column roles of one run.
    pub fn estimator(
        &self,
        treatment_col: &str,
        include_cols: &[String],
        text_col: &str,
        seed: u64,
    ) -> Result<EstimatorSpec> {
        if self.method.eq_ignore_ascii_case("textnet") {
            return Ok(EstimatorSpec::TextNet(TextNetConfig {
                treatment_col: treatment_col.into(),
                outcome_col: OUTCOME_COL.into(),
                text_col: text_col.into(),
                include_cols: include_cols.to_vec(),
                net: TextNetSpec {
                    seed,
                    ..self.textnet.clone().unwrap_or_default()
                },
            }));
        }
        let method: Method = self.method.parse()?;
        let mut spec = CausalSpec::new(method, treatment_col, OUTCOME_COL);
        spec.include_cols = include_cols.to_vec();
        spec.text_col = Some(text_col.into());
        spec.seed = seed;
        if let Some(l) = &self.outcome_learner {
            spec.outcome_learner = l.clone();
        }
        spec.effect_learner = self.effect_learner.clone();
        if let Some(l) = &self.propensity_learner {
            spec.propensity_learner = l.clone();
        }
        if let Some(k) = self.folds {
            spec.folds = k;
        }
        if let Some(v) = &self.vectorizer {
            spec.vectorizer = v.clone();
        }
        Ok(EstimatorSpec::Meta(spec))
    }
}

fn default_include() -> Vec<String> {
    vec![simulator::CONFOUNDER_COL.into()]
}

fn default_text_col() -> String {
    TEXT_COL.into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub simulation: SimulationSpec,
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub treatment: TreatmentSource,
    #[serde(default = "default_include")]
    pub include_cols: Vec<String>,
    /// Columns converted to categorical (one-hot) before fitting.
    #[serde(default = "default_include")]
    pub categorical_cols: Vec<String>,
    #[serde(default = "default_text_col")]
    pub text_col: String,
    /// Run (seed, method) cells concurrently.
    #[serde(default = "default_true")]
    pub parallel: bool,
}

fn default_true() -> bool {
    true
}

/// Heavily regularized boosted-tree settings from a randomized search,
/// available as a benchmark option. On the reference simulation they shrink
/// each arm model toward a constant, so the reference protocol does not use them.
pub fn tuned_gbdt(num_leaves: usize) -> GbdtSpec {
    GbdtSpec {
        num_leaves,
        min_child_weight: 100.0,
        colsample_bytree: 0.59,
        min_child_samples: 59,
        reg_alpha: 10.0,
        reg_lambda: 100.0,
        subsample: 0.64,
        ..GbdtSpec::default()
    }
}

impl BenchmarkConfig {
    /// The reference protocol: confounded reference simulation, ten seeds,
    /// sentiment-coded treatment, and the five adjusted estimators.
    pub fn reference(n: usize) -> BenchmarkConfig {
        let l1 = LearnerSpec::Logistic(LogisticSpec {
            penalty: Penalty::L1,
            c: 1.0,
            fit_intercept: false,
            ..LogisticSpec::default()
        });
        let wide = LearnerSpec::Gbdt(GbdtSpec {
            num_leaves: 500,
            ..GbdtSpec::default()
        });
        // Nuisance models this wide overfit the near-deterministic propensity
        // of a text-coded treatment, so the R-Learner keeps default trees.
        let gbdt = LearnerSpec::gbdt();
        BenchmarkConfig {
            simulation: SimulationSpec::reference(n, 0),
            seeds: (0..10).collect(),
            methods: vec![
                MethodConfig::meta("S-Learner w/ LogisticRegression", "s", l1),
                MethodConfig::meta("T-Learner w/ GBDT", "t", gbdt.clone()),
                MethodConfig::meta("X-Learner w/ GBDT", "x", wide),
                MethodConfig::meta("R-Learner w/ GBDT", "r", gbdt),
                MethodConfig {
                    textnet: Some(TextNetSpec::default()),
                    ..MethodConfig::meta("TextNet", "textnet", LearnerSpec::Constant)
                },
            ],
            treatment: TreatmentSource::default(),
            include_cols: default_include(),
            categorical_cols: default_include(),
            text_col: default_text_col(),
            parallel: true,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<BenchmarkConfig> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: BenchmarkConfig = serde_json::from_str(&s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("a benchmark needs at least one seed and one method".into()));
        }
        for m in &self.methods {
            m.estimator("t", &self.include_cols, &self.text_col, 0)?;
        }
        self.simulation.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedCell {
    pub seed: u64,
    pub ate: Option<f64>,
    pub delta: Option<f64>,
    pub runtime_seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    /// Mean over successful seeds; `None` when every seed failed.
    pub mean_ate: Option<f64>,
    pub mean_abs_delta: Option<f64>,
    pub mean_runtime_seconds: f64,
    pub failures: usize,
    pub per_seed: Vec<SeedCell>,
}

impl ReportRow {
    fn from_cells(name: &str, per_seed: Vec<SeedCell>) -> ReportRow {
        let ates: Vec<f64> = per_seed.iter().filter_map(|c| c.ate).collect();
        let deltas: Vec<f64> = per_seed.iter().filter_map(|c| c.delta).collect();
        let times: Vec<f64> = per_seed.iter().map(|c| c.runtime_seconds).collect();
        ReportRow {
            name: name.into(),
            mean_ate: (!ates.is_empty()).then(|| mean(&ates)),
            mean_abs_delta: (!deltas.is_empty()).then(|| mean(&deltas)),
            mean_runtime_seconds: mean(&times),
            failures: per_seed.iter().filter(|c| c.error.is_some()).count(),
            per_seed,
        }
    }
}

/// Effects and deltas are multiplied by `scale`. Rows: oracle, naive, then
/// methods by ascending mean |Δ| (methods with no successful seed last).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub scale: f64,
    pub rows: Vec<ReportRow>,
}

impl BenchmarkReport {
    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "failed".to_string(), |x| format!("{x:.2}"));
        let header = ["Method", "ATE Estimate", "Δ from Oracle", "Training Time"];
        let body: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|r| {
                let mut name = r.name.clone();
                if r.failures > 0 {
                    name.push_str(&format!(" ({} failed)", r.failures));
                }
                [
                    name,
                    fmt(r.mean_ate),
                    fmt(r.mean_abs_delta),
                    format!("{:.2} sec", r.mean_runtime_seconds),
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: [&str; 4]| {
            for (k, cell) in cells.iter().enumerate() {
                let pad = widths[k] - cell.chars().count();
                if k == 0 {
                    let _ = write!(out, "{cell}{}", " ".repeat(pad));
                } else {
                    let _ = write!(out, "  {}{cell}", " ".repeat(pad));
                }
            }
            out.push('\n');
        };
        line(&mut out, header);
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        line(&mut out, [&rule[0], &rule[1], &rule[2], &rule[3]]);
        for row in &body {
            line(&mut out, [&row[0], &row[1], &row[2], &row[3]]);
        }
        out
    }
}

/// Per-seed analysis table: simulated data plus the coded treatment column.
pub fn prepare(cfg: &BenchmarkConfig, seed: u64) -> Result<(Table, String, f64)> {
    let spec = SimulationSpec {
        seed,
        ..cfg.simulation.clone()
    };
    let (mut table, truth) = simulator::simulate(&spec)?;
    for name in &cfg.categorical_cols {
        let col = table.column(name)?;
        let values: Vec<Option<String>> = (0..col.len()).map(|i| Some(col.level_key(i))).collect();
        let replaced: Vec<Column> = table
            .columns()
            .iter()
            .map(|c| {
                if c.name() == name {
                    Column::categorical(name.clone(), values.clone())
                } else {
                    c.clone()
                }
            })
            .collect();
        table = Table::new(replaced)?;
    }
    let treatment_col = match cfg.treatment {
        TreatmentSource::True => TREATMENT_COL.to_string(),
        TreatmentSource::Sentiment { threshold } => {
            let texts = table.text(&cfg.text_col)?;
            table = Autocoder::new().code_sentiment(&texts, &table)?;
            table = binarize(&table, "positive", threshold)?;
            "positive_bin".to_string()
        }
    };
    Ok((table, treatment_col, truth.ate_true))
}

/// Fits one method on one prepared table; returns the ATE and wall time.
pub fn run_cell(
    method: &MethodConfig,
    table: &Table,
    treatment_col: &str,
    include_cols: &[String],
    text_col: &str,
    seed: u64,
) -> (Result<f64>, f64) {
    let start = Instant::now();
    let result = method
        .estimator(treatment_col, include_cols, text_col, seed)
        .and_then(|spec| FittedEstimator::fit(table, &spec))
        .and_then(|model| model.estimate_ate(table, None, 0, seed))
        .map(|e| e.ate);
    (result, start.elapsed().as_secs_f64())
}

pub fn run(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let prepare_all = |seed: &u64| (*seed, prepare(cfg, *seed));
    let prepared: Vec<(u64, Result<(Table, String, f64)>)> = if cfg.parallel {
        cfg.seeds.par_iter().map(prepare_all).collect()
    } else {
        cfg.seeds.iter().map(prepare_all).collect()
    };

    let scaled_cell = |seed: u64, r: Result<f64>, oracle: Option<f64>, secs: f64| match r {
        Ok(ate) => SeedCell {
            seed,
            ate: Some(REPORT_SCALE * ate),
            delta: oracle.map(|o| REPORT_SCALE * (ate - o).abs()),
            runtime_seconds: secs,
            error: None,
        },
        Err(e) => SeedCell {
            seed,
            ate: None,
            delta: None,
            runtime_seconds: secs,
            error: Some(e.to_string()),
        },
    };

    let mut oracle_cells = Vec::new();
    let mut naive_cells = Vec::new();
    for (seed, p) in &prepared {
        match p {
            Ok((table, tcol, oracle)) => {
                oracle_cells.push(scaled_cell(*seed, Ok(*oracle), Some(*oracle), 0.0));
                let start = Instant::now();
                let naive = naive_ate(table, tcol, OUTCOME_COL).map(|e| e.ate);
                let secs = start.elapsed().as_secs_f64();
                naive_cells.push(scaled_cell(*seed, naive, Some(*oracle), secs));
            }
            Err(e) => {
                let msg = Error::Config(format!("simulation failed: {e}"));
                oracle_cells.push(scaled_cell(*seed, Err(msg), None, 0.0));
                naive_cells.push(scaled_cell(*seed, Err(Error::Config("no data".into())), None, 0.0));
            }
        }
    }

    let jobs: Vec<(usize, usize)> = (0..cfg.methods.len())
        .flat_map(|m| (0..prepared.len()).map(move |s| (m, s)))
        .collect();
    let run_job = |&(m, s): &(usize, usize)| {
        let (seed, p) = &prepared[s];
        match p {
            Ok((table, tcol, oracle)) => {
                let (r, secs) =
                    run_cell(&cfg.methods[m], table, tcol, &cfg.include_cols, &cfg.text_col, *seed);
                if let Err(e) = &r {
                    log::warn!("{} failed on seed {seed}: {e}", cfg.methods[m].name);
                }
                scaled_cell(*seed, r, Some(*oracle), secs)
            }
            Err(_) => scaled_cell(*seed, Err(Error::Config("no data".into())), None, 0.0),
        }
    };
    let cells: Vec<SeedCell> = if cfg.parallel {
        jobs.par_iter().map(run_job).collect()
    } else {
        jobs.iter().map(run_job).collect()
    };

    let mut method_rows: Vec<ReportRow> = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(m, mc)| {
            let per_seed = cells[m * prepared.len()..(m + 1) * prepared.len()].to_vec();
            ReportRow::from_cells(&mc.name, per_seed)
        })
        .collect();
    method_rows.sort_by(|a, b| {
        let key = |r: &ReportRow| r.mean_abs_delta.unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b))
    });
    let mut rows = vec![
        ReportRow::from_cells("Oracle (ground truth)", oracle_cells),
        ReportRow::from_cells("Naive (no adjustment)", naive_cells),
    ];
    rows.extend(method_rows);
    Ok(BenchmarkReport {
        scale: REPORT_SCALE,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchmarkConfig {
        let mut cfg = BenchmarkConfig::reference(300);
        cfg.seeds = vec![0, 1];
        cfg.methods = vec![
            MethodConfig::meta("T const", "t", LearnerSpec::Constant),
            MethodConfig::meta("broken", "q", LearnerSpec::Constant),
        ];
        cfg
    }

    #[test]
    fn unknown_method_rejected_up_front() {
        assert!(matches!(run(&small()), Err(Error::Config(_))));
    }

    #[test]
    fn rows_ordered_and_oracle_exact() {
        let mut cfg = small();
        cfg.methods.pop();
        let report = run(&cfg).unwrap();
        assert_eq!(report.rows[0].name, "Oracle (ground truth)");
        assert_eq!(report.rows[0].mean_abs_delta, Some(0.0));
        assert_eq!(report.rows[1].name, "Naive (no adjustment)");
        // A constant T-Learner is the naive estimator.
        assert_eq!(report.rows[2].mean_ate, report.rows[1].mean_ate);
        let table = report.to_table();
        assert!(table.lines().count() == 5 && table.contains("Δ from Oracle"));
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = BenchmarkConfig::reference(100);
        let back: BenchmarkConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
