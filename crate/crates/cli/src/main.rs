//! `textcausal`: simulate, autocode, fit, estimate, and benchmark from the
//! command line.
//!
//! Exit codes: 0 on success, 2 on usage or configuration errors, 3 on data
//! or statistical errors. Diagnostics go to stderr; `--json` switches stdout
//! to machine-readable JSON.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use textcausal::autocoder::{binarize, Autocoder, CollisionPolicy, Lexicon, SentimentScorer, EmotionScorer, TopicScorer};
use textcausal::benchmark::{self, BenchmarkConfig};
use textcausal::estimator::{estimate_ate_refit, EstimatorSpec, FittedEstimator, TextNetConfig};
use textcausal::learners::{GbdtSpec, LearnerSpec, LogisticSpec};
use textcausal::metalearners::{CausalSpec, Mask, Method, DEFAULT_BOOTSTRAP};
use textcausal::simulator::{self, SimulationSpec};
use textcausal::tabular::{load_csv, ColumnKind, Table};
use textcausal::text_vectorizer::VectorizerConfig;
use textcausal::textnet::TextNetSpec;
use textcausal::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "textcausal", version, about = "Treatment effects from tables with text")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for every stochastic component.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a text-confounded dataset and its ground truth.
    Simulate(SimulateArgs),
    /// Derive sentiment, emotion, or topic columns from a text column.
    Autocode(AutocodeArgs),
    /// Fit an effect estimator and save it.
    Fit(FitArgs),
    /// Estimate the (conditional) average treatment effect with a saved model.
    Estimate(EstimateArgs),
    /// Run the simulate/autocode/fit/estimate protocol across seeds and methods.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Simulation spec (JSON). Defaults to the reference spec.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the number of rows.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Coder {
    Sentiment,
    Emotion,
    Topics,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Column type override, `name:kind` with kind numeric|categorical|text|binary.
    #[arg(long = "col-type", value_name = "NAME:KIND")]
    col_types: Vec<String>,
}

#[derive(Args, Debug)]
struct AutocodeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "text")]
    text_col: String,
    #[arg(long, value_enum)]
    coder: Coder,
    /// Topic labels, comma separated.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,
    /// Topic keywords as JSON: {"label": ["term", ...]}.
    #[arg(long)]
    keywords: Option<PathBuf>,
    /// Lexicon file with `[label]` sections of `term<TAB>weight` lines.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Prefix new columns instead of failing on name collisions.
    #[arg(long)]
    prefix: Option<String>,
    /// Append `<col>_bin` = 1 iff the score is strictly above this threshold.
    #[arg(long)]
    binarize: Option<f64>,
    /// Score column to binarize; defaults to the coder's first column.
    #[arg(long)]
    binarize_col: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LearnerKind {
    Constant,
    Linear,
    Logistic,
    Gbdt,
}

impl LearnerKind {
    fn spec(self) -> LearnerSpec {
        match self {
            LearnerKind::Constant => LearnerSpec::Constant,
            LearnerKind::Linear => LearnerSpec::Linear,
            LearnerKind::Logistic => LearnerSpec::Logistic(LogisticSpec::default()),
            LearnerKind::Gbdt => LearnerSpec::Gbdt(GbdtSpec::default()),
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// s-learner | t-learner | x-learner | r-learner | textnet
    #[arg(long)]
    method: String,
    #[arg(long)]
    treatment_col: String,
    #[arg(long)]
    outcome_col: String,
    #[arg(long)]
    text_col: Option<String>,
    #[arg(long, value_delimiter = ',')]
    include_cols: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    ignore_cols: Vec<String>,
    /// Outcome base learner.
    #[arg(long, value_enum, default_value = "gbdt")]
    learner: LearnerKind,
    /// Outcome base learner as JSON (overrides --learner).
    #[arg(long)]
    learner_config: Option<PathBuf>,
    /// X/R effect-stage learner as JSON.
    #[arg(long)]
    effect_learner_config: Option<PathBuf>,
    /// Propensity learner as JSON.
    #[arg(long)]
    propensity_config: Option<PathBuf>,
    /// Full estimator spec as JSON (overrides every other model flag).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 2)]
    min_df: usize,
    #[arg(long, default_value_t = 20000)]
    max_features: usize,
    #[arg(long, default_value_t = 1)]
    ngram_max: usize,
    #[arg(long, default_value_t = 64)]
    embed_dim: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long = "q-weight", default_value_t = 0.1)]
    q_weight: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Restrict to rows whose text contains this substring.
    #[arg(long)]
    where_text_contains: Option<String>,
    /// Text column for the mask; defaults to the model's text column.
    #[arg(long)]
    text_col: Option<String>,
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP)]
    bootstrap: usize,
    /// Refit the model on every bootstrap resample.
    #[arg(long)]
    bootstrap_refit: bool,
    /// Record wall-clock runtime in the estimate.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// Benchmark config (JSON). Defaults to the reference protocol.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the simulated row count.
    #[arg(long)]
    n: Option<usize>,
    /// Override the seed list, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(&cli, a),
        Command::Autocode(a) => cmd_autocode(&cli, a),
        Command::Fit(a) => cmd_fit(&cli, a),
        Command::Estimate(a) => cmd_estimate(&cli, a),
        Command::Benchmark(a) => cmd_benchmark(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("TEXTCAUSAL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("TEXTCAUSAL_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn load_table(args: &DataArgs) -> Result<Table> {
    let mut hints = HashMap::new();
    for item in &args.col_types {
        let (name, kind) = item
            .rsplit_once(':')
            .ok_or_else(|| Error::Config(format!("--col-type expects name:kind, got `{item}`")))?;
        hints.insert(name.to_string(), kind.parse::<ColumnKind>()?);
    }
    load_csv(&args.data, &hints)
}

fn emit(cli: &Cli, value: serde_json::Value, human: impl FnOnce() -> String) -> Result<()> {
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&value)?);
    } else {
        println!("{}", human());
    }
    Ok(())
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(path) => SimulationSpec::load(path)?,
        None => SimulationSpec::reference(5000, 0),
    };
    if let Some(n) = args.n {
        spec.n = n;
    }
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let (table, truth) = simulator::simulate(&spec)?;
    table.save_csv(&args.out)?;
    if let Some(path) = &args.truth {
        write_file(path, &truth.to_json()?)?;
    }
    emit(
        cli,
        json!({"rows": table.n_rows(), "out": args.out, "truth": args.truth, "ate_true": truth.ate_true}),
        || format!("wrote {} rows to {} (true ATE {})", table.n_rows(), args.out.display(), truth.ate_true),
    )
}

fn cmd_autocode(cli: &Cli, args: &AutocodeArgs) -> Result<()> {
    let table = load_table(&args.data)?;
    let texts = table.text(&args.text_col)?;
    let mut coder = Autocoder::new();
    if let Some(p) = &args.prefix {
        coder = coder.with_collision_policy(CollisionPolicy::Prefix(p.clone()));
    }
    let lexicon = args.lexicon.as_ref().map(Lexicon::load).transpose()?;
    let before = table.column_names().len();
    let coded = match args.coder {
        Coder::Sentiment => {
            if let Some(lex) = &lexicon {
                coder = coder.with_sentiment_scorer(Box::new(SentimentScorer::new(lex)?));
            }
            coder.code_sentiment(&texts, &table)?
        }
        Coder::Emotion => {
            if let Some(lex) = &lexicon {
                coder = coder.with_emotion_scorer(Box::new(EmotionScorer::new(lex)?));
            }
            coder.code_emotion(&texts, &table)?
        }
        Coder::Topics => match (&args.keywords, &lexicon) {
            (Some(path), _) => {
                let raw: HashMap<String, Vec<String>> = read_json(path)?;
                let labels = if args.labels.is_empty() {
                    let mut l: Vec<String> = raw.keys().cloned().collect();
                    l.sort();
                    l
                } else {
                    args.labels.clone()
                };
                let map: HashMap<String, HashSet<String>> = raw
                    .into_iter()
                    .map(|(k, v)| (k, v.into_iter().map(|t| t.to_lowercase()).collect()))
                    .collect();
                coder.code_custom_topics(&texts, &table, &labels, &map)?
            }
            (None, Some(lex)) => coder.code_callable(&texts, &table, &TopicScorer::new(lex)?)?,
            (None, None) => {
                return Err(Error::Config(
                    "--coder topics needs --keywords or --lexicon".into(),
                ))
            }
        },
    };
    let new_cols: Vec<String> = coded.column_names()[before..].iter().map(|s| s.to_string()).collect();
    let coded = match args.binarize {
        Some(threshold) => {
            let col = args.binarize_col.clone().unwrap_or_else(|| new_cols[0].clone());
            binarize(&coded, &col, threshold)?
        }
        None => coded,
    };
    coded.save_csv(&args.out)?;
    let added: Vec<&str> = coded.column_names()[before..].to_vec();
    emit(cli, json!({"rows": coded.n_rows(), "added": added, "out": args.out}), || {
        format!("added {} to {}", added.join(", "), args.out.display())
    })
}

fn build_spec(cli: &Cli, args: &FitArgs) -> Result<EstimatorSpec> {
    let seed = cli.seed.unwrap_or(0);
    if let Some(path) = &args.spec {
        let spec: EstimatorSpec = read_json(path)?;
        return Ok(match cli.seed {
            Some(s) => spec.with_seed(s),
            None => spec,
        });
    }
    let vectorizer = VectorizerConfig {
        min_df: args.min_df,
        max_features: Some(args.max_features),
        ngram_max: args.ngram_max,
        ..VectorizerConfig::default()
    };
    if args.method.eq_ignore_ascii_case("textnet") {
        let text_col = args
            .text_col
            .clone()
            .ok_or_else(|| Error::Config("--method textnet requires --text-col".into()))?;
        return Ok(EstimatorSpec::TextNet(TextNetConfig {
            treatment_col: args.treatment_col.clone(),
            outcome_col: args.outcome_col.clone(),
            text_col,
            include_cols: args.include_cols.clone(),
            net: TextNetSpec {
                embed_dim: args.embed_dim,
                vectorizer,
                learning_rate: args.learning_rate,
                epochs: args.epochs,
                batch_size: args.batch_size,
                q_weight: args.q_weight,
                seed,
            },
        }));
    }
    let method: Method = args.method.parse()?;
    let mut spec = CausalSpec::new(method, args.treatment_col.clone(), args.outcome_col.clone());
    spec.include_cols = args.include_cols.clone();
    spec.ignore_cols = args.ignore_cols.clone();
    spec.text_col = args.text_col.clone();
    spec.outcome_learner = match &args.learner_config {
        Some(path) => read_json(path)?,
        None => args.learner.spec(),
    };
    spec.effect_learner = args.effect_learner_config.as_deref().map(read_json).transpose()?;
    if let Some(path) = &args.propensity_config {
        spec.propensity_learner = read_json(path)?;
    }
    spec.folds = args.folds;
    spec.vectorizer = vectorizer;
    spec.seed = seed;
    Ok(EstimatorSpec::Meta(spec))
}

fn cmd_fit(cli: &Cli, args: &FitArgs) -> Result<()> {
    let spec = build_spec(cli, args)?;
    let table = load_table(&args.data)?;
    let start = Instant::now();
    let model = FittedEstimator::fit(&table, &spec)?;
    let secs = start.elapsed().as_secs_f64();
    model.save(&args.out)?;
    emit(
        cli,
        json!({"method": model.label(), "rows": table.n_rows(), "out": args.out, "warnings": model.warnings(), "fit_seconds": secs}),
        || format!("fit {} on {} rows in {secs:.2} s; saved {}", model.label(), table.n_rows(), args.out.display()),
    )
}

fn cmd_estimate(cli: &Cli, args: &EstimateArgs) -> Result<()> {
    let start = Instant::now();
    let model = FittedEstimator::load(&args.model)?;
    let table = load_table(&args.data)?;
    let mask = match &args.where_text_contains {
        Some(needle) => {
            let col = args
                .text_col
                .as_deref()
                .or(model.text_col())
                .ok_or_else(|| Error::Config("the mask needs --text-col".into()))?;
            Some(Mask::text_contains(&table, col, needle)?)
        }
        None => None,
    };
    let seed = cli.seed.unwrap_or(model.seed());
    let mut estimate = if args.bootstrap_refit {
        estimate_ate_refit(&table, &model.spec(), mask.as_ref(), args.bootstrap, seed)?
    } else {
        model.estimate_ate(&table, mask.as_ref(), args.bootstrap, seed)?
    };
    if args.timing {
        estimate.runtime_seconds = Some(start.elapsed().as_secs_f64());
    }
    let text = estimate.to_json()?;
    if let Some(path) = &args.out {
        write_file(path, &text)?;
    }
    if cli.json {
        println!("{text}");
    } else {
        let scope = estimate.mask.as_deref().map(|m| format!(" where {m}")).unwrap_or_default();
        println!(
            "{}: ATE {:.4} (std error {:.4}, n = {}){scope}",
            estimate.method, estimate.ate, estimate.std_error, estimate.n
        );
    }
    Ok(())
}

fn cmd_benchmark(cli: &Cli, args: &BenchmarkArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => BenchmarkConfig::load(path)?,
        None => BenchmarkConfig::reference(5000),
    };
    if let Some(n) = args.n {
        cfg.simulation.n = n;
    }
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds.clone();
    } else if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    let report = benchmark::run(&cfg)?;
    let text = report.to_json()?;
    if let Some(path) = &args.out {
        write_file(path, &text)?;
    }
    if cli.json {
        println!("{text}");
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}
