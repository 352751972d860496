//! End-to-end training behaviour of the text network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textcausal::learners::mean;
use textcausal::tabular::{Column, Table};
use textcausal::textnet::{train, TextNetSpec};
use textcausal::text_vectorizer::VectorizerConfig;

const POSITIVE: [&str; 3] = ["great", "superb", "lovely"];
const NEGATIVE: [&str; 3] = ["awful", "broken", "dreadful"];
const FILLER: [&str; 4] = ["item", "box", "arrived", "today"];

/// Outcome fully determined by which word family the text uses.
fn separable(seed: u64, n: usize) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.random_bool(0.5);
        let family = if label { POSITIVE } else { NEGATIVE };
        let words: Vec<&str> = (0..6)
            .map(|k| {
                if k % 2 == 0 {
                    family[rng.random_range(0..3)]
                } else {
                    FILLER[rng.random_range(0..4)]
                }
            })
            .collect();
        text.push(words.join(" "));
        t.push(u8::from(rng.random_bool(0.5)));
        y.push(u8::from(label));
        c.push(Some(["a", "b"][rng.random_range(0..2)].to_string()));
    }
    Table::new(vec![
        Column::text("text", text),
        Column::binary("t", t),
        Column::binary("y", y),
        Column::categorical("c", c),
    ])
    .unwrap()
}

fn spec(seed: u64) -> TextNetSpec {
    TextNetSpec {
        seed,
        vectorizer: VectorizerConfig {
            min_df: 1,
            ..VectorizerConfig::default()
        },
        ..TextNetSpec::default()
    }
}

#[test]
fn separable_data_is_fit_within_default_epochs() {
    for seed in 0..5 {
        let table = separable(seed, 5000);
        let model = train(&table, "text", &["c".to_string()], "t", "y", &spec(seed)).unwrap();
        let history = model.loss_history();
        assert_eq!(history.len(), 20);
        let last = *history.last().unwrap();
        assert!(last < 0.1, "seed {seed}: final loss {last}");
    }
}

#[test]
fn training_is_deterministic_per_seed() {
    let table = separable(3, 300);
    let a = train(&table, "text", &[], "t", "y", &spec(11)).unwrap();
    let b = train(&table, "text", &[], "t", "y", &spec(11)).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let c = train(&table, "text", &[], "t", "y", &spec(12)).unwrap();
    assert_ne!(a.params(), c.params());
}

#[test]
fn untrained_model_predicts_base_rate() {
    let table = separable(5, 200);
    let zero_epochs = TextNetSpec {
        epochs: 1,
        learning_rate: 1e-12,
        ..spec(0)
    };
    let model = train(&table, "text", &[], "t", "y", &zero_epochs).unwrap();
    let y = table.binary("y").unwrap();
    let base = y.iter().map(|&v| f64::from(v)).sum::<f64>() / y.len() as f64;
    let p = 1.0 / (1.0 + (-model.params().bias).exp());
    assert!((p - base).abs() < 1e-6);
}

#[test]
fn ate_is_mean_of_ites_and_bounded() {
    let table = separable(8, 400);
    let model = train(&table, "text", &["c".to_string()], "t", "y", &spec(2)).unwrap();
    let ites = model.predict_ite(&table).unwrap();
    let est = model.estimate_ate(&table, None, 0, 0).unwrap();
    assert_eq!(est.ate, mean(&ites));
    assert!(est.ate > -1.0 && est.ate < 1.0);
}
