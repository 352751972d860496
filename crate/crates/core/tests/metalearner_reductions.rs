//! Meta-learners collapsing to closed forms under degenerate base learners,
//! and recovery of a constant effect when the nuisance models are correctly
//! specified.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use textcausal::learners::{mean, LearnerSpec, LogisticSpec, Penalty};
use textcausal::metalearners::{fit, naive_ate, CausalSpec, Method};
use textcausal::tabular::{Column, Table};

const LEVELS: [&str; 3] = ["a", "b", "c"];
const PROPENSITY: [f64; 3] = [0.3, 0.5, 0.7];
const BASE: [f64; 3] = [1.0, -0.5, 2.0];

/// Y = base[C] + tau * T + noise, with treatment rate depending on C.
fn constant_effect(seed: u64, n: usize, tau: f64, noise_sd: f64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd.max(f64::MIN_POSITIVE)).unwrap();
    let mut c = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_range(0..3);
        let ti = rng.random_bool(PROPENSITY[k]);
        let eps = if noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        c.push(Some(LEVELS[k].to_string()));
        t.push(u8::from(ti));
        y.push(BASE[k] + tau * f64::from(u8::from(ti)) + eps);
    }
    Table::new(vec![
        Column::categorical("c", c),
        Column::binary("t", t),
        Column::numeric("y", y),
    ])
    .unwrap()
}

fn binary_outcome(seed: u64, n: usize) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_range(0..3);
        let ti = rng.random_bool(PROPENSITY[k]);
        let p = 0.2 + 0.1 * k as f64 + if ti { 0.15 } else { 0.0 };
        c.push(Some(LEVELS[k].to_string()));
        t.push(u8::from(ti));
        y.push(u8::from(rng.random_bool(p)));
    }
    Table::new(vec![
        Column::categorical("c", c),
        Column::binary("t", t),
        Column::binary("y", y),
    ])
    .unwrap()
}

fn spec(method: Method, learner: LearnerSpec, include: &[&str], seed: u64) -> CausalSpec {
    CausalSpec {
        include_cols: include.iter().map(|s| s.to_string()).collect(),
        outcome_learner: learner,
        seed,
        ..CausalSpec::new(method, "t", "y")
    }
}

fn unpenalized() -> LearnerSpec {
    LearnerSpec::Logistic(LogisticSpec {
        penalty: Penalty::None,
        tol: 1e-12,
        ..LogisticSpec::default()
    })
}

fn ate(table: &Table, spec: &CausalSpec) -> f64 {
    fit(table, spec).unwrap().estimate_ate(table, None, 0, 0).unwrap().ate
}

#[test]
fn constant_t_learner_is_difference_in_means() {
    for seed in 0..5 {
        let table = binary_outcome(seed, 1000);
        let naive = naive_ate(&table, "t", "y").unwrap().ate;
        let s = spec(Method::T, LearnerSpec::Constant, &["c"], seed);
        assert_eq!(ate(&table, &s), naive, "seed {seed}");

        let table = constant_effect(seed, 1000, 0.7, 1.0);
        let naive = naive_ate(&table, "t", "y").unwrap().ate;
        assert_eq!(ate(&table, &s), naive, "seed {seed} numeric");
    }
}

#[test]
fn treatment_only_s_learner_is_difference_in_means() {
    for seed in 0..5 {
        let table = constant_effect(seed, 1000, 0.7, 1.0);
        let naive = naive_ate(&table, "t", "y").unwrap().ate;
        let got = ate(&table, &spec(Method::S, LearnerSpec::Linear, &[], seed));
        assert!((got - naive).abs() <= 1e-12, "seed {seed}: {got} vs {naive}");

        let table = binary_outcome(seed, 1000);
        let naive = naive_ate(&table, "t", "y").unwrap().ate;
        let got = ate(&table, &spec(Method::S, unpenalized(), &[], seed));
        assert!((got - naive).abs() <= 1e-8, "seed {seed} binary: {got} vs {naive}");
    }
}

#[test]
fn linear_s_learner_has_constant_ites() {
    for seed in 0..5 {
        let table = constant_effect(seed, 800, -0.4, 1.0);
        let model = fit(&table, &spec(Method::S, LearnerSpec::Linear, &["c"], seed)).unwrap();
        let ites = model.predict_ite(&table).unwrap();
        let lo = ites.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ites.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo < 1e-9, "seed {seed}: spread {}", hi - lo);
    }
}

fn nuisance_spec(method: Method, seed: u64) -> CausalSpec {
    CausalSpec {
        propensity_learner: unpenalized(),
        ..spec(method, LearnerSpec::Linear, &["c"], seed)
    }
}

#[test]
fn noiseless_constant_effect_is_recovered_exactly() {
    let tau = 1.5;
    for seed in 0..3 {
        let table = constant_effect(seed, 2000, tau, 0.0);
        for method in [Method::X, Method::R] {
            let model = fit(&table, &nuisance_spec(method, seed)).unwrap();
            for ite in model.predict_ite(&table).unwrap() {
                assert!((ite - tau).abs() < 1e-6, "{method} seed {seed}: {ite}");
            }
        }
    }
}

#[test]
fn noisy_constant_effect_is_recovered_within_five_percent() {
    let tau = 1.5;
    for seed in 0..10 {
        let table = constant_effect(100 + seed, 5000, tau, 1.0);
        for method in [Method::X, Method::R] {
            let got = ate(&table, &nuisance_spec(method, seed));
            assert!((got - tau).abs() < 0.05 * tau, "{method} seed {seed}: {got}");
        }
    }
}

/// Randomized treatment with an outcome that ignores it.
fn pure_noise(seed: u64, n: usize) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_range(0..3);
        c.push(Some(LEVELS[k].to_string()));
        t.push(u8::from(rng.random_bool(0.5)));
        y.push(u8::from(rng.random_bool(0.2 + 0.2 * k as f64)));
    }
    Table::new(vec![
        Column::categorical("c", c),
        Column::binary("t", t),
        Column::binary("y", y),
    ])
    .unwrap()
}

#[test]
fn r_learner_finds_no_effect_in_pure_noise() {
    let estimates: Vec<f64> = (0..10)
        .map(|seed| {
            let table = pure_noise(200 + seed, 5000);
            ate(&table, &spec(Method::R, LearnerSpec::gbdt(), &["c"], seed))
        })
        .collect();
    let centre = mean(&estimates);
    let spread = (estimates.iter().map(|e| (e - centre).powi(2)).sum::<f64>() / 9.0).sqrt();
    for (seed, e) in estimates.iter().enumerate() {
        assert!(e.abs() < 3.0 * spread.max(1e-3), "seed {seed}: {e} (spread {spread})");
    }
    assert!(centre.abs() < 3.0 * spread / 10f64.sqrt());
}
