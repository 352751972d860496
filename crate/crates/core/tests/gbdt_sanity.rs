//! Boosted-tree behaviour: monotone training loss, an exactly learnable
//! threshold, byte-level determinism, and predictions equal to an
//! independent walk over the serialized trees.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textcausal::learners::{self, FittedLearner, GbdtSpec, LearnerParams, LearnerSpec, Node, Task};
use textcausal::tabular::{FeatureBlock, FeatureMatrix};
use textcausal::text_vectorizer::SparseVector;

fn dense(seed: u64, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let y = rows
        .iter()
        .map(|r| {
            let z = 2.0 * r[0] - r[1 % p] + 0.5 * (r[0] * r[p - 1]);
            f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-3.0 * z).exp()))
        })
        .collect();
    (rows, y)
}

/// Dense covariates next to a sparse block with many exact zeros.
fn mixed(seed: u64, n: usize) -> (FeatureMatrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * 2);
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.random_range(-1.0..1.0);
        let b = f64::from(rng.random_bool(0.4));
        values.extend([a, b]);
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for k in 0..6 {
            if rng.random_bool(0.2) {
                entries.push((k, rng.random_range(0.1..1.0)));
            }
        }
        let signal = entries.iter().map(|&(k, v)| if k < 2 { v } else { 0.0 }).sum::<f64>();
        y.push(a + 2.0 * b + 3.0 * signal + rng.random_range(-0.1..0.1));
        rows.push(SparseVector::new(entries, 6));
    }
    let names = (0..8).map(|k| format!("f{k}")).collect();
    let x = FeatureMatrix::new(
        n,
        vec![
            FeatureBlock::Dense { width: 2, values },
            FeatureBlock::Sparse { width: 6, rows },
        ],
        names,
    )
    .unwrap();
    (x, y)
}

fn gbdt(spec: GbdtSpec) -> LearnerSpec {
    LearnerSpec::Gbdt(spec)
}

fn history(model: &FittedLearner) -> &[f64] {
    match model.params() {
        LearnerParams::Gbdt(m) => &m.loss_history,
        _ => unreachable!(),
    }
}

#[test]
fn training_loss_never_increases() {
    for seed in 0..5 {
        let (rows, y) = dense(seed, 400, 4);
        let x = FeatureMatrix::from_dense_rows(&rows).unwrap();
        for (task, target) in [(Task::Classification, y.clone()), (Task::Regression, y.iter().map(|v| v * 3.0 - 1.0).collect())] {
            let spec = GbdtSpec {
                seed,
                reg_alpha: [0.0, 0.5][seed as usize % 2],
                colsample_bytree: [1.0, 0.5][seed as usize % 2],
                ..GbdtSpec::default()
            };
            let m = learners::fit(&gbdt(spec), &x, &target, None, task).unwrap();
            let h = history(&m);
            assert_eq!(h.len(), 101);
            for w in h.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "seed {seed} {task:?}: {} -> {}", w[0], w[1]);
            }
        }
    }
}

#[test]
fn one_dimensional_threshold_is_learned_exactly() {
    let rows: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 10.0]).collect();
    let y: Vec<f64> = rows.iter().map(|r| f64::from(r[0] > 7.35)).collect();
    let x = FeatureMatrix::from_dense_rows(&rows).unwrap();
    let m = learners::fit(&gbdt(GbdtSpec::default()), &x, &y, None, Task::Classification).unwrap();
    let p = m.predict(&x).unwrap();
    let correct = p.iter().zip(&y).filter(|(p, y)| f64::from(**p > 0.5) == **y).count();
    assert_eq!(correct, y.len());
}

#[test]
fn fits_are_byte_identical_per_seed() {
    let (x, y) = mixed(4, 500);
    let spec = GbdtSpec {
        subsample: 0.7,
        colsample_bytree: 0.6,
        seed: 9,
        ..GbdtSpec::default()
    };
    let a = learners::fit(&gbdt(spec.clone()), &x, &y, None, Task::Regression).unwrap();
    let b = learners::fit(&gbdt(spec.clone()), &x, &y, None, Task::Regression).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let c = learners::fit(&gbdt(GbdtSpec { seed: 10, ..spec }), &x, &y, None, Task::Regression).unwrap();
    assert_ne!(a.to_json().unwrap(), c.to_json().unwrap());
}

/// Walks the serialized trees over a dense copy of each row.
fn walk(model: &FittedLearner, x: &FeatureMatrix, task: Task) -> Vec<f64> {
    let LearnerParams::Gbdt(m) = model.params() else { unreachable!() };
    (0..x.n_rows())
        .map(|i| {
            let row = x.dense_row(i);
            let mut margin = m.base_score;
            for tree in &m.trees {
                let mut k = 0;
                loop {
                    match &tree.nodes[k] {
                        Node::Leaf { value } => {
                            margin += value;
                            break;
                        }
                        Node::Split { feature, threshold, left, right } => {
                            k = if row[*feature] <= *threshold { *left } else { *right };
                        }
                    }
                }
            }
            match task {
                Task::Regression => margin,
                Task::Classification => 1.0 / (1.0 + (-margin).exp()),
            }
        })
        .collect()
}

#[test]
fn predictions_equal_tree_walk() {
    let (x, y) = mixed(7, 600);
    let m = learners::fit(&gbdt(GbdtSpec::default()), &x, &y, None, Task::Regression).unwrap();
    let fast = m.predict(&x).unwrap();
    for (a, b) in fast.iter().zip(walk(&m, &x, Task::Regression)) {
        assert!((a - b).abs() <= 1e-12);
    }
    let yb: Vec<f64> = y.iter().map(|&v| f64::from(v > 1.0)).collect();
    let m = learners::fit(&gbdt(GbdtSpec::default()), &x, &yb, None, Task::Classification).unwrap();
    let fast = m.predict(&x).unwrap();
    for (a, b) in fast.iter().zip(walk(&m, &x, Task::Classification)) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn leaves_respect_num_leaves_and_min_child_samples() {
    let (x, y) = mixed(1, 800);
    let spec = GbdtSpec {
        num_leaves: 7,
        min_child_samples: 40,
        n_rounds: 10,
        ..GbdtSpec::default()
    };
    let m = learners::fit(&gbdt(spec), &x, &y, None, Task::Regression).unwrap();
    let LearnerParams::Gbdt(g) = m.params() else { unreachable!() };
    for tree in &g.trees {
        assert!(tree.n_leaves() <= 7);
    }
    // Every leaf of the first tree holds at least 40 training rows.
    let tree = &g.trees[0];
    let mut counts = vec![0usize; tree.nodes.len()];
    for i in 0..x.n_rows() {
        let row = x.dense_row(i);
        let mut k = 0;
        while let Node::Split { feature, threshold, left, right } = &tree.nodes[k] {
            k = if row[*feature] <= *threshold { *left } else { *right };
        }
        counts[k] += 1;
    }
    for (k, node) in tree.nodes.iter().enumerate() {
        if matches!(node, Node::Leaf { .. }) {
            assert!(counts[k] >= 40, "leaf {k} has {} rows", counts[k]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn regression_predictions_stay_in_target_hull(seed in 0u64..1000) {
        let (x, y) = mixed(seed, 120);
        let spec = GbdtSpec { n_rounds: 20, min_child_samples: 5, ..GbdtSpec::default() };
        let m = learners::fit(&gbdt(spec), &x, &y, None, Task::Regression).unwrap();
        let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for p in m.predict(&x).unwrap() {
            prop_assert!(p >= lo - 1e-9 && p <= hi + 1e-9);
        }
    }

    #[test]
    fn classification_outputs_are_probabilities(seed in 0u64..1000) {
        let (rows, y) = dense(seed, 150, 3);
        let x = FeatureMatrix::from_dense_rows(&rows).unwrap();
        let spec = GbdtSpec { n_rounds: 15, min_child_samples: 5, seed, subsample: 0.8, ..GbdtSpec::default() };
        let m = learners::fit(&gbdt(spec), &x, &y, None, Task::Classification).unwrap();
        for p in m.predict(&x).unwrap() {
            prop_assert!(p > 0.0 && p < 1.0);
        }
    }
}
