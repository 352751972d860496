use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus};
use crate::error::{Error, Result};
use crate::tabular::{Csr, FeatureMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L1,
    L2,
    None,
}

/// Logistic regression settings. `c` is the inverse regularization strength:
/// the objective is the weighted mean log loss plus `‖β‖₁ / (c·W)` (L1) or
/// `‖β‖² / (2·c·W)` (L2), with `W` the total sample weight. The intercept is
/// never penalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticSpec {
    pub penalty: Penalty,
    #[serde(rename = "C")]
    pub c: f64,
    pub fit_intercept: bool,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticSpec {
    fn default() -> Self {
        LogisticSpec {
            penalty: Penalty::L2,
            c: 1.0,
            fit_intercept: true,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

impl LogisticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::Config("logistic C must be positive".into()));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("logistic tol and max_iter must be positive".into()));
        }
        Ok(())
    }

    fn strength(&self, total_weight: f64) -> f64 {
        match self.penalty {
            Penalty::None => 0.0,
            _ => 1.0 / (self.c * total_weight),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn predict_proba(&self, x: &Csr) -> Vec<f64> {
        (0..x.n_rows)
            .map(|i| sigmoid(self.intercept + x.row_dot(i, &self.coef)))
            .collect()
    }
}

/// Objective value and its gradient at a parameter point.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub grad_intercept: f64,
    pub grad_coef: Vec<f64>,
}

/// Penalized mean log loss and gradient. For L1 the penalty gradient is
/// `λ·sign(β)`, valid away from zero.
pub fn logistic_objective(
    x: &FeatureMatrix,
    y: &[f64],
    weights: Option<&[f64]>,
    spec: &LogisticSpec,
    intercept: f64,
    coef: &[f64],
) -> Objective {
    let csr = x.to_csr();
    let n = csr.n_rows;
    let w: Vec<f64> = weights.map_or_else(|| vec![1.0; n], <[f64]>::to_vec);
    let total: f64 = w.iter().sum();
    let lambda = spec.strength(total);
    let mut value = 0.0;
    let mut grad_intercept = 0.0;
    let mut grad_coef = vec![0.0; csr.n_cols];
    for i in 0..n {
        let z = intercept + csr.row_dot(i, coef);
        value += w[i] * (softplus(z) - y[i] * z);
        let r = w[i] * (sigmoid(z) - y[i]);
        grad_intercept += r;
        for (j, v) in csr.row(i) {
            grad_coef[j] += r * v;
        }
    }
    value /= total;
    grad_intercept /= total;
    grad_coef.iter_mut().for_each(|g| *g /= total);
    match spec.penalty {
        Penalty::L1 => {
            value += lambda * coef.iter().map(|b| b.abs()).sum::<f64>();
            for (g, b) in grad_coef.iter_mut().zip(coef) {
                *g += lambda * b.signum();
            }
        }
        Penalty::L2 => {
            value += 0.5 * lambda * coef.iter().map(|b| b * b).sum::<f64>();
            for (g, b) in grad_coef.iter_mut().zip(coef) {
                *g += lambda * b;
            }
        }
        Penalty::None => {}
    }
    if !spec.fit_intercept {
        grad_intercept = 0.0;
    }
    Objective {
        value,
        grad_intercept,
        grad_coef,
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

struct Solver<'a> {
    y: &'a [f64],
    w: Vec<f64>,
    total: f64,
    margin: Vec<f64>,
    lambda: f64,
    penalty: Penalty,
}

impl Solver<'_> {
    fn penalty_of(&self, b: f64) -> f64 {
        match self.penalty {
            Penalty::L1 => self.lambda * b.abs(),
            Penalty::L2 => 0.5 * self.lambda * b * b,
            Penalty::None => 0.0,
        }
    }

    /// One safeguarded Newton step along a single coordinate whose column
    /// entries are `entries`; returns the accepted change.
    fn coordinate_step(&mut self, entries: &[(usize, f64)], current: f64, penalized: bool) -> f64 {
        let mut g = 0.0;
        let mut h = 0.0;
        for &(i, v) in entries {
            let p = sigmoid(self.margin[i]);
            g += self.w[i] * (p - self.y[i]) * v;
            h += self.w[i] * p * (1.0 - p) * v * v;
        }
        g /= self.total;
        h /= self.total;
        let penalty = if penalized { self.penalty } else { Penalty::None };
        let proposal = match penalty {
            Penalty::L1 => {
                if h <= 0.0 {
                    return 0.0;
                }
                soft_threshold(h * current - g, self.lambda) / h
            }
            Penalty::L2 => current - (g + self.lambda * current) / (h + self.lambda),
            Penalty::None => {
                if h <= 0.0 {
                    return 0.0;
                }
                current - g / h
            }
        };
        let delta = proposal - current;
        if delta == 0.0 || !delta.is_finite() {
            return 0.0;
        }
        let pen = |s: &Self, b: f64| if penalized { s.penalty_of(b) } else { 0.0 };
        let base = pen(self, current);
        let mut t = 1.0;
        for _ in 0..40 {
            let step = t * delta;
            let mut change = pen(self, current + step) - base;
            for &(i, v) in entries {
                let z = self.margin[i];
                let z2 = z + step * v;
                change += self.w[i] * ((softplus(z2) - self.y[i] * z2) - (softplus(z) - self.y[i] * z))
                    / self.total;
            }
            if change <= 0.0 {
                for &(i, v) in entries {
                    self.margin[i] += step * v;
                }
                return step;
            }
            t *= 0.5;
        }
        0.0
    }
}

/// Widest design solved by full Newton steps; wider or L1 problems use
/// coordinate descent.
pub const NEWTON_MAX_FEATURES: usize = 2000;

/// Smooth penalties with at most [`NEWTON_MAX_FEATURES`] columns are solved by
/// damped Newton iterations; L1 and wide designs by cyclic coordinate descent
/// with per-coordinate Newton steps (soft-thresholded under L1) and a
/// backtracking line search. Every update is monotone in the objective.
pub(crate) fn fit(
    x: &FeatureMatrix,
    y: &[f64],
    weights: Option<&[f64]>,
    spec: &LogisticSpec,
) -> Result<LogisticModel> {
    let csr = x.to_csr();
    if spec.penalty != Penalty::L1 && x.n_features() <= NEWTON_MAX_FEATURES {
        Ok(fit_newton(&csr, y, weights, spec))
    } else {
        Ok(fit_coordinate(&csr, y, weights, spec))
    }
}

fn fit_coordinate(csr: &Csr, y: &[f64], weights: Option<&[f64]>, spec: &LogisticSpec) -> LogisticModel {
    let csc = csr.to_csc();
    let n = csc.n_rows;
    let p = csc.n_cols;
    let w: Vec<f64> = weights.map_or_else(|| vec![1.0; n], <[f64]>::to_vec);
    let total: f64 = w.iter().sum();
    let mut solver = Solver {
        y,
        w,
        total,
        margin: vec![0.0; n],
        lambda: spec.strength(total),
        penalty: spec.penalty,
    };
    let columns: Vec<Vec<(usize, f64)>> = (0..p).map(|j| csc.col(j).collect()).collect();
    let ones: Vec<(usize, f64)> = (0..n).map(|i| (i, 1.0)).collect();

    let mut intercept = 0.0;
    let mut coef = vec![0.0; p];
    let mut iterations = 0;
    while iterations < spec.max_iter {
        iterations += 1;
        let mut max_change: f64 = 0.0;
        if spec.fit_intercept {
            let step = solver.coordinate_step(&ones, intercept, false);
            intercept += step;
            max_change = max_change.max(step.abs());
        }
        for (j, col) in columns.iter().enumerate() {
            if col.is_empty() {
                continue;
            }
            let step = solver.coordinate_step(col, coef[j], true);
            coef[j] += step;
            max_change = max_change.max(step.abs());
        }
        if max_change < spec.tol {
            break;
        }
    }
    LogisticModel {
        intercept,
        coef,
        iterations,
    }
}

/// Penalized mean log loss at `theta` (intercept first when fitted).
fn newton_objective(csr: &Csr, y: &[f64], w: &[f64], total: f64, lambda: f64, off: usize, theta: &[f64]) -> f64 {
    let b0 = if off == 1 { theta[0] } else { 0.0 };
    let coef = &theta[off..];
    let mut value = 0.0;
    for i in 0..csr.n_rows {
        let z = b0 + csr.row_dot(i, coef);
        value += w[i] * (softplus(z) - y[i] * z);
    }
    value / total + 0.5 * lambda * coef.iter().map(|b| b * b).sum::<f64>()
}

fn fit_newton(csr: &Csr, y: &[f64], weights: Option<&[f64]>, spec: &LogisticSpec) -> LogisticModel {
    let n = csr.n_rows;
    let p = csr.n_cols;
    let off = usize::from(spec.fit_intercept);
    let d = p + off;
    let w: Vec<f64> = weights.map_or_else(|| vec![1.0; n], <[f64]>::to_vec);
    let total: f64 = w.iter().sum();
    let lambda = spec.strength(total);
    let mut theta = vec![0.0; d];
    let mut value = newton_objective(csr, y, &w, total, lambda, off, &theta);
    let mut iterations = 0;
    let mut entries: Vec<(usize, f64)> = Vec::new();
    while iterations < spec.max_iter {
        iterations += 1;
        let mut grad = vec![0.0; d];
        let mut hess = DMatrix::<f64>::zeros(d, d);
        for i in 0..n {
            entries.clear();
            if off == 1 {
                entries.push((0, 1.0));
            }
            entries.extend(csr.row(i).map(|(j, v)| (j + off, v)));
            let z: f64 = entries.iter().map(|&(j, v)| theta[j] * v).sum();
            let prob = sigmoid(z);
            let r = w[i] * (prob - y[i]) / total;
            let c = w[i] * prob * (1.0 - prob) / total;
            for (a, &(ja, va)) in entries.iter().enumerate() {
                grad[ja] += r * va;
                for &(jb, vb) in &entries[a..] {
                    hess[(ja.min(jb), ja.max(jb))] += c * va * vb;
                }
            }
        }
        for j in off..d {
            grad[j] += lambda * theta[j];
            hess[(j, j)] += lambda;
        }
        hess.fill_lower_triangle_with_upper_triangle();
        let g = DVector::from_vec(grad);
        let mut ridge = 0.0;
        let step = loop {
            let mut h = hess.clone();
            if ridge > 0.0 {
                for j in 0..d {
                    h[(j, j)] += ridge;
                }
            }
            if let Some(chol) = h.cholesky() {
                break chol.solve(&g);
            }
            ridge = if ridge == 0.0 { 1e-10 } else { ridge * 10.0 };
            if ridge > 1e6 {
                break g.clone();
            }
        };
        let decrement = g.dot(&step);
        if !(decrement > 0.0) || decrement < spec.tol * spec.tol {
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            let v = newton_objective(csr, y, &w, total, lambda, off, &cand);
            if v <= value - 1e-4 * t * decrement {
                theta = cand;
                value = v;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || t * step.amax() < spec.tol {
            break;
        }
    }
    LogisticModel {
        intercept: if off == 1 { theta[0] } else { 0.0 },
        coef: theta[off..].to_vec(),
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n: usize, p: usize) -> (FeatureMatrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let truth: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = rows
            .iter()
            .map(|r| {
                let z: f64 = r.iter().zip(&truth).map(|(a, b)| a * b).sum();
                f64::from(rng.random::<f64>() < sigmoid(z))
            })
            .collect();
        (FeatureMatrix::from_dense_rows(&rows).unwrap(), y)
    }

    #[test]
    fn balanced_independent_target_gives_zero_model() {
        // Each x pattern appears once with y = 0 and once with y = 1.
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for a in [-1.0, 0.5, 2.0] {
            for b in [-0.3, 1.0] {
                for label in [0.0, 1.0] {
                    rows.push(vec![a, b]);
                    y.push(label);
                }
            }
        }
        let x = FeatureMatrix::from_dense_rows(&rows).unwrap();
        let spec = LogisticSpec {
            penalty: Penalty::None,
            ..LogisticSpec::default()
        };
        let m = fit(&x, &y, None, &spec).unwrap();
        assert!(m.intercept.abs() < 1e-6);
        assert!(m.coef.iter().all(|c| c.abs() < 1e-6));
    }

    #[test]
    fn strong_l1_zeroes_all_slopes() {
        let (x, y) = random_problem(3, 200, 6);
        let spec = LogisticSpec {
            penalty: Penalty::L1,
            c: 1e-6,
            ..LogisticSpec::default()
        };
        let m = fit(&x, &y, None, &spec).unwrap();
        assert!(m.coef.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn stationary_point_has_small_gradient() {
        let (x, y) = random_problem(5, 300, 4);
        for penalty in [Penalty::None, Penalty::L2] {
            let spec = LogisticSpec {
                penalty,
                tol: 1e-10,
                ..LogisticSpec::default()
            };
            let m = fit(&x, &y, None, &spec).unwrap();
            let obj = logistic_objective(&x, &y, None, &spec, m.intercept, &m.coef);
            assert!(obj.grad_intercept.abs() < 1e-7);
            assert!(obj.grad_coef.iter().all(|g| g.abs() < 1e-7), "{:?}", obj.grad_coef);
        }
    }

    #[test]
    fn newton_and_coordinate_paths_agree() {
        let (x, y) = random_problem(17, 400, 5);
        let w: Vec<f64> = (0..400).map(|i| 0.5 + (i % 3) as f64).collect();
        for fit_intercept in [true, false] {
            let spec = LogisticSpec {
                fit_intercept,
                tol: 1e-12,
                ..LogisticSpec::default()
            };
            let csr = x.to_csr();
            let a = fit_newton(&csr, &y, Some(&w), &spec);
            let b = fit_coordinate(&csr, &y, Some(&w), &spec);
            assert!((a.intercept - b.intercept).abs() < 1e-8);
            for (p, q) in a.coef.iter().zip(&b.coef) {
                assert!((p - q).abs() < 1e-8, "{p} vs {q}");
            }
        }
    }

    #[test]
    fn l1_subgradient_optimality() {
        let (x, y) = random_problem(9, 300, 6);
        let spec = LogisticSpec {
            penalty: Penalty::L1,
            c: 0.05,
            tol: 1e-10,
            ..LogisticSpec::default()
        };
        let m = fit(&x, &y, None, &spec).unwrap();
        let smooth = LogisticSpec {
            penalty: Penalty::None,
            ..spec.clone()
        };
        let obj = logistic_objective(&x, &y, None, &smooth, m.intercept, &m.coef);
        let lambda = 1.0 / (spec.c * 300.0);
        for (g, b) in obj.grad_coef.iter().zip(&m.coef) {
            if *b == 0.0 {
                assert!(g.abs() <= lambda + 1e-7);
            } else {
                assert!((g + lambda * b.signum()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn no_intercept_option() {
        let (x, y) = random_problem(2, 100, 3);
        let spec = LogisticSpec {
            fit_intercept: false,
            ..LogisticSpec::default()
        };
        assert_eq!(fit(&x, &y, None, &spec).unwrap().intercept, 0.0);
    }

    #[test]
    fn sparsity_is_monotone_in_penalty() {
        let (x, y) = random_problem(21, 300, 12);
        let nnz = |c: f64| {
            let spec = LogisticSpec {
                penalty: Penalty::L1,
                c,
                tol: 1e-9,
                ..LogisticSpec::default()
            };
            fit(&x, &y, None, &spec)
                .unwrap()
                .coef
                .iter()
                .filter(|&&b| b != 0.0)
                .count()
        };
        let counts = [nnz(1.0), nnz(0.05), nnz(0.01)];
        assert!(counts[0] >= counts[1] && counts[1] >= counts[2], "{counts:?}");
    }
}
