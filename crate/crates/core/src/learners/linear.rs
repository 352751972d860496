use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tabular::{Csr, FeatureMatrix};

const RIDGE_JITTER: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl LinearModel {
    pub fn predict(&self, x: &Csr) -> Vec<f64> {
        (0..x.n_rows)
            .map(|i| self.intercept + x.row_dot(i, &self.coef))
            .collect()
    }
}

/// Weighted least squares with an unpenalized intercept.
///
/// Features and targets are centered, so the intercept is the weighted mean
/// residual. Dense designs solve the normal equations by Cholesky (adding a
/// tiny ridge only if the Gram matrix is singular); designs carrying sparse
/// text blocks use conjugate gradients on the ridge-jittered normal equations.
pub(crate) fn fit(x: &FeatureMatrix, y: &[f64], weights: Option<&[f64]>) -> Result<LinearModel> {
    let csr = x.to_csr();
    let n = csr.n_rows;
    let p = csr.n_cols;
    let w: Vec<f64> = weights.map_or_else(|| vec![1.0; n], <[f64]>::to_vec);
    let total: f64 = w.iter().sum();

    let mut x_mean = vec![0.0; p];
    for i in 0..n {
        for (j, v) in csr.row(i) {
            x_mean[j] += w[i] * v;
        }
    }
    x_mean.iter_mut().for_each(|m| *m /= total);
    let y_mean = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / total;
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

    let coef = if p == 0 {
        Vec::new()
    } else if x.has_sparse() {
        solve_cg(&csr, &x_mean, &yc, &w)
    } else {
        solve_dense(&csr, &x_mean, &yc, &w)
    };
    let intercept = y_mean - coef.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
    Ok(LinearModel { intercept, coef })
}

fn solve_dense(csr: &Csr, x_mean: &[f64], yc: &[f64], w: &[f64]) -> Vec<f64> {
    let p = csr.n_cols;
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for i in 0..csr.n_rows {
        row.copy_from_slice(x_mean);
        row.iter_mut().for_each(|v| *v = -*v);
        for (j, v) in csr.row(i) {
            row[j] += v;
        }
        for a in 0..p {
            let wa = w[i] * row[a];
            if wa == 0.0 {
                continue;
            }
            rhs[a] += wa * yc[i];
            for b in a..p {
                gram[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let max_diag = (0..p).map(|a| gram[(a, a)]).fold(0.0, f64::max).max(1.0);
    if let Some(chol) = gram.clone().cholesky() {
        let l = chol.l_dirty();
        let min_pivot = (0..p).map(|a| l[(a, a)] * l[(a, a)]).fold(f64::INFINITY, f64::min);
        if min_pivot > 1e-12 * max_diag {
            return chol.solve(&rhs).iter().copied().collect();
        }
    }
    let mut jitter = RIDGE_JITTER * max_diag;
    loop {
        let mut g = gram.clone();
        for a in 0..p {
            g[(a, a)] += jitter;
        }
        if let Some(chol) = g.cholesky() {
            return chol.solve(&rhs).iter().copied().collect();
        }
        jitter *= 10.0;
    }
}

fn solve_cg(csr: &Csr, x_mean: &[f64], yc: &[f64], w: &[f64]) -> Vec<f64> {
    let p = csr.n_cols;
    let n = csr.n_rows;
    // A v = Xcᵀ W Xc v + λ v, with Xc the weighted-centered design.
    let apply = |v: &[f64]| -> Vec<f64> {
        let shift: f64 = v.iter().zip(x_mean).map(|(a, b)| a * b).sum();
        let u: Vec<f64> = (0..n).map(|i| w[i] * (csr.row_dot(i, v) - shift)).collect();
        let mut out = vec![0.0; p];
        let mut u_sum = 0.0;
        for i in 0..n {
            u_sum += u[i];
            for (j, x) in csr.row(i) {
                out[j] += x * u[i];
            }
        }
        for j in 0..p {
            out[j] += RIDGE_JITTER * v[j] - x_mean[j] * u_sum;
        }
        out
    };
    let mut b = vec![0.0; p];
    let mut b_sum = 0.0;
    for i in 0..n {
        let r = w[i] * yc[i];
        b_sum += r;
        for (j, x) in csr.row(i) {
            b[j] += x * r;
        }
    }
    for j in 0..p {
        b[j] -= x_mean[j] * b_sum;
    }

    let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
    let mut beta = vec![0.0; p];
    let mut r = b.clone();
    let mut d = r.clone();
    let mut rs = dot(&r, &r);
    let target = 1e-24 * rs.max(f64::MIN_POSITIVE);
    for _ in 0..(10 * p + 100) {
        if rs <= target {
            break;
        }
        let ad = apply(&d);
        let alpha = rs / dot(&d, &ad);
        for j in 0..p {
            beta[j] += alpha * d[j];
            r[j] -= alpha * ad[j];
        }
        let rs_new = dot(&r, &r);
        let step = rs_new / rs;
        for j in 0..p {
            d[j] = r[j] + step * d[j];
        }
        rs = rs_new;
    }
    beta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::FeatureBlock;
    use crate::text_vectorizer::SparseVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_target_gives_zero_slopes() {
        let x = FeatureMatrix::from_dense_rows(&[vec![1.0, 5.0], vec![2.0, 5.0], vec![7.0, 5.0]]).unwrap();
        let m = fit(&x, &[4.0; 3], None).unwrap();
        assert!((m.intercept - 4.0).abs() < 1e-8);
        assert!(m.coef.iter().all(|c| c.abs() < 1e-8));
    }

    #[test]
    fn two_points_interpolated() {
        let x = FeatureMatrix::from_dense_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let m = fit(&x, &[1.0, 3.0], None).unwrap();
        assert!((m.coef[0] - 2.0).abs() < 1e-9);
        assert!((m.intercept - 1.0).abs() < 1e-9);
    }

    fn random_problem(seed: u64, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        (rows, y)
    }

    #[test]
    fn residuals_orthogonal_to_columns() {
        let (rows, y) = random_problem(7, 50, 5);
        let x = FeatureMatrix::from_dense_rows(&rows).unwrap();
        let m = fit(&x, &y, None).unwrap();
        let csr = x.to_csr();
        let resid: Vec<f64> = m.predict(&csr).iter().zip(&y).map(|(p, t)| t - p).collect();
        assert!(resid.iter().sum::<f64>().abs() < 1e-6);
        for j in 0..5 {
            let dot: f64 = rows.iter().zip(&resid).map(|(r, e)| r[j] * e).sum();
            assert!(dot.abs() < 1e-6, "column {j}: {dot}");
        }
    }

    #[test]
    fn sparse_path_matches_dense_path() {
        let (rows, y) = random_problem(11, 60, 4);
        let dense = FeatureMatrix::from_dense_rows(&rows).unwrap();
        let sparse_rows = rows
            .iter()
            .map(|r| SparseVector::new(r.iter().copied().enumerate().collect(), 4))
            .collect();
        let sparse = FeatureMatrix::new(
            60,
            vec![FeatureBlock::Sparse {
                width: 4,
                rows: sparse_rows,
            }],
            (0..4).map(|j| format!("x{j}")).collect(),
        )
        .unwrap();
        let a = fit(&dense, &y, None).unwrap();
        let b = fit(&sparse, &y, None).unwrap();
        for (u, v) in a.coef.iter().zip(&b.coef) {
            assert!((u - v).abs() < 1e-6);
        }
        assert!((a.intercept - b.intercept).abs() < 1e-6);
    }

    #[test]
    fn duplicate_columns_do_not_blow_up() {
        let x = FeatureMatrix::from_dense_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        let m = fit(&x, &[2.0, 4.0, 6.0], None).unwrap();
        let pred = m.predict(&x.to_csr());
        for (p, t) in pred.iter().zip([2.0, 4.0, 6.0]) {
            assert!((p - t).abs() < 1e-6);
        }
    }

    #[test]
    fn weights_select_rows() {
        let x = FeatureMatrix::from_dense_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        // zero weight on the outlier recovers the line through the other two
        let m = fit(&x, &[0.0, 1.0, 100.0], Some(&[1.0, 1.0, 0.0])).unwrap();
        assert!((m.coef[0] - 1.0).abs() < 1e-9);
        assert!(m.intercept.abs() < 1e-9);
    }
}
