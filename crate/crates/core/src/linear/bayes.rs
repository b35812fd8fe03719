use serde::{Deserialize, Serialize};

use super::{center, check_xy, invalid, linalg, SolverDiagnostics};
use crate::error::Result;
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BayesianRidgeParams {
    pub alpha_1: f64,
    pub alpha_2: f64,
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for BayesianRidgeParams {
    fn default() -> Self {
        Self {
            alpha_1: 1e-6,
            alpha_2: 1e-6,
            lambda_1: 1e-6,
            lambda_2: 1e-6,
            max_iter: 300,
            tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayesianLinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Noise precision.
    pub alpha: f64,
    /// Weight precision.
    pub lambda: f64,
    /// Posterior covariance of the coefficients, `p×p`.
    pub sigma: Matrix,
    pub hyperpriors: BayesianRidgeParams,
    pub diagnostics: SolverDiagnostics,
}

impl BayesianLinearModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + linalg::dot(row, &self.coefficients)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.ensure_cols(self.coefficients.len())?;
        Ok(x.iter_rows().map(|r| self.predict_row(r)).collect())
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let p = self.coefficients.len();
        if !(self.alpha > 0.0 && self.lambda > 0.0) {
            return Err("precisions must be positive".into());
        }
        if self.sigma.rows() != p || self.sigma.cols() != p {
            return Err("posterior covariance has the wrong shape".into());
        }
        if !self.intercept.is_finite() || self.coefficients.iter().any(|c| !c.is_finite()) {
            return Err("non-finite coefficient".into());
        }
        Ok(())
    }
}

/// Posterior `(μ, Σ)` for precisions `alpha` (noise) and `lambda` (weights)
/// given the Gram matrix `XᵀX` and `Xᵀy` of centered data. `None` if the
/// precision matrix is not numerically positive definite.
pub fn posterior_mean(gram: &[f64], xty: &[f64], alpha: f64, lambda: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let p = xty.len();
    let mut a: Vec<f64> = gram.iter().map(|g| alpha * g).collect();
    for i in 0..p {
        a[i * p + i] += lambda;
    }
    let l = linalg::cholesky(&a, p)?;
    let sigma = linalg::cholesky_inverse(&l, p);
    let rhs: Vec<f64> = xty.iter().map(|v| alpha * v).collect();
    let mu = linalg::cholesky_solve(&l, p, &rhs);
    Some((mu, sigma))
}

/// Evidence maximization for Bayesian ridge regression.
pub fn fit_bayesian_ridge(x: &Matrix, y: &[f64], params: &BayesianRidgeParams) -> Result<BayesianLinearModel> {
    for (key, v) in [
        ("alpha_1", params.alpha_1),
        ("alpha_2", params.alpha_2),
        ("lambda_1", params.lambda_1),
        ("lambda_2", params.lambda_2),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(invalid(key, "must be a finite value >= 0"));
        }
    }
    if params.max_iter == 0 {
        return Err(invalid("max_iter", "must be at least 1"));
    }
    check_xy(x, y, 2)?;
    let c = center(x, y);
    let n = c.y.len() as f64;
    let p = c.columns.len();
    let gram = c.gram();
    let xty = c.xty();
    let var_y = c.y.iter().map(|v| v * v).sum::<f64>() / n;
    let mut alpha = if var_y > 0.0 { 1.0 / var_y } else { 1.0 / f64::EPSILON };
    let mut lambda = 1.0;
    let mut previous: Option<Vec<f64>> = None;
    let mut iterations = 0;
    let mut change = f64::INFINITY;
    let mut converged = false;

    let solve = |alpha: f64, lambda: f64| {
        posterior_mean(&gram, &xty, alpha, lambda).ok_or_else(|| {
            crate::Error::InvalidArgument("posterior precision is not positive definite".into())
        })
    };

    while iterations < params.max_iter {
        iterations += 1;
        let (mu, sigma) = solve(alpha, lambda)?;
        let sse: f64 = (0..c.y.len())
            .map(|i| {
                let fit: f64 = (0..p).map(|j| c.columns[j][i] * mu[j]).sum();
                (c.y[i] - fit).powi(2)
            })
            .sum();
        let trace: f64 = (0..p).map(|j| sigma[j * p + j]).sum();
        let gamma = p as f64 - lambda * trace;
        let mu_sq: f64 = mu.iter().map(|m| m * m).sum();
        lambda = (gamma + 2.0 * params.lambda_1) / (mu_sq + 2.0 * params.lambda_2);
        alpha = (n - gamma + 2.0 * params.alpha_1) / (sse + 2.0 * params.alpha_2);
        if !(lambda > 0.0 && lambda.is_finite() && alpha > 0.0 && alpha.is_finite()) {
            return Err(crate::Error::InvalidArgument("evidence iteration diverged".into()));
        }
        if let Some(prev) = &previous {
            change = prev.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
            if change < params.tol {
                converged = true;
                break;
            }
        }
        previous = Some(mu);
    }

    let (mu, sigma) = solve(alpha, lambda)?;
    let intercept = c.y_mean - linalg::dot(&c.x_mean, &mu);
    Ok(BayesianLinearModel {
        coefficients: mu,
        intercept,
        alpha,
        lambda,
        sigma: Matrix::from_vec(p, p, sigma)?,
        hyperpriors: params.clone(),
        diagnostics: SolverDiagnostics {
            iterations,
            converged,
            final_tolerance: change,
            rank_deficient: Vec::new(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_feature_posterior_mean() {
        // Centered x = (−1, 0, 1), y = (−2, 0, 2): Sxx = 2, Sxy = 4.
        let (mu, sigma) = posterior_mean(&[2.0], &[4.0], 1.0, 1.0).unwrap();
        assert!((mu[0] - 4.0 / 3.0).abs() < 1e-15);
        assert!((sigma[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    fn data() -> (Matrix, Vec<f64>) {
        let mut rng = crate::rng::SplitMix64::new(8);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let y = rows.iter().map(|r| 2.0 * r[0] - r[1] + 0.5 * r[2] + 0.3 * rng.normal()).collect();
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn strong_weight_prior_shrinks() {
        let (x, y) = data();
        let base = fit_bayesian_ridge(&x, &y, &BayesianRidgeParams::default()).unwrap();
        let strong = fit_bayesian_ridge(&x, &y, &BayesianRidgeParams { lambda_1: 1e6, ..Default::default() }).unwrap();
        let norm = |m: &BayesianLinearModel| m.coefficients.iter().map(|c| c * c).sum::<f64>();
        assert!(norm(&strong) < norm(&base));
        assert!(base.diagnostics.converged);
        assert!(base.validate().is_ok());
    }

    #[test]
    fn noiseless_data_matches_ols() {
        let (x, _) = data();
        let y: Vec<f64> = x.iter_rows().map(|r| 1.0 + 2.0 * r[0] - r[1] + 0.5 * r[2]).collect();
        let b = fit_bayesian_ridge(&x, &y, &BayesianRidgeParams::default()).unwrap();
        let o = super::super::fit_ols(&x, &y).unwrap();
        for (u, v) in b.predict(&x).unwrap().iter().zip(o.predict(&x).unwrap()) {
            assert!((u - v).abs() < 1e-3);
        }
    }
}
