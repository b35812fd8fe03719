//! Non-tree baselines: least squares with L2/L1 penalties, Bayesian ridge,
//! partial least squares and k-nearest neighbours.
//!
//! Penalized fits work on centered data and never penalize the intercept.
//! Lasso and elastic net scale the loss by `1/(2n)`; ridge does not, so
//! elastic net with `l1_ratio = 0` and penalty `α` matches ridge with `n·α`.

mod bayes;
mod knn;
pub(crate) mod linalg;
mod pls;

pub use bayes::{fit_bayesian_ridge, posterior_mean, BayesianLinearModel, BayesianRidgeParams};
pub use knn::{fit_knn, KnnModel, KnnParams, KnnWeights};
pub use pls::{fit_pls, PlsModel, PlsParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub final_tolerance: f64,
    /// Columns whose coefficient was fixed at 0 because they are linearly
    /// dependent on the others.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rank_deficient: Vec<usize>,
}

impl SolverDiagnostics {
    fn direct() -> Self {
        Self {
            iterations: 1,
            converged: true,
            final_tolerance: 0.0,
            rank_deficient: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearKind {
    Ols,
    Ridge,
    Lasso,
    ElasticNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearModel {
    pub kind: LinearKind,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub diagnostics: SolverDiagnostics,
}

impl LinearModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + linalg::dot(row, &self.coefficients)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.ensure_cols(self.coefficients.len())?;
        Ok(x.iter_rows().map(|r| self.predict_row(r)).collect())
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !self.intercept.is_finite() || self.coefficients.iter().any(|c| !c.is_finite()) {
            return Err("non-finite coefficient".into());
        }
        Ok(())
    }
}

/// Column means, the centered columns (column-major) and the centered
/// target.
pub(crate) struct Centered {
    pub x_mean: Vec<f64>,
    pub y_mean: f64,
    pub columns: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

pub(crate) fn center(x: &Matrix, y: &[f64]) -> Centered {
    let n = x.rows() as f64;
    let x_mean: Vec<f64> = (0..x.cols())
        .map(|j| x.column(j).iter().sum::<f64>() / n)
        .collect();
    let y_mean = y.iter().sum::<f64>() / n;
    let columns = (0..x.cols())
        .map(|j| x.column(j).iter().map(|v| v - x_mean[j]).collect())
        .collect();
    let y = y.iter().map(|v| v - y_mean).collect();
    Centered {
        x_mean,
        y_mean,
        columns,
        y,
    }
}

impl Centered {
    fn intercept(&self, beta: &[f64]) -> f64 {
        self.y_mean - linalg::dot(&self.x_mean, beta)
    }

    /// Row-major `XcᵀXc`.
    pub(crate) fn gram(&self) -> Vec<f64> {
        let p = self.columns.len();
        let mut g = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..=i {
                let v = linalg::dot(&self.columns[i], &self.columns[j]);
                g[i * p + j] = v;
                g[j * p + i] = v;
            }
        }
        g
    }

    pub(crate) fn xty(&self) -> Vec<f64> {
        self.columns.iter().map(|c| linalg::dot(c, &self.y)).collect()
    }
}

pub(crate) fn check_xy(x: &Matrix, y: &[f64], min_rows: usize) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::LengthMismatch(x.rows(), y.len()));
    }
    if x.rows() < min_rows {
        return Err(Error::InvalidArgument(format!(
            "at least {min_rows} rows are required, got {}",
            x.rows()
        )));
    }
    if x.as_slice().iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in training data".into()));
    }
    Ok(())
}

fn invalid(key: &str, reason: &str) -> Error {
    Error::InvalidHyperparameter {
        key: key.into(),
        reason: reason.into(),
    }
}

/// Ordinary least squares by column-pivoted QR on centered data.
pub fn fit_ols(x: &Matrix, y: &[f64]) -> Result<LinearModel> {
    check_xy(x, y, 2)?;
    let c = center(x, y);
    let sol = linalg::lstsq_pivoted(c.columns.clone(), c.y.clone());
    let mut diagnostics = SolverDiagnostics::direct();
    diagnostics.rank_deficient = sol.dropped;
    Ok(LinearModel {
        kind: LinearKind::Ols,
        intercept: c.intercept(&sol.beta),
        coefficients: sol.beta,
        diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RidgeParams {
    pub alpha: f64,
    /// Accepted for compatibility; every solver maps to the Cholesky path.
    pub solver: String,
}

impl Default for RidgeParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            solver: "auto".into(),
        }
    }
}

/// Ridge regression minimizing `‖yc − Xcβ‖² + α‖β‖²`.
pub fn fit_ridge(x: &Matrix, y: &[f64], params: &RidgeParams) -> Result<LinearModel> {
    let alpha = params.alpha;
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(invalid("alpha", "must be a finite value >= 0"));
    }
    if alpha == 0.0 {
        let mut m = fit_ols(x, y)?;
        m.kind = LinearKind::Ridge;
        return Ok(m);
    }
    check_xy(x, y, 2)?;
    let c = center(x, y);
    let p = c.columns.len();
    let mut a = c.gram();
    for i in 0..p {
        a[i * p + i] += alpha;
    }
    let beta = match linalg::spd_solve(&a, p, &c.xty()) {
        Some(b) => b,
        None => {
            // Numerically indefinite: solve the augmented least-squares
            // system [Xc; √α I] β ≈ [yc; 0] instead.
            let n = c.y.len();
            let cols = c
                .columns
                .iter()
                .enumerate()
                .map(|(j, col)| {
                    let mut v = col.clone();
                    v.extend((0..p).map(|k| if k == j { alpha.sqrt() } else { 0.0 }));
                    v
                })
                .collect();
            let mut b = c.y.clone();
            b.resize(n + p, 0.0);
            linalg::lstsq_pivoted(cols, b).beta
        }
    };
    Ok(LinearModel {
        kind: LinearKind::Ridge,
        intercept: c.intercept(&beta),
        coefficients: beta,
        diagnostics: SolverDiagnostics::direct(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    Cyclic,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoParams {
    pub alpha: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub selection: Selection,
    pub seed: u64,
}

impl Default for LassoParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            max_iter: 1000,
            tol: 1e-4,
            selection: Selection::Cyclic,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElasticNetParams {
    pub alpha: f64,
    pub l1_ratio: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub selection: Selection,
    pub seed: u64,
}

impl Default for ElasticNetParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            l1_ratio: 0.5,
            max_iter: 1000,
            tol: 1e-4,
            selection: Selection::Cyclic,
            seed: 0,
        }
    }
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Lasso: `(1/2n)‖yc − Xcβ‖² + α‖β‖₁` by coordinate descent.
pub fn fit_lasso(x: &Matrix, y: &[f64], params: &LassoParams) -> Result<LinearModel> {
    if !(params.alpha > 0.0) || !params.alpha.is_finite() {
        return Err(invalid("alpha", "must be a finite value > 0"));
    }
    let enet = ElasticNetParams {
        alpha: params.alpha,
        l1_ratio: 1.0,
        max_iter: params.max_iter,
        tol: params.tol,
        selection: params.selection,
        seed: params.seed,
    };
    let mut m = fit_elastic_net(x, y, &enet)?;
    m.kind = LinearKind::Lasso;
    Ok(m)
}

/// Elastic net: `(1/2n)‖yc − Xcβ‖² + αρ‖β‖₁ + ½α(1−ρ)‖β‖²`.
pub fn fit_elastic_net(x: &Matrix, y: &[f64], params: &ElasticNetParams) -> Result<LinearModel> {
    if !(params.alpha >= 0.0) || !params.alpha.is_finite() {
        return Err(invalid("alpha", "must be a finite value >= 0"));
    }
    if !(0.0..=1.0).contains(&params.l1_ratio) {
        return Err(invalid("l1_ratio", "must lie in [0, 1]"));
    }
    if params.max_iter == 0 {
        return Err(invalid("max_iter", "must be at least 1"));
    }
    if !(params.tol > 0.0) {
        return Err(invalid("tol", "must be positive"));
    }
    check_xy(x, y, 2)?;
    let c = center(x, y);
    let n = c.y.len() as f64;
    let p = c.columns.len();
    let l1 = params.alpha * params.l1_ratio;
    let l2 = params.alpha * (1.0 - params.l1_ratio);
    let denom: Vec<f64> = c
        .columns
        .iter()
        .map(|col| linalg::dot(col, col) / n + l2)
        .collect();
    let mut beta = vec![0.0; p];
    let mut residual = c.y.clone();
    let mut rng = SplitMix64::new(params.seed);
    let mut iterations = 0;
    let mut max_change = f64::INFINITY;

    while iterations < params.max_iter {
        iterations += 1;
        max_change = 0.0;
        for step in 0..p {
            let j = match params.selection {
                Selection::Cyclic => step,
                Selection::Random => rng.below(p),
            };
            if denom[j] == 0.0 {
                continue;
            }
            let col = &c.columns[j];
            let old = beta[j];
            let rho = (linalg::dot(col, &residual) + old * linalg::dot(col, col)) / n;
            let new = soft_threshold(rho, l1) / denom[j];
            if new != old {
                let delta = new - old;
                for (r, xv) in residual.iter_mut().zip(col) {
                    *r -= delta * xv;
                }
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < params.tol {
            break;
        }
    }
    let kind = if params.l1_ratio == 1.0 {
        LinearKind::Lasso
    } else {
        LinearKind::ElasticNet
    };
    Ok(LinearModel {
        kind,
        intercept: c.intercept(&beta),
        coefficients: beta,
        diagnostics: SolverDiagnostics {
            iterations,
            converged: max_change < params.tol,
            final_tolerance: max_change,
            rank_deficient: Vec::new(),
        },
    })
}
