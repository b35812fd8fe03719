use serde::{Deserialize, Serialize};

use super::{check_xy, invalid, linalg};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlsParams {
    pub n_components: usize,
}

impl Default for PlsParams {
    fn default() -> Self {
        Self { n_components: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlsModel {
    pub n_components: usize,
    /// Components actually extracted; smaller than `n_components` when
    /// extraction stopped on a degenerate component.
    pub components_used: usize,
    pub degenerate: bool,
    /// `p×k` weights W.
    pub x_weights: Matrix,
    /// `p×k` loadings P.
    pub x_loadings: Matrix,
    pub y_loadings: Vec<f64>,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    /// Regression vector in original units.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl PlsModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + linalg::dot(row, &self.coefficients)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.ensure_cols(self.coefficients.len())?;
        Ok(x.iter_rows().map(|r| self.predict_row(r)).collect())
    }

    /// Latent scores `T = Xs·W·(PᵀW)⁻¹`.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        let p = self.x_mean.len();
        x.ensure_cols(p)?;
        let k = self.components_used;
        let rotations = self.rotations();
        let mut out = Matrix::zeros(x.rows(), k);
        for (i, row) in x.iter_rows().enumerate() {
            for c in 0..k {
                let s: f64 = (0..p)
                    .map(|j| (row[j] - self.x_mean[j]) / self.x_std[j] * rotations[j * k + c])
                    .sum();
                out.set(i, c, s);
            }
        }
        Ok(out)
    }

    fn rotations(&self) -> Vec<f64> {
        let p = self.x_mean.len();
        let k = self.components_used;
        // PᵀW (k×k), then W·(PᵀW)⁻¹ column by column of the identity.
        let mut ptw = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..k {
                ptw[a * k + b] = (0..p)
                    .map(|j| self.x_loadings.get(j, a) * self.x_weights.get(j, b))
                    .sum();
            }
        }
        let mut inv = vec![0.0; k * k];
        for c in 0..k {
            let mut e = vec![0.0; k];
            e[c] = 1.0;
            let col = linalg::solve_square(ptw.clone(), k, e).unwrap_or_else(|| vec![0.0; k]);
            for r in 0..k {
                inv[r * k + c] = col[r];
            }
        }
        let mut rot = vec![0.0; p * k];
        for j in 0..p {
            for c in 0..k {
                rot[j * k + c] = (0..k).map(|a| self.x_weights.get(j, a) * inv[a * k + c]).sum();
            }
        }
        rot
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let p = self.x_mean.len();
        if self.coefficients.len() != p || self.x_std.len() != p {
            return Err("PLS vectors disagree in length".into());
        }
        if self.components_used > self.n_components {
            return Err("more components used than requested".into());
        }
        if !self.intercept.is_finite() || self.coefficients.iter().any(|c| !c.is_finite()) {
            return Err("non-finite coefficient".into());
        }
        Ok(())
    }
}

/// PLS1 regression by NIPALS on centered, unit-variance-scaled predictors.
pub fn fit_pls(x: &Matrix, y: &[f64], params: &PlsParams) -> Result<PlsModel> {
    check_xy(x, y, 2)?;
    let n = x.rows();
    let p = x.cols();
    let bound = p.min(n - 1);
    let k = params.n_components;
    if k == 0 {
        return Err(invalid("n_components", "must be at least 1"));
    }
    if k > bound {
        return Err(Error::ComponentOverflow { requested: k, bound });
    }
    let nf = n as f64;
    let x_mean: Vec<f64> = (0..p).map(|j| x.column(j).iter().sum::<f64>() / nf).collect();
    let x_std: Vec<f64> = (0..p)
        .map(|j| {
            let ss: f64 = x.column(j).iter().map(|v| (v - x_mean[j]).powi(2)).sum();
            let s = (ss / (nf - 1.0)).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let y_mean = y.iter().sum::<f64>() / nf;
    let mut xs: Vec<Vec<f64>> = (0..p)
        .map(|j| x.column(j).iter().map(|v| (v - x_mean[j]) / x_std[j]).collect())
        .collect();
    let mut yk: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let scale = xs.iter().map(|c| linalg::dot(c, c)).sum::<f64>().sqrt()
        * linalg::dot(&yk, &yk).sqrt();

    let mut weights: Vec<Vec<f64>> = Vec::new();
    let mut loadings: Vec<Vec<f64>> = Vec::new();
    let mut q = Vec::new();
    let mut degenerate = false;
    for _ in 0..k {
        let mut w: Vec<f64> = xs.iter().map(|c| linalg::dot(c, &yk)).collect();
        let norm = linalg::dot(&w, &w).sqrt();
        if !(norm > 1e-12 * scale) {
            degenerate = true;
            break;
        }
        w.iter_mut().for_each(|v| *v /= norm);
        let t: Vec<f64> = (0..n).map(|i| (0..p).map(|j| xs[j][i] * w[j]).sum()).collect();
        let tt = linalg::dot(&t, &t);
        let load: Vec<f64> = xs.iter().map(|c| linalg::dot(c, &t) / tt).collect();
        let qk = linalg::dot(&yk, &t) / tt;
        for (col, &pj) in xs.iter_mut().zip(&load) {
            for (v, ti) in col.iter_mut().zip(&t) {
                *v -= ti * pj;
            }
        }
        for (v, ti) in yk.iter_mut().zip(&t) {
            *v -= ti * qk;
        }
        weights.push(w);
        loadings.push(load);
        q.push(qk);
    }

    let used = weights.len();
    let to_matrix = |cols: &[Vec<f64>]| {
        let mut m = Matrix::zeros(p, used);
        for (c, col) in cols.iter().enumerate() {
            for (j, v) in col.iter().enumerate() {
                m.set(j, c, *v);
            }
        }
        m
    };
    let mut model = PlsModel {
        n_components: k,
        components_used: used,
        degenerate,
        x_weights: to_matrix(&weights),
        x_loadings: to_matrix(&loadings),
        y_loadings: q,
        x_mean,
        x_std,
        y_mean,
        coefficients: vec![0.0; p],
        intercept: y_mean,
    };
    if used > 0 {
        let rot = model.rotations();
        let coefficients: Vec<f64> = (0..p)
            .map(|j| {
                let b: f64 = (0..used).map(|c| rot[j * used + c] * model.y_loadings[c]).sum();
                b / model.x_std[j]
            })
            .collect();
        model.intercept = y_mean - linalg::dot(&model.x_mean, &coefficients);
        model.coefficients = coefficients;
    }
    Ok(model)
}
