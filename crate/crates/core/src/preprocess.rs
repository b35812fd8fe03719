//! Yeo-Johnson power transform with maximum-likelihood `λ`, followed by
//! z-standardization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const LAMBDA_MIN: f64 = -5.0;
pub const LAMBDA_MAX: f64 = 5.0;
pub const LAMBDA_TOL: f64 = 1e-8;

/// Yeo-Johnson map `ψ(x, λ)`.
pub fn yeo_johnson(x: f64, lambda: f64) -> f64 {
    if lambda == 1.0 {
        return x;
    }
    if x >= 0.0 {
        if lambda == 0.0 {
            x.ln_1p()
        } else {
            (lambda * x.ln_1p()).exp_m1() / lambda
        }
    } else {
        let mu = 2.0 - lambda;
        if mu == 0.0 {
            -(-x).ln_1p()
        } else {
            -(mu * (-x).ln_1p()).exp_m1() / mu
        }
    }
}

/// Inverse of [`yeo_johnson`]; `None` when `psi` lies outside the image of
/// the map for this `λ`.
pub fn yeo_johnson_inverse(psi: f64, lambda: f64) -> Option<f64> {
    if lambda == 1.0 {
        return Some(psi);
    }
    if psi >= 0.0 {
        if lambda == 0.0 {
            Some(psi.exp_m1())
        } else {
            let arg = lambda * psi;
            (arg > -1.0).then(|| (arg.ln_1p() / lambda).exp_m1())
        }
    } else {
        let mu = 2.0 - lambda;
        if mu == 0.0 {
            Some(-(-psi).exp_m1())
        } else {
            let arg = -mu * psi;
            (arg > -1.0).then(|| -(arg.ln_1p() / mu).exp_m1())
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Profile log-likelihood of `λ` for one column.
pub fn log_likelihood(column: &[f64], lambda: f64) -> f64 {
    let n = column.len() as f64;
    let psi: Vec<f64> = column.iter().map(|&x| yeo_johnson(x, lambda)).collect();
    let m = mean(&psi);
    let var = psi.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let jacobian: f64 = column.iter().map(|&x| x.signum() * x.abs().ln_1p()).sum();
    -0.5 * n * var.ln() + (lambda - 1.0) * jacobian
}

/// Golden-section maximization of `f` on `[lo, hi]` to width `tol`.
pub(crate) fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnTransform {
    pub name: String,
    pub lambda: f64,
    pub post_mean: f64,
    /// Sample standard deviation of the transformed column; 0 when
    /// `degenerate`.
    pub post_std: f64,
    /// Constant column: `λ = 1`, centering only.
    pub degenerate: bool,
}

impl ColumnTransform {
    #[inline]
    pub fn forward(&self, x: f64) -> f64 {
        let centered = yeo_johnson(x, self.lambda) - self.post_mean;
        if self.degenerate {
            centered
        } else {
            centered / self.post_std
        }
    }

    pub fn inverse(&self, z: f64) -> Option<f64> {
        let psi = if self.degenerate {
            z + self.post_mean
        } else {
            z * self.post_std + self.post_mean
        };
        yeo_johnson_inverse(psi, self.lambda)
    }
}

/// The fitted normalizer, one entry per feature in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PowerTransformParams {
    pub columns: Vec<ColumnTransform>,
}

pub fn fit_column(name: &str, column: &[f64]) -> ColumnTransform {
    let first = column[0];
    if column.iter().all(|&v| v == first) {
        return ColumnTransform {
            name: name.to_owned(),
            lambda: 1.0,
            post_mean: first,
            post_std: 0.0,
            degenerate: true,
        };
    }
    let mut lambda = golden_section_max(
        |l| log_likelihood(column, l),
        LAMBDA_MIN,
        LAMBDA_MAX,
        LAMBDA_TOL,
    );
    if log_likelihood(column, 1.0) >= log_likelihood(column, lambda) {
        lambda = 1.0;
    }
    let psi: Vec<f64> = column.iter().map(|&x| yeo_johnson(x, lambda)).collect();
    let m = mean(&psi);
    let std = (psi.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (psi.len() - 1) as f64).sqrt();
    ColumnTransform {
        name: name.to_owned(),
        lambda,
        post_mean: m,
        post_std: std,
        degenerate: false,
    }
}

pub fn fit_power_transform(x: &Matrix, names: &[String]) -> Result<PowerTransformParams> {
    if x.rows() < 2 {
        return Err(Error::InvalidArgument(
            "power transform needs at least 2 rows".into(),
        ));
    }
    x.ensure_cols(names.len())?;
    if let Some(v) = x.as_slice().iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite value {v}")));
    }
    let columns = names
        .iter()
        .enumerate()
        .map(|(j, name)| fit_column(name, &x.column(j)))
        .collect();
    Ok(PowerTransformParams { columns })
}

impl PowerTransformParams {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.columns.len() {
            return Err(Error::ShapeMismatch {
                expected: self.columns.len(),
                actual: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(&self.columns)
            .map(|(&v, c)| c.forward(v))
            .collect())
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        x.ensure_cols(self.columns.len())?;
        let mut out = x.clone();
        for i in 0..x.rows() {
            for (v, c) in out.row_mut(i).iter_mut().zip(&self.columns) {
                *v = c.forward(*v);
            }
        }
        Ok(out)
    }

    pub fn inverse(&self, z: &Matrix) -> Result<Matrix> {
        z.ensure_cols(self.columns.len())?;
        let mut out = z.clone();
        for i in 0..z.rows() {
            for (v, c) in out.row_mut(i).iter_mut().zip(&self.columns) {
                *v = c.inverse(*v).ok_or_else(|| Error::Domain {
                    feature: c.name.clone(),
                    value: *v,
                })?;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("x{j}")).collect()
    }

    #[test]
    fn lambda_one_is_identity() {
        for x in [-3.5, -1.0, 0.0, 0.25, 7.0] {
            assert!((yeo_johnson(x, 1.0) - x).abs() < 1e-15);
        }
    }

    #[test]
    fn branch_values() {
        let e = std::f64::consts::E;
        assert!((yeo_johnson(e - 1.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((yeo_johnson(-1.0, 2.0) + 2f64.ln()).abs() < 1e-15);
        assert!((yeo_johnson(-1.0, 2.0) + 0.693147).abs() < 1e-6);
        assert!((yeo_johnson_inverse(1.0, 0.0).unwrap() - (e - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn inverse_domain() {
        // λ = -1 maps x ≥ 0 into [0, 1); ψ = 2 has no preimage.
        assert_eq!(yeo_johnson_inverse(2.0, -1.0), None);
        // λ = 3 maps x < 0 into (-1, 0); ψ = -2 has no preimage.
        assert_eq!(yeo_johnson_inverse(-2.0, 3.0), None);
    }

    #[test]
    fn symmetric_column_keeps_lambda_near_one() {
        let mut rng = SplitMix64::new(1);
        let col: Vec<f64> = (0..2000).map(|_| rng.normal()).collect();
        let t = fit_column("z", &col);
        // Independent check: dense scan of the likelihood.
        let scan = (0..=1000)
            .map(|i| -5.0 + 0.01 * i as f64)
            .max_by(|a, b| log_likelihood(&col, *a).total_cmp(&log_likelihood(&col, *b)))
            .unwrap();
        assert!((t.lambda - scan).abs() < 0.011);
        assert!((t.lambda - 1.0).abs() < 0.1, "lambda {}", t.lambda);
    }

    fn skewness(v: &[f64]) -> f64 {
        let m = mean(v);
        let n = v.len() as f64;
        let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        let m3 = v.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
        m3 / m2.powf(1.5)
    }

    #[test]
    fn right_skew_is_contracted() {
        let mut rng = SplitMix64::new(2);
        let col: Vec<f64> = (0..1000).map(|_| rng.normal().exp()).collect();
        let t = fit_column("s", &col);
        assert!(t.lambda < 1.0);
        let z: Vec<f64> = col.iter().map(|&x| t.forward(x)).collect();
        assert!(skewness(&z).abs() < 0.2, "skew {}", skewness(&z));
    }

    #[test]
    fn constant_column_is_flagged() {
        let x = Matrix::from_columns(&[vec![4.0; 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]]).unwrap();
        let p = fit_power_transform(&x, &names(2)).unwrap();
        assert!(p.columns[0].degenerate);
        assert_eq!(p.columns[0].lambda, 1.0);
        let z = p.apply(&x).unwrap();
        assert!(z.column(0).iter().all(|&v| v == 0.0));
        assert_eq!(p.inverse(&z).unwrap().column(0), vec![4.0; 5]);
    }

    #[test]
    fn fitted_data_is_standardized() {
        let mut rng = SplitMix64::new(3);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.uniform(-100.0, 100.0), rng.normal().exp() * 50.0, rng.uniform(0.0, 1e6)])
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let p = fit_power_transform(&x, &names(3)).unwrap();
        let z = p.apply(&x).unwrap();
        for j in 0..3 {
            let c = z.column(j);
            let m = mean(&c);
            let s = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (c.len() - 1) as f64).sqrt();
            assert!(m.abs() < 1e-9);
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn apply_checks_shape() {
        let x = Matrix::from_columns(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let p = fit_power_transform(&x, &names(1)).unwrap();
        let wide = Matrix::zeros(2, 2);
        assert!(matches!(p.apply(&wide), Err(Error::ShapeMismatch { .. })));
    }
}
