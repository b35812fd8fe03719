use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(y: &[f64], y_hat: &[f64], min: usize) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::LengthMismatch(y.len(), y_hat.len()));
    }
    if y.len() < min {
        return Err(Error::InvalidArgument(format!(
            "need at least {min} values, got {}",
            y.len()
        )));
    }
    Ok(())
}

/// Coefficient of determination `1 − SS_res/SS_tot`.
pub fn r_squared(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat, 2)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mean_absolute_error(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check(y, y_hat, 1)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Returns `(rmse, mse)`.
pub fn root_mean_squared_error(y: &[f64], y_hat: &[f64]) -> Result<(f64, f64)> {
    check(y, y_hat, 1)?;
    let mse = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64;
    Ok((mse.sqrt(), mse))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    /// `None` when the observed values have zero variance.
    pub r2: Option<f64>,
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

impl MetricReport {
    pub fn compute(y: &[f64], y_hat: &[f64]) -> Result<Self> {
        check(y, y_hat, 1)?;
        let (rmse, mse) = root_mean_squared_error(y, y_hat)?;
        // The power-mean inequality holds exactly; only rounding could break
        // it when every error has the same magnitude.
        let mae = mean_absolute_error(y, y_hat)?.min(rmse);
        let r2 = match r_squared(y, y_hat) {
            Ok(v) => Some(v),
            Err(Error::ZeroVariance) | Err(Error::InvalidArgument(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            r2,
            mse,
            mae,
            rmse,
            n: y.len(),
        })
    }
}
