use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_xy, invalid};
use crate::error::Result;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnWeights {
    #[default]
    Uniform,
    Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnParams {
    pub n_neighbors: usize,
    pub weights: KnnWeights,
    /// Accepted and ignored: search is always brute force.
    pub algorithm: String,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self {
            n_neighbors: 5,
            weights: KnnWeights::Uniform,
            algorithm: "auto".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnModel {
    pub n_neighbors: usize,
    pub weights: KnnWeights,
    pub x: Matrix,
    pub y: Vec<f64>,
}

pub fn fit_knn(x: &Matrix, y: &[f64], params: &KnnParams) -> Result<KnnModel> {
    check_xy(x, y, 1)?;
    if params.n_neighbors == 0 || params.n_neighbors > y.len() {
        return Err(invalid(
            "n_neighbors",
            &format!("must lie in 1..={} (training rows)", y.len()),
        ));
    }
    Ok(KnnModel {
        n_neighbors: params.n_neighbors,
        weights: params.weights,
        x: x.clone(),
        y: y.to_vec(),
    })
}

impl KnnModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut dist: Vec<(f64, usize)> = self
            .x
            .iter_rows()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        let k = self.n_neighbors;
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < dist.len() {
            dist.select_nth_unstable_by(k - 1, cmp);
            dist.truncate(k);
        }
        // Sum in training order so k = n reproduces the plain mean exactly.
        dist.sort_unstable_by_key(|&(_, i)| i);
        match self.weights {
            KnnWeights::Uniform => dist.iter().map(|&(_, i)| self.y[i]).sum::<f64>() / k as f64,
            KnnWeights::Distance => {
                let exact: Vec<usize> = dist.iter().filter(|d| d.0 == 0.0).map(|d| d.1).collect();
                if !exact.is_empty() {
                    return exact.iter().map(|&i| self.y[i]).sum::<f64>() / exact.len() as f64;
                }
                let (mut num, mut den) = (0.0, 0.0);
                for &(d2, i) in &dist {
                    let w = 1.0 / d2.sqrt();
                    num += w * self.y[i];
                    den += w;
                }
                num / den
            }
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.ensure_cols(self.x.cols())?;
        let rows: Vec<&[f64]> = x.iter_rows().collect();
        Ok(rows.par_iter().map(|r| self.predict_row(r)).collect())
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.x.rows() != self.y.len() {
            return Err("stored targets and rows disagree".into());
        }
        if self.n_neighbors == 0 || self.n_neighbors > self.y.len() {
            return Err("n_neighbors out of range".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(k: usize, weights: KnnWeights) -> KnnModel {
        let x = Matrix::from_columns(&[vec![0.0, 10.0]]).unwrap();
        fit_knn(&x, &[0.0, 10.0], &KnnParams { n_neighbors: k, weights, ..Default::default() }).unwrap()
    }

    #[test]
    fn two_point_examples() {
        assert_eq!(model(1, KnnWeights::Uniform).predict_row(&[1.0]), 0.0);
        assert_eq!(model(2, KnnWeights::Uniform).predict_row(&[1.0]), 5.0);
        assert!((model(2, KnnWeights::Distance).predict_row(&[1.0]) - 1.0).abs() < 1e-15);
        assert_eq!(model(2, KnnWeights::Distance).predict_row(&[10.0]), 10.0);
    }

    #[test]
    fn tie_goes_to_lower_index() {
        assert_eq!(model(1, KnnWeights::Uniform).predict_row(&[5.0]), 0.0);
    }

    #[test]
    fn k_out_of_range() {
        let x = Matrix::from_columns(&[vec![0.0, 1.0]]).unwrap();
        assert!(fit_knn(&x, &[0.0, 1.0], &KnnParams { n_neighbors: 3, ..Default::default() }).is_err());
    }
}
