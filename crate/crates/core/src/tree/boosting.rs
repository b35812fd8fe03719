use serde::{Deserialize, Serialize};

use super::builder::{self, Criterion, GrowConfig, Presorted, Splitter};
use super::ensemble::stable_mean;
use super::{check_xy, EnsembleKind, EnsembleModel, MaxFeatures};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SplitMix64;

/// Least-squares gradient boosting. Defaults follow the tuned configuration
/// reported for the rack data (200 stages, rate 0.1, depth 5).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientBoostingParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GradientBoostingParams {
    fn default() -> Self {
        Self {
            n_estimators: 200,
            learning_rate: 0.1,
            max_depth: Some(5),
            min_samples_split: 2,
            min_samples_leaf: 1,
            subsample: 1.0,
            seed: 0,
        }
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> Error {
    Error::InvalidHyperparameter {
        key: key.into(),
        reason: reason.into(),
    }
}

/// Rows used by one boosting stage: all of them, or `⌊fraction·n⌋` drawn
/// without replacement.
fn stage_weights(rng: &mut SplitMix64, n: usize, fraction: f64) -> Vec<u32> {
    if fraction >= 1.0 {
        return vec![1; n];
    }
    let k = ((fraction * n as f64).floor() as usize).max(1);
    let mut w = vec![0u32; n];
    for i in rng.choose_distinct(n, k) {
        w[i] = 1;
    }
    w
}

pub fn fit_gradient_boosting(
    x: &Matrix,
    y: &[f64],
    params: &GradientBoostingParams,
) -> Result<EnsembleModel> {
    check_xy(x, y)?;
    if params.n_estimators == 0 {
        return Err(invalid("n_estimators", "must be at least 1"));
    }
    if !(params.learning_rate > 0.0) {
        return Err(invalid("learning_rate", "must be positive"));
    }
    if !(params.subsample > 0.0 && params.subsample <= 1.0) {
        return Err(invalid("subsample", "must lie in (0, 1]"));
    }
    if params.min_samples_split < 2 || params.min_samples_leaf < 1 {
        return Err(invalid("min_samples_split", "split ≥ 2 and leaf ≥ 1 required"));
    }
    let n = y.len();
    let presorted = Presorted::new(x);
    let cfg = GrowConfig {
        criterion: Criterion::Sse,
        splitter: Splitter::Best,
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split as u64,
        min_samples_leaf: params.min_samples_leaf as u64,
        max_features: MaxFeatures::All,
        allowed_features: None,
    };
    let init_value = stable_mean(y);
    let mut fitted = vec![init_value; n];
    let mut rng = SplitMix64::new(params.seed);
    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut residuals = vec![0.0; n];
    for _ in 0..params.n_estimators {
        for i in 0..n {
            residuals[i] = y[i] - fitted[i];
        }
        let weights = stage_weights(&mut rng, n, params.subsample);
        let tree = builder::grow(x, &presorted, &residuals, &weights, &cfg, rng.clone());
        for (i, f) in fitted.iter_mut().enumerate() {
            *f += params.learning_rate * tree.predict_row(x.row(i));
        }
        trees.push(tree);
    }
    Ok(EnsembleModel {
        kind: EnsembleKind::GradientBoosting,
        trees,
        init_value,
        learning_rate: params.learning_rate,
        tree_weights: Vec::new(),
        seed: params.seed,
        n_features: x.cols(),
    })
}

/// Second-order boosting with L1/L2-regularized leaf weights (squared loss,
/// so every hessian is 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecondOrderBoostingParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub reg_alpha: f64,
    pub reg_lambda: f64,
    pub seed: u64,
}

impl Default for SecondOrderBoostingParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            learning_rate: 0.3,
            max_depth: Some(6),
            min_samples_split: 2,
            min_samples_leaf: 1,
            subsample: 1.0,
            colsample_bytree: 1.0,
            reg_alpha: 0.0,
            reg_lambda: 1.0,
            seed: 0,
        }
    }
}

pub fn fit_second_order_boosting(
    x: &Matrix,
    y: &[f64],
    params: &SecondOrderBoostingParams,
) -> Result<EnsembleModel> {
    check_xy(x, y)?;
    if params.n_estimators == 0 {
        return Err(invalid("n_estimators", "must be at least 1"));
    }
    if !(params.learning_rate > 0.0) {
        return Err(invalid("learning_rate", "must be positive"));
    }
    if !(params.subsample > 0.0 && params.subsample <= 1.0) {
        return Err(invalid("subsample", "must lie in (0, 1]"));
    }
    if !(params.colsample_bytree > 0.0 && params.colsample_bytree <= 1.0) {
        return Err(invalid("colsample_bytree", "must lie in (0, 1]"));
    }
    if !(params.reg_alpha >= 0.0) {
        return Err(invalid("reg_alpha", "must be non-negative"));
    }
    if !(params.reg_lambda >= 0.0) {
        return Err(invalid("reg_lambda", "must be non-negative"));
    }
    if params.min_samples_split < 2 || params.min_samples_leaf < 1 {
        return Err(invalid("min_samples_split", "split ≥ 2 and leaf ≥ 1 required"));
    }
    let (n, p) = (y.len(), x.cols());
    let n_cols = ((params.colsample_bytree * p as f64).ceil() as usize).clamp(1, p);
    let presorted = Presorted::new(x);
    let mut cfg = GrowConfig {
        criterion: Criterion::SecondOrder {
            alpha: params.reg_alpha,
            lambda: params.reg_lambda,
            learning_rate: params.learning_rate,
        },
        splitter: Splitter::Best,
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split as u64,
        min_samples_leaf: params.min_samples_leaf as u64,
        max_features: MaxFeatures::All,
        allowed_features: None,
    };
    let init_value = stable_mean(y);
    let mut fitted = vec![init_value; n];
    let mut gradients = vec![0.0; n];
    let mut rng = SplitMix64::new(params.seed);
    let mut trees = Vec::with_capacity(params.n_estimators);
    for _ in 0..params.n_estimators {
        for i in 0..n {
            gradients[i] = fitted[i] - y[i];
        }
        let weights = stage_weights(&mut rng, n, params.subsample);
        cfg.allowed_features = (n_cols < p).then(|| {
            let mut cols = rng.choose_distinct(p, n_cols);
            cols.sort_unstable();
            cols
        });
        let tree = builder::grow(x, &presorted, &gradients, &weights, &cfg, rng.clone());
        for (i, f) in fitted.iter_mut().enumerate() {
            *f += tree.predict_row(x.row(i));
        }
        trees.push(tree);
    }
    Ok(EnsembleModel {
        kind: EnsembleKind::SecondOrderBoosting,
        trees,
        init_value,
        learning_rate: params.learning_rate,
        tree_weights: Vec::new(),
        seed: params.seed,
        n_features: p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::Node;

    fn toy(n: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = SplitMix64::new(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.uniform(-2.0, 2.0)).collect())
            .collect();
        let y = rows
            .iter()
            .map(|r| 3.0 * r[0] * r[0] - r[1] + (2.0 * r[2]).sin() + 0.05 * rng.normal())
            .collect();
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    fn mse(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
    }

    #[test]
    fn constant_target_is_reproduced_exactly() {
        let (x, _) = toy(20, 1);
        let y = vec![0.1; 20];
        let m = fit_gradient_boosting(&x, &y, &GradientBoostingParams { n_estimators: 5, ..Default::default() }).unwrap();
        assert_eq!(m.init_value, 0.1);
        for t in &m.trees {
            assert_eq!(t.nodes, vec![Node::Leaf { value: 0.0, n_samples: 20 }]);
        }
        assert!(m.predict(&x).unwrap().iter().all(|&v| v == 0.1));
    }

    #[test]
    fn one_deep_stage_memorizes() {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y = vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let params = GradientBoostingParams {
            n_estimators: 1,
            learning_rate: 1.0,
            max_depth: None,
            ..Default::default()
        };
        let m = fit_gradient_boosting(&x, &y, &params).unwrap();
        assert_eq!(m.predict(&x).unwrap(), y);
    }

    #[test]
    fn training_error_never_increases() {
        let (x, y) = toy(80, 2);
        let params = GradientBoostingParams {
            n_estimators: 30,
            max_depth: Some(3),
            ..Default::default()
        };
        let m = fit_gradient_boosting(&x, &y, &params).unwrap();
        let mut prev = f64::INFINITY;
        for stages in 1..=30 {
            let partial = EnsembleModel {
                trees: m.trees[..stages].to_vec(),
                ..m.clone()
            };
            let e = mse(&partial.predict(&x).unwrap(), &y);
            assert!(e <= prev + 1e-12, "stage {stages}: {e} > {prev}");
            prev = e;
        }
    }

    #[test]
    fn subsampling_is_seeded() {
        let (x, y) = toy(60, 3);
        let params = GradientBoostingParams {
            n_estimators: 10,
            subsample: 0.7,
            seed: 5,
            ..Default::default()
        };
        let a = fit_gradient_boosting(&x, &y, &params).unwrap();
        assert_eq!(a, fit_gradient_boosting(&x, &y, &params).unwrap());
        assert!(a.trees.iter().all(|t| t.nodes[0].n_samples() == 42));
    }

    #[test]
    fn unregularized_second_order_matches_residual_fitting() {
        let (x, y) = toy(50, 4);
        let gb = fit_gradient_boosting(
            &x,
            &y,
            &GradientBoostingParams {
                n_estimators: 6,
                learning_rate: 1.0,
                max_depth: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        let so = fit_second_order_boosting(
            &x,
            &y,
            &SecondOrderBoostingParams {
                n_estimators: 6,
                learning_rate: 1.0,
                max_depth: Some(3),
                reg_alpha: 0.0,
                reg_lambda: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(gb.trees, so.trees);
        assert_eq!(gb.predict(&x).unwrap(), so.predict(&x).unwrap());
    }

    #[test]
    fn strong_l1_kills_the_root() {
        let (x, y) = toy(30, 5);
        // Root gradient sum is 0 up to rounding; children carry |G| ≤ Σ|g|.
        let total_abs: f64 = {
            let m = stable_mean(&y);
            y.iter().map(|v| (v - m).abs()).sum()
        };
        let m = fit_second_order_boosting(
            &x,
            &y,
            &SecondOrderBoostingParams {
                n_estimators: 3,
                reg_alpha: total_abs + 1.0,
                ..Default::default()
            },
        )
        .unwrap();
        for t in &m.trees {
            assert_eq!(t.nodes.len(), 1);
            assert_eq!(t.nodes[0].value(), 0.0);
        }
        assert!(m.predict(&x).unwrap().iter().all(|&v| v == m.init_value));
    }

    #[test]
    fn larger_lambda_shrinks_leaf_weights() {
        let (x, y) = toy(40, 6);
        let base = SecondOrderBoostingParams {
            n_estimators: 1,
            learning_rate: 1.0,
            max_depth: Some(2),
            ..Default::default()
        };
        let leaves = |lambda: f64| {
            let m = fit_second_order_boosting(&x, &y, &SecondOrderBoostingParams { reg_lambda: lambda, ..base.clone() }).unwrap();
            m.trees[0].clone()
        };
        // Fix the structure at λ = 0 and evaluate the leaf formula as λ grows.
        let tree = leaves(0.0);
        let fitted0 = stable_mean(&y);
        let mut prev: Option<Vec<f64>> = None;
        for lambda in [0.0, 0.5, 1.0, 2.0, 5.0, 10.0] {
            let mags: Vec<f64> = tree
                .nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| n.is_leaf())
                .map(|(idx, _)| {
                    let (g, h) = (0..y.len())
                        .filter(|&i| tree.leaf_index(x.row(i)) == idx)
                        .fold((0.0, 0.0), |(g, h), i| (g + fitted0 - y[i], h + 1.0));
                    (g / (h + lambda)).abs()
                })
                .collect();
            if let Some(p) = &prev {
                assert!(mags.iter().zip(p).all(|(a, b)| a <= b));
            }
            prev = Some(mags);
        }
        // And the fitted model's own leaves shrink relative to λ = 0.
        let max_abs = |t: &crate::tree::RegressionTree| {
            t.nodes.iter().filter(|n| n.is_leaf()).map(|n| n.value().abs()).fold(0.0, f64::max)
        };
        assert!(max_abs(&leaves(10.0)) <= max_abs(&tree));
    }

    #[test]
    fn colsample_restricts_features_per_tree() {
        let (x, y) = toy(40, 7);
        let m = fit_second_order_boosting(
            &x,
            &y,
            &SecondOrderBoostingParams {
                n_estimators: 10,
                colsample_bytree: 0.34,
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        for t in &m.trees {
            let used = (0..3).filter(|&f| t.uses_feature(f)).count();
            assert!(used <= 2);
        }
    }
}
