use serde::{Deserialize, Serialize};

use super::builder::{self, Presorted, Splitter};
use super::{check_xy, EnsembleKind, EnsembleModel, TreeParams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SplitMix64;

/// Weight given to a tree with zero training error.
pub const PERFECT_TREE_WEIGHT: f64 = 27.631021115928547; // ln(1e12)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaBoostLoss {
    #[default]
    Linear,
    Square,
    Exponential,
}

impl AdaBoostLoss {
    fn shape(self, normalized: f64) -> f64 {
        match self {
            AdaBoostLoss::Linear => normalized,
            AdaBoostLoss::Square => normalized * normalized,
            AdaBoostLoss::Exponential => 1.0 - (-normalized).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaBoostParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub loss: AdaBoostLoss,
    pub base_tree_params: TreeParams,
    pub seed: u64,
}

impl Default for AdaBoostParams {
    fn default() -> Self {
        Self {
            n_estimators: 50,
            learning_rate: 1.0,
            loss: AdaBoostLoss::Linear,
            base_tree_params: TreeParams {
                max_depth: Some(3),
                ..TreeParams::default()
            },
            seed: 0,
        }
    }
}

/// Lower weighted median: the smallest value whose cumulative weight (in
/// ascending value order, ties by position) reaches half the total.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let total: f64 = weights.iter().sum();
    let mut cumulative = 0.0;
    for &i in &order {
        cumulative += weights[i];
        if cumulative >= 0.5 * total {
            return values[i];
        }
    }
    values[order[order.len() - 1]]
}

/// Index drawn with probability proportional to `weights`, via the running
/// sum.
fn weighted_draws(rng: &mut SplitMix64, weights: &[f64], draws: usize) -> Vec<u32> {
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &w in weights {
        acc += w;
        cdf.push(acc);
    }
    let mut counts = vec![0u32; weights.len()];
    for _ in 0..draws {
        let u = rng.next_f64() * acc;
        let i = cdf.partition_point(|&c| c <= u).min(weights.len() - 1);
        counts[i] += 1;
    }
    counts
}

/// AdaBoost.R2 with weighted bootstrap resampling.
pub fn fit_adaboost_r2(x: &Matrix, y: &[f64], params: &AdaBoostParams) -> Result<EnsembleModel> {
    check_xy(x, y)?;
    if params.n_estimators == 0 {
        return Err(Error::InvalidHyperparameter {
            key: "n_estimators".into(),
            reason: "must be at least 1".into(),
        });
    }
    if !(params.learning_rate > 0.0) {
        return Err(Error::InvalidHyperparameter {
            key: "learning_rate".into(),
            reason: "must be positive".into(),
        });
    }
    params.base_tree_params.validate()?;
    let n = y.len();
    let presorted = Presorted::new(x);
    let cfg = params.base_tree_params.grow_config(Splitter::Best);
    let mut rng = SplitMix64::new(params.seed);
    let mut sample_weights = vec![1.0 / n as f64; n];
    let mut trees = Vec::new();
    let mut tree_weights = Vec::new();

    for _ in 0..params.n_estimators {
        let counts = weighted_draws(&mut rng, &sample_weights, n);
        let tree = builder::grow(x, &presorted, y, &counts, &cfg, rng.clone());
        let errors: Vec<f64> = (0..n)
            .map(|i| (tree.predict_row(x.row(i)) - y[i]).abs())
            .collect();
        let max_error = errors.iter().cloned().fold(0.0, f64::max);
        if max_error == 0.0 {
            trees.push(tree);
            tree_weights.push(PERFECT_TREE_WEIGHT);
            break;
        }
        let losses: Vec<f64> = errors
            .iter()
            .map(|e| params.loss.shape(e / max_error))
            .collect();
        let total: f64 = sample_weights.iter().sum();
        let mean_loss: f64 = losses
            .iter()
            .zip(&sample_weights)
            .map(|(l, w)| l * w)
            .sum::<f64>()
            / total;
        if mean_loss >= 0.5 {
            if trees.is_empty() {
                trees.push(tree);
                tree_weights.push(1.0);
            }
            break;
        }
        if mean_loss <= 0.0 {
            trees.push(tree);
            tree_weights.push(PERFECT_TREE_WEIGHT);
            break;
        }
        let beta = mean_loss / (1.0 - mean_loss);
        trees.push(tree);
        tree_weights.push(params.learning_rate * (1.0 / beta).ln());
        for (w, l) in sample_weights.iter_mut().zip(&losses) {
            *w *= beta.powf(params.learning_rate * (1.0 - l));
        }
        let total: f64 = sample_weights.iter().sum();
        if !(total > 0.0) {
            break;
        }
        for w in &mut sample_weights {
            *w /= total;
        }
    }

    Ok(EnsembleModel {
        kind: EnsembleKind::AdaBoostR2,
        trees,
        init_value: 0.0,
        learning_rate: params.learning_rate,
        tree_weights,
        seed: params.seed,
        n_features: x.cols(),
    })
}
