use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::builder::{self, Presorted, Splitter};
use super::{check_xy, weighted_median, MaxFeatures, RegressionTree, TreeParams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Bagging,
    RandomForest,
    ExtraTrees,
    GradientBoosting,
    SecondOrderBoosting,
    #[serde(rename = "adaboost_r2")]
    AdaBoostR2,
}

impl EnsembleKind {
    pub fn name(self) -> &'static str {
        match self {
            EnsembleKind::Bagging => "bagging",
            EnsembleKind::RandomForest => "random_forest",
            EnsembleKind::ExtraTrees => "extra_trees",
            EnsembleKind::GradientBoosting => "gradient_boosting",
            EnsembleKind::SecondOrderBoosting => "second_order_boosting",
            EnsembleKind::AdaBoostR2 => "adaboost_r2",
        }
    }

    pub fn is_averaging(self) -> bool {
        matches!(
            self,
            EnsembleKind::Bagging | EnsembleKind::RandomForest | EnsembleKind::ExtraTrees
        )
    }

    /// Whether the prediction is an affine function of the tree outputs.
    pub fn is_additive(self) -> bool {
        self != EnsembleKind::AdaBoostR2
    }
}

/// A fitted tree ensemble.
///
/// * averaging kinds: mean of the tree outputs
/// * gradient boosting: `init_value + Σ learning_rate · tree(x)`
/// * second-order boosting: `init_value + Σ tree(x)`, shrinkage already in
///   the leaves
/// * AdaBoost.R2: weighted median with `tree_weights`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleModel {
    pub kind: EnsembleKind,
    pub trees: Vec<RegressionTree>,
    pub init_value: f64,
    pub learning_rate: f64,
    pub tree_weights: Vec<f64>,
    pub seed: u64,
    pub n_features: usize,
}

impl EnsembleModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self.kind {
            EnsembleKind::Bagging | EnsembleKind::RandomForest | EnsembleKind::ExtraTrees => {
                average(self.trees.iter().map(|t| t.predict_row(row)))
            }
            EnsembleKind::GradientBoosting => self
                .trees
                .iter()
                .fold(self.init_value, |f, t| f + self.learning_rate * t.predict_row(row)),
            EnsembleKind::SecondOrderBoosting => self
                .trees
                .iter()
                .fold(self.init_value, |f, t| f + t.predict_row(row)),
            EnsembleKind::AdaBoostR2 => {
                let preds: Vec<f64> = self.trees.iter().map(|t| t.predict_row(row)).collect();
                weighted_median(&preds, &self.tree_weights)
            }
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.ensure_cols(self.n_features)?;
        Ok(x.iter_rows().map(|r| self.predict_row(r)).collect())
    }

    /// Multiplier applied to each tree's output in the additive kinds.
    pub fn tree_scale(&self) -> f64 {
        match self.kind {
            EnsembleKind::GradientBoosting => self.learning_rate,
            EnsembleKind::SecondOrderBoosting => 1.0,
            _ => 1.0 / self.trees.len() as f64,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.trees.is_empty() {
            return Err("ensemble has no trees".into());
        }
        for (i, t) in self.trees.iter().enumerate() {
            if t.n_features != self.n_features {
                return Err(format!("tree {i} expects {} features", t.n_features));
            }
            t.validate().map_err(|e| format!("tree {i}: {e}"))?;
        }
        if self.kind == EnsembleKind::AdaBoostR2 && self.tree_weights.len() != self.trees.len() {
            return Err("tree_weights length differs from tree count".into());
        }
        if !self.init_value.is_finite() || !self.learning_rate.is_finite() {
            return Err("non-finite ensemble scalar".into());
        }
        Ok(())
    }
}

/// Mean computed as an offset from the first value, then clamped to the
/// observed range: identical inputs return that value exactly.
fn average(values: impl Iterator<Item = f64>) -> f64 {
    let mut iter = values;
    let Some(first) = iter.next() else {
        return 0.0;
    };
    let (mut n, mut dev, mut lo, mut hi) = (1.0, 0.0, first, first);
    for v in iter {
        n += 1.0;
        dev += v - first;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (first + dev / n).clamp(lo, hi)
}

pub(crate) fn stable_mean(values: &[f64]) -> f64 {
    average(values.iter().copied())
}

/// Per-row multiplicities of `draws` uniform draws with replacement.
pub(crate) fn bootstrap_counts(rng: &mut SplitMix64, n: usize, draws: usize) -> Vec<u32> {
    let mut counts = vec![0u32; n];
    for _ in 0..draws {
        counts[rng.below(n)] += 1;
    }
    counts
}

fn positive_count(key: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::InvalidHyperparameter {
            key: key.into(),
            reason: "must be at least 1".into(),
        });
    }
    Ok(())
}

fn unit_fraction(key: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::InvalidHyperparameter {
            key: key.into(),
            reason: format!("must lie in (0, 1], got {v}"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaggingParams {
    pub n_estimators: usize,
    /// Fraction of rows drawn per estimator (rounded up).
    pub max_samples: f64,
    /// Fraction of feature columns drawn per estimator (rounded up).
    pub max_features: f64,
    pub bootstrap: bool,
    pub bootstrap_features: bool,
    pub base_tree_params: TreeParams,
    pub seed: u64,
}

impl Default for BaggingParams {
    fn default() -> Self {
        Self {
            n_estimators: 10,
            max_samples: 1.0,
            max_features: 1.0,
            bootstrap: true,
            bootstrap_features: false,
            base_tree_params: TreeParams::default(),
            seed: 0,
        }
    }
}

/// Bagged CART: each estimator sees a row sample and a feature-column
/// subset drawn from its own stream `(seed, estimator_index)`.
pub fn fit_bagging(x: &Matrix, y: &[f64], params: &BaggingParams) -> Result<EnsembleModel> {
    check_xy(x, y)?;
    positive_count("n_estimators", params.n_estimators)?;
    unit_fraction("max_samples", params.max_samples)?;
    unit_fraction("max_features", params.max_features)?;
    params.base_tree_params.validate()?;
    let (n, p) = (x.rows(), x.cols());
    let n_rows = ((params.max_samples * n as f64).ceil() as usize).clamp(1, n);
    let n_cols = ((params.max_features * p as f64).ceil() as usize).clamp(1, p);
    let presorted = Presorted::new(x);

    let trees = (0..params.n_estimators)
        .into_par_iter()
        .map(|m| {
            let mut rng = SplitMix64::stream(params.seed, m as u64);
            let weights = if params.bootstrap {
                bootstrap_counts(&mut rng, n, n_rows)
            } else {
                let mut w = vec![0u32; n];
                for i in rng.choose_distinct(n, n_rows) {
                    w[i] = 1;
                }
                w
            };
            let mut features: Vec<usize> = if params.bootstrap_features {
                (0..n_cols).map(|_| rng.below(p)).collect()
            } else {
                rng.choose_distinct(p, n_cols)
            };
            features.sort_unstable();
            features.dedup();
            let mut cfg = params.base_tree_params.grow_config(Splitter::Best);
            cfg.allowed_features = Some(features);
            builder::grow(x, &presorted, y, &weights, &cfg, rng)
        })
        .collect();
    Ok(EnsembleModel {
        kind: EnsembleKind::Bagging,
        trees,
        init_value: 0.0,
        learning_rate: 1.0,
        tree_weights: Vec::new(),
        seed: params.seed,
        n_features: p,
    })
}

/// Shared by random forests and extra trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::All,
            seed: 0,
        }
    }
}

impl ForestParams {
    fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_samples_split: self.min_samples_split,
            min_samples_leaf: self.min_samples_leaf,
            max_features: self.max_features,
            seed: self.seed,
        }
    }
}

fn fit_forest(
    x: &Matrix,
    y: &[f64],
    params: &ForestParams,
    kind: EnsembleKind,
) -> Result<EnsembleModel> {
    check_xy(x, y)?;
    positive_count("n_estimators", params.n_estimators)?;
    let tree_params = params.tree_params();
    tree_params.validate()?;
    let n = x.rows();
    let presorted = Presorted::new(x);
    let splitter = if kind == EnsembleKind::ExtraTrees {
        Splitter::Random
    } else {
        Splitter::Best
    };
    let cfg = tree_params.grow_config(splitter);
    let trees = (0..params.n_estimators)
        .into_par_iter()
        .map(|m| {
            let mut rng = SplitMix64::stream(params.seed, m as u64);
            let weights = if kind == EnsembleKind::RandomForest {
                bootstrap_counts(&mut rng, n, n)
            } else {
                vec![1u32; n]
            };
            builder::grow(x, &presorted, y, &weights, &cfg, rng)
        })
        .collect();
    Ok(EnsembleModel {
        kind,
        trees,
        init_value: 0.0,
        learning_rate: 1.0,
        tree_weights: Vec::new(),
        seed: params.seed,
        n_features: x.cols(),
    })
}

/// Bootstrap rows per tree, `max_features` candidates drawn at every split.
pub fn fit_random_forest(x: &Matrix, y: &[f64], params: &ForestParams) -> Result<EnsembleModel> {
    fit_forest(x, y, params, EnsembleKind::RandomForest)
}

/// All rows per tree, one uniform random threshold per candidate feature.
pub fn fit_extra_trees(x: &Matrix, y: &[f64], params: &ForestParams) -> Result<EnsembleModel> {
    fit_forest(x, y, params, EnsembleKind::ExtraTrees)
}
