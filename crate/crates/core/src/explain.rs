//! Shapley attributions: exact path-dependent TreeSHAP for additive tree
//! models, an exhaustive-subset oracle, and permutation sampling for any
//! model.
//!
//! TreeSHAP's value function is the cover-conditional expectation: for a
//! coalition `S`, walk the tree following `x` on splits over features in `S`
//! and averaging both children by training cover elsewhere.
//! [`TreeConditionalValue`] computes exactly that function by enumeration,
//! so the oracle and the polynomial algorithm must agree to rounding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::RegressionModel;
use crate::pipeline::Pipeline;
use crate::rng::SplitMix64;
use crate::tree::{Node, RegressionTree};

/// Largest feature count the exhaustive oracle accepts by default.
pub const BRUTE_FORCE_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapExplanation {
    pub base_value: f64,
    pub phi: Vec<f64>,
    pub prediction: f64,
    pub feature_names: Vec<String>,
}

impl ShapExplanation {
    /// `|base + Σφ − prediction|`.
    pub fn local_accuracy_gap(&self) -> f64 {
        (self.base_value + self.phi.iter().sum::<f64>() - self.prediction).abs()
    }
}

#[derive(Clone, Copy)]
struct PathElement {
    feature: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElement>, zero: f64, one: f64, feature: Option<usize>) {
    let l = path.len();
    path.push(PathElement {
        feature,
        zero,
        one,
        weight: if l == 0 { 1.0 } else { 0.0 },
    });
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / (l + 1) as f64;
        path[i].weight = zero * path[i].weight * (l - i) as f64 / (l + 1) as f64;
    }
}

fn unwind(path: &mut Vec<PathElement>, i: usize) {
    let l = path.len() - 1;
    let (one, zero) = (path[i].one, path[i].zero);
    let mut next = path[l].weight;
    for j in (0..l).rev() {
        if one != 0.0 {
            let tmp = path[j].weight;
            path[j].weight = next * (l + 1) as f64 / ((j + 1) as f64 * one);
            next = tmp - path[j].weight * zero * (l - j) as f64 / (l + 1) as f64;
        } else {
            path[j].weight = path[j].weight * (l + 1) as f64 / (zero * (l - j) as f64);
        }
    }
    for j in i..l {
        path[j].feature = path[j + 1].feature;
        path[j].zero = path[j + 1].zero;
        path[j].one = path[j + 1].one;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElement], i: usize) -> f64 {
    let l = path.len() - 1;
    let (one, zero) = (path[i].one, path[i].zero);
    let mut next = path[l].weight;
    let mut total = 0.0;
    for j in (0..l).rev() {
        if one != 0.0 {
            let tmp = next * (l + 1) as f64 / ((j + 1) as f64 * one);
            total += tmp;
            next = path[j].weight - tmp * zero * (l - j) as f64 / (l + 1) as f64;
        } else {
            total += path[j].weight / zero / ((l - j) as f64 / (l + 1) as f64);
        }
    }
    total
}

fn recurse(
    tree: &RegressionTree,
    x: &[f64],
    node: usize,
    mut path: Vec<PathElement>,
    zero: f64,
    one: f64,
    feature: Option<usize>,
    phi: &mut [f64],
) {
    extend(&mut path, zero, one, feature);
    match tree.nodes[node] {
        Node::Leaf { value, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let e = path[i];
                if let Some(f) = e.feature {
                    phi[f] += w * (e.one - e.zero) * value;
                }
            }
        }
        Node::Split {
            feature: split,
            threshold,
            left,
            right,
            n_samples,
            ..
        } => {
            let (hot, cold) = if x[split] <= threshold {
                (left, right)
            } else {
                (right, left)
            };
            let cover = n_samples as f64;
            let (mut iz, mut io) = (1.0, 1.0);
            if let Some(k) = path.iter().skip(1).position(|e| e.feature == Some(split)) {
                let k = k + 1;
                iz = path[k].zero;
                io = path[k].one;
                unwind(&mut path, k);
            }
            let hot_cover = tree.nodes[hot].n_samples() as f64;
            let cold_cover = tree.nodes[cold].n_samples() as f64;
            recurse(tree, x, hot, path.clone(), iz * hot_cover / cover, io, Some(split), phi);
            recurse(tree, x, cold, path, iz * cold_cover / cover, 0.0, Some(split), phi);
        }
    }
}

/// Cover-weighted mean of the leaf values.
pub fn expected_value(tree: &RegressionTree) -> f64 {
    fn walk(tree: &RegressionTree, node: usize) -> f64 {
        match tree.nodes[node] {
            Node::Leaf { value, .. } => value,
            Node::Split {
                left,
                right,
                n_samples,
                ..
            } => {
                let (cl, cr) = (
                    tree.nodes[left].n_samples() as f64,
                    tree.nodes[right].n_samples() as f64,
                );
                (cl * walk(tree, left) + cr * walk(tree, right)) / n_samples as f64
            }
        }
    }
    walk(tree, 0)
}

/// Exact path-dependent SHAP values of one tree at `x`.
pub fn tree_shap_single(tree: &RegressionTree, x: &[f64]) -> Vec<f64> {
    let mut phi = vec![0.0; tree.n_features];
    recurse(tree, x, 0, Vec::with_capacity(16), 1.0, 1.0, None, &mut phi);
    phi
}

fn default_names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("x{j}")).collect()
}

/// TreeSHAP for decision trees and additive ensembles, in the model's input
/// space.
pub fn tree_shap(model: &RegressionModel, x: &[f64]) -> Result<ShapExplanation> {
    let Some((trees, scale, offset)) = model.additive_trees() else {
        return Err(Error::UnsupportedModel(model_name(model).into()));
    };
    if x.len() != model.n_features() {
        return Err(Error::ShapeMismatch {
            expected: model.n_features(),
            actual: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite feature value".into()));
    }
    let p = x.len();
    let mut phi = vec![0.0; p];
    let mut base = 0.0;
    for tree in &trees {
        for (a, b) in phi.iter_mut().zip(tree_shap_single(tree, x)) {
            *a += b;
        }
        base += expected_value(tree);
    }
    for v in &mut phi {
        *v *= scale;
    }
    Ok(ShapExplanation {
        base_value: offset + scale * base,
        phi,
        prediction: model.predict_row(x),
        feature_names: default_names(p),
    })
}

fn model_name(model: &RegressionModel) -> &'static str {
    match model {
        RegressionModel::Ensemble(m) => m.kind.name(),
        RegressionModel::Tree(_) => "decision_tree",
        RegressionModel::Linear(_) => "linear",
        RegressionModel::Bayesian(_) => "bayesian_ridge",
        RegressionModel::Knn(_) => "knn",
        RegressionModel::Pls(_) => "pls",
        RegressionModel::Mean(_) => "mean",
    }
}

/// A cooperative game over `n_features` players; coalitions are bit masks.
pub trait ValueFunction: Sync {
    fn n_features(&self) -> usize;
    fn value(&self, coalition: u32) -> f64;
}

/// `v(S) = mean over background rows b of f(x_S, b_S̄)`.
pub struct InterventionalValue<'a, F: Fn(&[f64]) -> f64 + Sync> {
    pub f: F,
    pub x: &'a [f64],
    pub background: &'a Matrix,
}

impl<F: Fn(&[f64]) -> f64 + Sync> ValueFunction for InterventionalValue<'_, F> {
    fn n_features(&self) -> usize {
        self.x.len()
    }

    fn value(&self, coalition: u32) -> f64 {
        let mut row = vec![0.0; self.x.len()];
        let mut total = 0.0;
        for b in self.background.iter_rows() {
            for (j, r) in row.iter_mut().enumerate() {
                *r = if coalition >> j & 1 == 1 { self.x[j] } else { b[j] };
            }
            total += (self.f)(&row);
        }
        total / self.background.rows() as f64
    }
}

/// `v(S) = offset + scale·Σ_t E_t[tree | x_S]` with cover-weighted
/// expectations over the features outside `S`.
pub struct TreeConditionalValue<'a> {
    pub trees: Vec<&'a RegressionTree>,
    pub scale: f64,
    pub offset: f64,
    pub x: &'a [f64],
}

impl<'a> TreeConditionalValue<'a> {
    pub fn for_model(model: &'a RegressionModel, x: &'a [f64]) -> Result<Self> {
        let (trees, scale, offset) = model
            .additive_trees()
            .ok_or_else(|| Error::UnsupportedModel(model_name(model).into()))?;
        Ok(Self {
            trees,
            scale,
            offset,
            x,
        })
    }

    fn conditional(&self, tree: &RegressionTree, node: usize, coalition: u32) -> f64 {
        match tree.nodes[node] {
            Node::Leaf { value, .. } => value,
            Node::Split {
                feature,
                threshold,
                left,
                right,
                n_samples,
                ..
            } => {
                if coalition >> feature & 1 == 1 {
                    let next = if self.x[feature] <= threshold { left } else { right };
                    self.conditional(tree, next, coalition)
                } else {
                    let cl = tree.nodes[left].n_samples() as f64;
                    let cr = tree.nodes[right].n_samples() as f64;
                    (cl * self.conditional(tree, left, coalition)
                        + cr * self.conditional(tree, right, coalition))
                        / n_samples as f64
                }
            }
        }
    }
}

impl ValueFunction for TreeConditionalValue<'_> {
    fn n_features(&self) -> usize {
        self.x.len()
    }

    fn value(&self, coalition: u32) -> f64 {
        let sum: f64 = self
            .trees
            .iter()
            .map(|t| self.conditional(t, 0, coalition))
            .sum();
        self.offset + self.scale * sum
    }
}

/// Exact Shapley values by enumerating all `2^p` coalitions.
pub fn brute_force_shapley(game: &dyn ValueFunction, max_features: usize) -> Result<Vec<f64>> {
    let p = game.n_features();
    let limit = max_features.min(31);
    if p > limit {
        return Err(Error::TooManyFeatures { actual: p, limit });
    }
    let values: Vec<f64> = (0..1u32 << p).into_par_iter().map(|s| game.value(s)).collect();
    let mut factorial = vec![1.0f64; p + 1];
    for i in 1..=p {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let weight = |s: usize| factorial[s] * factorial[p - s - 1] / factorial[p];
    let mut phi = vec![0.0; p];
    for (i, out) in phi.iter_mut().enumerate() {
        let bit = 1u32 << i;
        *out = (0..1u32 << p)
            .filter(|s| s & bit == 0)
            .map(|s| weight(s.count_ones() as usize) * (values[(s | bit) as usize] - values[s as usize]))
            .sum();
    }
    Ok(phi)
}

/// Permutation-sampling Shapley estimate with the interventional value
/// function, corrected so that `base + Σφ = f(x)`.
pub fn sampling_shap<F: Fn(&[f64]) -> f64 + Sync>(
    f: F,
    x: &[f64],
    background: &Matrix,
    n_permutations: usize,
    seed: u64,
) -> Result<ShapExplanation> {
    if background.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if n_permutations == 0 {
        return Err(Error::InvalidArgument("n_permutations must be at least 1".into()));
    }
    background.ensure_cols(x.len())?;
    let p = x.len();
    let game = InterventionalValue { f, x, background };
    let base = game.value(0);
    let prediction = (game.f)(x);
    let mut phi = vec![0.0; p];
    let mut rng = SplitMix64::new(seed);
    let mut order: Vec<usize> = (0..p).collect();
    for _ in 0..n_permutations {
        rng.shuffle(&mut order);
        let mut coalition = 0u32;
        let mut previous = base;
        for &j in &order {
            coalition |= 1 << j;
            let v = if coalition == (1u32 << p) - 1 {
                prediction
            } else {
                game.value(coalition)
            };
            phi[j] += v - previous;
            previous = v;
        }
    }
    for v in &mut phi {
        *v /= n_permutations as f64;
    }
    let residual = prediction - base - phi.iter().sum::<f64>();
    for v in &mut phi {
        *v += residual / p as f64;
    }
    Ok(ShapExplanation {
        base_value: base,
        phi,
        prediction,
        feature_names: default_names(p),
    })
}

/// Background rows and sampling budget for models TreeSHAP cannot handle.
#[derive(Debug, Clone)]
pub struct SamplingConfig {
    /// Raw (untransformed) feature rows.
    pub background: Matrix,
    pub n_permutations: usize,
    pub seed: u64,
}

/// Explains one raw feature row of a fitted pipeline in kN. Tree models use
/// TreeSHAP on the transformed inputs (the transform is a per-feature
/// bijection, so attributions carry over); other models fall back to
/// sampling when `fallback` is given.
pub fn explain_pipeline(
    pipeline: &Pipeline,
    raw: &[f64],
    fallback: Option<&SamplingConfig>,
) -> Result<ShapExplanation> {
    let mut e = if pipeline.model.additive_trees().is_some() {
        let z = pipeline.transform.apply_row(raw)?;
        tree_shap(&pipeline.model, &z)?
    } else {
        let cfg = fallback
            .ok_or_else(|| Error::UnsupportedModel(pipeline.family().name().into()))?;
        pipeline.transform.apply_row(raw)?;
        sampling_shap(
            |row| pipeline.predict_row(row).unwrap_or(f64::NAN),
            raw,
            &cfg.background,
            cfg.n_permutations,
            cfg.seed,
        )?
    };
    e.feature_names = pipeline.schema.names();
    Ok(e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureImportance {
    pub name: String,
    pub mean_abs_shap: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceShap {
    pub values: Vec<f64>,
    pub phis: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportanceRanking {
    /// Sorted by descending mean |φ|.
    pub features: Vec<FeatureImportance>,
    #[serde(default)]
    pub instances: Vec<InstanceShap>,
}

impl ImportanceRanking {
    /// `rank,feature,mean_abs_shap` rows.
    pub fn importance_csv(&self) -> String {
        let mut out = String::from("rank,feature,mean_abs_shap\n");
        for f in &self.features {
            out.push_str(&format!("{},{},{}\n", f.rank, f.name, f.mean_abs_shap));
        }
        out
    }

    /// Flat beeswarm rows `instance,feature,value,phi`, features in schema
    /// order.
    pub fn beeswarm_csv(&self, feature_names: &[String]) -> String {
        let mut out = String::from("instance,feature,value,phi\n");
        for (i, inst) in self.instances.iter().enumerate() {
            for (j, name) in feature_names.iter().enumerate() {
                out.push_str(&format!("{i},{name},{},{}\n", inst.values[j], inst.phis[j]));
            }
        }
        out
    }

    pub fn rank_of(&self, name: &str) -> Option<usize> {
        self.features.iter().find(|f| f.name == name).map(|f| f.rank)
    }
}

/// Mean |φ| per feature over all rows of `x` (raw features).
pub fn shap_summary(
    pipeline: &Pipeline,
    x: &Matrix,
    fallback: Option<&SamplingConfig>,
) -> Result<ImportanceRanking> {
    if x.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let rows: Vec<&[f64]> = x.iter_rows().collect();
    let explanations: Vec<ShapExplanation> = rows
        .par_iter()
        .map(|r| explain_pipeline(pipeline, r, fallback))
        .collect::<Result<_>>()?;
    let names = pipeline.schema.names();
    let n = explanations.len() as f64;
    let means: Vec<f64> = (0..names.len())
        .map(|j| explanations.iter().map(|e| e.phi[j].abs()).sum::<f64>() / n)
        .collect();
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
    let features = order
        .iter()
        .enumerate()
        .map(|(r, &j)| FeatureImportance {
            name: names[j].clone(),
            mean_abs_shap: means[j],
            rank: r + 1,
        })
        .collect();
    let instances = rows
        .iter()
        .zip(explanations)
        .map(|(r, e)| InstanceShap {
            values: r.to_vec(),
            phis: e.phi,
        })
        .collect();
    Ok(ImportanceRanking {
        features,
        instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{fit_cart, TreeParams};

    #[test]
    fn stump_attributes_everything_to_its_feature() {
        let x = Matrix::from_rows(&[[0.0, 5.0], [1.0, 3.0], [2.0, 1.0], [3.0, 0.0]]).unwrap();
        let tree = fit_cart(&x, &[0.0, 0.0, 10.0, 10.0], &TreeParams { max_depth: Some(1), ..Default::default() }).unwrap();
        let model = RegressionModel::Tree(tree);
        for q in [[0.5, 9.0], [2.5, -1.0]] {
            let e = tree_shap(&model, &q).unwrap();
            assert_eq!(e.base_value, 5.0);
            assert_eq!(e.phi[1], 0.0);
            assert_eq!(e.phi[0], e.prediction - e.base_value);
        }
    }

    #[test]
    fn dictator_and_null_games() {
        let bg = Matrix::from_rows(&[[-1.0, 2.0, 0.0], [1.0, -2.0, 4.0]]).unwrap();
        let x = [3.0, 7.0, -1.0];
        let dictator = InterventionalValue { f: |r: &[f64]| r[0], x: &x, background: &bg };
        let phi = brute_force_shapley(&dictator, BRUTE_FORCE_LIMIT).unwrap();
        assert_eq!(phi, vec![3.0, 0.0, 0.0]);
        let constant = InterventionalValue { f: |_: &[f64]| 4.0, x: &x, background: &bg };
        assert_eq!(brute_force_shapley(&constant, BRUTE_FORCE_LIMIT).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn symmetric_duplicates_split_equally() {
        let bg = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let x = [2.0, 2.0];
        let g = InterventionalValue { f: |r: &[f64]| (r[0] + r[1]).powi(2), x: &x, background: &bg };
        let phi = brute_force_shapley(&g, BRUTE_FORCE_LIMIT).unwrap();
        assert!((phi[0] - phi[1]).abs() < 1e-12);
    }

    #[test]
    fn oracle_feature_limit() {
        let bg = Matrix::zeros(1, 11);
        let x = [0.0; 11];
        let g = InterventionalValue { f: |_: &[f64]| 0.0, x: &x, background: &bg };
        assert!(matches!(
            brute_force_shapley(&g, BRUTE_FORCE_LIMIT),
            Err(Error::TooManyFeatures { actual: 11, limit: 10 })
        ));
    }

    #[test]
    fn sampling_recovers_additive_effects() {
        let mut rng = SplitMix64::new(5);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let bg = Matrix::from_rows(&rows).unwrap();
        let g = |r: &[f64]| r[0] * r[0] + 3.0 * r[1] + r[2].sin();
        let x = [1.5, -0.5, 2.0];
        let e = sampling_shap(g, &x, &bg, 2000, 1).unwrap();
        let mean = |j: usize, h: &dyn Fn(f64) -> f64| bg.iter_rows().map(|r| h(r[j])).sum::<f64>() / 30.0;
        let expected = [
            x[0] * x[0] - mean(0, &|v| v * v),
            3.0 * x[1] - mean(1, &|v| 3.0 * v),
            x[2].sin() - mean(2, &|v| v.sin()),
        ];
        for j in 0..3 {
            assert!((e.phi[j] - expected[j]).abs() < 0.05);
        }
        assert!(e.local_accuracy_gap() < 1e-12);
        assert_eq!(e, sampling_shap(g, &x, &bg, 2000, 1).unwrap());
    }
}
