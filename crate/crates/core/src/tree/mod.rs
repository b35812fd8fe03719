//! CART regression trees and the tree-ensemble families.

mod adaboost;
mod boosting;
pub(crate) mod builder;
mod ensemble;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SplitMix64;
use builder::{Criterion, GrowConfig, Presorted, Splitter};

pub use adaboost::{fit_adaboost_r2, weighted_median, AdaBoostLoss, AdaBoostParams};
pub use boosting::{
    fit_gradient_boosting, fit_second_order_boosting, GradientBoostingParams,
    SecondOrderBoostingParams,
};
pub use ensemble::{
    fit_bagging, fit_extra_trees, fit_random_forest, BaggingParams, EnsembleKind, EnsembleModel,
    ForestParams,
};

/// Number of features examined at each split.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum MaxFeatures {
    #[default]
    All,
    Sqrt,
    Log2,
    Count(usize),
    /// Fraction of the available features, rounded down, at least one.
    Fraction(f64),
}

impl MaxFeatures {
    pub fn resolve(&self, available: usize) -> usize {
        let k = match *self {
            MaxFeatures::All => available,
            MaxFeatures::Sqrt => (available as f64).sqrt().floor() as usize,
            MaxFeatures::Log2 => (available as f64).log2().floor() as usize,
            MaxFeatures::Count(c) => c,
            MaxFeatures::Fraction(f) => (f * available as f64).floor() as usize,
        };
        k.clamp(1, available.max(1))
    }
}

impl Serialize for MaxFeatures {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match *self {
            MaxFeatures::All => s.serialize_str("all"),
            MaxFeatures::Sqrt => s.serialize_str("sqrt"),
            MaxFeatures::Log2 => s.serialize_str("log2"),
            MaxFeatures::Count(c) => s.serialize_u64(c as u64),
            MaxFeatures::Fraction(f) => s.serialize_f64(f),
        }
    }
}

impl<'de> Deserialize<'de> for MaxFeatures {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Count(u64),
            Fraction(f64),
            Name(String),
        }
        use serde::de::Error as _;
        match Repr::deserialize(d)? {
            Repr::Count(0) => Err(D::Error::custom("max_features count must be at least 1")),
            Repr::Count(c) => Ok(MaxFeatures::Count(c as usize)),
            Repr::Fraction(f) if f > 0.0 && f <= 1.0 => Ok(MaxFeatures::Fraction(f)),
            Repr::Fraction(f) => Err(D::Error::custom(format!(
                "max_features fraction must lie in (0, 1], got {f}"
            ))),
            Repr::Name(n) => match n.as_str() {
                "all" => Ok(MaxFeatures::All),
                "sqrt" => Ok(MaxFeatures::Sqrt),
                "log2" => Ok(MaxFeatures::Log2),
                _ => Err(D::Error::custom(format!("unknown max_features `{n}`"))),
            },
        }
    }
}

/// CART growth limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    /// `None` grows until nodes are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::All,
            seed: 0,
        }
    }
}

impl TreeParams {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.min_samples_split < 2 {
            return Err(Error::InvalidHyperparameter {
                key: "min_samples_split".into(),
                reason: "must be at least 2".into(),
            });
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::InvalidHyperparameter {
                key: "min_samples_leaf".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    pub(crate) fn grow_config(&self, splitter: Splitter) -> GrowConfig {
        GrowConfig {
            criterion: Criterion::Sse,
            splitter,
            max_depth: self.max_depth,
            min_samples_split: self.min_samples_split as u64,
            min_samples_leaf: self.min_samples_leaf as u64,
            max_features: self.max_features,
            allowed_features: None,
        }
    }
}

/// One node of the flat tree array. Children always sit at larger indices
/// than their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NodeRecord", into = "NodeRecord")]
pub enum Node {
    Leaf {
        value: f64,
        n_samples: u64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Value the node would predict as a leaf.
        value: f64,
        n_samples: u64,
    },
}

impl Node {
    pub fn value(&self) -> f64 {
        match *self {
            Node::Leaf { value, .. } | Node::Split { value, .. } => value,
        }
    }

    pub fn n_samples(&self) -> u64 {
        match *self {
            Node::Leaf { n_samples, .. } | Node::Split { n_samples, .. } => n_samples,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }
}

/// Persisted node layout; leaves carry nulls in the split fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    feature_index: Option<usize>,
    threshold: Option<f64>,
    left: Option<usize>,
    right: Option<usize>,
    value: f64,
    n_samples: u64,
}

impl From<Node> for NodeRecord {
    fn from(n: Node) -> Self {
        match n {
            Node::Leaf { value, n_samples } => NodeRecord {
                feature_index: None,
                threshold: None,
                left: None,
                right: None,
                value,
                n_samples,
            },
            Node::Split {
                feature,
                threshold,
                left,
                right,
                value,
                n_samples,
            } => NodeRecord {
                feature_index: Some(feature),
                threshold: Some(threshold),
                left: Some(left),
                right: Some(right),
                value,
                n_samples,
            },
        }
    }
}

impl TryFrom<NodeRecord> for Node {
    type Error = String;

    fn try_from(r: NodeRecord) -> Result<Self, String> {
        match (r.feature_index, r.threshold, r.left, r.right) {
            (None, None, None, None) => Ok(Node::Leaf {
                value: r.value,
                n_samples: r.n_samples,
            }),
            (Some(feature), Some(threshold), Some(left), Some(right)) => Ok(Node::Split {
                feature,
                threshold,
                left,
                right,
                value: r.value,
                n_samples: r.n_samples,
            }),
            _ => Err("node must set all or none of feature_index, threshold, left, right".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
}

impl RegressionTree {
    pub fn leaf(value: f64, n_samples: u64, n_features: usize) -> Self {
        Self {
            nodes: vec![Node::Leaf { value, n_samples }],
            n_features,
        }
    }

    #[inline]
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Index of the leaf `row` lands in.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.ensure_cols(self.n_features)?;
        Ok(x.iter_rows().map(|r| self.predict_row(r)).collect())
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &RegressionTree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn uses_feature(&self, feature: usize) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n, Node::Split { feature: f, .. } if *f == feature))
    }

    /// Structural checks applied to trees read from untrusted sources.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.value().is_finite() {
                return Err(format!("node {i} has a non-finite value"));
            }
            if let Node::Split {
                feature,
                threshold,
                left,
                right,
                n_samples,
                ..
            } = *n
            {
                if feature >= self.n_features {
                    return Err(format!("node {i} splits on feature {feature} of {}", self.n_features));
                }
                if !threshold.is_finite() {
                    return Err(format!("node {i} has a non-finite threshold"));
                }
                for child in [left, right] {
                    if child >= self.nodes.len() {
                        return Err(format!("node {i} child index {child} out of range"));
                    }
                    if child <= i {
                        return Err(format!("node {i} child index {child} does not follow its parent"));
                    }
                    parents[child] += 1;
                }
                if left == right {
                    return Err(format!("node {i} has identical children"));
                }
                let children = self.nodes[left].n_samples() + self.nodes[right].n_samples();
                if children != n_samples {
                    return Err(format!("node {i} sample count {n_samples} != children {children}"));
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err("nodes do not form a single tree".into());
        }
        Ok(())
    }
}

fn check_xy(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::LengthMismatch(x.rows(), y.len()));
    }
    if y.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// Single CART regression tree on all rows.
pub fn fit_cart(x: &Matrix, y: &[f64], params: &TreeParams) -> Result<RegressionTree> {
    check_xy(x, y)?;
    params.validate()?;
    let presorted = Presorted::new(x);
    let weights = vec![1u32; y.len()];
    Ok(builder::grow(
        x,
        &presorted,
        y,
        &weights,
        &params.grow_config(Splitter::Best),
        SplitMix64::new(params.seed),
    ))
}

/// CART on rows weighted by integer multiplicities (a bootstrap sample).
pub fn fit_cart_weighted(
    x: &Matrix,
    y: &[f64],
    weights: &[u32],
    params: &TreeParams,
) -> Result<RegressionTree> {
    check_xy(x, y)?;
    params.validate()?;
    if weights.len() != y.len() {
        return Err(Error::LengthMismatch(weights.len(), y.len()));
    }
    let presorted = Presorted::new(x);
    Ok(builder::grow(
        x,
        &presorted,
        y,
        weights,
        &params.grow_config(Splitter::Best),
        SplitMix64::new(params.seed),
    ))
}
