//! Model families, their hyperparameter maps, and the fitted-model union.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linear::{
    self, BayesianLinearModel, BayesianRidgeParams, ElasticNetParams, KnnModel, KnnParams,
    LassoParams, LinearModel, PlsModel, PlsParams, RidgeParams,
};
use crate::matrix::Matrix;
use crate::tree::{
    self, AdaBoostParams, BaggingParams, EnsembleModel, ForestParams, GradientBoostingParams,
    RegressionTree, SecondOrderBoostingParams, TreeParams,
};

/// Hyperparameter name → JSON value, as read from grid files.
pub type HyperParams = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    GradientBoosting,
    ExtraTrees,
    Bagging,
    RandomForest,
    SecondOrderBoosting,
    AdaBoostR2,
    DecisionTree,
    Ols,
    Ridge,
    Lasso,
    ElasticNet,
    BayesianRidge,
    Knn,
    Pls,
    /// Predicts the training mean; a probe, not part of [`Family::ALL`].
    Mean,
}

impl Family {
    /// The fourteen compared families.
    pub const ALL: [Family; 14] = [
        Family::GradientBoosting,
        Family::ExtraTrees,
        Family::Bagging,
        Family::RandomForest,
        Family::SecondOrderBoosting,
        Family::AdaBoostR2,
        Family::DecisionTree,
        Family::Ols,
        Family::Ridge,
        Family::Lasso,
        Family::ElasticNet,
        Family::BayesianRidge,
        Family::Knn,
        Family::Pls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::GradientBoosting => "gradient_boosting",
            Family::ExtraTrees => "extra_trees",
            Family::Bagging => "bagging",
            Family::RandomForest => "random_forest",
            Family::SecondOrderBoosting => "second_order_boosting",
            Family::AdaBoostR2 => "adaboost_r2",
            Family::DecisionTree => "decision_tree",
            Family::Ols => "ols",
            Family::Ridge => "ridge",
            Family::Lasso => "lasso",
            Family::ElasticNet => "elastic_net",
            Family::BayesianRidge => "bayesian_ridge",
            Family::Knn => "knn",
            Family::Pls => "pls",
            Family::Mean => "mean",
        }
    }

    pub fn supported_names() -> String {
        Family::ALL.iter().map(|f| f.name()).collect::<Vec<_>>().join(", ")
    }

    pub fn is_tree_based(self) -> bool {
        matches!(
            self,
            Family::GradientBoosting
                | Family::ExtraTrees
                | Family::Bagging
                | Family::RandomForest
                | Family::SecondOrderBoosting
                | Family::AdaBoostR2
                | Family::DecisionTree
        )
    }

    /// Default hyperparameters as a complete map.
    pub fn default_params(self) -> HyperParams {
        match self {
            Family::GradientBoosting => to_map(&GradientBoostingParams::default()),
            Family::ExtraTrees | Family::RandomForest => to_map(&ForestParams::default()),
            Family::Bagging => to_map(&BaggingParams::default()),
            Family::SecondOrderBoosting => to_map(&SecondOrderBoostingParams::default()),
            Family::AdaBoostR2 => to_map(&AdaBoostParams::default()),
            Family::DecisionTree => to_map(&TreeParams::default()),
            Family::Ols | Family::Mean => HyperParams::new(),
            Family::Ridge => to_map(&RidgeParams::default()),
            Family::Lasso => to_map(&LassoParams::default()),
            Family::ElasticNet => to_map(&ElasticNetParams::default()),
            Family::BayesianRidge => to_map(&BayesianRidgeParams::default()),
            Family::Knn => to_map(&KnnParams::default()),
            Family::Pls => to_map(&PlsParams::default()),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        let family = match key.as_str() {
            "gradient_boosting" | "gbr" => Family::GradientBoosting,
            "extra_trees" | "etr" => Family::ExtraTrees,
            "bagging" => Family::Bagging,
            "random_forest" | "rf" => Family::RandomForest,
            "second_order_boosting" | "xgboost" | "xgb" => Family::SecondOrderBoosting,
            "adaboost_r2" | "adaboost" => Family::AdaBoostR2,
            "decision_tree" | "dtr" => Family::DecisionTree,
            "ols" | "linear_regression" => Family::Ols,
            "ridge" => Family::Ridge,
            "lasso" => Family::Lasso,
            "elastic_net" | "elasticnet" => Family::ElasticNet,
            "bayesian_ridge" => Family::BayesianRidge,
            "knn" => Family::Knn,
            "pls" => Family::Pls,
            "mean" => Family::Mean,
            _ => {
                return Err(Error::UnknownFamily {
                    name: s.to_owned(),
                    supported: Family::supported_names(),
                })
            }
        };
        Ok(family)
    }
}

impl Serialize for Family {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Family {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn to_map<T: Serialize>(params: &T) -> HyperParams {
    match serde_json::to_value(params).expect("parameter structs serialize") {
        Value::Object(m) => m.into_iter().collect(),
        _ => HyperParams::new(),
    }
}

fn from_map<T: DeserializeOwned>(map: &HyperParams) -> Result<T> {
    let obj: serde_json::Map<String, Value> = map.clone().into_iter().collect();
    serde_json::from_value(Value::Object(obj)).map_err(|e| Error::InvalidHyperparameter {
        key: offending_key(&e.to_string()).unwrap_or_default(),
        reason: e.to_string(),
    })
}

fn offending_key(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let end = start + message[start..].find('`')?;
    Some(message[start..end].to_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MeanParams {}

/// Fully resolved, typed hyperparameters of one family.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    GradientBoosting(GradientBoostingParams),
    ExtraTrees(ForestParams),
    Bagging(BaggingParams),
    RandomForest(ForestParams),
    SecondOrderBoosting(SecondOrderBoostingParams),
    AdaBoostR2(AdaBoostParams),
    DecisionTree(TreeParams),
    Ols,
    Ridge(RidgeParams),
    Lasso(LassoParams),
    ElasticNet(ElasticNetParams),
    BayesianRidge(BayesianRidgeParams),
    Knn(KnnParams),
    Pls(PlsParams),
    Mean,
}

impl ModelParams {
    /// Overlays `overrides` on the family defaults. Unknown keys and
    /// ill-typed values are rejected. A `seed` key, when the family has one
    /// and `overrides` does not set it, takes `seed`.
    pub fn resolve(family: Family, overrides: &HyperParams, seed: u64) -> Result<Self> {
        let mut map = family.default_params();
        for (key, value) in overrides {
            if !map.contains_key(key) {
                let known: Vec<&str> = map.keys().map(String::as_str).collect();
                return Err(Error::InvalidHyperparameter {
                    key: key.clone(),
                    reason: format!(
                        "not a hyperparameter of {family}; expected one of [{}]",
                        known.join(", ")
                    ),
                });
            }
            map.insert(key.clone(), value.clone());
        }
        if map.contains_key("seed") && !overrides.contains_key("seed") {
            map.insert("seed".into(), Value::from(seed));
        }
        Self::from_resolved(family, &map)
    }

    /// Builds typed parameters from a complete map (as stored in a bundle).
    pub fn from_resolved(family: Family, map: &HyperParams) -> Result<Self> {
        Ok(match family {
            Family::GradientBoosting => ModelParams::GradientBoosting(from_map(map)?),
            Family::ExtraTrees => ModelParams::ExtraTrees(from_map(map)?),
            Family::Bagging => ModelParams::Bagging(from_map(map)?),
            Family::RandomForest => ModelParams::RandomForest(from_map(map)?),
            Family::SecondOrderBoosting => ModelParams::SecondOrderBoosting(from_map(map)?),
            Family::AdaBoostR2 => ModelParams::AdaBoostR2(from_map(map)?),
            Family::DecisionTree => ModelParams::DecisionTree(from_map(map)?),
            Family::Ols => {
                from_map::<MeanParams>(map)?;
                ModelParams::Ols
            }
            Family::Ridge => ModelParams::Ridge(from_map(map)?),
            Family::Lasso => ModelParams::Lasso(from_map(map)?),
            Family::ElasticNet => ModelParams::ElasticNet(from_map(map)?),
            Family::BayesianRidge => ModelParams::BayesianRidge(from_map(map)?),
            Family::Knn => ModelParams::Knn(from_map(map)?),
            Family::Pls => ModelParams::Pls(from_map(map)?),
            Family::Mean => {
                from_map::<MeanParams>(map)?;
                ModelParams::Mean
            }
        })
    }

    pub fn family(&self) -> Family {
        match self {
            ModelParams::GradientBoosting(_) => Family::GradientBoosting,
            ModelParams::ExtraTrees(_) => Family::ExtraTrees,
            ModelParams::Bagging(_) => Family::Bagging,
            ModelParams::RandomForest(_) => Family::RandomForest,
            ModelParams::SecondOrderBoosting(_) => Family::SecondOrderBoosting,
            ModelParams::AdaBoostR2(_) => Family::AdaBoostR2,
            ModelParams::DecisionTree(_) => Family::DecisionTree,
            ModelParams::Ols => Family::Ols,
            ModelParams::Ridge(_) => Family::Ridge,
            ModelParams::Lasso(_) => Family::Lasso,
            ModelParams::ElasticNet(_) => Family::ElasticNet,
            ModelParams::BayesianRidge(_) => Family::BayesianRidge,
            ModelParams::Knn(_) => Family::Knn,
            ModelParams::Pls(_) => Family::Pls,
            ModelParams::Mean => Family::Mean,
        }
    }

    /// Complete hyperparameter map.
    pub fn to_map(&self) -> HyperParams {
        match self {
            ModelParams::GradientBoosting(p) => to_map(p),
            ModelParams::ExtraTrees(p) | ModelParams::RandomForest(p) => to_map(p),
            ModelParams::Bagging(p) => to_map(p),
            ModelParams::SecondOrderBoosting(p) => to_map(p),
            ModelParams::AdaBoostR2(p) => to_map(p),
            ModelParams::DecisionTree(p) => to_map(p),
            ModelParams::Ols | ModelParams::Mean => HyperParams::new(),
            ModelParams::Ridge(p) => to_map(p),
            ModelParams::Lasso(p) => to_map(p),
            ModelParams::ElasticNet(p) => to_map(p),
            ModelParams::BayesianRidge(p) => to_map(p),
            ModelParams::Knn(p) => to_map(p),
            ModelParams::Pls(p) => to_map(p),
        }
    }

    pub fn fit(&self, x: &Matrix, y: &[f64]) -> Result<RegressionModel> {
        Ok(match self {
            ModelParams::GradientBoosting(p) => {
                RegressionModel::Ensemble(tree::fit_gradient_boosting(x, y, p)?)
            }
            ModelParams::ExtraTrees(p) => RegressionModel::Ensemble(tree::fit_extra_trees(x, y, p)?),
            ModelParams::Bagging(p) => RegressionModel::Ensemble(tree::fit_bagging(x, y, p)?),
            ModelParams::RandomForest(p) => {
                RegressionModel::Ensemble(tree::fit_random_forest(x, y, p)?)
            }
            ModelParams::SecondOrderBoosting(p) => {
                RegressionModel::Ensemble(tree::fit_second_order_boosting(x, y, p)?)
            }
            ModelParams::AdaBoostR2(p) => RegressionModel::Ensemble(tree::fit_adaboost_r2(x, y, p)?),
            ModelParams::DecisionTree(p) => RegressionModel::Tree(tree::fit_cart(x, y, p)?),
            ModelParams::Ols => RegressionModel::Linear(linear::fit_ols(x, y)?),
            ModelParams::Ridge(p) => RegressionModel::Linear(linear::fit_ridge(x, y, p)?),
            ModelParams::Lasso(p) => RegressionModel::Linear(linear::fit_lasso(x, y, p)?),
            ModelParams::ElasticNet(p) => RegressionModel::Linear(linear::fit_elastic_net(x, y, p)?),
            ModelParams::BayesianRidge(p) => {
                RegressionModel::Bayesian(linear::fit_bayesian_ridge(x, y, p)?)
            }
            ModelParams::Knn(p) => RegressionModel::Knn(linear::fit_knn(x, y, p)?),
            ModelParams::Pls(p) => RegressionModel::Pls(linear::fit_pls(x, y, p)?),
            ModelParams::Mean => {
                if x.rows() != y.len() {
                    return Err(Error::LengthMismatch(x.rows(), y.len()));
                }
                if y.is_empty() {
                    return Err(Error::EmptyDataset);
                }
                RegressionModel::Mean(MeanModel {
                    value: y.iter().sum::<f64>() / y.len() as f64,
                    n_features: x.cols(),
                })
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanModel {
    pub value: f64,
    pub n_features: usize,
}

/// Any fitted model.
#[derive(Debug, Clone, PartialEq)]
pub enum RegressionModel {
    Ensemble(EnsembleModel),
    Tree(RegressionTree),
    Linear(LinearModel),
    Bayesian(BayesianLinearModel),
    Knn(KnnModel),
    Pls(PlsModel),
    Mean(MeanModel),
}

impl RegressionModel {
    pub fn n_features(&self) -> usize {
        match self {
            RegressionModel::Ensemble(m) => m.n_features,
            RegressionModel::Tree(t) => t.n_features,
            RegressionModel::Linear(m) => m.coefficients.len(),
            RegressionModel::Bayesian(m) => m.coefficients.len(),
            RegressionModel::Knn(m) => m.x.cols(),
            RegressionModel::Pls(m) => m.coefficients.len(),
            RegressionModel::Mean(m) => m.n_features,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self {
            RegressionModel::Ensemble(m) => m.predict_row(row),
            RegressionModel::Tree(t) => t.predict_row(row),
            RegressionModel::Linear(m) => m.predict_row(row),
            RegressionModel::Bayesian(m) => m.predict_row(row),
            RegressionModel::Knn(m) => m.predict_row(row),
            RegressionModel::Pls(m) => m.predict_row(row),
            RegressionModel::Mean(m) => m.value,
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.ensure_cols(self.n_features())?;
        match self {
            RegressionModel::Knn(m) => m.predict(x),
            _ => Ok(x.iter_rows().map(|r| self.predict_row(r)).collect()),
        }
    }

    /// Serialized payload for the bundle.
    pub fn payload(&self) -> Value {
        let v = match self {
            RegressionModel::Ensemble(m) => serde_json::to_value(m),
            RegressionModel::Tree(t) => serde_json::to_value(t),
            RegressionModel::Linear(m) => serde_json::to_value(m),
            RegressionModel::Bayesian(m) => serde_json::to_value(m),
            RegressionModel::Knn(m) => serde_json::to_value(m),
            RegressionModel::Pls(m) => serde_json::to_value(m),
            RegressionModel::Mean(m) => serde_json::to_value(m),
        };
        v.expect("models serialize")
    }

    /// Rebuilds a model from a bundle payload and checks its invariants.
    pub fn from_payload(family: Family, payload: &Value) -> Result<Self> {
        fn parse<T: DeserializeOwned>(v: &Value) -> Result<T> {
            serde_json::from_value(v.clone()).map_err(|e| Error::SchemaViolation(e.to_string()))
        }
        let model = match family {
            Family::GradientBoosting
            | Family::ExtraTrees
            | Family::Bagging
            | Family::RandomForest
            | Family::SecondOrderBoosting
            | Family::AdaBoostR2 => {
                let m: EnsembleModel = parse(payload)?;
                if m.kind.name() != family.name() {
                    return Err(Error::CorruptPayload(format!(
                        "ensemble kind `{}` does not match family `{family}`",
                        m.kind.name()
                    )));
                }
                RegressionModel::Ensemble(m)
            }
            Family::DecisionTree => RegressionModel::Tree(parse(payload)?),
            Family::Ols | Family::Ridge | Family::Lasso | Family::ElasticNet => {
                RegressionModel::Linear(parse(payload)?)
            }
            Family::BayesianRidge => RegressionModel::Bayesian(parse(payload)?),
            Family::Knn => RegressionModel::Knn(parse(payload)?),
            Family::Pls => RegressionModel::Pls(parse(payload)?),
            Family::Mean => RegressionModel::Mean(parse(payload)?),
        };
        model.validate().map_err(Error::CorruptPayload)?;
        Ok(model)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        match self {
            RegressionModel::Ensemble(m) => m.validate(),
            RegressionModel::Tree(t) => t.validate(),
            RegressionModel::Linear(m) => m.validate(),
            RegressionModel::Bayesian(m) => m.validate(),
            RegressionModel::Knn(m) => m.validate(),
            RegressionModel::Pls(m) => m.validate(),
            RegressionModel::Mean(m) => {
                if m.value.is_finite() {
                    Ok(())
                } else {
                    Err("non-finite mean".into())
                }
            }
        }
    }

    /// Trees and the factor applied to each tree's output, for models whose
    /// prediction is `offset + scale·Σ tree(x)`.
    pub fn additive_trees(&self) -> Option<(Vec<&RegressionTree>, f64, f64)> {
        match self {
            RegressionModel::Ensemble(m) if m.kind.is_additive() => {
                Some((m.trees.iter().collect(), m.tree_scale(), m.init_value))
            }
            RegressionModel::Tree(t) => Some((vec![t], 1.0, 0.0)),
            _ => None,
        }
    }
}
