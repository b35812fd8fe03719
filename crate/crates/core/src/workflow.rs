//! End-to-end training: cleaning, splitting, grid search, refit, scoring and
//! bundling. The command line is a thin layer over this module.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bundle::{digest, BundleMetrics, FeatureRange, Metadata, ModelBundle, DEFAULT_CREATED_AT};
use crate::cv::{actual_vs_predicted, grid_search, kfold_indices, ActualVsPredicted, Grid, GridSearchResult};
use crate::data::{impute_missing, remove_outliers_iqr, train_test_split, Dataset};
use crate::error::{Error, Result};
use crate::explain::{shap_summary, ImportanceRanking};
use crate::metrics::MetricReport;
use crate::model::{Family, ModelParams};
use crate::pipeline::fit_pipeline;
use crate::rng::SplitMix64;

/// Shipped search grids, one per compared family.
pub const DEFAULT_GRIDS_JSON: &str = include_str!("../grids/default.json");
/// Five-key gradient boosting grid (243 configurations).
pub const GBR_FULL_GRID_JSON: &str = include_str!("../grids/gbr_full.json");
/// Rows kept in a bundle as the sampling-explanation background.
pub const BACKGROUND_ROWS: usize = 100;

/// Parses a grid file `{family: {param: [values]}}`.
pub fn parse_grid_file(json: &str) -> Result<BTreeMap<Family, Grid>> {
    let raw: BTreeMap<String, Grid> = serde_json::from_str(json)?;
    raw.into_iter()
        .map(|(name, grid)| Ok((name.parse::<Family>()?, grid)))
        .collect()
}

pub fn default_grids() -> BTreeMap<Family, Grid> {
    parse_grid_file(DEFAULT_GRIDS_JSON).expect("shipped grid file is valid")
}

/// Shipped grid for one family; empty (defaults only) if none is listed.
pub fn default_grid(family: Family) -> Grid {
    default_grids().remove(&family).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    /// Ids of rows dropped by the outlier filter.
    pub removed: Vec<String>,
}

/// Median imputation, IQR outlier removal, then a seeded split.
pub fn prepare(data: &Dataset, iqr_k: f64, test_fraction: f64, seed: u64) -> Result<PreparedData> {
    let imputed = impute_missing(data)?;
    let (clean, removed) = remove_outliers_iqr(&imputed, iqr_k)?;
    let (train, test) = train_test_split(&clean, test_fraction, seed)?;
    Ok(PreparedData {
        train,
        test,
        removed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub family: Family,
    pub grid: Grid,
    pub seed: u64,
    pub cv_k: usize,
    pub test_fraction: f64,
    pub iqr_k: f64,
    pub created_at: String,
    /// Store a mean-|SHAP| ranking over the training rows (tree models only).
    pub importance: bool,
}

impl TrainConfig {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            grid: default_grid(family),
            seed: 42,
            cv_k: 5,
            test_fraction: 0.2,
            iqr_k: 1.5,
            created_at: DEFAULT_CREATED_AT.into(),
            importance: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub family: Family,
    pub best_config: crate::model::HyperParams,
    pub rows_total: usize,
    pub rows_removed: usize,
    pub rows_train: usize,
    pub rows_test: usize,
    pub train: MetricReport,
    pub test: MetricReport,
    pub cv_mean: crate::cv::MetricSummary,
    pub cv_std: crate::cv::MetricSummary,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub search: GridSearchResult,
    pub data: PreparedData,
    pub test: ActualVsPredicted,
    pub summary: TrainSummary,
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::InvalidArgument(format!("{name}: {msg}")),
        other => other,
    })
}

/// Full training run on raw data.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let prepared = stage("prepare", prepare(data, cfg.iqr_k, cfg.test_fraction, cfg.seed))?;
    let train = &prepared.train;
    let folds = kfold_indices(train.len(), cfg.cv_k, cfg.seed, true)?;
    let search = grid_search(cfg.family, &cfg.grid, train, &folds, cfg.seed)?;
    let params = ModelParams::resolve(cfg.family, &search.best_config, cfg.seed)?;
    let pipeline = fit_pipeline(train, &params)?;

    let train_pred = pipeline.predict(&train.x)?;
    let train_metrics = MetricReport::compute(&train.y, &train_pred)?;
    let test = actual_vs_predicted(&pipeline, &prepared.test)?;

    let ranges = train.feature_ranges();
    let metadata = Metadata {
        created_at: cfg.created_at.clone(),
        seed: cfg.seed,
        training_rows: train.len(),
        grid_digest: digest(&cfg.grid),
        feature_ranges: train
            .schema
            .names()
            .into_iter()
            .zip(ranges)
            .map(|(name, (min, max))| FeatureRange { name, min, max })
            .collect(),
        cv: Some(search.best().mean.clone()),
    };
    let mut bundle = ModelBundle::from_pipeline(
        &pipeline,
        metadata,
        BundleMetrics {
            train: train_metrics.clone(),
            test: Some(test.metrics.clone()),
        },
    );
    let mut idx = SplitMix64::new(cfg.seed).choose_distinct(train.len(), BACKGROUND_ROWS);
    idx.sort_unstable();
    bundle.background = Some(train.x.select_rows(&idx));
    if cfg.importance && pipeline.model.additive_trees().is_some() {
        let ranking: ImportanceRanking = shap_summary(&pipeline, &train.x, None)?;
        bundle.importance = Some(ranking);
    }

    let best = search.best();
    let summary = TrainSummary {
        family: cfg.family,
        best_config: search.best_config.clone(),
        rows_total: data.len(),
        rows_removed: prepared.removed.len(),
        rows_train: train.len(),
        rows_test: prepared.test.len(),
        train: train_metrics,
        test: test.metrics.clone(),
        cv_mean: best.mean.clone(),
        cv_std: best.std.clone(),
    };
    Ok(TrainOutcome {
        bundle,
        summary,
        search,
        data: prepared,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cv::enumerate_grid;

    #[test]
    fn shipped_grids_cover_all_families() {
        let grids = default_grids();
        for family in Family::ALL {
            let grid = grids.get(&family).expect("family listed");
            for config in enumerate_grid(grid).unwrap() {
                ModelParams::resolve(family, &config, 0).unwrap();
            }
        }
        assert_eq!(enumerate_grid(&grids[&Family::GradientBoosting]).unwrap().len(), 27);
        let full = parse_grid_file(GBR_FULL_GRID_JSON).unwrap();
        assert_eq!(enumerate_grid(&full[&Family::GradientBoosting]).unwrap().len(), 243);
    }

    #[test]
    fn unknown_family_in_grid_file() {
        assert!(matches!(
            parse_grid_file(r#"{"svr": {"C": [1]}}"#),
            Err(Error::UnknownFamily { .. })
        ));
    }
}
