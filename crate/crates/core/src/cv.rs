//! K-fold cross-validation, exhaustive grid search and the multi-family
//! comparison.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::{Family, HyperParams, ModelParams};
use crate::pipeline::{fit_pipeline, Pipeline};
use crate::preprocess::PowerTransformParams;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: Vec<Vec<usize>>,
}

impl FoldAssignment {
    pub fn n(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    /// Indices outside fold `f`, ascending.
    pub fn training_indices(&self, f: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, fold)| fold.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }

    /// Checks disjointness, completeness over `0..n` and balance.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for fold in &self.folds {
            for &i in fold {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidArgument(format!(
                        "fold index {i} is out of range or repeated"
                    )));
                }
            }
        }
        if seen.iter().any(|s| !s) || self.folds.len() != self.k {
            return Err(Error::InvalidArgument("folds do not cover every row".into()));
        }
        let sizes = self.folds.iter().map(Vec::len);
        let (lo, hi) = sizes.fold((usize::MAX, 0), |(lo, hi), s| (lo.min(s), hi.max(s)));
        if hi - lo > 1 {
            return Err(Error::InvalidArgument("fold sizes differ by more than 1".into()));
        }
        Ok(())
    }
}

/// Seeded shuffle (when `shuffle`), then contiguous chunks; the first
/// `n mod k` folds hold one extra row. Each fold is returned ascending.
pub fn kfold_indices(n: usize, k: usize, seed: u64, shuffle: bool) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        SplitMix64::new(seed).shuffle(&mut order);
    }
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = order[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(FoldAssignment { k, folds })
}

/// Per-metric aggregate over folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSummary {
    /// `None` if any fold had an undefined R².
    pub r2: Option<f64>,
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
fn std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn summarize(reports: &[MetricReport], f: fn(&[f64]) -> f64) -> MetricSummary {
    let pick = |g: fn(&MetricReport) -> f64| f(&reports.iter().map(g).collect::<Vec<_>>());
    let r2: Option<Vec<f64>> = reports.iter().map(|r| r.r2).collect();
    MetricSummary {
        r2: r2.map(|v| f(&v)),
        mse: pick(|r| r.mse),
        mae: pick(|r| r.mae),
        rmse: pick(|r| r.rmse),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<MetricReport>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
    /// Transform fitted on each fold's training part.
    #[serde(skip)]
    pub fold_transforms: Vec<PowerTransformParams>,
}

/// Fits the full pipeline on each fold's training rows and scores it on the
/// held-out rows.
pub fn cross_validate(params: &ModelParams, train: &Dataset, folds: &FoldAssignment) -> Result<CvResult> {
    folds.validate(train.len())?;
    let per_fold: Vec<(MetricReport, PowerTransformParams)> = (0..folds.k)
        .into_par_iter()
        .map(|f| {
            let attach = |e| Error::Fold {
                fold: f,
                source: Box::new(e),
            };
            let fit = train.select(&folds.training_indices(f));
            let held = train.select(&folds.folds[f]);
            let pipe = fit_pipeline(&fit, params).map_err(attach)?;
            let pred = pipe.predict(&held.x).map_err(attach)?;
            let report = MetricReport::compute(&held.y, &pred).map_err(attach)?;
            Ok((report, pipe.transform))
        })
        .collect::<Result<_>>()?;
    let (reports, fold_transforms): (Vec<_>, Vec<_>) = per_fold.into_iter().unzip();
    Ok(CvResult {
        mean: summarize(&reports, mean),
        std: summarize(&reports, std),
        folds: reports,
        fold_transforms,
    })
}

/// Hyperparameter name → candidate values.
pub type Grid = BTreeMap<String, Vec<Value>>;

/// Cartesian product in key order, last key varying fastest. An empty grid
/// yields one configuration (the defaults).
pub fn enumerate_grid(grid: &Grid) -> Result<Vec<HyperParams>> {
    let mut configs = vec![HyperParams::new()];
    for (key, values) in grid {
        if values.is_empty() {
            return Err(Error::InvalidHyperparameter {
                key: key.clone(),
                reason: "empty value list".into(),
            });
        }
        configs = configs
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.insert(key.clone(), v.clone());
                    c
                })
            })
            .collect();
    }
    Ok(configs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub config: HyperParams,
    pub folds: Vec<MetricReport>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub family: Family,
    pub selection_metric: String,
    pub table: Vec<GridRow>,
    pub best_index: usize,
    pub best_config: HyperParams,
}

impl GridSearchResult {
    pub fn best(&self) -> &GridRow {
        &self.table[self.best_index]
    }
}

/// Evaluates every configuration on the same folds and keeps the lowest
/// mean RMSE (ties: lower RMSE spread, then enumeration order).
pub fn grid_search(
    family: Family,
    grid: &Grid,
    train: &Dataset,
    folds: &FoldAssignment,
    seed: u64,
) -> Result<GridSearchResult> {
    let configs = enumerate_grid(grid)?;
    let params: Vec<ModelParams> = configs
        .iter()
        .map(|c| ModelParams::resolve(family, c, seed))
        .collect::<Result<_>>()?;
    let results: Vec<CvResult> = params
        .par_iter()
        .map(|p| cross_validate(p, train, folds))
        .collect::<Result<_>>()?;
    let table: Vec<GridRow> = configs
        .into_iter()
        .zip(results)
        .map(|(config, r)| GridRow {
            config,
            folds: r.folds,
            mean: r.mean,
            std: r.std,
        })
        .collect();
    let mut best_index = 0;
    for (i, row) in table.iter().enumerate().skip(1) {
        let b = &table[best_index];
        let key = (row.mean.rmse, row.std.rmse);
        if key.0 < b.mean.rmse || (key.0 == b.mean.rmse && key.1 < b.std.rmse) {
            best_index = i;
        }
    }
    Ok(GridSearchResult {
        family,
        selection_metric: "rmse".into(),
        best_config: table[best_index].config.clone(),
        best_index,
        table,
    })
}

/// Observed/predicted pairs and their metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActualVsPredicted {
    pub pairs: Vec<[f64; 2]>,
    pub metrics: MetricReport,
}

impl ActualVsPredicted {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("actual,predicted\n");
        for [a, p] in &self.pairs {
            out.push_str(&format!("{a},{p}\n"));
        }
        out
    }
}

pub fn actual_vs_predicted(pipeline: &Pipeline, d: &Dataset) -> Result<ActualVsPredicted> {
    if d.schema.names() != pipeline.schema.names() {
        return Err(Error::ShapeMismatch {
            expected: pipeline.schema.len(),
            actual: d.schema.len(),
        });
    }
    let pred = pipeline.predict(&d.x)?;
    Ok(ActualVsPredicted {
        pairs: d.y.iter().zip(&pred).map(|(&a, &p)| [a, p]).collect(),
        metrics: MetricReport::compute(&d.y, &pred)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyResult {
    pub family: Family,
    pub best_config: HyperParams,
    /// Complete hyperparameters of the refitted model.
    pub hyperparameters: HyperParams,
    pub cv_mean: MetricSummary,
    pub cv_std: MetricSummary,
    pub test: MetricReport,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_seconds: Option<f64>,
    pub actual_vs_predicted: Vec<[f64; 2]>,
    pub grid: Vec<GridRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub rank: usize,
    pub family: Family,
    pub test_r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyFailure {
    pub family: Family,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub cv_k: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub ranking: Vec<RankEntry>,
    pub results: Vec<FamilyResult>,
    pub failures: Vec<FamilyFailure>,
}

impl ComparisonReport {
    pub fn result(&self, family: Family) -> Option<&FamilyResult> {
        self.results.iter().find(|r| r.family == family)
    }

    /// One row per ranked family.
    pub fn ranking_csv(&self) -> String {
        let mut out = String::from("rank,family,test_r2,test_rmse,test_mae,cv_mean_rmse,cv_std_rmse,cv_mean_r2\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for entry in &self.ranking {
            let r = self.result(entry.family).expect("ranked families have results");
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                entry.rank,
                entry.family,
                opt(r.test.r2),
                r.test.rmse,
                r.test.mae,
                r.cv_mean.rmse,
                r.cv_std.rmse,
                opt(r.cv_mean.r2)
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    pub cv_k: usize,
    pub seed: u64,
    /// Record wall time per family (makes the report non-reproducible).
    pub timings: bool,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            cv_k: 5,
            seed: 42,
            timings: false,
        }
    }
}

fn evaluate_family(
    family: Family,
    grid: &Grid,
    train: &Dataset,
    test: &Dataset,
    folds: &FoldAssignment,
    cfg: &CompareConfig,
) -> Result<FamilyResult> {
    let start = Instant::now();
    let search = grid_search(family, grid, train, folds, cfg.seed)?;
    let params = ModelParams::resolve(family, &search.best_config, cfg.seed)?;
    let pipe = fit_pipeline(train, &params)?;
    let avp = actual_vs_predicted(&pipe, test)?;
    let best = search.best().clone();
    Ok(FamilyResult {
        family,
        best_config: search.best_config,
        hyperparameters: params.to_map(),
        cv_mean: best.mean,
        cv_std: best.std,
        test: avp.metrics,
        wall_time_seconds: cfg.timings.then(|| start.elapsed().as_secs_f64()),
        actual_vs_predicted: avp.pairs,
        grid: search.table,
    })
}

/// Grid search per family on `train`, refit of the best configuration on
/// all of `train`, and scoring on `test`. Failing families are listed, not
/// fatal.
pub fn compare_models(
    train: &Dataset,
    test: &Dataset,
    families: &[(Family, Grid)],
    cfg: &CompareConfig,
) -> Result<ComparisonReport> {
    if train.schema.names() != test.schema.names() {
        return Err(Error::ShapeMismatch {
            expected: train.schema.len(),
            actual: test.schema.len(),
        });
    }
    let folds = kfold_indices(train.len(), cfg.cv_k, cfg.seed, true)?;
    let outcomes: Vec<(Family, Result<FamilyResult>)> = families
        .iter()
        .map(|(family, grid)| (*family, evaluate_family(*family, grid, train, test, &folds, cfg)))
        .collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (family, outcome) in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => failures.push(FamilyFailure {
                family,
                error: e.to_string(),
            }),
        }
    }
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| {
        let key = |i: usize| results[i].test.r2.unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a)).then(a.cmp(&b))
    });
    let ranking = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| RankEntry {
            rank: rank + 1,
            family: results[i].family,
            test_r2: results[i].test.r2,
        })
        .collect();
    Ok(ComparisonReport {
        seed: cfg.seed,
        cv_k: cfg.cv_k,
        n_train: train.len(),
        n_test: test.len(),
        ranking,
        results,
        failures,
    })
}
