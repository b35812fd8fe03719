//! Versioned, canonical-JSON model bundles.
//!
//! A bundle holds everything needed to predict: the feature schema, the
//! fitted transform, the model payload and metadata. Output is canonical:
//! keys sorted, no whitespace, floats in shortest round-trip form, so equal
//! bundles produce equal bytes and loading restores bit-identical
//! predictions.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::cv::MetricSummary;
use crate::data::FeatureSchema;
use crate::error::{Error, Result};
use crate::explain::ImportanceRanking;
use crate::matrix::Matrix;
use crate::metrics::MetricReport;
use crate::model::{Family, HyperParams, ModelParams, RegressionModel};
use crate::pipeline::Pipeline;
use crate::preprocess::PowerTransformParams;

pub const FORMAT_VERSION: i64 = 1;
pub const FILE_EXTENSION: &str = ".rackmodel.json";
/// Timestamp used when the caller supplies none, keeping output
/// reproducible.
pub const DEFAULT_CREATED_AT: &str = "1970-01-01T00:00:00Z";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub created_at: String,
    pub seed: u64,
    pub training_rows: usize,
    /// SHA-256 of the canonical JSON of the search grid.
    pub grid_digest: String,
    pub feature_ranges: Vec<FeatureRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleMetrics {
    pub train: MetricReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub schema: FeatureSchema,
    pub transform: PowerTransformParams,
    pub family: Family,
    pub hyperparameters: HyperParams,
    pub model: RegressionModel,
    pub metadata: Metadata,
    pub metrics: BundleMetrics,
    pub importance: Option<ImportanceRanking>,
    /// Raw training rows used as the background for sampling explanations.
    pub background: Option<Matrix>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    family: Family,
    hyperparameters: HyperParams,
    payload: Value,
}

/// SHA-256 hex digest of the canonical form of `value`.
pub fn digest<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable");
    let bytes = canonical_json(&v);
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Compact JSON with object keys in byte order.
pub fn canonical_json(value: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push(b'{');
            for (i, (k, v)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                out.extend(serde_json::to_vec(k).expect("string"));
                out.push(b':');
                write_canonical(v, out);
            }
            out.push(b'}');
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_canonical(v, out);
            }
            out.push(b']');
        }
        scalar => out.extend(serde_json::to_vec(scalar).expect("scalar")),
    }
}

impl ModelBundle {
    /// Assembles a bundle from a fitted pipeline.
    pub fn from_pipeline(pipeline: &Pipeline, metadata: Metadata, metrics: BundleMetrics) -> Self {
        Self {
            schema: pipeline.schema.clone(),
            transform: pipeline.transform.clone(),
            family: pipeline.family(),
            hyperparameters: pipeline.params.to_map(),
            model: pipeline.model.clone(),
            metadata,
            metrics,
            importance: None,
            background: None,
        }
    }

    pub fn pipeline(&self) -> Result<Pipeline> {
        Ok(Pipeline {
            schema: self.schema.clone(),
            transform: self.transform.clone(),
            params: ModelParams::from_resolved(self.family, &self.hyperparameters)?,
            model: self.model.clone(),
        })
    }

    pub fn to_value(&self) -> Value {
        let mut top = serde_json::Map::new();
        top.insert("format_version".into(), Value::from(FORMAT_VERSION));
        top.insert("schema".into(), serde_json::to_value(&self.schema).expect("schema"));
        top.insert("transform".into(), serde_json::to_value(&self.transform).expect("transform"));
        let section = ModelSection {
            family: self.family,
            hyperparameters: self.hyperparameters.clone(),
            payload: self.model.payload(),
        };
        top.insert("model".into(), serde_json::to_value(section).expect("model"));
        top.insert("metadata".into(), serde_json::to_value(&self.metadata).expect("metadata"));
        top.insert("metrics".into(), serde_json::to_value(&self.metrics).expect("metrics"));
        if let Some(imp) = &self.importance {
            top.insert("importance".into(), serde_json::to_value(imp).expect("importance"));
        }
        if let Some(bg) = &self.background {
            top.insert("background".into(), serde_json::to_value(bg).expect("background"));
        }
        Value::Object(top)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        canonical_json(&self.to_value())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let value: Value = serde_json::from_slice(bytes)?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let Value::Object(mut top) = value else {
            return Err(Error::SchemaViolation("bundle must be a JSON object".into()));
        };
        let version = top
            .get("format_version")
            .ok_or_else(|| Error::SchemaViolation("missing field `format_version`".into()))?;
        let version = version
            .as_i64()
            .ok_or_else(|| Error::SchemaViolation("`format_version` must be an integer".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::UnknownFormatVersion(version));
        }
        const REQUIRED: [&str; 6] = ["format_version", "schema", "transform", "model", "metadata", "metrics"];
        const OPTIONAL: [&str; 2] = ["importance", "background"];
        for key in REQUIRED {
            if !top.contains_key(key) {
                return Err(Error::SchemaViolation(format!("missing field `{key}`")));
            }
        }
        if let Some(extra) = top
            .keys()
            .find(|k| !REQUIRED.contains(&k.as_str()) && !OPTIONAL.contains(&k.as_str()))
        {
            return Err(Error::SchemaViolation(format!("unknown field `{extra}`")));
        }
        fn section<T: serde::de::DeserializeOwned>(
            top: &mut serde_json::Map<String, Value>,
            key: &str,
        ) -> Result<Option<T>> {
            top.remove(key)
                .map(|v| {
                    serde_json::from_value(v)
                        .map_err(|e| Error::SchemaViolation(format!("{key}: {e}")))
                })
                .transpose()
        }
        let schema: FeatureSchema = section(&mut top, "schema")?.expect("checked");
        let transform: PowerTransformParams = section(&mut top, "transform")?.expect("checked");
        let model: ModelSection = section(&mut top, "model")?.expect("checked");
        let metadata: Metadata = section(&mut top, "metadata")?.expect("checked");
        let metrics: BundleMetrics = section(&mut top, "metrics")?.expect("checked");
        let importance: Option<ImportanceRanking> = section(&mut top, "importance")?;
        let background: Option<Matrix> = section(&mut top, "background")?;

        schema.validate()?;
        ModelParams::from_resolved(model.family, &model.hyperparameters)
            .map_err(|e| Error::SchemaViolation(format!("model.hyperparameters: {e}")))?;
        let fitted = RegressionModel::from_payload(model.family, &model.payload)?;
        let p = schema.len();
        if transform.len() != p {
            return Err(Error::CorruptPayload(format!(
                "transform has {} columns for {p} features",
                transform.len()
            )));
        }
        if transform.columns.iter().zip(&schema.features).any(|(c, f)| c.name != f.name) {
            return Err(Error::CorruptPayload("transform column names differ from the schema".into()));
        }
        if transform
            .columns
            .iter()
            .any(|c| !(c.lambda.is_finite() && c.post_mean.is_finite() && c.post_std.is_finite())
                || (!c.degenerate && !(c.post_std > 0.0)))
        {
            return Err(Error::CorruptPayload("invalid transform parameters".into()));
        }
        if fitted.n_features() != p {
            return Err(Error::CorruptPayload(format!(
                "model expects {} features, schema has {p}",
                fitted.n_features()
            )));
        }
        if metadata.feature_ranges.len() != p {
            return Err(Error::CorruptPayload("feature range count differs from the schema".into()));
        }
        if let Some(bg) = &background {
            if bg.cols() != p || bg.rows() == 0 || bg.as_slice().len() != bg.rows() * bg.cols() {
                return Err(Error::CorruptPayload("background rows have the wrong shape".into()));
            }
        }
        Ok(Self {
            schema,
            transform,
            family: model.family,
            hyperparameters: model.hyperparameters,
            model: fitted,
            metadata,
            metrics,
            importance,
            background,
        })
    }
}

/// Writes the canonical bytes; returns the byte count.
pub fn save_bundle<W: Write>(bundle: &ModelBundle, mut sink: W) -> Result<usize> {
    let bytes = bundle.to_bytes();
    sink.write_all(&bytes)?;
    sink.flush()?;
    Ok(bytes.len())
}

pub fn load_bundle<R: Read>(mut source: R) -> Result<ModelBundle> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    ModelBundle::from_bytes(&bytes)
}

pub fn save_bundle_file(bundle: &ModelBundle, path: &Path) -> Result<usize> {
    save_bundle(bundle, std::fs::File::create(path)?)
}

pub fn load_bundle_file(path: &Path) -> Result<ModelBundle> {
    load_bundle(std::fs::File::open(path)?)
}

/// Summary of a bundle for people and for the model endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleInfo {
    pub family: Family,
    pub hyperparameters: HyperParams,
    pub features: Vec<FeatureInfo>,
    pub target: String,
    pub target_unit: String,
    pub metrics: BundleMetrics,
    pub created_at: String,
    pub seed: u64,
    pub training_rows: usize,
    pub format_version: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance: Option<Vec<(String, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureInfo {
    pub name: String,
    pub unit: String,
    pub description: String,
    pub min: f64,
    pub max: f64,
}

pub fn bundle_info(b: &ModelBundle) -> BundleInfo {
    let ranges: BTreeMap<&str, &FeatureRange> = b
        .metadata
        .feature_ranges
        .iter()
        .map(|r| (r.name.as_str(), r))
        .collect();
    BundleInfo {
        family: b.family,
        hyperparameters: b.hyperparameters.clone(),
        features: b
            .schema
            .features
            .iter()
            .map(|f| {
                let r = ranges.get(f.name.as_str());
                FeatureInfo {
                    name: f.name.clone(),
                    unit: f.unit.clone(),
                    description: f.description.clone(),
                    min: r.map_or(f64::NAN, |r| r.min),
                    max: r.map_or(f64::NAN, |r| r.max),
                }
            })
            .collect(),
        target: b.schema.target.name.clone(),
        target_unit: b.schema.target.unit.clone(),
        metrics: b.metrics.clone(),
        created_at: b.metadata.created_at.clone(),
        seed: b.metadata.seed,
        training_rows: b.metadata.training_rows,
        format_version: FORMAT_VERSION,
        importance: b.importance.as_ref().map(|imp| {
            imp.features
                .iter()
                .map(|f| (f.name.clone(), f.mean_abs_shap))
                .collect()
        }),
    }
}

fn fmt_metric(m: &MetricReport) -> String {
    let r2 = m.r2.map_or("undefined".to_owned(), |v| format!("{v:.4}"));
    format!("R2 {r2}  RMSE {:.4}  MAE {:.4}  MSE {:.4}  n {}", m.rmse, m.mae, m.mse, m.n)
}

impl BundleInfo {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("family: {}\n", self.family));
        s.push_str(&format!("format_version: {}\n", self.format_version));
        s.push_str(&format!("created_at: {}\n", self.created_at));
        s.push_str(&format!("seed: {}\n", self.seed));
        s.push_str(&format!("training_rows: {}\n", self.training_rows));
        s.push_str("hyperparameters:\n");
        for (k, v) in &self.hyperparameters {
            s.push_str(&format!("  {k} = {v}\n"));
        }
        s.push_str(&format!("features (target {} in {}):\n", self.target, self.target_unit));
        for f in &self.features {
            s.push_str(&format!("  {:<3} [{}] {} .. {}  {}\n", f.name, f.unit, f.min, f.max, f.description));
        }
        s.push_str("metrics:\n");
        s.push_str(&format!("  train: {}\n", fmt_metric(&self.metrics.train)));
        if let Some(t) = &self.metrics.test {
            s.push_str(&format!("  test:  {}\n", fmt_metric(t)));
        }
        if let Some(imp) = &self.importance {
            s.push_str("importance (mean |SHAP|, kN):\n");
            for (i, (name, v)) in imp.iter().enumerate() {
                s.push_str(&format!("  {}. {name} {v:.4}\n", i + 1));
            }
        }
        s
    }
}
