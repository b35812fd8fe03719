//! Prediction requests shared by the HTTP service and the command line, so
//! both produce identical numbers and display strings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bundle::ModelBundle;
use crate::data::{csv_reader, parse_cell, FeatureSchema, HeaderMap};
use crate::error::{Error, Result};
use crate::explain::{explain_pipeline, shap_summary, ImportanceRanking, SamplingConfig, ShapExplanation};
use crate::matrix::Matrix;
use crate::pipeline::Pipeline;

pub const DEFAULT_BATCH_LIMIT: usize = 10_000;
pub const SAMPLING_PERMUTATIONS: usize = 100;
pub const PRED_COLUMN: &str = "P_pred";
pub const DISPLAY_COLUMN: &str = "P_pred_display";

/// Rounds to two decimals, ties to even, working on the shortest decimal
/// text of `v` so that e.g. `112.345` is treated as an exact tie.
pub fn format_two_decimals(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let text = v.abs().to_string();
    let (int_part, frac_part) = text.split_once('.').unwrap_or((&text, ""));
    let mut digits: Vec<u8> = int_part.bytes().map(|b| b - b'0').collect();
    let frac: Vec<u8> = frac_part.bytes().map(|b| b - b'0').collect();
    digits.extend((0..2).map(|i| frac.get(i).copied().unwrap_or(0)));
    let rest = frac.get(2..).unwrap_or(&[]);
    let round_up = match rest.first() {
        None => false,
        Some(&d) if d > 5 => true,
        Some(&d) if d < 5 => false,
        Some(_) => rest[1..].iter().any(|&d| d != 0) || digits[digits.len() - 1] % 2 == 1,
    };
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - 2;
    let to_str = |d: &[u8]| d.iter().map(|x| (x + b'0') as char).collect::<String>();
    let body = format!("{}.{}", to_str(&digits[..split]), to_str(&digits[split..]));
    let is_zero = digits.iter().all(|&d| d == 0);
    if v < 0.0 && !is_zero {
        format!("-{body}")
    } else {
        body
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub features: BTreeMap<String, Value>,
    #[serde(default)]
    pub explain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub p_kn: f64,
    pub p_kn_display: String,
    /// Per feature: whether the input lies outside the training range.
    pub extrapolation_flags: BTreeMap<String, bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shap: Option<ShapExplanation>,
}

/// A loaded bundle ready to answer requests.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub bundle: ModelBundle,
    pipeline: Pipeline,
    sampling: Option<SamplingConfig>,
}

impl Predictor {
    pub fn new(bundle: ModelBundle) -> Result<Self> {
        let pipeline = bundle.pipeline()?;
        let sampling = bundle.background.clone().map(|background| SamplingConfig {
            background,
            n_permutations: SAMPLING_PERMUTATIONS,
            seed: bundle.metadata.seed,
        });
        Ok(Self {
            bundle,
            pipeline,
            sampling,
        })
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    /// Feature vector in schema order from a name → value map.
    pub fn features_from_map(&self, map: &BTreeMap<String, Value>) -> Result<Vec<f64>> {
        self.bundle
            .schema
            .features
            .iter()
            .map(|f| {
                let v = map
                    .get(&f.name)
                    .ok_or_else(|| Error::MissingFeature(f.name.clone()))?;
                v.as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::NonFiniteValue(f.name.clone()))
            })
            .collect()
    }

    pub fn extrapolation_flags(&self, row: &[f64]) -> BTreeMap<String, bool> {
        self.bundle
            .metadata
            .feature_ranges
            .iter()
            .zip(row)
            .map(|(r, &v)| (r.name.clone(), v < r.min || v > r.max))
            .collect()
    }

    pub fn predict_value(&self, row: &[f64]) -> Result<f64> {
        if let Some((j, _)) = row.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteValue(self.bundle.schema.features[j].name.clone()));
        }
        self.pipeline.predict_row(row)
    }

    pub fn explain(&self, row: &[f64]) -> Result<ShapExplanation> {
        explain_pipeline(&self.pipeline, row, self.sampling.as_ref())
    }

    pub fn predict_row(&self, row: &[f64], explain: bool) -> Result<PredictResponse> {
        let p_kn = self.predict_value(row)?;
        let shap = if explain { Some(self.explain(row)?) } else { None };
        Ok(PredictResponse {
            p_kn,
            p_kn_display: format_two_decimals(p_kn),
            extrapolation_flags: self.extrapolation_flags(row),
            shap,
        })
    }

    pub fn predict_request(&self, req: &PredictRequest) -> Result<PredictResponse> {
        let row = self.features_from_map(&req.features)?;
        self.predict_row(&row, req.explain)
    }

    /// Reads a CSV with the schema columns (target optional and ignored) and
    /// returns it with `P_pred` and `P_pred_display` appended. With
    /// `explain`, one `phi_<name>` column per feature and `shap_base` follow.
    pub fn predict_csv(&self, body: &[u8], limit: usize, explain: bool) -> Result<String> {
        let table = read_feature_csv(body, &self.bundle.schema, limit)?;
        let names = self.bundle.schema.names();
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut out_header: Vec<String> = table.header.iter().map(str::to_owned).collect();
        out_header.push(PRED_COLUMN.into());
        out_header.push(DISPLAY_COLUMN.into());
        if explain {
            out_header.extend(names.iter().map(|n| format!("phi_{n}")));
            out_header.push("shap_base".into());
        }
        writer.write_record(&out_header)?;
        for (record, row) in table.records.iter().zip(table.x.iter_rows()) {
            let p = self.predict_value(row)?;
            let mut out: Vec<String> = record.iter().map(str::to_owned).collect();
            out.push(p.to_string());
            out.push(format_two_decimals(p));
            if explain {
                let e = self.explain(row)?;
                out.extend(e.phi.iter().map(f64::to_string));
                out.push(e.base_value.to_string());
            }
            writer.write_record(&out)?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
    }

    /// Mean-|SHAP| ranking over raw feature rows.
    pub fn importance(&self, x: &Matrix) -> Result<ImportanceRanking> {
        shap_summary(&self.pipeline, x, self.sampling.as_ref())
    }
}

/// A parsed prediction input: the original records plus the feature matrix.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub header: csv::StringRecord,
    pub records: Vec<csv::StringRecord>,
    /// Raw features in schema order.
    pub x: Matrix,
}

/// Reads the schema columns of a CSV; every feature cell must be present.
pub fn read_feature_csv(body: &[u8], schema: &FeatureSchema, limit: usize) -> Result<FeatureTable> {
    let mut reader = csv_reader(body);
    let header = reader.headers()?.clone();
    let map = HeaderMap::resolve(&header, schema, false)?;
    let records: Vec<csv::StringRecord> = reader
        .records()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Parse {
                row: i + 1,
                column: String::new(),
                text: e.to_string(),
            })
        })
        .collect::<Result<_>>()?;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if records.len() > limit {
        return Err(Error::TooManyRows {
            rows: records.len(),
            limit,
        });
    }
    let mut x = Matrix::zeros(0, schema.len());
    let mut row = vec![0.0; schema.len()];
    for (i, record) in records.iter().enumerate() {
        for (j, &col) in map.features.iter().enumerate() {
            let name = &schema.features[j].name;
            row[j] = parse_cell(record.get(col).unwrap_or(""), i + 1, name)?.ok_or_else(|| {
                Error::MissingValue {
                    row: i + 1,
                    column: name.clone(),
                }
            })?;
        }
        x.push_row(&row)?;
    }
    Ok(FeatureTable { header, records, x })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_even_display() {
        assert_eq!(format_two_decimals(112.345), "112.34");
        assert_eq!(format_two_decimals(112.355), "112.36");
        assert_eq!(format_two_decimals(112.3451), "112.35");
        assert_eq!(format_two_decimals(0.125), "0.12");
        assert_eq!(format_two_decimals(0.135), "0.14");
        assert_eq!(format_two_decimals(99.995), "100.00");
        assert_eq!(format_two_decimals(7.0), "7.00");
        assert_eq!(format_two_decimals(-2.675), "-2.68");
        assert_eq!(format_two_decimals(-0.001), "0.00");
        assert_eq!(format_two_decimals(1e-7), "0.00");
        assert_eq!(format_two_decimals(3.1), "3.10");
    }
}
