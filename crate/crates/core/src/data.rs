//! Rack-column dataset: schema, CSV ingestion, cleaning, descriptive
//! statistics, correlation, splitting and a synthetic surrogate generator.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SplitMix64;

pub const N_FEATURES: usize = 10;
pub const TARGET_NAME: &str = "P";
/// Optional CSV column carrying row identifiers.
pub const ID_COLUMN: &str = "id";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub name: String,
    pub unit: String,
    pub description: String,
}

impl FeatureSpec {
    fn new(name: &str, unit: &str, description: &str) -> Self {
        Self {
            name: name.to_owned(),
            unit: unit.to_owned(),
            description: description.to_owned(),
        }
    }
}

/// Ordered feature list plus the target column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
    pub target: FeatureSpec,
}

impl FeatureSchema {
    /// The ten upright-column parameters in canonical order, target `P` in kN.
    pub fn rack() -> Self {
        Self {
            features: vec![
                FeatureSpec::new("w", "mm", "back width"),
                FeatureSpec::new("h", "mm", "total height"),
                FeatureSpec::new("b", "mm", "back indentation"),
                FeatureSpec::new("d", "mm", "side fold distance"),
                FeatureSpec::new("t", "mm", "thickness"),
                FeatureSpec::new("L", "mm", "column length"),
                FeatureSpec::new("A", "mm²", "cross-sectional area"),
                FeatureSpec::new("Ix", "mm⁴", "moment of inertia, strong axis"),
                FeatureSpec::new("Iy", "mm⁴", "moment of inertia, weak axis"),
                FeatureSpec::new("fy", "MPa", "yield stress"),
            ],
            target: FeatureSpec::new(TARGET_NAME, "kN", "axial load capacity"),
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != N_FEATURES {
            return Err(Error::SchemaViolation(format!(
                "expected {N_FEATURES} features, found {}",
                self.features.len()
            )));
        }
        for (i, f) in self.features.iter().enumerate() {
            if self.features[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::SchemaViolation(format!(
                    "duplicate feature name `{}`",
                    f.name
                )));
            }
        }
        Ok(())
    }
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self::rack()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    /// `n × 10` features; missing cells hold `NaN`.
    pub x: Matrix,
    pub y: Vec<f64>,
    pub row_ids: Vec<String>,
    /// Row-major `n × 10` missing-value mask.
    pub missing: Vec<bool>,
}

impl Dataset {
    /// Builds a complete dataset (no missing cells). Row ids default to
    /// 1-based row numbers.
    pub fn new(schema: FeatureSchema, x: Matrix, y: Vec<f64>) -> Result<Self> {
        x.ensure_cols(schema.len())?;
        if x.rows() != y.len() {
            return Err(Error::LengthMismatch(x.rows(), y.len()));
        }
        let row_ids = (1..=y.len()).map(|i| i.to_string()).collect();
        let missing = vec![false; x.rows() * x.cols()];
        Ok(Self {
            schema,
            x,
            y,
            row_ids,
            missing,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.missing[row * self.x.cols() + col]
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let p = self.x.cols();
        let mut missing = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            missing.extend_from_slice(&self.missing[i * p..(i + 1) * p]);
        }
        Dataset {
            schema: self.schema.clone(),
            x: self.x.select_rows(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            row_ids: indices.iter().map(|&i| self.row_ids[i].clone()).collect(),
            missing,
        }
    }

    /// Column `j` of the 11-column view (10 features then the target).
    fn full_column(&self, j: usize) -> Vec<f64> {
        if j < self.x.cols() {
            self.x.column(j)
        } else {
            self.y.clone()
        }
    }

    fn full_labels(&self) -> Vec<String> {
        let mut labels = self.schema.names();
        labels.push(self.schema.target.name.clone());
        labels
    }

    /// Per-feature `(min, max)` over the observed cells.
    pub fn feature_ranges(&self) -> Vec<(f64, f64)> {
        (0..self.x.cols())
            .map(|j| {
                (0..self.len())
                    .filter(|&i| !self.is_missing(i, j))
                    .map(|i| self.x.get(i, j))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    })
            })
            .collect()
    }
}

/// Column positions of the schema features (and optionally target and id)
/// inside a CSV header.
pub(crate) struct HeaderMap {
    pub features: Vec<usize>,
    pub target: Option<usize>,
    pub id: Option<usize>,
}

impl HeaderMap {
    pub(crate) fn resolve(
        header: &csv::StringRecord,
        schema: &FeatureSchema,
        require_target: bool,
    ) -> Result<Self> {
        let find = |name: &str| header.iter().position(|h| h == name);
        let features = schema
            .features
            .iter()
            .map(|f| find(&f.name).ok_or_else(|| Error::MissingColumn(f.name.clone())))
            .collect::<Result<Vec<_>>>()?;
        let target = find(&schema.target.name);
        if require_target && target.is_none() {
            return Err(Error::MissingColumn(schema.target.name.clone()));
        }
        Ok(Self {
            features,
            target,
            id: find(ID_COLUMN),
        })
    }
}

/// Parses one CSV cell: `Ok(None)` for an empty cell, an error for text that
/// is not a finite real number.
pub(crate) fn parse_cell(text: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    match trimmed.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Parse {
            row,
            column: column.to_owned(),
            text: text.to_owned(),
        }),
    }
}

pub(crate) fn csv_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source)
}

/// Reads a UTF-8 CSV with a header row naming at least the schema columns
/// and `P`. Extra columns are ignored; an `id` column, when present,
/// supplies row ids.
pub fn load_csv<R: Read>(source: R, schema: &FeatureSchema) -> Result<Dataset> {
    let mut reader = csv_reader(source);
    let header = reader.headers()?.clone();
    let map = HeaderMap::resolve(&header, schema, true)?;
    let target_col = map.target.expect("target required");
    let p = schema.len();

    let mut x = Matrix::zeros(0, p);
    let mut y = Vec::new();
    let mut row_ids = Vec::new();
    let mut missing = Vec::new();
    let mut row_buf = vec![0.0; p];
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        for (j, &col) in map.features.iter().enumerate() {
            let cell = record.get(col).unwrap_or("");
            match parse_cell(cell, row, &schema.features[j].name)? {
                Some(v) => {
                    row_buf[j] = v;
                    missing.push(false);
                }
                None => {
                    row_buf[j] = f64::NAN;
                    missing.push(true);
                }
            }
        }
        let target = parse_cell(record.get(target_col).unwrap_or(""), row, &schema.target.name)?
            .ok_or_else(|| Error::MissingValue {
                row,
                column: schema.target.name.clone(),
            })?;
        x.push_row(&row_buf)?;
        y.push(target);
        row_ids.push(match map.id {
            Some(c) => record.get(c).unwrap_or("").to_owned(),
            None => row.to_string(),
        });
    }
    if y.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset {
        schema: schema.clone(),
        x,
        y,
        row_ids,
        missing,
    })
}

/// Writes `id`, the ten features and `P`. Numbers use the shortest decimal
/// text that parses back to the same `f64`; missing cells are empty.
pub fn write_csv<W: Write>(d: &Dataset, sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let mut header = vec![ID_COLUMN.to_owned()];
    header.extend(d.schema.names());
    header.push(d.schema.target.name.clone());
    writer.write_record(&header)?;
    for i in 0..d.len() {
        let mut record = Vec::with_capacity(header.len());
        record.push(d.row_ids[i].clone());
        for j in 0..d.x.cols() {
            record.push(if d.is_missing(i, j) {
                String::new()
            } else {
                d.x.get(i, j).to_string()
            });
        }
        record.push(d.y[i].to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Linear-interpolation quantile of an ascending slice: position `(n−1)·q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Replaces each missing feature cell by its column median over observed
/// cells.
pub fn impute_missing(d: &Dataset) -> Result<Dataset> {
    let mut out = d.clone();
    let p = d.x.cols();
    for j in 0..p {
        let observed: Vec<f64> = (0..d.len())
            .filter(|&i| !d.is_missing(i, j))
            .map(|i| d.x.get(i, j))
            .collect();
        if observed.len() == d.len() {
            continue;
        }
        if observed.is_empty() {
            return Err(Error::AllMissingColumn(d.schema.features[j].name.clone()));
        }
        let median = quantile_sorted(&sorted_copy(&observed), 0.5);
        for i in 0..d.len() {
            if d.is_missing(i, j) {
                out.x.set(i, j, median);
                out.missing[i * p + j] = false;
            }
        }
    }
    Ok(out)
}

/// Tukey fence filter over all ten features and the target. Quartiles come
/// from the unfiltered data. Returns the surviving rows (original order) and
/// the ids of removed rows.
pub fn remove_outliers_iqr(d: &Dataset, k: f64) -> Result<(Dataset, Vec<String>)> {
    if !(k > 0.0) {
        return Err(Error::InvalidArgument(format!("IQR multiplier must be positive, got {k}")));
    }
    if d.has_missing() {
        return Err(Error::InvalidArgument(
            "outlier filtering requires imputed data".into(),
        ));
    }
    let cols = d.x.cols() + 1;
    let fences: Vec<(f64, f64)> = (0..cols)
        .map(|j| {
            let sorted = sorted_copy(&d.full_column(j));
            let q1 = quantile_sorted(&sorted, 0.25);
            let q3 = quantile_sorted(&sorted, 0.75);
            let iqr = q3 - q1;
            (q1 - k * iqr, q3 + k * iqr)
        })
        .collect();
    let mut keep = Vec::new();
    let mut removed = Vec::new();
    for i in 0..d.len() {
        let inside = (0..cols).all(|j| {
            let v = if j < d.x.cols() { d.x.get(i, j) } else { d.y[i] };
            let (lo, hi) = fences[j];
            v >= lo && v <= hi
        });
        if inside {
            keep.push(i);
        } else {
            removed.push(d.row_ids[i].clone());
        }
    }
    if keep.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }
    Ok((d.select(&keep), removed))
}

/// Pearson correlations over the ten features plus the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Columns with zero variance; their off-diagonal entries are 0.
    pub degenerate: Vec<bool>,
}

impl CorrelationMatrix {
    /// Rows of the lower triangle including the diagonal; row `i` has
    /// `i + 1` entries.
    pub fn lower_triangle(&self) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, row)| row[..=i].to_vec())
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "labels": self.labels,
            "values": self.values,
            "degenerate": self.degenerate,
            "lower_triangle": self.lower_triangle(),
        })
    }

    /// Lower-triangle CSV: header of labels, masked upper cells left empty.
    pub fn lower_triangle_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        writer.write_record(&header)?;
        for (i, row) in self.values.iter().enumerate() {
            let mut record = vec![self.labels[i].clone()];
            for (j, v) in row.iter().enumerate() {
                record.push(if j <= i { v.to_string() } else { String::new() });
            }
            writer.write_record(&record)?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Pearson `r` between two equal-length columns; `None` when either has zero
/// variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn pearson_correlation(d: &Dataset) -> Result<CorrelationMatrix> {
    if d.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least 2 rows".into()));
    }
    let cols = d.x.cols() + 1;
    let columns: Vec<Vec<f64>> = (0..cols).map(|j| d.full_column(j)).collect();
    let degenerate: Vec<bool> = columns
        .iter()
        .map(|c| c.iter().all(|&v| v == c[0]))
        .collect();
    let mut values = vec![vec![0.0; cols]; cols];
    for i in 0..cols {
        values[i][i] = 1.0;
        for j in 0..i {
            let r = pearson(&columns[i], &columns[j]).unwrap_or(0.0);
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        labels: d.full_labels(),
        values,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BandwidthRule {
    /// `1.06 · σ̂ · n^(−1/5)`
    #[default]
    Silverman,
    Fixed(f64),
}

pub const KDE_GRID_POINTS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub name: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub histogram: Histogram,
    pub kde_curve: KdeCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    /// Ten features followed by the target.
    pub columns: Vec<ColumnSummary>,
}

pub fn summarize_column(
    name: &str,
    values: &[f64],
    bins: usize,
    rule: BandwidthRule,
) -> ColumnSummary {
    let n = values.len();
    let sorted = sorted_copy(values);
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let (min, max) = (sorted[0], sorted[n - 1]);
    let bins = bins.max(1);

    let width = (max - min) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { max } else { min + width * i as f64 })
        .collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = if width > 0.0 {
            (((v - min) / width).floor() as usize).min(bins - 1)
        } else {
            0
        };
        counts[idx] += 1;
    }

    let bandwidth = match rule {
        BandwidthRule::Silverman => 1.06 * std * (n as f64).powf(-0.2),
        BandwidthRule::Fixed(h) => h,
    };
    let kde_curve = if bandwidth > 0.0 && bandwidth.is_finite() {
        let lo = min - 3.0 * bandwidth;
        let hi = max + 3.0 * bandwidth;
        let step = (hi - lo) / (KDE_GRID_POINTS - 1) as f64;
        let norm = 1.0 / (n as f64 * bandwidth * std::f64::consts::TAU.sqrt());
        let grid: Vec<f64> = (0..KDE_GRID_POINTS).map(|i| lo + step * i as f64).collect();
        let density = grid
            .iter()
            .map(|&g| {
                norm * values
                    .iter()
                    .map(|&v| (-0.5 * ((g - v) / bandwidth).powi(2)).exp())
                    .sum::<f64>()
            })
            .collect();
        KdeCurve {
            bandwidth,
            grid,
            density,
            degenerate: false,
        }
    } else {
        KdeCurve {
            bandwidth: 0.0,
            grid: vec![min],
            density: vec![0.0],
            degenerate: true,
        }
    };

    ColumnSummary {
        name: name.to_owned(),
        count: n,
        mean,
        std,
        min,
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q3: quantile_sorted(&sorted, 0.75),
        max,
        histogram: Histogram { edges, counts },
        kde_curve,
    }
}

pub fn summary_stats(d: &Dataset, bins: usize, rule: BandwidthRule) -> Result<SummaryStats> {
    if d.len() < 2 {
        return Err(Error::InvalidArgument("summary needs at least 2 rows".into()));
    }
    let labels = d.full_labels();
    let columns = labels
        .iter()
        .enumerate()
        .map(|(j, name)| summarize_column(name, &d.full_column(j), bins, rule))
        .collect();
    Ok(SummaryStats { columns })
}

/// Number of test rows for a split: `ceil(n · fraction)`, kept within
/// `1..n`.
pub fn test_size(n: usize, test_fraction: f64) -> usize {
    // The epsilon absorbs representation error such as 0.2·5 = 1.0000000000000002.
    let raw = (n as f64 * test_fraction - 1e-9).ceil() as usize;
    raw.clamp(1, n - 1)
}

/// Seeded shuffle split. Both parts keep the original row order.
pub fn train_test_split(d: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if d.len() < 2 {
        return Err(Error::InvalidArgument("split needs at least 2 rows".into()));
    }
    let n_test = test_size(d.len(), test_fraction);
    let mut order: Vec<usize> = (0..d.len()).collect();
    SplitMix64::new(seed).shuffle(&mut order);
    let mut test_idx = order[..n_test].to_vec();
    let mut train_idx = order[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((d.select(&train_idx), d.select(&test_idx)))
}

/// Young's modulus used by the surrogate, MPa.
pub const SURROGATE_MODULUS: f64 = 210_000.0;

/// Noise-free surrogate capacity (kN) of a feature row in schema order. Only
/// `h`, `L`, `A` and `fy` enter.
pub fn surrogate_capacity(row: &[f64]) -> f64 {
    let (h, length, area, fy) = (row[1], row[5], row[6], row[9]);
    let radius = 0.4 * h;
    let slenderness = (length / radius)
        * (fy / (std::f64::consts::PI.powi(2) * SURROGATE_MODULUS)).sqrt();
    let reduction = 1.0 / (1.0 + slenderness * slenderness);
    reduction * area * fy / 1000.0
}

/// Derived section properties `(A, Ix, Iy)` from `(w, h, b, d, t)`.
pub fn surrogate_section(w: f64, h: f64, b: f64, d: f64, t: f64) -> (f64, f64, f64) {
    let area = t * (w + 2.0 * h + 2.0 * b + 2.0 * d);
    let radius = 0.4 * h;
    let ix = area * radius * radius;
    let iy = 0.35 * area * (0.4 * w).powi(2);
    (area, ix, iy)
}

/// Synthetic rack-column data for desk-scale work. This is a smooth
/// buckling-reduction surrogate, not a physical model.
///
/// Per row the stream draws `w, h, b, d, t, L, fy` uniformly, then one
/// standard normal for the multiplicative lognormal noise.
pub fn generate_synthetic(n: usize, seed: u64, noise_sigma: f64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let mut x = Matrix::zeros(0, N_FEATURES);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let w = rng.uniform(60.0, 120.0);
        let h = rng.uniform(60.0, 140.0);
        let b = rng.uniform(10.0, 30.0);
        let d = rng.uniform(10.0, 25.0);
        let t = rng.uniform(1.5, 3.0);
        let length = rng.uniform(500.0, 3000.0);
        let fy = rng.uniform(250.0, 550.0);
        let (area, ix, iy) = surrogate_section(w, h, b, d, t);
        let row = [w, h, b, d, t, length, area, ix, iy, fy];
        let noise = (noise_sigma * rng.normal()).exp();
        y.push(surrogate_capacity(&row) * noise);
        x.push_row(&row)?;
    }
    let mut d = Dataset::new(FeatureSchema::rack(), x, y)?;
    d.row_ids = (1..=n).map(|i| format!("s{i:04}")).collect();
    Ok(d)
}
