//! The `rackcap` command line. Every subcommand is also callable in-process
//! through [`run`] or the `cmd_*` functions.

use std::fmt;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rackcap::bundle::{bundle_info, load_bundle_file, ModelBundle, DEFAULT_CREATED_AT};
use rackcap::cv::{compare_models, ComparisonReport, CompareConfig, Grid};
use rackcap::data::{
    generate_synthetic, impute_missing, load_csv, pearson_correlation, remove_outliers_iqr,
    summary_stats, write_csv, BandwidthRule, Dataset, FeatureSchema,
};
use rackcap::inference::{read_feature_csv, Predictor};
use rackcap::metrics::MetricReport;
use rackcap::model::Family;
use rackcap::workflow::{default_grids, parse_grid_file, prepare, train, TrainConfig, TrainOutcome};
use rackcap::Error;
use rackcap_service::ServiceConfig;

#[derive(Debug, Parser)]
#[command(name = "rackcap", version, about = "Axial capacity models for cold-formed steel rack columns")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    Generate(GenerateArgs),
    /// Grid-search one family, refit, evaluate and save a bundle.
    Train(TrainArgs),
    /// Grid-search and rank several families.
    Compare(CompareArgs),
    /// Predict from a bundle for one row (feature flags) or a CSV.
    Predict(PredictArgs),
    /// Like predict, with per-feature SHAP attributions.
    Explain(ExplainArgs),
    /// Distribution, correlation and scatter data for a dataset.
    Report(ReportArgs),
    /// Run the HTTP prediction service.
    Serve(ServeArgs),
    /// Summarize a bundle.
    Info(InfoArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InfoArgs {
    #[arg(long)]
    pub bundle: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 261)]
    pub n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Standard deviation of the multiplicative log-normal noise.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value = "rack_synthetic.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long = "cv-k", default_value_t = 5)]
    pub cv_k: usize,
    #[arg(long = "test-fraction", default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long = "iqr-k", default_value_t = 1.5)]
    pub iqr_k: f64,
    /// JSON grid file `{family: {param: [values]}}`; shipped grids otherwise.
    #[arg(long)]
    pub grid: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value = "gradient_boosting")]
    pub family: String,
    /// Bundle path.
    #[arg(long, default_value = "model.rackmodel.json")]
    pub out: PathBuf,
    /// ISO-8601 creation time stored in the bundle. Falls back to
    /// SOURCE_DATE_EPOCH, then to the Unix epoch.
    #[arg(long = "created-at")]
    pub created_at: Option<String>,
    /// Also write the run summary as JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Skip the stored mean-|SHAP| ranking.
    #[arg(long = "no-importance")]
    pub no_importance: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    /// Comma-separated family names; all fourteen by default.
    #[arg(long)]
    pub families: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "compare")]
    pub out: PathBuf,
    /// Record wall time per family (output is then not reproducible).
    #[arg(long)]
    pub timings: bool,
}

/// One feature row given as flags, e.g. `--w 90 --h 100 ... --fy 350`.
#[derive(Debug, Clone, Default, Args)]
pub struct FeatureFlags {
    #[arg(long = "w")]
    pub w: Option<f64>,
    #[arg(long = "h")]
    pub h: Option<f64>,
    #[arg(long = "b")]
    pub b: Option<f64>,
    #[arg(long = "d")]
    pub d: Option<f64>,
    #[arg(long = "t")]
    pub t: Option<f64>,
    #[arg(long = "L")]
    pub length: Option<f64>,
    #[arg(long = "A")]
    pub area: Option<f64>,
    #[arg(long = "Ix")]
    pub ix: Option<f64>,
    #[arg(long = "Iy")]
    pub iy: Option<f64>,
    #[arg(long = "fy")]
    pub fy: Option<f64>,
}

impl FeatureFlags {
    fn values(&self) -> [Option<f64>; 10] {
        [
            self.w, self.h, self.b, self.d, self.t, self.length, self.area, self.ix, self.iy, self.fy,
        ]
    }

    fn any(&self) -> bool {
        self.values().iter().any(Option::is_some)
    }

    /// A one-row CSV in schema order.
    fn to_csv(&self, schema: &FeatureSchema) -> Result<String, CliError> {
        let mut cells = Vec::new();
        for (spec, v) in schema.features.iter().zip(self.values()) {
            let v = v.ok_or_else(|| CliError::from(Error::MissingFeature(spec.name.clone())).stage("input"))?;
            cells.push(v.to_string());
        }
        Ok(format!("{}\n{}\n", schema.names().join(","), cells.join(",")))
    }
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// CSV with the ten feature columns.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub explain: bool,
    #[command(flatten)]
    pub features: FeatureFlags,
}

#[derive(Debug, Clone, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub predict: PredictArgs,
    /// Write the mean-|SHAP| ranking of the input rows as CSV.
    #[arg(long)]
    pub importance: Option<PathBuf>,
    /// Write per-row attributions in long form for a beeswarm plot.
    #[arg(long)]
    pub beeswarm: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Drop IQR outliers before summarizing.
    #[arg(long = "iqr-k")]
    pub iqr_k: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, env = "RACKCAP_BUNDLE")]
    pub bundle: Option<PathBuf>,
    #[arg(long, env = "RACKCAP_ADDR", default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long = "batch-limit", env = "RACKCAP_BATCH_LIMIT", default_value_t = rackcap::inference::DEFAULT_BATCH_LIMIT)]
    pub batch_limit: usize,
    /// Allow cross-origin requests from any origin.
    #[arg(long, env = "RACKCAP_CORS")]
    pub cors: bool,
    /// Serve the built UI from this directory.
    #[arg(long = "static-dir", env = "RACKCAP_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
}

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const DATA: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const INTERNAL: u8 = 4;
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub stage: &'static str,
    pub message: String,
}

impl CliError {
    fn config(stage: &'static str, message: impl Into<String>) -> Self {
        Self {
            code: exit::CONFIG,
            stage,
            message: message.into(),
        }
    }

    fn stage(mut self, stage: &'static str) -> Self {
        self.stage = stage;
        self
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::UnknownFamily { .. }
            | Error::InvalidHyperparameter { .. }
            | Error::KTooLarge { .. }
            | Error::ComponentOverflow { .. }
            | Error::InvalidArgument(_) => exit::CONFIG,
            e if e.is_data_error() => exit::DATA,
            _ => exit::INTERNAL,
        };
        Self {
            code,
            stage: "run",
            message: e.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

type CliResult<T> = Result<T, CliError>;

trait Stage<T> {
    fn at(self, stage: &'static str) -> CliResult<T>;
}

impl<T> Stage<T> for rackcap::Result<T> {
    fn at(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError::from(e).stage(stage))
    }
}

fn io_at<T>(r: std::io::Result<T>, stage: &'static str, path: &Path) -> CliResult<T> {
    r.map_err(|e| CliError {
        code: exit::DATA,
        stage,
        message: format!("{}: {e}", path.display()),
    })
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        io_at(fs::create_dir_all(parent), "write", parent)?;
    }
    io_at(fs::write(path, bytes), "write", path)
}

fn load_data(path: &Path) -> CliResult<Dataset> {
    let file = io_at(fs::File::open(path), "load", path)?;
    load_csv(file, &FeatureSchema::rack()).at("load")
}

fn load_grids(path: Option<&Path>) -> CliResult<std::collections::BTreeMap<Family, Grid>> {
    match path {
        None => Ok(default_grids()),
        Some(p) => {
            let text = io_at(fs::read_to_string(p), "grid", p)?;
            parse_grid_file(&text).map_err(|e| CliError::config("grid", format!("{}: {e}", p.display())))
        }
    }
}

/// Creation timestamp: explicit value, then SOURCE_DATE_EPOCH, then the
/// Unix epoch.
pub fn resolve_created_at(explicit: Option<&str>) -> CliResult<String> {
    if let Some(s) = explicit {
        return Ok(s.to_owned());
    }
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(raw) => {
            let secs: i64 = raw
                .trim()
                .parse()
                .map_err(|_| CliError::config("config", format!("SOURCE_DATE_EPOCH is not an integer: {raw:?}")))?;
            let t = time::OffsetDateTime::from_unix_timestamp(secs)
                .map_err(|e| CliError::config("config", e.to_string()))?;
            t.format(&time::format_description::well_known::Rfc3339)
                .map_err(|e| CliError::config("config", e.to_string()))
        }
        Err(_) => Ok(DEFAULT_CREATED_AT.to_owned()),
    }
}

fn parse_family(name: &str) -> CliResult<Family> {
    name.parse::<Family>().at("config")
}

pub fn cmd_generate(args: &GenerateArgs, out: &mut dyn Write) -> CliResult<Dataset> {
    let d = generate_synthetic(args.n, args.seed, args.noise).at("generate")?;
    let mut bytes = Vec::new();
    write_csv(&d, &mut bytes).at("generate")?;
    write_file(&args.out, bytes)?;
    let _ = writeln!(out, "wrote {} rows to {}", d.len(), args.out.display());
    Ok(d)
}

fn metric_line(label: &str, r2: Option<f64>, rmse: f64, mae: f64, mse: f64) -> String {
    let r2 = r2.map_or("undefined".to_owned(), |v| format!("{v:.4}"));
    format!("{label:<10} {r2:>10} {rmse:>12.4} {mae:>12.4} {mse:>14.4}")
}

fn report_line(label: &str, m: &MetricReport) -> String {
    metric_line(label, m.r2, m.rmse, m.mae, m.mse)
}

/// Builds the training configuration from flags.
pub fn train_config(args: &TrainArgs) -> CliResult<TrainConfig> {
    let family = parse_family(&args.family)?;
    let grid = match &args.split.grid {
        None => rackcap::workflow::default_grid(family),
        Some(p) => load_grids(Some(p))?.remove(&family).ok_or_else(|| {
            CliError::config("grid", format!("{} has no entry for `{family}`", p.display()))
        })?,
    };
    Ok(TrainConfig {
        family,
        grid,
        seed: args.split.seed,
        cv_k: args.split.cv_k,
        test_fraction: args.split.test_fraction,
        iqr_k: args.split.iqr_k,
        created_at: resolve_created_at(args.created_at.as_deref())?,
        importance: !args.no_importance,
    })
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> CliResult<TrainOutcome> {
    let cfg = train_config(args)?;
    let data = load_data(&args.split.data)?;
    let outcome = train(&data, &cfg).at("train")?;
    let bytes = outcome.bundle.to_bytes();
    write_file(&args.out, &bytes)?;
    if let Some(path) = &args.summary {
        let json = serde_json::to_vec_pretty(&outcome.summary).expect("summary serializes");
        write_file(path, json)?;
    }
    let s = &outcome.summary;
    let _ = writeln!(out, "family: {}", s.family);
    let _ = writeln!(out, "best config: {}", serde_json::to_string(&s.best_config).expect("json"));
    let _ = writeln!(
        out,
        "rows: {} total, {} removed as outliers, {} train, {} test",
        s.rows_total, s.rows_removed, s.rows_train, s.rows_test
    );
    let _ = writeln!(out, "{:<10} {:>10} {:>12} {:>12} {:>14}", "", "R2", "RMSE", "MAE", "MSE");
    let _ = writeln!(out, "{}", metric_line("cv mean", s.cv_mean.r2, s.cv_mean.rmse, s.cv_mean.mae, s.cv_mean.mse));
    let _ = writeln!(out, "{}", report_line("train", &s.train));
    let _ = writeln!(out, "{}", report_line("test", &s.test));
    let _ = writeln!(out, "bundle: {} ({} bytes)", args.out.display(), bytes.len());
    Ok(outcome)
}

pub fn cmd_compare(args: &CompareArgs, out: &mut dyn Write, log: &mut dyn Write) -> CliResult<ComparisonReport> {
    let grids = load_grids(args.split.grid.as_deref())?;
    let families: Vec<Family> = match &args.families {
        Some(list) => list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(parse_family)
            .collect::<CliResult<_>>()?,
        None => Family::ALL.to_vec(),
    };
    let with_grids: Vec<(Family, Grid)> = families
        .iter()
        .map(|f| (*f, grids.get(f).cloned().unwrap_or_default()))
        .collect();
    let data = load_data(&args.split.data)?;
    let prepared = prepare(&data, args.split.iqr_k, args.split.test_fraction, args.split.seed).at("prepare")?;
    let cfg = CompareConfig {
        cv_k: args.split.cv_k,
        seed: args.split.seed,
        timings: args.timings,
    };
    let report = compare_models(&prepared.train, &prepared.test, &with_grids, &cfg).at("compare")?;
    for f in &report.failures {
        let _ = writeln!(log, "family {} failed: {}", f.family, f.error);
    }
    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    write_file(&args.out.join("comparison.json"), json)?;
    write_file(&args.out.join("ranking.csv"), report.ranking_csv())?;
    for r in &report.results {
        let mut csv = String::from("actual,predicted\n");
        for [a, p] in &r.actual_vs_predicted {
            csv.push_str(&format!("{a},{p}\n"));
        }
        write_file(&args.out.join("actual_vs_predicted").join(format!("{}.csv", r.family)), csv)?;
    }
    let _ = writeln!(out, "{:<4} {:<22} {:>10} {:>12} {:>12}", "rank", "family", "test R2", "test RMSE", "cv RMSE");
    for entry in &report.ranking {
        let r = report.result(entry.family).expect("ranked");
        let r2 = r.test.r2.map_or("undefined".to_owned(), |v| format!("{v:.4}"));
        let _ = writeln!(
            out,
            "{:<4} {:<22} {:>10} {:>12.4} {:>12.4}",
            entry.rank, entry.family, r2, r.test.rmse, r.cv_mean.rmse
        );
    }
    if report.results.is_empty() {
        return Err(CliError {
            code: exit::DATA,
            stage: "compare",
            message: "every family failed".into(),
        });
    }
    Ok(report)
}

fn load_predictor(path: &Path) -> CliResult<Predictor> {
    let bundle: ModelBundle = load_bundle_file(path).at("bundle")?;
    Predictor::new(bundle).at("bundle")
}

fn input_csv(args: &PredictArgs, schema: &FeatureSchema) -> CliResult<Vec<u8>> {
    match (&args.data, args.features.any()) {
        (Some(_), true) => Err(CliError::config("input", "give either --data or feature flags, not both")),
        (Some(p), false) => io_at(fs::read(p), "input", p),
        (None, true) => Ok(args.features.to_csv(schema)?.into_bytes()),
        (None, false) => Err(CliError::config("input", "give --data or the ten feature flags")),
    }
}

/// Predictions as CSV: the input columns, `P_pred`, `P_pred_display`, and
/// with `explain` the attributions.
pub fn cmd_predict(args: &PredictArgs, out: &mut dyn Write) -> CliResult<String> {
    let predictor = load_predictor(&args.bundle)?;
    let body = input_csv(args, &predictor.bundle.schema)?;
    let csv = predictor.predict_csv(&body, usize::MAX, args.explain).at("predict")?;
    match &args.out {
        Some(p) => write_file(p, &csv)?,
        None => {
            let _ = out.write_all(csv.as_bytes());
        }
    }
    Ok(csv)
}

pub fn cmd_explain(args: &ExplainArgs, out: &mut dyn Write) -> CliResult<String> {
    let mut predict = args.predict.clone();
    predict.explain = true;
    let csv = cmd_predict(&predict, out)?;
    if args.importance.is_some() || args.beeswarm.is_some() {
        let predictor = load_predictor(&predict.bundle)?;
        let body = input_csv(&predict, &predictor.bundle.schema)?;
        let table = read_feature_csv(&body, &predictor.bundle.schema, usize::MAX).at("explain")?;
        let ranking = predictor.importance(&table.x).at("explain")?;
        if let Some(p) = &args.importance {
            write_file(p, ranking.importance_csv())?;
        }
        if let Some(p) = &args.beeswarm {
            write_file(p, ranking.beeswarm_csv(&predictor.bundle.schema.names()))?;
        }
    }
    Ok(csv)
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> CliResult<()> {
    let raw = load_data(&args.data)?;
    let mut d = impute_missing(&raw).at("report")?;
    if let Some(k) = args.iqr_k {
        d = remove_outliers_iqr(&d, k).at("report")?.0;
    }
    let stats = summary_stats(&d, args.bins, BandwidthRule::Silverman).at("report")?;
    write_file(
        &args.out.join("summary_stats.json"),
        serde_json::to_vec_pretty(&stats).expect("stats serialize"),
    )?;
    let corr = pearson_correlation(&d).at("report")?;
    write_file(
        &args.out.join("correlation.json"),
        serde_json::to_vec_pretty(&corr.to_json()).expect("json"),
    )?;
    write_file(&args.out.join("correlation_lower.csv"), corr.lower_triangle_csv().at("report")?)?;
    let target = &d.schema.target.name;
    for (j, name) in d.schema.names().iter().enumerate() {
        let mut csv = format!("{name},{target}\n");
        for i in 0..d.len() {
            csv.push_str(&format!("{},{}\n", d.x.get(i, j), d.y[i]));
        }
        write_file(&args.out.join("scatter").join(format!("{name}.csv")), csv)?;
    }
    let _ = writeln!(out, "wrote report for {} rows to {}", d.len(), args.out.display());
    Ok(())
}

pub fn cmd_serve(args: &ServeArgs) -> CliResult<()> {
    let cfg = ServiceConfig {
        addr: args.addr,
        bundle: args.bundle.clone(),
        batch_limit: args.batch_limit,
        cors: args.cors,
        static_dir: args.static_dir.clone(),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError {
        code: exit::INTERNAL,
        stage: "serve",
        message: e.to_string(),
    })?;
    runtime.block_on(rackcap_service::serve(cfg)).at("serve")
}

pub fn cmd_info(args: &InfoArgs, out: &mut dyn Write) -> CliResult<String> {
    let bundle = load_bundle_file(&args.bundle).at("bundle")?;
    let text = bundle_info(&bundle).to_text();
    let _ = out.write_all(text.as_bytes());
    Ok(text)
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return exit::CONFIG;
            }
            let _ = write!(out, "{}", e.render());
            return exit::OK;
        }
    };
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a, out).map(|_| ()),
        Command::Train(a) => cmd_train(a, out).map(|_| ()),
        Command::Compare(a) => cmd_compare(a, out, err).map(|_| ()),
        Command::Predict(a) => cmd_predict(a, out).map(|_| ()),
        Command::Explain(a) => cmd_explain(a, out).map(|_| ()),
        Command::Report(a) => cmd_report(a, out),
        Command::Serve(a) => cmd_serve(a),
        Command::Info(a) => cmd_info(a, out).map(|_| ()),
    };
    match result {
        Ok(()) => exit::OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code
        }
    }
}
