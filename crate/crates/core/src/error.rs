use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("cannot parse value at data row {row}, column `{column}`: {text:?}")]
    Parse {
        /// 1-based data row (the header is row 0).
        row: usize,
        column: String,
        text: String,
    },

    #[error("missing value at data row {row}, column `{column}`")]
    MissingValue { row: usize, column: String },

    #[error("dataset has no data rows")]
    EmptyDataset,

    #[error("column `{0}` has no observed values")]
    AllMissingColumn(String),

    #[error("outlier filter removed every row")]
    EmptyAfterFilter,

    #[error("shape mismatch: expected {expected} columns, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("inverse transform out of domain for feature `{feature}` at value {value}")]
    Domain { feature: String, value: f64 },

    #[error("n_components = {requested} exceeds the bound {bound}")]
    ComponentOverflow { requested: usize, bound: usize },

    #[error("k = {k} folds is invalid for {n} rows")]
    KTooLarge { k: usize, n: usize },

    #[error("target has zero variance")]
    ZeroVariance,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("invalid hyperparameter `{key}`: {reason}")]
    InvalidHyperparameter { key: String, reason: String },

    #[error("unknown model family `{name}`; supported: {supported}")]
    UnknownFamily { name: String, supported: String },

    #[error("model family `{0}` is not an additive tree ensemble")]
    UnsupportedModel(String),

    #[error("{actual} features exceed the exhaustive Shapley limit of {limit}")]
    TooManyFeatures { actual: usize, limit: usize },

    #[error("unknown bundle format_version {0}")]
    UnknownFormatVersion(i64),

    #[error("bundle schema violation: {0}")]
    SchemaViolation(String),

    #[error("corrupt bundle payload: {0}")]
    CorruptPayload(String),

    #[error("feature `{0}` is missing")]
    MissingFeature(String),

    #[error("feature `{0}` is not a finite number")]
    NonFiniteValue(String),

    #[error("{rows} rows exceed the batch limit of {limit}")]
    TooManyRows { rows: usize, limit: usize },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from the input data rather than configuration
    /// or an internal fault.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::MissingColumn(_)
            | Error::Parse { .. }
            | Error::MissingValue { .. }
            | Error::EmptyDataset
            | Error::AllMissingColumn(_)
            | Error::EmptyAfterFilter
            | Error::ShapeMismatch { .. }
            | Error::Domain { .. }
            | Error::ZeroVariance
            | Error::LengthMismatch(..)
            | Error::MissingFeature(_)
            | Error::NonFiniteValue(_)
            | Error::TooManyRows { .. }
            | Error::UnknownFormatVersion(_)
            | Error::SchemaViolation(_)
            | Error::CorruptPayload(_)
            | Error::Csv(_)
            | Error::Io(_)
            | Error::Json(_) => true,
            Error::Fold { source, .. } => source.is_data_error(),
            _ => false,
        }
    }

    /// Variant name, used as the machine-readable error tag.
    pub fn name(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) => "MissingColumn",
            Error::Parse { .. } => "ParseError",
            Error::MissingValue { .. } => "MissingValue",
            Error::EmptyDataset => "EmptyDataset",
            Error::AllMissingColumn(_) => "AllMissingColumn",
            Error::EmptyAfterFilter => "EmptyAfterFilter",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::Domain { .. } => "DomainError",
            Error::ComponentOverflow { .. } => "ComponentOverflow",
            Error::KTooLarge { .. } => "KTooLarge",
            Error::ZeroVariance => "ZeroVariance",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::InvalidHyperparameter { .. } => "InvalidHyperparameter",
            Error::UnknownFamily { .. } => "UnknownFamily",
            Error::UnsupportedModel(_) => "UnsupportedModel",
            Error::TooManyFeatures { .. } => "TooManyFeatures",
            Error::UnknownFormatVersion(_) => "UnknownFormatVersion",
            Error::SchemaViolation(_) => "SchemaViolation",
            Error::CorruptPayload(_) => "CorruptPayload",
            Error::MissingFeature(_) => "MissingFeature",
            Error::NonFiniteValue(_) => "NonFiniteValue",
            Error::TooManyRows { .. } => "TooManyRows",
            Error::Fold { source, .. } => source.name(),
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Io(_) => "IOError",
            Error::Csv(_) => "CsvError",
            Error::Json(_) => "JsonError",
        }
    }
}
