//! Load-capacity regression for rack columns: data handling, power
//! transform, tree and linear model families, cross-validated selection,
//! SHAP attribution and self-contained model bundles.

pub mod bundle;
pub mod cv;
pub mod data;
pub mod error;
pub mod explain;
pub mod inference;
pub mod linear;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod tree;
pub mod workflow;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/selection.md")]
    mod selection {}
    #[doc = include_str!("../../../book/src/explanations.md")]
    mod explanations {}
    #[doc = include_str!("../../../book/src/serving.md")]
    mod serving {}
}
