//! Power transform followed by a regression model. The transform is always
//! fitted on the rows the model is fitted on.

use crate::data::{Dataset, FeatureSchema};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Family, ModelParams, RegressionModel};
use crate::preprocess::{fit_power_transform, PowerTransformParams};

#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub schema: FeatureSchema,
    pub transform: PowerTransformParams,
    pub params: ModelParams,
    pub model: RegressionModel,
}

pub fn fit_pipeline(train: &Dataset, params: &ModelParams) -> Result<Pipeline> {
    if train.has_missing() {
        return Err(Error::InvalidArgument(
            "training data has missing values; impute first".into(),
        ));
    }
    let transform = fit_power_transform(&train.x, &train.schema.names())?;
    let z = transform.apply(&train.x)?;
    let model = params.fit(&z, &train.y)?;
    Ok(Pipeline {
        schema: train.schema.clone(),
        transform,
        params: params.clone(),
        model,
    })
}

impl Pipeline {
    pub fn family(&self) -> Family {
        self.params.family()
    }

    /// Prediction for one raw (untransformed) feature row.
    pub fn predict_row(&self, raw: &[f64]) -> Result<f64> {
        let z = self.transform.apply_row(raw)?;
        Ok(self.model.predict_row(&z))
    }

    pub fn predict(&self, raw: &Matrix) -> Result<Vec<f64>> {
        let z = self.transform.apply(raw)?;
        self.model.predict(&z)
    }
}
