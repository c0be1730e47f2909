//! Evaluation arithmetic: percentage error of estimates against metered
//! ground truth, and RMSE comparison of the model variants on one readings
//! set.

use std::fmt;

use thiserror::Error;

use crate::power::{
    fit_model, naive_linear, FitDegree, PowerModelError, PowerReadingSet,
};

/// Errors raised by evaluation.
#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("ground-truth energy must be > 0 kWh, got {0}")]
    NonPositiveTruth(f64),
    #[error(transparent)]
    Model(#[from] PowerModelError),
}

/// Absolute percentage error of an estimate against measured truth.
pub fn pct_error(estimate_kwh: f64, truth_kwh: f64) -> Result<f64, EvaluateError> {
    if truth_kwh.is_nan() || truth_kwh <= 0.0 {
        return Err(EvaluateError::NonPositiveTruth(truth_kwh));
    }
    Ok((estimate_kwh - truth_kwh).abs() / truth_kwh * 100.0)
}

/// One comparison of an estimate against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRow {
    pub label: String,
    pub estimate_kwh: f64,
    pub truth_kwh: f64,
    pub pct_error: f64,
}

impl EvaluationRow {
    pub fn new(
        label: impl Into<String>,
        estimate_kwh: f64,
        truth_kwh: f64,
    ) -> Result<Self, EvaluateError> {
        Ok(EvaluationRow {
            label: label.into(),
            estimate_kwh,
            truth_kwh,
            pct_error: pct_error(estimate_kwh, truth_kwh)?,
        })
    }

    pub const CSV_HEADER: &'static str = "label,estimate_kwh,truth_kwh,pct_error";

    /// Render as a CSV row: energies echoed exactly, error to two decimals.
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{:.2}",
            self.label, self.estimate_kwh, self.truth_kwh, self.pct_error
        )
    }
}

/// RMSE of each model variant fitted to (or constructed from) one readings
/// set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelComparison {
    pub naive_rmse: f64,
    pub linear_rmse: f64,
    pub cubic_rmse: f64,
}

impl fmt::Display for ModelComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model          rmse_w")?;
        writeln!(f, "naive-linear   {:.4}", self.naive_rmse)?;
        writeln!(f, "fitted-linear  {:.4}", self.linear_rmse)?;
        write!(f, "fitted-cubic   {:.4}", self.cubic_rmse)
    }
}

/// Score the endpoint, linear, and cubic models against the readings they
/// were built from.
pub fn compare_models(readings: &PowerReadingSet) -> Result<ModelComparison, EvaluateError> {
    let naive = naive_linear(readings)?;
    let linear = fit_model(readings, FitDegree::Linear)?;
    let cubic = fit_model(readings, FitDegree::Cubic)?;
    Ok(ModelComparison {
        naive_rmse: naive.rmse(readings)?,
        linear_rmse: linear.rmse(readings)?,
        cubic_rmse: cubic.rmse(readings)?,
    })
}
