//! Node power models: ingestion of stress-test power readings, least-squares
//! fitting of linear/cubic load-to-watts curves, fallback model construction
//! (endpoint line, per-core bounds, TDP), RMSE scoring, and JSON persistence.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::TraceError;

/// Errors raised by reading ingestion, fitting, prediction, and persistence.
#[derive(Debug, Error)]
pub enum PowerModelError {
    #[error("readings document is empty")]
    EmptyReadings,
    #[error("readings header must be 'load_pct,cpu_watts[,mem_watts]', got '{0}'")]
    BadHeader(String),
    #[error("readings line {line}: cannot parse '{token}': {reason}")]
    Cell {
        line: u64,
        token: String,
        reason: String,
    },
    #[error("duplicate load value {0}%")]
    DuplicateLoad(f64),
    #[error("readings must span 0% and 100% load")]
    MissingEndpoints,
    #[error("load {0}% outside 0..=100")]
    LoadOutOfRange(f64),
    #[error("cpu_watts must be > 0, got {0}")]
    NonPositiveWatts(f64),
    #[error("mem_watts must be >= 0, got {0}")]
    NegativeMemWatts(f64),
    #[error("fitting a degree-{degree} polynomial needs more than {degree} readings, got {count}")]
    TooFewReadings { degree: usize, count: usize },
    #[error("degenerate readings: least-squares system is singular")]
    DegenerateFit,
    #[error("unsupported polynomial degree {0} (supported: 1, 3)")]
    UnsupportedDegree(u8),
    #[error("model variant '{variant}' expects {expected} coefficients, got {got}")]
    CoefficientCount {
        variant: ModelVariant,
        expected: usize,
        got: usize,
    },
    #[error("unknown model variant '{0}'")]
    UnknownVariant(String),
    #[error("{0}")]
    InvalidCoefficients(String),
    #[error("variant '{0}' is evaluated per task core, not at node level")]
    NotNodeLevel(ModelVariant),
    #[error("model document is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Metadata(#[from] TraceError),
}

/// One measured point of the node's load-to-power curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerReading {
    /// Node load as a fraction: 0 = idle, 1 = every core busy.
    pub load_fraction: f64,
    pub cpu_watts: f64,
    pub mem_watts: Option<f64>,
}

/// Provenance recorded alongside readings and models: which node was
/// measured, under which frequency governor, and when.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMetadata {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub governor: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub date: Option<NaiveDate>,
}

/// A validated set of power readings, sorted by load, spanning idle to full
/// load.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerReadingSet {
    pub readings: Vec<PowerReading>,
    pub metadata: ModelMetadata,
}

impl PowerReadingSet {
    /// Validate and sort raw readings into a set.
    pub fn new(
        mut readings: Vec<PowerReading>,
        metadata: ModelMetadata,
    ) -> Result<Self, PowerModelError> {
        readings.sort_by(|a, b| a.load_fraction.total_cmp(&b.load_fraction));
        for r in &readings {
            if !(0.0..=1.0).contains(&r.load_fraction) {
                return Err(PowerModelError::LoadOutOfRange(r.load_fraction * 100.0));
            }
            if r.cpu_watts.is_nan() || r.cpu_watts <= 0.0 {
                return Err(PowerModelError::NonPositiveWatts(r.cpu_watts));
            }
            if let Some(m) = r.mem_watts {
                if m.is_nan() || m < 0.0 {
                    return Err(PowerModelError::NegativeMemWatts(m));
                }
            }
        }
        for pair in readings.windows(2) {
            if pair[0].load_fraction == pair[1].load_fraction {
                return Err(PowerModelError::DuplicateLoad(pair[0].load_fraction * 100.0));
            }
        }
        match (readings.first(), readings.last()) {
            (Some(first), Some(last))
                if first.load_fraction == 0.0 && last.load_fraction == 1.0 => {}
            _ => return Err(PowerModelError::MissingEndpoints),
        }
        Ok(PowerReadingSet { readings, metadata })
    }

    fn idle(&self) -> &PowerReading {
        self.readings.first().expect("validated set is non-empty")
    }

    fn peak(&self) -> &PowerReading {
        self.readings.last().expect("validated set is non-empty")
    }
}

/// Supported model shapes. The fitted and naive variants map node load to
/// node watts; the per-core variants map per-core utilisation to task watts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelVariant {
    #[serde(rename = "fitted-linear")]
    FittedLinear,
    #[serde(rename = "fitted-cubic")]
    FittedCubic,
    #[serde(rename = "naive-linear")]
    NaiveLinear,
    #[serde(rename = "per-core-linear")]
    PerCoreLinear,
    #[serde(rename = "tdp-per-core")]
    TdpPerCore,
}

impl ModelVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelVariant::FittedLinear => "fitted-linear",
            ModelVariant::FittedCubic => "fitted-cubic",
            ModelVariant::NaiveLinear => "naive-linear",
            ModelVariant::PerCoreLinear => "per-core-linear",
            ModelVariant::TdpPerCore => "tdp-per-core",
        }
    }

    /// Whether predictions are a function of whole-node load (as opposed to
    /// per-core utilisation).
    pub fn is_node_level(&self) -> bool {
        matches!(
            self,
            ModelVariant::FittedLinear | ModelVariant::FittedCubic | ModelVariant::NaiveLinear
        )
    }

    fn coefficient_count(&self) -> usize {
        match self {
            ModelVariant::FittedCubic => 4,
            _ => 2,
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelVariant {
    type Err = PowerModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fitted-linear" => Ok(ModelVariant::FittedLinear),
            "fitted-cubic" => Ok(ModelVariant::FittedCubic),
            "naive-linear" => Ok(ModelVariant::NaiveLinear),
            "per-core-linear" => Ok(ModelVariant::PerCoreLinear),
            "tdp-per-core" => Ok(ModelVariant::TdpPerCore),
            other => Err(PowerModelError::UnknownVariant(other.to_string())),
        }
    }
}

/// A power model: variant, its coefficients, and provenance.
///
/// Coefficient meaning per variant:
/// - fitted-linear / naive-linear: `[p0, p1]`, watts = p0 + p1·L
/// - fitted-cubic: `[p0, p1, p2, p3]`, watts = p0 + p1·L + p2·L² + p3·L³
/// - per-core-linear: `[min_w_per_core, max_w_per_core]`
/// - tdp-per-core: `[tdp_watts, cpu_core_count]`
///
/// `node_cores` records the core count of the measured node; it is required
/// to map task CPU usage onto node load, so node-level models cannot be used
/// for estimation without it (stored here or supplied at run time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    pub variant: ModelVariant,
    pub coefficients: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node_cores: Option<u32>,
    #[serde(flatten)]
    pub metadata: ModelMetadata,
}

impl PowerModel {
    /// Check per-variant invariants; every constructor and loader calls this.
    pub fn validate(&self) -> Result<(), PowerModelError> {
        let expected = self.variant.coefficient_count();
        if self.coefficients.len() != expected {
            return Err(PowerModelError::CoefficientCount {
                variant: self.variant,
                expected,
                got: self.coefficients.len(),
            });
        }
        if self.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(PowerModelError::InvalidCoefficients(
                "coefficients must be finite".into(),
            ));
        }
        match self.variant {
            ModelVariant::PerCoreLinear => {
                let (min, max) = (self.coefficients[0], self.coefficients[1]);
                if !(min > 0.0 && max > 0.0) {
                    return Err(PowerModelError::InvalidCoefficients(
                        "per-core watts must be > 0".into(),
                    ));
                }
                if max < min {
                    return Err(PowerModelError::InvalidCoefficients(format!(
                        "per-core max {max} W below min {min} W"
                    )));
                }
            }
            ModelVariant::TdpPerCore => {
                let (tdp, cores) = (self.coefficients[0], self.coefficients[1]);
                if !(tdp > 0.0 && cores > 0.0) {
                    return Err(PowerModelError::InvalidCoefficients(
                        "TDP watts and core count must be > 0".into(),
                    ));
                }
            }
            _ => {}
        }
        if self.node_cores == Some(0) {
            return Err(PowerModelError::InvalidCoefficients(
                "node_cores must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Record the measured node's core count.
    pub fn with_node_cores(mut self, cores: u32) -> Self {
        self.node_cores = Some(cores);
        self
    }

    /// Predicted node watts at a node load fraction. The load is clamped
    /// into [0,1] and the prediction floored at zero watts.
    ///
    /// Only node-level variants can be evaluated this way; the per-core
    /// variants need per-task core context and are rejected.
    pub fn predict_power(&self, load_fraction: f64) -> Result<f64, PowerModelError> {
        Ok(self.curve_watts(load_fraction)?.max(0.0))
    }

    /// The polynomial itself, clamped in load but not floored in watts.
    fn curve_watts(&self, load_fraction: f64) -> Result<f64, PowerModelError> {
        if !self.variant.is_node_level() {
            return Err(PowerModelError::NotNodeLevel(self.variant));
        }
        let load = load_fraction.clamp(0.0, 1.0);
        // Horner evaluation, highest coefficient first.
        Ok(self
            .coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * load + c))
    }

    /// Root mean square error of this model against a set of readings.
    ///
    /// Goodness of fit is scored on the raw curve, without the
    /// non-negativity floor applied at prediction time; that keeps the
    /// least-squares ordering rmse(cubic) ≤ rmse(linear) ≤ rmse(naive) true
    /// for every readings set.
    pub fn rmse(&self, readings: &PowerReadingSet) -> Result<f64, PowerModelError> {
        let n = readings.readings.len() as f64;
        let sum_sq: f64 = readings
            .readings
            .iter()
            .map(|r| {
                self.curve_watts(r.load_fraction)
                    .map(|p| (p - r.cpu_watts).powi(2))
            })
            .sum::<Result<f64, _>>()?;
        Ok((sum_sq / n).sqrt())
    }
}

/// Polynomial degree accepted for fitting. Degrees outside {1, 3} are
/// rejected explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitDegree {
    Linear,
    Cubic,
}

impl FitDegree {
    pub fn value(&self) -> usize {
        match self {
            FitDegree::Linear => 1,
            FitDegree::Cubic => 3,
        }
    }
}

impl TryFrom<u8> for FitDegree {
    type Error = PowerModelError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            1 => Ok(FitDegree::Linear),
            3 => Ok(FitDegree::Cubic),
            other => Err(PowerModelError::UnsupportedDegree(other)),
        }
    }
}

/// Parse a readings CSV document.
///
/// Expected shape: optional comment lines `# node=…`, `# governor=…`,
/// `# date=YYYY-MM-DD`, then a header `load_pct,cpu_watts[,mem_watts]` and
/// one row per measurement. Rows may arrive unsorted; duplicates and missing
/// 0%/100% endpoints are errors.
pub fn parse_readings(raw_text: &str) -> Result<PowerReadingSet, PowerModelError> {
    if raw_text.trim().is_empty() {
        return Err(PowerModelError::EmptyReadings);
    }
    let mut metadata = ModelMetadata::default();
    for line in raw_text.lines() {
        let Some(comment) = line.trim().strip_prefix('#') else {
            continue;
        };
        if let Some((key, value)) = comment.split_once('=') {
            let value = value.trim().to_string();
            match key.trim() {
                "node" => metadata.node = Some(value),
                "governor" => metadata.governor = Some(value),
                "date" => {
                    let date = NaiveDate::parse_from_str(&value, "%Y-%m-%d").map_err(|e| {
                        PowerModelError::Cell {
                            line: 0,
                            token: value.clone(),
                            reason: format!("metadata date must be YYYY-MM-DD: {e}"),
                        }
                    })?;
                    metadata.date = Some(date);
                }
                _ => {}
            }
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(raw_text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| PowerModelError::BadHeader(e.to_string()))?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    let has_mem = match names.as_slice() {
        ["load_pct", "cpu_watts"] => false,
        ["load_pct", "cpu_watts", "mem_watts"] => true,
        _ => return Err(PowerModelError::BadHeader(names.join(","))),
    };

    let mut readings = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| PowerModelError::Cell {
            line: e.position().map_or(0, |p| p.line()),
            token: String::new(),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let number = |idx: usize| -> Result<f64, PowerModelError> {
            let cell = record.get(idx).unwrap_or("");
            cell.parse().map_err(|e: std::num::ParseFloatError| {
                PowerModelError::Cell {
                    line,
                    token: cell.to_string(),
                    reason: e.to_string(),
                }
            })
        };
        let load_pct = number(0)?;
        if !(0.0..=100.0).contains(&load_pct) {
            return Err(PowerModelError::LoadOutOfRange(load_pct));
        }
        let mem_watts = match (has_mem, record.get(2).map(str::trim)) {
            (true, Some(cell)) if !cell.is_empty() => Some(number(2)?),
            _ => None,
        };
        readings.push(PowerReading {
            load_fraction: load_pct / 100.0,
            cpu_watts: number(1)?,
            mem_watts,
        });
    }
    if readings.is_empty() {
        return Err(PowerModelError::EmptyReadings);
    }
    PowerReadingSet::new(readings, metadata)
}

/// Solve `a · x = b` by Gaussian elimination with partial pivoting.
fn solve_linear_system(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < scale * 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let pivot_row = a[col].clone();
        for row in col + 1..n {
            let factor = a[row][col] / pivot_row[col];
            for (cell, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *cell -= factor * p;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut sum = b[row];
        for k in row + 1..n {
            sum -= a[row][k] * x[k];
        }
        x[row] = sum / a[row][row];
    }
    Some(x)
}

/// Ordinary least squares polynomial fit via the normal equations. The
/// systems here are at most 4×4 over loads in [0,1], where direct
/// elimination is accurate well beyond the tolerances we promise.
fn polyfit(points: &[(f64, f64)], degree: usize) -> Option<Vec<f64>> {
    let n = degree + 1;
    let mut ata = vec![vec![0.0; n]; n];
    let mut atb = vec![0.0; n];
    for &(x, y) in points {
        let mut powers = vec![1.0; 2 * n - 1];
        for k in 1..powers.len() {
            powers[k] = powers[k - 1] * x;
        }
        for (i, row) in ata.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell += powers[i + j];
            }
            atb[i] += powers[i] * y;
        }
    }
    solve_linear_system(ata, atb)
}

/// Fit an ordinary-least-squares polynomial of the requested degree over
/// (load_fraction, cpu_watts).
pub fn fit_model(
    readings: &PowerReadingSet,
    degree: FitDegree,
) -> Result<PowerModel, PowerModelError> {
    let count = readings.readings.len();
    if count <= degree.value() {
        return Err(PowerModelError::TooFewReadings {
            degree: degree.value(),
            count,
        });
    }
    let points: Vec<(f64, f64)> = readings
        .readings
        .iter()
        .map(|r| (r.load_fraction, r.cpu_watts))
        .collect();
    let coefficients =
        polyfit(&points, degree.value()).ok_or(PowerModelError::DegenerateFit)?;
    let model = PowerModel {
        variant: match degree {
            FitDegree::Linear => ModelVariant::FittedLinear,
            FitDegree::Cubic => ModelVariant::FittedCubic,
        },
        coefficients,
        node_cores: None,
        metadata: readings.metadata.clone(),
    };
    model.validate()?;
    Ok(model)
}

/// Endpoint-only model: a straight line through the idle and peak readings.
pub fn naive_linear(readings: &PowerReadingSet) -> Result<PowerModel, PowerModelError> {
    let idle = readings.idle().cpu_watts;
    let peak = readings.peak().cpu_watts;
    naive_from_bounds(idle, peak).map(|m| PowerModel {
        metadata: readings.metadata.clone(),
        ..m
    })
}

/// Endpoint-only model from user-supplied idle and peak node watts.
pub fn naive_from_bounds(min_watts: f64, max_watts: f64) -> Result<PowerModel, PowerModelError> {
    if min_watts.is_nan() || min_watts <= 0.0 {
        return Err(PowerModelError::NonPositiveWatts(min_watts));
    }
    if max_watts < min_watts {
        return Err(PowerModelError::InvalidCoefficients(format!(
            "max watts {max_watts} below min watts {min_watts}"
        )));
    }
    let model = PowerModel {
        variant: ModelVariant::NaiveLinear,
        coefficients: vec![min_watts, max_watts - min_watts],
        node_cores: None,
        metadata: ModelMetadata::default(),
    };
    model.validate()?;
    Ok(model)
}

/// Fit both supported degrees and keep the one with the lower RMSE against
/// the readings; ties go to the simpler linear model.
pub fn select_lowest_rmse(readings: &PowerReadingSet) -> Result<PowerModel, PowerModelError> {
    let linear = fit_model(readings, FitDegree::Linear)?;
    let cubic = fit_model(readings, FitDegree::Cubic)?;
    if cubic.rmse(readings)? < linear.rmse(readings)? {
        Ok(cubic)
    } else {
        Ok(linear)
    }
}

/// Reduce the readings' memory watts to a single W-per-GiB coefficient:
/// mean(mem_watts) divided by the node's installed memory. `None` when no
/// reading carries a memory measurement or the memory size is not positive.
pub fn mem_coefficient(readings: &PowerReadingSet, installed_gib: f64) -> Option<f64> {
    if installed_gib.is_nan() || installed_gib <= 0.0 {
        return None;
    }
    let watts: Vec<f64> = readings.readings.iter().filter_map(|r| r.mem_watts).collect();
    if watts.is_empty() {
        return None;
    }
    let mean = watts.iter().sum::<f64>() / watts.len() as f64;
    Some(mean / installed_gib)
}

/// Serialize a model to its JSON document. serde_json prints floats with
/// the shortest representation that round-trips, so persistence is exact.
pub fn save_model(model: &PowerModel) -> Result<String, PowerModelError> {
    model.validate()?;
    let mut doc = serde_json::to_string_pretty(model)?;
    doc.push('\n');
    Ok(doc)
}

/// Parse and validate a model JSON document.
pub fn load_model(raw_text: &str) -> Result<PowerModel, PowerModelError> {
    let model: PowerModel = serde_json::from_str(raw_text)?;
    model.validate()?;
    Ok(model)
}
