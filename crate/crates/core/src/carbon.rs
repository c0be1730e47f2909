//! Carbon-intensity series (constant or time-varying) and conversion of task
//! energy into gCO2e by overlap-weighting each task's execution window
//! against the intervals it spans.

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::energy::TaskEnergy;

/// Errors raised by CI parsing and emission conversion.
#[derive(Debug, Error)]
pub enum CarbonError {
    #[error("carbon-intensity series is empty")]
    EmptySeries,
    #[error("carbon-intensity header must be 'start,ci_g_per_kwh', got '{0}'")]
    BadHeader(String),
    #[error("carbon-intensity line {line}: cannot parse '{token}': {reason}")]
    Cell {
        line: u64,
        token: String,
        reason: String,
    },
    #[error("carbon-intensity starts must be strictly increasing: {0} does not follow {1}")]
    Unsorted(DateTime<Utc>, DateTime<Utc>),
    #[error("carbon intensity must be >= 0 gCO2e/kWh, got {0}")]
    NegativeValue(f64),
    #[error("unknown CI signal '{0}' (expected average or marginal)")]
    UnknownSignal(String),
    #[error(
        "instant {instant} is before carbon-intensity coverage starting {first_start}; \
         supply earlier data or allow clamping"
    )]
    OutOfCoverage {
        instant: DateTime<Utc>,
        first_start: DateTime<Utc>,
    },
    #[error("task window end {end} precedes start {start}")]
    InvalidWindow {
        start: DateTime<Utc>,
        end: DateTime<Utc>,
    },
}

/// Which grid signal the CI numbers describe. Arithmetic is identical; the
/// label flows through to reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CiSignal {
    Average,
    Marginal,
    #[default]
    Unspecified,
}

impl CiSignal {
    pub fn as_str(&self) -> &'static str {
        match self {
            CiSignal::Average => "average",
            CiSignal::Marginal => "marginal",
            CiSignal::Unspecified => "unspecified",
        }
    }
}

/// What to do when a task window begins before the series' first interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoveragePolicy {
    /// Out-of-coverage instants are errors.
    #[default]
    Strict,
    /// Instants before the first interval take the first interval's value.
    Clamp,
}

#[derive(Debug, Clone, PartialEq)]
enum CiValues {
    Constant(f64),
    /// Interval starts with their values; each interval extends to the next
    /// start, the last to +∞ (left-closed, right-open).
    Series(Vec<(DateTime<Utc>, f64)>),
}

/// A validated carbon-intensity source: a single constant or a step series.
#[derive(Debug, Clone, PartialEq)]
pub struct CiSeries {
    values: CiValues,
    pub signal: CiSignal,
}

impl CiSeries {
    /// A constant intensity in gCO2e/kWh.
    pub fn constant(value: f64) -> Result<Self, CarbonError> {
        if value.is_nan() || value < 0.0 {
            return Err(CarbonError::NegativeValue(value));
        }
        Ok(CiSeries { values: CiValues::Constant(value), signal: CiSignal::Unspecified })
    }

    /// A step series from (start, value) pairs; starts must be strictly
    /// increasing.
    pub fn from_intervals(
        intervals: Vec<(DateTime<Utc>, f64)>,
        signal: CiSignal,
    ) -> Result<Self, CarbonError> {
        if intervals.is_empty() {
            return Err(CarbonError::EmptySeries);
        }
        for pair in intervals.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(CarbonError::Unsorted(pair[1].0, pair[0].0));
            }
        }
        if let Some(&(_, v)) = intervals.iter().find(|(_, v)| v.is_nan() || *v < 0.0) {
            return Err(CarbonError::NegativeValue(v));
        }
        Ok(CiSeries { values: CiValues::Series(intervals), signal })
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.values, CiValues::Constant(_))
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self.values {
            CiValues::Constant(v) => Some(v),
            CiValues::Series(_) => None,
        }
    }

    /// Interval starts and values; empty for a constant series.
    pub fn intervals(&self) -> &[(DateTime<Utc>, f64)] {
        match &self.values {
            CiValues::Constant(_) => &[],
            CiValues::Series(intervals) => intervals,
        }
    }

    /// Arithmetic mean of the interval values (the coarse average a user
    /// would fall back to without time-series data).
    pub fn mean_value(&self) -> f64 {
        match &self.values {
            CiValues::Constant(v) => *v,
            CiValues::Series(intervals) => {
                intervals.iter().map(|(_, v)| v).sum::<f64>() / intervals.len() as f64
            }
        }
    }

    /// Intensity at one instant; intervals are left-closed right-open, so a
    /// boundary instant belongs to the later interval.
    pub fn ci_at(&self, t: DateTime<Utc>, policy: CoveragePolicy) -> Result<f64, CarbonError> {
        match &self.values {
            CiValues::Constant(v) => Ok(*v),
            CiValues::Series(intervals) => {
                let first_start = intervals[0].0;
                if t < first_start {
                    return match policy {
                        CoveragePolicy::Strict => {
                            Err(CarbonError::OutOfCoverage { instant: t, first_start })
                        }
                        CoveragePolicy::Clamp => Ok(intervals[0].1),
                    };
                }
                let idx = intervals.partition_point(|&(s, _)| s <= t) - 1;
                Ok(intervals[idx].1)
            }
        }
    }

    /// Time-weighted mean intensity over a non-empty window.
    fn window_mean(
        &self,
        start: DateTime<Utc>,
        end: DateTime<Utc>,
        policy: CoveragePolicy,
    ) -> Result<f64, CarbonError> {
        match &self.values {
            CiValues::Constant(v) => Ok(*v),
            CiValues::Series(intervals) => {
                let first_start = intervals[0].0;
                if start < first_start && policy == CoveragePolicy::Strict {
                    return Err(CarbonError::OutOfCoverage { instant: start, first_start });
                }
                let window_ms = (end - start).num_milliseconds() as f64;
                let mut weighted = 0.0;
                for (j, &(interval_start, value)) in intervals.iter().enumerate() {
                    // Under the clamp policy the first value also prices any
                    // window portion before coverage begins.
                    let seg_start = if j == 0 { interval_start.min(start) } else { interval_start };
                    let lo = seg_start.max(start);
                    let hi = match intervals.get(j + 1) {
                        Some(&(next_start, _)) => next_start.min(end),
                        None => end,
                    };
                    if hi > lo {
                        weighted += (hi - lo).num_milliseconds() as f64 * value;
                    }
                }
                Ok(weighted / window_ms)
            }
        }
    }
}

/// One task's energy with its carbon conversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskFootprint {
    pub task_id: u64,
    pub energy: TaskEnergy,
    pub co2e_g: f64,
    /// Energy-weighted mean intensity over the task window; for a
    /// zero-energy task, the plain time-weighted mean.
    pub avg_ci: f64,
}

/// Workflow totals reduced from per-task footprints in input order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EmissionTotals {
    pub cpu_kwh: f64,
    pub mem_kwh: f64,
    pub total_kwh: f64,
    pub co2e_g: f64,
}

/// Parse a CI source: either a single scalar (constant gCO2e/kWh) or a CSV
/// document with header `start,ci_g_per_kwh`, RFC 3339 UTC starts, and an
/// optional comment line `# signal=average|marginal`.
pub fn parse_ci(raw_text: &str) -> Result<CiSeries, CarbonError> {
    let trimmed = raw_text.trim();
    if trimmed.is_empty() {
        return Err(CarbonError::EmptySeries);
    }
    if let Ok(constant) = trimmed.parse::<f64>() {
        return CiSeries::constant(constant);
    }

    let mut signal = CiSignal::Unspecified;
    for line in trimmed.lines() {
        let Some(comment) = line.trim().strip_prefix('#') else {
            continue;
        };
        if let Some((key, value)) = comment.split_once('=') {
            if key.trim() == "signal" {
                signal = match value.trim() {
                    "average" => CiSignal::Average,
                    "marginal" => CiSignal::Marginal,
                    other => return Err(CarbonError::UnknownSignal(other.to_string())),
                };
            }
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(trimmed.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| CarbonError::BadHeader(e.to_string()))?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    if names != ["start", "ci_g_per_kwh"] {
        return Err(CarbonError::BadHeader(names.join(",")));
    }
    let mut intervals = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CarbonError::Cell {
            line: e.position().map_or(0, |p| p.line()),
            token: String::new(),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let start_cell = record.get(0).unwrap_or("");
        let start = DateTime::parse_from_rfc3339(start_cell)
            .map_err(|e| CarbonError::Cell {
                line,
                token: start_cell.to_string(),
                reason: format!("expected an RFC 3339 instant: {e}"),
            })?
            .with_timezone(&Utc);
        let value_cell = record.get(1).unwrap_or("");
        let value: f64 = value_cell.parse().map_err(|e: std::num::ParseFloatError| {
            CarbonError::Cell { line, token: value_cell.to_string(), reason: e.to_string() }
        })?;
        intervals.push((start, value));
    }
    CiSeries::from_intervals(intervals, signal)
}

/// Convert one task's energy into emissions by overlap-weighting its window
/// against the series. Energy is assumed uniformly drawn over the window; a
/// zero-length window takes the point intensity at its start.
pub fn task_emissions(
    energy: &TaskEnergy,
    window: (DateTime<Utc>, DateTime<Utc>),
    series: &CiSeries,
    policy: CoveragePolicy,
) -> Result<TaskFootprint, CarbonError> {
    let (start, end) = window;
    if end < start {
        return Err(CarbonError::InvalidWindow { start, end });
    }
    let mean_ci = if end == start {
        series.ci_at(start, policy)?
    } else {
        series.window_mean(start, end, policy)?
    };
    let total_kwh = energy.total_kwh();
    Ok(TaskFootprint {
        task_id: energy.task_id,
        energy: *energy,
        co2e_g: total_kwh * mean_ci,
        avg_ci: mean_ci,
    })
}

/// Reduce per-task footprints into workflow totals, summing in input order.
pub fn workflow_emissions(footprints: &[TaskFootprint]) -> EmissionTotals {
    let mut totals = EmissionTotals::default();
    for fp in footprints {
        totals.cpu_kwh += fp.energy.cpu_kwh;
        totals.mem_kwh += fp.energy.mem_kwh;
        totals.total_kwh += fp.energy.total_kwh();
        totals.co2e_g += fp.co2e_g;
    }
    totals
}
