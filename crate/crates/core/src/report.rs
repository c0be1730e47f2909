//! The three output artifacts of a run: a human-readable summary, a per-task
//! CSV mirroring the input trace with footprint columns, and top-10 rankings
//! by emissions and by runtime.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use thiserror::Error;

use crate::carbon::{CiSeries, EmissionTotals, TaskFootprint};
use crate::energy::NodeSpec;
use crate::power::PowerModel;
use crate::trace::{format_duration, TraceTask};

/// Errors raised while rendering or writing report files.
#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("footprint count {footprints} does not match task count {tasks}")]
    RowMismatch { footprints: usize, tasks: usize },
    #[error("CSV rendering failed: {0}")]
    Csv(#[from] csv::Error),
}

/// Numeric rendering mode for report values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    /// Fixed decimals matching the published table layout.
    #[default]
    Rounded,
    /// Shortest representation that round-trips the exact float, for
    /// machine comparison.
    Full,
}

/// Everything the summary file reports: the parameters of the run and the
/// workflow totals.
#[derive(Debug, Clone)]
pub struct WorkflowSummary {
    pub trace_path: String,
    /// Date the report was generated (injectable for reproducible output).
    pub run_date: NaiveDate,
    pub model: PowerModel,
    pub node: NodeSpec,
    pub mem_coeff_w_per_gib: f64,
    pub ci: CiSeries,
    pub totals: EmissionTotals,
    pub task_count: usize,
    pub skipped_count: usize,
    pub wall_span_ms: u64,
}

/// Earliest start to latest completion over the estimated tasks.
pub fn wall_span_ms(tasks: &[TraceTask]) -> u64 {
    let Some(first) = tasks.iter().map(|t| t.start).min() else {
        return 0;
    };
    let last = tasks.iter().map(|t| t.complete).max().expect("non-empty");
    (last - first).num_milliseconds().max(0) as u64
}

/// Up to three decimals with trailing zeros trimmed: 30.51 kWh prints as
/// "30.51", 15.504 g as "15.504", zero as "0".
fn trim3(value: f64) -> String {
    let fixed = format!("{value:.3}");
    let trimmed = fixed.trim_end_matches('0').trim_end_matches('.');
    if trimmed.is_empty() || trimmed == "-" {
        "0".to_string()
    } else {
        trimmed.to_string()
    }
}

fn quantity(value: f64, precision: Precision) -> String {
    match precision {
        Precision::Rounded => trim3(value),
        Precision::Full => format!("{value}"),
    }
}

fn fixed(value: f64, decimals: usize, precision: Precision) -> String {
    match precision {
        Precision::Rounded => format!("{value:.decimals$}"),
        Precision::Full => format!("{value}"),
    }
}

fn describe_ci(ci: &CiSeries) -> String {
    if let Some(value) = ci.constant_value() {
        return format!("constant {} gCO2e/kWh", trim3(value));
    }
    let intervals = ci.intervals();
    let first = intervals[0]
        .0
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    if intervals.len() == 1 {
        return format!("time series, 1 interval from {first}");
    }
    let gaps: Vec<u64> = intervals
        .windows(2)
        .map(|pair| (pair[1].0 - pair[0].0).num_milliseconds() as u64)
        .collect();
    let (min_gap, max_gap) = (
        *gaps.iter().min().expect("two or more intervals"),
        *gaps.iter().max().expect("two or more intervals"),
    );
    let step = if min_gap == max_gap {
        format!("step {}", format_duration(min_gap))
    } else {
        format!(
            "steps {} to {}",
            format_duration(min_gap),
            format_duration(max_gap)
        )
    };
    format!(
        "time series, {} intervals from {first}, {step}",
        intervals.len()
    )
}

fn render_summary(summary: &WorkflowSummary, precision: Precision) -> String {
    let totals = &summary.totals;
    let mut out = String::new();
    out.push_str("workflow footprint summary\n");
    out.push_str("==========================\n");
    out.push_str(&format!("run date: {}\n", summary.run_date));
    out.push_str(&format!("trace: {}\n", summary.trace_path));
    out.push_str(&format!(
        "tasks: {} estimated, {} skipped\n",
        summary.task_count, summary.skipped_count
    ));
    out.push_str(&format!(
        "wall span: {}\n\n",
        format_duration(summary.wall_span_ms)
    ));

    let coefficients = summary
        .model
        .coefficients
        .iter()
        .map(|c| format!("{c}"))
        .collect::<Vec<_>>()
        .join(", ");
    out.push_str(&format!(
        "power model: {}, coefficients [{}]\n",
        summary.model.variant, coefficients
    ));
    let meta = &summary.model.metadata;
    let provenance: Vec<String> = [
        meta.node.as_ref().map(|n| format!("node {n}")),
        meta.governor.as_ref().map(|g| format!("governor {g}")),
        meta.date.map(|d| format!("date {d}")),
    ]
    .into_iter()
    .flatten()
    .collect();
    if !provenance.is_empty() {
        out.push_str(&format!("model provenance: {}\n", provenance.join(", ")));
    }
    out.push_str(&format!(
        "node: {} cores, PUE {}\n",
        summary.node.total_cores, summary.node.pue
    ));
    out.push_str(&format!(
        "memory coefficient: {} W/GiB\n\n",
        summary.mem_coeff_w_per_gib
    ));

    out.push_str(&format!("carbon intensity: {}\n", describe_ci(&summary.ci)));
    out.push_str(&format!("ci signal: {}\n\n", summary.ci.signal.as_str()));

    let (cpu_pct, mem_pct) = if totals.total_kwh > 0.0 {
        (
            totals.cpu_kwh / totals.total_kwh * 100.0,
            totals.mem_kwh / totals.total_kwh * 100.0,
        )
    } else {
        (0.0, 0.0)
    };
    out.push_str(&format!(
        "energy: {} kWh\n",
        quantity(totals.total_kwh, precision)
    ));
    out.push_str(&format!(
        "  cpu: {} kWh ({cpu_pct:.1}%)\n",
        quantity(totals.cpu_kwh, precision)
    ));
    out.push_str(&format!(
        "  memory: {} kWh ({mem_pct:.1}%)\n",
        quantity(totals.mem_kwh, precision)
    ));
    out.push_str(&format!(
        "emissions: {} gCO2e\n",
        quantity(totals.co2e_g, precision)
    ));
    if totals.total_kwh > 0.0 {
        out.push_str(&format!(
            "average intensity: {} gCO2e/kWh\n",
            quantity(totals.co2e_g / totals.total_kwh, precision)
        ));
    } else {
        out.push_str("average intensity: n/a\n");
    }
    out
}

const TASK_COLUMNS: [&str; 8] = [
    "name", "id", "co2e", "energy", "avg_ci", "realtime", "cores", "usage",
];

fn task_rows<'a>(
    footprints: &'a [TaskFootprint],
    tasks: &'a [TraceTask],
) -> Result<Vec<(&'a TaskFootprint, &'a TraceTask)>, ReportError> {
    if footprints.len() != tasks.len() {
        return Err(ReportError::RowMismatch {
            footprints: footprints.len(),
            tasks: tasks.len(),
        });
    }
    Ok(footprints.iter().zip(tasks).collect())
}

fn render_rows(
    rows: &[(&TaskFootprint, &TraceTask)],
    precision: Precision,
) -> Result<String, ReportError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(TASK_COLUMNS)?;
    for (fp, task) in rows {
        writer.write_record([
            task.name.as_str(),
            &task.task_id.to_string(),
            &fixed(fp.co2e_g, 3, precision),
            &fixed(fp.energy.total_kwh(), 3, precision),
            &fixed(fp.avg_ci, 1, precision),
            &task.realtime_ms.to_string(),
            &task.cpus.to_string(),
            &fixed(task.cpu_pct, 1, precision),
        ])?;
    }
    let bytes = writer.into_inner().expect("flushing an in-memory buffer");
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

fn render_task_trace(
    footprints: &[TaskFootprint],
    tasks: &[TraceTask],
    precision: Precision,
) -> Result<String, ReportError> {
    render_rows(&task_rows(footprints, tasks)?, precision)
}

fn render_top10(
    footprints: &[TaskFootprint],
    tasks: &[TraceTask],
    precision: Precision,
) -> Result<String, ReportError> {
    let rows = task_rows(footprints, tasks)?;

    let mut by_co2e = rows.clone();
    by_co2e.sort_by(|(a, ta), (b, tb)| {
        b.co2e_g
            .total_cmp(&a.co2e_g)
            .then(b.energy.total_kwh().total_cmp(&a.energy.total_kwh()))
            .then(ta.task_id.cmp(&tb.task_id))
    });
    by_co2e.truncate(10);

    let mut by_realtime = rows;
    by_realtime.sort_by(|(_, ta), (_, tb)| {
        tb.realtime_ms
            .cmp(&ta.realtime_ms)
            .then(ta.task_id.cmp(&tb.task_id))
    });
    by_realtime.truncate(10);

    let mut out = String::from("# top 10 by co2e\n");
    out.push_str(&render_rows(&by_co2e, precision)?);
    out.push_str("\n# top 10 by realtime\n");
    out.push_str(&render_rows(&by_realtime, precision)?);
    Ok(out)
}

fn write_file(out_dir: &Path, file_name: String, content: String) -> Result<PathBuf, ReportError> {
    let wrap = |source: io::Error, path: PathBuf| ReportError::Write { path, source };
    fs::create_dir_all(out_dir).map_err(|e| wrap(e, out_dir.to_path_buf()))?;
    let path = out_dir.join(file_name);
    fs::write(&path, content).map_err(|e| wrap(e, path.clone()))?;
    Ok(path)
}

/// Write `summary_<trace-stem>.txt` and return its path.
pub fn write_summary(
    summary: &WorkflowSummary,
    out_dir: &Path,
    trace_stem: &str,
    precision: Precision,
) -> Result<PathBuf, ReportError> {
    write_file(
        out_dir,
        format!("summary_{trace_stem}.txt"),
        render_summary(summary, precision),
    )
}

/// Write `trace_<trace-stem>.csv` — one row per estimated task, in input
/// order, with the footprint columns — and return its path.
pub fn write_task_trace(
    footprints: &[TaskFootprint],
    tasks: &[TraceTask],
    out_dir: &Path,
    trace_stem: &str,
    precision: Precision,
) -> Result<PathBuf, ReportError> {
    write_file(
        out_dir,
        format!("trace_{trace_stem}.csv"),
        render_task_trace(footprints, tasks, precision)?,
    )
}

/// Write `top_<trace-stem>.csv` — the ten highest-emission tasks and the ten
/// longest-running tasks — and return its path.
pub fn write_top10(
    footprints: &[TaskFootprint],
    tasks: &[TraceTask],
    out_dir: &Path,
    trace_stem: &str,
    precision: Precision,
) -> Result<PathBuf, ReportError> {
    write_file(
        out_dir,
        format!("top_{trace_stem}.csv"),
        render_top10(footprints, tasks, precision)?,
    )
}
