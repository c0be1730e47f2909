//! Parsing of workflow execution traces (Nextflow-style TSV) into validated
//! task records with normalized units (milliseconds, bytes, UTC instants).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset, LocalResult, NaiveDateTime, TimeZone, Utc};
use chrono_tz::Tz;
use thiserror::Error;

/// Errors raised while parsing a trace document or one of its cells.
#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace document is empty")]
    EmptyDocument,
    #[error("required trace column '{0}' not found in header")]
    MissingColumn(String),
    #[error("trace line {line}, column '{column}': cannot parse '{token}': {reason}")]
    Cell {
        line: u64,
        column: String,
        token: String,
        reason: String,
    },
    #[error("trace line {line}: {reason}")]
    Row { line: u64, reason: String },
    #[error("malformed TSV at line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("cannot parse duration '{token}': {reason}")]
    Duration { token: String, reason: String },
    #[error("cannot parse memory size '{token}': {reason}")]
    Memory { token: String, reason: String },
    #[error("cannot parse timestamp '{token}': {reason}")]
    Timestamp { token: String, reason: String },
    #[error("unknown timezone '{0}' (expected an IANA name like Europe/Berlin, a fixed offset like +02:00, or UTC)")]
    UnknownZone(String),
}

/// One parsed row of a workflow trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTask {
    pub task_id: u64,
    /// Process name, e.g. "DADA2_ERR".
    pub name: String,
    /// Engine-reported status ("COMPLETED", "FAILED", ...).
    pub status: String,
    /// Task wall time in milliseconds.
    pub realtime_ms: u64,
    /// Aggregate CPU utilisation percent; exceeds 100 on multi-core tasks.
    pub cpu_pct: f64,
    /// Cores requested for the task.
    pub cpus: u32,
    /// Allocated memory in bytes.
    pub memory_bytes: u64,
    pub start: DateTime<Utc>,
    pub complete: DateTime<Utc>,
}

impl TraceTask {
    /// Execution window length in milliseconds (`complete - start`).
    pub fn window_ms(&self) -> u64 {
        (self.complete - self.start).num_milliseconds().max(0) as u64
    }
}

/// Which trace rows are admitted for estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StatusFilter {
    /// Only rows with status COMPLETED; cached and failed rows are skipped.
    #[default]
    CompletedOnly,
    /// Admit every status (failed tasks still consumed energy).
    All,
}

/// Timezone applied to trace timestamps that carry no zone of their own.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TraceZone {
    #[default]
    Utc,
    Fixed(FixedOffset),
    Named(Tz),
}

impl FromStr for TraceZone {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("utc") || s.eq_ignore_ascii_case("z") {
            return Ok(TraceZone::Utc);
        }
        if let Ok(tz) = s.parse::<Tz>() {
            return Ok(TraceZone::Named(tz));
        }
        if let Ok(off) = s.parse::<FixedOffset>() {
            return Ok(TraceZone::Fixed(off));
        }
        Err(TraceError::UnknownZone(s.to_string()))
    }
}

impl TraceZone {
    fn resolve(&self, naive: NaiveDateTime, token: &str) -> Result<DateTime<Utc>, TraceError> {
        let local: LocalResult<DateTime<Utc>> = match self {
            TraceZone::Utc => return Ok(Utc.from_utc_datetime(&naive)),
            TraceZone::Fixed(off) => off
                .from_local_datetime(&naive)
                .map(|dt| dt.with_timezone(&Utc)),
            TraceZone::Named(tz) => tz
                .from_local_datetime(&naive)
                .map(|dt| dt.with_timezone(&Utc)),
        };
        match local {
            LocalResult::Single(dt) => Ok(dt),
            // DST fold: take the earlier instant.
            LocalResult::Ambiguous(a, _) => Ok(a),
            LocalResult::None => Err(TraceError::Timestamp {
                token: token.to_string(),
                reason: "local time does not exist in the configured zone (DST gap)".into(),
            }),
        }
    }
}

/// Column name overrides; any field left `None` uses the standard trace
/// header name. Trace column sets vary with the engine's trace configuration,
/// so every logical column stays remappable.
#[derive(Debug, Clone, Default)]
pub struct ColumnMap {
    pub task_id: Option<String>,
    pub name: Option<String>,
    pub status: Option<String>,
    pub realtime: Option<String>,
    pub cpu_pct: Option<String>,
    pub cpus: Option<String>,
    pub memory: Option<String>,
    pub start: Option<String>,
    pub complete: Option<String>,
}

/// Options for [`parse_trace`].
#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    pub columns: ColumnMap,
    pub status_filter: StatusFilter,
    pub zone: TraceZone,
}

/// Why a data row was not turned into a task. Skips are recorded, never
/// silent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkipReason {
    /// Row status excluded by the active [`StatusFilter`].
    StatusFiltered(String),
    /// Row has no realtime/start/complete values, i.e. the task never
    /// executed in this run (e.g. ABORTED before start).
    NotExecuted,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::StatusFiltered(s) => write!(f, "status {s} filtered out"),
            SkipReason::NotExecuted => write!(f, "task never executed"),
        }
    }
}

/// Result of parsing a trace document.
#[derive(Debug, Clone, Default)]
pub struct ParsedTrace {
    /// Tasks in input row order.
    pub tasks: Vec<TraceTask>,
    /// Rows that were admitted by neither the filter nor the executed-task
    /// rule, with their file line numbers.
    pub skipped: Vec<(u64, SkipReason)>,
    /// Distinct values of the optional `hostname` column, sorted. Empty when
    /// the column is absent.
    pub hostnames: Vec<String>,
}

const MS_PER_UNIT: [(&str, u64); 5] = [
    ("ms", 1),
    ("s", 1_000),
    ("m", 60_000),
    ("h", 3_600_000),
    ("d", 86_400_000),
];

/// Parse a duration into exact milliseconds.
///
/// Accepts a bare integer (already milliseconds) or blank-separated
/// value-unit pairs with units ms/s/m/h/d, e.g. "2m 33s" or "1.5h".
pub fn parse_duration(text: &str) -> Result<u64, TraceError> {
    let err = |reason: &str| TraceError::Duration {
        token: text.to_string(),
        reason: reason.to_string(),
    };
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(err("empty value"));
    }
    if trimmed.starts_with('-') {
        return Err(err("negative value"));
    }
    if trimmed.bytes().all(|b| b.is_ascii_digit()) {
        return trimmed.parse::<u64>().map_err(|e| err(&e.to_string()));
    }
    let mut total: u64 = 0;
    for token in trimmed.split_whitespace() {
        let split = token
            .find(|c: char| !c.is_ascii_digit() && c != '.')
            .ok_or_else(|| err(&format!("missing unit in '{token}'")))?;
        let (value_str, unit) = token.split_at(split);
        if value_str.is_empty() {
            return Err(err(&format!("missing value in '{token}'")));
        }
        let factor = MS_PER_UNIT
            .iter()
            .find(|(u, _)| *u == unit)
            .map(|(_, f)| *f)
            .ok_or_else(|| err(&format!("unknown unit '{unit}'")))?;
        let part = if value_str.bytes().all(|b| b.is_ascii_digit()) {
            let v: u64 = value_str.parse().map_err(|e: std::num::ParseIntError| err(&e.to_string()))?;
            v.checked_mul(factor).ok_or_else(|| err("duration overflows"))?
        } else {
            let v: f64 = value_str.parse().map_err(|e: std::num::ParseFloatError| err(&e.to_string()))?;
            let ms = (v * factor as f64).round();
            if !ms.is_finite() || ms < 0.0 || ms > u64::MAX as f64 {
                return Err(err("duration overflows"));
            }
            ms as u64
        };
        total = total.checked_add(part).ok_or_else(|| err("duration overflows"))?;
    }
    Ok(total)
}

/// Canonical duration formatter; [`parse_duration`] round-trips its output
/// exactly.
pub fn format_duration(ms: u64) -> String {
    if ms == 0 {
        return "0ms".to_string();
    }
    let mut rest = ms;
    let mut parts = Vec::new();
    for (unit, factor) in [("d", 86_400_000u64), ("h", 3_600_000), ("m", 60_000), ("s", 1_000), ("ms", 1)] {
        let count = rest / factor;
        rest %= factor;
        if count > 0 {
            parts.push(format!("{count}{unit}"));
        }
    }
    parts.join(" ")
}

/// Parse a memory size into bytes. Accepts a bare integer (bytes) or a value
/// with a unit in B/KB/MB/GB/TB; multipliers are binary (1 GB = 2^30 bytes),
/// matching workflow-engine memory semantics.
pub fn parse_memory(text: &str) -> Result<u64, TraceError> {
    let err = |reason: &str| TraceError::Memory {
        token: text.to_string(),
        reason: reason.to_string(),
    };
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(err("empty value"));
    }
    if trimmed.starts_with('-') {
        return Err(err("negative value"));
    }
    if trimmed.bytes().all(|b| b.is_ascii_digit()) {
        return trimmed.parse::<u64>().map_err(|e| err(&e.to_string()));
    }
    let split = trimmed
        .find(|c: char| !c.is_ascii_digit() && c != '.')
        .ok_or_else(|| err("missing unit"))?;
    let (value_str, unit_str) = trimmed.split_at(split);
    let unit = unit_str.trim();
    let exp = match unit.to_ascii_uppercase().as_str() {
        "B" => 0u32,
        "KB" => 10,
        "MB" => 20,
        "GB" => 30,
        "TB" => 40,
        other => return Err(err(&format!("unknown unit '{other}'"))),
    };
    let factor = 1u64 << exp;
    if value_str.is_empty() {
        return Err(err("missing value"));
    }
    if value_str.bytes().all(|b| b.is_ascii_digit()) {
        let v: u64 = value_str.parse().map_err(|e: std::num::ParseIntError| err(&e.to_string()))?;
        v.checked_mul(factor).ok_or_else(|| err("size overflows"))
    } else {
        let v: f64 = value_str.parse().map_err(|e: std::num::ParseFloatError| err(&e.to_string()))?;
        let bytes = (v * factor as f64).round();
        if !bytes.is_finite() || bytes < 0.0 || bytes > u64::MAX as f64 {
            return Err(err("size overflows"));
        }
        Ok(bytes as u64)
    }
}

/// Parse a timestamp: epoch milliseconds, or "yyyy-MM-dd HH:mm:ss[.SSS]"
/// interpreted in `zone` (default UTC).
pub fn parse_timestamp(text: &str, zone: TraceZone) -> Result<DateTime<Utc>, TraceError> {
    let err = |reason: &str| TraceError::Timestamp {
        token: text.to_string(),
        reason: reason.to_string(),
    };
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(err("empty value"));
    }
    let is_epoch = trimmed
        .strip_prefix('-')
        .unwrap_or(trimmed)
        .bytes()
        .all(|b| b.is_ascii_digit());
    if is_epoch {
        let millis: i64 = trimmed.parse().map_err(|e: std::num::ParseIntError| err(&e.to_string()))?;
        return DateTime::from_timestamp_millis(millis)
            .ok_or_else(|| err("epoch milliseconds out of range"));
    }
    let naive = NaiveDateTime::parse_from_str(trimmed, "%Y-%m-%d %H:%M:%S%.f")
        .map_err(|_| err("expected epoch milliseconds or 'yyyy-MM-dd HH:mm:ss.SSS'"))?;
    zone.resolve(naive, trimmed)
}

struct ColumnIndex {
    task_id: usize,
    name: usize,
    status: Option<usize>,
    realtime: usize,
    cpu_pct: usize,
    cpus: usize,
    memory: usize,
    rss_fallbacks: Vec<usize>,
    start: usize,
    complete: usize,
    hostname: Option<usize>,
}

impl ColumnIndex {
    fn resolve(header: &csv::StringRecord, map: &ColumnMap) -> Result<Self, TraceError> {
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let required = |override_name: &Option<String>, default: &str| {
            let name = override_name.as_deref().unwrap_or(default);
            find(name).ok_or_else(|| TraceError::MissingColumn(name.to_string()))
        };
        let optional = |override_name: &Option<String>, default: &str| match override_name {
            Some(name) => find(name),
            None => find(default),
        };
        let task_id = required(&map.task_id, "task_id")?;
        let name = required(&map.name, "name")?;
        let status = optional(&map.status, "status");
        let realtime = required(&map.realtime, "realtime")?;
        let cpu_pct = required(&map.cpu_pct, "%cpu")?;
        let cpus = required(&map.cpus, "cpus")?;
        // Allocated memory is preferred; peak RSS (then RSS) stands in when a
        // memory cell is absent.
        let mut rss_fallbacks = Vec::new();
        for fallback in ["peak_rss", "rss"] {
            if let Some(idx) = find(fallback) {
                rss_fallbacks.push(idx);
            }
        }
        let memory = match optional(&map.memory, "memory") {
            Some(idx) => idx,
            None => *rss_fallbacks.first().ok_or_else(|| {
                TraceError::MissingColumn(map.memory.clone().unwrap_or_else(|| "memory".into()))
            })?,
        };
        Ok(ColumnIndex {
            task_id,
            name,
            status,
            realtime,
            cpu_pct,
            cpus,
            memory,
            rss_fallbacks,
            start: required(&map.start, "start")?,
            complete: required(&map.complete, "complete")?,
            hostname: find("hostname"),
        })
    }
}

fn is_blank(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t == "-"
}

/// Parse a tab-separated trace document into validated tasks.
///
/// Rows excluded by the status filter, and rows that never executed (blank
/// realtime/start/complete), are recorded in [`ParsedTrace::skipped`] with
/// their line numbers; no row is dropped silently. Any malformed cell in an
/// admitted row is an error carrying the line number and offending token.
pub fn parse_trace(raw_text: &str, options: &ParseOptions) -> Result<ParsedTrace, TraceError> {
    if raw_text.trim().is_empty() {
        return Err(TraceError::EmptyDocument);
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .flexible(false)
        .from_reader(raw_text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| TraceError::Malformed { line: 1, reason: e.to_string() })?
        .clone();
    let cols = ColumnIndex::resolve(&header, &options.columns)?;

    let mut out = ParsedTrace::default();
    let mut hostnames = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| TraceError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |idx: usize| record.get(idx).unwrap_or("").trim();
        let cell_err = |idx: usize, default: &str, reason: String| TraceError::Cell {
            line,
            column: header.get(idx).unwrap_or(default).to_string(),
            token: cell(idx).to_string(),
            reason,
        };

        if let Some(idx) = cols.hostname {
            if !is_blank(cell(idx)) {
                hostnames.insert(cell(idx).to_string());
            }
        }

        let status = cols.status.map(|i| cell(i).to_string()).unwrap_or_default();
        let admitted = match options.status_filter {
            StatusFilter::All => true,
            // A trace without a status column is treated as all-completed.
            StatusFilter::CompletedOnly => cols.status.is_none() || status == "COMPLETED",
        };
        if !admitted {
            out.skipped.push((line, SkipReason::StatusFiltered(status)));
            continue;
        }
        if is_blank(cell(cols.realtime)) || is_blank(cell(cols.start)) || is_blank(cell(cols.complete)) {
            out.skipped.push((line, SkipReason::NotExecuted));
            continue;
        }

        let task_id: u64 = cell(cols.task_id)
            .parse()
            .map_err(|e: std::num::ParseIntError| cell_err(cols.task_id, "task_id", e.to_string()))?;
        let realtime_ms = parse_duration(cell(cols.realtime))
            .map_err(|e| cell_err(cols.realtime, "realtime", e.to_string()))?;
        let cpu_raw = cell(cols.cpu_pct).trim_end_matches('%');
        let cpu_pct: f64 = cpu_raw
            .parse()
            .map_err(|e: std::num::ParseFloatError| cell_err(cols.cpu_pct, "%cpu", e.to_string()))?;
        if !cpu_pct.is_finite() || cpu_pct < 0.0 {
            return Err(cell_err(cols.cpu_pct, "%cpu", "CPU percent must be finite and >= 0".into()));
        }
        let cpus: u32 = cell(cols.cpus)
            .parse()
            .map_err(|e: std::num::ParseIntError| cell_err(cols.cpus, "cpus", e.to_string()))?;
        if cpus == 0 {
            return Err(cell_err(cols.cpus, "cpus", "task must request at least one core".into()));
        }
        let memory_bytes = if is_blank(cell(cols.memory)) {
            match cols.rss_fallbacks.iter().find(|&&i| !is_blank(cell(i))) {
                Some(&i) => parse_memory(cell(i))
                    .map_err(|e| cell_err(i, "peak_rss", e.to_string()))?,
                None => 0,
            }
        } else {
            parse_memory(cell(cols.memory)).map_err(|e| cell_err(cols.memory, "memory", e.to_string()))?
        };
        let start = parse_timestamp(cell(cols.start), options.zone)
            .map_err(|e| cell_err(cols.start, "start", e.to_string()))?;
        let complete = parse_timestamp(cell(cols.complete), options.zone)
            .map_err(|e| cell_err(cols.complete, "complete", e.to_string()))?;

        if complete < start {
            return Err(TraceError::Row {
                line,
                reason: format!("complete ({complete}) precedes start ({start})"),
            });
        }
        let window_ms = (complete - start).num_milliseconds() as u64;
        if realtime_ms > window_ms + 1_000 {
            return Err(TraceError::Row {
                line,
                reason: format!(
                    "realtime {realtime_ms} ms exceeds the start..complete window ({window_ms} ms) by more than 1000 ms"
                ),
            });
        }

        out.tasks.push(TraceTask {
            task_id,
            name: cell(cols.name).to_string(),
            status,
            realtime_ms,
            cpu_pct,
            cpus,
            memory_bytes,
            start,
            complete,
        });
    }
    out.hostnames = hostnames.into_iter().collect();
    Ok(out)
}
