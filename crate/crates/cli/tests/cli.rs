//! Behavioral tests for the binary: flag validation, exit codes, warning and
//! diagnostic text, and the output-directory fallback.

use std::fs;
use std::process::{Command, Output};

const TRACE_FIXTURE: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/tests/fixtures/synthetic_trace.tsv"
);
const CI_FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/synthetic_ci.csv");
const READINGS_FIXTURE: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/tests/fixtures/readings_11pt.csv"
);

fn wattprint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wattprint"))
        .env("SOURCE_DATE_EPOCH", "1728291600")
        .env_remove("WATTPRINT_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

/// estimate with the per-core model and whatever extra flags a test needs.
fn estimate_args<'a>(out_dir: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "estimate",
        "--trace",
        TRACE_FIXTURE,
        "--per-core-min",
        "0.69",
        "--per-core-max",
        "3.75",
        "--ci",
        CI_FIXTURE,
        "--out-dir",
        out_dir,
    ];
    args.extend_from_slice(extra);
    args
}

#[test]
fn unsupported_fit_degree_is_a_usage_error() {
    let out = wattprint(&[
        "fit",
        "--readings",
        READINGS_FIXTURE,
        "--degree",
        "2",
        "--out",
        "/tmp/unused.json",
    ]);
    assert_eq!(out.status.code(), Some(2), "usage errors exit 2");
    let err = stderr_of(&out);
    assert!(
        err.contains("1, 3"),
        "diagnostic must list the supported degrees, got: {err}"
    );
}

#[test]
fn missing_ci_source_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = wattprint(&[
        "estimate",
        "--trace",
        TRACE_FIXTURE,
        "--per-core-min",
        "0.69",
        "--per-core-max",
        "3.75",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("--ci"));
}

#[test]
fn paired_flags_require_each_other() {
    let dir = tempfile::tempdir().unwrap();
    let out = wattprint(&[
        "estimate",
        "--trace",
        TRACE_FIXTURE,
        "--min-watts",
        "80",
        "--ci-constant",
        "136",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("--max-watts"));
}

#[test]
fn missing_model_source_is_diagnosed() {
    let dir = tempfile::tempdir().unwrap();
    let out = wattprint(&[
        "estimate",
        "--trace",
        TRACE_FIXTURE,
        "--ci-constant",
        "136",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("no model source"));
}

#[test]
fn two_model_sources_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let args = estimate_args(
        dir.path().to_str().unwrap(),
        &["--readings", READINGS_FIXTURE],
    );
    let out = wattprint(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("exactly one model source"));
}

#[test]
fn readings_missing_the_idle_row_fail_fit() {
    let dir = tempfile::tempdir().unwrap();
    let readings = dir.path().join("no_idle.csv");
    fs::write(&readings, "load_pct,cpu_watts\n50,200\n100,400\n").unwrap();
    let out = wattprint(&[
        "fit",
        "--readings",
        readings.to_str().unwrap(),
        "--out",
        dir.path().join("m.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("0% and 100%"));
}

#[test]
fn naive_model_accepts_watt_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let out = wattprint(&[
        "estimate",
        "--trace",
        TRACE_FIXTURE,
        "--model",
        "naive",
        "--min-watts",
        "80",
        "--max-watts",
        "135",
        "--node-cores",
        "16",
        "--ci-constant",
        "136",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let summary =
        fs::read_to_string(dir.path().join("summary_synthetic_trace.txt")).unwrap();
    assert!(summary.contains("naive-linear"));
    assert!(summary.contains("[80, 55]"), "stored as idle + rise: {summary}");
}

#[test]
fn auto_model_picks_the_best_fit_and_derives_the_memory_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    let out = wattprint(&[
        "estimate",
        "--trace",
        TRACE_FIXTURE,
        "--model",
        "auto",
        "--readings",
        READINGS_FIXTURE,
        "--node-cores",
        "16",
        "--node-memory-gib",
        "64",
        "--ci-constant",
        "136",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let summary =
        fs::read_to_string(dir.path().join("summary_synthetic_trace.txt")).unwrap();
    // The sweep is exactly quadratic, so the cubic family wins on RMSE.
    assert!(summary.contains("fitted-cubic"), "{summary}");
    // 23.84 W of measured memory draw over 64 GiB installed.
    assert!(summary.contains("memory coefficient: 0.3725 W/GiB"), "{summary}");
    // Sweep provenance travels from the readings comments into the summary.
    assert!(summary.contains("gpgnode-07"), "{summary}");
}

#[test]
fn node_level_model_without_core_count_is_diagnosed() {
    let dir = tempfile::tempdir().unwrap();
    let out = wattprint(&[
        "estimate",
        "--trace",
        TRACE_FIXTURE,
        "--model",
        "naive",
        "--min-watts",
        "80",
        "--max-watts",
        "135",
        "--ci-constant",
        "136",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("node core count required"));
}

#[test]
fn out_dir_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_wattprint"))
        .env("SOURCE_DATE_EPOCH", "1728291600")
        .env("WATTPRINT_OUT_DIR", dir.path())
        .args([
            "estimate",
            "--trace",
            TRACE_FIXTURE,
            "--per-core-min",
            "0.69",
            "--per-core-max",
            "3.75",
            "--ci",
            CI_FIXTURE,
        ])
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    assert!(dir.path().join("summary_synthetic_trace.txt").exists());
}

#[test]
fn out_dir_is_required_when_unset_everywhere() {
    let out = wattprint(&[
        "estimate",
        "--trace",
        TRACE_FIXTURE,
        "--per-core-min",
        "0.69",
        "--per-core-max",
        "3.75",
        "--ci",
        CI_FIXTURE,
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("--out-dir"));
}

#[test]
fn all_statuses_admits_failed_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let args = estimate_args(dir.path().to_str().unwrap(), &["--all-statuses"]);
    let out = wattprint(&args);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let per_task =
        fs::read_to_string(dir.path().join("trace_synthetic_trace.csv")).unwrap();
    let rows: Vec<_> = per_task.lines().skip(1).collect();
    assert_eq!(rows.len(), 21, "20 completed + 1 failed task");
    assert!(rows.iter().any(|r| r.starts_with("ALIGN_SAMPLE_D,21,")));
    // The aborted row never executed, so it stays skipped.
    assert!(stderr_of(&out).contains("1 never executed"));
}

#[test]
fn default_status_filter_reports_skips() {
    let dir = tempfile::tempdir().unwrap();
    let args = estimate_args(dir.path().to_str().unwrap(), &[]);
    let out = wattprint(&args);
    assert_eq!(out.status.code(), Some(0));
    assert!(stderr_of(&out).contains("skipped 2 trace rows"));
    let summary =
        fs::read_to_string(dir.path().join("summary_synthetic_trace.txt")).unwrap();
    assert!(summary.contains("20 estimated, 2 skipped"));
}

#[test]
fn evaluate_prints_one_csv_row() {
    let out = wattprint(&[
        "evaluate",
        "--trace",
        TRACE_FIXTURE,
        "--per-core-min",
        "0.69",
        "--per-core-max",
        "3.75",
        "--ci-constant",
        "136",
        "--truth-kwh",
        "0.04",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let stdout = stdout_of(&out);
    let lines: Vec<_> = stdout.lines().collect();
    assert_eq!(lines.len(), 2, "header and one row only: {stdout}");
    assert_eq!(lines[0], "label,estimate_kwh,truth_kwh,pct_error");
    assert!(
        lines[1].starts_with("synthetic_trace,"),
        "label defaults to the trace stem: {}",
        lines[1]
    );
    let fields: Vec<_> = lines[1].split(',').collect();
    assert_eq!(fields.len(), 4);
    assert_eq!(fields[2], "0.04");
}

#[test]
fn evaluate_accepts_a_custom_label() {
    let out = wattprint(&[
        "evaluate",
        "--trace",
        TRACE_FIXTURE,
        "--per-core-min",
        "0.69",
        "--per-core-max",
        "3.75",
        "--ci-constant",
        "136",
        "--truth-kwh",
        "0.04",
        "--label",
        "rnaseq-october",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout_of(&out).contains("rnaseq-october,"));
}

#[test]
fn model_file_variant_mismatch_is_diagnosed() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("linear.json");
    let fit = wattprint(&[
        "fit",
        "--readings",
        READINGS_FIXTURE,
        "--node-cores",
        "16",
        "--out",
        model_path.to_str().unwrap(),
    ]);
    assert_eq!(fit.status.code(), Some(0));

    let out = wattprint(&[
        "estimate",
        "--trace",
        TRACE_FIXTURE,
        "--model",
        "cubic",
        "--model-file",
        model_path.to_str().unwrap(),
        "--ci-constant",
        "136",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(
        err.contains("fitted-linear") && err.contains("cubic"),
        "mismatch diagnostic names both families: {err}"
    );
}

#[test]
fn model_file_supplies_the_node_cores() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("linear.json");
    let fit = wattprint(&[
        "fit",
        "--readings",
        READINGS_FIXTURE,
        "--node-cores",
        "16",
        "--out",
        model_path.to_str().unwrap(),
    ]);
    assert_eq!(fit.status.code(), Some(0));

    let out = wattprint(&[
        "estimate",
        "--trace",
        TRACE_FIXTURE,
        "--model-file",
        model_path.to_str().unwrap(),
        "--ci-constant",
        "136",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let summary =
        fs::read_to_string(dir.path().join("summary_synthetic_trace.txt")).unwrap();
    assert!(summary.contains("node: 16 cores"));
}

#[test]
fn multi_host_traces_warn_but_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("two_hosts.tsv");
    fs::write(
        &trace,
        "task_id\tname\tstatus\trealtime\t%cpu\tcpus\tpeak_rss\tstart\tcomplete\thostname\n\
         1\tA\tCOMPLETED\t60000\t100\t1\t1 GB\t1728115200000\t1728115260000\tnode01\n\
         2\tB\tCOMPLETED\t60000\t100\t1\t1 GB\t1728115260000\t1728115320000\tnode02\n",
    )
    .unwrap();
    let out = wattprint(&[
        "estimate",
        "--trace",
        trace.to_str().unwrap(),
        "--per-core-min",
        "0.69",
        "--per-core-max",
        "3.75",
        "--ci-constant",
        "136",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let err = stderr_of(&out);
    assert!(
        err.contains("2 hosts") && err.contains("node01") && err.contains("node02"),
        "multi-host warning names the hosts: {err}"
    );
}

#[test]
fn windows_before_ci_coverage_fail_unless_clamped() {
    let dir = tempfile::tempdir().unwrap();
    let late_ci = dir.path().join("late.csv");
    // Coverage starts at 09:00, after the fixture's earliest task (08:02).
    fs::write(
        &late_ci,
        "start,ci_g_per_kwh\n2024-10-05T09:00:00Z,480\n2024-10-05T10:00:00Z,90\n",
    )
    .unwrap();

    let strict_dir = dir.path().join("strict");
    let strict = wattprint(&[
        "estimate",
        "--trace",
        TRACE_FIXTURE,
        "--per-core-min",
        "0.69",
        "--per-core-max",
        "3.75",
        "--ci",
        late_ci.to_str().unwrap(),
        "--out-dir",
        strict_dir.to_str().unwrap(),
    ]);
    assert_eq!(strict.status.code(), Some(1));
    assert!(stderr_of(&strict).contains("coverage"));

    let clamped_dir = dir.path().join("clamped");
    let clamped = wattprint(&[
        "estimate",
        "--trace",
        TRACE_FIXTURE,
        "--per-core-min",
        "0.69",
        "--per-core-max",
        "3.75",
        "--ci",
        late_ci.to_str().unwrap(),
        "--ci-clamp",
        "--out-dir",
        clamped_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        clamped.status.code(),
        Some(0),
        "stderr: {}",
        stderr_of(&clamped)
    );
    assert!(clamped_dir.join("summary_synthetic_trace.txt").exists());
}

#[test]
fn unknown_timezone_is_diagnosed() {
    let dir = tempfile::tempdir().unwrap();
    let args = estimate_args(dir.path().to_str().unwrap(), &["--timezone", "Mars/Olympus"]);
    let out = wattprint(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("Mars/Olympus"));
}

#[test]
fn named_timezone_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let args = estimate_args(
        dir.path().to_str().unwrap(),
        &["--timezone", "Europe/London"],
    );
    let out = wattprint(&args);
    // Fixture timestamps are epoch milliseconds, so the zone changes nothing.
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
}

#[test]
fn invalid_report_epoch_is_diagnosed() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_wattprint"))
        .env("SOURCE_DATE_EPOCH", "yesterday")
        .args(estimate_args(dir.path().to_str().unwrap(), &[]))
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("SOURCE_DATE_EPOCH"));
}

#[test]
fn full_precision_changes_only_the_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let rounded_dir = dir.path().join("rounded");
    let full_dir = dir.path().join("full");
    let rounded = wattprint(&estimate_args(rounded_dir.to_str().unwrap(), &[]));
    let full = wattprint(&estimate_args(
        full_dir.to_str().unwrap(),
        &["--full-precision"],
    ));
    assert_eq!(rounded.status.code(), Some(0));
    assert_eq!(full.status.code(), Some(0));

    let rounded_csv =
        fs::read_to_string(rounded_dir.join("trace_synthetic_trace.csv")).unwrap();
    let full_csv = fs::read_to_string(full_dir.join("trace_synthetic_trace.csv")).unwrap();
    assert_eq!(
        rounded_csv.lines().count(),
        full_csv.lines().count(),
        "same rows either way"
    );
    assert_ne!(rounded_csv, full_csv, "precision must actually change values");

    // Full-precision energies round-trip as f64 back to the reported total.
    let mut total = 0.0;
    for line in full_csv.lines().skip(1) {
        let energy: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        total += energy;
    }
    assert!(total > 0.0);
}

#[test]
fn missing_trace_file_is_diagnosed_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = wattprint(&[
        "estimate",
        "--trace",
        "/nonexistent/trace.tsv",
        "--per-core-min",
        "0.69",
        "--per-core-max",
        "3.75",
        "--ci-constant",
        "136",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.starts_with("error: "), "single diagnostic line: {err}");
    assert!(err.contains("/nonexistent/trace.tsv"));
}

fn count_occurrences(haystack: &str, needle: &str) -> usize {
    haystack.matches(needle).count()
}

#[test]
fn failures_print_exactly_one_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = wattprint(&[
        "estimate",
        "--trace",
        TRACE_FIXTURE,
        "--ci-constant",
        "136",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(count_occurrences(&stderr_of(&out), "error: "), 1);
    assert!(stdout_of(&out).is_empty(), "failures leave stdout quiet");
}
