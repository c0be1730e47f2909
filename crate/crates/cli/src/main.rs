//! Command-line front-end: fit power models from load/watts readings,
//! estimate a workflow trace's energy and carbon footprint, and compare
//! estimated totals against metered ground truth.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chrono::{DateTime, NaiveDate, Utc};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use wattprint_core::{
    compare_models, estimate_workflow_energy, fit_model, load_model, mem_coefficient,
    naive_from_bounds, naive_linear, parse_ci, parse_readings, parse_trace, save_model,
    select_lowest_rmse, task_emissions, wall_span_ms, workflow_emissions, write_summary,
    write_task_trace, write_top10, CiSeries, ColumnMap, CoveragePolicy, EmissionTotals,
    EvaluationRow, FitDegree, ModelVariant, NodeSpec, ParseOptions, ParsedTrace, PowerModel,
    PowerReadingSet, Precision, SkipReason, StatusFilter, TaskFootprint, TraceTask, TraceZone,
    WorkflowSummary, DEFAULT_MEM_COEFF_W_PER_GIB,
};

#[derive(Parser)]
#[command(
    name = "wattprint",
    version,
    about = "Estimate the energy use and carbon footprint of workflow executions from their resource traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a power model from load/watts readings and write it as JSON
    Fit(FitArgs),
    /// Estimate a trace's footprint and write the three report files
    Estimate(EstimateArgs),
    /// Estimate a trace and compare the total against a metered value
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Readings CSV with header load_pct,cpu_watts[,mem_watts]
    #[arg(long)]
    readings: PathBuf,
    /// Polynomial degree of the fitted model
    #[arg(long, default_value_t = 1, value_parser = parse_fit_degree)]
    degree: u8,
    /// Path the model JSON is written to
    #[arg(long)]
    out: PathBuf,
    /// Core count of the measured node, stored with the model
    #[arg(long)]
    node_cores: Option<u32>,
}

/// Clap-level degree validation so `--degree 2` fails as a usage error
/// naming the supported choices.
fn parse_fit_degree(text: &str) -> Result<u8, String> {
    let degree: u8 = text
        .parse()
        .map_err(|_| format!("'{text}' is not an integer degree"))?;
    FitDegree::try_from(degree)
        .map(|_| degree)
        .map_err(|e| e.to_string())
}

/// Model family selected with `--model`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    /// Line fitted to readings by least squares
    Linear,
    /// Cubic fitted to readings by least squares
    Cubic,
    /// Line through the idle and full-load readings, or --min/--max-watts
    Naive,
    /// Per-core min/max watts scaled by core utilisation
    PerCore,
    /// Thermal design power apportioned per core
    Tdp,
    /// Whichever fitted variant scores the lowest RMSE on the readings
    Auto,
}

impl ModelKind {
    fn flag_name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Cubic => "cubic",
            ModelKind::Naive => "naive",
            ModelKind::PerCore => "per-core",
            ModelKind::Tdp => "tdp",
            ModelKind::Auto => "auto",
        }
    }

    fn matches(self, variant: ModelVariant) -> bool {
        match self {
            ModelKind::Linear => variant == ModelVariant::FittedLinear,
            ModelKind::Cubic => variant == ModelVariant::FittedCubic,
            ModelKind::Naive => variant == ModelVariant::NaiveLinear,
            ModelKind::PerCore => variant == ModelVariant::PerCoreLinear,
            ModelKind::Tdp => variant == ModelVariant::TdpPerCore,
            ModelKind::Auto => true,
        }
    }
}

/// Flags shared by `estimate` and `evaluate`: the trace, the model source,
/// the node description, and the carbon-intensity source.
#[derive(Args)]
#[command(group(
    ArgGroup::new("ci_source")
        .required(true)
        .args(["ci", "ci_constant"]),
))]
struct RunArgs {
    /// Workflow trace file (tab-separated)
    #[arg(long)]
    trace: PathBuf,
    /// Model family; defaults to the source's natural family (linear for
    /// readings)
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    /// Readings CSV to build the model from
    #[arg(long)]
    readings: Option<PathBuf>,
    /// Previously saved model JSON
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Idle whole-node watts for the naive model
    #[arg(long, requires = "max_watts")]
    min_watts: Option<f64>,
    /// Full-load whole-node watts for the naive model
    #[arg(long, requires = "min_watts")]
    max_watts: Option<f64>,
    /// Minimum watts drawn by one core
    #[arg(long, requires = "per_core_max")]
    per_core_min: Option<f64>,
    /// Maximum watts drawn by one core
    #[arg(long, requires = "per_core_min")]
    per_core_max: Option<f64>,
    /// Processor thermal design power in watts
    #[arg(long, requires = "cpu_cores")]
    tdp: Option<f64>,
    /// Core count the TDP figure covers
    #[arg(long, requires = "tdp")]
    cpu_cores: Option<u32>,
    /// Core capacity of the node the workflow ran on
    #[arg(long)]
    node_cores: Option<u32>,
    /// Installed node memory in GiB
    #[arg(long)]
    node_memory_gib: Option<f64>,
    /// Facility power-usage-effectiveness multiplier
    #[arg(long, default_value_t = 1.0)]
    pue: f64,
    /// Memory draw in watts per allocated GiB
    #[arg(long)]
    mem_coeff: Option<f64>,
    /// Carbon-intensity file: a CSV time series or a single number
    #[arg(long)]
    ci: Option<PathBuf>,
    /// Constant carbon intensity in gCO2e/kWh
    #[arg(long)]
    ci_constant: Option<f64>,
    /// Price instants before CI coverage at the first interval's value
    /// instead of failing
    #[arg(long)]
    ci_clamp: bool,
    /// Estimate tasks of every status, not only COMPLETED
    #[arg(long)]
    all_statuses: bool,
    /// Zone of zoneless trace timestamps: UTC, an IANA name, or +-HH:MM
    #[arg(long, default_value = "UTC")]
    timezone: String,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Directory the report files are written into
    #[arg(long, env = "WATTPRINT_OUT_DIR")]
    out_dir: PathBuf,
    /// Print exact values instead of table-rounded ones
    #[arg(long)]
    full_precision: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Metered ground-truth energy in kWh
    #[arg(long)]
    truth_kwh: f64,
    /// Row label; defaults to the trace file stem
    #[arg(long)]
    label: Option<String>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let readings = read_readings(&args.readings)?;
    let degree = FitDegree::try_from(args.degree).expect("degree validated by the parser");
    let mut model = fit_model(&readings, degree)?;
    if let Some(cores) = args.node_cores {
        model = model.with_node_cores(cores);
    }
    fs::write(&args.out, save_model(&model)?)
        .with_context(|| format!("cannot write model to {}", args.out.display()))?;
    println!("{}", compare_models(&readings)?);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let run = pipeline(&args.run)?;
    let precision = if args.full_precision {
        Precision::Full
    } else {
        Precision::Rounded
    };
    let summary = WorkflowSummary {
        trace_path: args.run.trace.display().to_string(),
        run_date: run_date()?,
        model: run.model,
        node: run.node,
        mem_coeff_w_per_gib: run.mem_coeff,
        ci: run.ci,
        totals: run.totals,
        task_count: run.tasks.len(),
        skipped_count: run.skipped_count,
        wall_span_ms: wall_span_ms(&run.tasks),
    };
    let stem = trace_stem(&args.run.trace);
    for path in [
        write_summary(&summary, &args.out_dir, &stem, precision)?,
        write_task_trace(&run.footprints, &run.tasks, &args.out_dir, &stem, precision)?,
        write_top10(&run.footprints, &run.tasks, &args.out_dir, &stem, precision)?,
    ] {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let run = pipeline(&args.run)?;
    let label = args
        .label
        .unwrap_or_else(|| trace_stem(&args.run.trace));
    let row = EvaluationRow::new(label, run.totals.total_kwh, args.truth_kwh)?;
    println!("{}", EvaluationRow::CSV_HEADER);
    println!("{}", row.to_csv_row());
    Ok(())
}

/// Everything the subcommands need after the estimation passes have run.
struct PipelineOutput {
    tasks: Vec<TraceTask>,
    skipped_count: usize,
    footprints: Vec<TaskFootprint>,
    totals: EmissionTotals,
    model: PowerModel,
    node: NodeSpec,
    mem_coeff: f64,
    ci: CiSeries,
}

/// Parse the trace, resolve the model/node/CI configuration, and run the
/// energy and emission passes. Shared by `estimate` and `evaluate`.
fn pipeline(args: &RunArgs) -> Result<PipelineOutput> {
    let parsed = read_trace(args)?;
    report_skips(&parsed);
    if parsed.hostnames.len() > 1 {
        eprintln!(
            "warning: trace spans {} hosts ({}); all tasks are estimated with the one configured model",
            parsed.hostnames.len(),
            parsed.hostnames.join(", ")
        );
    }

    let (model, readings) = resolve_model(args)?;
    let node = resolve_node(args, &model, &parsed.tasks)?;
    warn_estimation_caveats(&model, &node, &parsed.tasks);
    let mem_coeff = resolve_mem_coeff(args, readings.as_ref(), &node);
    let ci = resolve_ci(args)?;
    let policy = if args.ci_clamp {
        CoveragePolicy::Clamp
    } else {
        CoveragePolicy::Strict
    };

    let energy = estimate_workflow_energy(&parsed.tasks, &model, &node, mem_coeff)?;
    let footprints = parsed
        .tasks
        .iter()
        .zip(&energy.tasks)
        .map(|(task, task_energy)| {
            task_emissions(task_energy, (task.start, task.complete), &ci, policy)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let totals = workflow_emissions(&footprints);

    Ok(PipelineOutput {
        tasks: parsed.tasks,
        skipped_count: parsed.skipped.len(),
        footprints,
        totals,
        model,
        node,
        mem_coeff,
        ci,
    })
}

fn read_trace(args: &RunArgs) -> Result<ParsedTrace> {
    let raw = fs::read_to_string(&args.trace)
        .with_context(|| format!("cannot read trace {}", args.trace.display()))?;
    let zone: TraceZone = args.timezone.parse()?;
    let options = ParseOptions {
        columns: ColumnMap::default(),
        status_filter: if args.all_statuses {
            StatusFilter::All
        } else {
            StatusFilter::CompletedOnly
        },
        zone,
    };
    Ok(parse_trace(&raw, &options)?)
}

fn report_skips(parsed: &ParsedTrace) {
    if parsed.skipped.is_empty() {
        return;
    }
    let filtered = parsed
        .skipped
        .iter()
        .filter(|(_, reason)| matches!(reason, SkipReason::StatusFiltered(_)))
        .count();
    let never_ran = parsed.skipped.len() - filtered;
    eprintln!(
        "note: skipped {} trace rows ({filtered} filtered by status, {never_ran} never executed)",
        parsed.skipped.len()
    );
}

fn read_readings(path: &Path) -> Result<PowerReadingSet> {
    let raw = fs::read_to_string(path)
        .with_context(|| format!("cannot read readings {}", path.display()))?;
    Ok(parse_readings(&raw)?)
}

/// Build the power model from exactly one of the five sources. Returns the
/// readings too when they were the source, so the memory coefficient can be
/// derived from them.
fn resolve_model(args: &RunArgs) -> Result<(PowerModel, Option<PowerReadingSet>)> {
    let naive_bounds = args.min_watts.zip(args.max_watts);
    let per_core = args.per_core_min.zip(args.per_core_max);
    let tdp = args.tdp.zip(args.cpu_cores);
    let source_count = [
        args.readings.is_some(),
        args.model_file.is_some(),
        naive_bounds.is_some(),
        per_core.is_some(),
        tdp.is_some(),
    ]
    .iter()
    .filter(|present| **present)
    .count();
    if source_count == 0 {
        bail!(
            "no model source: pass --readings, --model-file, --min-watts/--max-watts, \
             --per-core-min/--per-core-max, or --tdp/--cpu-cores"
        );
    }
    if source_count > 1 {
        bail!("exactly one model source may be given, found {source_count}");
    }

    if let Some(path) = &args.model_file {
        let raw = fs::read_to_string(path)
            .with_context(|| format!("cannot read model file {}", path.display()))?;
        let model = load_model(&raw)?;
        if let Some(kind) = args.model {
            if !kind.matches(model.variant) {
                bail!(
                    "model file {} holds a {} model but --model {} was requested",
                    path.display(),
                    model.variant,
                    kind.flag_name()
                );
            }
        }
        return Ok((model, None));
    }

    let readings = args.readings.as_deref().map(read_readings).transpose()?;

    // When --model is absent, infer the family the given source implies.
    let kind = args.model.unwrap_or(if naive_bounds.is_some() {
        ModelKind::Naive
    } else if per_core.is_some() {
        ModelKind::PerCore
    } else if tdp.is_some() {
        ModelKind::Tdp
    } else {
        ModelKind::Linear
    });

    let needs_readings = |kind: ModelKind| {
        readings.as_ref().ok_or_else(|| {
            anyhow!(
                "--model {} needs --readings (or a --model-file)",
                kind.flag_name()
            )
        })
    };
    let model = match kind {
        ModelKind::Linear => fit_model(needs_readings(kind)?, FitDegree::Linear)?,
        ModelKind::Cubic => fit_model(needs_readings(kind)?, FitDegree::Cubic)?,
        ModelKind::Auto => select_lowest_rmse(needs_readings(kind)?)?,
        ModelKind::Naive => match naive_bounds {
            Some((min, max)) => naive_from_bounds(min, max)?,
            None => naive_linear(needs_readings(kind)?)?,
        },
        ModelKind::PerCore => {
            let (min, max) = per_core.ok_or_else(|| {
                anyhow!("--model per-core needs --per-core-min and --per-core-max")
            })?;
            validated(ModelVariant::PerCoreLinear, vec![min, max])?
        }
        ModelKind::Tdp => {
            let (tdp_watts, cores) = tdp
                .ok_or_else(|| anyhow!("--model tdp needs --tdp and --cpu-cores"))?;
            validated(ModelVariant::TdpPerCore, vec![tdp_watts, f64::from(cores)])?
        }
    };
    Ok((model, readings))
}

fn validated(variant: ModelVariant, coefficients: Vec<f64>) -> Result<PowerModel> {
    let model = PowerModel {
        variant,
        coefficients,
        node_cores: None,
        metadata: Default::default(),
    };
    model.validate()?;
    Ok(model)
}

/// Node core count: the flag wins, then the count stored in the model; a
/// node-level model cannot run without one, while per-core models fall back
/// to the widest task in the trace.
fn resolve_node(args: &RunArgs, model: &PowerModel, tasks: &[TraceTask]) -> Result<NodeSpec> {
    let total_cores = match (args.node_cores, model.node_cores) {
        (Some(cores), _) => cores,
        (None, Some(cores)) => cores,
        (None, None) if model.variant.is_node_level() => bail!(
            "node core count required for a {} model: pass --node-cores or use a model file \
             that stores one",
            model.variant
        ),
        (None, None) => tasks.iter().map(|t| t.cpus).max().unwrap_or(1),
    };
    Ok(NodeSpec {
        total_cores,
        installed_memory_gib: args.node_memory_gib,
        pue: args.pue,
    })
}

fn warn_estimation_caveats(model: &PowerModel, node: &NodeSpec, tasks: &[TraceTask]) {
    if model.variant == ModelVariant::FittedCubic {
        eprintln!(
            "warning: the cubic model attributes dynamic power as if each task ran alone; \
             concurrent tasks share a nonlinear curve and their estimates will not sum to \
             the node's draw"
        );
    }
    if let Some(task) = tasks.iter().find(|t| t.cpus > node.total_cores) {
        eprintln!(
            "warning: task {} requests {} cores but the node has {}; core share is clamped \
             to the whole node",
            task.task_id, task.cpus, node.total_cores
        );
    }
}

/// Memory coefficient: the flag wins, then a value derived from readings
/// that measured memory watts, then the built-in default.
fn resolve_mem_coeff(args: &RunArgs, readings: Option<&PowerReadingSet>, node: &NodeSpec) -> f64 {
    if let Some(coeff) = args.mem_coeff {
        return coeff;
    }
    if let (Some(readings), Some(gib)) = (readings, node.installed_memory_gib) {
        if let Some(coeff) = mem_coefficient(readings, gib) {
            return coeff;
        }
    }
    DEFAULT_MEM_COEFF_W_PER_GIB
}

fn resolve_ci(args: &RunArgs) -> Result<CiSeries> {
    if let Some(value) = args.ci_constant {
        return Ok(CiSeries::constant(value)?);
    }
    let path = args.ci.as_ref().expect("clap group guarantees a CI source");
    let raw = fs::read_to_string(path)
        .with_context(|| format!("cannot read carbon-intensity file {}", path.display()))?;
    Ok(parse_ci(&raw)?)
}

/// Report date: `SOURCE_DATE_EPOCH` (integer Unix seconds) pins it for
/// reproducible output, otherwise today.
fn run_date() -> Result<NaiveDate> {
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(raw) => {
            let secs: i64 = raw
                .trim()
                .parse()
                .map_err(|_| anyhow!("SOURCE_DATE_EPOCH must be integer seconds, got '{raw}'"))?;
            let instant = DateTime::from_timestamp(secs, 0)
                .ok_or_else(|| anyhow!("SOURCE_DATE_EPOCH {secs} is out of range"))?;
            Ok(instant.date_naive())
        }
        Err(_) => Ok(Utc::now().date_naive()),
    }
}

fn trace_stem(path: &Path) -> String {
    path.file_stem()
        .map(|stem| stem.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".to_owned())
}
