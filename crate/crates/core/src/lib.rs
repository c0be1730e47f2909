//! Post-hoc energy and carbon footprint estimation for scientific workflow
//! executions.
//!
//! The pipeline takes a workflow engine's task-level trace, a power model for
//! the compute node (fitted from stress-test readings or constructed from
//! fallback coefficients), and carbon-intensity data (a constant or a time
//! series), and produces per-task and whole-workflow energy (kWh) and
//! operational emissions (gCO2e).

pub mod carbon;
pub mod energy;
pub mod evaluate;
pub mod power;
pub mod report;
pub mod trace;

pub use carbon::{
    parse_ci, task_emissions, workflow_emissions, CarbonError, CiSeries, CiSignal, CoveragePolicy,
    EmissionTotals, TaskFootprint,
};
pub use energy::{
    estimate_task_energy, estimate_workflow_energy, task_load, EnergyError, NodeSpec, TaskEnergy,
    WorkflowEnergy, DEFAULT_MEM_COEFF_W_PER_GIB,
};
pub use evaluate::{compare_models, pct_error, EvaluateError, EvaluationRow, ModelComparison};
pub use power::{
    fit_model, load_model, mem_coefficient, naive_from_bounds, naive_linear, parse_readings,
    save_model, select_lowest_rmse, FitDegree, ModelMetadata, ModelVariant, PowerModel,
    PowerModelError, PowerReading, PowerReadingSet,
};
pub use report::{
    wall_span_ms, write_summary, write_task_trace, write_top10, Precision, ReportError,
    WorkflowSummary,
};
pub use trace::{
    format_duration, parse_duration, parse_memory, parse_timestamp, parse_trace, ColumnMap,
    ParseOptions, ParsedTrace, SkipReason, StatusFilter, TraceError, TraceTask, TraceZone,
};
