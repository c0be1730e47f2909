//! Conversion of parsed tasks plus a power model into CPU and memory energy
//! (kWh), per task and summed over the workflow.

use thiserror::Error;

use crate::power::{ModelVariant, PowerModel, PowerModelError};
use crate::trace::TraceTask;

/// Memory draw per allocated GiB when the readings provide no measured
/// coefficient; the constant used by existing estimation methodologies.
pub const DEFAULT_MEM_COEFF_W_PER_GIB: f64 = 0.3725;

const KWH_PER_WATT_MS: f64 = 1.0 / 3.6e9;
const BYTES_PER_GIB: f64 = (1u64 << 30) as f64;

/// Errors raised by energy estimation.
#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("node spec invalid: {0}")]
    InvalidNode(String),
    #[error("memory coefficient must be >= 0 W/GiB, got {0}")]
    NegativeMemCoeff(f64),
    #[error(transparent)]
    Model(#[from] PowerModelError),
}

/// The node the workflow ran on, as far as estimation needs to know it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeSpec {
    /// Core capacity of the node; converts task CPU usage into node load.
    pub total_cores: u32,
    /// Installed memory, used only to derive a W-per-GiB coefficient from
    /// readings that measured memory watts.
    pub installed_memory_gib: Option<f64>,
    /// Facility overhead multiplier; 1.0 = no overhead.
    pub pue: f64,
}

impl NodeSpec {
    pub fn new(total_cores: u32) -> Self {
        NodeSpec { total_cores, installed_memory_gib: None, pue: 1.0 }
    }

    fn validate(&self) -> Result<(), EnergyError> {
        if self.total_cores == 0 {
            return Err(EnergyError::InvalidNode("total_cores must be >= 1".into()));
        }
        if self.pue.is_nan() || self.pue < 1.0 {
            return Err(EnergyError::InvalidNode(format!(
                "pue must be >= 1.0, got {}",
                self.pue
            )));
        }
        if let Some(gib) = self.installed_memory_gib {
            if gib.is_nan() || gib <= 0.0 {
                return Err(EnergyError::InvalidNode(format!(
                    "installed memory must be positive, got {gib} GiB"
                )));
            }
        }
        Ok(())
    }
}

/// Energy attributed to one task, split into CPU and memory shares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskEnergy {
    pub task_id: u64,
    pub cpu_kwh: f64,
    pub mem_kwh: f64,
}

impl TaskEnergy {
    pub fn total_kwh(&self) -> f64 {
        self.cpu_kwh + self.mem_kwh
    }
}

/// Per-task energies plus workflow totals, summed in input order so results
/// are reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowEnergy {
    pub tasks: Vec<TaskEnergy>,
    pub cpu_kwh: f64,
    pub mem_kwh: f64,
    pub total_kwh: f64,
}

impl WorkflowEnergy {
    /// CPU and memory percentage shares of the total; (0, 0) for an empty
    /// or zero-energy workflow.
    pub fn split_pct(&self) -> (f64, f64) {
        if self.total_kwh > 0.0 {
            (
                self.cpu_kwh / self.total_kwh * 100.0,
                self.mem_kwh / self.total_kwh * 100.0,
            )
        } else {
            (0.0, 0.0)
        }
    }
}

/// A task's share of node load: CPU usage over node capacity, clamped to 1.
pub fn task_load(task: &TraceTask, node: &NodeSpec) -> f64 {
    (task.cpu_pct / (100.0 * node.total_cores as f64)).min(1.0)
}

/// Per-core utilisation: measured CPU percent over the task's requested
/// cores, clamped into [0,1].
fn core_utilisation(task: &TraceTask) -> f64 {
    (task.cpu_pct / (100.0 * task.cpus as f64)).clamp(0.0, 1.0)
}

/// Estimate one task's energy.
///
/// Node-level models split watts into an idle part apportioned by the task's
/// requested-core share and a dynamic part driven by measured load; the
/// cubic's dynamic part is evaluated as if the task ran alone. Per-core
/// models scale their per-core watts by requested cores and per-core
/// utilisation. A task requesting more cores than the node has is clamped to
/// the full node (callers surface the inconsistency to the user).
pub fn estimate_task_energy(
    task: &TraceTask,
    model: &PowerModel,
    node: &NodeSpec,
    mem_coeff_w_per_gib: f64,
) -> Result<TaskEnergy, EnergyError> {
    node.validate()?;
    model.validate()?;
    if mem_coeff_w_per_gib.is_nan() || mem_coeff_w_per_gib < 0.0 {
        return Err(EnergyError::NegativeMemCoeff(mem_coeff_w_per_gib));
    }

    let core_share = (task.cpus.min(node.total_cores) as f64) / node.total_cores as f64;
    let cpu_watts = match model.variant {
        ModelVariant::FittedLinear | ModelVariant::NaiveLinear => {
            model.coefficients[0] * core_share + model.coefficients[1] * task_load(task, node)
        }
        ModelVariant::FittedCubic => {
            let dynamic =
                model.predict_power(task_load(task, node))? - model.predict_power(0.0)?;
            model.coefficients[0] * core_share + dynamic
        }
        ModelVariant::PerCoreLinear => {
            let (min_w, max_w) = (model.coefficients[0], model.coefficients[1]);
            task.cpus as f64 * (min_w + core_utilisation(task) * (max_w - min_w))
        }
        ModelVariant::TdpPerCore => {
            let (tdp, cores) = (model.coefficients[0], model.coefficients[1]);
            task.cpus as f64 * (tdp / cores) * core_utilisation(task)
        }
    }
    .max(0.0);
    let mem_watts = (task.memory_bytes as f64 / BYTES_PER_GIB) * mem_coeff_w_per_gib;

    let ms = task.realtime_ms as f64;
    Ok(TaskEnergy {
        task_id: task.task_id,
        cpu_kwh: cpu_watts * ms * KWH_PER_WATT_MS * node.pue,
        mem_kwh: mem_watts * ms * KWH_PER_WATT_MS * node.pue,
    })
}

/// Estimate every task and reduce totals in input order.
pub fn estimate_workflow_energy(
    tasks: &[TraceTask],
    model: &PowerModel,
    node: &NodeSpec,
    mem_coeff_w_per_gib: f64,
) -> Result<WorkflowEnergy, EnergyError> {
    let mut out = WorkflowEnergy {
        tasks: Vec::with_capacity(tasks.len()),
        cpu_kwh: 0.0,
        mem_kwh: 0.0,
        total_kwh: 0.0,
    };
    for task in tasks {
        let energy = estimate_task_energy(task, model, node, mem_coeff_w_per_gib)?;
        out.cpu_kwh += energy.cpu_kwh;
        out.mem_kwh += energy.mem_kwh;
        out.total_kwh += energy.total_kwh();
        out.tasks.push(energy);
    }
    Ok(out)
}
