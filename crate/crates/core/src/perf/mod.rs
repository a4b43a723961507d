//! Main-memory traffic and cycle estimates for a hardware plan, obtained
//! by replaying the program in the interpreter and charging every access
//! against the plan's memory placement.

mod cycles;
mod traffic;

pub use cycles::{compare_variants, estimate_cycles, pipeline_cycles, Comparison, StageProfile, VariantRow};
pub use traffic::{count_traffic, count_traffic_with, tiling_variants};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::hw::TemplateKind;
use crate::ir::Name;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MachineParams {
    pub dram_burst_bytes: u64,
    pub dram_words_per_cycle: u64,
    pub compute_ops_per_cycle: BTreeMap<TemplateKind, u64>,
    /// Cycles charged once per stage and execution of a controller.
    pub fill_drain_overhead: u64,
}

impl Default for MachineParams {
    fn default() -> Self {
        let compute_ops_per_cycle = [
            (TemplateKind::Vector, 4),
            (TemplateKind::ReductionTree, 4),
            (TemplateKind::ParallelFifo, 1),
            (TemplateKind::Cam, 1),
        ]
        .into_iter()
        .collect();
        MachineParams {
            dram_burst_bytes: 384,
            dram_words_per_cycle: 16,
            compute_ops_per_cycle,
            fill_drain_overhead: 10,
        }
    }
}

impl MachineParams {
    pub fn ops_per_cycle(&self, k: TemplateKind) -> u64 {
        self.compute_ops_per_cycle.get(&k).copied().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<(), PerfError> {
        let bad = self.dram_burst_bytes == 0
            || self.dram_words_per_cycle == 0
            || self.compute_ops_per_cycle.values().any(|&v| v == 0);
        if bad {
            return Err(PerfError::InvalidParams);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ArrayTraffic {
    pub main_memory_reads: u64,
    pub main_memory_writes: u64,
    /// Words of the array held on chip.
    pub on_chip_words: u64,
    /// On-chip storage including every double-buffer version and caches.
    pub buffer_words: u64,
    pub bursts: u64,
    #[serde(skip_serializing_if = "is_zero", default)]
    pub cache_hits: u64,
    #[serde(skip_serializing_if = "is_zero", default)]
    pub cache_misses: u64,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StageCycles {
    pub pipeline: String,
    pub stage: usize,
    pub cycles: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Cycles {
    pub sequential: u64,
    pub metapipelined: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrafficReport {
    pub per_array: BTreeMap<Name, ArrayTraffic>,
    /// Metapipelined cycles of the whole program.
    pub total_cycles: u64,
    pub per_stage_cycles: Vec<StageCycles>,
    pub cycles: Cycles,
    #[serde(skip)]
    pub profiles: Vec<StageProfile>,
}

impl TrafficReport {
    pub fn reads(&self, name: &str) -> u64 {
        self.per_array.get(name).map_or(0, |a| a.main_memory_reads)
    }

    pub fn total_reads(&self) -> u64 {
        self.per_array.values().map(|a| a.main_memory_reads).sum()
    }

    pub fn total_writes(&self) -> u64 {
        self.per_array.values().map(|a| a.main_memory_writes).sum()
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum PerfError {
    #[error("size symbol `{0}` is not bound")]
    UnboundSymbol(Name),
    #[error("machine parameters must be positive")]
    InvalidParams,
    #[error("replay failed: {0}")]
    Eval(#[from] crate::interp::EvalError),
}
