//! Lowering of a tiled program to an abstract hardware plan: memory
//! placement, template assignment and metapipeline schedules.
//!
//! IR nodes are referred to by their pre-order position in the program
//! (see [`node_ids`]), so a plan stays meaningful for any copy of the
//! program it was built from.

mod memory;
mod replay;
mod schedule;

pub use memory::allocate_memories;
pub use replay::{war_replay, WarHazard};
pub use schedule::{map_templates, schedule_metapipeline, Assignment, Schedule};

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::ir::{Expr, Name, Program};
use crate::transform::{uniquify, TileConfig};

/// Innermost parallelism factor of vector and reduction templates.
pub const DEFAULT_LANES: u32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TemplateKind {
    Buffer,
    DoubleBuffer,
    Cache,
    Vector,
    ReductionTree,
    ParallelFifo,
    Cam,
    SequentialCtrl,
    ParallelCtrl,
    MetapipelineCtrl,
    TileMemoryCtrl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum Placement {
    OnChipBuffer { words: u64 },
    OffChip,
    OffChipWithCache { cache_words: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MemoryEntry {
    pub placement: Placement,
    pub word_bits: u64,
    pub read_ports: u32,
    pub write_ports: u32,
    /// Double-buffer hops between producer and last consumer stage; 0 for
    /// a single buffer.
    pub hops: u32,
}

impl MemoryEntry {
    /// Words of one copy of the array held on chip.
    pub fn footprint(&self) -> u64 {
        match self.placement {
            Placement::OnChipBuffer { words } => words,
            _ => 0,
        }
    }

    /// Words of on-chip storage, double buffers counted twice per hop.
    pub fn on_chip_words(&self) -> u64 {
        match self.placement {
            Placement::OnChipBuffer { words } => words * if self.hops == 0 { 1 } else { 2 * self.hops as u64 },
            Placement::OffChipWithCache { cache_words } => cache_words,
            Placement::OffChip => 0,
        }
    }

    pub fn is_off_chip(&self) -> bool {
        !matches!(self.placement, Placement::OnChipBuffer { .. })
    }

    pub fn template(&self) -> TemplateKind {
        match (&self.placement, self.hops) {
            (Placement::OnChipBuffer { .. }, 0) => TemplateKind::Buffer,
            (Placement::OnChipBuffer { .. }, _) => TemplateKind::DoubleBuffer,
            (Placement::OffChipWithCache { .. }, _) => TemplateKind::Cache,
            (Placement::OffChip, _) => TemplateKind::TileMemoryCtrl,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MemoryPlan {
    pub arrays: BTreeMap<Name, MemoryEntry>,
    pub capacity: u64,
}

impl MemoryPlan {
    pub fn on_chip_words(&self) -> u64 {
        self.arrays.values().map(MemoryEntry::on_chip_words).sum()
    }

    pub fn is_off_chip(&self, name: &str) -> bool {
        self.arrays.get(name).is_some_and(MemoryEntry::is_off_chip)
    }

    pub fn check_capacity(&self) -> Result<(), HwError> {
        let words = self.on_chip_words();
        if words > self.capacity {
            let arrays = self.arrays.iter().filter(|(_, e)| e.on_chip_words() > 0).map(|(n, _)| n.clone()).collect();
            return Err(HwError::CapacityExceeded { words, capacity: self.capacity, arrays });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PlanNode {
    pub kind: TemplateKind,
    pub label: String,
    /// Pre-order id of the IR node this controller or unit implements.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lanes: Option<u32>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub children: Vec<PlanNode>,
}

impl PlanNode {
    pub fn leaf(kind: TemplateKind, label: impl Into<String>, node: Option<usize>) -> PlanNode {
        let lanes = matches!(kind, TemplateKind::Vector | TemplateKind::ReductionTree).then_some(DEFAULT_LANES);
        PlanNode { kind, label: label.into(), node, lanes, children: vec![] }
    }

    pub fn ctrl(
        kind: TemplateKind,
        label: impl Into<String>,
        node: Option<usize>,
        children: Vec<PlanNode>,
    ) -> PlanNode {
        PlanNode { kind, label: label.into(), node, lanes: None, children }
    }

    /// Every node of the tree, pre-order.
    pub fn walk(&self) -> Vec<&PlanNode> {
        let mut out = vec![self];
        for c in &self.children {
            out.extend(c.walk());
        }
        out
    }
}

/// One schedulable unit in an outer pattern's body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StageItem {
    pub label: String,
    /// Roots of the IR subtrees this item evaluates.
    pub nodes: Vec<usize>,
    /// Accumulator component written, for update items.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub update: Option<usize>,
    /// Name bound by this item, for let items.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub binds: Option<Name>,
    /// Names of sibling items this item reads.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub reads: Vec<Name>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Forward {
    pub accumulator: String,
    pub from_stage: usize,
    pub to_stage: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Metapipeline {
    pub label: String,
    /// Pre-order id of the outer pattern.
    pub node: usize,
    pub stages: Vec<Vec<StageItem>>,
    /// Stage-output buffers promoted to double buffers, with hop counts.
    pub double_buffers: BTreeMap<Name, u32>,
    /// Tile partials folded straight into the outer accumulator.
    pub dedup: Vec<Name>,
    pub forwarding: Vec<Forward>,
}

impl Metapipeline {
    pub fn stage_of(&self, node: usize) -> Option<usize> {
        self.stages.iter().position(|s| s.iter().any(|i| i.nodes.contains(&node)))
    }

    pub fn stage_of_update(&self, k: usize) -> Option<usize> {
        self.stages.iter().position(|s| s.iter().any(|i| i.update == Some(k)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HardwarePlan {
    pub root: PlanNode,
    pub memory: MemoryPlan,
    pub metapipelines: Vec<Metapipeline>,
    /// Bindings written back to main memory; buffered intermediates that
    /// are not outputs are not stored.
    pub dram_writes: BTreeSet<Name>,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum HwError {
    #[error("on-chip allocation of {words} words exceeds capacity {capacity} ({arrays:?})")]
    CapacityExceeded { words: u64, capacity: u64, arrays: Vec<Name> },
    #[error("no template for {0}")]
    UnmappableNode(String),
    #[error("cyclic dependencies in the body of {0}")]
    CyclicBody(String),
}

/// Pre-order ids of every expression node of `p`, keyed by address.
pub fn node_ids(p: &Program) -> HashMap<usize, usize> {
    let mut out = HashMap::new();
    let mut next = 0;
    for b in &p.bindings {
        let mut stack = vec![&b.value];
        while let Some(e) = stack.pop() {
            out.insert(e as *const Expr as usize, next);
            next += 1;
            stack.extend(e.children().into_iter().rev());
        }
    }
    out
}

/// Compose allocation, template mapping and scheduling into one plan.
pub fn emit_plan(p: &Program, cfg: &TileConfig) -> Result<HardwarePlan, HwError> {
    let p = uniquify(p);
    let mut memory = allocate_memories(&p, cfg)?;
    map_templates(&p)?;
    let (root, metapipelines) = schedule::lower_program(&p, &memory)?;
    for mp in &metapipelines {
        for (n, &hops) in &mp.double_buffers {
            if let Some(e) = memory.arrays.get_mut(n) {
                e.hops = e.hops.max(hops);
            }
        }
        for n in &mp.dedup {
            memory.arrays.remove(n);
        }
    }
    memory.check_capacity()?;
    let mut dram_writes: BTreeSet<Name> = p.outputs.iter().cloned().collect();
    for b in &p.bindings {
        for n in &b.names {
            if memory.is_off_chip(n) {
                dram_writes.insert(n.clone());
            }
        }
    }
    Ok(HardwarePlan { root, memory, metapipelines, dram_writes })
}
