use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{count_traffic, MachineParams, PerfError};
use crate::hw::HardwarePlan;
use crate::ir::{Name, Program};

/// Work of one metapipeline summed over the whole run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StageProfile {
    pub label: String,
    /// Tile iterations over all executions.
    pub tiles: u64,
    /// Executions of the controller.
    pub executions: u64,
    /// Cycles of each stage over all tiles.
    pub stage_totals: Vec<f64>,
}

/// Sequential and metapipelined cycles of one controller. Per-tile stage
/// latency is `L_s = total_s / T`. Sequentially the tiles take `Σ total_s`;
/// pipelined, each execution pays `Σ L_s` once and every further tile
/// pays `max L_s`. Both pay the fill/drain overhead once per stage and
/// execution.
pub fn pipeline_cycles(p: &StageProfile, fill_drain: u64) -> (f64, f64) {
    let overhead = (p.executions * p.stage_totals.len() as u64 * fill_drain) as f64;
    let seq: f64 = p.stage_totals.iter().sum();
    if p.tiles == 0 {
        return (seq + overhead, seq + overhead);
    }
    let t = p.tiles as f64;
    let max = p.stage_totals.iter().cloned().fold(0.0, f64::max) / t;
    let per_tile: f64 = seq / t;
    let e = p.executions.clamp(1, p.tiles) as f64;
    let pipe = e * per_tile + (t - e) * max;
    (seq + overhead, pipe + overhead)
}

pub fn estimate_cycles(
    p: &Program,
    plan: &HardwarePlan,
    sizes: &BTreeMap<Name, u64>,
    mp: &MachineParams,
    metapipelining: bool,
) -> Result<u64, PerfError> {
    let r = count_traffic(p, plan, sizes, mp)?;
    Ok(if metapipelining { r.cycles.metapipelined } else { r.cycles.sequential })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VariantRow {
    pub name: String,
    pub reads: u64,
    pub writes: u64,
    pub cycles: u64,
    /// Speedup over the first variant.
    pub speedup: f64,
    /// Change in reads per array against the first variant.
    pub read_delta: BTreeMap<Name, i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Comparison {
    pub rows: Vec<VariantRow>,
}

/// Traffic and cycles of several variants of one program at the same
/// sizes, relative to the first. A variant's flag selects metapipelined
/// or sequential cycles.
pub fn compare_variants(
    variants: &[(&str, &Program, &HardwarePlan, bool)],
    sizes: &BTreeMap<Name, u64>,
    mp: &MachineParams,
) -> Result<Comparison, PerfError> {
    let mut rows: Vec<VariantRow> = Vec::new();
    let mut base: Option<(u64, BTreeMap<Name, u64>)> = None;
    for &(name, p, plan, pipelined) in variants {
        let r = count_traffic(p, plan, sizes, mp)?;
        let cycles = if pipelined { r.cycles.metapipelined } else { r.cycles.sequential };
        let reads: BTreeMap<Name, u64> = r.per_array.iter().map(|(n, a)| (n.clone(), a.main_memory_reads)).collect();
        let (c0, r0) = base.get_or_insert_with(|| (cycles, reads.clone()));
        let mut read_delta = BTreeMap::new();
        for n in reads.keys().chain(r0.keys()) {
            let d = reads.get(n).copied().unwrap_or(0) as i64 - r0.get(n).copied().unwrap_or(0) as i64;
            if d != 0 {
                read_delta.insert(n.clone(), d);
            }
        }
        rows.push(VariantRow {
            name: name.to_string(),
            reads: r.total_reads(),
            writes: r.total_writes(),
            cycles,
            speedup: *c0 as f64 / cycles.max(1) as f64,
            read_delta,
        });
    }
    Ok(Comparison { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(s: usize, t: u64, l: f64) -> StageProfile {
        StageProfile { label: "p".into(), tiles: t, executions: 1, stage_totals: vec![l * t as f64; s] }
    }

    #[test]
    fn balanced_three_stages() {
        let (seq, pipe) = pipeline_cycles(&balanced(3, 100, 100.0), 0);
        assert_eq!(seq, 30000.0);
        assert_eq!(pipe, 10200.0);
    }

    #[test]
    fn single_stage_or_tile_is_unchanged() {
        let (seq, pipe) = pipeline_cycles(&balanced(1, 50, 7.0), 10);
        assert_eq!(seq, pipe);
        let (seq, pipe) = pipeline_cycles(&balanced(4, 1, 7.0), 10);
        assert_eq!(seq, pipe);
    }

    #[test]
    fn slow_store_stage_dominates() {
        let p = StageProfile {
            label: "z".into(),
            tiles: 100,
            executions: 1,
            stage_totals: vec![100.0 * 10.0, 100.0 * 100.0],
        };
        let (_, pipe) = pipeline_cycles(&p, 0);
        let store = 100.0 * 100.0;
        assert!((pipe - store).abs() / store < 0.15, "{pipe}");
    }

    proptest::proptest! {
        #[test]
        fn pipelining_never_hurts_and_speedup_is_bounded(
            totals in proptest::collection::vec(0.0f64..1e6, 1..6),
            tiles in 0u64..500,
            execs in 1u64..5,
            fd in 0u64..20,
        ) {
            let p = StageProfile { label: "p".into(), tiles, executions: execs, stage_totals: totals.clone() };
            let (seq, pipe) = pipeline_cycles(&p, fd);
            proptest::prop_assert!(pipe <= seq + 1e-6);
            let s = totals.len() as f64;
            if pipe > 0.0 {
                proptest::prop_assert!(seq / pipe <= s + 1e-9);
            }
            if totals.len() == 1 || tiles <= 1 {
                proptest::prop_assert!((seq - pipe).abs() < 1e-6);
            }
        }
    }
}
