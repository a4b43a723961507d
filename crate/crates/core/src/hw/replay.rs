use super::{HardwarePlan, MemoryEntry};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WarHazard {
    pub pipeline: String,
    pub buffer: String,
    /// Tile whose value the consumer expected.
    pub tile: u64,
    /// Tile whose value it found.
    pub found: Option<u64>,
}

/// Replay `tiles` iterations of every metapipeline, stage `s` working on
/// tile `t - s` at step `t`, and check that each consumer reads the buffer
/// version its producer wrote for the same tile.
pub fn war_replay(plan: &HardwarePlan, tiles: u64) -> Vec<WarHazard> {
    let mut out = Vec::new();
    for mp in &plan.metapipelines {
        let stages = mp.stages.len() as u64;
        for (p, stage) in mp.stages.iter().enumerate() {
            for item in stage {
                let Some(name) = &item.binds else { continue };
                let Some(entry) = plan.memory.arrays.get(name) else { continue };
                let consumers: Vec<u64> = mp
                    .stages
                    .iter()
                    .enumerate()
                    .skip(p + 1)
                    .filter(|(_, st)| st.iter().any(|it| it.reads.contains(name)))
                    .map(|(c, _)| c as u64)
                    .collect();
                let versions = versions(entry);
                let mut slots: Vec<Option<u64>> = vec![None; versions];
                for step in 0..tiles + stages {
                    if let Some(t) = step.checked_sub(p as u64).filter(|&t| t < tiles) {
                        slots[(t % versions as u64) as usize] = Some(t);
                    }
                    // Writes land before reads of the same step.
                    for &c in &consumers {
                        if let Some(t) = step.checked_sub(c).filter(|&t| t < tiles) {
                            let found = slots[(t % versions as u64) as usize];
                            if found != Some(t) {
                                out.push(WarHazard {
                                    pipeline: mp.label.clone(),
                                    buffer: name.clone(),
                                    tile: t,
                                    found,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn versions(e: &MemoryEntry) -> usize {
    if e.hops == 0 {
        1
    } else {
        2 * e.hops as usize
    }
}
