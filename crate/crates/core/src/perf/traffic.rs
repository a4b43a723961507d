use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;

use super::{ArrayTraffic, Cycles, MachineParams, PerfError, StageCycles, StageProfile, TrafficReport};
use crate::hw::{HardwarePlan, Placement, TemplateKind};
use crate::interp::{random_inputs, run_observed, Observer, Options, Value};
use crate::ir::{mentions, Expr, Name, Program, SizeClass};
use crate::transform::{run_passes, tile_program, uniquify, TileConfig, TransformError};

const WORD_BYTES: u64 = 4;

/// The program as written, after strip mining alone, and after the full
/// tiling pipeline.
pub fn tiling_variants(p: &Program, cfg: &TileConfig) -> Result<Vec<(String, Program)>, TransformError> {
    let strip: Vec<String> = ["strip-mine", "localize", "cse", "code-motion"].iter().map(|s| s.to_string()).collect();
    Ok(vec![
        ("fused".to_string(), p.clone()),
        ("strip-mined".to_string(), run_passes(p, &strip, cfg)?),
        ("interchanged".to_string(), tile_program(p, cfg)?),
    ])
}

/// Replay `p` on seeded random inputs of the given sizes and charge its
/// accesses against `plan`.
pub fn count_traffic(
    p: &Program,
    plan: &HardwarePlan,
    sizes: &BTreeMap<Name, u64>,
    mp: &MachineParams,
) -> Result<TrafficReport, PerfError> {
    for s in p.size_symbols() {
        if !sizes.contains_key(&s) {
            return Err(PerfError::UnboundSymbol(s));
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let inputs = random_inputs(p, sizes, &mut rng);
    count_traffic_with(p, plan, &inputs, mp)
}

pub fn count_traffic_with(
    p: &Program,
    plan: &HardwarePlan,
    inputs: &BTreeMap<Name, Value>,
    mp: &MachineParams,
) -> Result<TrafficReport, PerfError> {
    mp.validate()?;
    let q = uniquify(p);
    let mut c = Counter::new(&q, plan, mp);
    for i in &q.inputs {
        if i.class == SizeClass::Static && !plan.memory.is_off_chip(&i.name) {
            if let Some(v) = inputs.get(&i.name) {
                let w = v.words();
                let a = c.per_array.entry(i.name.clone()).or_default();
                a.main_memory_reads += w;
                let b = w * WORD_BYTES;
                let bursts = b.div_ceil(mp.dram_burst_bytes);
                a.bursts += bursts;
                c.other += c.dram_cycles(bursts);
            }
        }
    }
    run_observed(&q, inputs, Options::default(), &mut c)?;
    Ok(c.finish())
}

/// Pre-order walk of a program, in the order of `hw::node_ids`.
fn preorder(p: &Program) -> Vec<&Expr> {
    let mut out = Vec::new();
    for b in &p.bindings {
        let mut stack = vec![&b.value];
        while let Some(e) = stack.pop() {
            out.push(e);
            stack.extend(e.children().into_iter().rev());
        }
    }
    out
}

fn addr(e: &Expr) -> usize {
    e as *const Expr as usize
}

fn leaf_kind(e: &Expr) -> TemplateKind {
    match e {
        Expr::Map(_) => TemplateKind::Vector,
        Expr::MultiFold(_) => TemplateKind::ReductionTree,
        Expr::FlatMap(_) => TemplateKind::ParallelFifo,
        _ => TemplateKind::Cam,
    }
}

struct Box_ {
    shape: Vec<usize>,
    offsets: Vec<i64>,
    extents: Vec<usize>,
}

impl Box_ {
    fn contains(&self, idx: &[i64]) -> bool {
        idx.iter().zip(&self.offsets).zip(&self.extents).all(|((&i, &o), &e)| i >= o && i < o + e as i64)
    }
}

fn unflatten(mut off: usize, shape: &[usize]) -> Vec<i64> {
    let mut idx = vec![0; shape.len()];
    for k in (0..shape.len()).rev() {
        let d = shape[k].max(1);
        idx[k] = (off % d) as i64;
        off /= d;
    }
    idx
}

fn flatten(idx: &[i64], shape: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (&i, &d)| acc * d + i as usize)
}

/// In-bounds flat offsets of a box, in row-major order.
fn box_offsets(shape: &[usize], offsets: &[i64], extents: &[usize]) -> Vec<usize> {
    let lo: Vec<i64> = offsets.iter().map(|&o| o.max(0)).collect();
    let hi: Vec<i64> =
        offsets.iter().zip(extents).zip(shape).map(|((&o, &e), &d)| (o + e as i64).min(d as i64)).collect();
    if lo.iter().zip(&hi).any(|(l, h)| l >= h) {
        return vec![];
    }
    let mut out = Vec::new();
    let mut idx = lo.clone();
    loop {
        out.push(flatten(&idx, shape));
        let mut k = idx.len();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < hi[k] {
                break;
            }
            idx[k] = lo[k];
        }
    }
}

/// Bursts needed for a sorted list of flat offsets, one per contiguous run.
fn run_bursts(offsets: &[usize], burst_bytes: u64) -> u64 {
    let mut bursts = 0;
    let mut run = 0u64;
    let mut prev: Option<usize> = None;
    for &o in offsets {
        if prev.is_some_and(|p| p + 1 == o) {
            run += 1;
        } else {
            bursts += (run * WORD_BYTES).div_ceil(burst_bytes);
            run = 1;
        }
        prev = Some(o);
    }
    bursts + (run * WORD_BYTES).div_ceil(burst_bytes)
}

type Stage = (usize, usize);

struct Counter<'a> {
    plan: &'a HardwarePlan,
    mp: &'a MachineParams,
    stage_of: HashMap<usize, Stage>,
    outer: HashMap<usize, usize>,
    kinds: HashMap<usize, TemplateKind>,
    /// Root folds of bindings: names and whether update k reads its
    /// accumulator.
    roots: HashMap<usize, (Vec<Name>, Vec<bool>)>,
    root_names: Vec<Name>,
    per_array: BTreeMap<Name, ArrayTraffic>,
    last_box: HashMap<Name, Box_>,
    last_line: HashMap<Name, usize>,
    caches: HashMap<Name, Vec<Option<usize>>>,
    stage_cycles: HashMap<Stage, f64>,
    tiles: Vec<u64>,
    executions: Vec<u64>,
    other: f64,
}

impl<'a> Counter<'a> {
    fn new(q: &Program, plan: &'a HardwarePlan, mp: &'a MachineParams) -> Counter<'a> {
        let nodes = preorder(q);
        let mut stage_of = HashMap::new();
        let mut outer = HashMap::new();
        for (m, pipe) in plan.metapipelines.iter().enumerate() {
            if let Some(e) = nodes.get(pipe.node) {
                outer.insert(addr(e), m);
            }
            for (s, stage) in pipe.stages.iter().enumerate() {
                for item in stage {
                    for &n in &item.nodes {
                        let Some(root) = nodes.get(n) else { continue };
                        let mut stack = vec![*root];
                        while let Some(e) = stack.pop() {
                            stage_of.insert(addr(e), (m, s));
                            stack.extend(e.children());
                        }
                    }
                }
            }
        }
        let kinds = nodes.iter().filter(|e| e.is_pattern()).map(|e| (addr(e), leaf_kind(e))).collect();
        let mut roots = HashMap::new();
        let mut root_names = Vec::new();
        for b in &q.bindings {
            if let Expr::MultiFold(m) = b.value.peel_lets().1 {
                let reads = m.updates.iter().map(|u| mentions(&u.body, &u.acc)).collect();
                roots.insert(addr(b.value.peel_lets().1), (b.names.clone(), reads));
                root_names.extend(b.names.iter().cloned());
            }
        }
        Counter {
            plan,
            mp,
            stage_of,
            outer,
            kinds,
            roots,
            root_names,
            per_array: BTreeMap::new(),
            last_box: HashMap::new(),
            last_line: HashMap::new(),
            caches: HashMap::new(),
            stage_cycles: HashMap::new(),
            tiles: vec![0; plan.metapipelines.len()],
            executions: vec![0; plan.metapipelines.len()],
            other: 0.0,
        }
    }

    fn burst_words(&self) -> usize {
        (self.mp.dram_burst_bytes / WORD_BYTES).max(1) as usize
    }

    fn dram_cycles(&self, bursts: u64) -> f64 {
        (bursts * self.mp.dram_burst_bytes) as f64 / (WORD_BYTES * self.mp.dram_words_per_cycle) as f64
    }

    fn charge_cycles(&mut self, site: Option<Stage>, cycles: f64) {
        match site {
            Some(s) => *self.stage_cycles.entry(s).or_default() += cycles,
            None => self.other += cycles,
        }
    }

    fn charge(&mut self, site: usize, array: &str, reads: u64, writes: u64, bursts: u64) {
        let a = self.per_array.entry(array.to_string()).or_default();
        a.main_memory_reads += reads;
        a.main_memory_writes += writes;
        a.bursts += bursts;
        let c = self.dram_cycles(bursts);
        self.charge_cycles(self.stage_of.get(&site).copied(), c);
    }

    fn placement(&self, array: &str) -> Option<&'a Placement> {
        self.plan.memory.arrays.get(array).map(|e| &e.placement)
    }

    /// Cached read of one word; returns words and bursts fetched.
    fn cache_read(&mut self, array: &str, offset: usize, cache_words: u64) -> (u64, u64) {
        let line_words = self.burst_words();
        let lines = (cache_words as usize / line_words).max(1);
        let cache = self.caches.entry(array.to_string()).or_insert_with(|| vec![None; lines]);
        let line = offset / line_words;
        let slot = &mut cache[line % lines];
        let a = self.per_array.entry(array.to_string()).or_default();
        if *slot == Some(line) {
            a.cache_hits += 1;
            (0, 0)
        } else {
            *slot = Some(line);
            a.cache_misses += 1;
            (line_words as u64, 1)
        }
    }

    fn finish(self) -> TrafficReport {
        let mut per_array = self.per_array;
        for (n, e) in &self.plan.memory.arrays {
            let w = e.on_chip_words();
            if w > 0 || per_array.contains_key(n) {
                let a = per_array.entry(n.clone()).or_default();
                a.on_chip_words = e.footprint();
                a.buffer_words = w;
            }
        }
        let mut profiles = Vec::new();
        let mut per_stage_cycles = Vec::new();
        let (mut seq, mut pipe) = (self.other, self.other);
        for (m, mpipe) in self.plan.metapipelines.iter().enumerate() {
            let stage_totals: Vec<f64> =
                (0..mpipe.stages.len()).map(|s| self.stage_cycles.get(&(m, s)).copied().unwrap_or(0.0)).collect();
            for (s, &t) in stage_totals.iter().enumerate() {
                per_stage_cycles.push(StageCycles { pipeline: mpipe.label.clone(), stage: s, cycles: t.ceil() as u64 });
            }
            let prof = StageProfile {
                label: mpipe.label.clone(),
                tiles: self.tiles[m],
                executions: self.executions[m],
                stage_totals,
            };
            let (a, b) = super::pipeline_cycles(&prof, self.mp.fill_drain_overhead);
            seq += a;
            pipe += b;
            profiles.push(prof);
        }
        let cycles = Cycles { sequential: seq.ceil() as u64, metapipelined: pipe.ceil() as u64 };
        TrafficReport { per_array, total_cycles: cycles.metapipelined, per_stage_cycles, cycles, profiles }
    }
}

impl Observer for Counter<'_> {
    fn element(&mut self, site: usize, array: &str, offset: usize, words: u64) {
        match self.placement(array) {
            None | Some(Placement::OnChipBuffer { .. }) => {}
            Some(Placement::OffChipWithCache { cache_words }) => {
                let (w, b) = self.cache_read(array, offset, *cache_words);
                self.charge(site, array, w, 0, b);
            }
            Some(Placement::OffChip) => {
                if let Some(bx) = self.last_box.get(array) {
                    if bx.contains(&unflatten(offset, &bx.shape)) {
                        return;
                    }
                }
                let line = offset / self.burst_words();
                let bursts = u64::from(self.last_line.insert(array.to_string(), line) != Some(line));
                self.charge(site, array, words, 0, bursts);
            }
        }
    }

    fn block(&mut self, site: usize, array: &str, shape: &[usize], offsets: &[i64], extents: &[usize], words: u64) {
        let Some(pl) = self.placement(array) else { return };
        let offs = box_offsets(shape, offsets, extents);
        if offs.is_empty() {
            return;
        }
        let per = words / offs.len() as u64;
        match pl {
            Placement::OnChipBuffer { .. } => {}
            Placement::OffChipWithCache { cache_words } => {
                let (mut w, mut b) = (0, 0);
                for &o in &offs {
                    let (x, y) = self.cache_read(array, o, *cache_words);
                    w += x;
                    b += y;
                }
                self.charge(site, array, w, 0, b);
            }
            Placement::OffChip => {
                let fresh: Vec<usize> = match self.last_box.get(array) {
                    Some(bx) if bx.shape == shape => {
                        offs.into_iter().filter(|&o| !bx.contains(&unflatten(o, shape))).collect()
                    }
                    _ => offs,
                };
                let bursts = if fresh.is_empty() { 0 } else { run_bursts(&fresh, self.mp.dram_burst_bytes) };
                self.charge(site, array, fresh.len() as u64 * per, 0, bursts);
                self.last_box.insert(
                    array.to_string(),
                    Box_ { shape: shape.to_vec(), offsets: offsets.to_vec(), extents: extents.to_vec() },
                );
            }
        }
    }

    fn pattern(&mut self, site: usize, iterations: u64) {
        if let Some(&m) = self.outer.get(&site) {
            self.tiles[m] += iterations;
            self.executions[m] += 1;
            return;
        }
        let kind = self.kinds.get(&site).copied().unwrap_or(TemplateKind::Vector);
        let c = iterations as f64 / self.mp.ops_per_cycle(kind) as f64;
        self.charge_cycles(self.stage_of.get(&site).copied(), c);
    }

    fn update(&mut self, site: usize, k: usize, shape: &[usize], offsets: &[i64], extents: &[usize], words: u64) {
        let Some((names, reads)) = self.roots.get(&site) else { return };
        let name = names.get(k).unwrap_or(&names[0]).clone();
        if !self.plan.memory.is_off_chip(&name) {
            return;
        }
        let offs = box_offsets(shape, offsets, extents);
        let mut bursts = if offs.is_empty() {
            words.div_ceil(self.burst_words() as u64)
        } else {
            run_bursts(&offs, self.mp.dram_burst_bytes)
        };
        let r = if reads.get(k).copied().unwrap_or(true) { words } else { 0 };
        if r > 0 {
            bursts *= 2;
        }
        let a = self.per_array.entry(name).or_default();
        a.main_memory_reads += r;
        a.main_memory_writes += words;
        a.bursts += bursts;
        let stage = self.outer.get(&site).and_then(|&m| self.plan.metapipelines[m].stage_of_update(k).map(|s| (m, s)));
        let c = self.dram_cycles(bursts);
        self.charge_cycles(stage, c);
    }

    fn bound(&mut self, name: &str, value: &Value) {
        let root_off_chip = self.root_names.iter().any(|n| n == name) && self.plan.memory.is_off_chip(name);
        if root_off_chip || !self.plan.dram_writes.contains(name) {
            return;
        }
        let w = value.words();
        let bursts = (w * WORD_BYTES).div_ceil(self.mp.dram_burst_bytes);
        let a = self.per_array.entry(name.to_string()).or_default();
        a.main_memory_writes += w;
        a.bursts += bursts;
        self.other += self.dram_cycles(bursts);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bursts_follow_runs() {
        assert_eq!(run_bursts(&[0, 1, 2, 3], 384), 1);
        assert_eq!(run_bursts(&[0, 1, 10, 11], 384), 2);
        assert_eq!(run_bursts(&(0..200).collect::<Vec<_>>(), 384), 3);
    }

    #[test]
    fn box_enumeration_clips() {
        assert_eq!(box_offsets(&[3, 4], &[1, 2], &[2, 4]), vec![6, 7, 10, 11]);
        assert!(box_offsets(&[3], &[5], &[2]).is_empty());
    }
}
