use std::collections::{BTreeMap, BTreeSet};

use super::{node_ids, HwError, MemoryEntry, MemoryPlan, Placement};
use crate::ir::{
    binding_shapes, shape_words, value_words, Expr, Name, Program, SizeClass, SliceIndex, StaticEnv, Type,
};
use crate::transform::{non_affine_accesses, TileConfig};

/// Place every named array: declared-static inputs and statically sized
/// intermediates on chip, everything else in main memory, with a cache
/// when some access is not affine.
pub fn allocate_memories(p: &Program, cfg: &TileConfig) -> Result<MemoryPlan, HwError> {
    let env = StaticEnv::new(p, &cfg.sizes);
    let types = crate::ir::infer_program_types(p);
    let mut shapes = binding_shapes(p);
    let mut named: Vec<(Name, Option<&Expr>)> = Vec::new();
    for b in &p.bindings {
        for n in &b.names {
            named.push((n.clone(), (b.names.len() == 1).then_some(&b.value)));
        }
        collect_lets(&b.value, &mut named, &mut shapes);
    }
    let cached: BTreeSet<Name> = non_affine_accesses(p).into_iter().map(|a| a.array).collect();
    let ports = read_ports(p);
    let mut arrays = BTreeMap::new();
    let off_chip = |n: &Name| {
        if cached.contains(n) {
            Placement::OffChipWithCache { cache_words: cfg.cache_words }
        } else {
            Placement::OffChip
        }
    };
    for i in &p.inputs {
        let words = match i.class {
            SizeClass::Static => shape_words(&i.shape, i.elem.words(), &env),
            SizeClass::Dynamic => None,
        };
        if i.class == SizeClass::Static && words.is_none() {
            log::warn!("static input `{}` has no known size; placing it in main memory", i.name);
        }
        let placement = words.map_or_else(|| off_chip(&i.name), |words| Placement::OnChipBuffer { words });
        arrays.insert(i.name.clone(), entry(placement, &i.elem, &ports, &i.name));
    }
    let multi = multi_component_words(p, &env, &types);
    for (n, value) in named {
        let ty = types.get(&n).cloned().unwrap_or(Type::Float);
        let words = match value {
            Some(v) => value_words(v, &ty, &env, &shapes),
            None => multi.get(&n).copied().flatten(),
        };
        let placement = words.map_or_else(|| off_chip(&n), |words| Placement::OnChipBuffer { words });
        let elem = match &ty {
            Type::Array(el, _) => el.as_ref().clone(),
            t => t.clone(),
        };
        arrays.insert(n.clone(), entry(placement, &elem, &ports, &n));
    }
    Ok(MemoryPlan { arrays, capacity: cfg.on_chip_capacity })
}

fn entry(placement: Placement, elem: &Type, ports: &BTreeMap<Name, u32>, n: &Name) -> MemoryEntry {
    MemoryEntry {
        placement,
        word_bits: elem.bits(),
        read_ports: ports.get(n).copied().unwrap_or(0),
        write_ports: 1,
        hops: 0,
    }
}

/// Words of each name bound by a tuple-destructuring binding.
fn multi_component_words(p: &Program, env: &StaticEnv, types: &BTreeMap<Name, Type>) -> BTreeMap<Name, Option<u64>> {
    let mut out = BTreeMap::new();
    for b in p.bindings.iter().filter(|b| b.names.len() > 1) {
        let (_, root) = b.value.peel_lets();
        for (k, n) in b.names.iter().enumerate() {
            let elem = match types.get(n) {
                Some(Type::Array(el, _)) => el.words(),
                Some(t) => t.words(),
                None => 1,
            };
            let words = match root {
                Expr::MultiFold(m) => m.ranges.get(k).and_then(|r| shape_words(r, elem, env)),
                _ => None,
            };
            out.insert(n.clone(), words);
        }
    }
    out
}

fn shape_of(e: &Expr, shapes: &BTreeMap<Name, Vec<Expr>>) -> Option<Vec<Expr>> {
    match e {
        Expr::Copy(c) => Some(c.shape.clone()),
        Expr::Map(m) => Some(m.dims.clone()),
        Expr::MultiFold(m) if m.ranges.len() == 1 => Some(m.ranges[0].clone()),
        Expr::Fill(s, _) => Some(s.clone()),
        Expr::Slice(s) => {
            let Expr::Var(src) = &s.src else { return None };
            let src = shapes.get(src)?;
            Some(
                s.index
                    .iter()
                    .zip(src)
                    .filter(|(i, _)| matches!(i, SliceIndex::Free))
                    .map(|(_, d)| d.clone())
                    .collect(),
            )
        }
        Expr::Let(_, _, b) => shape_of(b, shapes),
        _ => None,
    }
}

/// Let-bound names inside patterns, with shapes of the array-valued ones.
fn collect_lets<'a>(e: &'a Expr, out: &mut Vec<(Name, Option<&'a Expr>)>, shapes: &mut BTreeMap<Name, Vec<Expr>>) {
    let mut bind = |n: &Name, v: &'a Expr, out: &mut Vec<(Name, Option<&'a Expr>)>| {
        if let Some(s) = shape_of(v, shapes) {
            shapes.insert(n.clone(), s);
        }
        out.push((n.clone(), Some(v)));
    };
    match e {
        Expr::Let(n, v, _) => bind(n, v, out),
        Expr::MultiFold(m) => m.lets.iter().for_each(|(n, v)| bind(n, v, out)),
        Expr::GroupByFold(g) => g.lets.iter().for_each(|(n, v)| bind(n, v, out)),
        _ => {}
    }
    for c in e.children() {
        collect_lets(c, out, shapes);
    }
}

/// Distinct reading patterns per name: one read port each.
fn read_ports(p: &Program) -> BTreeMap<Name, u32> {
    let ids = node_ids(p);
    let mut readers: BTreeMap<Name, BTreeSet<usize>> = BTreeMap::new();
    fn walk(
        e: &Expr,
        owner: usize,
        ids: &std::collections::HashMap<usize, usize>,
        r: &mut BTreeMap<Name, BTreeSet<usize>>,
    ) {
        let owner = if e.is_pattern() { ids[&(e as *const Expr as usize)] } else { owner };
        match e {
            Expr::Var(n) => {
                r.entry(n.clone()).or_default().insert(owner);
            }
            Expr::Copy(c) => {
                r.entry(c.src.clone()).or_default().insert(owner);
            }
            _ => {}
        }
        for c in e.children() {
            walk(c, owner, ids, r);
        }
    }
    for b in &p.bindings {
        let root = ids[&(&b.value as *const Expr as usize)];
        walk(&b.value, root, &ids, &mut readers);
    }
    readers.into_iter().map(|(n, s)| (n, s.len() as u32)).collect()
}
