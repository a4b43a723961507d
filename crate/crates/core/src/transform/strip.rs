use std::collections::BTreeSet;

use super::{uniquify, zero_locs, zero_of, TileConfig, TransformError};
use crate::ir::{
    substitute, BinOp, Combine, Expr, FlatMapPat, Fresh, GroupByFoldPat, GroupGen, MultiFoldPat, Name, Program,
    TypeEnv, Update,
};

/// Partition every pattern domain over a tiled dimension into a strided
/// tile-count domain and an inner tile domain.
pub fn strip_mine(p: &Program, cfg: &TileConfig) -> Result<Program, TransformError> {
    check_config(p, cfg)?;
    let p = uniquify(p);
    let mut s = Stripper { cfg, fresh: Fresh::for_program(&p), env: TypeEnv::for_program(&p) };
    let mut out = p.clone();
    for b in out.bindings.iter_mut() {
        let v = std::mem::replace(&mut b.value, Expr::int(0));
        b.value = s.strip(v);
    }
    Ok(out)
}

pub(crate) fn check_config(p: &Program, cfg: &TileConfig) -> Result<(), TransformError> {
    if cfg.on_chip_capacity == 0 {
        return Err(TransformError::ZeroCapacity);
    }
    let mut known: BTreeSet<Name> = p.size_symbols().into_iter().collect();
    known.extend(p.static_sizes.iter().cloned());
    for (d, &b) in &cfg.tiles {
        if !known.contains(d) {
            return Err(TransformError::UnknownDimension(d.clone()));
        }
        if b == 0 {
            return Err(TransformError::ZeroTile(d.clone()));
        }
    }
    Ok(())
}

/// An elementwise combine over a fold's range, kept from before the
/// children were rewritten: `map(range){js => body}` with the arguments
/// read only at `js`, rewritten over scalar arguments `lhs`, `rhs`.
struct Elementwise {
    js: Vec<Name>,
    scalar: Combine,
}

fn elementwise_combine(c: &Combine, range: &[Expr], fresh: &mut Fresh) -> Option<Elementwise> {
    let Expr::Map(m) = &c.body else { return None };
    if m.dims != range {
        return None;
    }
    let at: Vec<Expr> = m.idx.iter().map(Expr::var).collect();
    let (l, r) = (fresh.name(&c.lhs), fresh.name(&c.rhs));
    let body = super::interchange::replace_reads(&m.body, &c.lhs, &at, &Expr::var(&l))?;
    let body = super::interchange::replace_reads(&body, &c.rhs, &at, &Expr::var(&r))?;
    Some(Elementwise { js: m.idx.clone(), scalar: Combine { lhs: l, rhs: r, body } })
}

/// How one domain dimension is split.
struct Split {
    outer: Option<(Name, Expr)>,
    inner: Expr,
    offset: Expr,
}

struct Stripper<'a> {
    cfg: &'a TileConfig,
    fresh: Fresh,
    env: TypeEnv,
}

impl Stripper<'_> {
    fn tile_of(&self, d: &Expr) -> Option<u64> {
        match d {
            Expr::Var(s) => self.cfg.tiles.get(s).copied(),
            _ => None,
        }
    }

    fn splits(&mut self, dims: &[Expr], idx: &[Name]) -> Option<Vec<Split>> {
        if !dims.iter().any(|d| self.tile_of(d).is_some()) {
            return None;
        }
        let mut out = Vec::new();
        for (d, i) in dims.iter().zip(idx) {
            match self.tile_of(d) {
                Some(b) => {
                    let base = i.trim_end_matches(|c: char| c.is_ascii_digit());
                    let ii = self.fresh.name(&format!("{base}{base}"));
                    let offset = Expr::bin(BinOp::Mul, Expr::var(&ii), Expr::int(b as i64));
                    let inner = match d {
                        Expr::Var(s) if self.cfg.sizes.get(s).is_some_and(|n| n % b == 0) => Expr::int(b as i64),
                        _ => {
                            Expr::bin(BinOp::Min, Expr::int(b as i64), Expr::bin(BinOp::Sub, d.clone(), offset.clone()))
                        }
                    };
                    let outer = Expr::bin(BinOp::CeilDiv, d.clone(), Expr::int(b as i64));
                    out.push(Split { outer: Some((ii, outer)), inner, offset });
                }
                None => out.push(Split { outer: None, inner: d.clone(), offset: Expr::int(0) }),
            }
        }
        Some(out)
    }

    fn strip(&mut self, e: Expr) -> Expr {
        let elem = match &e {
            Expr::Map(m) if m.dims.iter().any(|d| self.tile_of(d).is_some()) => Some(self.env.infer(&m.body)),
            _ => None,
        };
        let ew = match &e {
            Expr::MultiFold(m) if m.ranges.len() == 1 => {
                m.combine.as_ref().and_then(|c| elementwise_combine(c, &m.ranges[0], &mut self.fresh))
            }
            _ => None,
        };
        let e = e.map_children(&mut |c| self.strip(c));
        match e {
            Expr::Map(m) => {
                let Some(splits) = self.splits(&m.dims, &m.idx) else { return Expr::Map(m) };
                let body = subst_all(m.body, &m.idx, &splits);
                let zero = zero_of(&elem.unwrap_or(crate::ir::Type::Float));
                let (outer_dims, outer_idx) = outer_of(&splits);
                Expr::MultiFold(Box::new(MultiFoldPat {
                    dims: outer_dims,
                    idx: outer_idx,
                    ranges: vec![m.dims.clone()],
                    init: Expr::Fill(m.dims.clone(), Box::new(zero)),
                    lets: vec![],
                    updates: vec![Update {
                        loc: splits.iter().map(|s| s.offset.clone()).collect(),
                        slice: Some(splits.iter().map(|s| s.inner.clone()).collect()),
                        acc: self.fresh.name("acc"),
                        body: Expr::Map(Box::new(crate::ir::MapPat {
                            dims: splits.iter().map(|s| s.inner.clone()).collect(),
                            idx: m.idx,
                            body,
                        })),
                    }],
                    combine: None,
                }))
            }
            Expr::MultiFold(m) => match self.strip_multifold(*m, ew) {
                Ok(e) => e,
                Err(m) => Expr::MultiFold(Box::new(m)),
            },
            Expr::GroupByFold(g) => {
                let Some(splits) = self.splits(&g.dims, &g.idx) else { return Expr::GroupByFold(g) };
                let g = *g;
                let (outer_dims, outer_idx) = outer_of(&splits);
                let lets = g.lets.into_iter().map(|(n, v)| (n, subst_all(v, &g.idx, &splits))).collect();
                let gen = match g.gen {
                    GroupGen::Keyed { key, acc, update } => GroupGen::Keyed {
                        key: subst_all(key, &g.idx, &splits),
                        acc,
                        update: subst_all(update, &g.idx, &splits),
                    },
                    GroupGen::Merge(x) => GroupGen::Merge(subst_all(x, &g.idx, &splits)),
                };
                let outer_init = self.fresh.freshen(g.init.clone());
                let outer_combine = self.fresh_combine(&g.combine);
                let inner = GroupByFoldPat {
                    dims: splits.iter().map(|s| s.inner.clone()).collect(),
                    idx: g.idx,
                    init: g.init,
                    lets,
                    gen,
                    combine: g.combine,
                };
                Expr::GroupByFold(Box::new(GroupByFoldPat {
                    dims: outer_dims,
                    idx: outer_idx,
                    init: outer_init,
                    lets: vec![],
                    gen: GroupGen::Merge(Expr::GroupByFold(Box::new(inner))),
                    combine: outer_combine,
                }))
            }
            Expr::FlatMap(f) => {
                let Some(splits) = self.splits(&f.dims, &f.idx) else { return Expr::FlatMap(f) };
                let (outer_dims, outer_idx) = outer_of(&splits);
                let body = subst_all(f.body, &f.idx, &splits);
                let inner = FlatMapPat { dims: splits.iter().map(|s| s.inner.clone()).collect(), idx: f.idx, body };
                Expr::FlatMap(Box::new(FlatMapPat {
                    dims: outer_dims,
                    idx: outer_idx,
                    body: Expr::FlatMap(Box::new(inner)),
                }))
            }
            other => other,
        }
    }

    fn fresh_combine(&mut self, c: &Combine) -> Combine {
        let wrapped = Expr::MultiFold(Box::new(MultiFoldPat {
            dims: vec![],
            idx: vec![],
            ranges: vec![],
            init: Expr::int(0),
            lets: vec![],
            updates: vec![],
            combine: Some(c.clone()),
        }));
        match self.fresh.freshen(wrapped) {
            Expr::MultiFold(m) => m.combine.unwrap(),
            _ => unreachable!(),
        }
    }

    /// Tiled `MultiFold`: the inner pattern folds one tile from the initial
    /// value and the outer update combines it into the accumulator. Folds
    /// without a combine, or whose tuple combine is not component-wise,
    /// are left untiled.
    #[allow(clippy::result_large_err)]
    fn strip_multifold(&mut self, m: MultiFoldPat, ew: Option<Elementwise>) -> Result<Expr, MultiFoldPat> {
        let Some(c) = m.combine.clone() else { return Err(m) };
        let n = m.ranges.len();
        if n > 1 && (0..n).any(|k| component_body(&c, k, n).is_none()) {
            return Err(m);
        }
        let Some(splits) = self.splits(&m.dims, &m.idx) else { return Err(m) };
        if let Some(ew) = ew {
            if let Some(narrowed) = self.narrowing(&m, &splits) {
                return Ok(self.strip_narrowed(m, splits, narrowed, ew));
            }
        }
        let (outer_dims, outer_idx) = outer_of(&splits);
        let part = self.fresh.name("part");
        let outer_init = self.fresh.freshen(m.init.clone());
        let outer_combine = self.fresh_combine(&c);
        let mut updates = Vec::new();
        for (k, r) in m.ranges.iter().enumerate() {
            let acc = self.fresh.name("acc");
            let fc = self.fresh_combine(&c);
            let body = if n == 1 {
                let b = substitute(fc.body, &fc.lhs, &Expr::var(&acc));
                substitute(b, &fc.rhs, &Expr::var(&part))
            } else {
                let b = component_body(&fc, k, n).unwrap();
                let b = replace_proj(b, &fc.lhs, k, &Expr::var(&acc));
                replace_proj(b, &fc.rhs, k, &Expr::Proj(Box::new(Expr::var(&part)), k))
            };
            updates.push(Update { loc: zero_locs(r.len()), slice: (!r.is_empty()).then(|| r.clone()), acc, body });
        }
        let idx = m.idx.clone();
        let inner = MultiFoldPat {
            dims: splits.iter().map(|s| s.inner.clone()).collect(),
            idx: m.idx,
            ranges: m.ranges.clone(),
            init: m.init,
            lets: m.lets.into_iter().map(|(n, v)| (n, subst_all(v, &idx, &splits))).collect(),
            updates: m
                .updates
                .into_iter()
                .map(|u| Update {
                    loc: u.loc.into_iter().map(|x| subst_all(x, &idx, &splits)).collect(),
                    slice: u.slice.map(|s| s.into_iter().map(|x| subst_all(x, &idx, &splits)).collect()),
                    acc: u.acc,
                    body: subst_all(u.body, &idx, &splits),
                })
                .collect(),
            combine: Some(c),
        };
        Ok(Expr::MultiFold(Box::new(MultiFoldPat {
            dims: outer_dims,
            idx: outer_idx,
            ranges: m.ranges,
            init: outer_init,
            lets: vec![(part, Expr::MultiFold(Box::new(inner)))],
            updates,
            combine: Some(outer_combine),
        })))
    }
}

impl Stripper<'_> {
    /// For each range dimension, the domain dimension whose tiled index is
    /// the point update's location there. Some dimension must be tiled.
    fn narrowing(&self, m: &MultiFoldPat, splits: &[Split]) -> Option<Vec<Option<usize>>> {
        let u = &m.updates[0];
        let r = &m.ranges[0];
        if u.slice.is_some() || r.is_empty() || !matches!(&m.init, Expr::Fill(s, _) if s == r) {
            return None;
        }
        let dims: Vec<Option<usize>> = r
            .iter()
            .zip(&u.loc)
            .map(|(rk, l)| {
                let Expr::Var(v) = l else { return None };
                let t = m.idx.iter().position(|i| i == v)?;
                (splits[t].outer.is_some() && &m.dims[t] == rk).then_some(t)
            })
            .collect();
        dims.iter().any(Option::is_some).then_some(dims)
    }

    /// Tiled point-update fold whose inner accumulator covers only the tile
    /// of the range addressed by the tiled indices.
    fn strip_narrowed(
        &mut self,
        m: MultiFoldPat,
        splits: Vec<Split>,
        narrowed: Vec<Option<usize>>,
        ew: Elementwise,
    ) -> Expr {
        let (outer_dims, outer_idx) = outer_of(&splits);
        let r = m.ranges[0].clone();
        let inner_range: Vec<Expr> =
            narrowed.iter().zip(&r).map(|(t, rk)| t.map_or(rk.clone(), |t| splits[t].inner.clone())).collect();
        let offsets: Vec<Expr> =
            narrowed.iter().map(|t| t.map_or(Expr::int(0), |t| splits[t].offset.clone())).collect();
        let Expr::Fill(_, z) = &m.init else { unreachable!() };
        let elementwise = |s: &mut Self, a: Expr, b: Expr| {
            let at = |x: &Expr| Expr::read(x.clone(), ew.js.iter().map(Expr::var).collect());
            let body = substitute(substitute(ew.scalar.body.clone(), &ew.scalar.lhs, &at(&a)), &ew.scalar.rhs, &at(&b));
            let map = Expr::Map(Box::new(crate::ir::MapPat { dims: inner_range.clone(), idx: ew.js.clone(), body }));
            let map = s.fresh.freshen(map);
            s.strip(map)
        };
        let (l, rr) = (self.fresh.name("a"), self.fresh.name("b"));
        let inner_combine =
            Combine { lhs: l.clone(), rhs: rr.clone(), body: elementwise(self, Expr::var(&l), Expr::var(&rr)) };
        let part = self.fresh.name("part");
        let acc = self.fresh.name("acc");
        let outer_body = elementwise(self, Expr::var(&acc), Expr::var(&part));
        let idx = m.idx.clone();
        let u = m.updates.into_iter().next().unwrap();
        let inner = MultiFoldPat {
            dims: splits.iter().map(|s| s.inner.clone()).collect(),
            idx: m.idx,
            ranges: vec![inner_range.clone()],
            init: Expr::Fill(inner_range.clone(), z.clone()),
            lets: m.lets.into_iter().map(|(n, v)| (n, subst_all(v, &idx, &splits))).collect(),
            updates: vec![Update {
                loc: u
                    .loc
                    .into_iter()
                    .zip(&narrowed)
                    .map(|(x, t)| if t.is_some() { x } else { subst_all(x, &idx, &splits) })
                    .collect(),
                slice: None,
                acc: u.acc,
                body: subst_all(u.body, &idx, &splits),
            }],
            combine: Some(inner_combine),
        };
        Expr::MultiFold(Box::new(MultiFoldPat {
            dims: outer_dims,
            idx: outer_idx,
            ranges: vec![r],
            init: m.init,
            lets: vec![(part, Expr::MultiFold(Box::new(inner)))],
            updates: vec![Update { loc: offsets, slice: Some(inner_range), acc, body: outer_body }],
            combine: m.combine,
        }))
    }
}

fn outer_of(splits: &[Split]) -> (Vec<Expr>, Vec<Name>) {
    let mut dims = Vec::new();
    let mut idx = Vec::new();
    for (ii, d) in splits.iter().filter_map(|s| s.outer.as_ref()) {
        dims.push(d.clone());
        idx.push(ii.clone());
    }
    (dims, idx)
}

/// Replace each tiled index `i` by `ii * b + i`.
fn subst_all(e: Expr, idx: &[Name], splits: &[Split]) -> Expr {
    idx.iter().zip(splits).fold(e, |e, (i, s)| match &s.outer {
        Some(_) => substitute(e, i, &Expr::bin(BinOp::Add, s.offset.clone(), Expr::var(i))),
        None => e,
    })
}

/// The part of a tuple combine computing component `k`, if it reads only
/// component `k` of either argument.
pub(crate) fn component_body(c: &Combine, k: usize, n: usize) -> Option<Expr> {
    let (lets, last) = c.body.peel_lets();
    let Expr::Tuple(parts) = last else { return None };
    if parts.len() != n {
        return None;
    }
    let mut need: BTreeSet<Name> = crate::ir::free_vars(&parts[k]);
    let mut kept = Vec::new();
    for (name, v) in lets.iter().rev() {
        if need.contains(*name) {
            need.extend(crate::ir::free_vars(v));
            kept.push(((*name).clone(), (*v).clone()));
        }
    }
    kept.reverse();
    let body = Expr::with_lets(kept, parts[k].clone());
    let only_k = |name: &str| proj_only(&body, name, k);
    (only_k(&c.lhs) && only_k(&c.rhs)).then_some(body)
}

fn proj_only(e: &Expr, name: &str, k: usize) -> bool {
    match e {
        Expr::Proj(a, j) if matches!(a.as_ref(), Expr::Var(v) if v == name) => *j == k,
        Expr::Var(v) => v != name,
        Expr::Copy(c) if c.src == name => false,
        _ => e.children().into_iter().all(|c| proj_only(c, name, k)),
    }
}

pub(crate) fn replace_proj(e: Expr, name: &str, k: usize, with: &Expr) -> Expr {
    match e {
        Expr::Proj(a, j) if j == k && matches!(a.as_ref(), Expr::Var(v) if v == name) => with.clone(),
        other => other.map_children(&mut |c| replace_proj(c, name, k, with)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{equivalent, random_inputs, DEFAULT_TOL};
    use crate::syntax::parse;
    use rand::SeedableRng;
    use std::collections::BTreeMap;

    fn check(src: &str, cfg: &TileConfig, sizes: &[(&str, u64)]) -> Program {
        let p = parse(src).unwrap();
        let t = strip_mine(&p, cfg).unwrap();
        let diags = crate::ir::validate(&t);
        assert!(diags.is_empty(), "{diags:?}\n{}", crate::syntax::print_program(&t));
        let sizes: BTreeMap<Name, u64> = sizes.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let inputs = random_inputs(&p, &sizes, &mut rng);
        equivalent(&p, &t, &inputs, DEFAULT_TOL).unwrap();
        t
    }

    #[test]
    fn row_sums_tiled_both_ways() {
        let src = crate::corpus::source("sumrows").unwrap();
        let cfg = TileConfig::default().tile("m", 2).tile("n", 2);
        check(src, &cfg, &[("m", 6), ("n", 4)]);
        check(src, &cfg, &[("m", 5), ("n", 3)]);
    }

    #[test]
    fn unknown_dimension_rejected() {
        let p = parse(crate::corpus::source("gemm").unwrap()).unwrap();
        let err = strip_mine(&p, &TileConfig::default().tile("q", 4)).unwrap_err();
        assert_eq!(err, TransformError::UnknownDimension("q".into()));
    }

    #[test]
    fn corpus_tiles_stay_equivalent() {
        for name in crate::corpus::NAMES {
            let src = crate::corpus::source(name).unwrap();
            let p = parse(src).unwrap();
            let mut cfg = TileConfig::default();
            for s in p.size_symbols() {
                cfg = cfg.tile(&s, 3);
            }
            for s in &p.static_sizes {
                cfg = cfg.tile(s, 3);
            }
            let sizes: Vec<(&str, u64)> = vec![("m", 7), ("n", 8), ("p", 5), ("d", 4), ("k", 5)];
            check(src, &cfg, &sizes);
        }
    }
}
