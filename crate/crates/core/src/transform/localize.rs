use std::collections::{BTreeMap, BTreeSet};

use super::{uniquify, TileConfig};
use crate::ir::{
    binding_shapes, contains_read, free_vars, BinOp, CopyPat, Expr, Fresh, Lit, Name, Program, ReuseTag, SliceIndex,
    SlicePat,
};
use crate::syntax::print_expr;

/// A direct array access left in place because its indices depend on data.
#[derive(Clone, Debug, PartialEq)]
pub struct Access {
    pub binding: Name,
    pub array: Name,
    pub expr: Expr,
}

/// Rewrite affine accesses over tiled index ranges into reads of tile copies
/// placed in the innermost strided pattern that determines the tile.
pub fn localize_tiles(p: &Program, cfg: &TileConfig) -> Program {
    let _ = cfg;
    let p = uniquify(p);
    let mut l = Localizer::new(&p);
    let mut out = p.clone();
    for b in out.bindings.iter_mut() {
        l.extents.clear();
        collect_extents(&b.value, &mut l.extents);
        l.rewrite = false;
        l.frame_count = 0;
        l.walk(b.value.clone());
        l.name_groups();
        l.rewrite = true;
        l.frame_count = 0;
        let v = std::mem::replace(&mut b.value, Expr::int(0));
        b.value = l.walk(v);
        l.groups.clear();
    }
    out
}

/// Accesses to inputs or top-level arrays whose index expressions are not
/// affine in pattern indices (they read data or data-derived lets).
pub fn non_affine_accesses(p: &Program) -> Vec<Access> {
    let shapes = binding_shapes(p);
    let mut globals: BTreeSet<Name> = p.size_symbols().into_iter().collect();
    globals.extend(p.static_sizes.iter().cloned());
    let mut out = Vec::new();
    for b in &p.bindings {
        let mut idx_vars = BTreeMap::new();
        collect_extents(&b.value, &mut idx_vars);
        let affine = |e: &Expr| {
            !contains_read(e)
                && !matches!(e, Expr::Slice(_))
                && free_vars(e).iter().all(|v| globals.contains(v) || idx_vars.contains_key(v))
        };
        let mut stack = vec![&b.value];
        while let Some(e) = stack.pop() {
            let hit = match e {
                Expr::Read(a, idx) => match a.as_ref() {
                    Expr::Var(n) if shapes.contains_key(n) => Some((n, idx.iter().all(affine))),
                    _ => None,
                },
                Expr::Slice(s) => match &s.src {
                    Expr::Var(n) if shapes.contains_key(n) => Some((
                        n,
                        s.index.iter().all(|i| match i {
                            SliceIndex::Fixed(x) => affine(x),
                            SliceIndex::Free => true,
                        }),
                    )),
                    _ => None,
                },
                Expr::Copy(c) if shapes.contains_key(&c.src) => Some((&c.src, c.offsets.iter().all(affine))),
                _ => None,
            };
            if let Some((array, false)) = hit {
                out.push(Access { binding: b.names.join(","), array: array.clone(), expr: e.clone() });
            }
            stack.extend(e.children());
        }
    }
    out
}

/// Domain extent of every pattern index in `e`.
fn collect_extents(e: &Expr, out: &mut BTreeMap<Name, Expr>) {
    let pairs: Vec<(&Name, &Expr)> = match e {
        Expr::Map(m) => m.idx.iter().zip(&m.dims).collect(),
        Expr::MultiFold(m) => m.idx.iter().zip(&m.dims).collect(),
        Expr::FlatMap(f) => f.idx.iter().zip(&f.dims).collect(),
        Expr::GroupByFold(g) => g.idx.iter().zip(&g.dims).collect(),
        _ => vec![],
    };
    for (i, d) in pairs {
        out.insert(i.clone(), d.clone());
    }
    for c in e.children() {
        collect_extents(c, out);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum DimKey {
    Tiled { ii: Name, b: i64, extent: String },
    Full,
    Inv(String),
}

/// Per-dimension classification of one access index.
enum Dim {
    Tiled {
        ii: Name,
        b: i64,
        i: Name,
        c: i64,
        extent: Expr,
    },
    /// The whole extent: a free slice position or an index ranging over it.
    Full(Option<Name>),
    Inv(Expr),
}

struct Frame {
    id: usize,
    idx: Vec<Name>,
    /// Length of the bound-index stack once this frame's indices are pushed.
    inner_start: usize,
}

#[derive(Clone, Debug)]
struct Group {
    name: Name,
    dims: Vec<DimKey>,
    lo: Vec<i64>,
    hi: Vec<i64>,
    offsets: Vec<Expr>,
    shape: Vec<Expr>,
}

type Key = (usize, Name, Vec<DimKey>);

struct Localizer {
    shapes: BTreeMap<Name, Vec<Expr>>,
    globals: BTreeSet<Name>,
    extents: BTreeMap<Name, Expr>,
    /// Enclosing strided patterns.
    frames: Vec<Frame>,
    /// Indices of all enclosing patterns, outermost first.
    bound: Vec<Name>,
    frame_count: usize,
    groups: BTreeMap<Key, Group>,
    rewrite: bool,
    fresh: Fresh,
}

impl Localizer {
    fn new(p: &Program) -> Localizer {
        let mut globals: BTreeSet<Name> = p.size_symbols().into_iter().collect();
        globals.extend(p.static_sizes.iter().cloned());
        globals.extend(p.inputs.iter().map(|i| i.name.clone()));
        for b in &p.bindings {
            globals.extend(b.names.iter().cloned());
        }
        Localizer {
            shapes: binding_shapes(p),
            globals,
            extents: BTreeMap::new(),
            frames: Vec::new(),
            bound: Vec::new(),
            frame_count: 0,
            groups: BTreeMap::new(),
            rewrite: false,
            fresh: Fresh::for_program(p),
        }
    }

    fn frame_of(&self, v: &str) -> Option<usize> {
        self.frames.iter().position(|f| f.idx.iter().any(|n| n == v))
    }

    /// Whether every free variable of `e` is in scope at the lets of the
    /// frame at `depth` (1-based).
    fn visible(&self, e: &Expr, depth: usize) -> bool {
        let limit = self.frames[depth - 1].inner_start;
        free_vars(e)
            .iter()
            .all(|v| self.globals.contains(v) || self.bound.iter().rposition(|b| b == v).is_some_and(|p| p < limit))
    }

    fn inside(&self, v: &str, depth: usize) -> bool {
        let limit = self.frames[depth - 1].inner_start;
        self.bound.iter().rposition(|b| b == v).is_some_and(|p| p >= limit)
    }

    fn classify(&self, e: &Expr, dim: &Expr) -> Option<Dim> {
        if let Some((terms, c)) = linearize(e) {
            if terms.len() == 2 {
                let mut it = terms.iter();
                let (a, b) = (it.next().unwrap(), it.next().unwrap());
                for ((ii, &bb), (i, &one)) in [(a, b), (b, a)] {
                    if one == 1 && bb >= 1 && self.frame_of(ii).is_some() && self.frame_of(i).is_none() {
                        if let Some(extent) = self.extents.get(i) {
                            let (ii, i, extent) = (ii.clone(), i.clone(), extent.clone());
                            return Some(Dim::Tiled { ii, b: bb, i, c, extent });
                        }
                    }
                }
            }
        }
        if let Expr::Var(j) = e {
            if self.frame_of(j).is_none() && self.extents.get(j) == Some(dim) {
                return Some(Dim::Full(Some(j.clone())));
            }
        }
        (!contains_read(e)).then(|| Dim::Inv(e.clone()))
    }

    /// Choose the frame for an access: the deepest frame owning a tiled
    /// index, demoting dimensions whose inner index lives outside it.
    fn place(&self, array: &Name, dims: &mut [Dim], index: &[Option<&Expr>]) -> Option<Key> {
        let depth = loop {
            let depth = dims
                .iter()
                .filter_map(|d| match d {
                    Dim::Tiled { ii, .. } => self.frame_of(ii).map(|f| f + 1),
                    _ => None,
                })
                .max()?;
            let mut changed = false;
            for (d, ix) in dims.iter_mut().zip(index) {
                let demote = match d {
                    Dim::Tiled { i, .. } => !self.inside(i, depth),
                    Dim::Full(Some(j)) => !self.inside(j, depth),
                    _ => false,
                };
                if demote {
                    *d = Dim::Inv((*ix)?.clone());
                    changed = true;
                }
            }
            if !changed {
                break depth;
            }
        };
        let mut keys = Vec::new();
        for (d, extent_dim) in dims.iter().zip(&self.shapes[array]) {
            keys.push(match d {
                Dim::Tiled { ii, b, extent, .. } => {
                    if !self.visible(extent, depth) {
                        return None;
                    }
                    DimKey::Tiled { ii: ii.clone(), b: *b, extent: print_expr(extent) }
                }
                Dim::Full(_) => {
                    if !self.visible(extent_dim, depth) {
                        return None;
                    }
                    DimKey::Full
                }
                Dim::Inv(e) => {
                    if !self.visible(e, depth) {
                        return None;
                    }
                    DimKey::Inv(print_expr(e))
                }
            });
        }
        Some((self.frames[depth - 1].id, array.clone(), keys))
    }

    /// Classify an access; in rewrite mode return the tile access.
    fn access(&mut self, array: &Name, index: &[Option<&Expr>]) -> Option<(Name, Vec<Option<Expr>>)> {
        let shape = self.shapes.get(array)?.clone();
        if shape.len() != index.len() {
            return None;
        }
        let mut dims = Vec::new();
        for (ix, d) in index.iter().zip(&shape) {
            dims.push(match ix {
                None => Dim::Full(None),
                Some(e) => self.classify(e, d)?,
            });
        }
        let key = self.place(array, &mut dims, index)?;
        if !self.rewrite {
            let n = dims.len();
            let g = self.groups.entry(key.clone()).or_insert_with(|| Group {
                name: String::new(),
                dims: key.2.clone(),
                lo: vec![i64::MAX; n],
                hi: vec![i64::MIN; n],
                offsets: vec![Expr::int(0); n],
                shape: vec![Expr::int(1); n],
            });
            for (k, d) in dims.iter().enumerate() {
                match d {
                    Dim::Tiled { ii, b, c, extent, .. } => {
                        g.lo[k] = g.lo[k].min(*c);
                        g.hi[k] = g.hi[k].max(*c);
                        g.offsets[k] = Expr::bin(BinOp::Mul, Expr::var(ii), Expr::int(*b));
                        g.shape[k] = extent.clone();
                    }
                    Dim::Full(_) => g.shape[k] = shape[k].clone(),
                    Dim::Inv(e) => g.offsets[k] = e.clone(),
                }
            }
            return None;
        }
        let g = self.groups.get(&key)?;
        let idx = dims
            .iter()
            .zip(index)
            .enumerate()
            .map(|(k, (d, ix))| match d {
                Dim::Tiled { i, c, .. } => Some(add_const(Expr::var(i), c - g.lo[k])),
                Dim::Full(_) => ix.cloned(),
                Dim::Inv(_) => Some(Expr::int(0)),
            })
            .collect();
        Some((g.name.clone(), idx))
    }

    fn name_groups(&mut self) {
        for ((_, array, _), g) in self.groups.iter_mut() {
            g.name = self.fresh.name(&format!("{array}Tile"));
            for k in 0..g.dims.len() {
                if let DimKey::Tiled { .. } = g.dims[k] {
                    let (lo, hi) = (g.lo[k], g.hi[k]);
                    g.offsets[k] = add_const(g.offsets[k].clone(), lo);
                    g.shape[k] = add_const(g.shape[k].clone(), hi - lo);
                }
            }
        }
    }

    fn copies_for(&self, frame: usize) -> Vec<(Name, Expr)> {
        self.groups
            .iter()
            .filter(|((f, _, _), _)| *f == frame)
            .map(|((_, array, _), g)| {
                let reuse = g
                    .dims
                    .iter()
                    .enumerate()
                    .filter_map(|(k, d)| match d {
                        DimKey::Tiled { b, .. } if g.hi[k] > g.lo[k] => Some((*b, g.hi[k] - g.lo[k])),
                        _ => None,
                    })
                    .max_by_key(|&(_, o)| o)
                    .map(|(b, overlap)| ReuseTag {
                        factor: 1 + (overlap as u64).div_ceil(b as u64) as u32,
                        overlap: overlap as u32,
                    });
                let copy = CopyPat { src: array.clone(), offsets: g.offsets.clone(), shape: g.shape.clone(), reuse };
                (g.name.clone(), Expr::Copy(Box::new(copy)))
            })
            .collect()
    }

    fn walk(&mut self, e: Expr) -> Expr {
        let idx = match &e {
            Expr::Map(m) => m.idx.clone(),
            Expr::MultiFold(m) => m.idx.clone(),
            Expr::FlatMap(f) => f.idx.clone(),
            Expr::GroupByFold(g) => g.idx.clone(),
            _ => vec![],
        };
        if e.is_pattern() {
            let mark = self.bound.len();
            self.bound.extend(idx.iter().cloned());
            let strided = e.is_strided();
            let id = self.frame_count;
            if strided {
                self.frame_count += 1;
                self.frames.push(Frame { id, idx, inner_start: self.bound.len() });
            }
            let e = e.map_children(&mut |c| self.walk(c));
            self.bound.truncate(mark);
            if !strided {
                return e;
            }
            self.frames.pop();
            let copies = if self.rewrite { self.copies_for(id) } else { vec![] };
            if copies.is_empty() {
                return e;
            }
            return insert_lets(e, copies);
        }
        let e = e.map_children(&mut |c| self.walk(c));
        match e {
            Expr::Read(a, idx) => {
                let Expr::Var(n) = a.as_ref() else { return Expr::Read(a, idx) };
                let ix: Vec<Option<&Expr>> = idx.iter().map(Some).collect();
                match self.access(n, &ix) {
                    Some((tile, new)) => Expr::read(Expr::var(tile), new.into_iter().map(Option::unwrap).collect()),
                    None => Expr::Read(a, idx),
                }
            }
            Expr::Slice(s) => {
                let Expr::Var(n) = &s.src else { return Expr::Slice(s) };
                let ix: Vec<Option<&Expr>> = s
                    .index
                    .iter()
                    .map(|i| match i {
                        SliceIndex::Fixed(e) => Some(e),
                        SliceIndex::Free => None,
                    })
                    .collect();
                match self.access(n, &ix) {
                    Some((tile, new)) => Expr::Slice(Box::new(SlicePat {
                        src: Expr::var(tile),
                        index: new
                            .into_iter()
                            .map(|x| match x {
                                Some(e) => SliceIndex::Fixed(e),
                                None => SliceIndex::Free,
                            })
                            .collect(),
                    })),
                    None => Expr::Slice(s),
                }
            }
            other => other,
        }
    }
}

fn insert_lets(e: Expr, lets: Vec<(Name, Expr)>) -> Expr {
    match e {
        Expr::MultiFold(mut m) => {
            m.lets.splice(0..0, lets);
            Expr::MultiFold(m)
        }
        Expr::GroupByFold(mut g) => {
            g.lets.splice(0..0, lets);
            Expr::GroupByFold(g)
        }
        Expr::Map(mut m) => {
            m.body = Expr::with_lets(lets, m.body);
            Expr::Map(m)
        }
        Expr::FlatMap(mut f) => {
            f.body = Expr::with_lets(lets, f.body);
            Expr::FlatMap(f)
        }
        other => other,
    }
}

/// Affine form of an integer index: coefficient per variable plus a constant.
fn linearize(e: &Expr) -> Option<(BTreeMap<Name, i64>, i64)> {
    let (mut terms, c) = lin(e)?;
    terms.retain(|_, k| *k != 0);
    Some((terms, c))
}

fn lin(e: &Expr) -> Option<(BTreeMap<Name, i64>, i64)> {
    match e {
        Expr::Lit(Lit::Int(v)) => Some((BTreeMap::new(), *v)),
        Expr::Var(n) => Some((BTreeMap::from([(n.clone(), 1)]), 0)),
        Expr::Unary(crate::ir::UnOp::Neg, a) => {
            let (t, c) = lin(a)?;
            Some((t.into_iter().map(|(n, k)| (n, -k)).collect(), -c))
        }
        Expr::Binary(op @ (BinOp::Add | BinOp::Sub), a, b) => {
            let (mut t, c) = lin(a)?;
            let (u, d) = lin(b)?;
            let sign = if *op == BinOp::Add { 1 } else { -1 };
            for (n, k) in u {
                *t.entry(n).or_insert(0) += sign * k;
            }
            Some((t, c + sign * d))
        }
        Expr::Binary(BinOp::Mul, a, b) => {
            let (ta, ca) = lin(a)?;
            let (tb, cb) = lin(b)?;
            let scale = |t: BTreeMap<Name, i64>, k: i64| t.into_iter().map(|(n, x)| (n, x * k)).collect();
            match (ta.is_empty(), tb.is_empty()) {
                (true, _) => Some((scale(tb, ca), ca * cb)),
                (_, true) => Some((scale(ta, cb), ca * cb)),
                _ => None,
            }
        }
        _ => None,
    }
}

fn add_const(e: Expr, c: i64) -> Expr {
    match c {
        0 => e,
        c if c > 0 => Expr::bin(BinOp::Add, e, Expr::int(c)),
        c => Expr::bin(BinOp::Sub, e, Expr::int(-c)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{equivalent, random_inputs, run, Options, DEFAULT_TOL};
    use crate::syntax::parse;
    use crate::transform::strip_mine;
    use rand::SeedableRng;

    fn sizes(pairs: &[(&str, u64)]) -> BTreeMap<Name, u64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn table2_map_reads_a_tile() {
        let p = parse("input x : Float[d] dynamic\ny = map(d){ i => 2.0 * x(i) }\noutput y\n").unwrap();
        let cfg = TileConfig::default().tile("d", 4);
        let t = localize_tiles(&strip_mine(&p, &cfg).unwrap(), &cfg);
        let text = crate::syntax::print_program(&t);
        assert!(text.contains("xTile = x.copy(ii * 4)(min(4, d - ii * 4))"), "{text}");
        assert!(text.contains("xTile(i)"), "{text}");
    }

    #[test]
    fn stencil_gets_reuse_tag() {
        let src = "input x : Float[n] dynamic\n\
                   y = map(n){ i => x(i - 1) + x(i) + x(i + 1) }\noutput y\n";
        let p = parse(src).unwrap();
        let cfg = TileConfig::default().tile("n", 8);
        let t = localize_tiles(&strip_mine(&p, &cfg).unwrap(), &cfg);
        let text = crate::syntax::print_program(&t);
        assert!(text.contains("x.copy(ii * 8 - 1)(min(8, n - ii * 8) + 2).reuse(2, 2)"), "{text}");
    }

    #[test]
    fn data_dependent_index_is_left_alone() {
        let src = "input x : Float[n] dynamic\ninput perm : Int[n] dynamic\n\
                   y = map(n){ i => x(perm(i)) }\noutput y\n";
        let p = parse(src).unwrap();
        let cfg = TileConfig::default().tile("n", 4);
        let t = localize_tiles(&strip_mine(&p, &cfg).unwrap(), &cfg);
        let na = non_affine_accesses(&t);
        assert_eq!(na.len(), 1);
        assert_eq!(na[0].array, "x");
    }

    #[test]
    fn corpus_localizes_soundly_without_more_reads() {
        for name in crate::corpus::NAMES {
            let p = crate::corpus::program(name).unwrap();
            let mut cfg = TileConfig::default();
            for s in p.size_symbols().into_iter().chain(p.static_sizes.clone()) {
                cfg = cfg.tile(&s, 3);
            }
            let s = strip_mine(&p, &cfg).unwrap();
            let t = localize_tiles(&s, &cfg);
            assert!(crate::ir::validate(&t).is_empty(), "{name}");
            let sz = sizes(&[("m", 7), ("n", 8), ("p", 5), ("d", 4), ("k", 5)]);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
            let inputs = random_inputs(&p, &sz, &mut rng);
            equivalent(&s, &t, &inputs, DEFAULT_TOL).unwrap();
            let before = run(&s, &inputs, Options::instrumented()).unwrap().stats.reads.values().sum::<u64>();
            let after = run(&t, &inputs, Options::instrumented()).unwrap().stats.reads.values().sum::<u64>();
            assert!(after <= before, "{name}: {after} > {before}");
        }
    }
}
