use std::collections::BTreeSet;

use super::{
    CopyPat, Expr, FlatMapPat, GroupByFoldPat, GroupGen, MapPat, MultiFoldPat, Name, Program, SliceIndex, SlicePat,
};

impl Expr {
    /// Direct sub-expressions, in evaluation order.
    pub fn children(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        match self {
            Expr::Lit(_) | Expr::Var(_) => {}
            Expr::Read(a, idx) => {
                out.push(a.as_ref());
                out.extend(idx);
            }
            Expr::Unary(_, a) | Expr::Proj(a, _) | Expr::Len(a) => out.push(a),
            Expr::Binary(_, a, b) => {
                out.push(a);
                out.push(b);
            }
            Expr::If(c, t, e) => {
                out.push(c);
                out.push(t);
                out.push(e);
            }
            Expr::Tuple(es) | Expr::ArrayLit(es) => out.extend(es),
            Expr::Let(_, v, b) => {
                out.push(v);
                out.push(b);
            }
            Expr::Fill(shape, v) => {
                out.extend(shape);
                out.push(v);
            }
            Expr::Map(m) => {
                out.extend(&m.dims);
                out.push(&m.body);
            }
            Expr::MultiFold(m) => {
                out.extend(&m.dims);
                for r in &m.ranges {
                    out.extend(r);
                }
                out.push(&m.init);
                out.extend(m.lets.iter().map(|(_, v)| v));
                for u in &m.updates {
                    out.extend(&u.loc);
                    if let Some(s) = &u.slice {
                        out.extend(s);
                    }
                    out.push(&u.body);
                }
                if let Some(c) = &m.combine {
                    out.push(&c.body);
                }
            }
            Expr::FlatMap(f) => {
                out.extend(&f.dims);
                out.push(&f.body);
            }
            Expr::GroupByFold(g) => {
                out.extend(&g.dims);
                out.push(&g.init);
                out.extend(g.lets.iter().map(|(_, v)| v));
                match &g.gen {
                    GroupGen::Keyed { key, update, .. } => {
                        out.push(key);
                        out.push(update);
                    }
                    GroupGen::Merge(e) => out.push(e),
                }
                out.push(&g.combine.body);
            }
            Expr::Copy(c) => {
                out.extend(&c.offsets);
                out.extend(&c.shape);
            }
            Expr::Slice(s) => {
                out.push(&s.src);
                for i in &s.index {
                    if let SliceIndex::Fixed(e) = i {
                        out.push(e);
                    }
                }
            }
        }
        out
    }

    /// Rebuild this node with every direct sub-expression passed through `f`.
    /// Binder names are untouched.
    pub fn map_children(self, f: &mut impl FnMut(Expr) -> Expr) -> Expr {
        let fv = |v: Vec<Expr>, f: &mut dyn FnMut(Expr) -> Expr| v.into_iter().map(f).collect::<Vec<_>>();
        match self {
            e @ (Expr::Lit(_) | Expr::Var(_)) => e,
            Expr::Read(a, idx) => Expr::Read(Box::new(f(*a)), fv(idx, f)),
            Expr::Unary(op, a) => Expr::Unary(op, Box::new(f(*a))),
            Expr::Proj(a, i) => Expr::Proj(Box::new(f(*a)), i),
            Expr::Len(a) => Expr::Len(Box::new(f(*a))),
            Expr::Binary(op, a, b) => {
                let a = f(*a);
                Expr::Binary(op, Box::new(a), Box::new(f(*b)))
            }
            Expr::If(c, t, e) => {
                let c = f(*c);
                let t = f(*t);
                Expr::If(Box::new(c), Box::new(t), Box::new(f(*e)))
            }
            Expr::Tuple(es) => Expr::Tuple(fv(es, f)),
            Expr::ArrayLit(es) => Expr::ArrayLit(fv(es, f)),
            Expr::Let(n, v, b) => {
                let v = f(*v);
                Expr::Let(n, Box::new(v), Box::new(f(*b)))
            }
            Expr::Fill(shape, v) => {
                let shape = fv(shape, f);
                Expr::Fill(shape, Box::new(f(*v)))
            }
            Expr::Map(m) => {
                let MapPat { dims, idx, body } = *m;
                let dims = fv(dims, f);
                Expr::Map(Box::new(MapPat { dims, idx, body: f(body) }))
            }
            Expr::MultiFold(m) => {
                let MultiFoldPat { dims, idx, ranges, init, lets, updates, combine } = *m;
                let dims = fv(dims, f);
                let ranges = ranges.into_iter().map(|r| fv(r, f)).collect();
                let init = f(init);
                let lets = lets.into_iter().map(|(n, v)| (n, f(v))).collect();
                let updates = updates
                    .into_iter()
                    .map(|mut u| {
                        u.loc = fv(u.loc, f);
                        u.slice = u.slice.map(|s| fv(s, f));
                        u.body = f(u.body);
                        u
                    })
                    .collect();
                let combine = combine.map(|mut c| {
                    c.body = f(c.body);
                    c
                });
                Expr::MultiFold(Box::new(MultiFoldPat { dims, idx, ranges, init, lets, updates, combine }))
            }
            Expr::FlatMap(m) => {
                let FlatMapPat { dims, idx, body } = *m;
                let dims = fv(dims, f);
                Expr::FlatMap(Box::new(FlatMapPat { dims, idx, body: f(body) }))
            }
            Expr::GroupByFold(g) => {
                let GroupByFoldPat { dims, idx, init, lets, gen, mut combine } = *g;
                let dims = fv(dims, f);
                let init = f(init);
                let lets = lets.into_iter().map(|(n, v)| (n, f(v))).collect();
                let gen = match gen {
                    GroupGen::Keyed { key, acc, update } => {
                        let key = f(key);
                        GroupGen::Keyed { key, acc, update: f(update) }
                    }
                    GroupGen::Merge(e) => GroupGen::Merge(f(e)),
                };
                combine.body = f(combine.body);
                Expr::GroupByFold(Box::new(GroupByFoldPat { dims, idx, init, lets, gen, combine }))
            }
            Expr::Copy(c) => {
                let CopyPat { src, offsets, shape, reuse } = *c;
                let offsets = fv(offsets, f);
                Expr::Copy(Box::new(CopyPat { src, offsets, shape: fv(shape, f), reuse }))
            }
            Expr::Slice(s) => {
                let SlicePat { src, index } = *s;
                let src = f(src);
                let index = index
                    .into_iter()
                    .map(|i| match i {
                        SliceIndex::Fixed(e) => SliceIndex::Fixed(f(e)),
                        SliceIndex::Free => SliceIndex::Free,
                    })
                    .collect();
                Expr::Slice(Box::new(SlicePat { src, index }))
            }
        }
    }

    /// Every binder name introduced anywhere in this expression.
    pub fn binders(&self) -> Vec<Name> {
        let mut out = Vec::new();
        collect_binders(self, &mut out);
        out
    }
}

fn collect_binders(e: &Expr, out: &mut Vec<Name>) {
    out.extend(own_binders(e));
    for c in e.children() {
        collect_binders(c, out);
    }
}

/// Binders introduced by this node itself, not by its children.
pub(crate) fn own_binders(e: &Expr) -> Vec<Name> {
    let mut out = Vec::new();
    match e {
        Expr::Let(n, _, _) => out.push(n.clone()),
        Expr::Map(m) => out.extend(m.idx.iter().cloned()),
        Expr::MultiFold(m) => {
            out.extend(m.idx.iter().cloned());
            out.extend(m.lets.iter().map(|(n, _)| n.clone()));
            out.extend(m.updates.iter().map(|u| u.acc.clone()));
            if let Some(c) = &m.combine {
                out.push(c.lhs.clone());
                out.push(c.rhs.clone());
            }
        }
        Expr::FlatMap(f) => out.extend(f.idx.iter().cloned()),
        Expr::GroupByFold(g) => {
            out.extend(g.idx.iter().cloned());
            out.extend(g.lets.iter().map(|(n, _)| n.clone()));
            if let GroupGen::Keyed { acc, .. } = &g.gen {
                out.push(acc.clone());
            }
            out.push(g.combine.lhs.clone());
            out.push(g.combine.rhs.clone());
        }
        _ => {}
    }
    out
}

/// Free variables of `e` (array ids, size symbols, enclosing binders).
pub fn free_vars(e: &Expr) -> BTreeSet<Name> {
    let mut out = BTreeSet::new();
    let mut bound = Vec::new();
    fv(e, &mut bound, &mut out);
    out
}

fn fv(e: &Expr, bound: &mut Vec<Name>, out: &mut BTreeSet<Name>) {
    let base = bound.len();
    match e {
        Expr::Var(n) => {
            if !bound.contains(n) {
                out.insert(n.clone());
            }
        }
        Expr::Let(n, v, b) => {
            fv(v, bound, out);
            bound.push(n.clone());
            fv(b, bound, out);
        }
        Expr::Map(m) => {
            m.dims.iter().for_each(|d| fv(d, bound, out));
            bound.extend(m.idx.iter().cloned());
            fv(&m.body, bound, out);
        }
        Expr::MultiFold(m) => {
            m.dims.iter().for_each(|d| fv(d, bound, out));
            m.ranges.iter().flatten().for_each(|d| fv(d, bound, out));
            fv(&m.init, bound, out);
            if let Some(c) = &m.combine {
                bound.push(c.lhs.clone());
                bound.push(c.rhs.clone());
                fv(&c.body, bound, out);
                bound.truncate(base);
            }
            bound.extend(m.idx.iter().cloned());
            for (n, v) in &m.lets {
                fv(v, bound, out);
                bound.push(n.clone());
            }
            for u in &m.updates {
                u.loc.iter().for_each(|d| fv(d, bound, out));
                u.slice.iter().flatten().for_each(|d| fv(d, bound, out));
                bound.push(u.acc.clone());
                fv(&u.body, bound, out);
                bound.pop();
            }
        }
        Expr::FlatMap(f) => {
            f.dims.iter().for_each(|d| fv(d, bound, out));
            bound.extend(f.idx.iter().cloned());
            fv(&f.body, bound, out);
        }
        Expr::GroupByFold(g) => {
            g.dims.iter().for_each(|d| fv(d, bound, out));
            fv(&g.init, bound, out);
            bound.push(g.combine.lhs.clone());
            bound.push(g.combine.rhs.clone());
            fv(&g.combine.body, bound, out);
            bound.truncate(base);
            bound.extend(g.idx.iter().cloned());
            for (n, v) in &g.lets {
                fv(v, bound, out);
                bound.push(n.clone());
            }
            match &g.gen {
                GroupGen::Keyed { key, acc, update } => {
                    fv(key, bound, out);
                    bound.push(acc.clone());
                    fv(update, bound, out);
                }
                GroupGen::Merge(e) => fv(e, bound, out),
            }
        }
        Expr::Copy(c) => {
            if !bound.contains(&c.src) {
                out.insert(c.src.clone());
            }
            for x in c.offsets.iter().chain(&c.shape) {
                fv(x, bound, out);
            }
        }
        _ => {
            for c in e.children() {
                fv(c, bound, out);
            }
        }
    }
    bound.truncate(base);
}

pub fn mentions(e: &Expr, name: &str) -> bool {
    free_vars(e).contains(name)
}

pub fn contains_read(e: &Expr) -> bool {
    matches!(e, Expr::Read(..)) || e.children().into_iter().any(contains_read)
}

pub fn contains_pattern(e: &Expr) -> bool {
    e.is_pattern() || e.children().into_iter().any(contains_pattern)
}

/// Replace free occurrences of `name` with `with`. Binder names are assumed
/// unique, so no capture-avoiding renaming is attempted; substitution stops
/// at a binder that shadows `name`.
pub fn substitute(e: Expr, name: &str, with: &Expr) -> Expr {
    subst_by(e, name, &mut |_| with.clone())
}

/// Rename free occurrences of variable `from` (including copy sources).
pub fn rename_var(e: Expr, from: &str, to: &str) -> Expr {
    let mut e = substitute(e, from, &Expr::var(to));
    rename_copy_src(&mut e, from, to);
    e
}

fn rename_copy_src(e: &mut Expr, from: &str, to: &str) {
    if let Expr::Copy(c) = e {
        if c.src == from {
            c.src = to.to_string();
        }
    }
    let taken = std::mem::replace(e, Expr::int(0));
    *e = taken.map_children(&mut |mut c| {
        rename_copy_src(&mut c, from, to);
        c
    });
}

fn shadows(e: &Expr, name: &str) -> bool {
    match e {
        Expr::Map(m) => m.idx.iter().any(|n| n == name),
        Expr::FlatMap(f) => f.idx.iter().any(|n| n == name),
        _ => false,
    }
}

fn subst_by(e: Expr, name: &str, with: &mut dyn FnMut(&Expr) -> Expr) -> Expr {
    match e {
        Expr::Var(ref n) if n == name => with(&e),
        Expr::Let(n, v, b) => {
            let v = subst_by(*v, name, with);
            let b = if n == name { *b } else { subst_by(*b, name, with) };
            Expr::Let(n, Box::new(v), Box::new(b))
        }
        ref m if shadows(m, name) => {
            // Only the domain extents can still see the outer binding.
            match e {
                Expr::Map(mut m) => {
                    m.dims = m.dims.into_iter().map(|d| subst_by(d, name, with)).collect();
                    Expr::Map(m)
                }
                Expr::FlatMap(mut f) => {
                    f.dims = f.dims.into_iter().map(|d| subst_by(d, name, with)).collect();
                    Expr::FlatMap(f)
                }
                _ => unreachable!(),
            }
        }
        Expr::MultiFold(m) if m.idx.iter().any(|n| n == name) || m.lets.iter().any(|(n, _)| n == name) => {
            let mut m = *m;
            m.dims = m.dims.into_iter().map(|d| subst_by(d, name, with)).collect();
            m.ranges = m.ranges.into_iter().map(|r| r.into_iter().map(|d| subst_by(d, name, with)).collect()).collect();
            m.init = subst_by(m.init, name, with);
            if let Some(c) = m.combine.as_mut() {
                if c.lhs != name && c.rhs != name {
                    c.body = subst_by(std::mem::replace(&mut c.body, Expr::int(0)), name, with);
                }
            }
            Expr::MultiFold(Box::new(m))
        }
        Expr::MultiFold(m) => {
            let mut m = *m;
            m.dims = m.dims.into_iter().map(|d| subst_by(d, name, with)).collect();
            m.ranges = m.ranges.into_iter().map(|r| r.into_iter().map(|d| subst_by(d, name, with)).collect()).collect();
            m.init = subst_by(m.init, name, with);
            m.lets = m.lets.into_iter().map(|(n, v)| (n, subst_by(v, name, with))).collect();
            for u in m.updates.iter_mut() {
                u.loc = std::mem::take(&mut u.loc).into_iter().map(|d| subst_by(d, name, with)).collect();
                u.slice = u.slice.take().map(|s| s.into_iter().map(|d| subst_by(d, name, with)).collect());
                if u.acc != name {
                    u.body = subst_by(std::mem::replace(&mut u.body, Expr::int(0)), name, with);
                }
            }
            if let Some(c) = m.combine.as_mut() {
                if c.lhs != name && c.rhs != name {
                    c.body = subst_by(std::mem::replace(&mut c.body, Expr::int(0)), name, with);
                }
            }
            Expr::MultiFold(Box::new(m))
        }
        Expr::GroupByFold(g) => {
            let mut g = *g;
            g.dims = g.dims.into_iter().map(|d| subst_by(d, name, with)).collect();
            g.init = subst_by(g.init, name, with);
            if g.combine.lhs != name && g.combine.rhs != name {
                g.combine.body = subst_by(std::mem::replace(&mut g.combine.body, Expr::int(0)), name, with);
            }
            if g.idx.iter().any(|n| n == name) || g.lets.iter().any(|(n, _)| n == name) {
                return Expr::GroupByFold(Box::new(g));
            }
            g.lets = g.lets.into_iter().map(|(n, v)| (n, subst_by(v, name, with))).collect();
            g.gen = match g.gen {
                GroupGen::Keyed { key, acc, update } => {
                    let key = subst_by(key, name, with);
                    let update = if acc == name { update } else { subst_by(update, name, with) };
                    GroupGen::Keyed { key, acc, update }
                }
                GroupGen::Merge(e) => GroupGen::Merge(subst_by(e, name, with)),
            };
            Expr::GroupByFold(Box::new(g))
        }
        other => other.map_children(&mut |c| subst_by(c, name, with)),
    }
}

/// Fresh-name supply that avoids every name already used in a program.
#[derive(Clone, Debug, Default)]
pub struct Fresh {
    used: BTreeSet<Name>,
}

impl Fresh {
    pub fn for_program(p: &Program) -> Fresh {
        let mut used = BTreeSet::new();
        for i in &p.inputs {
            used.insert(i.name.clone());
            for e in &i.shape {
                used.extend(free_vars(e));
            }
        }
        used.extend(p.static_sizes.iter().cloned());
        for b in &p.bindings {
            used.extend(b.names.iter().cloned());
            used.extend(b.value.binders());
            used.extend(free_vars(&b.value));
        }
        Fresh { used }
    }

    pub fn reserve(&mut self, name: &str) {
        self.used.insert(name.to_string());
    }

    pub fn name(&mut self, base: &str) -> Name {
        let base = base.trim_end_matches(|c: char| c.is_ascii_digit());
        let base = if base.is_empty() { "t" } else { base };
        if self.used.insert(base.to_string()) {
            return base.to_string();
        }
        let mut k = 1;
        loop {
            let cand = format!("{base}{k}");
            if self.used.insert(cand.clone()) {
                return cand;
            }
            k += 1;
        }
    }

    /// Rename every binder inside `e` to a fresh name. Used whenever a
    /// subtree is duplicated so binder names stay unique program-wide.
    pub fn freshen(&mut self, e: Expr) -> Expr {
        let mut out = e;
        for b in out.binders() {
            let nb = self.name(&b);
            out = rename_binder(out, &b, &nb);
        }
        out
    }
}

fn rename_binder(e: Expr, from: &str, to: &str) -> Expr {
    let r = |n: &mut Name| {
        if n == from {
            *n = to.to_string();
        }
    };
    let e = match e {
        Expr::Let(mut n, v, b) => {
            let hit = n == from;
            r(&mut n);
            let b = if hit { rename_var(*b, from, to) } else { *b };
            Expr::Let(n, v, Box::new(b))
        }
        Expr::Map(mut m) => {
            if m.idx.iter().any(|n| n == from) {
                m.idx.iter_mut().for_each(r);
                m.body = rename_var(m.body, from, to);
            }
            Expr::Map(m)
        }
        Expr::FlatMap(mut f) => {
            if f.idx.iter().any(|n| n == from) {
                f.idx.iter_mut().for_each(r);
                f.body = rename_var(f.body, from, to);
            }
            Expr::FlatMap(f)
        }
        Expr::MultiFold(mut m) => {
            if let Some(c) = m.combine.as_mut() {
                if c.lhs == from || c.rhs == from {
                    r(&mut c.lhs);
                    r(&mut c.rhs);
                    c.body = rename_var(std::mem::replace(&mut c.body, Expr::int(0)), from, to);
                }
            }
            for u in m.updates.iter_mut() {
                if u.acc == from {
                    u.acc = to.to_string();
                    u.body = rename_var(std::mem::replace(&mut u.body, Expr::int(0)), from, to);
                }
            }
            let in_idx = m.idx.iter().any(|n| n == from);
            let let_pos = m.lets.iter().position(|(n, _)| n == from);
            if in_idx || let_pos.is_some() {
                m.idx.iter_mut().for_each(r);
                let start = let_pos.map(|p| p + 1).unwrap_or(0);
                if let Some(p) = let_pos {
                    m.lets[p].0 = to.to_string();
                }
                for (i, l) in m.lets.iter_mut().enumerate() {
                    if i >= start {
                        l.1 = rename_var(std::mem::replace(&mut l.1, Expr::int(0)), from, to);
                    }
                }
                for u in m.updates.iter_mut() {
                    u.loc = std::mem::take(&mut u.loc).into_iter().map(|x| rename_var(x, from, to)).collect();
                    u.slice = u.slice.take().map(|s| s.into_iter().map(|x| rename_var(x, from, to)).collect());
                    u.body = rename_var(std::mem::replace(&mut u.body, Expr::int(0)), from, to);
                }
            }
            Expr::MultiFold(m)
        }
        Expr::GroupByFold(mut g) => {
            if g.combine.lhs == from || g.combine.rhs == from {
                r(&mut g.combine.lhs);
                r(&mut g.combine.rhs);
                g.combine.body = rename_var(std::mem::replace(&mut g.combine.body, Expr::int(0)), from, to);
            }
            if let GroupGen::Keyed { acc, update, .. } = &mut g.gen {
                if acc == from {
                    *acc = to.to_string();
                    *update = rename_var(std::mem::replace(update, Expr::int(0)), from, to);
                }
            }
            let let_pos = g.lets.iter().position(|(n, _)| n == from);
            if g.idx.iter().any(|n| n == from) || let_pos.is_some() {
                g.idx.iter_mut().for_each(r);
                let start = let_pos.map(|p| p + 1).unwrap_or(0);
                if let Some(p) = let_pos {
                    g.lets[p].0 = to.to_string();
                }
                for (i, l) in g.lets.iter_mut().enumerate() {
                    if i >= start {
                        l.1 = rename_var(std::mem::replace(&mut l.1, Expr::int(0)), from, to);
                    }
                }
                g.gen = match g.gen {
                    GroupGen::Keyed { key, acc, update } => GroupGen::Keyed {
                        key: rename_var(key, from, to),
                        update: if acc == to { update } else { rename_var(update, from, to) },
                        acc,
                    },
                    GroupGen::Merge(e) => GroupGen::Merge(rename_var(e, from, to)),
                };
            }
            Expr::GroupByFold(g)
        }
        other => other,
    };
    e.map_children(&mut |c| rename_binder(c, from, to))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::BinOp;

    #[test]
    fn free_vars_respects_binders() {
        let e = Expr::Map(Box::new(MapPat {
            dims: vec![Expr::var("n")],
            idx: vec!["i".into()],
            body: Expr::bin(BinOp::Mul, Expr::var("k"), Expr::read(Expr::var("x"), vec![Expr::var("i")])),
        }));
        let fv = free_vars(&e);
        assert_eq!(fv.into_iter().collect::<Vec<_>>(), vec!["k", "n", "x"]);
    }

    #[test]
    fn substitute_stops_at_shadowing_binder() {
        let e = Expr::let_in("a", Expr::var("a"), Expr::var("a"));
        let s = substitute(e, "a", &Expr::int(3));
        assert_eq!(s, Expr::let_in("a", Expr::int(3), Expr::var("a")));
    }

    #[test]
    fn freshen_renames_all_binders() {
        let mut fresh = Fresh::default();
        fresh.reserve("i");
        let e = Expr::Map(Box::new(MapPat {
            dims: vec![Expr::int(4)],
            idx: vec!["i".into()],
            body: Expr::read(Expr::var("x"), vec![Expr::var("i")]),
        }));
        let f = fresh.freshen(e);
        match f {
            Expr::Map(m) => {
                assert_eq!(m.idx, vec!["i1".to_string()]);
                assert_eq!(m.body, Expr::read(Expr::var("x"), vec![Expr::var("i1")]));
            }
            _ => panic!(),
        }
    }
}
