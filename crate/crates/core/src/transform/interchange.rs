use std::collections::BTreeSet;

use super::{localize_tiles, uniquify, zero_locs, TileConfig};
use crate::ir::{
    free_vars, shape_words, substitute, BinOp, Combine, Expr, Fresh, Lit, MapPat, MultiFoldPat, Name, Program,
    StaticEnv, TypeEnv, Update,
};

/// Rule 1: `map(D){ i => lets; fold(F)(z){..}{c} }` becomes a fold over `F`
/// of a map over `D`, with the combine lifted elementwise. The inner fold
/// must be a scalar fold whose domain and init do not depend on the map.
pub fn rule1(e: &Expr, fresh: &mut Fresh) -> Option<Expr> {
    let Expr::Map(m) = e else { return None };
    let (maplets, last) = m.body.peel_lets();
    let Expr::MultiFold(f) = last else { return None };
    if !f.is_scalar_fold() {
        return None;
    }
    let c = f.combine.as_ref()?;
    let mut dep: BTreeSet<Name> = m.idx.iter().cloned().collect();
    dep.extend(maplets.iter().map(|(n, _)| (*n).clone()));
    let touches = |x: &Expr, dep: &BTreeSet<Name>| free_vars(x).iter().any(|v| dep.contains(v));
    if f.dims.iter().any(|d| touches(d, &dep)) || touches(&f.init, &dep) {
        return None;
    }
    let mut outer = Vec::new();
    let mut inner: Vec<(Name, Expr)> = maplets.iter().map(|(n, v)| ((*n).clone(), (*v).clone())).collect();
    for (n, v) in &f.lets {
        if touches(v, &dep) {
            dep.insert(n.clone());
            inner.push((n.clone(), v.clone()));
        } else {
            outer.push((n.clone(), v.clone()));
        }
    }
    let u = &f.updates[0];
    let acc = fresh.name("acc");
    let elem = Expr::read(Expr::var(&acc), m.idx.iter().map(Expr::var).collect());
    let body = Expr::Map(Box::new(MapPat {
        dims: m.dims.clone(),
        idx: m.idx.clone(),
        body: Expr::with_lets(inner, substitute(u.body.clone(), &u.acc, &elem)),
    }));
    let (l, r) = (fresh.name(&c.lhs), fresh.name(&c.rhs));
    let js: Vec<Name> = m.idx.iter().map(|i| fresh.name(i)).collect();
    let at = |n: &str| Expr::read(Expr::var(n), js.iter().map(Expr::var).collect());
    let cbody = substitute(substitute(c.body.clone(), &c.lhs, &at(&l)), &c.rhs, &at(&r));
    Some(Expr::MultiFold(Box::new(MultiFoldPat {
        dims: f.dims.clone(),
        idx: f.idx.clone(),
        ranges: vec![m.dims.clone()],
        init: Expr::Fill(m.dims.clone(), Box::new(f.init.clone())),
        lets: outer,
        updates: vec![Update { loc: zero_locs(m.dims.len()), slice: Some(m.dims.clone()), acc, body }],
        combine: Some(Combine {
            lhs: l,
            rhs: r,
            body: Expr::Map(Box::new(MapPat { dims: m.dims.clone(), idx: js, body: cbody })),
        }),
    })))
}

/// An elementwise map over an accumulator-shaped domain: either a plain
/// `map(D)` or the strip-mined form of one.
struct Elementwise {
    /// Index expressions addressing the current element of the full domain.
    at: Vec<Expr>,
    body: Expr,
    /// Every index bound by the map (and its tile loop).
    bound: Vec<Name>,
}

fn elementwise(e: &Expr, domain: &[Expr]) -> Option<Elementwise> {
    match e {
        Expr::Map(m) if m.dims == domain => {
            Some(Elementwise { at: m.idx.iter().map(Expr::var).collect(), body: m.body.clone(), bound: m.idx.clone() })
        }
        Expr::MultiFold(t) => {
            let (map, loc) = tiled_map(t)?;
            if t.ranges[0] != domain {
                return None;
            }
            let at = loc
                .iter()
                .zip(&map.idx)
                .map(|(l, i)| match l {
                    Expr::Lit(Lit::Int(0)) => Expr::var(i),
                    l => Expr::bin(BinOp::Add, l.clone(), Expr::var(i)),
                })
                .collect();
            let mut bound = t.idx.clone();
            bound.extend(map.idx.iter().cloned());
            Some(Elementwise { at, body: map.body.clone(), bound })
        }
        _ => None,
    }
}

/// The strip-mined map shape: a strided fold with no combine whose single
/// update writes a map over the tile.
fn tiled_map(t: &MultiFoldPat) -> Option<(&MapPat, &[Expr])> {
    if t.combine.is_some() || t.ranges.len() != 1 || t.updates.len() != 1 || !t.lets.is_empty() {
        return None;
    }
    let u = &t.updates[0];
    let Expr::Map(map) = &u.body else { return None };
    if crate::ir::mentions(&map.body, &u.acc) || u.slice.as_ref() != Some(&map.dims) {
        return None;
    }
    Some((map, &u.loc))
}

/// Replace reads `arr(at)` by `with`; fails if `arr` is used any other way.
pub(crate) fn replace_reads(e: &Expr, arr: &str, at: &[Expr], with: &Expr) -> Option<Expr> {
    match e {
        Expr::Read(a, idx) if matches!(a.as_ref(), Expr::Var(v) if v == arr) => (idx == at).then(|| with.clone()),
        Expr::Var(v) if v == arr => None,
        Expr::Copy(c) if c.src == arr => None,
        _ => {
            let mut ok = true;
            let out = e.clone().map_children(&mut |c| match replace_reads(&c, arr, at, with) {
                Some(x) => x,
                None => {
                    ok = false;
                    c
                }
            });
            ok.then_some(out)
        }
    }
}

/// Rule 2, the inverse of rule 1: a fold over an elementwise map (plain or
/// strip-mined) becomes that map of a scalar fold.
pub fn rule2(e: &Expr, fresh: &mut Fresh) -> Option<Expr> {
    let Expr::MultiFold(f) = e else { return None };
    if f.ranges.len() != 1 || f.ranges[0].is_empty() || !f.is_fold() {
        return None;
    }
    let domain = &f.ranges[0];
    let c = f.combine.as_ref()?;
    let u = &f.updates[0];
    let z = match &f.init {
        Expr::Fill(shape, z) if shape == domain => z.as_ref().clone(),
        Expr::Map(m) if &m.dims == domain && !m.idx.iter().any(|i| crate::ir::mentions(&m.body, i)) => m.body.clone(),
        _ => return None,
    };
    let ew = elementwise(&u.body, domain)?;
    let cw = elementwise(&c.body, domain)?;
    let acc = fresh.name("acc");
    let (l, r) = (fresh.name(&c.lhs), fresh.name(&c.rhs));
    let ub = replace_reads(&ew.body, &u.acc, &ew.at, &Expr::var(&acc))?;
    let cb = replace_reads(&cw.body, &c.lhs, &cw.at, &Expr::var(&l))?;
    let cb = replace_reads(&cb, &c.rhs, &cw.at, &Expr::var(&r))?;
    if free_vars(&cb).iter().any(|v| cw.bound.contains(v)) {
        return None;
    }
    // Map-body lets independent of the fold's iteration stay on the map.
    let (lets, last) = ub.peel_lets();
    let mut scope: BTreeSet<Name> = f.idx.iter().cloned().collect();
    scope.extend(f.lets.iter().map(|(n, _)| n.clone()));
    scope.insert(acc.clone());
    let mut maplets = Vec::new();
    let mut foldlets = f.lets.clone();
    let mut rest = Vec::new();
    for (n, v) in lets {
        let fv = free_vars(v);
        if fv.contains(&acc) || fv.iter().any(|x| rest.iter().any(|(m, _): &(Name, Expr)| m == x)) {
            rest.push((n.clone(), v.clone()));
        } else if fv.iter().any(|x| scope.contains(x)) {
            scope.insert(n.clone());
            foldlets.push((n.clone(), v.clone()));
        } else {
            maplets.push((n.clone(), v.clone()));
        }
    }
    let fold = Expr::MultiFold(Box::new(MultiFoldPat {
        dims: f.dims.clone(),
        idx: f.idx.clone(),
        ranges: vec![vec![]],
        init: z,
        lets: foldlets,
        updates: vec![Update { loc: vec![], slice: None, acc, body: Expr::with_lets(rest, last.clone()) }],
        combine: Some(Combine { lhs: l, rhs: r, body: cb }),
    }));
    let body = Expr::with_lets(maplets, fold);
    Some(match &u.body {
        Expr::Map(m) => Expr::Map(Box::new(MapPat { dims: m.dims.clone(), idx: m.idx.clone(), body })),
        Expr::MultiFold(t) => {
            let mut t = t.as_ref().clone();
            let Expr::Map(map) = &mut t.updates[0].body else { unreachable!() };
            map.body = body;
            Expr::MultiFold(Box::new(t))
        }
        _ => unreachable!(),
    })
}

fn rule1_applies(e: &Expr) -> bool {
    let Expr::Map(m) = e else { return false };
    !e.is_strided()
        && matches!(m.body.peel_lets().1, Expr::MultiFold(f) if f.is_scalar_fold() && Expr::MultiFold(f.clone()).is_strided())
}

fn rule2_applies(e: &Expr) -> bool {
    let Expr::MultiFold(f) = e else { return false };
    !e.is_strided()
        && f.updates.len() == 1
        && matches!(&f.updates[0].body, Expr::MultiFold(t) if tiled_map(t).is_some() && f.updates[0].body.is_strided())
}

fn rewrite(e: Expr, fresh: &mut Fresh, changed: &mut bool) -> Expr {
    let e = e.map_children(&mut |c| rewrite(c, fresh, changed));
    let next = if rule1_applies(&e) {
        rule1(&e, fresh)
    } else if rule2_applies(&e) {
        rule2(&e, fresh)
    } else {
        None
    };
    match next {
        Some(n) => {
            *changed = true;
            n
        }
        None => e,
    }
}

/// Move strided folds out of unstrided maps (rule 1) and strip-mined maps
/// out of unstrided folds (rule 2), innermost first, to a fixpoint.
pub fn interchange(p: &Program) -> Program {
    let mut out = uniquify(p);
    let mut fresh = Fresh::for_program(&out);
    for b in out.bindings.iter_mut() {
        for _ in 0..16 {
            let mut changed = false;
            let v = std::mem::replace(&mut b.value, Expr::int(0));
            b.value = rewrite(v, &mut fresh, &mut changed);
            if !changed {
                break;
            }
        }
    }
    out
}

/// Words of on-chip storage held by tile copies once `p` is localized.
pub(crate) fn copy_words(p: &Program, env: &StaticEnv) -> u64 {
    let mut total = 0;
    for b in &p.bindings {
        let mut stack = vec![&b.value];
        while let Some(e) = stack.pop() {
            if let Expr::Copy(c) = e {
                total += shape_words(&c.shape, 1, env).unwrap_or(0);
            }
            stack.extend(e.children());
        }
    }
    total
}

struct Splitter {
    fresh: Fresh,
    types: TypeEnv,
    env: StaticEnv,
    budget: u64,
}

impl Splitter {
    /// Hoist a strided scalar fold bound in an unstrided pattern's lets into
    /// a map over the pattern's domain, when the map fits the budget.
    fn split(&mut self, e: Expr) -> Expr {
        let e = e.map_children(&mut |c| self.split(c));
        if e.is_strided() {
            return e;
        }
        let (dims, idx, lets) = match &e {
            Expr::MultiFold(m) => (m.dims.clone(), m.idx.clone(), m.lets.clone()),
            Expr::Map(m) => {
                let (lets, last) = m.body.peel_lets();
                if matches!(last, Expr::MultiFold(_)) && last.is_strided() && lets.is_empty() {
                    return e;
                }
                let lets = lets.into_iter().map(|(n, v)| (n.clone(), v.clone())).collect();
                (m.dims.clone(), m.idx.clone(), lets)
            }
            _ => return e,
        };
        let Some(pos) = lets.iter().position(|(_, v)| {
            matches!(v, Expr::MultiFold(f) if f.is_scalar_fold() && f.combine.is_some()) && v.is_strided()
        }) else {
            return e;
        };
        let (x, fold) = lets[pos].clone();
        let local: BTreeSet<Name> = idx.iter().cloned().chain(lets.iter().map(|(n, _)| n.clone())).collect();
        let Expr::MultiFold(f) = &fold else { unreachable!() };
        if f.dims.iter().any(|d| free_vars(d).iter().any(|v| local.contains(v))) {
            return e;
        }
        let elem_words = self.types.infer(&fold).words();
        let Some(words) = shape_words(&dims, elem_words, &self.env) else { return e };
        if words > self.budget {
            log::debug!("split of `{x}` skipped: {words} words over budget {}", self.budget);
            return e;
        }
        self.budget -= words;
        let mut need: BTreeSet<Name> = free_vars(&fold);
        let mut deps = Vec::new();
        for (n, v) in lets[..pos].iter().rev() {
            if need.contains(n) {
                need.extend(free_vars(v));
                deps.push((n.clone(), v.clone()));
            }
        }
        deps.reverse();
        let name = self.fresh.name(&format!("{x}s"));
        let map = self.fresh.freshen(Expr::Map(Box::new(MapPat {
            dims: dims.clone(),
            idx: idx.clone(),
            body: Expr::with_lets(deps, fold),
        })));
        let read = Expr::read(Expr::var(&name), idx.iter().map(Expr::var).collect());
        let e = match e {
            Expr::MultiFold(mut m) => {
                m.lets[pos].1 = read;
                Expr::MultiFold(m)
            }
            Expr::Map(mut m) => {
                let (_, last) = m.body.peel_lets();
                let mut lets = lets;
                lets[pos].1 = read;
                m.body = Expr::with_lets(lets, last.clone());
                Expr::Map(m)
            }
            _ => unreachable!(),
        };
        Expr::let_in(name, map, e)
    }
}

/// Split strided folds out of imperfectly nested patterns when the
/// materialized intermediate fits on chip, then interchange.
pub fn split_and_interchange(p: &Program, cfg: &TileConfig) -> Program {
    let p = uniquify(p);
    let env = StaticEnv::new(&p, &cfg.sizes);
    let used = copy_words(&localize_tiles(&p, cfg), &env);
    let mut s = Splitter {
        fresh: Fresh::for_program(&p),
        types: TypeEnv::for_program(&p),
        env,
        budget: cfg.on_chip_capacity.saturating_sub(used),
    };
    let mut out = p.clone();
    for b in out.bindings.iter_mut() {
        let v = std::mem::replace(&mut b.value, Expr::int(0));
        b.value = s.split(v);
    }
    if out == p {
        return out;
    }
    interchange(&out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{equivalent, random_inputs, DEFAULT_TOL};
    use crate::ir::alpha_equal_expr;
    use crate::syntax::{parse, parse_expr, print_program};
    use crate::transform::strip_mine;
    use rand::SeedableRng;
    use std::collections::BTreeMap;

    fn sizes(pairs: &[(&str, u64)]) -> BTreeMap<Name, u64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn equiv(a: &Program, b: &Program, sz: &[(&str, u64)]) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let inputs = random_inputs(a, &sizes(sz), &mut rng);
        equivalent(a, b, &inputs, DEFAULT_TOL).unwrap();
    }

    #[test]
    fn gemm_strided_fold_moves_out_of_map() {
        let p = crate::corpus::program("gemm").unwrap();
        let cfg = TileConfig::default().tile("m", 2).tile("n", 2).tile("p", 3);
        let s = strip_mine(&p, &cfg).unwrap();
        let t = interchange(&s);
        let text = print_program(&t);
        assert!(text.contains("multiFold(cdiv(p, 3))((min(2, m - ii * 2), min(2, n - jj * 2)))"), "{text}");
        assert!(crate::ir::validate(&t).is_empty());
        equiv(&p, &t, &[("m", 5), ("n", 4), ("p", 7)]);
        assert_eq!(interchange(&t), t);
    }

    #[test]
    fn rules_are_inverse() {
        let e = parse_expr(
            "map(4){ i => fold(cdiv(n, 2))(0.0){ kk => t = x.copy(kk * 2)(2)\n acc => acc + t(0) * float(i) }{ (a, b) => a + b } }",
        )
        .unwrap();
        let mut fresh = Fresh::default();
        for n in ["x", "n", "i", "kk", "t", "acc", "a", "b"] {
            fresh.reserve(n);
        }
        let r1 = rule1(&e, &mut fresh).unwrap();
        let back = rule2(&r1, &mut fresh).unwrap();
        assert!(alpha_equal_expr(&back, &e), "{}", crate::syntax::print_expr(&back));
    }

    #[test]
    fn column_sums_tiled_map_moves_out_of_fold() {
        let src = "input x : Float[m, n] dynamic\n\
                   s = multiFold(m)(n)(zeros(n)){ i =>\n  (0 slice (n), acc => map(n){ j => acc(j) + x(i, j) })\n\
                   }{ (a, b) => map(n){ j => a(j) + b(j) } }\noutput s\n";
        let p = parse(src).unwrap();
        let cfg = TileConfig::default().tile("n", 3);
        let s = strip_mine(&p, &cfg).unwrap();
        let t = interchange(&s);
        let text = print_program(&t);
        assert!(text.starts_with("input x : Float[m, n] dynamic\ns = multiFold(cdiv(n, 3))"), "{text}");
        assert!(text.contains("fold(m)(0.0)"), "{text}");
        equiv(&p, &t, &[("m", 4), ("n", 7)]);
    }

    #[test]
    fn kmeans_split_depends_on_capacity() {
        let p = crate::corpus::program("kmeans").unwrap();
        let cfg = TileConfig::default().tile("n", 4).tile("k", 2).size("n", 16).size("k", 4).size("d", 3);
        let s = strip_mine(&p, &cfg).unwrap();
        let t = split_and_interchange(&s, &cfg);
        let text = print_program(&t);
        assert!(text.contains("minDistWithIndexs = multiFold(cdiv(k, 2))"), "{text}");
        equiv(&p, &t, &[("n", 16), ("k", 4), ("d", 3)]);
        let small = cfg.clone().capacity(7);
        assert_eq!(split_and_interchange(&s, &small), uniquify(&s));
    }
}
