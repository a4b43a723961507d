use std::collections::BTreeSet;

use super::uniquify;
use crate::ir::{alpha_equal_expr, free_vars, rename_var, Expr, GroupGen, Name, Program};

/// Replace let bindings whose value duplicates one already in scope.
pub fn cse(p: &Program) -> Program {
    let mut out = uniquify(p);
    for b in out.bindings.iter_mut() {
        let v = std::mem::replace(&mut b.value, Expr::int(0));
        b.value = cse_expr(v, &mut Vec::new());
    }
    out
}

type Avail = Vec<(Expr, Name)>;

fn find(env: &Avail, v: &Expr) -> Option<Name> {
    env.iter().rev().find(|(e, _)| alpha_equal_expr(e, v)).map(|(_, n)| n.clone())
}

/// Process a let list in order, dropping duplicates and renaming their uses
/// in the remaining lets and in `rest`.
fn cse_lets<T>(
    lets: Vec<(Name, Expr)>,
    mut rest: T,
    env: &mut Avail,
    rename: impl Fn(T, &str, &str) -> T,
) -> (Vec<(Name, Expr)>, T) {
    let mut out: Vec<(Name, Expr)> = Vec::new();
    let mut pending: Vec<(Name, Expr)> = lets.into_iter().rev().collect();
    while let Some((n, v)) = pending.pop() {
        let v = cse_expr(v, env);
        match find(env, &v) {
            Some(m) => {
                for (_, later) in pending.iter_mut() {
                    *later = rename_var(std::mem::replace(later, Expr::int(0)), &n, &m);
                }
                rest = rename(rest, &n, &m);
            }
            None => {
                env.push((v.clone(), n.clone()));
                out.push((n, v));
            }
        }
    }
    (out, rest)
}

fn cse_expr(e: Expr, env: &mut Avail) -> Expr {
    let mark = env.len();
    let out = match e {
        Expr::Let(n, v, b) => {
            let (lets, body) = cse_lets(vec![(n, *v)], *b, env, rename_var);
            let body = cse_expr(body, env);
            Expr::with_lets(lets, body)
        }
        Expr::MultiFold(mut m) => {
            m.dims = m.dims.into_iter().map(|d| cse_expr(d, env)).collect();
            m.init = cse_expr(m.init, env);
            if let Some(c) = m.combine.as_mut() {
                c.body = cse_expr(std::mem::replace(&mut c.body, Expr::int(0)), env);
            }
            let lets = std::mem::take(&mut m.lets);
            let updates = std::mem::take(&mut m.updates);
            let (lets, updates) = cse_lets(lets, updates, env, |us, f, t| {
                us.into_iter()
                    .map(|mut u| {
                        u.loc = u.loc.into_iter().map(|x| rename_var(x, f, t)).collect();
                        u.slice = u.slice.map(|s| s.into_iter().map(|x| rename_var(x, f, t)).collect());
                        u.body = rename_var(u.body, f, t);
                        u
                    })
                    .collect()
            });
            m.lets = lets;
            m.updates = updates
                .into_iter()
                .map(|mut u| {
                    u.loc = u.loc.into_iter().map(|x| cse_expr(x, env)).collect();
                    u.slice = u.slice.map(|s| s.into_iter().map(|x| cse_expr(x, env)).collect());
                    u.body = cse_expr(u.body, env);
                    u
                })
                .collect();
            Expr::MultiFold(m)
        }
        Expr::GroupByFold(mut g) => {
            g.dims = g.dims.into_iter().map(|d| cse_expr(d, env)).collect();
            g.init = cse_expr(g.init, env);
            g.combine.body = cse_expr(std::mem::replace(&mut g.combine.body, Expr::int(0)), env);
            let lets = std::mem::take(&mut g.lets);
            let gen = std::mem::replace(&mut g.gen, GroupGen::Merge(Expr::int(0)));
            let (lets, gen) = cse_lets(lets, gen, env, |gen, f, t| match gen {
                GroupGen::Keyed { key, acc, update } => {
                    GroupGen::Keyed { key: rename_var(key, f, t), acc, update: rename_var(update, f, t) }
                }
                GroupGen::Merge(x) => GroupGen::Merge(rename_var(x, f, t)),
            });
            g.lets = lets;
            g.gen = match gen {
                GroupGen::Keyed { key, acc, update } => {
                    GroupGen::Keyed { key: cse_expr(key, env), acc, update: cse_expr(update, env) }
                }
                GroupGen::Merge(x) => GroupGen::Merge(cse_expr(x, env)),
            };
            Expr::GroupByFold(g)
        }
        other => other.map_children(&mut |c| cse_expr(c, env)),
    };
    env.truncate(mark);
    out
}

/// Hoist tile copies to the outermost scope that binds everything they
/// reference. Also flattens lets nested inside pattern let values.
pub fn code_motion(p: &Program) -> Program {
    let mut out = uniquify(p);
    for b in out.bindings.iter_mut() {
        let v = std::mem::replace(&mut b.value, Expr::int(0));
        let (v, floats) = motion(v);
        b.value = Expr::with_lets(floats.into_iter().map(|f| (f.name, f.value)).collect(), v);
    }
    out
}

struct Float {
    name: Name,
    value: Expr,
    uses: BTreeSet<Name>,
}

impl Float {
    fn new(name: Name, value: Expr) -> Float {
        let uses = free_vars(&value);
        Float { name, value, uses }
    }
}

fn is_copy(e: &Expr) -> bool {
    matches!(e, Expr::Copy(_))
}

/// Split floats into those referencing any of `names` and the rest.
fn stuck(floats: Vec<Float>, names: &BTreeSet<Name>) -> (Vec<Float>, Vec<Float>) {
    floats.into_iter().partition(|f| f.uses.iter().any(|u| names.contains(u)))
}

fn wrap(floats: Vec<Float>, body: Expr) -> Expr {
    Expr::with_lets(floats.into_iter().map(|f| (f.name, f.value)).collect(), body)
}

fn set(names: &[Name]) -> BTreeSet<Name> {
    names.iter().cloned().collect()
}

/// Flatten `x = { a = v; b }` in a let list into `a = v; x = b`.
fn flatten(lets: Vec<(Name, Expr)>) -> Vec<(Name, Expr)> {
    let mut out = Vec::new();
    for (n, v) in lets {
        let (inner, last) = v.peel_lets();
        if inner.is_empty() {
            out.push((n, v));
            continue;
        }
        let inner: Vec<(Name, Expr)> = inner.into_iter().map(|(a, b)| (a.clone(), b.clone())).collect();
        let last = last.clone();
        out.extend(flatten(inner));
        out.push((n, last));
    }
    out
}

/// Place floats into a let list right after the last let they reference.
fn place(lets: Vec<(Name, Expr)>, floats: Vec<Float>) -> Vec<(Name, Expr)> {
    let mut slots: Vec<Vec<Float>> = (0..=lets.len()).map(|_| Vec::new()).collect();
    for f in floats {
        let pos = lets.iter().rposition(|(n, _)| f.uses.contains(n)).map_or(0, |p| p + 1);
        slots[pos].push(f);
    }
    let mut out = Vec::new();
    let mut slots = slots.into_iter();
    out.extend(slots.next().unwrap().into_iter().map(|f| (f.name, f.value)));
    for (l, s) in lets.into_iter().zip(slots) {
        out.push(l);
        out.extend(s.into_iter().map(|f| (f.name, f.value)));
    }
    out
}

/// Process a pattern's let list: copies become floats, the rest stay.
fn motion_lets(lets: Vec<(Name, Expr)>, floats: &mut Vec<Float>) -> Vec<(Name, Expr)> {
    let mut kept = Vec::new();
    for (n, v) in flatten(lets) {
        let (v, fs) = motion(v);
        floats.extend(fs);
        if is_copy(&v) {
            floats.push(Float::new(n, v));
        } else {
            kept.push((n, v));
        }
    }
    kept
}

fn motion(e: Expr) -> (Expr, Vec<Float>) {
    let mut floats = Vec::new();
    let sub = |x: Expr, floats: &mut Vec<Float>| {
        let (x, fs) = motion(x);
        floats.extend(fs);
        x
    };
    let e = match e {
        Expr::Let(n, v, b) => {
            let v = sub(*v, &mut floats);
            let (b, fb) = motion(*b);
            if is_copy(&v) {
                floats.push(Float::new(n, v));
                floats.extend(fb);
                return (b, floats);
            }
            let (here, up) = stuck(fb, &set(std::slice::from_ref(&n)));
            floats.extend(up);
            Expr::let_in(n, v, wrap(here, b))
        }
        Expr::Map(mut m) => {
            m.dims = m.dims.into_iter().map(|d| sub(d, &mut floats)).collect();
            let (body, fb) = motion(m.body);
            let (here, up) = stuck(fb, &set(&m.idx));
            floats.extend(up);
            m.body = wrap(here, body);
            Expr::Map(m)
        }
        Expr::FlatMap(mut f) => {
            f.dims = f.dims.into_iter().map(|d| sub(d, &mut floats)).collect();
            let (body, fb) = motion(f.body);
            let (here, up) = stuck(fb, &set(&f.idx));
            floats.extend(up);
            f.body = wrap(here, body);
            Expr::FlatMap(f)
        }
        Expr::MultiFold(mut m) => {
            m.dims = m.dims.into_iter().map(|d| sub(d, &mut floats)).collect();
            m.ranges = m.ranges.into_iter().map(|r| r.into_iter().map(|d| sub(d, &mut floats)).collect()).collect();
            m.init = sub(m.init, &mut floats);
            if let Some(c) = m.combine.as_mut() {
                let (body, fb) = motion(std::mem::replace(&mut c.body, Expr::int(0)));
                let (here, up) = stuck(fb, &set(&[c.lhs.clone(), c.rhs.clone()]));
                floats.extend(up);
                c.body = wrap(here, body);
            }
            let mut inner = Vec::new();
            let lets = motion_lets(std::mem::take(&mut m.lets), &mut inner);
            for u in m.updates.iter_mut() {
                u.loc = std::mem::take(&mut u.loc).into_iter().map(|x| sub(x, &mut inner)).collect();
                u.slice = u.slice.take().map(|s| s.into_iter().map(|x| sub(x, &mut inner)).collect());
                let (body, fb) = motion(std::mem::replace(&mut u.body, Expr::int(0)));
                let (here, up) = stuck(fb, &set(std::slice::from_ref(&u.acc)));
                inner.extend(up);
                u.body = wrap(here, body);
            }
            let mut scope = set(&m.idx);
            scope.extend(lets.iter().map(|(n, _)| n.clone()));
            let (here, up) = stuck(inner, &scope);
            floats.extend(up);
            m.lets = place(lets, here);
            Expr::MultiFold(m)
        }
        Expr::GroupByFold(mut g) => {
            g.dims = g.dims.into_iter().map(|d| sub(d, &mut floats)).collect();
            g.init = sub(g.init, &mut floats);
            let (body, fb) = motion(std::mem::replace(&mut g.combine.body, Expr::int(0)));
            let (here, up) = stuck(fb, &set(&[g.combine.lhs.clone(), g.combine.rhs.clone()]));
            floats.extend(up);
            g.combine.body = wrap(here, body);
            let mut inner = Vec::new();
            let lets = motion_lets(std::mem::take(&mut g.lets), &mut inner);
            g.gen = match std::mem::replace(&mut g.gen, GroupGen::Merge(Expr::int(0))) {
                GroupGen::Keyed { key, acc, update } => {
                    let key = sub(key, &mut inner);
                    let (update, fb) = motion(update);
                    let (here, up) = stuck(fb, &set(std::slice::from_ref(&acc)));
                    inner.extend(up);
                    GroupGen::Keyed { key, acc, update: wrap(here, update) }
                }
                GroupGen::Merge(x) => GroupGen::Merge(sub(x, &mut inner)),
            };
            let mut scope = set(&g.idx);
            scope.extend(lets.iter().map(|(n, _)| n.clone()));
            let (here, up) = stuck(inner, &scope);
            floats.extend(up);
            g.lets = place(lets, here);
            Expr::GroupByFold(g)
        }
        other => other.map_children(&mut |c| sub(c, &mut floats)),
    };
    (e, floats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{parse, print_program};

    #[test]
    fn kmeans_duplicate_point_slice_is_shared() {
        let p = crate::corpus::program("kmeans").unwrap();
        let q = cse(&p);
        let text = print_program(&q);
        assert_eq!(text.matches("points.slice(i, *)").count(), 1, "{text}");
        assert_eq!(cse(&q), q);
    }

    #[test]
    fn copy_without_inner_index_moves_out_of_map() {
        let src = "input y : Float[n, p] dynamic\n\
                   z = fold(cdiv(p, 4))(0.0){ kk =>\n\
                     acc => acc + fold(n)(0.0){ j => yTile = y.copy(0, kk * 4)(n, 4)\n acc2 => acc2 + yTile(j, 0) }{ (a, b) => a + b }\n\
                   }{ (a, b) => a + b }\noutput z\n";
        let p = parse(src).unwrap();
        let q = code_motion(&p);
        let text = print_program(&q);
        let copy_at = text.find("yTile = ").unwrap();
        let inner_at = text.find("fold(n)").unwrap();
        assert!(copy_at < inner_at, "{text}");
        assert_eq!(code_motion(&q), q);
    }

    #[test]
    fn no_redundancy_is_fixpoint() {
        for name in crate::corpus::NAMES {
            let p = uniquify(&crate::corpus::program(name).unwrap());
            if name != "kmeans" {
                assert_eq!(cse(&p), p, "{name}");
            }
            assert_eq!(code_motion(&p), p, "{name}");
        }
    }
}
