//! Alpha-equivalence and structural hashing.
//!
//! Both go through a canonical form: independent let bindings in a block are
//! put in a content-determined order, then every binder is renamed by its
//! position in a pre-order walk.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};

use super::{free_vars, Expr, GroupGen, Name};

pub fn alpha_equal(a: &Expr, b: &Expr) -> bool {
    alpha_equal_expr(a, b)
}

pub fn alpha_equal_expr(a: &Expr, b: &Expr) -> bool {
    canonical_form(a) == canonical_form(b)
}

pub fn structural_hash(e: &Expr) -> u64 {
    structural_hash_expr(e)
}

pub fn structural_hash_expr(e: &Expr) -> u64 {
    hash_str(&format!("{:?}", canonical_form(e)))
}

fn hash_str(s: &str) -> u64 {
    let mut h = DefaultHasher::new();
    s.hash(&mut h);
    h.finish()
}

pub fn canonical_form(e: &Expr) -> Expr {
    let ordered = order_lets(e.clone(), &mut Vec::new());
    let mut c = Canon { scope: Vec::new(), next: 0 };
    c.expr(ordered)
}

/// Content key of a let value, with references to sibling lets replaced by
/// the siblings' own keys and enclosing binders by their stack position,
/// so the key does not depend on binder names.
fn let_key(value: &Expr, sibling_keys: &BTreeMap<Name, u64>, outer: &[Name]) -> u64 {
    let mut v = value.clone();
    for n in free_vars(value) {
        if let Some(k) = sibling_keys.get(&n) {
            v = super::substitute(v, &n, &Expr::Var(format!("@{k:x}")));
        } else if let Some(pos) = outer.iter().rposition(|o| *o == n) {
            v = super::substitute(v, &n, &Expr::Var(format!("^{pos}")));
        }
    }
    let mut c = Canon { scope: Vec::new(), next: 0 };
    hash_str(&format!("{:?}", c.expr(v)))
}

fn sort_block(lets: Vec<(Name, Expr)>, outer: &[Name]) -> Vec<(Name, Expr)> {
    if lets.len() < 2 {
        return lets;
    }
    let names: BTreeSet<Name> = lets.iter().map(|(n, _)| n.clone()).collect();
    let deps: Vec<BTreeSet<Name>> =
        lets.iter().map(|(_, v)| free_vars(v).intersection(&names).cloned().collect()).collect();
    let mut keys: BTreeMap<Name, u64> = BTreeMap::new();
    for (n, v) in &lets {
        let k = let_key(v, &keys, outer);
        keys.insert(n.clone(), k);
    }
    let mut done: BTreeSet<Name> = BTreeSet::new();
    let mut remaining: Vec<usize> = (0..lets.len()).collect();
    let mut order = Vec::with_capacity(lets.len());
    while !remaining.is_empty() {
        let pick = remaining
            .iter()
            .enumerate()
            .filter(|(_, &i)| deps[i].iter().all(|d| done.contains(d)))
            .min_by_key(|(_, &i)| (keys[&lets[i].0], i))
            .map(|(pos, _)| pos);
        // Ill-scoped block; keep the remaining order.
        let pos = pick.unwrap_or(0);
        let i = remaining.remove(pos);
        done.insert(lets[i].0.clone());
        order.push(i);
    }
    let mut slots: Vec<Option<(Name, Expr)>> = lets.into_iter().map(Some).collect();
    order.into_iter().map(|i| slots[i].take().unwrap()).collect()
}

fn order_lets(e: Expr, outer: &mut Vec<Name>) -> Expr {
    let e = match e {
        Expr::Let(..) => {
            let mut lets = Vec::new();
            let mut cur = e;
            while let Expr::Let(n, v, b) = cur {
                lets.push((n, *v));
                cur = *b;
            }
            let lets = sort_block(lets, outer);
            let base = outer.len();
            outer.extend(lets.iter().map(|(n, _)| n.clone()));
            let lets = lets.into_iter().map(|(n, v)| (n, order_lets(v, outer))).collect();
            let body = order_lets(cur, outer);
            outer.truncate(base);
            return Expr::with_lets(lets, body);
        }
        Expr::MultiFold(mut m) => {
            m.lets = sort_block(std::mem::take(&mut m.lets), &scope_with(outer, &m.idx));
            Expr::MultiFold(m)
        }
        Expr::GroupByFold(mut g) => {
            g.lets = sort_block(std::mem::take(&mut g.lets), &scope_with(outer, &g.idx));
            Expr::GroupByFold(g)
        }
        other => other,
    };
    let base = outer.len();
    outer.extend(super::visit::own_binders(&e));
    let e = e.map_children(&mut |c| order_lets(c, outer));
    outer.truncate(base);
    e
}

fn scope_with(outer: &[Name], idx: &[Name]) -> Vec<Name> {
    outer.iter().chain(idx).cloned().collect()
}

struct Canon {
    scope: Vec<(Name, Name)>,
    next: usize,
}

impl Canon {
    fn bind(&mut self, n: &Name) -> Name {
        let c = format!("%{}", self.next);
        self.next += 1;
        self.scope.push((n.clone(), c.clone()));
        c
    }

    fn lookup(&self, n: &Name) -> Name {
        self.scope.iter().rev().find(|(o, _)| o == n).map(|(_, c)| c.clone()).unwrap_or_else(|| n.clone())
    }

    fn expr(&mut self, e: Expr) -> Expr {
        let base = self.scope.len();
        let out = match e {
            Expr::Var(n) => Expr::Var(self.lookup(&n)),
            Expr::Let(n, v, b) => {
                let v = self.expr(*v);
                let n = self.bind(&n);
                let b = self.expr(*b);
                Expr::Let(n, Box::new(v), Box::new(b))
            }
            Expr::Map(mut m) => {
                m.dims = m.dims.into_iter().map(|d| self.expr(d)).collect();
                m.idx = m.idx.iter().map(|i| self.bind(i)).collect();
                m.body = self.expr(m.body);
                Expr::Map(m)
            }
            Expr::FlatMap(mut f) => {
                f.dims = f.dims.into_iter().map(|d| self.expr(d)).collect();
                f.idx = f.idx.iter().map(|i| self.bind(i)).collect();
                f.body = self.expr(f.body);
                Expr::FlatMap(f)
            }
            Expr::MultiFold(mut m) => {
                m.dims = m.dims.into_iter().map(|d| self.expr(d)).collect();
                m.ranges = m.ranges.into_iter().map(|r| r.into_iter().map(|d| self.expr(d)).collect()).collect();
                m.init = self.expr(m.init);
                if let Some(mut c) = m.combine.take() {
                    c.lhs = self.bind(&c.lhs);
                    c.rhs = self.bind(&c.rhs);
                    c.body = self.expr(c.body);
                    self.scope.truncate(base);
                    m.combine = Some(c);
                }
                m.idx = m.idx.iter().map(|i| self.bind(i)).collect();
                m.lets = std::mem::take(&mut m.lets)
                    .into_iter()
                    .map(|(n, v)| {
                        let v = self.expr(v);
                        (self.bind(&n), v)
                    })
                    .collect();
                for u in m.updates.iter_mut() {
                    u.loc = std::mem::take(&mut u.loc).into_iter().map(|d| self.expr(d)).collect();
                    u.slice = u.slice.take().map(|s| s.into_iter().map(|d| self.expr(d)).collect());
                    let mark = self.scope.len();
                    u.acc = self.bind(&u.acc);
                    u.body = self.expr(std::mem::replace(&mut u.body, Expr::int(0)));
                    self.scope.truncate(mark);
                }
                Expr::MultiFold(m)
            }
            Expr::GroupByFold(mut g) => {
                g.dims = g.dims.into_iter().map(|d| self.expr(d)).collect();
                g.init = self.expr(g.init);
                g.combine.lhs = self.bind(&g.combine.lhs);
                g.combine.rhs = self.bind(&g.combine.rhs);
                g.combine.body = self.expr(std::mem::replace(&mut g.combine.body, Expr::int(0)));
                self.scope.truncate(base);
                g.idx = g.idx.iter().map(|i| self.bind(i)).collect();
                g.lets = std::mem::take(&mut g.lets)
                    .into_iter()
                    .map(|(n, v)| {
                        let v = self.expr(v);
                        (self.bind(&n), v)
                    })
                    .collect();
                g.gen = match g.gen {
                    GroupGen::Keyed { key, acc, update } => {
                        let key = self.expr(key);
                        let acc = self.bind(&acc);
                        GroupGen::Keyed { key, acc, update: self.expr(update) }
                    }
                    GroupGen::Merge(e) => GroupGen::Merge(self.expr(e)),
                };
                Expr::GroupByFold(g)
            }
            Expr::Copy(mut c) => {
                c.src = self.lookup(&c.src);
                Expr::Copy(c).map_children(&mut |x| self.expr(x))
            }
            other => other.map_children(&mut |x| self.expr(x)),
        };
        self.scope.truncate(base);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{BinOp, MapPat};

    fn map_with(binder: &str, body: Expr) -> Expr {
        Expr::Map(Box::new(MapPat { dims: vec![Expr::var("d")], idx: vec![binder.into()], body }))
    }

    fn x_at(i: &str) -> Expr {
        Expr::read(Expr::var("x"), vec![Expr::var(i)])
    }

    #[test]
    fn renaming_is_alpha_equal() {
        let a = map_with("i", Expr::bin(BinOp::Mul, Expr::int(2), x_at("i")));
        let b = map_with("j", Expr::bin(BinOp::Mul, Expr::int(2), x_at("j")));
        assert!(alpha_equal(&a, &b));
        assert_eq!(structural_hash(&a), structural_hash(&b));
    }

    #[test]
    fn distinct_trees_differ() {
        let a = map_with("i", Expr::bin(BinOp::Mul, Expr::int(2), x_at("i")));
        let b = map_with("i", Expr::bin(BinOp::Add, x_at("i"), x_at("i")));
        assert!(!alpha_equal(&a, &b));
    }

    #[test]
    fn independent_lets_commute() {
        let a = Expr::let_in(
            "p",
            x_at("i"),
            Expr::let_in("q", Expr::int(1), Expr::bin(BinOp::Add, Expr::var("p"), Expr::var("q"))),
        );
        let b = Expr::let_in(
            "q",
            Expr::int(1),
            Expr::let_in("p", x_at("i"), Expr::bin(BinOp::Add, Expr::var("p"), Expr::var("q"))),
        );
        assert!(alpha_equal(&a, &b));
        // Swapping which value feeds which operand is a real difference.
        let c = Expr::let_in(
            "q",
            Expr::int(1),
            Expr::let_in("p", x_at("i"), Expr::bin(BinOp::Add, Expr::var("q"), Expr::var("p"))),
        );
        assert!(!alpha_equal(&a, &c));
    }

    #[test]
    fn free_variables_are_not_renamed() {
        let a = map_with("i", x_at("i"));
        let b = map_with("i", Expr::read(Expr::var("y"), vec![Expr::var("i")]));
        assert!(!alpha_equal(&a, &b));
    }

    #[test]
    fn let_order_ignores_enclosing_names() {
        let src =
            |i: &str, j: &str| format!("map(n, n){{ ({i}, {j}) => u = x({j}) + 1.0\n v = x({i}) * 2.0\n u + v }}");
        let a = crate::syntax::parse_expr(&src("i", "j")).unwrap();
        let b = crate::syntax::parse_expr(&src("i", "q")).unwrap();
        let c = crate::syntax::parse_expr(&src("q", "j")).unwrap();
        assert!(alpha_equal_expr(&a, &b));
        assert!(alpha_equal_expr(&a, &c));
    }
}
