use std::collections::{BTreeMap, BTreeSet};

use super::{BinOp, Expr, Lit, Name, Program, SizeClass, SliceIndex, Type};

/// What is statically known about sizes: which symbols are compile-time
/// constants and what they are bound to.
#[derive(Clone, Debug, Default)]
pub struct StaticEnv {
    pub statics: BTreeSet<Name>,
    pub sizes: BTreeMap<Name, u64>,
}

impl StaticEnv {
    pub fn new(p: &Program, sizes: &BTreeMap<Name, u64>) -> StaticEnv {
        StaticEnv { statics: static_symbols(p), sizes: sizes.clone() }
    }

    /// Value of a size expression with every symbol bound (static or not).
    pub fn eval(&self, e: &Expr) -> Option<i64> {
        Some(match e {
            Expr::Lit(Lit::Int(v)) => *v,
            Expr::Var(s) => *self.sizes.get(s)? as i64,
            Expr::Binary(op, a, b) => {
                let (a, b) = (self.eval(a)?, self.eval(b)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div if b != 0 => a.div_euclid(b),
                    BinOp::Min => a.min(b),
                    BinOp::Max => a.max(b),
                    BinOp::CeilDiv if b > 0 => (a + b - 1).div_euclid(b),
                    _ => return None,
                }
            }
            _ => return None,
        })
    }
}

/// Symbols in the shapes of static inputs plus explicitly declared ones.
pub fn static_symbols(p: &Program) -> BTreeSet<Name> {
    let mut out: BTreeSet<Name> = p.static_sizes.iter().cloned().collect();
    for i in p.inputs.iter().filter(|i| i.class == SizeClass::Static) {
        for e in &i.shape {
            out.extend(super::free_vars(e));
        }
    }
    out
}

/// Upper bound of an extent expression using only static information.
/// `min(b, rest)` is bounded by `b` even when `rest` is dynamic.
pub fn static_bound(e: &Expr, env: &StaticEnv) -> Option<u64> {
    match e {
        Expr::Lit(Lit::Int(v)) if *v >= 0 => Some(*v as u64),
        Expr::Var(s) if env.statics.contains(s) => env.sizes.get(s).copied(),
        Expr::Binary(op, a, b) => {
            let (ba, bb) = (static_bound(a, env), static_bound(b, env));
            match op {
                BinOp::Min => match (ba, bb) {
                    (Some(x), Some(y)) => Some(x.min(y)),
                    (x, y) => x.or(y),
                },
                BinOp::Max => Some(ba?.max(bb?)),
                BinOp::Add => Some(ba? + bb?),
                BinOp::Mul => Some(ba? * bb?),
                // Extents are non-negative, so subtracting only shrinks.
                BinOp::Sub => ba,
                BinOp::CeilDiv => {
                    let d = bb?;
                    (d > 0).then(|| ba.map(|a| a.div_ceil(d)))?
                }
                _ => None,
            }
        }
        _ => None,
    }
}

/// Static word count of a shape with elements of the given width.
pub fn shape_words(shape: &[Expr], elem_words: u64, env: &StaticEnv) -> Option<u64> {
    shape.iter().try_fold(elem_words, |acc, d| static_bound(d, env).map(|b| acc * b))
}

/// Static word count of the value produced by `e` (whose type is `ty`), if
/// it has a statically known size.
pub fn value_words(e: &Expr, ty: &Type, env: &StaticEnv, shapes: &BTreeMap<Name, Vec<Expr>>) -> Option<u64> {
    let elem = |t: &Type| match t {
        Type::Array(el, _) => el.words(),
        other => other.words(),
    };
    match e {
        Expr::Map(m) => shape_words(&m.dims, elem(ty), env),
        Expr::MultiFold(m) => {
            let comps: Vec<Type> = match (ty, m.ranges.len()) {
                (Type::Tuple(ts), n) if n > 1 => ts.clone(),
                (t, _) => vec![t.clone()],
            };
            m.ranges.iter().zip(comps.iter()).try_fold(0, |acc, (r, t)| shape_words(r, elem(t), env).map(|w| acc + w))
        }
        Expr::Fill(shape, _) => shape_words(shape, elem(ty), env),
        Expr::Copy(c) => shape_words(&c.shape, elem(ty), env),
        Expr::Slice(s) => {
            let src_shape = match &s.src {
                Expr::Var(n) => shapes.get(n)?,
                _ => return None,
            };
            let free: Vec<Expr> = s
                .index
                .iter()
                .zip(src_shape)
                .filter(|(i, _)| matches!(i, SliceIndex::Free))
                .map(|(_, d)| d.clone())
                .collect();
            shape_words(&free, elem(ty), env)
        }
        Expr::Let(_, _, b) => value_words(b, ty, env, shapes),
        _ if ty.is_scalar() => Some(ty.words()),
        _ => None,
    }
}

/// Shapes of inputs and array-valued top-level bindings.
pub fn binding_shapes(p: &Program) -> BTreeMap<Name, Vec<Expr>> {
    let mut out = BTreeMap::new();
    for i in &p.inputs {
        out.insert(i.name.clone(), i.shape.clone());
    }
    for b in &p.bindings {
        let shapes: Vec<Option<Vec<Expr>>> = match &b.value {
            Expr::Map(m) => vec![Some(m.dims.clone())],
            Expr::MultiFold(m) => m.ranges.iter().map(|r| (!r.is_empty()).then(|| r.clone())).collect(),
            Expr::Fill(s, _) => vec![Some(s.clone())],
            Expr::Copy(c) => vec![Some(c.shape.clone())],
            Expr::FlatMap(_) => vec![Some(vec![Expr::Len(Box::new(Expr::Var(b.names[0].clone())))])],
            _ => vec![None],
        };
        if shapes.len() == b.names.len() {
            for (n, s) in b.names.iter().zip(shapes) {
                if let Some(s) = s {
                    out.insert(n.clone(), s);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> StaticEnv {
        StaticEnv {
            statics: ["d".to_string()].into_iter().collect(),
            sizes: [("d".to_string(), 4), ("n".to_string(), 64)].into_iter().collect(),
        }
    }

    #[test]
    fn min_guard_is_bounded_by_tile() {
        let guard = Expr::bin(
            BinOp::Min,
            Expr::int(16),
            Expr::bin(BinOp::Sub, Expr::var("n"), Expr::bin(BinOp::Mul, Expr::var("ii"), Expr::int(16))),
        );
        assert_eq!(static_bound(&guard, &env()), Some(16));
        assert_eq!(static_bound(&Expr::var("n"), &env()), None);
        assert_eq!(static_bound(&Expr::var("d"), &env()), Some(4));
        assert_eq!(env().eval(&Expr::bin(BinOp::CeilDiv, Expr::var("n"), Expr::int(10))), Some(7));
    }
}
