use std::collections::BTreeMap;

use rand::Rng;

use super::{Tensor, Value};
use crate::ir::{Name, Program, StaticEnv, Type};

/// Chance that a size symbol is drawn as a degenerate extent (0 or 1).
const DEGENERATE_RATE: f64 = 0.1;

/// Sizes for every size symbol of `p`. Symbols in `fixed` keep their value;
/// the rest are drawn from `2..=max`, or 0/1 at the degenerate rate.
pub fn random_sizes<R: Rng>(p: &Program, fixed: &BTreeMap<Name, u64>, max: u64, rng: &mut R) -> BTreeMap<Name, u64> {
    let mut out = BTreeMap::new();
    let mut syms = p.size_symbols();
    for s in &p.static_sizes {
        if !syms.contains(s) {
            syms.push(s.clone());
        }
    }
    for s in syms {
        let v = match fixed.get(&s) {
            Some(v) => *v,
            None if rng.gen_bool(DEGENERATE_RATE) => rng.gen_range(0..=1),
            None => rng.gen_range(2..=max.max(2)),
        };
        out.insert(s, v);
    }
    out
}

fn scalar<R: Rng>(t: &Type, rng: &mut R) -> Value {
    match t {
        Type::Int => Value::Int(rng.gen_range(0..100)),
        Type::Bool => Value::Bool(rng.gen_bool(0.5)),
        Type::Tuple(ts) => Value::Tuple(ts.iter().map(|t| scalar(t, rng)).collect()),
        _ => Value::Float(rng.gen_range(-1.0..1.0)),
    }
}

/// Random inputs for `p` at the given sizes. Also binds every size symbol
/// as an `Int` so sizes absent from input shapes are available.
pub fn random_inputs<R: Rng>(p: &Program, sizes: &BTreeMap<Name, u64>, rng: &mut R) -> BTreeMap<Name, Value> {
    let env = StaticEnv { statics: Default::default(), sizes: sizes.clone() };
    let mut out = BTreeMap::new();
    for (s, v) in sizes {
        out.insert(s.clone(), Value::Int(*v as i64));
    }
    for inp in &p.inputs {
        let shape: Vec<usize> = inp.shape.iter().map(|d| env.eval(d).unwrap_or(0).max(0) as usize).collect();
        let n = shape.iter().product();
        let data = (0..n).map(|_| scalar(&inp.elem, rng)).collect();
        out.insert(inp.name.clone(), Value::Array(std::sync::Arc::new(Tensor::new(shape, data))));
    }
    out
}

/// A random value with the same structure as `v`.
pub fn random_like<R: Rng>(v: &Value, rng: &mut R) -> Value {
    match v {
        Value::Int(_) => Value::Int(rng.gen_range(0..100)),
        Value::Float(_) => Value::Float(rng.gen_range(-1.0..1.0)),
        Value::Bool(_) => Value::Bool(rng.gen_bool(0.5)),
        Value::Tuple(vs) => Value::Tuple(vs.iter().map(|x| random_like(x, rng)).collect()),
        Value::Array(t) => Value::array(t.shape.clone(), t.data.iter().map(|x| random_like(x, rng)).collect()),
        Value::Groups(g) => Value::Groups(g.clone()),
    }
}
