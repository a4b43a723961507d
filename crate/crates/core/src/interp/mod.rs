//! Reference interpreter. Sequential, deterministic semantics used as the
//! oracle for every transformation.

mod equiv;
mod random;
mod value;

pub use equiv::{check_identity, equivalent, equivalent_outputs, values_close, IdentityViolation, DEFAULT_TOL};
pub use random::{random_inputs, random_like, random_sizes};
pub use value::{Tensor, Value};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ir::{BinOp, Combine, Expr, GroupByFoldPat, GroupGen, Lit, MultiFoldPat, Name, Program, SliceIndex, UnOp};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("index {index:?} out of bounds for `{array}` of shape {shape:?}")]
    OutOfBounds { array: String, index: Vec<i64>, shape: Vec<usize> },
    #[error("`{0}` is not bound")]
    UnboundId(String),
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("integer division by zero")]
    DivByZero,
    #[error("accumulator component {component} location {loc:?} written twice by a fold without a combine function")]
    DisjointWrite { component: usize, loc: Vec<i64> },
    #[error("init is not an identity of the combine function: {witness}")]
    NonIdentityInit { witness: String },
    #[error("signature mismatch: {0}")]
    SignatureMismatch(String),
}

type EResult<T> = Result<T, EvalError>;

/// Memory and iteration events of an evaluation, keyed by the address of
/// the expression node that caused them.
pub trait Observer {
    /// A single-element read of `array` at flat offset `offset`.
    fn element(&mut self, _site: usize, _array: &str, _offset: usize, _words: u64) {}
    /// A copy or slice reading the box at `offsets` with `extents` of an
    /// array of shape `shape`; `words` counts the in-bounds part.
    fn block(
        &mut self,
        _site: usize,
        _array: &str,
        _shape: &[usize],
        _offsets: &[i64],
        _extents: &[usize],
        _words: u64,
    ) {
    }
    /// One evaluation of a pattern over `iterations` domain points.
    fn pattern(&mut self, _site: usize, _iterations: u64) {}
    /// An accumulator update of the fold at `site`, component `k`.
    fn update(&mut self, _site: usize, _k: usize, _shape: &[usize], _offsets: &[i64], _extents: &[usize], _words: u64) {
    }
    /// A top-level binding has been computed.
    fn bound(&mut self, _name: &str, _value: &Value) {}
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Options {
    /// Count words read from input arrays.
    pub count_reads: bool,
    /// Fail when a fold without a combine function writes a location twice.
    pub check_disjoint: bool,
    /// Check, once per fold node, that its init is an identity of its combine.
    pub check_identity: bool,
    /// Seed for identity-check samples.
    pub seed: u64,
}

impl Options {
    pub fn instrumented() -> Options {
        Options { count_reads: true, check_disjoint: true, check_identity: true, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Stats {
    /// Words read from each input array.
    pub reads: BTreeMap<Name, u64>,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub outputs: Vec<(Name, Value)>,
    pub stats: Stats,
}

/// Evaluate `p` with plain semantics and return its outputs in order.
pub fn eval_program(p: &Program, inputs: &BTreeMap<Name, Value>) -> EResult<Vec<(Name, Value)>> {
    run(p, inputs, Options::default()).map(|o| o.outputs)
}

pub fn run(p: &Program, inputs: &BTreeMap<Name, Value>, opts: Options) -> EResult<Outcome> {
    execute(p, inputs, Machine::new(opts))
}

/// Like [`run`], reporting memory and iteration events to `obs`.
pub fn run_observed(
    p: &Program,
    inputs: &BTreeMap<Name, Value>,
    opts: Options,
    obs: &mut dyn Observer,
) -> EResult<Outcome> {
    let mut m = Machine::new(opts);
    m.obs = Some(obs);
    execute(p, inputs, m)
}

fn execute(p: &Program, inputs: &BTreeMap<Name, Value>, mut m: Machine<'_>) -> EResult<Outcome> {
    m.bind_inputs(p, inputs)?;
    for b in &p.bindings {
        let v = m.eval(&b.value)?;
        if let Some(o) = m.obs.as_mut() {
            match (&v, b.names.len()) {
                (Value::Tuple(vs), n) if n > 1 => b.names.iter().zip(vs).for_each(|(n, v)| o.bound(n, v)),
                (v, _) => o.bound(&b.names[0], v),
            }
        }
        if b.names.len() == 1 {
            m.env.push((b.names[0].clone(), v));
        } else {
            match v {
                Value::Tuple(vs) if vs.len() == b.names.len() => {
                    for (n, v) in b.names.iter().zip(vs) {
                        m.env.push((n.clone(), v));
                    }
                }
                other => {
                    return Err(EvalError::Type(format!("cannot destructure {other} into {} names", b.names.len())))
                }
            }
        }
    }
    let outputs = p.outputs.iter().map(|o| m.lookup(o).map(|v| (o.clone(), v))).collect::<EResult<Vec<_>>>()?;
    Ok(Outcome { outputs, stats: m.stats })
}

/// Evaluate a closed expression (free names bound by `env`).
pub fn eval_expr(e: &Expr, env: &[(Name, Value)]) -> EResult<Value> {
    let mut m = Machine::new(Options::default());
    m.env.extend(env.iter().cloned());
    m.eval(e)
}

/// Row-major walk over a rectangular index space.
struct Odometer {
    dims: Vec<usize>,
    cur: Vec<i64>,
    done: bool,
}

impl Odometer {
    fn new(dims: Vec<usize>) -> Odometer {
        let done = dims.contains(&0);
        Odometer { cur: vec![0; dims.len()], dims, done }
    }

    fn next(&mut self) -> Option<Vec<i64>> {
        if self.done {
            return None;
        }
        let out = self.cur.clone();
        let mut k = self.dims.len();
        loop {
            if k == 0 {
                self.done = true;
                break;
            }
            k -= 1;
            self.cur[k] += 1;
            if (self.cur[k] as usize) < self.dims[k] {
                break;
            }
            self.cur[k] = 0;
        }
        Some(out)
    }
}

fn region(t: &Tensor, off: &[i64], shape: &[usize]) -> Option<Tensor> {
    for ((&o, &s), &d) in off.iter().zip(shape).zip(&t.shape) {
        if o < 0 || o as usize + s > d {
            return None;
        }
    }
    let mut data = Vec::with_capacity(shape.iter().product());
    let mut od = Odometer::new(shape.to_vec());
    while let Some(i) = od.next() {
        let idx: Vec<i64> = i.iter().zip(off).map(|(a, b)| a + b).collect();
        data.push(t.data[t.offset(&idx)?].clone());
    }
    Some(Tensor::new(shape.to_vec(), data))
}

fn write_region(t: &mut Tensor, off: &[i64], src: &Tensor, written: Option<&mut HashSet<usize>>) -> Result<(), usize> {
    let mut offsets = Vec::with_capacity(src.len());
    let mut od = Odometer::new(src.shape.clone());
    while let Some(i) = od.next() {
        let idx: Vec<i64> = i.iter().zip(off).map(|(a, b)| a + b).collect();
        offsets.push(t.offset(&idx).ok_or(usize::MAX)?);
    }
    if let Some(w) = written {
        for &o in &offsets {
            if !w.insert(o) {
                return Err(o);
            }
        }
    }
    for (o, v) in offsets.into_iter().zip(&src.data) {
        t.data[o] = v.clone();
    }
    Ok(())
}

fn unflatten(mut o: usize, shape: &[usize]) -> Vec<i64> {
    let mut out = vec![0; shape.len()];
    for k in (0..shape.len()).rev() {
        let d = shape[k].max(1);
        out[k] = (o % d) as i64;
        o /= d;
    }
    out
}

pub(crate) fn arith(op: BinOp, a: &Value, b: &Value) -> EResult<Value> {
    use Value::*;
    let cmp = |o: std::cmp::Ordering| -> bool {
        use std::cmp::Ordering::*;
        match op {
            BinOp::Lt => o == Less,
            BinOp::Le => o != Greater,
            BinOp::Gt => o == Greater,
            BinOp::Ge => o != Less,
            _ => unreachable!(),
        }
    };
    Ok(match (op, a, b) {
        (BinOp::Eq, _, _) => Bool(a == b),
        (BinOp::Ne, _, _) => Bool(a != b),
        (_, Int(x), Int(y)) => {
            let (x, y) = (*x, *y);
            match op {
                BinOp::Add => Int(x.wrapping_add(y)),
                BinOp::Sub => Int(x.wrapping_sub(y)),
                BinOp::Mul => Int(x.wrapping_mul(y)),
                BinOp::Div | BinOp::Rem | BinOp::CeilDiv if y == 0 => return Err(EvalError::DivByZero),
                BinOp::Div => Int(x.wrapping_div(y)),
                BinOp::Rem => Int(x.wrapping_rem(y)),
                BinOp::CeilDiv => Int(x.div_euclid(y) + (x.rem_euclid(y) != 0) as i64),
                BinOp::Min => Int(x.min(y)),
                BinOp::Max => Int(x.max(y)),
                BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => Bool(cmp(x.cmp(&y))),
                BinOp::And | BinOp::Or | BinOp::Eq | BinOp::Ne => {
                    return Err(EvalError::Type(format!("{op:?} on integers")))
                }
            }
        }
        (_, Float(x), Float(y)) => {
            let (x, y) = (*x, *y);
            match op {
                BinOp::Add => Float(x + y),
                BinOp::Sub => Float(x - y),
                BinOp::Mul => Float(x * y),
                BinOp::Div => Float(x / y),
                BinOp::Rem => Float(x % y),
                BinOp::Min => Float(if y < x { y } else { x }),
                BinOp::Max => Float(if y > x { y } else { x }),
                BinOp::Lt => Bool(x < y),
                BinOp::Le => Bool(x <= y),
                BinOp::Gt => Bool(x > y),
                BinOp::Ge => Bool(x >= y),
                _ => return Err(EvalError::Type(format!("{op:?} on floats"))),
            }
        }
        (BinOp::And, Bool(x), Bool(y)) => Bool(*x && *y),
        (BinOp::Or, Bool(x), Bool(y)) => Bool(*x || *y),
        (BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge, Bool(x), Bool(y)) => Bool(cmp(x.cmp(y))),
        _ => return Err(EvalError::Type(format!("{op:?} of {a} and {b}"))),
    })
}

struct Machine<'o> {
    obs: Option<&'o mut dyn Observer>,
    env: Vec<(Name, Value)>,
    inputs: BTreeSet<Name>,
    opts: Options,
    stats: Stats,
    checked: BTreeSet<usize>,
    rng: ChaCha8Rng,
}

impl Machine<'_> {
    fn new(opts: Options) -> Self {
        Machine {
            obs: None,
            env: Vec::new(),
            inputs: BTreeSet::new(),
            opts,
            stats: Stats::default(),
            checked: BTreeSet::new(),
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
        }
    }

    fn bind_inputs(&mut self, p: &Program, inputs: &BTreeMap<Name, Value>) -> EResult<()> {
        let symbols: BTreeSet<Name> = p.size_symbols().into_iter().chain(p.static_sizes.iter().cloned()).collect();
        for s in &symbols {
            if let Some(Value::Int(v)) = inputs.get(s) {
                self.env.push((s.clone(), Value::Int(*v)));
            }
        }
        for inp in &p.inputs {
            let v = inputs.get(&inp.name).ok_or_else(|| EvalError::MissingInput(inp.name.clone()))?;
            let t = v
                .as_tensor()
                .ok_or_else(|| EvalError::SignatureMismatch(format!("input `{}` is not an array", inp.name)))?;
            if t.shape.len() != inp.shape.len() {
                return Err(EvalError::SignatureMismatch(format!(
                    "input `{}` has rank {}, declared {}",
                    inp.name,
                    t.shape.len(),
                    inp.shape.len()
                )));
            }
            for (d, &actual) in inp.shape.iter().zip(&t.shape) {
                if let Expr::Var(s) = d {
                    if self.find(s).is_none() {
                        self.env.push((s.clone(), Value::Int(actual as i64)));
                    }
                }
            }
        }
        for inp in &p.inputs {
            let t = inputs[&inp.name].as_tensor().unwrap().clone();
            for (d, &actual) in inp.shape.iter().zip(&t.shape) {
                let want = self.int(d)?;
                if want != actual as i64 {
                    return Err(EvalError::SignatureMismatch(format!(
                        "input `{}` extent {actual} does not match declared {want}",
                        inp.name
                    )));
                }
            }
            self.inputs.insert(inp.name.clone());
            self.env.push((inp.name.clone(), inputs[&inp.name].clone()));
        }
        Ok(())
    }

    fn find(&self, n: &str) -> Option<&Value> {
        self.env.iter().rev().find(|(m, _)| m == n).map(|(_, v)| v)
    }

    fn lookup(&self, n: &str) -> EResult<Value> {
        self.find(n).cloned().ok_or_else(|| EvalError::UnboundId(n.to_string()))
    }

    fn int(&mut self, e: &Expr) -> EResult<i64> {
        match self.eval(e)? {
            Value::Int(v) => Ok(v),
            v => Err(EvalError::Type(format!("expected an integer, found {v}"))),
        }
    }

    fn ints(&mut self, es: &[Expr]) -> EResult<Vec<i64>> {
        es.iter().map(|e| self.int(e)).collect()
    }

    fn extents(&mut self, es: &[Expr]) -> EResult<Vec<usize>> {
        Ok(self.ints(es)?.into_iter().map(|v| v.max(0) as usize).collect())
    }

    fn count(&mut self, array: &Expr, words: u64) {
        if !self.opts.count_reads {
            return;
        }
        if let Expr::Var(n) = array {
            if self.inputs.contains(n) {
                *self.stats.reads.entry(n.clone()).or_default() += words;
            }
        }
    }

    fn apply(&mut self, c: &Combine, a: Value, b: Value) -> EResult<Value> {
        let mark = self.env.len();
        self.env.push((c.lhs.clone(), a));
        self.env.push((c.rhs.clone(), b));
        let r = self.eval(&c.body);
        self.env.truncate(mark);
        r
    }

    fn identity_check(&mut self, node: usize, c: &Combine, z: &Value) -> EResult<()> {
        if !self.opts.check_identity || !self.checked.insert(node) {
            return Ok(());
        }
        for _ in 0..4 {
            let s = random_like(z, &mut self.rng);
            let l = self.apply(c, z.clone(), s.clone())?;
            let r = self.apply(c, s.clone(), z.clone())?;
            if !values_close(&l, &s, DEFAULT_TOL) || !values_close(&r, &s, DEFAULT_TOL) {
                return Err(EvalError::NonIdentityInit {
                    witness: format!("init {z}, sample {s}: c(init, s) = {l}, c(s, init) = {r}"),
                });
            }
        }
        Ok(())
    }

    fn eval(&mut self, e: &Expr) -> EResult<Value> {
        match e {
            Expr::Lit(Lit::Int(v)) => Ok(Value::Int(*v)),
            Expr::Lit(Lit::Float(v)) => Ok(Value::Float(*v)),
            Expr::Lit(Lit::Bool(b)) => Ok(Value::Bool(*b)),
            Expr::Var(n) => self.lookup(n),
            Expr::Read(a, idx) => {
                let av = self.eval(a)?;
                let idx = self.ints(idx)?;
                let t = av.as_tensor().ok_or_else(|| EvalError::Type(format!("read from non-array {av}")))?;
                let o = t.offset(&idx).ok_or_else(|| EvalError::OutOfBounds {
                    array: array_name(a),
                    index: idx.clone(),
                    shape: t.shape.clone(),
                })?;
                let v = t.data[o].clone();
                self.count(a, v.words());
                if let (Some(obs), Expr::Var(n)) = (self.obs.as_mut(), a.as_ref()) {
                    obs.element(e as *const Expr as usize, n, o, v.words());
                }
                Ok(v)
            }
            Expr::Unary(op, a) => {
                let v = self.eval(a)?;
                Ok(match (op, v) {
                    (UnOp::Neg, Value::Int(x)) => Value::Int(x.wrapping_neg()),
                    (UnOp::Neg, Value::Float(x)) => Value::Float(-x),
                    (UnOp::Not, Value::Bool(b)) => Value::Bool(!b),
                    (UnOp::Sqrt, Value::Float(x)) => Value::Float(x.sqrt()),
                    (UnOp::Abs, Value::Int(x)) => Value::Int(x.wrapping_abs()),
                    (UnOp::Abs, Value::Float(x)) => Value::Float(x.abs()),
                    (UnOp::ToFloat, Value::Int(x)) => Value::Float(x as f64),
                    (UnOp::ToFloat, Value::Float(x)) => Value::Float(x),
                    (UnOp::ToInt, Value::Float(x)) => Value::Int(x as i64),
                    (UnOp::ToInt, Value::Int(x)) => Value::Int(x),
                    (op, v) => return Err(EvalError::Type(format!("{op:?} of {v}"))),
                })
            }
            Expr::Binary(BinOp::And, a, b) => match self.eval(a)? {
                Value::Bool(false) => Ok(Value::Bool(false)),
                Value::Bool(true) => self.eval(b),
                v => Err(EvalError::Type(format!("&& of {v}"))),
            },
            Expr::Binary(BinOp::Or, a, b) => match self.eval(a)? {
                Value::Bool(true) => Ok(Value::Bool(true)),
                Value::Bool(false) => self.eval(b),
                v => Err(EvalError::Type(format!("|| of {v}"))),
            },
            Expr::Binary(op, a, b) => {
                let x = self.eval(a)?;
                let y = self.eval(b)?;
                arith(*op, &x, &y)
            }
            Expr::If(c, t, f) => match self.eval(c)? {
                Value::Bool(true) => self.eval(t),
                Value::Bool(false) => self.eval(f),
                v => Err(EvalError::Type(format!("condition {v} is not a boolean"))),
            },
            Expr::Tuple(es) => Ok(Value::Tuple(es.iter().map(|x| self.eval(x)).collect::<EResult<_>>()?)),
            Expr::Proj(a, k) => match self.eval(a)? {
                Value::Tuple(mut vs) if *k < vs.len() => Ok(vs.swap_remove(*k)),
                v => Err(EvalError::Type(format!("component {} of {v}", k + 1))),
            },
            Expr::Let(n, v, b) => {
                let v = self.eval(v)?;
                let mark = self.env.len();
                self.env.push((n.clone(), v));
                let r = self.eval(b);
                self.env.truncate(mark);
                r
            }
            Expr::ArrayLit(es) => {
                let data: Vec<Value> = es.iter().map(|x| self.eval(x)).collect::<EResult<_>>()?;
                Ok(Value::array(vec![data.len()], data))
            }
            Expr::Len(a) => match self.eval(a)? {
                Value::Array(t) => Ok(Value::Int(t.shape.first().copied().unwrap_or(1) as i64)),
                v => Err(EvalError::Type(format!("len of {v}"))),
            },
            Expr::Fill(shape, v) => {
                let shape = self.extents(shape)?;
                let v = self.eval(v)?;
                Ok(Value::Array(Arc::new(Tensor::filled(shape, v))))
            }
            Expr::Map(m) => {
                let dims = self.extents(&m.dims)?;
                self.iterations(e, &dims);
                let mut data = Vec::with_capacity(dims.iter().product());
                let mut od = Odometer::new(dims.clone());
                while let Some(idx) = od.next() {
                    let mark = self.env.len();
                    for (n, i) in m.idx.iter().zip(&idx) {
                        self.env.push((n.clone(), Value::Int(*i)));
                    }
                    let v = self.eval(&m.body);
                    self.env.truncate(mark);
                    let v = v?;
                    if matches!(v, Value::Array(_) | Value::Groups(_)) {
                        return Err(EvalError::Type("map body produced a collection".into()));
                    }
                    data.push(v);
                }
                Ok(Value::array(dims, data))
            }
            Expr::MultiFold(m) => self.multifold(m, e as *const Expr as usize),
            Expr::FlatMap(f) => {
                let dims = self.extents(&f.dims)?;
                self.iterations(e, &dims);
                let mut data = Vec::new();
                let mut od = Odometer::new(dims);
                while let Some(idx) = od.next() {
                    let mark = self.env.len();
                    for (n, i) in f.idx.iter().zip(&idx) {
                        self.env.push((n.clone(), Value::Int(*i)));
                    }
                    let v = self.eval(&f.body);
                    self.env.truncate(mark);
                    match v? {
                        Value::Array(t) if t.shape.len() == 1 => data.extend(t.data.iter().cloned()),
                        v => return Err(EvalError::Type(format!("flatMap body produced {v}"))),
                    }
                }
                Ok(Value::array(vec![data.len()], data))
            }
            Expr::GroupByFold(g) => self.groupbyfold(g, e),
            Expr::Copy(c) => {
                let src = self.lookup(&c.src)?;
                let t =
                    src.as_tensor().ok_or_else(|| EvalError::Type(format!("copy from non-array `{}`", c.src)))?.clone();
                let off = self.ints(&c.offsets)?;
                let shape = self.extents(&c.shape)?;
                if off.len() != t.shape.len() || shape.len() != t.shape.len() {
                    return Err(EvalError::Type(format!("copy of `{}` with wrong rank", c.src)));
                }
                let zero = t.data.first().map(Value::zero_like).unwrap_or(Value::Float(0.0));
                let mut data = Vec::with_capacity(shape.iter().product());
                let mut words = 0;
                let mut od = Odometer::new(shape.clone());
                while let Some(i) = od.next() {
                    let idx: Vec<i64> = i.iter().zip(&off).map(|(a, b)| a + b).collect();
                    match t.offset(&idx) {
                        Some(o) => {
                            words += t.data[o].words();
                            data.push(t.data[o].clone());
                        }
                        None => data.push(zero.clone()),
                    }
                }
                self.count(&Expr::Var(c.src.clone()), words);
                if let Some(obs) = self.obs.as_mut() {
                    obs.block(e as *const Expr as usize, &c.src, &t.shape, &off, &shape, words);
                }
                Ok(Value::array(shape, data))
            }
            Expr::Slice(s) => {
                let src = self.eval(&s.src)?;
                let t = src.as_tensor().ok_or_else(|| EvalError::Type(format!("slice of non-array {src}")))?.clone();
                if s.index.len() != t.shape.len() {
                    return Err(EvalError::Type("slice rank mismatch".into()));
                }
                let mut off = Vec::new();
                let mut shape = Vec::new();
                let mut out_shape = Vec::new();
                for (i, &d) in s.index.iter().zip(&t.shape) {
                    match i {
                        SliceIndex::Fixed(e) => {
                            off.push(self.int(e)?);
                            shape.push(1);
                        }
                        SliceIndex::Free => {
                            off.push(0);
                            shape.push(d);
                            out_shape.push(d);
                        }
                    }
                }
                let r = region(&t, &off, &shape).ok_or_else(|| EvalError::OutOfBounds {
                    array: array_name(&s.src),
                    index: off.clone(),
                    shape: t.shape.clone(),
                })?;
                let words = r.data.iter().map(Value::words).sum();
                self.count(&s.src, words);
                if let (Some(obs), Expr::Var(n)) = (self.obs.as_mut(), &s.src) {
                    obs.block(e as *const Expr as usize, n, &t.shape, &off, &shape, words);
                }
                if out_shape.is_empty() {
                    return Ok(r.data.into_iter().next().unwrap());
                }
                Ok(Value::array(out_shape, r.data))
            }
        }
    }

    fn iterations(&mut self, e: &Expr, dims: &[usize]) {
        if let Some(obs) = self.obs.as_mut() {
            obs.pattern(e as *const Expr as usize, dims.iter().product::<usize>() as u64);
        }
    }

    fn multifold(&mut self, m: &MultiFoldPat, site: usize) -> EResult<Value> {
        let dims = self.extents(&m.dims)?;
        if let Some(obs) = self.obs.as_mut() {
            obs.pattern(site, dims.iter().product::<usize>() as u64);
        }
        let ranges: Vec<Vec<usize>> = m.ranges.iter().map(|r| self.extents(r)).collect::<EResult<_>>()?;
        let init = self.eval(&m.init)?;
        if let Some(c) = &m.combine {
            self.identity_check(m as *const MultiFoldPat as usize, c, &init)?;
        }
        let mut comps: Vec<Value> = if ranges.len() == 1 {
            vec![init]
        } else {
            match init {
                Value::Tuple(vs) if vs.len() == ranges.len() => vs,
                v => return Err(EvalError::SignatureMismatch(format!("init {v} for {} components", ranges.len()))),
            }
        };
        for (c, r) in comps.iter().zip(&ranges) {
            let ok = match c {
                Value::Array(t) => &t.shape == r,
                _ => r.is_empty(),
            };
            if !ok {
                return Err(EvalError::SignatureMismatch(format!("init {c} does not have range shape {r:?}")));
            }
        }
        let mut written: Vec<HashSet<usize>> = vec![HashSet::new(); ranges.len()];
        let disjoint = self.opts.check_disjoint && m.combine.is_none();
        let mut od = Odometer::new(dims);
        while let Some(idx) = od.next() {
            let mark = self.env.len();
            for (n, i) in m.idx.iter().zip(&idx) {
                self.env.push((n.clone(), Value::Int(*i)));
            }
            let r = self.multifold_step(m, site, &ranges, &mut comps, &mut written, disjoint);
            self.env.truncate(mark);
            r?;
        }
        Ok(if comps.len() == 1 { comps.pop().unwrap() } else { Value::Tuple(comps) })
    }

    fn multifold_step(
        &mut self,
        m: &MultiFoldPat,
        site: usize,
        ranges: &[Vec<usize>],
        comps: &mut [Value],
        written: &mut [HashSet<usize>],
        disjoint: bool,
    ) -> EResult<()> {
        for (n, v) in &m.lets {
            let v = self.eval(v)?;
            self.env.push((n.clone(), v));
        }
        for (k, u) in m.updates.iter().enumerate() {
            let loc = self.ints(&u.loc)?;
            if ranges[k].is_empty() {
                let cur = comps[k].clone();
                self.env.push((u.acc.clone(), cur));
                let nv = self.eval(&u.body);
                self.env.pop();
                comps[k] = nv?;
                continue;
            }
            let slice = match &u.slice {
                Some(s) => Some(self.extents(s)?),
                None => None,
            };
            let t = match &comps[k] {
                Value::Array(t) => t.clone(),
                _ => unreachable!(),
            };
            let oob = || EvalError::OutOfBounds { array: u.acc.clone(), index: loc.clone(), shape: t.shape.clone() };
            let cur = match &slice {
                None => t.data[t.offset(&loc).ok_or_else(oob)?].clone(),
                Some(s) => Value::Array(Arc::new(region(&t, &loc, s).ok_or_else(oob)?)),
            };
            self.env.push((u.acc.clone(), cur));
            let nv = self.eval(&u.body);
            self.env.pop();
            let nv = nv?;
            if let Some(obs) = self.obs.as_mut() {
                let ext = slice.clone().unwrap_or_else(|| vec![1; loc.len()]);
                let words = match &nv {
                    Value::Array(nt) => nt.data.iter().map(Value::words).sum(),
                    v => v.words(),
                };
                obs.update(site, k, &t.shape, &loc, &ext, words);
            }
            let Value::Array(arc) = &mut comps[k] else { unreachable!() };
            let tm = Arc::make_mut(arc);
            let w = if disjoint { Some(&mut written[k]) } else { None };
            let res = match (&slice, nv) {
                (None, v) => write_region(tm, &loc, &Tensor::new(vec![1; loc.len()], vec![v]), w),
                (Some(s), Value::Array(nt)) if &nt.shape == s => write_region(tm, &loc, &nt, w),
                (Some(s), v) => return Err(EvalError::Type(format!("update produced {v}, expected shape {s:?}"))),
            };
            if let Err(o) = res {
                if o == usize::MAX {
                    return Err(oob());
                }
                return Err(EvalError::DisjointWrite { component: k, loc: unflatten(o, &tm.shape) });
            }
        }
        Ok(())
    }

    fn groupbyfold(&mut self, g: &GroupByFoldPat, e: &Expr) -> EResult<Value> {
        let dims = self.extents(&g.dims)?;
        self.iterations(e, &dims);
        let init = self.eval(&g.init)?;
        self.identity_check(g as *const GroupByFoldPat as usize, &g.combine, &init)?;
        let mut buckets: Vec<(Value, Value)> = Vec::new();
        let mut od = Odometer::new(dims);
        while let Some(idx) = od.next() {
            let mark = self.env.len();
            for (n, i) in g.idx.iter().zip(&idx) {
                self.env.push((n.clone(), Value::Int(*i)));
            }
            let r = self.groupbyfold_step(g, &init, &mut buckets);
            self.env.truncate(mark);
            r?;
        }
        Ok(Value::Groups(Arc::new(buckets)))
    }

    fn groupbyfold_step(&mut self, g: &GroupByFoldPat, init: &Value, buckets: &mut Vec<(Value, Value)>) -> EResult<()> {
        for (n, v) in &g.lets {
            let v = self.eval(v)?;
            self.env.push((n.clone(), v));
        }
        match &g.gen {
            GroupGen::Keyed { key, acc, update } => {
                let k = self.eval(key)?;
                let pos = buckets.iter().position(|(b, _)| *b == k);
                let cur = pos.map(|p| buckets[p].1.clone()).unwrap_or_else(|| init.clone());
                self.env.push((acc.clone(), cur));
                let nv = self.eval(update);
                self.env.pop();
                let nv = nv?;
                match pos {
                    Some(p) => buckets[p].1 = nv,
                    None => buckets.push((k, nv)),
                }
            }
            GroupGen::Merge(e) => {
                let inner = match self.eval(e)? {
                    Value::Groups(gs) => gs,
                    v => return Err(EvalError::Type(format!("merge of {v}"))),
                };
                for (k, v) in inner.iter() {
                    match buckets.iter().position(|(b, _)| b == k) {
                        Some(p) => {
                            let cur = buckets[p].1.clone();
                            buckets[p].1 = self.apply(&g.combine, cur, v.clone())?;
                        }
                        None => buckets.push((k.clone(), v.clone())),
                    }
                }
            }
        }
        Ok(())
    }
}

fn array_name(e: &Expr) -> String {
    match e {
        Expr::Var(n) => n.clone(),
        other => crate::syntax::print_expr(other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse;

    fn vec_f(xs: &[f64]) -> Value {
        Value::array(vec![xs.len()], xs.iter().map(|x| Value::Float(*x)).collect())
    }

    #[test]
    fn map_doubles() {
        let p = parse("input x : Float[d] dynamic\ny = map(d){ i => 2.0 * x(i) }\noutput y").unwrap();
        let inputs = [("x".to_string(), vec_f(&[1.0, 2.5]))].into_iter().collect();
        let out = eval_program(&p, &inputs).unwrap();
        assert_eq!(out[0].1, vec_f(&[2.0, 5.0]));
    }

    #[test]
    fn unused_combine_double_write_is_caught() {
        let src = "input x : Float[d] dynamic\ny = multiFold(d)(1)(zeros(1)){ i => (0, acc => x(i)) }(_)\noutput y";
        let p = parse(src).unwrap();
        let inputs = [("x".to_string(), vec_f(&[1.0, 2.0]))].into_iter().collect();
        assert!(eval_program(&p, &inputs).is_ok());
        let err = run(&p, &inputs, Options::instrumented()).unwrap_err();
        assert!(matches!(err, EvalError::DisjointWrite { component: 0, .. }), "{err}");
    }

    #[test]
    fn histogram_groups_in_first_occurrence_order() {
        let src = "input x : Int[d] dynamic\nh = groupByFold(d)(0){ i => (x(i) / 10, 1) }{ (a, b) => a + b }\noutput h";
        let p = parse(src).unwrap();
        let xs = [35, 2, 31, 7, 99];
        let x = Value::array(vec![5], xs.iter().map(|v| Value::Int(*v)).collect());
        let out = eval_program(&p, &[("x".to_string(), x)].into_iter().collect()).unwrap();
        let want = vec![(Value::Int(3), Value::Int(2)), (Value::Int(0), Value::Int(2)), (Value::Int(9), Value::Int(1))];
        assert_eq!(out[0].1, Value::Groups(Arc::new(want)));
    }

    #[test]
    fn reads_of_inputs_are_counted() {
        let src = "input x : Float[d] dynamic\ns = fold(d)(0.0){ i => acc => acc + x(i) * x(i) }{ (a, b) => a + b }\noutput s";
        let p = parse(src).unwrap();
        let inputs = [("x".to_string(), vec_f(&[1.0, 2.0, 3.0]))].into_iter().collect();
        let o = run(&p, &inputs, Options::instrumented()).unwrap();
        assert_eq!(o.outputs[0].1, Value::Float(14.0));
        assert_eq!(o.stats.reads["x"], 6);
    }

    #[test]
    fn non_identity_init_is_reported() {
        let src = "input x : Float[d] dynamic\ns = fold(d)(1.0){ i => acc => acc + x(i) }{ (a, b) => a + b }\noutput s";
        let p = parse(src).unwrap();
        let inputs = [("x".to_string(), vec_f(&[1.0]))].into_iter().collect();
        let err = run(&p, &inputs, Options::instrumented()).unwrap_err();
        assert!(matches!(err, EvalError::NonIdentityInit { .. }));
    }
}
