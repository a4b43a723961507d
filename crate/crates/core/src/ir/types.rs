use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{
    contains_read, free_vars, BinOp, Expr, GroupGen, Lit, MultiFoldPat, Name, Program, SliceIndex, Type, UnOp,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum Rule {
    UnboundName,
    TypeMismatch,
    IndexArity,
    OneDimensionalityViolation,
    InitShapeMismatch,
    SliceArity,
    SliceExceedsRange,
    UpdateCount,
    NestedArray,
    DataDependentDomain,
    ShadowedName,
    DuplicateBinding,
    TupleArity,
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct Diagnostic {
    /// Slash-separated path from the enclosing binding to the offending node.
    pub path: String,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:?}: {}", self.path, self.rule, self.message)
    }
}

fn unify(a: &Type, b: &Type) -> Option<Type> {
    match (a, b) {
        (Type::Any, t) | (t, Type::Any) => Some(t.clone()),
        (Type::Tuple(x), Type::Tuple(y)) if x.len() == y.len() => {
            x.iter().zip(y).map(|(p, q)| unify(p, q)).collect::<Option<Vec<_>>>().map(Type::Tuple)
        }
        (Type::Array(x, r), Type::Array(y, s)) if r == s => Some(Type::Array(Box::new(unify(x, y)?), *r)),
        (Type::Groups(k, v), Type::Groups(k2, v2)) => {
            Some(Type::Groups(Box::new(unify(k, k2)?), Box::new(unify(v, v2)?)))
        }
        (x, y) if x == y => Some(x.clone()),
        _ => None,
    }
}

fn const_extent(e: &Expr) -> Option<i64> {
    match e {
        Expr::Lit(Lit::Int(v)) => Some(*v),
        _ => None,
    }
}

/// Scoped typing environment. Every binder type ever inferred is also kept
/// in `types`, which is meaningful once binder names are unique.
#[derive(Clone, Debug, Default)]
pub struct TypeEnv {
    scope: Vec<(Name, Type)>,
    pub types: BTreeMap<Name, Type>,
    pub diags: Vec<Diagnostic>,
    path: Vec<String>,
}

impl TypeEnv {
    /// Environment with inputs, size symbols and every binder of `p` in scope.
    pub fn for_program(p: &Program) -> TypeEnv {
        let types = infer_program_types(p);
        let mut env = TypeEnv::default();
        for (n, t) in &types {
            env.bind(n, t.clone());
        }
        env.diags.clear();
        env
    }

    pub fn bind(&mut self, n: &str, t: Type) {
        self.types.insert(n.to_string(), t.clone());
        self.scope.push((n.to_string(), t));
    }

    pub fn lookup(&self, n: &str) -> Option<&Type> {
        self.scope.iter().rev().find(|(m, _)| m == n).map(|(_, t)| t)
    }

    fn err(&mut self, rule: Rule, message: impl Into<String>) {
        self.diags.push(Diagnostic { path: self.path.join("/"), rule, message: message.into() });
    }

    fn expect(&mut self, got: &Type, want: &Type, what: &str) -> Type {
        match unify(got, want) {
            Some(t) => t,
            None => {
                self.err(Rule::TypeMismatch, format!("{what}: expected {want}, found {got}"));
                want.clone()
            }
        }
    }

    fn ints(&mut self, es: &[Expr], what: &str) {
        for e in es {
            let t = self.infer(e);
            self.expect(&t, &Type::Int, what);
        }
    }

    fn domain(&mut self, dims: &[Expr]) {
        for d in dims {
            if contains_read(d) {
                self.err(Rule::DataDependentDomain, "domain extent reads array contents");
            }
        }
        self.ints(dims, "domain extent");
    }

    fn enter(&mut self, seg: &str) -> usize {
        self.path.push(seg.to_string());
        self.scope.len()
    }

    fn leave(&mut self, mark: usize) {
        self.path.pop();
        self.scope.truncate(mark);
    }

    pub fn infer(&mut self, e: &Expr) -> Type {
        match e {
            Expr::Lit(Lit::Int(_)) => Type::Int,
            Expr::Lit(Lit::Float(_)) => Type::Float,
            Expr::Lit(Lit::Bool(_)) => Type::Bool,
            Expr::Var(n) => match self.lookup(n) {
                Some(t) => t.clone(),
                None => {
                    self.err(Rule::UnboundName, format!("`{n}` is not bound"));
                    Type::Any
                }
            },
            Expr::Read(a, idx) => {
                let at = self.infer(a);
                self.ints(idx, "index");
                match at {
                    Type::Array(el, r) => {
                        if r != idx.len() {
                            self.err(Rule::IndexArity, format!("rank-{r} array read with {} indices", idx.len()));
                        }
                        *el
                    }
                    Type::Any => Type::Any,
                    t => {
                        self.err(Rule::TypeMismatch, format!("read from non-array of type {t}"));
                        Type::Any
                    }
                }
            }
            Expr::Unary(op, a) => {
                let t = self.infer(a);
                match op {
                    UnOp::Not => self.expect(&t, &Type::Bool, "operand of !"),
                    UnOp::Sqrt => self.expect(&t, &Type::Float, "operand of sqrt"),
                    UnOp::ToFloat => {
                        if !matches!(t, Type::Int | Type::Float | Type::Any) {
                            self.err(Rule::TypeMismatch, format!("float of {t}"));
                        }
                        Type::Float
                    }
                    UnOp::ToInt => {
                        if !matches!(t, Type::Int | Type::Float | Type::Any) {
                            self.err(Rule::TypeMismatch, format!("int of {t}"));
                        }
                        Type::Int
                    }
                    UnOp::Neg | UnOp::Abs => self.numeric(t, "operand"),
                }
            }
            Expr::Binary(op, a, b) => {
                let (ta, tb) = (self.infer(a), self.infer(b));
                match op {
                    BinOp::And | BinOp::Or => {
                        self.expect(&ta, &Type::Bool, "logical operand");
                        self.expect(&tb, &Type::Bool, "logical operand");
                        Type::Bool
                    }
                    BinOp::Rem | BinOp::CeilDiv => {
                        self.expect(&ta, &Type::Int, "integer operand");
                        self.expect(&tb, &Type::Int, "integer operand");
                        Type::Int
                    }
                    BinOp::Eq | BinOp::Ne => {
                        if unify(&ta, &tb).is_none() {
                            self.err(Rule::TypeMismatch, format!("comparing {ta} with {tb}"));
                        }
                        Type::Bool
                    }
                    _ => {
                        let t = match unify(&ta, &tb) {
                            Some(t) => t,
                            None => {
                                self.err(Rule::TypeMismatch, format!("{op:?} of {ta} and {tb}"));
                                Type::Any
                            }
                        };
                        let t = self.numeric(t, "operand");
                        if op.is_comparison() {
                            Type::Bool
                        } else {
                            t
                        }
                    }
                }
            }
            Expr::If(c, t, f) => {
                let ct = self.infer(c);
                self.expect(&ct, &Type::Bool, "condition");
                let (tt, ft) = (self.infer(t), self.infer(f));
                self.expect(&ft, &tt, "else branch")
            }
            Expr::Tuple(es) => Type::Tuple(es.iter().map(|x| self.infer(x)).collect()),
            Expr::Proj(a, i) => match self.infer(a) {
                Type::Tuple(ts) if *i < ts.len() => ts[*i].clone(),
                Type::Any => Type::Any,
                t => {
                    self.err(Rule::TupleArity, format!("component {} of {t}", i + 1));
                    Type::Any
                }
            },
            Expr::Let(n, v, b) => {
                let vt = self.infer(v);
                let mark = self.scope.len();
                self.bind(n, vt);
                let t = self.infer(b);
                self.scope.truncate(mark);
                t
            }
            Expr::ArrayLit(es) => {
                let mut el = Type::Any;
                for x in es {
                    let t = self.infer(x);
                    el = self.expect(&t, &el, "array literal element");
                }
                self.elem(el)
            }
            Expr::Len(a) => {
                let t = self.infer(a);
                if !matches!(t, Type::Array(_, 1) | Type::Any) {
                    self.err(Rule::TypeMismatch, format!("len of {t}"));
                }
                Type::Int
            }
            Expr::Fill(shape, v) => {
                self.ints(shape, "fill extent");
                let t = self.infer(v);
                Type::Array(Box::new(self.scalar(t)), shape.len())
            }
            Expr::Map(m) => {
                let mark = self.enter("map");
                self.domain(&m.dims);
                for i in &m.idx {
                    self.bind(i, Type::Int);
                }
                let t = self.infer(&m.body);
                let t = self.scalar(t);
                self.leave(mark);
                Type::Array(Box::new(t), m.dims.len())
            }
            Expr::MultiFold(m) => self.multifold(m),
            Expr::FlatMap(f) => {
                let mark = self.enter("flatMap");
                if f.dims.len() != 1 {
                    self.err(Rule::OneDimensionalityViolation, format!("flatMap over {} dimensions", f.dims.len()));
                }
                self.domain(&f.dims);
                for i in &f.idx {
                    self.bind(i, Type::Int);
                }
                let t = self.infer(&f.body);
                let el = match t {
                    Type::Array(el, 1) => *el,
                    Type::Any => Type::Any,
                    t => {
                        self.err(Rule::TypeMismatch, format!("flatMap body must be a 1-D array, found {t}"));
                        Type::Any
                    }
                };
                self.leave(mark);
                Type::Array(Box::new(el), 1)
            }
            Expr::GroupByFold(g) => {
                let mark = self.enter("groupByFold");
                if g.dims.len() != 1 {
                    self.err(Rule::OneDimensionalityViolation, format!("groupByFold over {} dimensions", g.dims.len()));
                }
                self.domain(&g.dims);
                let it = self.infer(&g.init);
                let vt = self.scalar(it);
                let cm = self.scope.len();
                self.bind(&g.combine.lhs, vt.clone());
                self.bind(&g.combine.rhs, vt.clone());
                let ct = self.infer(&g.combine.body);
                let vt = self.expect(&ct, &vt, "combine result");
                self.scope.truncate(cm);
                for i in &g.idx {
                    self.bind(i, Type::Int);
                }
                for (n, v) in &g.lets {
                    let t = self.infer(v);
                    self.bind(n, t);
                }
                let out = match &g.gen {
                    GroupGen::Keyed { key, acc, update } => {
                        let kt = self.infer(key);
                        let kt = self.scalar(kt);
                        self.bind(acc, vt.clone());
                        let ut = self.infer(update);
                        let vt = self.expect(&ut, &vt, "bucket update");
                        Type::Groups(Box::new(kt), Box::new(vt))
                    }
                    GroupGen::Merge(e) => {
                        let t = self.infer(e);
                        let want = Type::Groups(Box::new(Type::Any), Box::new(vt));
                        self.expect(&t, &want, "merged groups")
                    }
                };
                self.leave(mark);
                out
            }
            Expr::Copy(c) => {
                self.ints(&c.offsets, "copy offset");
                self.ints(&c.shape, "copy extent");
                match self.lookup(&c.src).cloned() {
                    Some(Type::Array(el, r)) => {
                        if c.offsets.len() != r || c.shape.len() != r {
                            self.err(Rule::IndexArity, format!("copy of rank-{r} array `{}`", c.src));
                        }
                        Type::Array(el, r)
                    }
                    Some(Type::Any) => Type::Array(Box::new(Type::Any), c.shape.len()),
                    Some(t) => {
                        self.err(Rule::TypeMismatch, format!("copy from non-array of type {t}"));
                        Type::Any
                    }
                    None => {
                        self.err(Rule::UnboundName, format!("`{}` is not bound", c.src));
                        Type::Any
                    }
                }
            }
            Expr::Slice(s) => {
                let st = self.infer(&s.src);
                for i in &s.index {
                    if let SliceIndex::Fixed(x) = i {
                        let t = self.infer(x);
                        self.expect(&t, &Type::Int, "slice index");
                    }
                }
                let free = s.index.iter().filter(|i| matches!(i, SliceIndex::Free)).count();
                match st {
                    Type::Array(el, r) => {
                        if r != s.index.len() {
                            self.err(Rule::SliceArity, format!("rank-{r} array sliced with {} indices", s.index.len()));
                        }
                        if free == 0 {
                            *el
                        } else {
                            Type::Array(el, free)
                        }
                    }
                    Type::Any => Type::Any,
                    t => {
                        self.err(Rule::TypeMismatch, format!("slice of non-array of type {t}"));
                        Type::Any
                    }
                }
            }
        }
    }

    fn numeric(&mut self, t: Type, what: &str) -> Type {
        if !matches!(t, Type::Int | Type::Float | Type::Any) {
            self.err(Rule::TypeMismatch, format!("{what} must be numeric, found {t}"));
        }
        t
    }

    fn scalar(&mut self, t: Type) -> Type {
        if !t.is_scalar() {
            self.err(Rule::NestedArray, format!("array elements must be scalars, found {t}"));
            return Type::Any;
        }
        t
    }

    fn elem(&mut self, el: Type) -> Type {
        let el = self.scalar(el);
        Type::Array(Box::new(el), 1)
    }

    fn multifold(&mut self, m: &MultiFoldPat) -> Type {
        let mark = self.enter("multiFold");
        self.domain(&m.dims);
        for r in &m.ranges {
            self.ints(r, "accumulator range");
        }
        if m.updates.len() != m.ranges.len() {
            self.err(
                Rule::UpdateCount,
                format!("{} accumulator components but {} updates", m.ranges.len(), m.updates.len()),
            );
        }
        let it = self.infer(&m.init);
        let comps: Vec<Type> = if m.ranges.len() == 1 {
            vec![it.clone()]
        } else {
            match &it {
                Type::Tuple(ts) if ts.len() == m.ranges.len() => ts.clone(),
                Type::Any => vec![Type::Any; m.ranges.len()],
                t => {
                    self.err(Rule::InitShapeMismatch, format!("init of type {t} for {} components", m.ranges.len()));
                    vec![Type::Any; m.ranges.len()]
                }
            }
        };
        let init_parts: Vec<&Expr> = match (&m.init, m.ranges.len()) {
            (Expr::Tuple(es), n) if n > 1 && es.len() == n => es.iter().collect(),
            (e, _) => vec![e; m.ranges.len()],
        };
        for (k, (r, t)) in m.ranges.iter().zip(&comps).enumerate() {
            match t {
                Type::Any => {}
                Type::Array(_, rank) if *rank == r.len() => {
                    let ext = match init_parts[k] {
                        Expr::Fill(s, _) => Some(s),
                        Expr::Map(mp) => Some(&mp.dims),
                        _ => None,
                    };
                    if let Some(ext) = ext {
                        for (a, b) in ext.iter().zip(r) {
                            if let (Some(x), Some(y)) = (const_extent(a), const_extent(b)) {
                                if x != y {
                                    self.err(Rule::InitShapeMismatch, format!("init extent {x} for range extent {y}"));
                                }
                            }
                        }
                    }
                }
                t if r.is_empty() && t.is_scalar() => {}
                t => self.err(Rule::InitShapeMismatch, format!("init of type {t} for a rank-{} range", r.len())),
            }
        }
        let acc_ty = if comps.len() == 1 { comps[0].clone() } else { Type::Tuple(comps.clone()) };
        if let Some(c) = &m.combine {
            let cm = self.scope.len();
            self.path.push("combine".into());
            self.bind(&c.lhs, acc_ty.clone());
            self.bind(&c.rhs, acc_ty.clone());
            let ct = self.infer(&c.body);
            self.expect(&ct, &acc_ty, "combine result");
            self.path.pop();
            self.scope.truncate(cm);
        }
        for i in &m.idx {
            self.bind(i, Type::Int);
        }
        for (n, v) in &m.lets {
            let t = self.infer(v);
            self.bind(n, t);
        }
        for (k, u) in m.updates.iter().enumerate() {
            self.path.push(format!("update[{k}]"));
            let (range, ct) = match (m.ranges.get(k), comps.get(k)) {
                (Some(r), Some(t)) => (r.clone(), t.clone()),
                _ => (Vec::new(), Type::Any),
            };
            if u.loc.len() != range.len() {
                self.err(
                    Rule::SliceArity,
                    format!("location of rank {} for a rank-{} range", u.loc.len(), range.len()),
                );
            }
            self.ints(&u.loc, "update location");
            let el = match &ct {
                Type::Array(el, _) => (**el).clone(),
                t if range.is_empty() => t.clone(),
                _ => Type::Any,
            };
            let at = match &u.slice {
                None => el,
                Some(s) => {
                    if s.len() != range.len() {
                        self.err(
                            Rule::SliceArity,
                            format!("slice of rank {} for a rank-{} range", s.len(), range.len()),
                        );
                    }
                    for (a, b) in s.iter().zip(&range) {
                        if let (Some(x), Some(y)) = (const_extent(a), const_extent(b)) {
                            if x > y {
                                self.err(Rule::SliceExceedsRange, format!("slice extent {x} exceeds range extent {y}"));
                            }
                        }
                    }
                    self.ints(s, "slice extent");
                    if range.is_empty() {
                        el
                    } else {
                        Type::Array(Box::new(el), s.len())
                    }
                }
            };
            let cm = self.scope.len();
            self.bind(&u.acc, at.clone());
            let bt = self.infer(&u.body);
            self.expect(&bt, &at, "update result");
            self.scope.truncate(cm);
            self.path.pop();
        }
        self.leave(mark);
        acc_ty
    }
}

fn check_program(p: &Program) -> TypeEnv {
    let mut env = TypeEnv::default();
    let mut globals: BTreeSet<Name> = BTreeSet::new();
    fn dup(env: &mut TypeEnv, globals: &mut BTreeSet<Name>, n: &Name) {
        if !globals.insert(n.clone()) {
            env.err(Rule::DuplicateBinding, format!("`{n}` is bound twice"));
        }
    }
    for s in p.size_symbols() {
        if p.input(&s).is_none() {
            env.bind(&s, Type::Int);
        }
    }
    for s in &p.static_sizes {
        if env.lookup(s).is_none() {
            env.bind(s, Type::Int);
        }
    }
    for i in &p.inputs {
        env.path = vec![i.name.clone()];
        dup(&mut env, &mut globals, &i.name);
        if !i.elem.is_scalar() {
            env.err(Rule::NestedArray, format!("input element type {} is not scalar", i.elem));
        }
        for d in &i.shape {
            if contains_read(d) {
                env.err(Rule::DataDependentDomain, "input extent reads array contents");
            }
        }
        env.bind(&i.name, Type::Array(Box::new(i.elem.clone()), i.shape.len()));
    }
    for s in p.size_symbols() {
        globals.insert(s);
    }
    for b in &p.bindings {
        env.path = vec![b.names.join(",")];
        for n in &b.names {
            dup(&mut env, &mut globals, n);
        }
        let t = env.infer(&b.value);
        env.path = vec![b.names.join(",")];
        for inner in b.value.binders() {
            if globals.contains(&inner) {
                env.err(Rule::ShadowedName, format!("`{inner}` shadows a program-level name"));
            }
        }
        if b.names.len() == 1 {
            env.bind(&b.names[0], t);
        } else {
            let parts = match t {
                Type::Tuple(ts) if ts.len() == b.names.len() => ts,
                Type::Any => vec![Type::Any; b.names.len()],
                t => {
                    env.err(Rule::TupleArity, format!("{} names bound to a value of type {t}", b.names.len()));
                    vec![Type::Any; b.names.len()]
                }
            };
            for (n, t) in b.names.iter().zip(parts) {
                env.bind(n, t);
            }
        }
    }
    env.path.clear();
    for o in &p.outputs {
        if env.lookup(o).is_none() {
            env.err(Rule::UnboundName, format!("output `{o}` is not bound"));
        }
    }
    // Size symbols used in inputs must not also name arrays.
    for i in &p.inputs {
        for d in &i.shape {
            for v in free_vars(d) {
                if p.input(&v).is_some() {
                    env.path = vec![i.name.clone()];
                    env.err(Rule::TypeMismatch, format!("extent `{v}` names an array"));
                }
            }
        }
    }
    env
}

/// All well-formedness diagnostics for `p`; empty means the program is valid.
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    check_program(p).diags
}

/// Types of every name bound in `p`: inputs, size symbols, top-level
/// bindings and inner binders.
pub fn infer_program_types(p: &Program) -> BTreeMap<Name, Type> {
    check_program(p).types
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Binding, Input, MapPat, SizeClass, Update};

    fn prog(value: Expr) -> Program {
        Program {
            inputs: vec![Input {
                name: "x".into(),
                elem: Type::Float,
                shape: vec![Expr::var("n")],
                class: SizeClass::Dynamic,
            }],
            static_sizes: vec![],
            bindings: vec![Binding { names: vec!["y".into()], value }],
            outputs: vec!["y".into()],
        }
    }

    fn rules(p: &Program) -> Vec<Rule> {
        validate(p).into_iter().map(|d| d.rule).collect()
    }

    #[test]
    fn map_over_input_is_valid() {
        let p = prog(Expr::Map(Box::new(MapPat {
            dims: vec![Expr::var("n")],
            idx: vec!["i".into()],
            body: Expr::read(Expr::var("x"), vec![Expr::var("i")]),
        })));
        assert!(validate(&p).is_empty(), "{:?}", validate(&p));
        assert_eq!(infer_program_types(&p)["y"], Type::Array(Box::new(Type::Float), 1));
    }

    #[test]
    fn init_extent_must_match_range() {
        let p = prog(Expr::MultiFold(Box::new(MultiFoldPat {
            dims: vec![Expr::var("n")],
            idx: vec!["i".into()],
            ranges: vec![vec![Expr::int(4)]],
            init: Expr::Fill(vec![Expr::int(3)], Box::new(Expr::float(0.0))),
            lets: vec![],
            updates: vec![Update { loc: vec![Expr::int(0)], slice: None, acc: "a".into(), body: Expr::var("a") }],
            combine: None,
        })));
        assert_eq!(rules(&p), vec![Rule::InitShapeMismatch]);
    }

    #[test]
    fn shadowing_an_input_is_rejected() {
        let p = prog(Expr::let_in("x", Expr::int(1), Expr::var("x")));
        assert!(rules(&p).contains(&Rule::ShadowedName));
    }

    #[test]
    fn wrong_index_count() {
        let p = prog(Expr::read(Expr::var("x"), vec![Expr::int(0), Expr::int(1)]));
        assert_eq!(rules(&p), vec![Rule::IndexArity]);
    }
}
