//! The parallel-pattern IR.
//!
//! Patterns (`Map`, `MultiFold`, `FlatMap`, `GroupByFold`) are ordinary
//! expression nodes so they can nest arbitrarily inside each other's bodies.
//! Array copies and slices are expression nodes too. Domain extents are
//! integer expressions over size symbols and enclosing indices, which lets
//! strip-mined code carry its `min` guards and `cdiv` tile counts directly.

mod canon;
mod deps;
mod shape;
mod types;
mod visit;

pub use canon::{alpha_equal, alpha_equal_expr, canonical_form, structural_hash, structural_hash_expr};
pub use deps::{deps, DepGraph};
pub use shape::{binding_shapes, shape_words, static_bound, static_symbols, value_words, StaticEnv};
pub use types::{infer_program_types, validate, Diagnostic, Rule, TypeEnv};
pub use visit::{contains_pattern, contains_read, free_vars, mentions, rename_var, substitute, Fresh};

use std::fmt;

pub type Name = String;

/// Scalar and aggregate types. Array elements are restricted to scalars and
/// tuples of scalars; nested arrays are rejected by validation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Type {
    Int,
    Float,
    Bool,
    Tuple(Vec<Type>),
    Array(Box<Type>, usize),
    /// Output of a `GroupByFold`: ordered (key, value) buckets.
    Groups(Box<Type>, Box<Type>),
    /// Element type of an empty array literal, unified away during inference.
    Any,
}

impl Type {
    pub fn is_scalar(&self) -> bool {
        match self {
            Type::Int | Type::Float | Type::Bool | Type::Any => true,
            Type::Tuple(ts) => ts.iter().all(Type::is_scalar),
            _ => false,
        }
    }

    /// Width in machine words (one per scalar leaf).
    pub fn words(&self) -> u64 {
        match self {
            Type::Tuple(ts) => ts.iter().map(Type::words).sum(),
            _ => 1,
        }
    }

    /// Width in bits: 32 for Int/Float, 1 for Bool, summed over tuples.
    pub fn bits(&self) -> u64 {
        match self {
            Type::Bool => 1,
            Type::Tuple(ts) => ts.iter().map(Type::bits).sum(),
            _ => 32,
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Int => write!(f, "Int"),
            Type::Float => write!(f, "Float"),
            Type::Bool => write!(f, "Bool"),
            Type::Any => write!(f, "?"),
            Type::Tuple(ts) => {
                write!(f, "(")?;
                for (i, t) in ts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{t}")?;
                }
                write!(f, ")")
            }
            Type::Array(e, r) => write!(f, "{e}[{r}]"),
            Type::Groups(k, v) => write!(f, "Groups({k}, {v})"),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Lit {
    Int(i64),
    Float(f64),
    Bool(bool),
}

impl PartialEq for Lit {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Lit::Int(a), Lit::Int(b)) => a == b,
            (Lit::Float(a), Lit::Float(b)) => a.to_bits() == b.to_bits(),
            (Lit::Bool(a), Lit::Bool(b)) => a == b,
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
    Min,
    Max,
    /// Ceiling division; the extent of a strided (tile-count) domain.
    CeilDiv,
}

impl BinOp {
    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnOp {
    Neg,
    Not,
    Sqrt,
    Abs,
    ToFloat,
    ToInt,
}

/// One accumulator update generated per index of a `MultiFold`.
///
/// `loc` is the element offset into the accumulator. With `slice: None` the
/// update function sees a single accumulator element; with `Some(shape)` it
/// sees (and must return) the sub-tensor of that shape at `loc`. A component
/// with an empty range is a scalar accumulator and `loc` is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Update {
    pub loc: Vec<Expr>,
    pub slice: Option<Vec<Expr>>,
    pub acc: Name,
    pub body: Expr,
}

/// A binary combine function `(lhs, rhs) => body`.
#[derive(Clone, Debug, PartialEq)]
pub struct Combine {
    pub lhs: Name,
    pub rhs: Name,
    pub body: Expr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapPat {
    pub dims: Vec<Expr>,
    pub idx: Vec<Name>,
    pub body: Expr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiFoldPat {
    pub dims: Vec<Expr>,
    pub idx: Vec<Name>,
    /// One range per accumulator component; more than one makes the
    /// accumulator (and result) a tuple.
    pub ranges: Vec<Vec<Expr>>,
    pub init: Expr,
    pub lets: Vec<(Name, Expr)>,
    /// Exactly one update per range component, in component order.
    pub updates: Vec<Update>,
    /// `None` is the unused combine: every location is written at most once.
    pub combine: Option<Combine>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlatMapPat {
    /// Validation requires exactly one dimension.
    pub dims: Vec<Expr>,
    pub idx: Vec<Name>,
    pub body: Expr,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GroupGen {
    /// Generate a key and fold the bucket value with `acc => update`.
    Keyed { key: Expr, acc: Name, update: Expr },
    /// Merge a whole group map produced per index, combining shared keys.
    Merge(Expr),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupByFoldPat {
    /// Validation requires exactly one dimension.
    pub dims: Vec<Expr>,
    pub idx: Vec<Name>,
    pub init: Expr,
    pub lets: Vec<(Name, Expr)>,
    pub gen: GroupGen,
    pub combine: Combine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ReuseTag {
    pub factor: u32,
    /// Words shared with the neighbouring tile along the tiled dimension.
    pub overlap: u32,
}

/// A copy of a rectangular region of `src` into a local tile. Positions
/// outside the source bounds read as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct CopyPat {
    pub src: Name,
    pub offsets: Vec<Expr>,
    pub shape: Vec<Expr>,
    pub reuse: Option<ReuseTag>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SliceIndex {
    Fixed(Expr),
    Free,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlicePat {
    pub src: Expr,
    pub index: Vec<SliceIndex>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Lit(Lit),
    Var(Name),
    Read(Box<Expr>, Vec<Expr>),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    Tuple(Vec<Expr>),
    /// Zero-based tuple projection.
    Proj(Box<Expr>, usize),
    Let(Name, Box<Expr>, Box<Expr>),
    ArrayLit(Vec<Expr>),
    Len(Box<Expr>),
    Fill(Vec<Expr>, Box<Expr>),
    Map(Box<MapPat>),
    MultiFold(Box<MultiFoldPat>),
    FlatMap(Box<FlatMapPat>),
    GroupByFold(Box<GroupByFoldPat>),
    Copy(Box<CopyPat>),
    Slice(Box<SlicePat>),
}

impl Expr {
    pub fn int(v: i64) -> Expr {
        Expr::Lit(Lit::Int(v))
    }

    pub fn float(v: f64) -> Expr {
        Expr::Lit(Lit::Float(v))
    }

    pub fn var(n: impl Into<Name>) -> Expr {
        Expr::Var(n.into())
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn read(array: Expr, index: Vec<Expr>) -> Expr {
        Expr::Read(Box::new(array), index)
    }

    pub fn let_in(name: impl Into<Name>, value: Expr, body: Expr) -> Expr {
        Expr::Let(name.into(), Box::new(value), Box::new(body))
    }

    pub fn is_pattern(&self) -> bool {
        matches!(self, Expr::Map(_) | Expr::MultiFold(_) | Expr::FlatMap(_) | Expr::GroupByFold(_))
    }

    /// Wrap `body` in the given let bindings, outermost first.
    pub fn with_lets(lets: Vec<(Name, Expr)>, body: Expr) -> Expr {
        lets.into_iter().rev().fold(body, |acc, (n, v)| Expr::let_in(n, v, acc))
    }

    /// Split a chain of `Let`s into its bindings and the final body.
    pub fn peel_lets(&self) -> (Vec<(&Name, &Expr)>, &Expr) {
        let mut lets = Vec::new();
        let mut cur = self;
        while let Expr::Let(n, v, b) = cur {
            lets.push((n, v.as_ref()));
            cur = b;
        }
        (lets, cur)
    }

    /// True when some domain extent is a tile-count (`cdiv`) expression.
    pub fn is_strided(&self) -> bool {
        let strided = |dims: &[Expr]| dims.iter().any(|d| matches!(d, Expr::Binary(BinOp::CeilDiv, _, _)));
        match self {
            Expr::Map(m) => strided(&m.dims),
            Expr::MultiFold(m) => strided(&m.dims),
            Expr::FlatMap(m) => strided(&m.dims),
            Expr::GroupByFold(g) => strided(&g.dims),
            _ => false,
        }
    }
}

impl MultiFoldPat {
    /// The fold special case: every iteration updates the whole accumulator.
    /// Scalar components qualify; array components need a zero location and
    /// a slice equal to the range.
    pub fn is_fold(&self) -> bool {
        self.updates.iter().zip(&self.ranges).all(|(u, range)| {
            if range.is_empty() {
                return u.loc.is_empty();
            }
            let zero_loc = u.loc.iter().all(|e| matches!(e, Expr::Lit(Lit::Int(0))));
            zero_loc && u.slice.as_ref() == Some(range)
        })
    }

    /// Single scalar accumulator.
    pub fn is_scalar_fold(&self) -> bool {
        self.ranges.len() == 1 && self.ranges[0].is_empty() && self.is_fold()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Static,
    Dynamic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Input {
    pub name: Name,
    pub elem: Type,
    pub shape: Vec<Expr>,
    pub class: SizeClass,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Binding {
    /// More than one name destructures a tuple result.
    pub names: Vec<Name>,
    pub value: Expr,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Program {
    pub inputs: Vec<Input>,
    /// Size symbols declared statically known in addition to those in the
    /// shapes of static inputs.
    pub static_sizes: Vec<Name>,
    pub bindings: Vec<Binding>,
    pub outputs: Vec<Name>,
}

impl Program {
    pub fn input(&self, name: &str) -> Option<&Input> {
        self.inputs.iter().find(|i| i.name == name)
    }

    pub fn binding_of(&self, name: &str) -> Option<(usize, &Binding)> {
        self.bindings.iter().enumerate().find(|(_, b)| b.names.iter().any(|n| n == name))
    }

    /// Size symbols referenced by input shapes, in declaration order.
    pub fn size_symbols(&self) -> Vec<Name> {
        let mut out: Vec<Name> = Vec::new();
        for inp in &self.inputs {
            for e in &inp.shape {
                for v in free_vars(e) {
                    if !out.contains(&v) {
                        out.push(v);
                    }
                }
            }
        }
        out
    }
}
