use std::fmt;
use std::sync::Arc;

/// Dense row-major tensor of scalar (or tuple-of-scalar) values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<Value>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<Value>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn filled(shape: Vec<usize>, v: Value) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape, data: vec![v; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat offset of an index, or `None` when out of bounds.
    pub fn offset(&self, idx: &[i64]) -> Option<usize> {
        if idx.len() != self.shape.len() {
            return None;
        }
        let mut off = 0usize;
        for (&i, &d) in idx.iter().zip(&self.shape) {
            if i < 0 || i as usize >= d {
                return None;
            }
            off = off * d + i as usize;
        }
        Some(off)
    }
}

#[derive(Clone, Debug)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Tuple(Vec<Value>),
    Array(Arc<Tensor>),
    /// Key/value buckets in first-occurrence order.
    Groups(Arc<Vec<(Value, Value)>>),
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Float(a), Value::Float(b)) => a == b || (a.is_nan() && b.is_nan()),
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Tuple(a), Value::Tuple(b)) => a == b,
            (Value::Array(a), Value::Array(b)) => a == b,
            (Value::Groups(a), Value::Groups(b)) => a == b,
            _ => false,
        }
    }
}

impl Value {
    pub fn array(shape: Vec<usize>, data: Vec<Value>) -> Value {
        Value::Array(Arc::new(Tensor::new(shape, data)))
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_tensor(&self) -> Option<&Tensor> {
        match self {
            Value::Array(t) => Some(t),
            _ => None,
        }
    }

    /// A zero of the same scalar shape.
    pub fn zero_like(&self) -> Value {
        match self {
            Value::Int(_) => Value::Int(0),
            Value::Float(_) => Value::Float(0.0),
            Value::Bool(_) => Value::Bool(false),
            Value::Tuple(vs) => Value::Tuple(vs.iter().map(Value::zero_like).collect()),
            other => other.clone(),
        }
    }

    /// Words occupied by a scalar element.
    pub fn words(&self) -> u64 {
        match self {
            Value::Tuple(vs) => vs.iter().map(Value::words).sum(),
            Value::Array(t) => t.data.iter().map(Value::words).sum(),
            _ => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::json;
        match self {
            Value::Int(v) => json!(v),
            Value::Float(v) if v.is_finite() => json!(v),
            Value::Float(v) => json!(v.to_string()),
            Value::Bool(b) => json!(b),
            Value::Tuple(vs) => json!(vs.iter().map(Value::to_json).collect::<Vec<_>>()),
            Value::Array(t) => json!({
                "shape": t.shape,
                "data": t.data.iter().map(Value::to_json).collect::<Vec<_>>(),
            }),
            Value::Groups(g) => json!(g.iter().map(|(k, v)| json!([k.to_json(), v.to_json()])).collect::<Vec<_>>()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Tuple(vs) => {
                write!(f, "(")?;
                for (i, v) in vs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, ")")
            }
            Value::Array(t) => {
                write!(f, "{:?}[", t.shape)?;
                for (i, v) in t.data.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    if i == 16 {
                        write!(f, "...")?;
                        break;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "]")
            }
            Value::Groups(g) => {
                write!(f, "{{")?;
                for (i, (k, v)) in g.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{k} -> {v}")?;
                }
                write!(f, "}}")
            }
        }
    }
}
