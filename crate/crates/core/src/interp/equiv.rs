use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{eval_expr, random_like, run, EvalError, Options, Value};
use crate::ir::{Combine, Name, Program};

/// Float comparisons use `|a - b| <= tol * max(1, |a|, |b|)`.
pub const DEFAULT_TOL: f64 = 1e-4;

pub fn values_close(a: &Value, b: &Value, tol: f64) -> bool {
    match (a, b) {
        (Value::Float(x), Value::Float(y)) => {
            if x.is_nan() || y.is_nan() {
                return x.is_nan() && y.is_nan();
            }
            if x.is_infinite() || y.is_infinite() {
                return x == y;
            }
            (x - y).abs() <= tol * 1f64.max(x.abs()).max(y.abs())
        }
        (Value::Tuple(xs), Value::Tuple(ys)) => {
            xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| values_close(x, y, tol))
        }
        (Value::Array(x), Value::Array(y)) => {
            x.shape == y.shape && x.data.iter().zip(&y.data).all(|(p, q)| values_close(p, q, tol))
        }
        // Groups compare as key maps; bucket order is not significant.
        (Value::Groups(x), Value::Groups(y)) => {
            x.len() == y.len()
                && x.iter().all(|(k, v)| y.iter().any(|(k2, v2)| values_close(k, k2, 0.0) && values_close(v, v2, tol)))
        }
        _ => a == b,
    }
}

/// Compare two output lists; `Err` describes the first difference.
pub fn equivalent_outputs(a: &[(Name, Value)], b: &[(Name, Value)], tol: f64) -> Result<(), String> {
    if a.len() != b.len() {
        return Err(format!("{} outputs vs {}", a.len(), b.len()));
    }
    for ((n, x), (_, y)) in a.iter().zip(b) {
        if !values_close(x, y, tol) {
            return Err(format!("output `{n}` differs: {x} vs {y}"));
        }
    }
    Ok(())
}

/// Run both programs on the same inputs and compare outputs. Two runs that
/// fail with the same kind of error also count as equivalent.
pub fn equivalent(a: &Program, b: &Program, inputs: &BTreeMap<Name, Value>, tol: f64) -> Result<(), String> {
    let ra = run(a, inputs, Options::default());
    let rb = run(b, inputs, Options::default());
    match (ra, rb) {
        (Ok(x), Ok(y)) => equivalent_outputs(&x.outputs, &y.outputs, tol),
        (Err(x), Err(y)) if std::mem::discriminant(&x) == std::mem::discriminant(&y) => Ok(()),
        (Err(x), Ok(_)) => Err(format!("original failed ({x}) but transformed succeeded")),
        (Ok(_), Err(y)) => Err(format!("transformed failed: {y}")),
        (Err(x), Err(y)) => Err(format!("different failures: {x} vs {y}")),
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("init is not an identity: {witness}")]
pub struct IdentityViolation {
    pub witness: String,
}

/// Check `c(z, s) = s = c(s, z)` on random samples shaped like `z`. The
/// combine body may only mention its two parameters.
pub fn check_identity(z: &Value, c: &Combine, samples: usize, seed: u64) -> Result<(), IdentityViolation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let apply = |a: &Value, b: &Value| -> Result<Value, EvalError> {
        eval_expr(&c.body, &[(c.lhs.clone(), a.clone()), (c.rhs.clone(), b.clone())])
    };
    for _ in 0..samples {
        let s = random_like(z, &mut rng);
        let (l, r) = match (apply(z, &s), apply(&s, z)) {
            (Ok(l), Ok(r)) => (l, r),
            (Err(e), _) | (_, Err(e)) => {
                return Err(IdentityViolation { witness: format!("combine failed on {s}: {e}") })
            }
        };
        if !values_close(&l, &s, DEFAULT_TOL) || !values_close(&r, &s, DEFAULT_TOL) {
            return Err(IdentityViolation { witness: format!("sample {s}: c(z, s) = {l}, c(s, z) = {r}") });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{BinOp, Expr};

    fn plus() -> Combine {
        Combine { lhs: "a".into(), rhs: "b".into(), body: Expr::bin(BinOp::Add, Expr::var("a"), Expr::var("b")) }
    }

    #[test]
    fn zero_is_identity_of_plus() {
        assert!(check_identity(&Value::Float(0.0), &plus(), 8, 1).is_ok());
        assert!(check_identity(&Value::Float(1.0), &plus(), 8, 1).is_err());
    }

    #[test]
    fn tolerance_is_relative_with_unit_floor() {
        assert!(values_close(&Value::Float(1000.0), &Value::Float(1000.05), 1e-4));
        assert!(!values_close(&Value::Float(1.0), &Value::Float(1.001), 1e-4));
        assert!(values_close(&Value::Float(0.0), &Value::Float(5e-5), 1e-4));
    }
}
