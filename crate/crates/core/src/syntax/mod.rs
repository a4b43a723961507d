//! Concrete syntax: lexer, parser and pretty-printer.
//!
//! ```text
//! input x : Float[m, n] dynamic
//! static n
//! y = multiFold(m, n)(m)(zeros(m)){ (i, j) =>
//!   (i, acc => acc + x(i, j))
//! }{ (a, b) => map(m){ k => a(k) + b(k) } }
//! output y
//! ```

mod lexer;
mod parser;
mod printer;

pub use parser::{parse, parse_expr};
pub use printer::{print_expr, print_program};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("empty program")]
    EmptyProgram,
}
