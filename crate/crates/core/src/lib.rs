pub mod cli;
pub mod corpus;
pub mod gen;
pub mod hw;
pub mod interp;
pub mod ir;
pub mod perf;
pub mod syntax;
pub mod transform;
