//! Parse a corpus program (or a file given on the command line), validate
//! it and print it back.

use pplforge::corpus;
use pplforge::ir::{deps, validate};
use pplforge::syntax::{parse, print_program};

fn main() {
    let arg = std::env::args().nth(1).unwrap_or_else(|| "kmeans".into());
    let src = match corpus::source(&arg) {
        Some(s) => s.to_string(),
        None => std::fs::read_to_string(&arg).expect("read source file"),
    };
    let program = match parse(&src) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{arg}: {e}");
            std::process::exit(2);
        }
    };
    let diags = validate(&program);
    for d in &diags {
        println!("{d}");
    }
    println!("{}", print_program(&program));
    let g = deps(&program);
    for (p, c) in &g.edges {
        println!("// {} -> {}", g.nodes[*p].join(","), g.nodes[*c].join(","));
    }
}
