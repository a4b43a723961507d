//! Strip-mine a corpus program (or a `.ppl` file) and print the result.
//!
//! ```text
//! cargo run --example strip_mine -- gemm m=4 n=4 p=8
//! ```

use pplforge::syntax::{parse, print_program};
use pplforge::transform::{strip_mine, TileConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let what = args.next().unwrap_or_else(|| "kmeans".into());
    let src = match pplforge::corpus::source(&what) {
        Some(s) => s.to_string(),
        None => std::fs::read_to_string(&what).expect("readable program file"),
    };
    let p = parse(&src).expect("program parses");
    let mut cfg = TileConfig::default();
    let mut any = false;
    for a in args {
        let (d, b) = a.split_once('=').expect("tile given as dim=size");
        cfg = cfg.tile(d, b.parse().expect("integer tile size"));
        any = true;
    }
    if !any {
        for s in p.size_symbols() {
            cfg = cfg.tile(&s, 4);
        }
    }
    match strip_mine(&p, &cfg) {
        Ok(t) => print!("{}", print_program(&t)),
        Err(e) => eprintln!("error: {e}"),
    }
}
