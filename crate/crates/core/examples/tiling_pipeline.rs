//! Run the default tiling pipeline on a corpus program, printing the
//! program after each pass and checking it against the interpreter.
//!
//! ```text
//! cargo run --example tiling_pipeline -- kmeans n=16 k=8 d=4 tile:n=4 tile:k=2
//! ```

use rand::SeedableRng;

use pplforge::interp::{equivalent, random_inputs, DEFAULT_TOL};
use pplforge::syntax::print_program;
use pplforge::transform::{run_pass, TileConfig, DEFAULT_PASSES};

fn main() {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "gemm".into());
    let p = pplforge::corpus::program(&name).expect("corpus program");
    let mut cfg = TileConfig::default();
    for a in args {
        let (k, v) = a.split_once('=').expect("key=value");
        let v: u64 = v.parse().expect("integer");
        cfg = match k.strip_prefix("tile:") {
            Some(d) => cfg.tile(d, v),
            None if k == "capacity" => cfg.capacity(v),
            None => cfg.size(k, v),
        };
    }
    if cfg.tiles.is_empty() {
        for s in p.size_symbols() {
            cfg = cfg.tile(&s, 4);
        }
    }
    let mut cur = p.clone();
    for pass in DEFAULT_PASSES {
        cur = run_pass(&cur, pass, &cfg).expect("pass runs");
        println!("== {pass}\n{}", print_program(&cur));
    }
    let mut sizes = cfg.sizes.clone();
    for s in p.size_symbols() {
        sizes.entry(s).or_insert(13);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let inputs = random_inputs(&p, &sizes, &mut rng);
    match equivalent(&p, &cur, &inputs, DEFAULT_TOL) {
        Ok(()) => println!("equivalent on sizes {sizes:?}"),
        Err(e) => println!("MISMATCH: {e}"),
    }
}
