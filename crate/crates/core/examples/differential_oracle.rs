//! Differential testing of the tiling pipeline: generate random programs,
//! run every pass in turn and compare each result with the original in
//! the interpreter.
//!
//! ```text
//! cargo run --release --example differential_oracle -- 500 42
//! ```

use std::collections::BTreeMap;

use rand::SeedableRng;

use pplforge::gen::{differential, generate_any};
use pplforge::ir::alpha_equal;
use pplforge::syntax::print_program;
use pplforge::transform::{run_pass, DEFAULT_PASSES};

fn main() {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map_or(200, |s| s.parse().expect("count"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut changed: BTreeMap<&str, usize> = BTreeMap::new();
    let mut failures = 0;
    for n in 0..count {
        let g = generate_any(&mut rng);
        let mut cur = g.program.clone();
        for pass in DEFAULT_PASSES {
            let next = run_pass(&cur, pass, &g.config).expect("pass runs");
            let same = next.bindings.len() == cur.bindings.len()
                && next.bindings.iter().zip(&cur.bindings).all(|(a, b)| alpha_equal(&a.value, &b.value));
            if !same {
                *changed.entry(pass).or_default() += 1;
            }
            if let Err(e) = differential(&g.program, &next, &g.config.sizes, 3, &mut rng) {
                failures += 1;
                println!("#{n} {:?} after {pass}: {e}\n{}\n{}", g.family, g.source, print_program(&next));
                break;
            }
            cur = next;
        }
    }
    println!("{count} programs, {failures} failures");
    for (pass, k) in changed {
        println!("  {pass:<12} changed {k} programs");
    }
}
