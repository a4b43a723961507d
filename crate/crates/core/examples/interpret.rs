//! Evaluate a corpus program on seeded random inputs, with the identity and
//! disjoint-write checks on, and print its outputs and per-array reads.
//!
//! ```text
//! cargo run --example interpret -- gda m=8 d=3
//! ```

use std::collections::BTreeMap;

use rand::SeedableRng;

use pplforge::interp::{random_inputs, run, Options};

fn main() {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "tpchq6".into());
    let p = pplforge::corpus::program(&name).expect("known corpus program");
    let mut sizes: BTreeMap<String, u64> = p.size_symbols().into_iter().map(|s| (s, 6)).collect();
    for a in args {
        let (d, n) = a.split_once('=').expect("size given as dim=n");
        sizes.insert(d.to_string(), n.parse().expect("integer size"));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let inputs = random_inputs(&p, &sizes, &mut rng);
    let out = run(&p, &inputs, Options::instrumented()).unwrap_or_else(|e| panic!("{name}: {e}"));
    println!("sizes {sizes:?}");
    for (n, v) in &out.outputs {
        println!("{n} = {v}");
    }
    for (a, r) in &out.stats.reads {
        println!("reads {a}: {r}");
    }
}
