//! Main-memory reads and on-chip words of a corpus program before tiling,
//! after strip mining and after interchange.
//!
//! ```text
//! cargo run --example traffic_report -- kmeans n=64 k=8 d=4 tile:n=16 tile:k=4
//! ```

use pplforge::hw::emit_plan;
use pplforge::perf::{count_traffic, tiling_variants, MachineParams};
use pplforge::transform::TileConfig;

fn main() {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "kmeans".into());
    let p = pplforge::corpus::program(&name).expect("corpus program");
    let mut cfg = TileConfig::default();
    for a in args {
        let (k, v) = a.split_once('=').expect("key=value");
        let v: u64 = v.parse().expect("integer");
        cfg = match k.strip_prefix("tile:") {
            Some(d) => cfg.tile(d, v),
            None => cfg.size(k, v),
        };
    }
    let mp = MachineParams::default();
    for (variant, q) in tiling_variants(&p, &cfg).expect("tiling") {
        let plan = emit_plan(&q, &cfg).expect("plan");
        let r = count_traffic(&q, &plan, &cfg.sizes, &mp).expect("replay");
        println!("== {variant}: {} cycles sequential, {} metapipelined", r.cycles.sequential, r.cycles.metapipelined);
        println!("  {:<20} {:>8} {:>8} {:>8} {:>7}", "array", "reads", "writes", "on-chip", "bursts");
        for (a, t) in &r.per_array {
            println!(
                "  {:<20} {:>8} {:>8} {:>8} {:>7}",
                a, t.main_memory_reads, t.main_memory_writes, t.on_chip_words, t.bursts
            );
        }
    }
}
