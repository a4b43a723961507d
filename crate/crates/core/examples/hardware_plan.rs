//! Tile a corpus program and lower it to a hardware plan, printing the
//! controller tree, memory placement and metapipeline stages.
//!
//! ```text
//! cargo run --example hardware_plan -- kmeans n=64 k=8 d=4 tile:n=16 tile:k=4
//! ```

use pplforge::hw::{emit_plan, war_replay, PlanNode};
use pplforge::transform::{tile_program, TileConfig};

fn show(n: &PlanNode, depth: usize) {
    let lanes = n.lanes.map(|l| format!(" x{l}")).unwrap_or_default();
    println!("{}{:?} {}{lanes}", "  ".repeat(depth), n.kind, n.label);
    for c in &n.children {
        show(c, depth + 1);
    }
}

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
            None if k == "capacity" => cfg.capacity(v),
            None => cfg.size(k, v),
        };
    }
    let tiled = tile_program(&p, &cfg).expect("tiling");
    let plan = emit_plan(&tiled, &cfg).expect("plan");
    show(&plan.root, 0);
    println!("\nmemory ({} of {} words on chip)", plan.memory.on_chip_words(), plan.memory.capacity);
    for (n, e) in &plan.memory.arrays {
        println!("  {n}: {:?} {:?} hops={}", e.template(), e.placement, e.hops);
    }
    for mp in &plan.metapipelines {
        println!("\nmetapipeline {}", mp.label);
        for (k, s) in mp.stages.iter().enumerate() {
            let items: Vec<&str> = s.iter().map(|i| i.label.as_str()).collect();
            println!("  stage {k}: {}", items.join(", "));
        }
        if !mp.double_buffers.is_empty() {
            println!("  double buffers: {:?}", mp.double_buffers);
        }
        if !mp.dedup.is_empty() {
            println!("  deduplicated: {:?}", mp.dedup);
        }
    }
    println!("\nwrites back: {:?}", plan.dram_writes);
    let hazards = war_replay(&plan, 8);
    println!("replay: {} hazards", hazards.len());
}
