//! Compare fused, strip-mined and interchanged k-means with and without
//! metapipelining, then sweep the balanced-pipeline model.

use pplforge::hw::emit_plan;
use pplforge::perf::{compare_variants, pipeline_cycles, tiling_variants, MachineParams, StageProfile};
use pplforge::transform::TileConfig;

fn main() {
    let cfg = TileConfig::default().tile("n", 16).tile("k", 4).size("n", 64).size("k", 8).size("d", 4);
    let p = pplforge::corpus::program("kmeans").unwrap();
    let variants = tiling_variants(&p, &cfg).unwrap();
    let plans: Vec<_> = variants.iter().map(|(_, q)| emit_plan(q, &cfg).unwrap()).collect();
    let mut rows = Vec::new();
    for ((name, q), plan) in variants.iter().zip(&plans) {
        rows.push((name.to_string(), q, plan, false));
        rows.push((format!("{name}+mp"), q, plan, true));
    }
    let rows: Vec<_> = rows.iter().map(|(n, q, pl, mp)| (n.as_str(), *q, *pl, *mp)).collect();
    let cmp = compare_variants(&rows, &cfg.sizes, &MachineParams::default()).unwrap();
    println!("{:<18} {:>8} {:>8} {:>10} {:>8}", "variant", "reads", "writes", "cycles", "speedup");
    for r in &cmp.rows {
        println!("{:<18} {:>8} {:>8} {:>10.0} {:>8.2}", r.name, r.reads, r.writes, r.cycles, r.speedup);
    }

    println!("\nbalanced stages, 100 cycles each");
    for s in 2..=4 {
        for t in [10, 100, 1000] {
            let prof = StageProfile {
                label: "sweep".into(),
                tiles: t,
                executions: 1,
                stage_totals: vec![100.0 * t as f64; s],
            };
            let (seq, pipe) = pipeline_cycles(&prof, 0);
            println!("S={s} T={t:<5} speedup {:.3}", seq / pipe);
        }
    }
}
