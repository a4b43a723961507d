use std::collections::BTreeMap;

use pplforge::hw::emit_plan;
use pplforge::ir::Program;
use pplforge::perf::{count_traffic, tiling_variants, MachineParams, TrafficReport};
use pplforge::transform::{tile_program, TileConfig};

fn corpus_cfg(name: &str) -> TileConfig {
    let c = TileConfig::default();
    match name {
        "outerprod" => c.tile("m", 4).tile("n", 4).size("m", 16).size("n", 16),
        "sumrows" => c.tile("m", 4).tile("n", 2).size("m", 8).size("n", 6),
        "gemm" => c.tile("m", 4).tile("n", 4).tile("p", 8).size("m", 8).size("n", 8).size("p", 16),
        "tpchq6" => c.tile("n", 16).size("n", 64),
        "gda" => c.tile("m", 16).tile("d", 2).size("m", 64).size("d", 4),
        "kmeans" => c.tile("n", 16).tile("k", 4).size("n", 64).size("k", 8).size("d", 4),
        _ => unreachable!(),
    }
}

fn report(p: &Program, cfg: &TileConfig) -> TrafficReport {
    let plan = emit_plan(p, cfg).unwrap();
    count_traffic(p, &plan, &cfg.sizes, &MachineParams::default()).unwrap()
}

/// Words each kmeans variant reads, from the closed forms.
fn kmeans_expected(n: u64, k: u64, d: u64, b0: u64) -> [(u64, u64, u64); 3] {
    [(n * d, n * k * d, 2), (n * d, n * k * d, 2), (n * d, (n / b0) * k * d, 2 * b0)]
}

#[test]
fn kmeans_variant_traffic() {
    for (n, k, d, b0, b1) in [(64, 8, 4, 16, 4), (32, 8, 2, 8, 2), (48, 6, 3, 12, 3)] {
        let cfg = TileConfig::default().tile("n", b0).tile("k", b1).size("n", n).size("k", k).size("d", d);
        let p = pplforge::corpus::program("kmeans").unwrap();
        let variants = tiling_variants(&p, &cfg).unwrap();
        for ((name, q), (points, centroids, min)) in variants.iter().zip(kmeans_expected(n, k, d, b0)) {
            let r = report(q, &cfg);
            assert_eq!(r.reads("points"), points, "{name} {n} {k} {d}");
            assert_eq!(r.reads("centroids"), centroids, "{name} {n} {k} {d}");
            let buf = if name == "interchanged" { "minDistWithIndexs" } else { "minDistWithIndex" };
            assert_eq!(r.per_array[buf].on_chip_words, min, "{name}");
        }
    }
}

#[test]
fn tiling_reduces_reads_where_there_is_reuse() {
    for name in pplforge::corpus::NAMES {
        let cfg = corpus_cfg(name);
        let p = pplforge::corpus::program(name).unwrap();
        let base = report(&p, &cfg).total_reads();
        let tiled = report(&tile_program(&p, &cfg).unwrap(), &cfg).total_reads();
        match name {
            "tpchq6" | "outerprod" => assert_eq!(tiled, base, "{name}"),
            _ => assert!(tiled < base, "{name}: {tiled} >= {base}"),
        }
    }
}

#[test]
fn metapipelining_reduces_cycles() {
    for name in pplforge::corpus::NAMES {
        let cfg = corpus_cfg(name);
        let q = tile_program(&pplforge::corpus::program(name).unwrap(), &cfg).unwrap();
        let r = report(&q, &cfg);
        assert!(r.cycles.metapipelined <= r.cycles.sequential, "{name}");
        let dominated = r.profiles.iter().all(|p| {
            let sum: f64 = p.stage_totals.iter().sum();
            p.stage_totals.iter().any(|&t| t >= 0.9 * sum)
        });
        if !dominated {
            assert!(r.cycles.metapipelined < r.cycles.sequential, "{name}: {:?}", r.cycles);
        }
    }
}

#[test]
fn replay_is_deterministic() {
    let cfg = corpus_cfg("kmeans");
    let q = tile_program(&pplforge::corpus::program("kmeans").unwrap(), &cfg).unwrap();
    assert_eq!(report(&q, &cfg), report(&q, &cfg));
}

#[test]
fn unbound_symbol_is_reported() {
    let cfg = corpus_cfg("gemm");
    let p = pplforge::corpus::program("gemm").unwrap();
    let plan = emit_plan(&p, &cfg).unwrap();
    let sizes: BTreeMap<String, u64> = [("m".to_string(), 4)].into_iter().collect();
    assert!(count_traffic(&p, &plan, &sizes, &MachineParams::default()).is_err());
}

#[test]
fn larger_point_tiles_never_increase_centroid_reads() {
    let p = pplforge::corpus::program("kmeans").unwrap();
    let mut last = u64::MAX;
    for b0 in [2, 4, 8, 16, 32] {
        let cfg = TileConfig::default().tile("n", b0).tile("k", 4).size("n", 32).size("k", 8).size("d", 2);
        let r = report(&tile_program(&p, &cfg).unwrap(), &cfg);
        assert_eq!(r.reads("centroids"), (32 / b0) * 8 * 2);
        assert!(r.reads("centroids") <= last);
        last = r.reads("centroids");
    }
}
