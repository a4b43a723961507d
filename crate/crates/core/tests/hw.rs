use pplforge::hw::{emit_plan, map_templates, war_replay, HwError, Placement, PlanNode, TemplateKind};
use pplforge::ir::Program;
use pplforge::syntax::parse;
use pplforge::transform::{tile_program, TileConfig};

fn kmeans_cfg() -> TileConfig {
    TileConfig::default().tile("n", 16).tile("k", 4).size("n", 64).size("k", 8).size("d", 4)
}

fn tiled(src: &str, cfg: &TileConfig) -> Program {
    tile_program(&parse(src).unwrap(), cfg).unwrap()
}

fn kinds(n: &PlanNode) -> Vec<TemplateKind> {
    n.walk().into_iter().map(|n| n.kind).collect()
}

#[test]
fn kmeans_has_three_stage_metapipeline() {
    let cfg = kmeans_cfg();
    let p = tiled(pplforge::corpus::source("kmeans").unwrap(), &cfg);
    let plan = emit_plan(&p, &cfg).unwrap();
    let mp = &plan.metapipelines[0];
    let labels: Vec<Vec<&str>> = mp.stages.iter().map(|s| s.iter().map(|i| i.label.as_str()).collect()).collect();
    assert_eq!(mp.stages.len(), 3, "{labels:?}");
    assert_eq!(labels[0], ["pointsTile"]);
    assert_eq!(labels[1], ["minDistWithIndexs"]);
    assert!(mp.stages[2].iter().filter(|i| i.update.is_some()).count() == 2);
    assert_eq!(mp.dedup, ["part1"]);
    assert!(!plan.memory.arrays.contains_key("part1"));
    assert_eq!(mp.double_buffers["minDistWithIndexs"], 1);
    assert_eq!(mp.double_buffers["pointsTile"], 2);
    assert_eq!(plan.memory.arrays["pointsTile"].template(), TemplateKind::DoubleBuffer);
    assert_eq!(plan.root.children[0].kind, TemplateKind::MetapipelineCtrl);
    assert!(war_replay(&plan, 10).is_empty());
}

#[test]
fn replay_detects_single_buffer_hazard() {
    let cfg = kmeans_cfg();
    let p = tiled(pplforge::corpus::source("kmeans").unwrap(), &cfg);
    let mut plan = emit_plan(&p, &cfg).unwrap();
    plan.memory.arrays.get_mut("minDistWithIndexs").unwrap().hops = 0;
    let hazards = war_replay(&plan, 4);
    assert!(hazards.iter().any(|h| h.buffer == "minDistWithIndexs"), "{hazards:?}");
    let mut plan = emit_plan(&p, &cfg).unwrap();
    plan.memory.arrays.get_mut("pointsTile").unwrap().hops = 1;
    assert!(war_replay(&plan, 4).iter().any(|h| h.buffer == "pointsTile"));
}

#[test]
fn tiled_map_is_load_compute_pipeline() {
    let cfg = TileConfig::default().tile("d", 4).size("d", 16);
    let p = tiled("input x : Float[d] dynamic\ny = map(d){ i => 2.0 * x(i) }\noutput y\n", &cfg);
    let plan = emit_plan(&p, &cfg).unwrap();
    assert_eq!(plan.metapipelines.len(), 1);
    let ks = kinds(&plan.root);
    assert!(ks.contains(&TemplateKind::MetapipelineCtrl));
    assert!(ks.contains(&TemplateKind::TileMemoryCtrl));
    assert!(ks.contains(&TemplateKind::Vector));
    assert!(plan.dram_writes.contains("y"));
}

#[test]
fn leaf_templates() {
    let cases = [
        ("input x : Float[d] dynamic\ny = map(d){ i => 2.0 * x(i) }\noutput y\n", TemplateKind::Vector),
        ("input x : Float[d] dynamic\ns = fold(d)(0.0){ i => acc => acc + x(i) }{ (a, b) => a + b }\noutput s\n", TemplateKind::ReductionTree),
        ("input x : Float[d] dynamic\ny = flatMap(d){ i => if (x(i) > 0.0) [x(i)] else [] }\noutput y\n", TemplateKind::ParallelFifo),
        ("input x : Float[d] dynamic\nh = groupByFold(d)(0){ i => (int(x(i) / 10.0), 1) }{ (a, b) => a + b }\noutput h\n", TemplateKind::Cam),
    ];
    for (src, want) in cases {
        let p = parse(src).unwrap();
        let ts = map_templates(&p).unwrap();
        assert_eq!(ts[0].kind, want, "{src}");
        let plan = emit_plan(&p, &TileConfig::default()).unwrap();
        assert!(kinds(&plan.root).contains(&want));
    }
}

#[test]
fn indirect_read_is_cached() {
    let src = "input x : Float[n] dynamic\ninput perm : Int[n] dynamic\ny = map(n){ i => x(perm(i)) }\noutput y\n";
    let cfg = TileConfig { cache_words: 512, ..TileConfig::default() };
    let plan = emit_plan(&parse(src).unwrap(), &cfg).unwrap();
    assert_eq!(plan.memory.arrays["x"].placement, Placement::OffChipWithCache { cache_words: 512 });
    assert_eq!(plan.memory.arrays["x"].template(), TemplateKind::Cache);
    assert_eq!(plan.memory.arrays["perm"].placement, Placement::OffChip);
}

#[test]
fn static_input_is_loaded_first() {
    let src =
        "static k\ninput c : Float[k] static\ninput x : Float[n] dynamic\ny = map(n){ i => x(i) * c(0) }\noutput y\n";
    let cfg = TileConfig::default().size("k", 8);
    let plan = emit_plan(&parse(src).unwrap(), &cfg).unwrap();
    let first = &plan.root.children[0];
    assert_eq!(first.kind, TemplateKind::TileMemoryCtrl);
    assert_eq!(first.label, "load c");
    assert_eq!(plan.memory.arrays["c"].placement, Placement::OnChipBuffer { words: 8 });
}

#[test]
fn capacity_is_enforced() {
    let cfg = kmeans_cfg();
    let p = tiled(pplforge::corpus::source("kmeans").unwrap(), &cfg);
    let need = emit_plan(&p, &cfg).unwrap().memory.on_chip_words();
    match emit_plan(&p, &cfg.clone().capacity(need - 1)) {
        Err(HwError::CapacityExceeded { words, capacity, .. }) => {
            assert_eq!(words, need);
            assert_eq!(capacity, need - 1);
        }
        other => panic!("{other:?}"),
    }
    assert!(emit_plan(&p, &cfg.capacity(need)).is_ok());
}
