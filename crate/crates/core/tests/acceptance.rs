//! Acceptance suite: one PASS/FAIL line per criterion. Runs as part of
//! `cargo test`, or alone with `cargo test --test acceptance`.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::SeedableRng;

use pplforge::gen::generate_any;
use pplforge::hw::{emit_plan, war_replay, HwError};
use pplforge::interp::{random_inputs, run, EvalError, Options};
use pplforge::ir::{alpha_equal, Program};
use pplforge::perf::{count_traffic, pipeline_cycles, tiling_variants, MachineParams, StageProfile};
use pplforge::syntax::{parse, print_program};
use pplforge::transform::{tile_program, TileConfig};

mod common;

use common::rules::{case, check, RULES};

const PROGRAMS_PER_RULE: usize = 200;
const TRIALS_PER_PROGRAM: usize = 2;
const SOUNDNESS_BUDGET: Duration = Duration::from_secs(60);
const PIPELINE_RATIO_TOL: f64 = 0.05;
const DOMINANT_STAGE_SHARE: f64 = 0.9;
const TOTALITY_PROGRAMS: usize = 1000;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

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

fn corpus(name: &str) -> Program {
    pplforge::corpus::program(name).unwrap()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn soundness() -> Outcome {
    let start = Instant::now();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut fired = Vec::new();
    for rule in &RULES {
        let mut n = 0;
        for i in 0..PROGRAMS_PER_RULE {
            let c = case(rule, &mut rng);
            n += usize::from(c.fired());
            check(&c, TRIALS_PER_PROGRAM, &mut rng).map_err(|e| format!("{} case {i}: {e}", rule.name))?;
        }
        fired.push(format!("{} {n}", rule.name));
    }
    let t = start.elapsed();
    ensure(t < SOUNDNESS_BUDGET, || format!("took {t:?}, budget {SOUNDNESS_BUDGET:?}"))?;
    Ok(format!(
        "{} rules x {PROGRAMS_PER_RULE} programs equivalent in {:.1}s; rewrites applied: {}",
        RULES.len(),
        t.as_secs_f64(),
        fired.join(", ")
    ))
}

fn goldens() -> Outcome {
    let cases = common::cases();
    for (name, got, want) in &cases {
        if let Some(msg) = common::golden_mismatch(got, want) {
            return Err(format!("{name}: {msg}"));
        }
    }
    Ok(format!("{} forms alpha-equal", cases.len()))
}

fn kmeans_traffic() -> Outcome {
    let (n, k, d, b0, b1) = (64u64, 8u64, 4u64, 16u64, 4u64);
    let cfg = TileConfig::default().tile("n", b0).tile("k", b1).size("n", n).size("k", k).size("d", d);
    let want = [
        ("fused", n * d, n * k * d, "minDistWithIndex", 2),
        ("strip-mined", n * d, n * k * d, "minDistWithIndex", 2),
        ("interchanged", n * d, (n / b0) * k * d, "minDistWithIndexs", 2 * b0),
    ];
    let mut seen = Vec::new();
    for ((name, q), (wname, points, centroids, buf, words)) in
        tiling_variants(&corpus("kmeans"), &cfg).unwrap().iter().zip(want)
    {
        assert_eq!(name, wname);
        let plan = emit_plan(q, &cfg).map_err(|e| e.to_string())?;
        let r = count_traffic(q, &plan, &cfg.sizes, &MachineParams::default()).map_err(|e| e.to_string())?;
        let got = (r.reads("points"), r.reads("centroids"), r.per_array.get(buf).map_or(0, |a| a.on_chip_words));
        ensure(got == (points, centroids, words), || {
            format!("{name}: got {got:?}, want {:?}", (points, centroids, words))
        })?;
        seen.push(format!("{name} {}/{}/{}", got.0, got.1, got.2));
    }
    Ok(format!("points/centroids/minDistWithIndex: {}", seen.join(", ")))
}

fn pipeline_model() -> Outcome {
    let mut worst: f64 = 0.0;
    for s in 2..=4usize {
        for t in [10u64, 100, 1000] {
            let l = 100.0;
            let p =
                StageProfile { label: "balanced".into(), tiles: t, executions: 1, stage_totals: vec![l * t as f64; s] };
            let (seq, pipe) = pipeline_cycles(&p, 0);
            let want = (s as f64 * t as f64) / (t as f64 + s as f64 - 1.0);
            let err = ((seq / pipe) - want).abs() / want;
            worst = worst.max(err);
            ensure(err <= PIPELINE_RATIO_TOL, || format!("S={s} T={t}: ratio {} vs {want}", seq / pipe))?;
        }
    }
    Ok(format!("9 (S, T) pairs, worst relative error {worst:.2e} (tolerance {PIPELINE_RATIO_TOL})"))
}

fn directions() -> Outcome {
    let mp = MachineParams::default();
    let mut notes = Vec::new();
    for name in pplforge::corpus::NAMES {
        let cfg = corpus_cfg(name);
        let p = corpus(name);
        let q = tile_program(&p, &cfg).map_err(|e| e.to_string())?;
        let report = |x: &Program| {
            let plan = emit_plan(x, &cfg).map_err(|e| e.to_string())?;
            count_traffic(x, &plan, &cfg.sizes, &mp).map_err(|e| e.to_string())
        };
        let (base, tiled) = (report(&p)?, report(&q)?);
        let (rb, rt) = (base.total_reads(), tiled.total_reads());
        match name {
            "tpchq6" | "outerprod" => ensure(rt == rb, || format!("{name}: reads {rb} -> {rt}, expected no change"))?,
            _ => ensure(rt < rb, || format!("{name}: reads {rb} -> {rt}, expected a reduction"))?,
        }
        let dominated = tiled.profiles.iter().all(|pr| {
            let sum: f64 = pr.stage_totals.iter().sum();
            pr.stage_totals.iter().any(|&t| t >= DOMINANT_STAGE_SHARE * sum)
        });
        let c = tiled.cycles;
        if dominated {
            ensure(c.metapipelined <= c.sequential, || format!("{name}: pipelining slowed {c:?}"))?;
            notes.push(format!(
                "{name} reads {rb}->{rt}, one stage dominates, cycles {}->{}",
                c.sequential, c.metapipelined
            ));
        } else {
            ensure(c.metapipelined < c.sequential, || format!("{name}: cycles {c:?}"))?;
            notes.push(format!("{name} reads {rb}->{rt}, cycles {}->{}", c.sequential, c.metapipelined));
        }
    }
    Ok(notes.join("; "))
}

fn invariants() -> Outcome {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
    let opts = Options { check_identity: true, check_disjoint: true, count_reads: false, seed: 1 };
    let mut plans = Vec::new();
    for name in pplforge::corpus::NAMES {
        let cfg = corpus_cfg(name);
        let p = corpus(name);
        let q = tile_program(&p, &cfg).map_err(|e| e.to_string())?;
        let sizes: BTreeMap<String, u64> = p
            .size_symbols()
            .into_iter()
            .chain(p.static_sizes.iter().cloned())
            .map(|s| (s.clone(), cfg.sizes.get(&s).copied().unwrap_or(6)))
            .collect();
        let inputs = random_inputs(&p, &sizes, &mut rng);
        run(&p, &inputs, opts).map_err(|e| format!("{name}: {e}"))?;
        run(&q, &inputs, opts).map_err(|e| format!("{name} tiled: {e}"))?;
        let plan = emit_plan(&q, &cfg).map_err(|e| format!("{name}: {e}"))?;
        ensure(plan.memory.on_chip_words() <= plan.memory.capacity, || format!("{name}: over capacity"))?;
        let hazards = war_replay(&plan, 16);
        ensure(hazards.is_empty(), || format!("{name}: {hazards:?}"))?;
        plans.push((name, q, cfg, plan));
    }

    let bad_init =
        parse("input x : Float[n] dynamic\ns = fold(n)(1.0){ i => acc => acc + x(i) }{ (a, b) => a + b }\noutput s\n")
            .unwrap();
    let ins = random_inputs(&bad_init, &[("n".to_string(), 4)].into_iter().collect(), &mut rng);
    ensure(matches!(run(&bad_init, &ins, opts), Err(EvalError::NonIdentityInit { .. })), || {
        "non-identity init accepted".into()
    })?;
    let clash = parse(
        "input x : Float[n] dynamic\ns = multiFold(n)(2)(zeros(2)){ i => (0, acc => acc + x(i)) }(_)\noutput s\n",
    )
    .unwrap();
    let ins = random_inputs(&clash, &[("n".to_string(), 3)].into_iter().collect(), &mut rng);
    ensure(matches!(run(&clash, &ins, opts), Err(EvalError::DisjointWrite { .. })), || {
        "overlapping writes accepted".into()
    })?;
    let (_, _, _, kplan) = plans.iter().find(|p| p.0 == "kmeans").unwrap();
    let mut single = kplan.clone();
    for e in single.memory.arrays.values_mut() {
        e.hops = 0;
    }
    ensure(!war_replay(&single, 4).is_empty(), || "single buffering not flagged".into())?;
    let (_, kq, kcfg, _) = plans.iter().find(|p| p.0 == "kmeans").unwrap();
    let need = kplan.memory.on_chip_words();
    ensure(matches!(emit_plan(kq, &kcfg.clone().capacity(need - 1)), Err(HwError::CapacityExceeded { .. })), || {
        "capacity not enforced".into()
    })?;

    let mut unmappable = 0;
    let mut other = 0;
    for _ in 0..TOTALITY_PROGRAMS {
        let g = generate_any(&mut rng);
        let q = tile_program(&g.program, &g.config).map_err(|e| e.to_string())?;
        match emit_plan(&q, &g.config) {
            Err(HwError::UnmappableNode(_)) => unmappable += 1,
            Err(_) => other += 1,
            Ok(_) => {}
        }
    }
    ensure(unmappable == 0, || format!("{unmappable} of {TOTALITY_PROGRAMS} generated programs unmappable"))?;
    Ok(format!(
        "identity inits, disjoint writes, WAR replay and capacity hold on {} tiled corpus plans; negatives caught; {TOTALITY_PROGRAMS} generated programs mapped ({other} other plan errors)",
        plans.len()
    ))
}

fn cli_contract() -> Outcome {
    for name in pplforge::corpus::NAMES {
        let p = corpus(name);
        let q = parse(&print_program(&p)).map_err(|e| format!("{name}: {e}"))?;
        let same = p.bindings.iter().zip(&q.bindings).all(|(a, b)| alpha_equal(&a.value, &b.value));
        ensure(same && p.bindings.len() == q.bindings.len(), || format!("{name}: round trip differs"))?;
    }
    let dir = std::env::temp_dir().join(format!("pplforge-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let file = |n: &str, text: &str| {
        let p = dir.join(n);
        std::fs::write(&p, text).unwrap();
        p.to_str().unwrap().to_string()
    };
    let sum = file(
        "sum.ppl",
        "input x : Float[n] dynamic\ns = fold(n)(0.0){ i => acc => acc + x(i) }{ (a, b) => a + b }\noutput s\n",
    );
    let cancel = file("in.json", r#"{ "x": [1e20, 1.0, -1e20, 1.0] }"#);
    let cases: Vec<(i32, Vec<String>)> = vec![
        (0, vec!["check".into(), "kmeans".into()]),
        (0, vec!["diff".into(), "sumrows".into(), "--tile".into(), "m=4,n=2".into(), "--seed".into(), "7".into()]),
        (2, vec!["check".into(), file("bad.ppl", "input x : Float[n] dynamic\ny = map(n){ i => }\n")]),
        (
            3,
            vec![
                "check".into(),
                file("unbound.ppl", "input x : Float[n] dynamic\ny = map(n){ i => w(i) }\noutput y\n"),
            ],
        ),
        (4, vec!["transform".into(), "gemm".into(), "--passes".into(), "unroll".into()]),
        (
            5,
            vec![
                "plan".into(),
                "kmeans".into(),
                "--tile".into(),
                "n=16,k=4".into(),
                "--size".into(),
                "n=64,k=8,d=4".into(),
                "--capacity".into(),
                "8".into(),
            ],
        ),
        (
            6,
            vec![
                "diff".into(),
                sum.clone(),
                "--tile".into(),
                "n=2".into(),
                "--size".into(),
                "n=4".into(),
                "--inputs".into(),
                cancel,
            ],
        ),
    ];
    let mut codes = Vec::new();
    for (want, args) in cases {
        let out = Command::new(env!("CARGO_BIN_EXE_pplforge")).args(&args).output().map_err(|e| e.to_string())?;
        let got = out.status.code().unwrap_or(-1);
        ensure(got == want, || format!("`pplforge {}` exited {got}, want {want}", args.join(" ")))?;
        codes.push(got.to_string());
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(format!("6 corpus files round-trip; exit codes {} verified", codes.join(",")))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("transformation soundness", soundness),
        ("golden structural forms", goldens),
        ("k-means traffic", kmeans_traffic),
        ("metapipeline cycle ratio", pipeline_model),
        ("direction checks", directions),
        ("invariant suites", invariants),
        ("CLI contract", cli_contract),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(e) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {e}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
