use std::path::Path;
use std::process::{Command, Output};

use pplforge::ir::alpha_equal;
use pplforge::syntax::{parse, print_program};

const SUM: &str =
    "input x : Float[n] dynamic\ns = fold(n)(0.0){ i => acc => acc + x(i) }{ (a, b) => a + b }\noutput s\n";

fn pplforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pplforge")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn corpus_round_trips_and_checks() {
    let dir = tempfile::tempdir().unwrap();
    for name in pplforge::corpus::NAMES {
        let p = pplforge::corpus::program(name).unwrap();
        let printed = print_program(&p);
        let q = parse(&printed).unwrap();
        for (a, b) in p.bindings.iter().zip(&q.bindings) {
            assert!(alpha_equal(&a.value, &b.value), "{name}");
        }
        assert_eq!(print_program(&q), printed, "{name}");
        let file = write(dir.path(), &format!("{name}.ppl"), &printed);
        let o = pplforge(&["check", &file]);
        assert_eq!(code(&o), 0, "{name}: {}", String::from_utf8_lossy(&o.stderr));
        let o = pplforge(&["check", name]);
        assert_eq!(code(&o), 0);
    }
}

#[test]
fn corpus_passes_diff_under_default_pipeline() {
    let tiles = [
        ("outerprod", "m=4,n=4"),
        ("sumrows", "m=4,n=2"),
        ("gemm", "m=4,n=4,p=4"),
        ("tpchq6", "n=8"),
        ("gda", "m=4,d=2"),
        ("kmeans", "n=4,k=2"),
    ];
    for (name, tile) in tiles {
        let o = pplforge(&["diff", name, "--tile", tile, "--seed", "7", "--trials", "4"]);
        assert_eq!(code(&o), 0, "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).starts_with("equivalent"));
    }
}

#[test]
fn parse_error_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "bad.ppl", "input x : Float[n] dynamic\ny = map(n){ i => x(i) +  }\n");
    let o = pplforge(&["check", &f]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("2:"), "location is reported");
    let empty = write(dir.path(), "empty.ppl", "");
    assert_eq!(code(&pplforge(&["check", &empty])), 2);
}

#[test]
fn validation_error_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "unbound.ppl", "input x : Float[n] dynamic\ny = map(n){ i => z(i) }\noutput y\n");
    assert_eq!(code(&pplforge(&["check", &f])), 3);
}

#[test]
fn transform_error_exits_4() {
    assert_eq!(code(&pplforge(&["transform", "gemm", "--passes", "strip-mine,unroll", "--tile", "m=4"])), 4);
    assert_eq!(code(&pplforge(&["transform", "gemm", "--tile", "q=4"])), 4);
}

#[test]
fn plan_error_exits_5() {
    let o = pplforge(&["plan", "kmeans", "--tile", "n=16,k=4", "--size", "n=64,k=8,d=4", "--capacity", "10"]);
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn reassociated_sum_mismatch_exits_6() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "sum.ppl", SUM);
    let ins = write(dir.path(), "in.json", r#"{ "x": [1e20, 1.0, -1e20, 1.0] }"#);
    let o = pplforge(&["diff", &f, "--tile", "n=2", "--size", "n=4", "--inputs", &ins]);
    assert_eq!(code(&o), 6, "{}", stdout(&o));
    let ins = write(dir.path(), "ok.json", r#"{ "x": [1.0, 2.0, 3.0, 4.0] }"#);
    assert_eq!(code(&pplforge(&["diff", &f, "--tile", "n=2", "--size", "n=4", "--inputs", &ins])), 0);
}

#[test]
fn usage_error_exits_1() {
    assert_eq!(code(&pplforge(&["frobnicate"])), 1);
    assert_eq!(code(&pplforge(&["check", "/no/such/file.ppl"])), 1);
    assert_eq!(code(&pplforge(&["--help"])), 0);
}

#[test]
fn eval_prints_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "sum.ppl", SUM);
    let ins = write(dir.path(), "in.json", r#"{ "x": [1.0, 2.0, 3.5] }"#);
    let json = dir.path().join("out.json");
    let o = pplforge(&["eval", &f, "--inputs", &ins, "--json", json.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).trim(), "s = 6.5");
    let j: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(j["s"], 6.5);
}

#[test]
fn report_has_fixed_schema() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("r.json");
    let o = pplforge(&[
        "report",
        "kmeans",
        "--tile",
        "n=16,k=4",
        "--size",
        "n=64,k=8,d=4",
        "--json",
        json.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let j: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let keys: Vec<&str> = j.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["config", "cycles", "plan", "program", "traffic"]);
    assert_eq!(j["traffic"]["perArray"]["centroids"]["mainMemoryReads"], 128);
    assert_eq!(j["traffic"]["perArray"]["points"]["mainMemoryReads"], 256);
    assert!(j["cycles"]["sequential"].as_u64() >= j["cycles"]["metapipelined"].as_u64());
    let no_mp = pplforge(&["report", "kmeans", "--tile", "n=16,k=4", "--size", "n=64,k=8,d=4", "--no-metapipeline"]);
    let k: serde_json::Value = serde_json::from_slice(&no_mp.stdout).unwrap();
    assert_eq!(k["traffic"]["totalCycles"], k["cycles"]["sequential"]);
}

#[test]
fn tiling_does_not_change_tpchq6_reads() {
    let reads = |extra: &[&str]| {
        let mut args = vec!["report", "tpchq6", "--size", "n=64"];
        args.extend_from_slice(extra);
        let j: serde_json::Value = serde_json::from_slice(&pplforge(&args).stdout).unwrap();
        j["traffic"]["perArray"]
            .as_object()
            .unwrap()
            .values()
            .map(|a| a["mainMemoryReads"].as_u64().unwrap())
            .sum::<u64>()
    };
    assert_eq!(reads(&["--tile", "n=16"]), reads(&["--passes", ""]));
}

#[test]
fn config_file_is_a_base_for_flags() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = pplforge::cli::RunConfig::default();
    c.tiling = c.tiling.tile("n", 16).tile("k", 4).size("n", 64).size("k", 8).size("d", 4);
    let cfg = write(dir.path(), "run.json", &serde_json::to_string(&c).unwrap());
    let o = pplforge(&["plan", "kmeans", "--config", &cfg]);
    assert_eq!(code(&o), 0);
    let j: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(j["metapipelines"][0]["stages"].as_array().unwrap().len(), 3);
    let o = pplforge(&["plan", "kmeans", "--config", &cfg, "--capacity", "10"]);
    assert_eq!(code(&o), 5);
}

#[test]
fn transform_prints_each_pass() {
    let o = pplforge(&["transform", "gemm", "--tile", "m=2,n=2,p=4", "--no-interchange"]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    let headers: Vec<&str> = s.lines().filter(|l| l.starts_with("== ")).collect();
    assert_eq!(headers, ["== strip-mine", "== cse", "== code-motion", "== localize", "== cse", "== code-motion"]);
}
