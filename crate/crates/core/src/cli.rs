//! The `pplforge` command line. [`run`] takes the argument list and output
//! streams so it can be driven in-process.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 parse error,
//! 3 validation error, 4 transform error, 5 plan error, 6 oracle mismatch.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::hw::{emit_plan, HardwarePlan};
use crate::interp::{equivalent, random_inputs, random_sizes, run, Options, Tensor, Value, DEFAULT_TOL};
use crate::ir::{validate, Name, Program, Type};
use crate::perf::{count_traffic_with, MachineParams, TrafficReport};
use crate::syntax::{parse, print_program};
use crate::transform::{run_pass, run_passes, TileConfig, DEFAULT_PASSES};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_VALIDATE: i32 = 3;
pub const EXIT_TRANSFORM: i32 = 4;
pub const EXIT_PLAN: i32 = 5;
pub const EXIT_MISMATCH: i32 = 6;

/// Everything a run depends on besides the source program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunConfig {
    pub tiling: TileConfig,
    pub machine: MachineParams,
    pub passes: Vec<String>,
    pub seed: u64,
    pub metapipelining: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tiling: TileConfig::default(),
            machine: MachineParams::default(),
            passes: DEFAULT_PASSES.iter().map(|s| s.to_string()).collect(),
            seed: 0,
            metapipelining: true,
            json: None,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "pplforge", version, about = "Tile, plan and model parallel-pattern programs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Parse and validate a program.
    Check { file: String },
    /// Interpret a program on supplied or seeded random inputs.
    Eval {
        file: String,
        #[command(flatten)]
        opts: Opts,
    },
    /// Print the program after each pass of the pipeline.
    Transform {
        file: String,
        #[command(flatten)]
        opts: Opts,
    },
    /// Emit the hardware plan of the transformed program.
    Plan {
        file: String,
        #[command(flatten)]
        opts: Opts,
    },
    /// Emit the traffic and cycle report of the transformed program.
    Report {
        file: String,
        #[command(flatten)]
        opts: Opts,
    },
    /// Check that two pipelines give equivalent programs.
    Diff {
        file: String,
        /// Passes of the reference pipeline; empty means the source program.
        #[arg(long, value_delimiter = ',', default_value = "")]
        against: Vec<String>,
        /// Number of random input sets.
        #[arg(long, default_value_t = 8)]
        trials: u32,
        #[command(flatten)]
        opts: Opts,
    },
}

#[derive(Args, Debug, Default)]
struct Opts {
    /// Tile sizes, `dim=b,...`.
    #[arg(long, value_delimiter = ',')]
    tile: Vec<String>,
    /// Concrete sizes, `sym=v,...`.
    #[arg(long, value_delimiter = ',')]
    size: Vec<String>,
    /// On-chip capacity in words.
    #[arg(long)]
    capacity: Option<u64>,
    /// Pass list, comma separated.
    #[arg(long, value_delimiter = ',')]
    passes: Option<Vec<String>>,
    #[arg(long)]
    no_interchange: bool,
    #[arg(long)]
    no_metapipeline: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the JSON artifact to this path.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    burst_bytes: Option<u64>,
    /// Base configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input values as a JSON object.
    #[arg(long)]
    inputs: Option<PathBuf>,
}

struct Failure(i32, String);

type CResult<T> = Result<T, Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure(EXIT_USAGE, e.to_string())
}

fn pairs(items: &[String]) -> CResult<Vec<(String, u64)>> {
    items
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (k, v) = s.split_once('=').ok_or_else(|| usage(format!("expected key=value, got `{s}`")))?;
            let v = v.trim().parse().map_err(|_| usage(format!("`{v}` is not a non-negative integer")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

impl Opts {
    fn config(&self) -> CResult<RunConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        for (d, b) in pairs(&self.tile)? {
            c.tiling.tiles.insert(d, b);
        }
        for (s, v) in pairs(&self.size)? {
            c.tiling.sizes.insert(s, v);
        }
        if let Some(w) = self.capacity {
            c.tiling.on_chip_capacity = w;
        }
        if let Some(p) = &self.passes {
            c.passes = p.iter().filter(|s| !s.is_empty()).cloned().collect();
        }
        if self.no_interchange {
            c.passes.retain(|p| p != "interchange" && p != "split");
        }
        if self.no_metapipeline {
            c.metapipelining = false;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(b) = self.burst_bytes {
            c.machine.dram_burst_bytes = b;
        }
        if self.json.is_some() {
            c.json.clone_from(&self.json);
        }
        Ok(c)
    }
}

/// Source text of a file, or of the corpus program of that name.
fn read_source(file: &str) -> CResult<String> {
    if Path::new(file).exists() {
        return std::fs::read_to_string(file).map_err(|e| usage(format!("{file}: {e}")));
    }
    crate::corpus::source(file)
        .map(str::to_string)
        .ok_or_else(|| usage(format!("{file}: no such file or corpus program")))
}

fn load(file: &str) -> CResult<Program> {
    let src = read_source(file)?;
    let p = parse(&src).map_err(|e| Failure(EXIT_PARSE, format!("{file}:{e}")))?;
    let diags = validate(&p);
    if !diags.is_empty() {
        let msg = diags.iter().map(|d| format!("{file}: {d}")).collect::<Vec<_>>().join("\n");
        return Err(Failure(EXIT_VALIDATE, msg));
    }
    Ok(p)
}

fn transform(p: &Program, c: &RunConfig) -> CResult<Program> {
    if c.tiling.tiles.is_empty() && c.passes.iter().any(|s| s == "strip-mine") {
        log::info!("no tile sizes given; strip mining leaves the program unchanged");
    }
    let q = run_passes(p, &c.passes, &c.tiling).map_err(|e| Failure(EXIT_TRANSFORM, e.to_string()))?;
    check_transformed(&q)?;
    Ok(q)
}

fn check_transformed(q: &Program) -> CResult<()> {
    let diags = validate(q);
    if diags.is_empty() {
        return Ok(());
    }
    let msg = diags.iter().map(|d| format!("transformed program: {d}")).collect::<Vec<_>>().join("\n");
    Err(Failure(EXIT_TRANSFORM, msg))
}

fn value_from_json(j: &serde_json::Value, t: &Type) -> Option<Value> {
    use serde_json::Value as J;
    Some(match (t, j) {
        (Type::Int, J::Number(n)) => Value::Int(n.as_i64()?),
        (Type::Float, J::Number(n)) => Value::Float(n.as_f64()?),
        (Type::Bool, J::Bool(b)) => Value::Bool(*b),
        (Type::Tuple(ts), J::Array(vs)) if ts.len() == vs.len() => {
            Value::Tuple(ts.iter().zip(vs).map(|(t, v)| value_from_json(v, t)).collect::<Option<_>>()?)
        }
        (Type::Array(el, _), J::Object(o)) => {
            let shape: Vec<usize> =
                o.get("shape")?.as_array()?.iter().map(|v| v.as_u64().map(|v| v as usize)).collect::<Option<_>>()?;
            let data: Vec<Value> =
                o.get("data")?.as_array()?.iter().map(|v| value_from_json(v, el)).collect::<Option<_>>()?;
            if shape.iter().product::<usize>() != data.len() {
                return None;
            }
            Value::Array(std::sync::Arc::new(Tensor::new(shape, data)))
        }
        (Type::Array(el, 1), J::Array(vs)) => {
            let data: Vec<Value> = vs.iter().map(|v| value_from_json(v, el)).collect::<Option<_>>()?;
            Value::Array(std::sync::Arc::new(Tensor::new(vec![data.len()], data)))
        }
        _ => return None,
    })
}

/// Inputs from a JSON file, or seeded random inputs at the configured
/// sizes; unpinned sizes are drawn at random.
fn inputs(
    p: &Program,
    c: &RunConfig,
    file: Option<&PathBuf>,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> CResult<BTreeMap<Name, Value>> {
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let j: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let mut out = BTreeMap::new();
        for i in &p.inputs {
            let v =
                j.get(&i.name).ok_or_else(|| usage(format!("input `{}` missing from {}", i.name, path.display())))?;
            let t = Type::Array(Box::new(i.elem.clone()), i.shape.len());
            let v = value_from_json(v, &t)
                .ok_or_else(|| usage(format!("input `{}` does not match its declaration", i.name)))?;
            out.insert(i.name.clone(), v);
        }
        for (s, v) in &c.tiling.sizes {
            out.entry(s.clone()).or_insert(Value::Int(*v as i64));
        }
        return Ok(out);
    }
    let sizes = random_sizes(p, &c.tiling.sizes, 12, rng);
    Ok(random_inputs(p, &sizes, rng))
}

fn emit_json(c: &RunConfig, v: &serde_json::Value, out: &mut dyn Write) -> CResult<()> {
    let text = serde_json::to_string_pretty(v).map_err(usage)?;
    match &c.json {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| usage(format!("{}: {e}", path.display()))),
        None => writeln!(out, "{text}").map_err(usage),
    }
}

fn plan(q: &Program, c: &RunConfig) -> CResult<HardwarePlan> {
    emit_plan(q, &c.tiling).map_err(|e| Failure(EXIT_PLAN, e.to_string()))
}

/// Sizes at which the report replays the program: the pinned sizes, with
/// 16 for anything left open.
fn report_sizes(p: &Program, c: &RunConfig) -> BTreeMap<Name, u64> {
    let mut sizes = c.tiling.sizes.clone();
    for s in p.size_symbols().into_iter().chain(p.static_sizes.iter().cloned()) {
        sizes.entry(s).or_insert(16);
    }
    sizes
}

fn report(p: &Program, q: &Program, c: &RunConfig) -> CResult<(HardwarePlan, TrafficReport)> {
    let pl = plan(q, c)?;
    let sizes = report_sizes(p, c);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(c.seed);
    let ins = random_inputs(p, &sizes, &mut rng);
    let mut r = count_traffic_with(q, &pl, &ins, &c.machine).map_err(|e| Failure(EXIT_PLAN, e.to_string()))?;
    if !c.metapipelining {
        r.total_cycles = r.cycles.sequential;
    }
    Ok((pl, r))
}

fn dispatch(cmd: Cmd, out: &mut dyn Write) -> CResult<()> {
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(usage);
    match cmd {
        Cmd::Check { file } => {
            let p = load(&file)?;
            w(out, format!("{file}: ok ({} bindings, {} outputs)", p.bindings.len(), p.outputs.len()))
        }
        Cmd::Eval { file, opts } => {
            let c = opts.config()?;
            let p = load(&file)?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(c.seed);
            let ins = inputs(&p, &c, opts.inputs.as_ref(), &mut rng)?;
            let o = run(&p, &ins, Options::default())
                .map_err(|e| Failure(EXIT_USAGE, format!("evaluation failed: {e}")))?;
            let j: serde_json::Map<String, serde_json::Value> =
                o.outputs.iter().map(|(n, v)| (n.clone(), v.to_json())).collect();
            if c.json.is_some() {
                emit_json(&c, &serde_json::Value::Object(j), out)?;
            }
            for (n, v) in &o.outputs {
                w(out, format!("{n} = {v}"))?;
            }
            Ok(())
        }
        Cmd::Transform { file, opts } => {
            let c = opts.config()?;
            let mut cur = load(&file)?;
            for pass in &c.passes {
                cur = run_pass(&cur, pass, &c.tiling).map_err(|e| Failure(EXIT_TRANSFORM, e.to_string()))?;
                check_transformed(&cur)?;
                w(out, format!("== {pass}\n{}", print_program(&cur)))?;
            }
            if c.json.is_some() {
                emit_json(&c, &serde_json::json!({ "program": print_program(&cur), "config": c }), out)?;
            }
            Ok(())
        }
        Cmd::Plan { file, opts } => {
            let c = opts.config()?;
            let q = transform(&load(&file)?, &c)?;
            let pl = plan(&q, &c)?;
            emit_json(&c, &serde_json::to_value(&pl).map_err(usage)?, out)
        }
        Cmd::Report { file, opts } => {
            let c = opts.config()?;
            let p = load(&file)?;
            let q = transform(&p, &c)?;
            let (pl, r) = report(&p, &q, &c)?;
            let j = serde_json::json!({
                "program": print_program(&q),
                "config": c,
                "plan": pl,
                "traffic": r,
                "cycles": r.cycles,
            });
            emit_json(&c, &j, out)?;
            if c.json.is_some() {
                w(
                    out,
                    format!(
                        "reads {} words, writes {} words, {} cycles",
                        r.total_reads(),
                        r.total_writes(),
                        r.total_cycles
                    ),
                )?;
            }
            Ok(())
        }
        Cmd::Diff { file, against, trials, opts } => {
            let c = opts.config()?;
            let p = load(&file)?;
            let a = if against.iter().all(String::is_empty) {
                p.clone()
            } else {
                let against: Vec<String> = against.into_iter().filter(|s| !s.is_empty()).collect();
                run_passes(&p, &against, &c.tiling).map_err(|e| Failure(EXIT_TRANSFORM, e.to_string()))?
            };
            let b = transform(&p, &c)?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(c.seed);
            let trials = if opts.inputs.is_some() { 1 } else { trials.max(1) };
            for t in 0..trials {
                let ins = inputs(&p, &c, opts.inputs.as_ref(), &mut rng)?;
                if let Err(e) = equivalent(&a, &b, &ins, DEFAULT_TOL) {
                    return Err(Failure(EXIT_MISMATCH, format!("trial {t}: not equivalent: {e}")));
                }
            }
            w(out, format!("equivalent on {trials} input sets (seed {})", c.seed))
        }
    }
}

/// Run the command line `args` (program name first) and return the exit
/// code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = if e.use_stderr() { write!(err, "{}", e.render()) } else { write!(out, "{}", e.render()) };
            return code;
        }
    };
    match dispatch(cli.cmd, out) {
        Ok(()) => 0,
        Err(Failure(code, msg)) => {
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_round_trips() {
        let mut c = RunConfig::default();
        c.tiling = c.tiling.tile("n", 16).size("n", 64).capacity(1000);
        c.machine.dram_burst_bytes = 128;
        c.passes.retain(|p| p != "split");
        c.json = Some(PathBuf::from("out.json"));
        let text = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn tile_flags_accumulate() {
        let o = Opts { tile: vec!["n=16".into(), "k=4".into()], no_interchange: true, ..Opts::default() };
        let c = o.config().ok().unwrap();
        assert_eq!(c.tiling.tiles.len(), 2);
        assert!(!c.passes.iter().any(|p| p == "interchange" || p == "split"));
    }

    #[test]
    fn json_inputs_decode() {
        let t = Type::Array(Box::new(Type::Float), 2);
        let j = serde_json::json!({ "shape": [1, 2], "data": [1.0, 2.5] });
        let v = value_from_json(&j, &t).unwrap();
        assert_eq!(v.to_json(), j);
        assert!(value_from_json(
            &serde_json::json!({ "shape": [3], "data": [1.0] }),
            &Type::Array(Box::new(Type::Float), 1)
        )
        .is_none());
    }
}
