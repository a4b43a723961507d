//! Seeded random programs for differential testing of the passes. Each
//! family exercises one pattern shape; expressions inside are random.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::interp::{equivalent, random_inputs, random_sizes, DEFAULT_TOL};
use crate::ir::{Name, Program};
use crate::syntax::parse;
use crate::transform::TileConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Map1,
    Map2,
    Fold,
    MaxFold,
    RowSums,
    ColSums,
    MapOfFold,
    MatMul,
    Filter,
    FilterReduce,
    Histogram,
    Chain,
    SplitCandidate,
    Redundant,
    Hoistable,
}

impl Family {
    pub const ALL: [Family; 15] = [
        Family::Map1,
        Family::Map2,
        Family::Fold,
        Family::MaxFold,
        Family::RowSums,
        Family::ColSums,
        Family::MapOfFold,
        Family::MatMul,
        Family::Filter,
        Family::FilterReduce,
        Family::Histogram,
        Family::Chain,
        Family::SplitCandidate,
        Family::Redundant,
        Family::Hoistable,
    ];

    /// Families whose outermost pattern is a Map, MultiFold, FlatMap or
    /// GroupByFold, for the strip-mining rule of that kind.
    pub fn strip_mining(kind: &str) -> &'static [Family] {
        match kind {
            "map" => &[Family::Map1, Family::Map2, Family::MapOfFold, Family::Redundant, Family::Hoistable],
            "multiFold" => &[Family::Fold, Family::MaxFold, Family::RowSums, Family::ColSums],
            "flatMap" => &[Family::Filter, Family::FilterReduce],
            "groupByFold" => &[Family::Histogram],
            _ => &[],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub family: Family,
    pub source: String,
    pub program: Program,
    pub config: TileConfig,
}

fn float<R: Rng>(rng: &mut R) -> String {
    format!("{:.1}", rng.gen_range(-3.0..3.0f64))
}

/// A random scalar Float expression over `leaves`.
fn expr<R: Rng>(rng: &mut R, leaves: &[String], depth: u32) -> String {
    if depth == 0 || rng.gen_bool(0.3) {
        return if rng.gen_bool(0.8) { leaves.choose(rng).unwrap().clone() } else { float(rng) };
    }
    let a = expr(rng, leaves, depth - 1);
    let b = expr(rng, leaves, depth - 1);
    match rng.gen_range(0..6) {
        0 => format!("({a} + {b})"),
        1 => format!("({a} - {b})"),
        2 => format!("({a} * {b})"),
        3 => format!("(-{a})"),
        4 => format!("(if ({a} > {b}) {a} else {b})"),
        _ => format!("square({a})"),
    }
}

fn leaves(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn source<R: Rng>(f: Family, rng: &mut R) -> (String, Vec<&'static str>) {
    let e = |rng: &mut R, l: &[&str]| expr(rng, &leaves(l), 3);
    match f {
        Family::Map1 => {
            let body = e(rng, &["x(i)", "y(i)"]);
            (
                format!(
                    "input x : Float[n] dynamic\ninput y : Float[n] dynamic\nz = map(n){{ i => {body} }}\noutput z\n"
                ),
                vec!["n"],
            )
        }
        Family::Map2 => {
            let body = e(rng, &["a(i, j)", "u(i)", "v(j)"]);
            (
                format!("input a : Float[m, n] dynamic\ninput u : Float[m] dynamic\ninput v : Float[n] dynamic\nz = map(m, n){{ (i, j) => {body} }}\noutput z\n"),
                vec!["m", "n"],
            )
        }
        Family::Fold => {
            let body = e(rng, &["x(i)", "y(i)"]);
            (
                format!("input x : Float[n] dynamic\ninput y : Float[n] dynamic\ns = fold(n)(0.0){{ i => acc => acc + {body} }}{{ (p, q) => p + q }}\noutput s\n"),
                vec!["n"],
            )
        }
        Family::MaxFold => {
            let body = e(rng, &["x(i)", "y(i)"]);
            (
                format!("input x : Float[n] dynamic\ninput y : Float[n] dynamic\ns = fold(n)(-inf){{ i => acc => if (acc > {body}) acc else {body} }}{{ (p, q) => if (p > q) p else q }}\noutput s\n"),
                vec!["n"],
            )
        }
        Family::RowSums => {
            let body = e(rng, &["a(i, j)", "u(i)", "v(j)"]);
            (
                format!("input a : Float[m, n] dynamic\ninput u : Float[m] dynamic\ninput v : Float[n] dynamic\ns = multiFold(m, n)(m)(zeros(m)){{ (i, j) => (i, acc => acc + {body}) }}{{ (p, q) => map(m){{ r => p(r) + q(r) }} }}\noutput s\n"),
                vec!["m", "n"],
            )
        }
        Family::ColSums => {
            let body = e(rng, &["a(i, j)", "u(i)", "v(j)"]);
            (
                format!("input a : Float[m, n] dynamic\ninput u : Float[m] dynamic\ninput v : Float[n] dynamic\ns = multiFold(m)(n)(zeros(n)){{ i => (0 slice (n), acc => map(n){{ j => acc(j) + {body} }}) }}{{ (p, q) => map(n){{ r => p(r) + q(r) }} }}\noutput s\n"),
                vec!["m", "n"],
            )
        }
        Family::MapOfFold => {
            let body = e(rng, &["a(i, j)", "u(i)", "v(j)"]);
            (
                format!("input a : Float[m, n] dynamic\ninput u : Float[m] dynamic\ninput v : Float[n] dynamic\nz = map(m){{ i => fold(n)(0.0){{ j => acc => acc + {body} }}{{ (p, q) => p + q }} }}\noutput z\n"),
                vec!["m", "n"],
            )
        }
        Family::MatMul => {
            let body = e(rng, &["a(i, l)", "b(l, j)"]);
            (
                format!("input a : Float[m, p] dynamic\ninput b : Float[p, n] dynamic\nc = map(m, n){{ (i, j) => fold(p)(0.0){{ l => acc => acc + a(i, l) * b(l, j) + {body} }}{{ (s, t) => s + t }} }}\noutput c\n"),
                vec!["m", "n", "p"],
            )
        }
        Family::Filter => {
            let body = e(rng, &["x(i)", "y(i)"]);
            let t = float(rng);
            (
                format!("input x : Float[n] dynamic\ninput y : Float[n] dynamic\nz = flatMap(n){{ i => if (x(i) > {t} * 0.3) [{body}] else [] }}\noutput z\n"),
                vec!["n"],
            )
        }
        Family::FilterReduce => {
            let body = e(rng, &["x(i)", "y(i)"]);
            (
                format!("input x : Float[n] dynamic\ninput y : Float[n] dynamic\nz = flatMap(n){{ i => if (y(i) < 0.2) [{body}] else [] }}\ns = fold(len(z))(0.0){{ r => acc => acc + z(r) }}{{ (p, q) => p + q }}\noutput s\n"),
                vec!["n"],
            )
        }
        Family::Histogram => {
            let k = rng.gen_range(1..6);
            let src = if rng.gen_bool(0.5) {
                format!("h = groupByFold(n)(0){{ i => (int(x(i) * {k}.0), 1) }}{{ (p, q) => p + q }}")
            } else {
                let body = e(rng, &["x(i)", "y(i)"]);
                format!(
                    "h = groupByFold(n)(0.0){{ i => (int(y(i) * {k}.0), acc => acc + {body}) }}{{ (p, q) => p + q }}"
                )
            };
            (format!("input x : Float[n] dynamic\ninput y : Float[n] dynamic\n{src}\noutput h\n"), vec!["n"])
        }
        Family::Chain => {
            let b1 = e(rng, &["x(i)", "y(i)"]);
            let b2 = e(rng, &["t(i)", "x(i)"]);
            (
                format!("input x : Float[n] dynamic\ninput y : Float[n] dynamic\nt = map(n){{ i => {b1} }}\ns = fold(n)(0.0){{ i => acc => acc + {b2} }}{{ (p, q) => p + q }}\noutput t, s\n"),
                vec!["n"],
            )
        }
        Family::SplitCandidate => {
            let body = e(rng, &["x(i)", "c(j)"]);
            let tail = e(rng, &["x(i)", "d"]);
            (
                format!("input x : Float[n] dynamic\ninput c : Float[k] dynamic\nz = map(n){{ i =>\n  d = fold(k)(0.0){{ j => acc => acc + {body} }}{{ (p, q) => p + q }}\n  {tail}\n}}\noutput z\n"),
                vec!["n", "k"],
            )
        }
        Family::Redundant => {
            let common = e(rng, &["x(i)", "y(i)"]);
            let other = e(rng, &["x(i)", "y(i)"]);
            (
                format!("input x : Float[n] dynamic\ninput y : Float[n] dynamic\nz = map(n){{ i =>\n  e1 = {common}\n  e2 = {other}\n  e3 = {common}\n  e1 * e2 + e3\n}}\noutput z\n"),
                vec!["n"],
            )
        }
        Family::Hoistable => {
            let body = e(rng, &["a(i, j)", "w(j)"]);
            (
                format!("input a : Float[m, n] dynamic\ninput v : Float[n] dynamic\nz = map(m){{ i =>\n  w = v.copy(0)(n)\n  fold(n)(0.0){{ j => acc => acc + {body} }}{{ (p, q) => p + q }}\n}}\noutput z\n"),
                vec!["m", "n"],
            )
        }
    }
}

/// A random program of family `f` with a random tiling of its dimensions.
/// Some configurations also pin each tiled size to a multiple of its tile.
pub fn generate<R: Rng>(f: Family, rng: &mut R) -> Generated {
    let (src, dims) = source(f, rng);
    let program = parse(&src).unwrap_or_else(|e| panic!("generated program does not parse: {e}\n{src}"));
    let mut config = TileConfig::default();
    let pinned = rng.gen_bool(0.3);
    for d in dims {
        if rng.gen_bool(0.85) {
            let b = rng.gen_range(1..=5);
            config = config.tile(d, b);
            if pinned {
                config = config.size(d, b * rng.gen_range(1..=3));
            }
        }
    }
    Generated { family: f, source: src, program, config }
}

/// A random program of any family.
pub fn generate_any<R: Rng>(rng: &mut R) -> Generated {
    let f = *Family::ALL.choose(rng).unwrap();
    generate(f, rng)
}

/// Compare `a` and `b` on `trials` random input sets, keeping the sizes
/// in `fixed` and drawing the rest from `0..=max`.
pub fn differential<R: Rng>(
    a: &Program,
    b: &Program,
    fixed: &BTreeMap<Name, u64>,
    trials: usize,
    rng: &mut R,
) -> Result<(), String> {
    for t in 0..trials {
        let sizes = random_sizes(a, fixed, 9, rng);
        let inputs = random_inputs(a, &sizes, rng);
        equivalent(a, b, &inputs, DEFAULT_TOL).map_err(|e| format!("trial {t} at {sizes:?}: {e}"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::validate;
    use rand::SeedableRng;

    #[test]
    fn every_family_parses_and_validates() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for f in Family::ALL {
            for _ in 0..20 {
                let g = generate(f, &mut rng);
                assert!(validate(&g.program).is_empty(), "{:?}\n{}", validate(&g.program), g.source);
            }
        }
    }
}
