//! Shared golden forms: the accepted strip-mined shapes of the four
//! pattern kinds and the interchanged matrix multiply. Tile sizes divide
//! the pinned sizes, so inner extents are literal.
#![allow(dead_code)]

use pplforge::ir::{alpha_equal_expr, validate, Program};
use pplforge::syntax::{parse, print_program};
use pplforge::transform::{run_passes, tile_program, TileConfig};

pub const DOUBLE: &str = "input x : Float[d] dynamic\ny = map(d){ i => 2.0 * x(i) }\noutput y\n";
pub const FILTER: &str =
    "input x : Float[d] dynamic\ny = flatMap(d){ i => if (x(i) > 0.0) [x(i)] else [] }\noutput y\n";
pub const HIST: &str =
    "input x : Float[d] dynamic\nh = groupByFold(d)(0){ i => (int(x(i) / 10.0), 1) }{ (a, b) => a + b }\noutput h\n";

fn vec_cfg() -> TileConfig {
    TileConfig::default().tile("d", 4).size("d", 16)
}

fn strip_and_clean(src: &str, cfg: &TileConfig) -> Program {
    let passes: Vec<String> = ["strip-mine", "localize", "cse", "code-motion"].iter().map(|s| s.to_string()).collect();
    run_passes(&parse(src).unwrap(), &passes, cfg).unwrap()
}

/// Compiler output and accepted form of each golden case.
pub fn cases() -> Vec<(&'static str, Program, &'static str)> {
    let rows = TileConfig::default().tile("m", 4).tile("n", 2).size("m", 8).size("n", 6);
    let gemm = TileConfig::default().tile("m", 4).tile("n", 4).tile("p", 8).size("m", 8).size("n", 8).size("p", 16);
    vec![
        ("elementwise map", strip_and_clean(DOUBLE, &vec_cfg()), MAP),
        ("row sums", strip_and_clean(pplforge::corpus::source("sumrows").unwrap(), &rows), ROW_SUMS),
        ("filter", strip_and_clean(FILTER, &vec_cfg()), FILTER_TILED),
        ("histogram", strip_and_clean(HIST, &vec_cfg()), HISTOGRAM),
        (
            "interchanged matrix multiply",
            tile_program(&pplforge::corpus::program("gemm").unwrap(), &gemm).unwrap(),
            GEMM,
        ),
    ]
}

/// `None` when `got` validates and matches `want` binding by binding up to
/// alpha-equivalence.
pub fn golden_mismatch(got: &Program, want: &str) -> Option<String> {
    let want = parse(want).unwrap();
    let diags = validate(got);
    if !diags.is_empty() {
        return Some(format!("{diags:?}"));
    }
    let same = got.bindings.len() == want.bindings.len()
        && got
            .bindings
            .iter()
            .zip(&want.bindings)
            .all(|(g, w)| g.names == w.names && alpha_equal_expr(&g.value, &w.value));
    (!same).then(|| format!("got:\n{}\nwant:\n{}", print_program(got), print_program(&want)))
}

pub const MAP: &str = "input x : Float[d] dynamic
y = multiFold(cdiv(d, 4))(d)(fill(d, 0.0)){ t =>
  xt = x.copy(t * 4)(4)
  (t * 4 slice (4), acc => map(4){ e => 2.0 * xt(e) })
}(_)
output y
";

pub const ROW_SUMS: &str = "input x : Float[m, n] dynamic
s = multiFold(cdiv(m, 4), cdiv(n, 2))(m)(fill(m, 0.0)){ (r0, c0) =>
  xt = x.copy(r0 * 4, c0 * 2)(4, 2)
  tile = multiFold(4, 2)(4)(fill(4, 0.0)){ (r, c) =>
    (r, acc => acc + xt(r, c))
  }{ (p, q) => map(4){ e => p(e) + q(e) } }
  (r0 * 4 slice (4), acc2 => map(4){ e2 => acc2(e2) + tile(e2) })
}{ (p2, q2) =>
  multiFold(cdiv(m, 4))(m)(fill(m, 0.0)){ t =>
    (t * 4 slice (4), acc3 => map(4){ e3 => p2(t * 4 + e3) + q2(t * 4 + e3) })
  }(_)
}
output s
";

pub const FILTER_TILED: &str = "input x : Float[d] dynamic
y = flatMap(cdiv(d, 4)){ t =>
  xt = x.copy(t * 4)(4)
  flatMap(4){ e => if (xt(e) > 0.0) [xt(e)] else [] }
}
output y
";

pub const HISTOGRAM: &str = "input x : Float[d] dynamic
h = groupByFold(cdiv(d, 4))(0){ t =>
  xt = x.copy(t * 4)(4)
  merge(groupByFold(4)(0){ e =>
    (int(xt(e) / 10.0), acc => {
      v = 1
      acc + v
    })
  }{ (a, b) => a + b })
}{ (a2, b2) => a2 + b2 }
output h
";

pub const GEMM: &str = "input a : Float[m, p] dynamic
input b : Float[p, n] dynamic
c = multiFold(cdiv(m, 4), cdiv(n, 4))((m, n))(fill((m, n), 0.0)){ (i0, j0) =>
  ((i0 * 4, j0 * 4) slice (4, 4), outer => multiFold(cdiv(p, 8))((4, 4))(fill((4, 4), 0.0)){ k0 =>
    at = a.copy(i0 * 4, k0 * 8)(4, 8)
    bt = b.copy(k0 * 8, j0 * 4)(8, 4)
    ((0, 0) slice (4, 4), acc => map(4, 4){ (i, j) =>
      tile = fold(8)(0.0){ k =>
        s => s + at(i, k) * bt(k, j)
      }{ (x, y) => x + y }
      acc(i, j) + tile
    })
  }{ (p1, q1) => map(4, 4){ (i1, j1) => p1(i1, j1) + q1(i1, j1) } })
}(_)
output c
";

pub mod rules;
