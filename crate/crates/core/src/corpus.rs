//! The benchmark programs shipped with the crate.

use crate::ir::Program;
use crate::syntax::parse;

pub const NAMES: [&str; 6] = ["outerprod", "sumrows", "gemm", "tpchq6", "gda", "kmeans"];

pub fn source(name: &str) -> Option<&'static str> {
    Some(match name {
        "outerprod" => include_str!("../corpus/outerprod.ppl"),
        "sumrows" => include_str!("../corpus/sumrows.ppl"),
        "gemm" => include_str!("../corpus/gemm.ppl"),
        "tpchq6" => include_str!("../corpus/tpchq6.ppl"),
        "gda" => include_str!("../corpus/gda.ppl"),
        "kmeans" => include_str!("../corpus/kmeans.ppl"),
        _ => return None,
    })
}

/// Parsed corpus program. Panics if a shipped file fails to parse.
pub fn program(name: &str) -> Option<Program> {
    source(name).map(|s| parse(s).unwrap_or_else(|e| panic!("corpus {name}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{alpha_equal, validate};
    use crate::syntax::print_program;

    #[test]
    fn corpus_parses_validates_and_round_trips() {
        for n in NAMES {
            let p = program(n).unwrap();
            let diags = validate(&p);
            assert!(diags.is_empty(), "{n}: {diags:?}");
            let printed = print_program(&p);
            let q = parse(&printed).unwrap_or_else(|e| panic!("{n}: {e}\n{printed}"));
            assert_eq!(p.bindings.len(), q.bindings.len());
            for (a, b) in p.bindings.iter().zip(&q.bindings) {
                assert!(alpha_equal(&a.value, &b.value), "{n}:\n{printed}");
            }
        }
    }

    #[test]
    fn corpus_runs_instrumented() {
        use crate::interp::{random_inputs, random_sizes, run, Options};
        use rand::SeedableRng;
        for n in NAMES {
            let p = program(n).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
            let fixed = p.size_symbols().into_iter().map(|s| (s, 5)).collect();
            let sizes = random_sizes(&p, &fixed, 8, &mut rng);
            let inputs = random_inputs(&p, &sizes, &mut rng);
            let out = run(&p, &inputs, Options::instrumented()).unwrap_or_else(|e| panic!("{n}: {e}"));
            assert_eq!(out.outputs.len(), p.outputs.len());
        }
    }
}
