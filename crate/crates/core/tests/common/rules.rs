//! Per-rule differential soundness cases over generated programs.
#![allow(dead_code)]

use rand::Rng;

use pplforge::gen::{differential, generate, Family, Generated};
use pplforge::ir::{alpha_equal, Program};
use pplforge::transform::{run_pass, run_passes, TileConfig};

pub struct Rule {
    pub name: &'static str,
    pub families: &'static [Family],
    /// Passes run before the rule.
    pub prep: &'static [&'static str],
    pub pass: &'static str,
    /// Dimensions forced tiled and untiled.
    pub tiled: &'static [&'static str],
    pub untiled: &'static [&'static str],
}

pub const RULES: [Rule; 9] = [
    Rule {
        name: "strip-mine map",
        families: &[Family::Map1, Family::Map2, Family::MapOfFold, Family::Redundant, Family::Hoistable],
        prep: &[],
        pass: "strip-mine",
        tiled: &[],
        untiled: &[],
    },
    Rule {
        name: "strip-mine multiFold",
        families: &[Family::Fold, Family::MaxFold, Family::RowSums, Family::ColSums],
        prep: &[],
        pass: "strip-mine",
        tiled: &[],
        untiled: &[],
    },
    Rule {
        name: "strip-mine flatMap",
        families: &[Family::Filter, Family::FilterReduce],
        prep: &[],
        pass: "strip-mine",
        tiled: &[],
        untiled: &[],
    },
    Rule {
        name: "strip-mine groupByFold",
        families: &[Family::Histogram],
        prep: &[],
        pass: "strip-mine",
        tiled: &[],
        untiled: &[],
    },
    Rule {
        name: "interchange map of fold",
        families: &[Family::MapOfFold, Family::MatMul],
        prep: &["strip-mine"],
        pass: "interchange",
        tiled: &["n", "p"],
        untiled: &[],
    },
    Rule {
        name: "interchange fold of map",
        families: &[Family::ColSums],
        prep: &["strip-mine"],
        pass: "interchange",
        tiled: &["n"],
        untiled: &["m"],
    },
    Rule {
        name: "split",
        families: &[Family::SplitCandidate],
        prep: &["strip-mine", "cse", "code-motion"],
        pass: "split",
        tiled: &["n", "k"],
        untiled: &[],
    },
    Rule {
        name: "cse",
        families: &[Family::Redundant, Family::Chain, Family::MatMul],
        prep: &[],
        pass: "cse",
        tiled: &[],
        untiled: &[],
    },
    Rule {
        name: "code motion",
        families: &[Family::Hoistable, Family::MapOfFold, Family::SplitCandidate],
        prep: &["strip-mine", "localize"],
        pass: "code-motion",
        tiled: &[],
        untiled: &[],
    },
];

pub struct Case {
    pub generated: Generated,
    pub before: Program,
    pub after: Program,
}

impl Case {
    pub fn fired(&self) -> bool {
        self.before.bindings.len() != self.after.bindings.len()
            || self.before.bindings.iter().zip(&self.after.bindings).any(|(a, b)| !alpha_equal(&a.value, &b.value))
    }
}

fn force(cfg: &mut TileConfig, rule: &Rule, p: &Program, rng: &mut impl Rng) {
    let dims = p.size_symbols();
    for d in rule.tiled.iter().filter(|d| dims.iter().any(|s| s == *d)) {
        if !cfg.tiles.contains_key(*d) {
            cfg.tiles.insert(d.to_string(), rng.gen_range(2..=4));
            cfg.sizes.remove(*d);
        }
    }
    for d in rule.untiled {
        cfg.tiles.remove(*d);
    }
}

pub fn case(rule: &Rule, rng: &mut impl Rng) -> Case {
    let f = rule.families[rng.gen_range(0..rule.families.len())];
    let mut g = generate(f, rng);
    force(&mut g.config, rule, &g.program, rng);
    let prep: Vec<String> = rule.prep.iter().map(|s| s.to_string()).collect();
    let before = run_passes(&g.program, &prep, &g.config).unwrap();
    let after = run_pass(&before, rule.pass, &g.config).unwrap();
    Case { generated: g, before, after }
}

/// Check a case on `trials` random inputs against the original program.
pub fn check(c: &Case, trials: usize, rng: &mut impl Rng) -> Result<(), String> {
    differential(&c.generated.program, &c.after, &c.generated.config.sizes, trials, rng)
        .map_err(|e| format!("{e}\n{}", c.generated.source))
}
