use proptest::prelude::*;
use rand::SeedableRng;

use pplforge::gen::{differential, generate_any};
use pplforge::ir::alpha_equal;
use pplforge::transform::{run_pass, tile_program, DEFAULT_PASSES};

mod common;

use common::rules::{case, check, RULES};

fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_rule_preserves_meaning(seed in any::<u64>()) {
        let mut r = rng(seed);
        for rule in &RULES {
            let c = case(rule, &mut r);
            prop_assert!(check(&c, 2, &mut r).is_ok(), "{}: {:?}", rule.name, check(&c, 2, &mut r));
        }
    }

    #[test]
    fn default_pipeline_preserves_meaning(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = generate_any(&mut r);
        let t = tile_program(&g.program, &g.config).unwrap();
        let res = differential(&g.program, &t, &g.config.sizes, 3, &mut r);
        prop_assert!(res.is_ok(), "{:?}\n{}", res, g.source);
    }

    #[test]
    fn passes_are_idempotent(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = generate_any(&mut r);
        let mut cur = g.program.clone();
        for pass in DEFAULT_PASSES {
            let once = run_pass(&cur, pass, &g.config).unwrap();
            // Strip mining tiles again; every other pass is a fixpoint.
            if *pass != "strip-mine" {
                let twice = run_pass(&once, pass, &g.config).unwrap();
                let same = once.bindings.iter().zip(&twice.bindings).all(|(a, b)| alpha_equal(&a.value, &b.value));
                prop_assert!(same, "{pass} not idempotent on\n{}", g.source);
            }
            cur = once;
        }
    }
}

#[test]
fn rules_fire_on_their_families() {
    let mut r = rng(5);
    for rule in &RULES {
        let fired = (0..40).filter(|_| case(rule, &mut r).fired()).count();
        assert!(fired >= 10, "{} fired on {fired} of 40", rule.name);
    }
}
