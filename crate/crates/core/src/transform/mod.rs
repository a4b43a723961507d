//! Tiling passes: strip mining, tile localization, pattern interchange,
//! split-and-interchange, and the CSE / code-motion cleanups.
//!
//! Every pass is a pure `Program -> Program` function. Passes assume binder
//! names are unique program-wide and call [`uniquify`] first.

mod cleanup;
mod interchange;
mod localize;
mod strip;

pub use cleanup::{code_motion, cse};
pub use interchange::{interchange, rule1, rule2, split_and_interchange};
pub use localize::{localize_tiles, non_affine_accesses, Access};
pub use strip::strip_mine;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ir::{rename_var, Expr, Fresh, GroupGen, Name, Program, Type};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TileConfig {
    /// Tile size per dimension symbol; absent dimensions stay untiled.
    pub tiles: BTreeMap<Name, u64>,
    /// On-chip capacity in words.
    pub on_chip_capacity: u64,
    /// Concrete values for size symbols, used for static word counts.
    #[serde(default)]
    pub sizes: BTreeMap<Name, u64>,
    /// Capacity in words of each cache generated for non-affine accesses.
    #[serde(default = "default_cache_words")]
    pub cache_words: u64,
}

fn default_cache_words() -> u64 {
    4096
}

impl Default for TileConfig {
    fn default() -> Self {
        TileConfig {
            tiles: BTreeMap::new(),
            on_chip_capacity: 1 << 20,
            sizes: BTreeMap::new(),
            cache_words: default_cache_words(),
        }
    }
}

impl TileConfig {
    pub fn tile(mut self, dim: &str, b: u64) -> Self {
        self.tiles.insert(dim.to_string(), b);
        self
    }

    pub fn capacity(mut self, words: u64) -> Self {
        self.on_chip_capacity = words;
        self
    }

    pub fn size(mut self, sym: &str, v: u64) -> Self {
        self.sizes.insert(sym.to_string(), v);
        self
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TransformError {
    #[error("unknown dimension `{0}`")]
    UnknownDimension(Name),
    #[error("tile size for `{0}` must be at least 1")]
    ZeroTile(Name),
    #[error("on-chip capacity must be positive")]
    ZeroCapacity,
    #[error("unknown pass `{0}`")]
    UnknownPass(String),
}

/// Pass names accepted by [`run_passes`], in default pipeline order.
pub const DEFAULT_PASSES: &[&str] =
    &["strip-mine", "cse", "code-motion", "split", "interchange", "localize", "cse", "code-motion"];

pub fn run_pass(p: &Program, name: &str, cfg: &TileConfig) -> Result<Program, TransformError> {
    Ok(match name {
        "strip-mine" => strip_mine(p, cfg)?,
        "localize" => localize_tiles(p, cfg),
        "cse" => cse(p),
        "code-motion" => code_motion(p),
        "split" => split_and_interchange(p, cfg),
        "interchange" => interchange(p),
        other => return Err(TransformError::UnknownPass(other.to_string())),
    })
}

pub fn run_passes(p: &Program, passes: &[String], cfg: &TileConfig) -> Result<Program, TransformError> {
    let mut cur = p.clone();
    for name in passes {
        cur = run_pass(&cur, name, cfg)?;
        log::debug!("after {name}:\n{}", crate::syntax::print_program(&cur));
    }
    Ok(cur)
}

/// The full default pipeline.
pub fn tile_program(p: &Program, cfg: &TileConfig) -> Result<Program, TransformError> {
    let passes: Vec<String> = DEFAULT_PASSES.iter().map(|s| s.to_string()).collect();
    run_passes(p, &passes, cfg)
}

/// Rename binders so that no two binding sites share a name and none
/// shadows a program-level name.
pub fn uniquify(p: &Program) -> Program {
    let mut fresh = Fresh::for_program(p);
    let mut seen: BTreeSet<Name> = BTreeSet::new();
    for i in &p.inputs {
        seen.insert(i.name.clone());
    }
    seen.extend(p.size_symbols());
    seen.extend(p.static_sizes.iter().cloned());
    for b in &p.bindings {
        seen.extend(b.names.iter().cloned());
    }
    let mut out = p.clone();
    for b in out.bindings.iter_mut() {
        let v = std::mem::replace(&mut b.value, Expr::int(0));
        b.value = uniq(v, &mut fresh, &mut seen);
    }
    out
}

struct Uniq<'a> {
    fresh: &'a mut Fresh,
    seen: &'a mut BTreeSet<Name>,
}

impl Uniq<'_> {
    /// A name for a binder site, renamed when already taken.
    fn site(&mut self, n: &mut Name) -> Option<(Name, Name)> {
        if self.seen.insert(n.clone()) {
            return None;
        }
        let nn = self.fresh.name(n);
        self.seen.insert(nn.clone());
        let old = std::mem::replace(n, nn.clone());
        Some((old, nn))
    }
}

fn ren(e: Expr, r: &Option<(Name, Name)>) -> Expr {
    match r {
        Some((from, to)) => rename_var(e, from, to),
        None => e,
    }
}

fn uniq(e: Expr, fresh: &mut Fresh, seen: &mut BTreeSet<Name>) -> Expr {
    let mut u = Uniq { fresh, seen };
    let e = match e {
        Expr::Let(mut n, v, b) => {
            let r = u.site(&mut n);
            Expr::Let(n, v, Box::new(ren(*b, &r)))
        }
        Expr::Map(mut m) => {
            for i in m.idx.iter_mut() {
                let r = u.site(i);
                m.body = ren(std::mem::replace(&mut m.body, Expr::int(0)), &r);
            }
            Expr::Map(m)
        }
        Expr::FlatMap(mut f) => {
            for i in f.idx.iter_mut() {
                let r = u.site(i);
                f.body = ren(std::mem::replace(&mut f.body, Expr::int(0)), &r);
            }
            Expr::FlatMap(f)
        }
        Expr::MultiFold(mut m) => {
            if let Some(c) = m.combine.as_mut() {
                for side in [&mut c.lhs, &mut c.rhs] {
                    let r = u.site(side);
                    c.body = ren(std::mem::replace(&mut c.body, Expr::int(0)), &r);
                }
            }
            let mut scope: Vec<Option<(Name, Name)>> = Vec::new();
            for i in m.idx.iter_mut() {
                scope.push(u.site(i));
            }
            for k in 0..m.lets.len() {
                let mut v = std::mem::replace(&mut m.lets[k].1, Expr::int(0));
                for r in &scope {
                    v = ren(v, r);
                }
                m.lets[k].1 = v;
                scope.push(u.site(&mut m.lets[k].0));
            }
            for up in m.updates.iter_mut() {
                for r in &scope {
                    up.loc = std::mem::take(&mut up.loc).into_iter().map(|x| ren(x, r)).collect();
                    up.slice = up.slice.take().map(|s| s.into_iter().map(|x| ren(x, r)).collect());
                    up.body = ren(std::mem::replace(&mut up.body, Expr::int(0)), r);
                }
                let r = u.site(&mut up.acc);
                up.body = ren(std::mem::replace(&mut up.body, Expr::int(0)), &r);
            }
            Expr::MultiFold(m)
        }
        Expr::GroupByFold(mut g) => {
            for side in [&mut g.combine.lhs, &mut g.combine.rhs] {
                let r = u.site(side);
                g.combine.body = ren(std::mem::replace(&mut g.combine.body, Expr::int(0)), &r);
            }
            let mut scope: Vec<Option<(Name, Name)>> = Vec::new();
            for i in g.idx.iter_mut() {
                scope.push(u.site(i));
            }
            for k in 0..g.lets.len() {
                let mut v = std::mem::replace(&mut g.lets[k].1, Expr::int(0));
                for r in &scope {
                    v = ren(v, r);
                }
                g.lets[k].1 = v;
                scope.push(u.site(&mut g.lets[k].0));
            }
            g.gen = match std::mem::replace(&mut g.gen, GroupGen::Merge(Expr::int(0))) {
                GroupGen::Keyed { key, mut acc, update } => {
                    let (mut key, mut update) = (key, update);
                    for r in &scope {
                        key = ren(key, r);
                        update = ren(update, r);
                    }
                    let r = u.site(&mut acc);
                    GroupGen::Keyed { key, acc, update: ren(update, &r) }
                }
                GroupGen::Merge(x) => GroupGen::Merge(scope.iter().fold(x, &ren)),
            };
            Expr::GroupByFold(g)
        }
        other => other,
    };
    e.map_children(&mut |c| uniq(c, fresh, seen))
}

/// Zero of a scalar (or tuple-of-scalar) type.
pub(crate) fn zero_of(t: &Type) -> Expr {
    match t {
        Type::Int => Expr::int(0),
        Type::Bool => Expr::Lit(crate::ir::Lit::Bool(false)),
        Type::Tuple(ts) => Expr::Tuple(ts.iter().map(zero_of).collect()),
        _ => Expr::float(0.0),
    }
}

pub(crate) fn zero_locs(n: usize) -> Vec<Expr> {
    vec![Expr::int(0); n]
}
