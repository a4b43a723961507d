use std::collections::BTreeSet;

use super::{free_vars, Name, Program};

/// Use-def graph over the top-level bindings of a program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepGraph {
    /// Names bound by each node (one node per binding).
    pub nodes: Vec<Vec<Name>>,
    /// `(producer, consumer)` binding indices.
    pub edges: BTreeSet<(usize, usize)>,
    /// Input arrays each node reads directly.
    pub input_uses: Vec<BTreeSet<Name>>,
}

impl DepGraph {
    pub fn has_edge(&self, producer: &str, consumer: &str) -> bool {
        let find = |n: &str| self.nodes.iter().position(|ns| ns.iter().any(|x| x == n));
        match (find(producer), find(consumer)) {
            (Some(a), Some(b)) => self.edges.contains(&(a, b)),
            _ => false,
        }
    }

    pub fn preds(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |(_, c)| *c == node).map(|(p, _)| *p)
    }

    /// Longest-path levels; nodes on the same level are independent.
    pub fn levels(&self) -> Vec<Vec<usize>> {
        let mut level = vec![0usize; self.nodes.len()];
        for i in 0..self.nodes.len() {
            level[i] = self.preds(i).map(|p| level[p] + 1).max().unwrap_or(0);
        }
        let depth = level.iter().copied().max().map(|m| m + 1).unwrap_or(0);
        let mut out = vec![Vec::new(); depth];
        for (i, l) in level.into_iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

pub fn deps(p: &Program) -> DepGraph {
    let nodes: Vec<Vec<Name>> = p.bindings.iter().map(|b| b.names.clone()).collect();
    let mut edges = BTreeSet::new();
    let mut input_uses = Vec::new();
    for (c, b) in p.bindings.iter().enumerate() {
        let fv = free_vars(&b.value);
        for (prod, names) in nodes.iter().enumerate().take(c) {
            if names.iter().any(|n| fv.contains(n)) {
                edges.insert((prod, c));
            }
        }
        input_uses.push(p.inputs.iter().filter(|i| fv.contains(&i.name)).map(|i| i.name.clone()).collect());
    }
    DepGraph { nodes, edges, input_uses }
}
