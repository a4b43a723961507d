use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{node_ids, Forward, HwError, MemoryPlan, Metapipeline, PlanNode, StageItem, TemplateKind};
use crate::ir::{deps, free_vars, Expr, GroupGen, Name, Program, SizeClass};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Assignment {
    pub node: usize,
    pub label: String,
    pub kind: TemplateKind,
}

/// Stages of an outer pattern plus the tile partials merged into the
/// outer accumulator's stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Schedule {
    pub stages: Vec<Vec<StageItem>>,
    pub partials: Vec<Name>,
}

struct Item<'a> {
    label: String,
    exprs: Vec<&'a Expr>,
    binds: Option<Name>,
    update: Option<usize>,
    uses: BTreeSet<Name>,
}

fn heavy(e: &Expr) -> bool {
    e.is_pattern() || matches!(e, Expr::Copy(_)) || e.children().into_iter().any(heavy)
}

fn let_item<'a>(n: &Name, v: &'a Expr) -> Item<'a> {
    Item { label: n.clone(), exprs: vec![v], binds: Some(n.clone()), update: None, uses: free_vars(v) }
}

/// The body of a pattern as a list of items, lets first.
fn body_items(e: &Expr) -> Option<Vec<Item<'_>>> {
    Some(match e {
        Expr::MultiFold(m) => {
            let mut out: Vec<Item> = m.lets.iter().map(|(n, v)| let_item(n, v)).collect();
            for (k, u) in m.updates.iter().enumerate() {
                let mut uses = free_vars(&u.body);
                uses.remove(&u.acc);
                for x in u.loc.iter().chain(u.slice.iter().flatten()) {
                    uses.extend(free_vars(x));
                }
                out.push(Item { label: u.acc.clone(), exprs: vec![&u.body], binds: None, update: Some(k), uses });
            }
            out
        }
        Expr::GroupByFold(g) => {
            let mut out: Vec<Item> = g.lets.iter().map(|(n, v)| let_item(n, v)).collect();
            match &g.gen {
                GroupGen::Keyed { key, acc, update } => {
                    let mut uses = free_vars(update);
                    uses.remove(acc);
                    uses.extend(free_vars(key));
                    out.push(Item { label: acc.clone(), exprs: vec![key, update], binds: None, update: Some(0), uses });
                }
                GroupGen::Merge(x) => out.push(Item {
                    label: "merge".into(),
                    exprs: vec![x],
                    binds: None,
                    update: Some(0),
                    uses: free_vars(x),
                }),
            }
            out
        }
        Expr::Map(_) | Expr::FlatMap(_) => {
            let body = match e {
                Expr::Map(m) => &m.body,
                Expr::FlatMap(f) => &f.body,
                _ => unreachable!(),
            };
            let (lets, last) = body.peel_lets();
            let mut out: Vec<Item> = lets.into_iter().map(|(n, v)| let_item(n, v)).collect();
            out.push(Item {
                label: "body".into(),
                exprs: vec![last],
                binds: None,
                update: None,
                uses: free_vars(last),
            });
            out
        }
        _ => return None,
    })
}

/// Topological levels of the heavy items of an outer pattern's body.
/// Light lets (no inner pattern or copy) pass dependencies through. An
/// update that folds a tile partial into the accumulator shares the
/// partial's stage.
pub fn schedule_metapipeline(p: &Program, outer: &Expr) -> Result<Schedule, HwError> {
    let ids = node_ids(p);
    schedule_with(outer, &ids)
}

fn schedule_with(outer: &Expr, ids: &HashMap<usize, usize>) -> Result<Schedule, HwError> {
    let Some(items) = body_items(outer) else { return Ok(Schedule::default()) };
    let mut light: BTreeMap<Name, BTreeSet<Name>> = BTreeMap::new();
    let mut hv: Vec<Item> = Vec::new();
    for it in items {
        if it.exprs.iter().any(|e| heavy(e)) {
            hv.push(it);
        } else if let Some(n) = &it.binds {
            light.insert(n.clone(), it.uses.clone());
        }
    }
    if hv.is_empty() {
        return Ok(Schedule::default());
    }
    let binder: BTreeMap<Name, usize> =
        hv.iter().enumerate().filter_map(|(i, it)| it.binds.clone().map(|n| (n, i))).collect();
    let deps: Vec<BTreeSet<usize>> = hv
        .iter()
        .map(|it| {
            let mut seen = BTreeSet::new();
            let mut work: Vec<Name> = it.uses.iter().cloned().collect();
            let mut out = BTreeSet::new();
            while let Some(n) = work.pop() {
                if !seen.insert(n.clone()) {
                    continue;
                }
                if let Some(&j) = binder.get(&n) {
                    out.insert(j);
                } else if let Some(u) = light.get(&n) {
                    work.extend(u.iter().cloned());
                }
            }
            out
        })
        .collect();
    let is_mf = matches!(outer, Expr::MultiFold(_));
    let partial = |j: usize| is_mf && matches!(hv[j].exprs[0].peel_lets().1, Expr::MultiFold(_));
    let partials: BTreeSet<usize> = (0..hv.len())
        .filter(|&j| {
            partial(j) && {
                let users: Vec<usize> = (0..hv.len()).filter(|&i| deps[i].contains(&j)).collect();
                !users.is_empty() && users.iter().all(|&i| hv[i].update.is_some())
            }
        })
        .collect();
    let mut level: Vec<Option<usize>> = vec![None; hv.len()];
    for _ in 0..=hv.len() {
        for i in 0..hv.len() {
            if level[i].is_some() {
                continue;
            }
            if deps[i].iter().all(|&d| level[d].is_some() && d != i) {
                let l = deps[i]
                    .iter()
                    .map(|&d| level[d].unwrap() + usize::from(!(partials.contains(&d) && hv[i].update.is_some())))
                    .max()
                    .unwrap_or(0);
                level[i] = Some(l);
            }
        }
    }
    if level.iter().any(Option::is_none) {
        return Err(HwError::CyclicBody(describe(outer)));
    }
    let used: BTreeSet<usize> = level.iter().flatten().copied().collect();
    let rank: BTreeMap<usize, usize> = used.iter().enumerate().map(|(r, l)| (*l, r)).collect();
    let mut stages: Vec<Vec<StageItem>> = vec![Vec::new(); used.len()];
    for (i, it) in hv.iter().enumerate() {
        stages[rank[&level[i].unwrap()]].push(StageItem {
            label: it.label.clone(),
            nodes: it.exprs.iter().map(|e| ids[&(*e as *const Expr as usize)]).collect(),
            update: it.update,
            binds: it.binds.clone(),
            reads: deps[i].iter().filter_map(|&d| hv[d].binds.clone()).collect(),
        });
    }
    Ok(Schedule { stages, partials: partials.iter().filter_map(|&j| hv[j].binds.clone()).collect() })
}

fn describe(e: &Expr) -> String {
    let kind = match e {
        Expr::Map(_) => "map",
        Expr::MultiFold(_) => "multiFold",
        Expr::FlatMap(_) => "flatMap",
        Expr::GroupByFold(_) => "groupByFold",
        Expr::Copy(_) => "copy",
        _ => "expression",
    };
    kind.to_string()
}

fn leaf_kind(e: &Expr) -> Result<TemplateKind, HwError> {
    Ok(match e {
        Expr::Map(_) => TemplateKind::Vector,
        Expr::MultiFold(_) => TemplateKind::ReductionTree,
        Expr::FlatMap(_) => TemplateKind::ParallelFifo,
        Expr::GroupByFold(g) => match &g.gen {
            GroupGen::Merge(x) if !matches!(x, Expr::GroupByFold(_)) => {
                return Err(HwError::UnmappableNode("groupByFold merging a non-groupByFold".into()))
            }
            _ => TemplateKind::Cam,
        },
        Expr::Copy(_) => TemplateKind::TileMemoryCtrl,
        other => return Err(HwError::UnmappableNode(describe(other))),
    })
}

fn kind_of(e: &Expr, ids: &HashMap<usize, usize>) -> Result<TemplateKind, HwError> {
    if matches!(e, Expr::Copy(_)) {
        return Ok(TemplateKind::TileMemoryCtrl);
    }
    let s = schedule_with(e, ids)?;
    if s.stages.is_empty() {
        return leaf_kind(e);
    }
    if let Expr::GroupByFold(_) = e {
        leaf_kind(e)?;
    }
    Ok(match (s.stages.len(), s.stages.first().map_or(0, Vec::len)) {
        (n, _) if n >= 2 => TemplateKind::MetapipelineCtrl,
        (_, k) if k >= 2 => TemplateKind::ParallelCtrl,
        _ => TemplateKind::SequentialCtrl,
    })
}

/// Template kind of every pattern and copy node.
pub fn map_templates(p: &Program) -> Result<Vec<Assignment>, HwError> {
    let ids = node_ids(p);
    let mut out = Vec::new();
    for b in &p.bindings {
        let mut stack = vec![&b.value];
        while let Some(e) = stack.pop() {
            if e.is_pattern() || matches!(e, Expr::Copy(_)) {
                out.push(Assignment {
                    node: ids[&(e as *const Expr as usize)],
                    label: describe(e),
                    kind: kind_of(e, &ids)?,
                });
            }
            stack.extend(e.children());
        }
    }
    out.sort_by_key(|a| a.node);
    Ok(out)
}

struct Lowering<'a> {
    ids: HashMap<usize, usize>,
    memory: &'a MemoryPlan,
    pipelines: Vec<Metapipeline>,
}

impl Lowering<'_> {
    fn id(&self, e: &Expr) -> usize {
        self.ids[&(e as *const Expr as usize)]
    }

    /// Controllers for the heavy parts of a non-pattern expression.
    fn lower_parts(
        &mut self,
        e: &Expr,
        label: &str,
        allow_mp: bool,
        acc_off_chip: bool,
    ) -> Result<Vec<PlanNode>, HwError> {
        if e.is_pattern() || matches!(e, Expr::Copy(_)) {
            return Ok(vec![self.lower(e, label, allow_mp, acc_off_chip)?]);
        }
        if let Expr::Let(n, v, b) = e {
            let mut out = self.lower_parts(v, n, allow_mp, false)?;
            out.extend(self.lower_parts(b, label, allow_mp, acc_off_chip)?);
            return Ok(out);
        }
        let mut out = Vec::new();
        for c in e.children() {
            out.extend(self.lower_parts(c, label, allow_mp, false)?);
        }
        Ok(out)
    }

    fn group(kind: TemplateKind, label: &str, mut parts: Vec<PlanNode>) -> PlanNode {
        if parts.len() == 1 {
            return parts.pop().unwrap();
        }
        PlanNode::ctrl(kind, label, None, parts)
    }

    fn lower(&mut self, e: &Expr, label: &str, allow_mp: bool, acc_off_chip: bool) -> Result<PlanNode, HwError> {
        let id = self.id(e);
        if matches!(e, Expr::Copy(_)) {
            return Ok(PlanNode::leaf(TemplateKind::TileMemoryCtrl, label, Some(id)));
        }
        let s = schedule_with(e, &self.ids)?;
        if s.stages.is_empty() {
            return Ok(PlanNode::leaf(leaf_kind(e)?, label, Some(id)));
        }
        let pipelined = allow_mp && s.stages.len() >= 2;
        let mut stage_nodes = Vec::new();
        for (k, stage) in s.stages.iter().enumerate() {
            let mut parts = Vec::new();
            for item in stage {
                let exprs: Vec<&Expr> = item_exprs(e, item);
                let mut sub = Vec::new();
                for x in exprs {
                    sub.extend(self.lower_parts(x, &item.label, allow_mp && !pipelined, false)?);
                }
                parts.push(Self::group(TemplateKind::SequentialCtrl, &item.label, sub));
            }
            stage_nodes.push(Self::group(TemplateKind::ParallelCtrl, &format!("{label} stage {k}"), parts));
        }
        if !pipelined {
            let kind = if s.stages.len() == 1 && s.stages[0].len() > 1 {
                TemplateKind::ParallelCtrl
            } else {
                TemplateKind::SequentialCtrl
            };
            let children = if kind == TemplateKind::ParallelCtrl {
                match stage_nodes.pop() {
                    Some(PlanNode { kind: TemplateKind::ParallelCtrl, children, .. }) => children,
                    Some(other) => vec![other],
                    None => vec![],
                }
            } else {
                stage_nodes
            };
            return Ok(PlanNode::ctrl(kind, label, Some(id), children));
        }
        let mut double_buffers = BTreeMap::new();
        for (k, stage) in s.stages.iter().enumerate() {
            for item in stage {
                let Some(n) = &item.binds else { continue };
                if s.partials.contains(n) || self.memory.is_off_chip(n) {
                    continue;
                }
                let last = s
                    .stages
                    .iter()
                    .enumerate()
                    .filter(|(_, st)| st.iter().any(|it| item_uses(e, it).contains(n)))
                    .map(|(c, _)| c)
                    .max();
                if let Some(c) = last.filter(|&c| c > k) {
                    double_buffers.insert(n.clone(), (c - k) as u32);
                }
            }
        }
        let mut forwarding = Vec::new();
        if let (Expr::MultiFold(m), true) = (e, acc_off_chip) {
            for (k, u) in m.updates.iter().enumerate() {
                if crate::ir::mentions(&u.body, &u.acc) {
                    if let Some(st) = s.stages.iter().position(|st| st.iter().any(|i| i.update == Some(k))) {
                        forwarding.push(Forward { accumulator: u.acc.clone(), from_stage: st, to_stage: st });
                    }
                }
            }
        }
        self.pipelines.push(Metapipeline {
            label: label.to_string(),
            node: id,
            stages: s.stages.clone(),
            double_buffers,
            dedup: s.partials.clone(),
            forwarding,
        });
        Ok(PlanNode::ctrl(TemplateKind::MetapipelineCtrl, label, Some(id), stage_nodes))
    }
}

/// Expressions of a stage item, found again by node id.
fn item_exprs<'a>(outer: &'a Expr, item: &StageItem) -> Vec<&'a Expr> {
    let Some(items) = body_items(outer) else { return vec![] };
    for it in items {
        if it.label == item.label && it.update == item.update && it.binds == item.binds {
            return it.exprs;
        }
    }
    vec![]
}

fn item_uses(outer: &Expr, item: &StageItem) -> BTreeSet<Name> {
    item_exprs(outer, item).into_iter().flat_map(free_vars).collect()
}

/// Root controller and metapipelines of a whole program.
pub(crate) fn lower_program(p: &Program, memory: &MemoryPlan) -> Result<(PlanNode, Vec<Metapipeline>), HwError> {
    let mut lw = Lowering { ids: node_ids(p), memory, pipelines: Vec::new() };
    let mut children = Vec::new();
    let loads: Vec<PlanNode> = p
        .inputs
        .iter()
        .filter(|i| i.class == SizeClass::Static && !memory.is_off_chip(&i.name))
        .map(|i| PlanNode::leaf(TemplateKind::TileMemoryCtrl, format!("load {}", i.name), None))
        .collect();
    if !loads.is_empty() {
        children.push(Lowering::group(TemplateKind::ParallelCtrl, "load", loads));
    }
    for level in deps(p).levels() {
        let mut parts = Vec::new();
        for i in level {
            let b = &p.bindings[i];
            let label = b.names.join(", ");
            let off = b.names.iter().any(|n| memory.is_off_chip(n));
            let sub = lw.lower_parts(&b.value, &label, true, off)?;
            parts.push(if sub.is_empty() {
                PlanNode::leaf(TemplateKind::SequentialCtrl, &label, Some(lw.id(&b.value)))
            } else {
                Lowering::group(TemplateKind::SequentialCtrl, &label, sub)
            });
        }
        children.push(Lowering::group(TemplateKind::ParallelCtrl, "level", parts));
    }
    Ok((PlanNode::ctrl(TemplateKind::SequentialCtrl, "program", None, children), lw.pipelines))
}
