//! Lock-order graph, indeterminate-lock closure and cycle search.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::frontend::icfa::Op;
use crate::locksets::Locksets;
use crate::model::Model;
use crate::nonconc::{NcReason, NonConc};
use crate::places::{get_thread, render_place, render_thread, PlaceId, PlaceMap};
use crate::pointsto::{AbstractObject, PointsTo, ValueSet};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LockNode {
    Obj(AbstractObject),
    Star,
}

impl LockNode {
    pub fn render(&self, m: &Model) -> String {
        match self {
            LockNode::Obj(o) => o.render(m),
            LockNode::Star => "*".into(),
        }
    }

    /// Stands for more than one concrete lock.
    pub fn is_summary(&self, m: &Model) -> bool {
        match self {
            LockNode::Obj(o) => !o.is_unique(m),
            LockNode::Star => true,
        }
    }
}

fn nodes_of(vs: &ValueSet) -> Vec<LockNode> {
    match vs {
        ValueSet::Star => vec![LockNode::Star],
        ValueSet::Set(s) => s.iter().cloned().map(LockNode::Obj).collect(),
    }
}

/// Acquiring `to` at `place` while holding `from`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LgEdge {
    pub from: LockNode,
    pub place: PlaceId,
    pub to: LockNode,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LockGraph {
    pub edges: BTreeSet<LgEdge>,
}

impl LockGraph {
    pub fn nodes(&self) -> BTreeSet<LockNode> {
        self.edges.iter().flat_map(|e| [e.from.clone(), e.to.clone()]).collect()
    }

    /// Edges added by one lock statement: held locks crossed with the
    /// acquired ones.
    pub fn add_lock(&mut self, place: PlaceId, held: &ValueSet, acquired: &ValueSet) {
        for a in nodes_of(held) {
            for b in nodes_of(acquired) {
                self.edges.insert(LgEdge { from: a.clone(), place, to: b });
            }
        }
    }

    pub fn build(m: &Model, pm: &PlaceMap, pt: &PointsTo, ls: &Locksets) -> LockGraph {
        let mut g = LockGraph::default();
        for (pid, e) in ls.lock_places(m, pm) {
            let Op::Lock(arg) = &m.icfa.edge(e).op else { continue };
            let held = ls.may_at(pid).cloned().unwrap_or_default();
            g.add_lock(pid, &held, &pt.lock_vs(m, &pm.get(pid), arg));
        }
        g
    }

    /// Connects the predecessors of the indeterminate node to every other
    /// node, and every other node to its successors.
    /// Repeated until stable: an edge from and to the indeterminate node
    /// first spawns edges that touch it on one side only.
    pub fn closure(&self) -> LockGraph {
        let mut g = self.clone();
        loop {
            let next = g.closure_step();
            if next.edges.len() == g.edges.len() {
                return g;
            }
            g = next;
        }
    }

    fn closure_step(&self) -> LockGraph {
        let nodes = self.nodes();
        let mut out = self.edges.clone();
        for e in &self.edges {
            if e.to == LockNode::Star {
                for n in nodes.iter().filter(|n| **n != e.from && **n != LockNode::Star) {
                    out.insert(LgEdge { from: e.from.clone(), place: e.place, to: n.clone() });
                }
            }
            if e.from == LockNode::Star {
                for n in nodes.iter().filter(|n| **n != e.to && **n != LockNode::Star) {
                    out.insert(LgEdge { from: n.clone(), place: e.place, to: e.to.clone() });
                }
            }
        }
        LockGraph { edges: out }
    }

    pub fn to_dot(&self, m: &Model, pm: &PlaceMap) -> String {
        let mut s = String::from("digraph lockgraph {\n");
        for n in self.nodes() {
            let shape = if n == LockNode::Star { "doublecircle" } else { "ellipse" };
            s.push_str(&format!("  \"{}\" [shape={shape}];\n", n.render(m)));
        }
        for e in &self.edges {
            let label = render_place(&m.prog, &m.icfa, &pm.get(e.place));
            s.push_str(&format!("  \"{}\" -> \"{}\" [label=\"{}\"];\n", e.from.render(m), e.to.render(m), label.replace('"', "'")));
        }
        s.push_str("}\n");
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cycle {
    pub edges: Vec<LgEdge>,
}

impl Cycle {
    fn normalized(mut edges: Vec<LgEdge>) -> Cycle {
        if let Some(i) = (0..edges.len()).min_by(|a, b| edges[*a].cmp(&edges[*b])) {
            edges.rotate_left(i);
        }
        Cycle { edges }
    }

    pub fn locks(&self) -> Vec<LockNode> {
        self.edges.iter().map(|e| e.from.clone()).collect()
    }
}

/// Why a cycle cannot deadlock.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PrunedBy {
    Gatelock,
    CreateJoin,
}

impl fmt::Display for PrunedBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrunedBy::Gatelock => "gatelock",
            PrunedBy::CreateJoin => "create_join",
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct CycleSearch {
    pub reported: Vec<Cycle>,
    pub pruned: Vec<(Cycle, PrunedBy)>,
    /// Enumeration hit its cap; the verdict must not claim freedom.
    pub truncated: bool,
}

pub struct SearchOpts {
    pub max_cycles: usize,
}

impl Default for SearchOpts {
    fn default() -> Self {
        SearchOpts { max_cycles: 100_000 }
    }
}

/// Both edges may execute at the same time in different threads. None means
/// concurrent; otherwise the reason they cannot be.
fn pair_blocked(m: &Model, pm: &PlaceMap, nc: &NonConc, a: PlaceId, b: PlaceId) -> Option<PrunedBy> {
    let r = nc.check(a, b)?;
    let ta = get_thread(&m.icfa, &pm.get(a));
    if ta == get_thread(&m.icfa, &pm.get(b)) && nc.multiple_thread(&ta) {
        return None;
    }
    Some(match r {
        NcReason::GateLock => PrunedBy::Gatelock,
        NcReason::SamePlace | NcReason::CreateJoin => PrunedBy::CreateJoin,
    })
}

/// First reason some pair of the cycle's edges cannot run together.
pub fn prune_reason(m: &Model, pm: &PlaceMap, nc: &NonConc, c: &Cycle) -> Option<PrunedBy> {
    let n = c.edges.len();
    if n == 1 {
        let p = c.edges[0].place;
        return pair_blocked(m, pm, nc, p, p);
    }
    for i in 0..n {
        for j in i + 1..n {
            if let Some(r) = pair_blocked(m, pm, nc, c.edges[i].place, c.edges[j].place) {
                return Some(r);
            }
        }
    }
    None
}

/// Elementary cycles of the node graph with at least two nodes.
fn node_cycles(adj: &BTreeMap<LockNode, BTreeSet<LockNode>>, cap: usize, truncated: &mut bool) -> Vec<Vec<LockNode>> {
    let nodes: Vec<LockNode> = adj.keys().cloned().collect();
    let index: BTreeMap<&LockNode, usize> = nodes.iter().enumerate().map(|(i, n)| (n, i)).collect();
    let mut out = Vec::new();
    for s in 0..nodes.len() {
        let mut path = vec![s];
        let mut on_path = vec![false; nodes.len()];
        on_path[s] = true;
        let mut stack: Vec<Vec<usize>> = vec![succ(adj, &nodes, &index, s, s)];
        while let Some(frontier) = stack.last_mut() {
            let Some(next) = frontier.pop() else {
                stack.pop();
                let v = path.pop().unwrap();
                on_path[v] = false;
                continue;
            };
            if next == s {
                if path.len() > 1 {
                    if out.len() >= cap {
                        *truncated = true;
                        return out;
                    }
                    out.push(path.iter().map(|i| nodes[*i].clone()).collect());
                }
            } else if !on_path[next] {
                on_path[next] = true;
                path.push(next);
                stack.push(succ(adj, &nodes, &index, next, s));
            }
        }
    }
    out
}

fn succ(adj: &BTreeMap<LockNode, BTreeSet<LockNode>>, nodes: &[LockNode], index: &BTreeMap<&LockNode, usize>, v: usize, start: usize) -> Vec<usize> {
    adj[&nodes[v]].iter().map(|n| index[n]).filter(|i| *i >= start).collect()
}

/// Enumerates cycles of the closed graph and filters them by concurrency.
/// Without `nc` nothing is pruned.
pub fn find_deadlocks(m: &Model, pm: &PlaceMap, g: &LockGraph, nc: Option<&NonConc>, opts: &SearchOpts) -> CycleSearch {
    let mut res = CycleSearch::default();
    let mut adj: BTreeMap<LockNode, BTreeSet<LockNode>> = BTreeMap::new();
    let mut between: BTreeMap<(LockNode, LockNode), Vec<LgEdge>> = BTreeMap::new();
    for e in &g.edges {
        adj.entry(e.from.clone()).or_default();
        adj.entry(e.to.clone()).or_default();
        if e.from != e.to {
            adj.get_mut(&e.from).unwrap().insert(e.to.clone());
        }
        between.entry((e.from.clone(), e.to.clone())).or_default().push(e.clone());
    }

    let mut candidates: Vec<Cycle> = Vec::new();
    let mut budget = opts.max_cycles;
    for nodes in node_cycles(&adj, opts.max_cycles, &mut res.truncated) {
        let k = nodes.len();
        let choices: Vec<&Vec<LgEdge>> = (0..k).map(|i| &between[&(nodes[i].clone(), nodes[(i + 1) % k].clone())]).collect();
        let mut idx = vec![0usize; k];
        loop {
            if budget == 0 {
                res.truncated = true;
                break;
            }
            budget -= 1;
            candidates.push(Cycle::normalized((0..k).map(|i| choices[i][idx[i]].clone()).collect()));
            let mut d = 0;
            while d < k {
                idx[d] += 1;
                if idx[d] < choices[d].len() {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == k {
                break;
            }
        }
    }
    // a lock node standing for several locks can deadlock with itself
    let mut loops: BTreeMap<&LockNode, Vec<&LgEdge>> = BTreeMap::new();
    for e in g.edges.iter().filter(|e| e.from == e.to && e.from.is_summary(m)) {
        loops.entry(&e.from).or_default().push(e);
    }
    for es in loops.values() {
        for (i, a) in es.iter().enumerate() {
            candidates.push(Cycle { edges: vec![(*a).clone()] });
            for b in &es[i + 1..] {
                candidates.push(Cycle::normalized(vec![(*a).clone(), (*b).clone()]));
            }
        }
    }

    let mut seen = BTreeSet::new();
    for c in candidates {
        if !seen.insert(c.edges.clone()) {
            continue;
        }
        match nc.and_then(|nc| prune_reason(m, pm, nc, &c)) {
            Some(r) => res.pruned.push((c, r)),
            None => {
                // a one-edge loop needs two instances of its thread
                if c.edges.len() == 1 && nc.is_none() {
                    let t = get_thread(&m.icfa, &pm.get(c.edges[0].place));
                    if t.is_empty() {
                        continue;
                    }
                }
                res.reported.push(c)
            }
        }
    }
    let key = |c: &Cycle| {
        let line = c.edges.iter().map(|e| m.icfa.loc_line[pm.top(e.place) as usize]).min().unwrap_or(0);
        (line, c.locks().iter().map(|n| n.render(m)).collect::<Vec<_>>())
    };
    res.reported.sort_by_key(key);
    res.pruned.sort_by_key(|(c, _)| key(c));
    res
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PlaceInfo {
    pub call_string: String,
    pub thread_id: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct CycleReport {
    pub locks: Vec<String>,
    pub places: Vec<PlaceInfo>,
    pub pruned_by: Option<PrunedBy>,
}

impl CycleReport {
    pub fn new(m: &Model, pm: &PlaceMap, c: &Cycle, pruned_by: Option<PrunedBy>) -> CycleReport {
        CycleReport {
            locks: c.locks().iter().map(|n| n.render(m)).collect(),
            places: c
                .edges
                .iter()
                .map(|e| {
                    let p = pm.get(e.place);
                    PlaceInfo {
                        call_string: render_place(&m.prog, &m.icfa, &p),
                        thread_id: render_thread(&m.prog, &m.icfa, &get_thread(&m.icfa, &p)),
                    }
                })
                .collect(),
            pruned_by,
        }
    }
}
