//! Non-concurrency of two places: common must-held locks, or create/join
//! ordering found by a search over the control-flow automaton.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use petgraph::algo::dominators::{simple_fast, Dominators};
use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::Serialize;

use crate::frontend::ast::{ExprKind, FuncId, Type};
use crate::frontend::icfa::{Loc, Op};
use crate::locksets::{Locksets, MustSet};
use crate::model::Model;
use crate::places::{common_prefix, get_thread, Place, PlaceId, PlaceMap};
use crate::pointsto::{AbstractObject, PointsTo, ValueSet};

/// Per-function graph: intra edges plus a call-site to return-site summary.
struct FuncGraph {
    g: DiGraph<Loc, ()>,
    node: HashMap<Loc, NodeIndex>,
}

/// Lazily computed reachability, dominator and loop facts.
pub struct GraphFacts<'a> {
    m: &'a Model,
    in_loop: Vec<bool>,
    reach: RefCell<HashMap<Loc, Vec<bool>>>,
    funcs: RefCell<HashMap<FuncId, std::rc::Rc<FuncGraph>>>,
    doms: RefCell<HashMap<(Loc, bool), std::rc::Rc<(Dominators<NodeIndex>, Option<NodeIndex>, FuncGraphKey)>>>,
}

type FuncGraphKey = HashMap<Loc, NodeIndex>;

impl<'a> GraphFacts<'a> {
    pub fn new(m: &'a Model) -> GraphFacts<'a> {
        let mut facts = GraphFacts {
            m,
            in_loop: vec![false; m.icfa.num_locs()],
            reach: RefCell::default(),
            funcs: RefCell::default(),
            doms: RefCell::default(),
        };
        for f in 0..m.prog.functions.len() as FuncId {
            let fg = facts.func_graph(f);
            for comp in tarjan_scc(&fg.g) {
                let cyclic = comp.len() > 1 || fg.g.contains_edge(comp[0], comp[0]);
                for n in comp {
                    let l = fg.g[n];
                    facts.in_loop[l as usize] = cyclic || m.recursive[f as usize];
                }
            }
        }
        facts
    }

    fn func_graph(&self, f: FuncId) -> std::rc::Rc<FuncGraph> {
        if let Some(g) = self.funcs.borrow().get(&f) {
            return g.clone();
        }
        let icfa = &self.m.icfa;
        let mut g = DiGraph::new();
        let mut node = HashMap::new();
        for l in 0..icfa.num_locs() as Loc {
            if icfa.func_of(l) == f {
                node.insert(l, g.add_node(l));
            }
        }
        for e in &self.m.intra_edges[f as usize] {
            let ed = icfa.edge(*e);
            g.add_edge(node[&ed.src], node[&ed.tgt], ());
        }
        for (site, (_, ret)) in &icfa.call_sites {
            if icfa.func_of(*site) == f {
                g.add_edge(node[site], node[ret], ());
            }
        }
        let fg = std::rc::Rc::new(FuncGraph { g, node });
        self.funcs.borrow_mut().insert(f, fg.clone());
        fg
    }

    /// Location can execute more than once within one activation of its
    /// function's context: sits on an intra-function cycle, or the function
    /// is recursive.
    pub fn in_loop(&self, l: Loc) -> bool {
        self.in_loop[l as usize]
    }

    /// Path over every automaton edge except thread entries.
    pub fn has_path(&self, a: Loc, b: Loc) -> bool {
        if a == b {
            return true;
        }
        if let Some(r) = self.reach.borrow().get(&a) {
            return r[b as usize];
        }
        let icfa = &self.m.icfa;
        let mut seen = vec![false; icfa.num_locs()];
        let mut stack = vec![a];
        seen[a as usize] = true;
        while let Some(l) = stack.pop() {
            for e in &icfa.out[l as usize] {
                let ed = icfa.edge(*e);
                if matches!(ed.op, Op::ThreadEntry { .. }) || seen[ed.tgt as usize] {
                    continue;
                }
                seen[ed.tgt as usize] = true;
                stack.push(ed.tgt);
            }
        }
        let r = seen[b as usize];
        self.reach.borrow_mut().insert(a, seen);
        r
    }

    /// Every path from `from` to `to` inside their function passes `mid`,
    /// strictly after `from` and strictly before `to`. With `from == to` the
    /// paths are the cycles back to `from`. Vacuously true without paths.
    pub fn on_all_paths(&self, from: Loc, mid: Loc, to: Loc) -> bool {
        if mid == from || mid == to {
            return false;
        }
        let f = self.m.icfa.func_of(from);
        if self.m.icfa.func_of(mid) != f || self.m.icfa.func_of(to) != f {
            return false;
        }
        let cyclic = from == to;
        let key = (from, cyclic);
        let d = match self.doms.borrow().get(&key) {
            Some(d) => Some(d.clone()),
            None => None,
        };
        let d = match d {
            Some(d) => d,
            None => {
                let fg = self.func_graph(f);
                let mut g = fg.g.clone();
                let sink = if cyclic {
                    let s = g.add_node(from);
                    let root = fg.node[&from];
                    let preds: Vec<_> = fg.g.neighbors_directed(root, petgraph::Incoming).collect();
                    for p in preds {
                        if let Some(e) = g.find_edge(p, root) {
                            g.remove_edge(e);
                        }
                        g.add_edge(p, s, ());
                    }
                    Some(s)
                } else {
                    None
                };
                let dom = simple_fast(&g, fg.node[&from]);
                let d = std::rc::Rc::new((dom, sink, fg.node.clone()));
                self.doms.borrow_mut().insert(key, d.clone());
                d
            }
        };
        let (dom, sink, nodes) = &*d;
        let target = sink.unwrap_or(nodes[&to]);
        match dom.dominators(target) {
            None => true,
            Some(mut it) => it.any(|n| n == nodes[&mid]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NcReason {
    SamePlace,
    GateLock,
    CreateJoin,
}

pub struct NonConc<'a> {
    m: &'a Model,
    pm: &'a PlaceMap,
    pt: &'a PointsTo,
    ls: &'a Locksets,
    pub facts: GraphFacts<'a>,
    memo: RefCell<HashMap<(PlaceId, PlaceId), Option<NcReason>>>,
    /// Number of statements that may write each thread-id object.
    tid_writers: BTreeMap<AbstractObject, usize>,
    /// Some thread-id write went through an indeterminate pointer.
    tid_smashed: bool,
}

impl<'a> NonConc<'a> {
    pub fn new(m: &'a Model, pm: &'a PlaceMap, pt: &'a PointsTo, ls: &'a Locksets) -> NonConc<'a> {
        let mut writers: BTreeMap<Loc, ValueSet> = BTreeMap::new();
        for pid in ls.may.states.keys() {
            let p = pm.get(*pid);
            let top = *p.last().unwrap();
            for e in &m.icfa.out[top as usize] {
                let vs = match &m.icfa.edge(*e).op {
                    Op::Create { tid, .. } => pt.vs(m, &p, tid),
                    Op::Assign(lhs, _) if lhs.ty == Type::Tid => pt.addr(m, &p, lhs),
                    _ => continue,
                };
                writers.entry(top).or_default().union_with(&vs);
            }
        }
        let mut tid_writers = BTreeMap::new();
        let mut tid_smashed = false;
        for vs in writers.values() {
            match vs {
                ValueSet::Star => tid_smashed = true,
                ValueSet::Set(s) => {
                    for o in s {
                        *tid_writers.entry(o.clone()).or_insert(0) += 1;
                    }
                }
            }
        }
        NonConc { m, pm, pt, ls, facts: GraphFacts::new(m), memo: RefCell::default(), tid_writers, tid_smashed }
    }

    pub fn non_concurrent(&self, a: PlaceId, b: PlaceId) -> bool {
        self.check(a, b).is_some()
    }

    /// Why the two places cannot run concurrently, or None when unknown.
    pub fn check(&self, a: PlaceId, b: PlaceId) -> Option<NcReason> {
        let key = (a.min(b), a.max(b));
        if let Some(r) = self.memo.borrow().get(&key) {
            return *r;
        }
        let r = self.compute(key.0, key.1);
        self.memo.borrow_mut().insert(key, r);
        r
    }

    pub fn check_uncached(&self, a: PlaceId, b: PlaceId) -> Option<NcReason> {
        self.compute(a, b)
    }

    pub fn multiple_thread(&self, t: &[Loc]) -> bool {
        t.iter().any(|l| self.facts.in_loop(*l))
    }

    fn unique_must(&self, p: PlaceId) -> BTreeSet<AbstractObject> {
        match self.ls.must_at(p) {
            MustSet::Set(s) => s.into_iter().filter(|o| o.is_unique(self.m)).collect(),
            MustSet::Universe => BTreeSet::new(),
        }
    }

    fn compute(&self, a: PlaceId, b: PlaceId) -> Option<NcReason> {
        let icfa = &self.m.icfa;
        let (p1, p2) = (self.pm.get(a), self.pm.get(b));
        if p1 == p2 {
            return (!self.multiple_thread(&get_thread(icfa, &p1))).then_some(NcReason::SamePlace);
        }
        if !self.unique_must(a).is_disjoint(&self.unique_must(b)) {
            return Some(NcReason::GateLock);
        }
        let recursive = |p: &Place| p.iter().any(|l| self.m.recursive[icfa.func_of(*l) as usize]);
        if recursive(&p1) || recursive(&p2) {
            return None;
        }
        let i = common_prefix(&p1, &p2);
        if i >= p1.len() || i >= p2.len() {
            return None;
        }
        let (l1, l2) = (p1[i], p2[i]);
        if icfa.func_of(l1) != icfa.func_of(l2) {
            return None;
        }
        // both places may sit in different instances of a shared ancestor thread
        if (0..i).any(|j| icfa.is_create_site(p1[j]) && self.multiple_thread(&p1[..=j])) {
            return None;
        }
        let r1 = !self.facts.has_path(l1, l2) || self.unwind(i, &p1, l1, l2);
        let r2 = !self.facts.has_path(l2, l1) || self.unwind(i, &p2, l2, l1);
        (r1 && r2).then_some(NcReason::CreateJoin)
    }

    fn unwind(&self, i: usize, p: &[Loc], l1: Loc, l2: Loc) -> bool {
        let icfa = &self.m.icfa;
        let mut p = p.to_vec();
        let mut joined = true;
        let mut pc: Place = Vec::new();
        while p.len() > i + 1 {
            let l = *p.last().unwrap();
            let f = icfa.func_of(l);
            let create = icfa.is_create_site(l);
            if !create && joined {
                p.pop();
                continue;
            }
            if create {
                if !joined {
                    return false;
                }
                pc = p.clone();
            }
            p.pop();
            joined = self.find(&pc, &p, l, icfa.exit_loc(f));
            if self.facts.in_loop(l) && !(joined && self.find(&pc, &p, l, l)) {
                return false;
            }
        }
        if icfa.is_create_site(l1) {
            if !joined {
                return false;
            }
            joined = false;
            pc = p.clone();
        }
        if !joined {
            p.pop();
            joined = self.find(&pc, &p, l1, l2);
            // the frame can be re-entered later: the thread must not outlive it
            if joined && p.iter().any(|l| self.facts.in_loop(*l)) {
                joined = self.find(&pc, &p, l1, icfa.exit_loc(icfa.func_of(l1)));
            }
            if self.facts.in_loop(l1) {
                return joined && self.find(&pc, &p, l1, l1);
            }
        }
        joined
    }

    fn find(&self, pc: &[Loc], p: &[Loc], l1: Loc, l2: Loc) -> bool {
        self.find_in(pc, p, l1, l2, false, &mut BTreeSet::new())
    }

    /// `whole` searches a callee body, where `l1` itself is executed too.
    fn find_in(&self, pc: &[Loc], p: &[Loc], l1: Loc, l2: Loc, whole: bool, seen: &mut BTreeSet<FuncId>) -> bool {
        let icfa = &self.m.icfa;
        let f = icfa.func_of(l1);
        let on_all = |mid: Loc| (whole && mid == l1 && mid != l2) || self.facts.on_all_paths(l1, mid, l2);
        for (jl, _) in icfa.join_sites.iter().filter(|(jl, _)| icfa.func_of(**jl) == f) {
            if on_all(*jl) {
                let mut at = p.to_vec();
                at.push(*jl);
                if self.matches(pc, &at) {
                    return true;
                }
            }
        }
        for (site, (callee, _)) in icfa.call_sites.iter().filter(|(s, _)| icfa.func_of(**s) == f) {
            if on_all(*site) && seen.insert(*callee) {
                let mut at = p.to_vec();
                at.push(*site);
                if self.find_in(pc, &at, icfa.entry_loc(*callee), icfa.exit_loc(*callee), true, seen) {
                    return true;
                }
            }
        }
        false
    }

    /// The join at `jp` waits for the thread started at `pc`: both name one
    /// thread-id object that no other statement writes.
    fn matches(&self, pc: &[Loc], jp: &[Loc]) -> bool {
        let icfa = &self.m.icfa;
        let op_at = |l: Loc| icfa.out[l as usize].iter().map(|e| &icfa.edge(*e).op);
        let Some(ctid) = op_at(*pc.last().unwrap()).find_map(|o| match o {
            Op::Create { tid, .. } => Some(tid),
            _ => None,
        }) else {
            return false;
        };
        let Some(jtid) = op_at(*jp.last().unwrap()).find_map(|o| match o {
            Op::Join(t) => Some(t),
            _ => None,
        }) else {
            return false;
        };
        if self.tid_smashed {
            return false;
        }
        let cv = self.pt.vs(self.m, pc, ctid);
        let jv = self.pt.addr(self.m, jp, jtid);
        let (Some(o), Some(o2)) = (cv.singleton(), jv.singleton()) else { return false };
        if o != o2 || self.tid_writers.get(o) != Some(&1) {
            return false;
        }
        if o.is_unique(self.m) {
            return true;
        }
        // a local of the creating frame, named directly at both statements
        let same_frame = pc.len() == jp.len() && pc[..pc.len() - 1] == jp[..jp.len() - 1];
        match (&ctid.kind, &jtid.kind) {
            (ExprKind::AddrOf(inner), ExprKind::Var(v)) => {
                same_frame && matches!(inner.kind, ExprKind::Var(w) if w == *v) && !self.m.recursive[icfa.func_of(pc[pc.len() - 1]) as usize]
            }
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framework::SolveOpts;

    struct Fx {
        m: Model,
        pm: PlaceMap,
        pt: PointsTo,
        ls: Locksets,
    }

    fn fx(src: &str) -> Fx {
        let m = Model::load(src).unwrap();
        let mut pm = PlaceMap::new();
        let pt = PointsTo::analyze(&m, &mut pm, None, &SolveOpts::default()).unwrap();
        let ls = Locksets::analyze(&m, &mut pm, &pt, &SolveOpts::default()).unwrap();
        Fx { m, pm, pt, ls }
    }

    impl Fx {
        fn nc(&self) -> NonConc<'_> {
            NonConc::new(&self.m, &self.pm, &self.pt, &self.ls)
        }

        /// Reached place whose top has an outgoing edge on `line` in `func`.
        fn place(&self, func: &str, line: u32) -> PlaceId {
            let f = self.m.prog.func_by_name(func).unwrap();
            *self
                .ls
                .may
                .states
                .keys()
                .find(|p| {
                    let top = self.pm.top(**p);
                    self.m.icfa.func_of(top) == f
                        && self.m.icfa.out[top as usize].iter().any(|e| self.m.icfa.edge(*e).line == line)
                })
                .unwrap_or_else(|| panic!("no place at {func}:{line}"))
        }
    }

    #[test]
    fn inversions_gate_lock_and_join() {
        let f = fx(include_str!("../fixtures/two_inversions.mc"));
        let nc = f.nc();
        let main_m2 = f.place("main", 15);
        let thr_m3 = f.place("thread", 33);
        assert_eq!(nc.check(main_m2, thr_m3), Some(NcReason::GateLock));
        let f2_m4 = f.place("func2", 48);
        let thr_m5 = f.place("thread", 39);
        assert_eq!(nc.check(f2_m4, thr_m5), Some(NcReason::CreateJoin));
        assert_eq!(nc.check(thr_m5, f2_m4), Some(NcReason::CreateJoin));
        assert!(!nc.multiple_thread(&get_thread(&f.m.icfa, &f.pm.get(thr_m5))));
    }

    #[test]
    fn nested_join_orders_sibling_threads() {
        let f = fx(include_str!("../fixtures/nested_join.mc"));
        let nc = f.nc();
        let x1 = f.place("thread2", 22);
        let x2 = f.place("thread3", 27);
        assert_eq!(nc.check(x1, x2), Some(NcReason::CreateJoin));
    }

    #[test]
    fn unjoined_thread_is_concurrent() {
        let f = fx("int x; int w() { x = 1; return 0; }\nint main() {\n tid t;\n create(&t, w, 0);\n x = 2;\n join(t);\n return 0;\n}");
        let nc = f.nc();
        assert!(!nc.non_concurrent(f.place("w", 1), f.place("main", 5)));
    }

    #[test]
    fn branch_join_is_not_enough() {
        let src = "int x; int c; int w() { x = 1; return 0; }\n\
                   int main() {\n tid t;\n create(&t, w, 0);\n if (c) {\n join(t);\n }\n x = 2;\n return 0;\n}";
        let f = fx(src);
        let nc = f.nc();
        assert!(!nc.non_concurrent(f.place("w", 1), f.place("main", 8)));
    }

    #[test]
    fn join_in_helper_counts() {
        let src = "int x; tid t; int w() { x = 1; return 0; }\nvoid wait() {\n join(t);\n}\n\
                   int main() {\n create(&t, w, 0);\n wait();\n x = 2;\n return 0;\n}";
        let f = fx(src);
        let nc = f.nc();
        assert_eq!(nc.check(f.place("w", 1), f.place("main", 8)), Some(NcReason::CreateJoin));
    }

    #[test]
    fn loop_create_is_multiple() {
        let src = "int x; int n; int w() { x = 1; return 0; }\n\
                   int main() {\n tid t;\n while (n) {\n create(&t, w, 0);\n n = n - 1;\n }\n join(t);\n x = 2;\n return 0;\n}";
        let f = fx(src);
        let nc = f.nc();
        let wp = f.place("w", 1);
        assert!(nc.multiple_thread(&get_thread(&f.m.icfa, &f.pm.get(wp))));
        assert!(!nc.non_concurrent(wp, wp));
        assert!(!nc.non_concurrent(wp, f.place("main", 9)));
    }

    #[test]
    fn overwritten_tid_does_not_match() {
        let src = "int x; tid t; int w() { x = 1; return 0; }\n\
                   int main() {\n create(&t, w, 0);\n create(&t, w, 0);\n join(t);\n x = 2;\n return 0;\n}";
        let f = fx(src);
        let nc = f.nc();
        let mut any_concurrent = false;
        for p in f.ls.may.states.keys() {
            if f.m.icfa.func_of(f.pm.top(*p)) == f.m.prog.func_by_name("w").unwrap() {
                any_concurrent |= !nc.non_concurrent(*p, f.place("main", 6));
            }
        }
        assert!(any_concurrent);
    }

    #[test]
    fn symmetric_and_memo_transparent() {
        let f = fx(include_str!("../fixtures/two_inversions.mc"));
        let nc = f.nc();
        let ids: Vec<_> = f.ls.may.states.keys().copied().collect();
        for a in &ids {
            for b in &ids {
                assert_eq!(nc.check(*a, *b), nc.check(*b, *a));
                assert_eq!(nc.check(*a, *b), nc.check_uncached(*a.min(b), *a.max(b)));
            }
        }
    }

    #[test]
    fn on_all_paths_basics() {
        let m = Model::load("int c; int main() {\n c = 1;\n if (c) {\n c = 2;\n }\n c = 3;\n return 0;\n}").unwrap();
        let facts = GraphFacts::new(&m);
        let at = |line: u32| m.icfa.edges.iter().find(|e| e.line == line && matches!(e.op, Op::Assign(..))).unwrap().src;
        assert!(facts.on_all_paths(at(2), at(6), m.icfa.exit_loc(m.prog.entry)));
        assert!(!facts.on_all_paths(at(2), at(4), at(6)));
        assert!(facts.has_path(at(2), at(6)));
        assert!(!facts.has_path(at(6), at(2)));
    }
}
