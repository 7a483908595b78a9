//! Context- and thread-sensitive abstract interpretation over places, in a
//! flow-sensitive and a flow-insensitive flavour.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Debug;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::frontend::ast::{Expr, ExprKind, FuncId, VarId};
use crate::frontend::icfa::{EdgeId, Loc, Op};
use crate::model::Model;
use crate::places::{Place, PlaceId, PlaceMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FpVal {
    Func(FuncId),
    /// Joined from two different functions; matches anything, like an absent key.
    Conflict,
    Dirty,
}

/// Absent keys mean "no binding".
pub type FpMap = BTreeMap<VarId, FpVal>;

pub fn join_fp(a: &FpMap, b: &FpMap) -> FpMap {
    let mut out = FpMap::new();
    for k in a.keys().chain(b.keys()) {
        let v = match (a.get(k), b.get(k)) {
            (Some(FpVal::Dirty), _) | (_, Some(FpVal::Dirty)) => FpVal::Dirty,
            (Some(x), None) | (None, Some(x)) => *x,
            (Some(x), Some(y)) if x == y => *x,
            _ => FpVal::Conflict,
        };
        out.insert(*k, v);
    }
    out
}

/// A client analysis plugged into the solvers.
pub trait Client {
    type State: Clone + PartialEq + Debug;

    fn bottom(&self) -> Self::State;

    /// State at main's entry place.
    fn init(&self) -> Self::State {
        self.bottom()
    }

    fn join(&self, a: &Self::State, b: &Self::State) -> Self::State;

    /// `p` is the place whose top is the edge's source.
    fn transfer(&self, m: &Model, e: EdgeId, p: &[Loc], s: &Self::State) -> Self::State;

    /// Edges the client declares irrelevant; they are neither visited nor followed.
    fn skip(&self, _e: EdgeId) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SolveError {
    #[error("fixpoint iteration diverged after {0} worklist pops")]
    Diverged(usize),
}

#[derive(Debug, Clone)]
pub struct SolveOpts {
    pub max_pops: usize,
    /// Pop in a seeded random order instead of FIFO.
    pub shuffle: Option<u64>,
}

impl Default for SolveOpts {
    fn default() -> Self {
        SolveOpts { max_pops: 1_000_000, shuffle: None }
    }
}

#[derive(Debug, Clone)]
pub struct Solution<S> {
    /// Missing keys are bottom.
    pub states: BTreeMap<PlaceId, (FpMap, S)>,
    pub pops: usize,
    pub edge_visits: usize,
}

impl<S> Solution<S> {
    pub fn get(&self, p: PlaceId) -> Option<&S> {
        self.states.get(&p).map(|(_, s)| s)
    }
}

/// Successor place of `p` along edge `e`. None when the edge cannot be taken
/// from this place (returns to a different call or create site).
pub fn next_place(m: &Model, e: EdgeId, p: &[Loc]) -> Option<Place> {
    let icfa = &m.icfa;
    let edge = icfa.edge(e);
    let n = p.len();
    debug_assert_eq!(p[n - 1], edge.src);
    let site = match &edge.op {
        Op::FuncEntry { .. } | Op::ThreadEntry { .. } => return Some(entry_place(m, p, edge.tgt)),
        Op::FuncExit { call_site, .. } => *call_site,
        Op::ThreadExit { create_site } => *create_site,
        Op::ThreadJoin { join_site, .. } => {
            // only joins in the function that created the thread
            if n >= 2 && icfa.func_of(*join_site) == icfa.func_of(p[n - 2]) && icfa.is_create_site(p[n - 2]) {
                let mut q = p[..n - 2].to_vec();
                q.push(edge.tgt);
                return Some(q);
            }
            return None;
        }
        _ => {
            let mut q = p.to_vec();
            q[n - 1] = edge.tgt;
            return Some(q);
        }
    };
    if n >= 2 && p[n - 2] == site {
        let mut q = p[..n - 2].to_vec();
        q.push(edge.tgt);
        return Some(q);
    }
    // a collapsed recursive context returns to a site inside the cycle
    let callee = icfa.func_of(edge.src);
    if m.recursive[callee as usize] && m.same_scc(callee, icfa.func_of(site)) {
        let mut q = p[..n - 1].to_vec();
        q.push(edge.tgt);
        return Some(q);
    }
    None
}

fn entry_place(m: &Model, p: &[Loc], tgt: Loc) -> Place {
    let f = m.icfa.func_of(tgt);
    let q = match (1..p.len()).find(|i| m.icfa.func_of(p[*i]) == f) {
        Some(i) => {
            let mut q = p[..i].to_vec();
            q.push(tgt);
            q
        }
        None => {
            let mut q = p.to_vec();
            q.push(tgt);
            q
        }
    };
    assert!(q.len() <= m.icfa.place_bound(), "place length bound exceeded");
    q
}

fn bind_params(m: &Model, fpm: &FpMap, args: &[&Expr], params: &[VarId]) -> FpMap {
    let mut out = FpMap::new();
    for (a, par) in args.iter().zip(params) {
        if !m.prog.var(*par).ty.is_fn() {
            continue;
        }
        if m.dirty_fp.contains(par) {
            out.insert(*par, FpVal::Dirty);
            continue;
        }
        match a.kind {
            ExprKind::Func(f) => {
                out.insert(*par, FpVal::Func(f));
            }
            ExprKind::Var(v) => {
                if let Some(x) = fpm.get(&v) {
                    out.insert(*par, *x);
                }
            }
            _ => {}
        }
    }
    out
}

pub fn match_fp(fpm: &FpMap, thr: &Expr, f: FuncId) -> bool {
    match thr.kind {
        ExprKind::Func(g) => g == f,
        ExprKind::Var(v) => match fpm.get(&v) {
            None | Some(FpVal::Dirty) | Some(FpVal::Conflict) => true,
            Some(FpVal::Func(g)) => *g == f,
        },
        _ => true,
    }
}

/// Framework transfer; None is the framework bottom.
pub fn transfer_fs<C: Client>(m: &Model, c: &C, e: EdgeId, p: &[Loc], s: &(FpMap, C::State)) -> Option<(FpMap, C::State)> {
    let (fpm, cs) = s;
    let fpm2 = match &m.icfa.edge(e).op {
        Op::FuncEntry { args, params, .. } => {
            let args: Vec<&Expr> = args.iter().collect();
            bind_params(m, fpm, &args, params)
        }
        Op::ThreadEntry { thr, arg, par, func } => {
            if !match_fp(fpm, thr, *func) {
                return None;
            }
            match par {
                Some(par) => bind_params(m, fpm, &[arg], &[*par]),
                None => FpMap::new(),
            }
        }
        Op::FuncExit { .. } | Op::ThreadExit { .. } | Op::ThreadJoin { .. } => FpMap::new(),
        _ => fpm.clone(),
    };
    Some((fpm2, c.transfer(m, e, p, cs)))
}

fn join_state<C: Client>(c: &C, a: &(FpMap, C::State), b: &(FpMap, C::State)) -> (FpMap, C::State) {
    (join_fp(&a.0, &b.0), c.join(&a.1, &b.1))
}

struct Worklist {
    q: VecDeque<PlaceId>,
    queued: Vec<bool>,
    rng: Option<ChaCha8Rng>,
}

impl Worklist {
    fn new(shuffle: Option<u64>) -> Worklist {
        Worklist { q: VecDeque::new(), queued: Vec::new(), rng: shuffle.map(ChaCha8Rng::seed_from_u64) }
    }

    fn push(&mut self, p: PlaceId) {
        let i = p as usize;
        if self.queued.len() <= i {
            self.queued.resize(i + 1, false);
        }
        if !self.queued[i] {
            self.queued[i] = true;
            self.q.push_back(p);
        }
    }

    fn pop(&mut self) -> Option<PlaceId> {
        let p = match &mut self.rng {
            Some(rng) if !self.q.is_empty() => {
                let i = rng.gen_range(0..self.q.len());
                self.q.swap_remove_back(i)
            }
            _ => self.q.pop_front(),
        }?;
        self.queued[p as usize] = false;
        Some(p)
    }
}

/// Joins `new` into the state map; true if the entry changed.
fn accumulate<C: Client>(c: &C, states: &mut BTreeMap<PlaceId, (FpMap, C::State)>, q: PlaceId, new: (FpMap, C::State)) -> bool {
    match states.get_mut(&q) {
        None => {
            states.insert(q, new);
            true
        }
        Some(old) => {
            let j = join_state(c, old, &new);
            if &j != old {
                *old = j;
                true
            } else {
                false
            }
        }
    }
}

/// Flow-sensitive least fixpoint, one state per place.
pub fn solve_fs<C: Client>(m: &Model, pm: &mut PlaceMap, c: &C, opts: &SolveOpts) -> Result<Solution<C::State>, SolveError> {
    let start = pm.intern(&[m.icfa.main_entry()]);
    let mut states = BTreeMap::new();
    states.insert(start, (FpMap::new(), c.init()));
    let mut wl = Worklist::new(opts.shuffle);
    wl.push(start);
    let (mut pops, mut visits) = (0, 0);
    while let Some(pid) = wl.pop() {
        pops += 1;
        if pops > opts.max_pops {
            return Err(SolveError::Diverged(opts.max_pops));
        }
        let p = pm.get(pid);
        let s = states[&pid].clone();
        for &e in &m.icfa.out[*p.last().unwrap() as usize] {
            if c.skip(e) {
                continue;
            }
            let Some(q) = next_place(m, e, &p) else { continue };
            visits += 1;
            let Some(ns) = transfer_fs(m, c, e, &p, &s) else { continue };
            let qid = pm.intern(&q);
            if accumulate(c, &mut states, qid, ns) {
                wl.push(qid);
            }
        }
    }
    Ok(Solution { states, pops, edge_visits: visits })
}

/// Replaces the top of a place by its function's entry location.
pub fn fi_place(m: &Model, p: &[Loc]) -> Place {
    let mut q = p.to_vec();
    let n = q.len();
    q[n - 1] = m.icfa.entry_loc(m.icfa.func_of(p[n - 1]));
    q
}

/// Flow-insensitive least fixpoint: one state per (context, function), keyed
/// by the place whose top is the function's entry.
pub fn solve_fi<C: Client>(m: &Model, pm: &mut PlaceMap, c: &C, opts: &SolveOpts) -> Result<Solution<C::State>, SolveError> {
    let start = pm.intern(&[m.icfa.main_entry()]);
    let mut states = BTreeMap::new();
    states.insert(start, (FpMap::new(), c.init()));
    let mut wl = Worklist::new(opts.shuffle);
    wl.push(start);
    let (mut pops, mut visits) = (0, 0);
    while let Some(pid) = wl.pop() {
        pops += 1;
        if pops > opts.max_pops {
            return Err(SolveError::Diverged(opts.max_pops));
        }
        let pl = pm.get(pid);
        let f = m.icfa.func_of(*pl.last().unwrap());
        let mut at = pl.clone();
        let n = at.len();
        // all intra edges of the function, to a local fixpoint
        let mut s = states[&pid].clone();
        loop {
            let mut changed = false;
            for &e in &m.intra_edges[f as usize] {
                if c.skip(e) {
                    continue;
                }
                visits += 1;
                at[n - 1] = m.icfa.edge(e).src;
                if let Some(t) = transfer_fs(m, c, e, &at, &s) {
                    let j = join_state(c, &s, &t);
                    if j != s {
                        s = j;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        states.insert(pid, s.clone());
        for &e in &m.inter_out[f as usize] {
            if c.skip(e) {
                continue;
            }
            at[n - 1] = m.icfa.edge(e).src;
            let Some(q) = next_place(m, e, &at) else { continue };
            visits += 1;
            let Some(ns) = transfer_fs(m, c, e, &at, &s) else { continue };
            let qid = pm.intern(&fi_place(m, &q));
            if accumulate(c, &mut states, qid, ns) {
                wl.push(qid);
            }
        }
    }
    Ok(Solution { states, pops, edge_visits: visits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::places::get_thread;
    use proptest::prelude::*;

    /// Boolean reachability.
    struct Reach;
    impl Client for Reach {
        type State = bool;
        fn bottom(&self) -> bool {
            false
        }
        fn init(&self) -> bool {
            true
        }
        fn join(&self, a: &bool, b: &bool) -> bool {
            *a || *b
        }
        fn transfer(&self, _: &Model, _: EdgeId, _: &[Loc], s: &bool) -> bool {
            *s
        }
    }

    const INVERSIONS: &str = include_str!("../fixtures/two_inversions.mc");

    #[test]
    fn reachability_covers_all_live_locations() {
        let m = Model::load(INVERSIONS).unwrap();
        let mut pm = PlaceMap::new();
        let sol = solve_fs(&m, &mut pm, &Reach, &SolveOpts::default()).unwrap();
        let mut tops = vec![false; m.icfa.num_locs()];
        for (pid, (_, r)) in &sol.states {
            assert!(*r);
            tops[pm.top(*pid) as usize] = true;
        }
        let func1 = m.prog.func_by_name("func1").unwrap();
        for l in 0..m.icfa.num_locs() {
            if !m.icfa.dead_functions.contains(&m.icfa.func_of(l as Loc)) {
                assert!(tops[l], "location {l} unreached");
            }
        }
        assert!(tops[m.icfa.entry_loc(func1) as usize]);
    }

    #[test]
    fn distinct_threads_have_distinct_keys() {
        let m = Model::load(INVERSIONS).unwrap();
        let mut pm = PlaceMap::new();
        let sol = solve_fs(&m, &mut pm, &Reach, &SolveOpts::default()).unwrap();
        let threads: std::collections::BTreeSet<_> = sol.states.keys().map(|p| get_thread(&m.icfa, &pm.get(*p))).collect();
        assert_eq!(threads.len(), 2);
    }

    #[test]
    fn intra_and_entry_places() {
        let m = Model::load(INVERSIONS).unwrap();
        let main = m.prog.entry;
        let e = m.intra_edges[main as usize][0];
        let src = m.icfa.edge(e).src;
        assert_eq!(next_place(&m, e, &[7, src]), Some(vec![7, m.icfa.edge(e).tgt]));
        let (site, (callee, _)) = m.icfa.call_sites.iter().find(|(_, (g, _))| m.prog.func(*g).name == "func2").unwrap();
        let entry = m.icfa.out[*site as usize].iter().copied().find(|e| m.icfa.edge(*e).op.is_entry()).unwrap();
        assert_eq!(next_place(&m, entry, &[*site]), Some(vec![*site, m.icfa.entry_loc(*callee)]));
    }

    #[test]
    fn recursion_keeps_places_bounded() {
        let src = "mutex a; int f(int n) { int r; lock(&a); unlock(&a); if (n) { r = f(n - 1); } return 0; } \
                   int main() { int r; r = f(3); return 0; }";
        let m = Model::load(src).unwrap();
        let mut pm = PlaceMap::new();
        let sol = solve_fs(&m, &mut pm, &Reach, &SolveOpts::default()).unwrap();
        for pid in sol.states.keys() {
            assert!(pm.get(*pid).len() <= 2);
        }
        // the return to main is reached
        let main_exit = m.icfa.exit_loc(m.prog.entry);
        assert!(sol.states.keys().any(|p| pm.get(*p) == vec![main_exit]));
    }

    #[test]
    fn fp_thread_entry_filtered() {
        let src = "tid t; int x; void a() { x = 1; } void b() { x = 2; } \
                   void spawn(fn() -> void f) { create(&t, f, 0); join(t); } \
                   int main() { spawn(a); return 0; }";
        let m = Model::load(src).unwrap();
        let mut pm = PlaceMap::new();
        let sol = solve_fs(&m, &mut pm, &Reach, &SolveOpts::default()).unwrap();
        let a = m.icfa.entry_loc(m.prog.func_by_name("a").unwrap());
        let b = m.icfa.entry_loc(m.prog.func_by_name("b").unwrap());
        assert!(sol.states.keys().any(|p| pm.top(*p) == a));
        assert!(!sol.states.keys().any(|p| pm.top(*p) == b));
    }

    #[test]
    fn exit_clears_fp_map() {
        let src = "void h() { } void k(fn() -> void p) { } int main() { k(h); return 0; }";
        let m = Model::load(src).unwrap();
        let k = m.prog.func_by_name("k").unwrap();
        let exit_e = m.inter_out[k as usize][0];
        let mut fpm = FpMap::new();
        fpm.insert(m.prog.func(k).params[0], FpVal::Func(0));
        let site = *m.icfa.call_sites.keys().next().unwrap();
        let out = transfer_fs(&m, &Reach, exit_e, &[site, m.icfa.exit_loc(k)], &(fpm, true)).unwrap();
        assert!(out.0.is_empty());
    }

    #[test]
    fn join_fp_cases() {
        let a: FpMap = [(1, FpVal::Func(3))].into();
        let d: FpMap = [(1, FpVal::Dirty)].into();
        let o: FpMap = [(1, FpVal::Func(4))].into();
        assert_eq!(join_fp(&a, &d), d);
        assert_eq!(join_fp(&a, &FpMap::new()), a);
        assert_eq!(join_fp(&a, &o), [(1, FpVal::Conflict)].into());
    }

    #[test]
    fn fi_matches_fs_on_straight_line() {
        // a counting client: the set of edges seen
        struct Seen;
        impl Client for Seen {
            type State = std::collections::BTreeSet<EdgeId>;
            fn bottom(&self) -> Self::State {
                Default::default()
            }
            fn join(&self, a: &Self::State, b: &Self::State) -> Self::State {
                a.union(b).copied().collect()
            }
            fn transfer(&self, _: &Model, e: EdgeId, _: &[Loc], s: &Self::State) -> Self::State {
                let mut s = s.clone();
                s.insert(e);
                s
            }
        }
        let m = Model::load("int x; int y; int main() { x = 1; y = 2; x = y; return 0; }").unwrap();
        let mut pm = PlaceMap::new();
        let fs = solve_fs(&m, &mut pm, &Seen, &SolveOpts::default()).unwrap();
        let fi = solve_fi(&m, &mut pm, &Seen, &SolveOpts::default()).unwrap();
        let exit = pm.lookup(&[m.icfa.exit_loc(m.prog.entry)]).unwrap();
        let entry = pm.lookup(&[m.icfa.main_entry()]).unwrap();
        assert_eq!(fs.get(exit), fi.get(entry));
        assert_eq!(fi.states.len(), 1);
    }

    fn arb_fp() -> impl Strategy<Value = FpMap> {
        proptest::collection::btree_map(0u32..4, prop_oneof![Just(FpVal::Dirty), Just(FpVal::Conflict), (0u32..3).prop_map(FpVal::Func)], 0..4)
    }

    proptest! {
        #[test]
        fn join_fp_commutative(a in arb_fp(), b in arb_fp()) {
            prop_assert_eq!(join_fp(&a, &b), join_fp(&b, &a));
        }

        #[test]
        fn join_fp_associative(a in arb_fp(), b in arb_fp(), c in arb_fp()) {
            prop_assert_eq!(join_fp(&join_fp(&a, &b), &c), join_fp(&a, &join_fp(&b, &c)));
        }

        #[test]
        fn join_fp_idempotent(a in arb_fp()) {
            prop_assert_eq!(join_fp(&a, &a), a);
        }
    }
}
