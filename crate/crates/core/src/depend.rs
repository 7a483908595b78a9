//! Dependency analysis: which edges can influence the expressions used by
//! lock, create and join statements.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::frontend::ast::{Expr, ExprKind, FuncId, VarId};
use crate::frontend::icfa::{EdgeId, Op};
use crate::model::Model;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sym {
    Var(VarId),
    Field(String),
}

pub fn symbols(e: &Expr) -> BTreeSet<Sym> {
    let mut out = BTreeSet::new();
    e.walk(&mut |sub| match &sub.kind {
        ExprKind::Var(v) => {
            out.insert(Sym::Var(*v));
        }
        ExprKind::Arrow(_, f) => {
            out.insert(Sym::Field(f.clone()));
        }
        _ => {}
    });
    out
}

/// Lock and unlock edges, plus the create and join statements' own edges.
pub fn seed_edges(m: &Model) -> BTreeSet<EdgeId> {
    (0..m.icfa.edges.len() as EdgeId)
        .filter(|e| matches!(m.icfa.edge(*e).op, Op::Lock(_) | Op::Unlock(_) | Op::Create { .. } | Op::Join(_)))
        .collect()
}

fn seed_symbols(op: &Op) -> BTreeSet<Sym> {
    match op {
        Op::Lock(a) | Op::Unlock(a) | Op::Join(a) => symbols(a),
        Op::Create { tid, thr, .. } => symbols(tid).union(&symbols(thr)).cloned().collect(),
        _ => BTreeSet::new(),
    }
}

/// Symbol groups that an edge relates, and whether the edge is assignment-like
/// (eligible for A in the final pass).
fn groups_of(op: &Op) -> (Vec<BTreeSet<Sym>>, bool) {
    let var = |v: &VarId| Sym::Var(*v);
    match op {
        Op::Assign(a, b) => (vec![symbols(a).union(&symbols(b)).cloned().collect()], true),
        Op::ThreadEntry { arg, par, .. } => {
            let mut g = symbols(arg);
            g.extend(par.iter().map(var));
            (vec![g], false)
        }
        Op::FuncExit { ret, lhs, .. } => {
            let mut g = ret.as_ref().map(symbols).unwrap_or_default();
            g.extend(lhs.iter().map(var));
            (vec![g], true)
        }
        Op::ThreadJoin { tid, ret_var, .. } => {
            let mut g = symbols(tid);
            g.extend(ret_var.iter().map(var));
            (vec![g], true)
        }
        Op::FuncEntry { args, params, .. } => (
            args.iter()
                .zip(params)
                .map(|(a, p)| {
                    let mut g = symbols(a);
                    g.insert(Sym::Var(*p));
                    g
                })
                .collect(),
            false,
        ),
        _ => (Vec::new(), false),
    }
}

/// Seeds plus every assignment-like edge whose symbols reach the seed symbols.
pub fn affecting_edges(m: &Model, seeds: &BTreeSet<EdgeId>) -> BTreeSet<EdgeId> {
    let mut a = seeds.clone();
    let mut work: Vec<Sym> = seeds.iter().flat_map(|e| seed_symbols(&m.icfa.edge(*e).op)).collect();

    // number map: group -> symbols; symbol map: symbol -> groups
    let mut nm: Vec<BTreeSet<Sym>> = Vec::new();
    let mut sm: BTreeMap<Sym, Vec<usize>> = BTreeMap::new();
    for e in &m.icfa.edges {
        for g in groups_of(&e.op).0 {
            let n = nm.len();
            for s in &g {
                sm.entry(s.clone()).or_default().push(n);
            }
            nm.push(g);
        }
    }

    let mut seen_groups = vec![false; nm.len()];
    let mut seen_syms: BTreeSet<Sym> = BTreeSet::new();
    while let Some(s) = work.pop() {
        if !seen_syms.insert(s.clone()) {
            continue;
        }
        for &n in sm.get(&s).map(|v| v.as_slice()).unwrap_or(&[]) {
            if !seen_groups[n] {
                seen_groups[n] = true;
                work.extend(nm[n].iter().filter(|x| !seen_syms.contains(*x)).cloned());
            }
        }
    }

    for (i, e) in m.icfa.edges.iter().enumerate() {
        let (groups, assign_like) = groups_of(&e.op);
        if assign_like && groups.iter().any(|g| g.iter().any(|s| seen_syms.contains(s))) {
            a.insert(i as EdgeId);
        }
    }
    a
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Affecting {
    pub edges: BTreeSet<EdgeId>,
    pub functions: BTreeSet<FuncId>,
}

/// Adds the entry edges of every function that transitively contains an
/// affecting edge.
pub fn close_functions(m: &Model, a: BTreeSet<EdgeId>) -> Affecting {
    let icfa = &m.icfa;
    let mut a = a;
    let mut todo: Vec<FuncId> = a.iter().map(|e| icfa.func_of(icfa.edge(*e).src)).collect();
    let mut done = BTreeSet::new();
    while let Some(f) = todo.pop() {
        if !done.insert(f) {
            continue;
        }
        for e in &icfa.inc[icfa.entry_loc(f) as usize] {
            if icfa.edge(*e).op.is_entry() {
                a.insert(*e);
                let caller = icfa.func_of(icfa.edge(*e).src);
                if !done.contains(&caller) {
                    todo.push(caller);
                }
            }
        }
    }
    Affecting { edges: a, functions: done }
}

pub fn analyze(m: &Model) -> Affecting {
    close_functions(m, affecting_edges(m, &seed_edges(m)))
}

impl Affecting {
    /// Edges the points-to solver follows: A, plus every exit edge (so callee
    /// effects of entered contexts flow back).
    pub fn followed(&self, m: &Model) -> BTreeSet<EdgeId> {
        let mut out = self.edges.clone();
        for (i, e) in m.icfa.edges.iter().enumerate() {
            if e.op.is_exit() {
                out.insert(i as EdgeId);
            }
        }
        out
    }

    pub fn stats(&self, m: &Model) -> DepStats {
        let assigns: Vec<EdgeId> = (0..m.icfa.edges.len() as EdgeId)
            .filter(|e| matches!(m.icfa.edge(*e).op, Op::Assign(..)))
            .collect();
        DepStats {
            assignments: assigns.len(),
            significant_assignments: assigns.iter().filter(|e| self.edges.contains(e)).count(),
            functions: m.prog.functions.len(),
            significant_functions: self.functions.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DepStats {
    pub assignments: usize,
    pub significant_assignments: usize,
    pub functions: usize,
    pub significant_functions: usize,
}

impl DepStats {
    pub fn assignment_fraction(&self) -> f64 {
        if self.assignments == 0 {
            0.0
        } else {
            self.significant_assignments as f64 / self.assignments as f64
        }
    }

    pub fn function_fraction(&self) -> f64 {
        self.significant_functions as f64 / self.functions.max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assigns_in_a(m: &Model, a: &Affecting) -> Vec<String> {
        a.edges
            .iter()
            .filter_map(|e| match &m.icfa.edge(*e).op {
                Op::Assign(l, r) => Some(format!("{} = {}", m.prog.show_expr(l), m.prog.show_expr(r))),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn inversions_prunes_x_and_func1() {
        let m = Model::load(include_str!("../fixtures/two_inversions.mc")).unwrap();
        let a = analyze(&m);
        assert!(assigns_in_a(&m, &a).is_empty());
        let names: BTreeSet<_> = a.functions.iter().map(|f| m.prog.func(*f).name.as_str()).collect();
        assert_eq!(names, ["func2", "main", "thread"].into());
        let st = a.stats(&m);
        // hand count: x = 0..4 plus three synthetic return assignments
        assert_eq!(st.assignments, 8);
        assert_eq!(st.assignment_fraction(), 0.0);
        assert_eq!(st.function_fraction(), 0.75);
    }

    #[test]
    fn field_chain_is_affecting() {
        let src = "struct s { mutex* f; }; mutex x; mutex* q; mutex* p; struct s* s1; int y; \
                   int main() { s1 = malloc(struct s); q = &x; s1->f = q; p = s1->f; y = 3; lock(p); unlock(p); return 0; }";
        let m = Model::load(src).unwrap();
        let a = analyze(&m);
        let got = assigns_in_a(&m, &a);
        for want in ["q = &x", "s1->f = q", "p = s1->f", "s1 = malloc(struct s)"] {
            assert!(got.iter().any(|g| g == want), "{want} missing from {got:?}");
        }
        assert!(!got.iter().any(|g| g.starts_with("y =")));
    }

    #[test]
    fn no_assignments_gives_seeds() {
        let m = Model::load("mutex a; int main() { lock(&a); unlock(&a); return 0; }").unwrap();
        let seeds = seed_edges(&m);
        let a = affecting_edges(&m, &seeds);
        assert_eq!(a, seeds);
    }

    #[test]
    fn wrappers_included_transitively() {
        let src = "mutex a; void inner() { lock(&a); unlock(&a); } void outer() { inner(); } void other() { } \
                   int main() { outer(); other(); return 0; }";
        let m = Model::load(src).unwrap();
        let a = analyze(&m);
        let names: BTreeSet<_> = a.functions.iter().map(|f| m.prog.func(*f).name.as_str()).collect();
        assert_eq!(names, ["inner", "main", "outer"].into());
    }

    #[test]
    fn larger_seed_set_never_shrinks() {
        let m = Model::load(include_str!("../fixtures/heap_lock.mc")).unwrap();
        let all = seed_edges(&m);
        let some: BTreeSet<_> = all.iter().take(1).copied().collect();
        let small = affecting_edges(&m, &some);
        let big = affecting_edges(&m, &all);
        assert!(small.is_subset(&big));
    }
}
