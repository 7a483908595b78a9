//! A loaded program together with the facts every analysis stage needs.

use std::collections::BTreeSet;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::frontend::ast::{visit_exprs, ExprKind, Program, Stmt, StmtKind, VarId};
use crate::frontend::icfa::{EdgeId, Icfa, Loc, Op};
use crate::frontend::{self, FrontendError};

#[derive(Debug, Clone)]
pub struct Model {
    pub prog: Program,
    pub icfa: Icfa,
    /// SCC index per function over the call + create graph.
    pub scc: Vec<usize>,
    /// Function sits on a call/create cycle.
    pub recursive: Vec<bool>,
    /// Function-pointer variables whose value can change after binding:
    /// assigned in their own function, or address-taken anywhere.
    pub dirty_fp: BTreeSet<VarId>,
    /// Intra-function edges per function.
    pub intra_edges: Vec<Vec<EdgeId>>,
    /// Inter-function edges leaving each function.
    pub inter_out: Vec<Vec<EdgeId>>,
}

impl Model {
    pub fn load(src: &str) -> Result<Model, FrontendError> {
        let (prog, icfa) = frontend::load(src)?;
        Ok(Model::new(prog, icfa))
    }

    pub fn new(prog: Program, icfa: Icfa) -> Model {
        let n = prog.functions.len();
        let mut g = DiGraph::<u32, ()>::new();
        let nodes: Vec<_> = (0..n as u32).map(|i| g.add_node(i)).collect();
        let mut self_loop = vec![false; n];
        for e in &icfa.edges {
            let real = match &e.op {
                Op::FuncEntry { .. } => true,
                // a create naming a function directly reaches only that function
                Op::ThreadEntry { thr, func, .. } => !matches!(thr.kind, ExprKind::Func(g) if g != *func),
                _ => false,
            };
            if real {
                let (a, b) = (icfa.func_of(e.src) as usize, icfa.func_of(e.tgt) as usize);
                g.update_edge(nodes[a], nodes[b], ());
                if a == b {
                    self_loop[a] = true;
                }
            }
        }
        let mut scc = vec![0; n];
        let mut recursive = vec![false; n];
        for (i, comp) in tarjan_scc(&g).into_iter().enumerate() {
            for node in &comp {
                let f = g[*node] as usize;
                scc[f] = i;
                recursive[f] = comp.len() > 1 || self_loop[f];
            }
        }
        let mut dirty_fp = BTreeSet::new();
        for f in &prog.functions {
            visit_exprs(&f.body, &mut |e| {
                e.walk(&mut |sub| {
                    if let ExprKind::AddrOf(inner) = &sub.kind {
                        if let ExprKind::Var(v) = inner.kind {
                            if prog.var(v).ty.is_fn() {
                                dirty_fp.insert(v);
                            }
                        }
                    }
                })
            });
            collect_assigned_fps(&prog, &f.body, &mut dirty_fp);
        }
        let mut intra_edges = vec![Vec::new(); n];
        let mut inter_out = vec![Vec::new(); n];
        for (i, e) in icfa.edges.iter().enumerate() {
            let f = icfa.func_of(e.src) as usize;
            if e.op.is_inter() {
                inter_out[f].push(i as EdgeId);
            } else {
                intra_edges[f].push(i as EdgeId);
            }
        }
        Model { prog, icfa, scc, recursive, dirty_fp, intra_edges, inter_out }
    }

    pub fn func_of(&self, l: Loc) -> u32 {
        self.icfa.func_of(l)
    }

    pub fn same_scc(&self, f: u32, g: u32) -> bool {
        self.scc[f as usize] == self.scc[g as usize]
    }
}

fn collect_assigned_fps(prog: &Program, stmts: &[Stmt], out: &mut BTreeSet<VarId>) {
    for s in stmts {
        match &s.kind {
            StmtKind::Assign(l, _) => {
                if let ExprKind::Var(v) = l.kind {
                    if prog.var(v).ty.is_fn() {
                        out.insert(v);
                    }
                }
            }
            StmtKind::Call { lhs: Some(v), .. } if prog.var(*v).ty.is_fn() => {
                out.insert(*v);
            }
            StmtKind::If(_, a, b) => {
                collect_assigned_fps(prog, a, out);
                collect_assigned_fps(prog, b, out);
            }
            StmtKind::While(_, b) => collect_assigned_fps(prog, b, out),
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recursion_detected() {
        let m = Model::load(
            "int f(int a) { int r; if (a) { r = f(a - 1); } return 0; } \
             void g() { } int main() { int r; r = f(2); g(); return 0; }",
        )
        .unwrap();
        let f = m.prog.func_by_name("f").unwrap() as usize;
        let g = m.prog.func_by_name("g").unwrap() as usize;
        assert!(m.recursive[f]);
        assert!(!m.recursive[g]);
        assert!(!m.recursive[m.prog.entry as usize]);
    }

    #[test]
    fn assigned_fp_is_dirty() {
        let m = Model::load("void h() { } void k(fn() -> void p) { p = h; } int main() { k(h); return 0; }").unwrap();
        assert_eq!(m.dirty_fp.len(), 1);
    }
}
