//! Interprocedural control-flow automaton.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::ast::*;
use super::check::NO_ENTRY;
use super::FrontendError;

pub type Loc = u32;
pub type EdgeId = u32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Op {
    Assign(Expr, Expr),
    Guard(Expr),
    Lock(Expr),
    Unlock(Expr),
    /// The creating thread's own step over a create statement.
    Create { tid: Expr, thr: Expr, arg: Expr },
    /// The joining thread's own step over a join statement.
    Join(Expr),
    FuncEntry { args: Vec<Expr>, params: Vec<VarId>, callee: FuncId },
    FuncExit { ret: Option<Expr>, lhs: Option<VarId>, call_site: Loc },
    ThreadEntry { thr: Expr, arg: Expr, par: Option<VarId>, func: FuncId },
    ThreadExit { create_site: Loc },
    ThreadJoin { tid: Expr, ret_var: Option<VarId>, join_site: Loc },
    Skip,
}

impl Op {
    pub fn is_inter(&self) -> bool {
        matches!(
            self,
            Op::FuncEntry { .. } | Op::FuncExit { .. } | Op::ThreadEntry { .. } | Op::ThreadExit { .. } | Op::ThreadJoin { .. }
        )
    }

    pub fn is_entry(&self) -> bool {
        matches!(self, Op::FuncEntry { .. } | Op::ThreadEntry { .. })
    }

    pub fn is_exit(&self) -> bool {
        matches!(self, Op::FuncExit { .. } | Op::ThreadExit { .. } | Op::ThreadJoin { .. })
    }

    pub fn is_thread_edge(&self) -> bool {
        matches!(self, Op::ThreadEntry { .. } | Op::ThreadExit { .. } | Op::ThreadJoin { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub src: Loc,
    pub tgt: Loc,
    pub op: Op,
    pub line: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FuncLocs {
    pub entry: Loc,
    pub exit: Loc,
}

#[derive(Clone, Debug)]
pub struct Icfa {
    pub loc_func: Vec<FuncId>,
    pub loc_line: Vec<u32>,
    pub edges: Vec<Edge>,
    pub out: Vec<Vec<EdgeId>>,
    pub inc: Vec<Vec<EdgeId>>,
    pub funcs: Vec<FuncLocs>,
    pub entry: FuncId,
    /// call site -> (callee, return location)
    pub call_sites: BTreeMap<Loc, (FuncId, Loc)>,
    /// create site -> location after the create
    pub create_sites: BTreeMap<Loc, Loc>,
    /// join site -> location after the join
    pub join_sites: BTreeMap<Loc, Loc>,
    pub loop_heads: BTreeSet<Loc>,
    /// Functions that are targets of some thread_entry edge.
    pub thread_funcs: BTreeSet<FuncId>,
    pub dead_functions: Vec<FuncId>,
    pub warnings: Vec<String>,
}

impl Icfa {
    pub fn num_locs(&self) -> usize {
        self.loc_func.len()
    }

    pub fn func_of(&self, l: Loc) -> FuncId {
        self.loc_func[l as usize]
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e as usize]
    }

    pub fn entry_loc(&self, f: FuncId) -> Loc {
        self.funcs[f as usize].entry
    }

    pub fn exit_loc(&self, f: FuncId) -> Loc {
        self.funcs[f as usize].exit
    }

    pub fn main_entry(&self) -> Loc {
        self.entry_loc(self.entry)
    }

    pub fn is_create_site(&self, l: Loc) -> bool {
        self.create_sites.contains_key(&l)
    }

    pub fn is_call_site(&self, l: Loc) -> bool {
        self.call_sites.contains_key(&l)
    }

    pub fn edges_of(&self, f: FuncId) -> impl Iterator<Item = EdgeId> + '_ {
        (0..self.edges.len() as EdgeId).filter(move |e| {
            let ed = self.edge(*e);
            !ed.op.is_inter() && self.func_of(ed.src) == f
        })
    }

    /// Upper bound on the length of any place.
    pub fn place_bound(&self) -> usize {
        self.funcs.len() + self.create_sites.len() + 1
    }
}

struct Builder<'a> {
    prog: &'a Program,
    icfa: Icfa,
    cur_func: FuncId,
    creates: Vec<(Loc, Loc, Expr, Expr, u32)>,
    joins: Vec<(Loc, Loc, Expr, u32)>,
    calls: Vec<(Loc, Loc, FuncId, Option<VarId>, u32)>,
}

impl<'a> Builder<'a> {
    fn new_loc(&mut self, line: u32) -> Loc {
        self.icfa.loc_func.push(self.cur_func);
        self.icfa.loc_line.push(line);
        (self.icfa.loc_func.len() - 1) as Loc
    }

    fn add_edge(&mut self, src: Loc, tgt: Loc, op: Op, line: u32) {
        let id = self.icfa.edges.len() as EdgeId;
        self.icfa.edges.push(Edge { src, tgt, op, line });
        let n = self.icfa.loc_func.len();
        self.icfa.out.resize(n, Vec::new());
        self.icfa.inc.resize(n, Vec::new());
        self.icfa.out[src as usize].push(id);
        self.icfa.inc[tgt as usize].push(id);
    }

    fn touch(&mut self, l: Loc, line: u32) {
        // a location's line is that of the first statement leaving it
        if self.icfa.loc_line[l as usize] == 0 {
            self.icfa.loc_line[l as usize] = line;
        }
    }

    /// Returns the fall-through location, or None if control cannot fall through.
    fn lower(&mut self, stmts: &[Stmt], mut cur: Loc) -> Option<Loc> {
        for s in stmts {
            let line = s.line;
            self.touch(cur, line);
            match &s.kind {
                StmtKind::Assign(l, r) => {
                    let n = self.new_loc(0);
                    self.add_edge(cur, n, Op::Assign(l.clone(), r.clone()), line);
                    cur = n;
                }
                StmtKind::Lock(e) | StmtKind::Unlock(e) => {
                    let n = self.new_loc(0);
                    let op = if matches!(s.kind, StmtKind::Lock(_)) { Op::Lock(e.clone()) } else { Op::Unlock(e.clone()) };
                    self.add_edge(cur, n, op, line);
                    cur = n;
                }
                StmtKind::Skip => {
                    let n = self.new_loc(0);
                    self.add_edge(cur, n, Op::Skip, line);
                    cur = n;
                }
                StmtKind::GotoEnd | StmtKind::Return(_) => {
                    let exit = self.icfa.exit_loc(self.cur_func);
                    self.add_edge(cur, exit, Op::Skip, line);
                    return None;
                }
                StmtKind::Call { lhs, callee, args } => {
                    let Callee::Direct(g) = callee else {
                        panic!("function-pointer call survived preprocessing");
                    };
                    let n = self.new_loc(0);
                    let params = self.prog.func(*g).params.clone();
                    let entry = self.icfa.entry_loc(*g);
                    self.add_edge(cur, entry, Op::FuncEntry { args: args.clone(), params, callee: *g }, line);
                    self.calls.push((cur, n, *g, *lhs, line));
                    self.icfa.call_sites.insert(cur, (*g, n));
                    cur = n;
                }
                StmtKind::Create { tid, thr, arg } => {
                    let n = self.new_loc(0);
                    self.add_edge(cur, n, Op::Create { tid: tid.clone(), thr: thr.clone(), arg: arg.clone() }, line);
                    self.creates.push((cur, n, thr.clone(), arg.clone(), line));
                    self.icfa.create_sites.insert(cur, n);
                    cur = n;
                }
                StmtKind::Join(e) => {
                    let n = self.new_loc(0);
                    self.add_edge(cur, n, Op::Join(e.clone()), line);
                    self.joins.push((cur, n, e.clone(), line));
                    self.icfa.join_sites.insert(cur, n);
                    cur = n;
                }
                StmtKind::If(c, a, b) => {
                    let la = self.new_loc(0);
                    let lb = self.new_loc(0);
                    self.add_edge(cur, la, Op::Guard(c.clone()), line);
                    self.add_edge(cur, lb, Op::Guard(negate(c)), line);
                    let ea = self.lower(a, la);
                    let eb = self.lower(b, lb);
                    if ea.is_none() && eb.is_none() {
                        return None;
                    }
                    let j = self.new_loc(0);
                    for e in [ea, eb].into_iter().flatten() {
                        self.add_edge(e, j, Op::Skip, line);
                    }
                    cur = j;
                }
                StmtKind::While(c, body) => {
                    let head = cur;
                    self.icfa.loop_heads.insert(head);
                    let lb = self.new_loc(0);
                    let after = self.new_loc(0);
                    self.add_edge(head, lb, Op::Guard(c.clone()), line);
                    self.add_edge(head, after, Op::Guard(negate(c)), line);
                    if let Some(e) = self.lower(body, lb) {
                        self.add_edge(e, head, Op::Skip, line);
                    }
                    cur = after;
                }
            }
        }
        Some(cur)
    }
}

fn negate(c: &Expr) -> Expr {
    Expr::new(ExprKind::Unary(UnOp::Not, Box::new(c.clone())), Type::Int)
}

/// Candidate thread functions for a create with the given function expression.
pub fn thread_candidates(prog: &Program, taken: &[bool], thr: &Expr) -> Vec<FuncId> {
    prog.functions
        .iter()
        .filter(|g| taken[g.id as usize] && g.id != prog.entry && g.params.len() <= 1 && g.signature(&prog.vars) == thr.ty)
        .map(|g| g.id)
        .collect()
}

pub fn build_icfa(prog: &Program) -> Result<Icfa, FrontendError> {
    if prog.entry == NO_ENTRY {
        return Err(FrontendError::MissingMain);
    }
    let mut b = Builder {
        prog,
        icfa: Icfa {
            loc_func: Vec::new(),
            loc_line: Vec::new(),
            edges: Vec::new(),
            out: Vec::new(),
            inc: Vec::new(),
            funcs: Vec::new(),
            entry: prog.entry,
            call_sites: BTreeMap::new(),
            create_sites: BTreeMap::new(),
            join_sites: BTreeMap::new(),
            loop_heads: BTreeSet::new(),
            thread_funcs: BTreeSet::new(),
            dead_functions: Vec::new(),
            warnings: prog.warnings.clone(),
        },
        cur_func: 0,
        creates: Vec::new(),
        joins: Vec::new(),
        calls: Vec::new(),
    };
    for f in &prog.functions {
        b.cur_func = f.id;
        let entry = b.new_loc(f.line);
        let exit = b.new_loc(f.line);
        b.icfa.funcs.push(FuncLocs { entry, exit });
    }
    for f in &prog.functions {
        debug_assert!(f.single_exit, "single_exit must run before build_icfa");
        b.cur_func = f.id;
        let entry = b.icfa.entry_loc(f.id);
        // the entry takes the line of the first statement, if any
        b.icfa.loc_line[entry as usize] = 0;
        let end = b.lower(&f.body, entry);
        b.touch(entry, f.line);
        if let Some(end) = end {
            let exit = b.icfa.exit_loc(f.id);
            let line = b.icfa.inc.get(end as usize).into_iter().flatten().map(|e| b.icfa.edges[*e as usize].line).max().unwrap_or(f.line);
            b.touch(end, line);
            b.add_edge(end, exit, Op::Skip, line);
        }
    }
    let ret_expr = |g: FuncId| {
        let gf = prog.func(g);
        gf.ret_var.map(|v| Expr::var(v, gf.ret.clone()))
    };
    for (site, ret_loc, g, lhs, line) in std::mem::take(&mut b.calls) {
        let exit = b.icfa.exit_loc(g);
        b.add_edge(exit, ret_loc, Op::FuncExit { ret: ret_expr(g), lhs, call_site: site }, line);
    }
    let taken = prog.address_taken();
    for (site, next, thr, arg, line) in std::mem::take(&mut b.creates) {
        let cands = thread_candidates(prog, &taken, &thr);
        if cands.is_empty() {
            b.icfa.warnings.push(format!("line {line}: create has no candidate thread functions"));
        }
        for g in cands {
            b.icfa.thread_funcs.insert(g);
            let par = prog.func(g).params.first().copied();
            let (entry, exit) = (b.icfa.entry_loc(g), b.icfa.exit_loc(g));
            b.add_edge(site, entry, Op::ThreadEntry { thr: thr.clone(), arg: arg.clone(), par, func: g }, line);
            b.add_edge(exit, next, Op::ThreadExit { create_site: site }, line);
        }
    }
    let thread_funcs: Vec<FuncId> = b.icfa.thread_funcs.iter().copied().collect();
    for (site, next, tid, line) in std::mem::take(&mut b.joins) {
        for g in &thread_funcs {
            let exit = b.icfa.exit_loc(*g);
            b.add_edge(exit, next, Op::ThreadJoin { tid: tid.clone(), ret_var: None, join_site: site }, line);
        }
    }
    let n = b.icfa.loc_func.len();
    b.icfa.out.resize(n, Vec::new());
    b.icfa.inc.resize(n, Vec::new());

    // dead functions: unreachable from main's entry
    let mut seen = vec![false; n];
    let mut q = VecDeque::from([b.icfa.main_entry()]);
    seen[b.icfa.main_entry() as usize] = true;
    while let Some(l) = q.pop_front() {
        for e in &b.icfa.out[l as usize] {
            let t = b.icfa.edges[*e as usize].tgt;
            if !seen[t as usize] {
                seen[t as usize] = true;
                q.push_back(t);
            }
        }
    }
    for f in &prog.functions {
        if !seen[b.icfa.funcs[f.id as usize].entry as usize] {
            b.icfa.dead_functions.push(f.id);
            b.icfa.warnings.push(format!("function '{}' is never called", f.name));
        }
    }
    Ok(b.icfa)
}

/// Locations reachable from main's entry over every edge kind.
pub fn reachable_locs(icfa: &Icfa) -> Vec<bool> {
    let mut seen = vec![false; icfa.num_locs()];
    let mut stack = vec![icfa.main_entry()];
    seen[icfa.main_entry() as usize] = true;
    while let Some(l) = stack.pop() {
        for e in &icfa.out[l as usize] {
            let t = icfa.edge(*e).tgt;
            if !seen[t as usize] {
                seen[t as usize] = true;
                stack.push(t);
            }
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::super::load;
    use super::*;

    #[test]
    fn missing_main() {
        let p = super::super::single_exit(&super::super::parse("void f() { }").unwrap());
        assert_eq!(build_icfa(&p).unwrap_err(), FrontendError::MissingMain);
    }

    #[test]
    fn no_threads_no_thread_entry() {
        let (_, icfa) = load("int x; int main() { x = 1; while (x) { x = x - 1; } return 0; }").unwrap();
        assert!(!icfa.edges.iter().any(|e| matches!(e.op, Op::ThreadEntry { .. })));
        assert_eq!(icfa.loop_heads.len(), 1);
    }

    #[test]
    fn two_callers_two_exits() {
        let src = "int g(int a) { return a; } int main() { int r; r = g(1); r = g(2); return 0; }";
        let (prog, icfa) = load(src).unwrap();
        let g = prog.func_by_name("g").unwrap();
        let exits = icfa.out[icfa.exit_loc(g) as usize]
            .iter()
            .filter(|e| matches!(icfa.edge(**e).op, Op::FuncExit { .. }))
            .count();
        assert_eq!(exits, 2);
    }

    #[test]
    fn intra_edges_stay_in_function() {
        let src = "mutex m; tid t; void w(int a) { lock(&m); unlock(&m); } int main() { create(&t, w, 1); join(t); return 0; }";
        let (_, icfa) = load(src).unwrap();
        for e in &icfa.edges {
            if !e.op.is_inter() {
                assert_eq!(icfa.func_of(e.src), icfa.func_of(e.tgt));
            }
            if let Op::FuncEntry { args, params, .. } = &e.op {
                assert_eq!(args.len(), params.len());
            }
            if let Op::ThreadEntry { .. } = e.op {
                assert!(icfa.is_create_site(e.src));
            }
        }
        assert_eq!(icfa.thread_funcs.len(), 1);
    }

    #[test]
    fn dead_function_reported() {
        let (prog, icfa) = load("void f() { } int main() { return 0; }").unwrap();
        assert_eq!(icfa.dead_functions, vec![prog.func_by_name("f").unwrap()]);
    }
}
