//! Flow-insensitive, context- and thread-sensitive points-to analysis.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::framework::{fi_place, solve_fi, Client, SolveError, SolveOpts, Solution};
use crate::frontend::ast::{visit_exprs, Expr, ExprKind, Program, StmtKind, Type, VarId, VarKind};
use crate::frontend::icfa::{EdgeId, Loc, Op};
use crate::model::Model;
use crate::places::PlaceMap;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum AbstractObject {
    Global(VarId),
    Local(VarId),
    AllocSite(Loc),
    Field(Box<AbstractObject>, String),
    ArrayCell(Box<AbstractObject>),
}

impl AbstractObject {
    pub fn of_var(prog: &Program, v: VarId) -> AbstractObject {
        match prog.var(v).kind {
            VarKind::Global => AbstractObject::Global(v),
            _ => AbstractObject::Local(v),
        }
    }

    /// Denotes at most one concrete object in any execution.
    pub fn is_unique(&self, m: &Model) -> bool {
        match self {
            AbstractObject::Global(_) => true,
            AbstractObject::Local(v) => match m.prog.var(*v).kind {
                VarKind::Local(f) | VarKind::Param(f) => f == m.prog.entry && !m.recursive[f as usize],
                VarKind::Global => true,
            },
            AbstractObject::Field(b, _) => b.is_unique(m),
            AbstractObject::AllocSite(_) | AbstractObject::ArrayCell(_) => false,
        }
    }

    pub fn render(&self, m: &Model) -> String {
        match self {
            AbstractObject::Global(v) | AbstractObject::Local(v) => m.prog.var(*v).name.clone(),
            AbstractObject::AllocSite(l) => format!("heap@{}", m.icfa.loc_line[*l as usize]),
            AbstractObject::Field(b, f) => format!("{}->{f}", b.render(m)),
            AbstractObject::ArrayCell(b) => format!("{}[*]", b.render(m)),
        }
    }
}

/// A finite object set, or the indeterminate set.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ValueSet {
    Set(BTreeSet<AbstractObject>),
    Star,
}

impl Default for ValueSet {
    fn default() -> Self {
        ValueSet::empty()
    }
}

impl ValueSet {
    pub fn empty() -> ValueSet {
        ValueSet::Set(BTreeSet::new())
    }

    pub fn single(o: AbstractObject) -> ValueSet {
        ValueSet::Set([o].into())
    }

    pub fn is_star(&self) -> bool {
        matches!(self, ValueSet::Star)
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, ValueSet::Set(s) if s.is_empty())
    }

    pub fn objects(&self) -> Option<&BTreeSet<AbstractObject>> {
        match self {
            ValueSet::Set(s) => Some(s),
            ValueSet::Star => None,
        }
    }

    /// The only element of a concrete singleton.
    pub fn singleton(&self) -> Option<&AbstractObject> {
        match self {
            ValueSet::Set(s) if s.len() == 1 => s.iter().next(),
            _ => None,
        }
    }

    pub fn union(&self, o: &ValueSet) -> ValueSet {
        match (self, o) {
            (ValueSet::Set(a), ValueSet::Set(b)) => ValueSet::Set(a.union(b).cloned().collect()),
            _ => ValueSet::Star,
        }
    }

    pub fn union_with(&mut self, o: &ValueSet) {
        match (&mut *self, o) {
            (ValueSet::Set(a), ValueSet::Set(b)) => a.extend(b.iter().cloned()),
            _ => *self = ValueSet::Star,
        }
    }

    pub fn map(&self, f: impl Fn(&AbstractObject) -> AbstractObject) -> ValueSet {
        match self {
            ValueSet::Set(s) => ValueSet::Set(s.iter().map(f).collect()),
            ValueSet::Star => ValueSet::Star,
        }
    }

    pub fn render(&self, m: &Model) -> String {
        match self {
            ValueSet::Star => "{*}".into(),
            ValueSet::Set(s) => format!("{{{}}}", s.iter().map(|o| o.render(m)).collect::<Vec<_>>().join(", ")),
        }
    }
}

impl fmt::Display for ValueSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueSet::Star => write!(f, "{{*}}"),
            ValueSet::Set(s) => write!(f, "{s:?}"),
        }
    }
}

/// Contents of every pointer-holding object. Once a store goes through an
/// indeterminate pointer, every read yields the indeterminate set.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct PtState {
    pub cells: BTreeMap<AbstractObject, ValueSet>,
    pub smashed: bool,
}

impl PtState {
    pub fn join(&self, o: &PtState) -> PtState {
        let mut out = self.clone();
        out.smashed |= o.smashed;
        for (k, v) in &o.cells {
            out.cells.entry(k.clone()).or_default().union_with(v);
        }
        out
    }

    fn read(&self, o: &AbstractObject) -> ValueSet {
        if self.smashed {
            return ValueSet::Star;
        }
        self.cells.get(o).cloned().unwrap_or_default()
    }

    fn write_weak(&mut self, targets: &ValueSet, val: &ValueSet) {
        match targets {
            ValueSet::Star => self.smashed = true,
            ValueSet::Set(ts) => {
                if val.is_empty() {
                    return;
                }
                for t in ts {
                    self.cells.entry(t.clone()).or_default().union_with(val);
                }
            }
        }
    }

    fn drop_vars(&mut self, vars: &[VarId]) {
        for v in vars {
            self.cells.retain(|k, _| !rooted_at(k, *v));
        }
    }
}

fn rooted_at(o: &AbstractObject, v: VarId) -> bool {
    match o {
        AbstractObject::Local(w) => *w == v,
        AbstractObject::Field(b, _) | AbstractObject::ArrayCell(b) => rooted_at(b, v),
        _ => false,
    }
}

/// Expression evaluation against a points-to state.
pub struct Eval<'a> {
    pub m: &'a Model,
    pub s: &'a PtState,
    pub unwritten: &'a BTreeSet<(String, String)>,
    /// Location of the evaluating edge, for allocation-site naming.
    pub at: Loc,
}

impl<'a> Eval<'a> {
    /// Objects an lvalue may denote.
    pub fn addr(&self, e: &Expr) -> ValueSet {
        match &e.kind {
            ExprKind::Var(v) => ValueSet::single(AbstractObject::of_var(&self.m.prog, *v)),
            ExprKind::Deref(q) => self.eval(q),
            ExprKind::Arrow(q, f) => self.eval(q).map(|o| AbstractObject::Field(Box::new(o.clone()), f.clone())),
            ExprKind::Index(a, _) => self.addr(a).map(|o| AbstractObject::ArrayCell(Box::new(o.clone()))),
            _ => ValueSet::empty(),
        }
    }

    /// Objects a pointer-valued expression may point to.
    pub fn eval(&self, e: &Expr) -> ValueSet {
        match &e.kind {
            ExprKind::Int(_) | ExprKind::Func(_) | ExprKind::Unary(..) | ExprKind::Binary(..) => ValueSet::empty(),
            ExprKind::Var(_) | ExprKind::Deref(_) | ExprKind::Arrow(..) | ExprKind::Index(..) => {
                if !e.ty.is_ptr() {
                    return ValueSet::empty();
                }
                if let ExprKind::Arrow(q, f) = &e.kind {
                    if let Some(Type::Struct(sname)) = q.ty.pointee() {
                        if self.unwritten.contains(&(sname.clone(), f.clone())) {
                            return ValueSet::Star;
                        }
                    }
                }
                match self.addr(e) {
                    ValueSet::Star => ValueSet::Star,
                    ValueSet::Set(os) => {
                        let mut out = ValueSet::empty();
                        for o in &os {
                            out.union_with(&self.s.read(o));
                        }
                        out
                    }
                }
            }
            ExprKind::AddrOf(l) => self.addr(l),
            ExprKind::Malloc(_) => ValueSet::single(AbstractObject::AllocSite(self.at)),
            ExprKind::Cast(t, inner) => {
                if t.is_ptr() && inner.ty == Type::Int {
                    if matches!(inner.kind, ExprKind::Int(0)) {
                        ValueSet::empty()
                    } else {
                        ValueSet::Star
                    }
                } else if t.is_ptr() {
                    self.eval(inner)
                } else {
                    ValueSet::empty()
                }
            }
        }
    }
}

/// Pointer-typed struct fields that are never written nor address-taken.
pub fn unwritten_fields(prog: &Program) -> BTreeSet<(String, String)> {
    let mut all = BTreeSet::new();
    for s in prog.structs.values() {
        for (f, t) in &s.fields {
            if t.is_ptr() {
                all.insert((s.name.clone(), f.clone()));
            }
        }
    }
    let mut written = BTreeSet::new();
    let mut note = |e: &Expr| {
        if let ExprKind::Arrow(q, f) = &e.kind {
            if let Some(Type::Struct(s)) = q.ty.pointee() {
                written.insert((s.clone(), f.clone()));
            }
        }
    };
    for f in &prog.functions {
        walk_stmts(&f.body, &mut |k| {
            if let StmtKind::Assign(l, _) = k {
                note(l);
            }
        });
        visit_exprs(&f.body, &mut |e| {
            e.walk(&mut |sub| {
                if let ExprKind::AddrOf(inner) = &sub.kind {
                    note(inner);
                }
            })
        });
    }
    all.difference(&written).cloned().collect()
}

fn walk_stmts(stmts: &[crate::frontend::ast::Stmt], f: &mut dyn FnMut(&StmtKind)) {
    for s in stmts {
        f(&s.kind);
        match &s.kind {
            StmtKind::If(_, a, b) => {
                walk_stmts(a, f);
                walk_stmts(b, f);
            }
            StmtKind::While(_, b) => walk_stmts(b, f),
            _ => {}
        }
    }
}

pub struct PtClient<'a> {
    pub affecting: Option<&'a BTreeSet<EdgeId>>,
    pub unwritten: BTreeSet<(String, String)>,
}

impl<'a> PtClient<'a> {
    fn eval<'b>(&'b self, m: &'b Model, s: &'b PtState, at: Loc) -> Eval<'b> {
        Eval { m, s, unwritten: &self.unwritten, at }
    }
}

fn frame_vars(m: &Model, f: u32) -> Vec<VarId> {
    let func = m.prog.func(f);
    func.params.iter().chain(&func.locals).copied().collect()
}

impl<'a> Client for PtClient<'a> {
    type State = PtState;

    fn bottom(&self) -> PtState {
        PtState::default()
    }

    fn join(&self, a: &PtState, b: &PtState) -> PtState {
        a.join(b)
    }

    fn skip(&self, e: EdgeId) -> bool {
        self.affecting.map(|a| !a.contains(&e)).unwrap_or(false)
    }

    fn transfer(&self, m: &Model, e: EdgeId, _p: &[Loc], s: &PtState) -> PtState {
        let edge = m.icfa.edge(e);
        match &edge.op {
            Op::Assign(l, r) if l.ty.is_ptr() => {
                let ev = self.eval(m, s, edge.src);
                let (targets, val) = (ev.addr(l), ev.eval(r));
                let mut out = s.clone();
                out.write_weak(&targets, &val);
                out
            }
            Op::FuncEntry { args, params, .. } => {
                let ev = self.eval(m, s, edge.src);
                let vals: Vec<_> = args.iter().map(|a| ev.eval(a)).collect();
                let mut out = s.clone();
                for (par, v) in params.iter().zip(vals) {
                    bind(m, &mut out, *par, v);
                }
                out
            }
            Op::ThreadEntry { arg, par: Some(par), .. } => {
                let v = self.eval(m, s, edge.src).eval(arg);
                let mut out = s.clone();
                bind(m, &mut out, *par, v);
                out
            }
            Op::FuncExit { ret, lhs, .. } => {
                let mut out = s.clone();
                if let (Some(ret), Some(lhs)) = (ret, lhs) {
                    if m.prog.var(*lhs).ty.is_ptr() {
                        let v = self.eval(m, s, edge.src).eval(ret);
                        out.write_weak(&ValueSet::single(AbstractObject::of_var(&m.prog, *lhs)), &v);
                    }
                }
                let callee = m.icfa.func_of(edge.src);
                if !m.recursive[callee as usize] {
                    out.drop_vars(&frame_vars(m, callee));
                }
                out
            }
            Op::ThreadExit { .. } | Op::ThreadJoin { .. } => {
                let f = m.icfa.func_of(edge.src);
                let mut out = s.clone();
                if !m.recursive[f as usize] {
                    out.drop_vars(&frame_vars(m, f));
                }
                out
            }
            _ => s.clone(),
        }
    }
}

/// Parameters of a fresh activation hold exactly the argument value.
fn bind(m: &Model, s: &mut PtState, par: VarId, v: ValueSet) {
    let o = AbstractObject::of_var(&m.prog, par);
    s.drop_vars(&[par]);
    if m.prog.var(par).ty.is_ptr() && !v.is_empty() {
        s.cells.insert(o, v);
    }
}

/// Solved points-to facts plus the queries later stages use.
pub struct PointsTo {
    pub sol: Solution<PtState>,
    /// Snapshot of the place map after solving; it holds every context key.
    pub places: PlaceMap,
    pub unwritten: BTreeSet<(String, String)>,
    /// Per-function join over all contexts, for the context-insensitive ablation.
    pub merged: Option<Vec<PtState>>,
}

impl PointsTo {
    pub fn analyze(m: &Model, pm: &mut PlaceMap, affecting: Option<&BTreeSet<EdgeId>>, opts: &SolveOpts) -> Result<PointsTo, SolveError> {
        let client = PtClient { affecting, unwritten: unwritten_fields(&m.prog) };
        let sol = solve_fi(m, pm, &client, opts)?;
        Ok(PointsTo { sol, places: pm.clone(), unwritten: client.unwritten, merged: None })
    }

    /// Merges all contexts of each function (test-only ablation).
    pub fn make_context_insensitive(&mut self, m: &Model) {
        let mut merged = vec![PtState::default(); m.prog.functions.len()];
        for (pid, (_, s)) in &self.sol.states {
            let f = m.icfa.func_of(self.places.top(*pid)) as usize;
            merged[f] = merged[f].join(s);
        }
        self.merged = Some(merged);
    }

    pub fn state_at<'a>(&'a self, m: &Model, p: &[Loc]) -> Cow<'a, PtState> {
        let top = *p.last().unwrap();
        if let Some(merged) = &self.merged {
            return Cow::Borrowed(&merged[m.icfa.func_of(top) as usize]);
        }
        match self.places.lookup(&fi_place(m, p)).and_then(|id| self.sol.get(id)) {
            Some(s) => Cow::Borrowed(s),
            None => Cow::Owned(PtState::default()),
        }
    }

    /// Value set of `e` evaluated at place `p`.
    pub fn vs(&self, m: &Model, p: &[Loc], e: &Expr) -> ValueSet {
        let s = self.state_at(m, p);
        Eval { m, s: &s, unwritten: &self.unwritten, at: *p.last().unwrap() }.eval(e)
    }

    /// Objects the lvalue `e` may denote at place `p`.
    pub fn addr(&self, m: &Model, p: &[Loc], e: &Expr) -> ValueSet {
        let s = self.state_at(m, p);
        Eval { m, s: &s, unwritten: &self.unwritten, at: *p.last().unwrap() }.addr(e)
    }

    /// Like `vs`, but never empty: nothing known means anything.
    pub fn lock_vs(&self, m: &Model, p: &[Loc], e: &Expr) -> ValueSet {
        let v = self.vs(m, p, e);
        if v.is_empty() {
            ValueSet::Star
        } else {
            v
        }
    }

    pub fn edge_visits(&self) -> usize {
        self.sol.edge_visits
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::icfa::Op;

    fn analyze(src: &str) -> (Model, PlaceMap, PointsTo) {
        let m = Model::load(src).unwrap();
        let mut pm = PlaceMap::new();
        let pt = PointsTo::analyze(&m, &mut pm, None, &SolveOpts::default()).unwrap();
        (m, pm, pt)
    }

    /// (place, lock argument value set) for every reachable lock edge.
    fn lock_sets(m: &Model, pm: &PlaceMap, pt: &PointsTo) -> Vec<(Vec<Loc>, ValueSet)> {
        let mut out = Vec::new();
        for pid in pt.sol.states.keys() {
            let p = pm.get(*pid);
            let f = m.icfa.func_of(*p.last().unwrap());
            for e in &m.intra_edges[f as usize] {
                if let Op::Lock(a) = &m.icfa.edge(*e).op {
                    let mut q = p.clone();
                    *q.last_mut().unwrap() = m.icfa.edge(*e).src;
                    out.push((q.clone(), pt.lock_vs(m, &q, a)));
                }
            }
        }
        out
    }

    fn names(m: &Model, v: &ValueSet) -> Vec<String> {
        v.objects().unwrap().iter().map(|o| o.render(m)).collect()
    }

    #[test]
    fn inversions_lock_args_are_globals() {
        let (m, pm, pt) = analyze(include_str!("../fixtures/two_inversions.mc"));
        let mut all = BTreeSet::new();
        for (_, v) in lock_sets(&m, &pm, &pt) {
            let n = names(&m, &v);
            assert_eq!(n.len(), 1);
            all.insert(n[0].clone());
        }
        assert_eq!(all.into_iter().collect::<Vec<_>>(), ["m1", "m2", "m3", "m4", "m5"]);
    }

    #[test]
    fn copy_chain() {
        let (m, _, pt) = analyze("int x; int* q; int* p; int main() { q = &x; p = q; return 0; }");
        let p = m.prog.var_by_name("p").unwrap();
        let at = [m.icfa.main_entry()];
        let v = pt.vs(&m, &at, &Expr::var(p, Type::ptr(Type::Int)));
        assert_eq!(names(&m, &v), ["x"]);
    }

    #[test]
    fn store_through_star_smashes() {
        let src = "int x; int* q; int** pp; int* r; int main() { pp = (int**) 5; *pp = &x; q = &x; r = q; return 0; }";
        let (m, _, pt) = analyze(src);
        let r = m.prog.var_by_name("r").unwrap();
        let v = pt.vs(&m, &[m.icfa.main_entry()], &Expr::var(r, Type::ptr(Type::Int)));
        assert!(v.is_star());
    }

    #[test]
    fn integer_expression_is_empty() {
        let (m, _, pt) = analyze("int x; int main() { x = 1; return 0; }");
        let x = m.prog.var_by_name("x").unwrap();
        assert!(pt.vs(&m, &[m.icfa.main_entry()], &Expr::var(x, Type::Int)).is_empty());
    }

    #[test]
    fn heap_lock_through_int_is_star() {
        let (m, pm, pt) = analyze(include_str!("../fixtures/heap_lock.mc"));
        assert!(lock_sets(&m, &pm, &pt).iter().any(|(_, v)| v.is_star()));
    }

    #[test]
    fn wrapper_contexts_are_separate() {
        let (m, pm, pt) = analyze(include_str!("../fixtures/wrapper.mc"));
        let w = m.prog.func_by_name("acquire").unwrap();
        let par = m.prog.func(w).params[0];
        let e = Expr::var(par, Type::ptr(Type::Mutex));
        let mut seen = Vec::new();
        for pid in pt.sol.states.keys() {
            let p = pm.get(*pid);
            if m.icfa.func_of(*p.last().unwrap()) == w {
                seen.push(names(&m, &pt.vs(&m, &p, &e)));
            }
        }
        seen.sort();
        assert!(seen.len() >= 2);
        for s in &seen {
            assert_eq!(s.len(), 1);
        }
        assert!(seen.iter().any(|s| s[0] == "a") && seen.iter().any(|s| s[0] == "b"));
    }

    #[test]
    fn value_set_union_absorbs() {
        let a = ValueSet::single(AbstractObject::Global(0));
        assert!(a.union(&ValueSet::Star).is_star());
        assert_eq!(a.union(&ValueSet::empty()), a);
    }
}
