//! Concrete interpreter that enumerates thread interleavings. It is the
//! ground truth the static results are checked against.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::hash::{Hash, Hasher};

use serde::Serialize;
use thiserror::Error;

use crate::framework::next_place;
use crate::lockgraph::{Cycle, LockNode};
use crate::locksets::MustSet;
use crate::pipeline::Analysis;
use crate::places::{render_place, PlaceId};
use crate::pointsto::ValueSet;
use crate::frontend::ast::{visit_exprs, BinOp, Expr, ExprKind, FuncId, Type, UnOp, VarId, VarKind};
use crate::frontend::icfa::{EdgeId, Loc, Op};
use crate::model::Model;
use crate::places::Place;
use crate::pointsto::AbstractObject;

#[derive(Clone, Debug)]
pub struct OracleOpts {
    pub max_states: usize,
    pub loop_bound: u32,
    pub int_bits: u32,
    pub max_depth: usize,
    pub max_witnesses: usize,
    /// Run thread-local steps eagerly. Off by default: it hides
    /// intermediate co-reachable places.
    pub por: bool,
}

impl Default for OracleOpts {
    fn default() -> Self {
        OracleOpts { max_states: 100_000, loop_bound: 2, int_bits: 8, max_depth: 8, max_witnesses: 8, por: false }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Block {
    Global(VarId),
    Local { thread: u32, depth: u32, var: VarId },
    Heap { thread: u32, n: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Step {
    Field(String),
    Index(i64),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Cell {
    block: Block,
    path: Vec<Step>,
}

impl Cell {
    fn with(&self, s: Step) -> Cell {
        let mut c = self.clone();
        c.path.push(s);
        c
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Value {
    Int(i64),
    Ptr(Cell),
    Func(FuncId),
    Tid(u32),
}

impl Value {
    fn truthy(&self) -> bool {
        !matches!(self, Value::Int(0))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Frame {
    func: FuncId,
    loc: Loc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Status {
    Running,
    Done,
    /// Faulted, or cut off by the loop or depth bound.
    Stuck,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Thread {
    frames: Vec<Frame>,
    status: Status,
    place: Place,
    loops: BTreeMap<Loc, u32>,
    allocs: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct State {
    threads: Vec<Thread>,
    mem: BTreeMap<Cell, Value>,
    owner: BTreeMap<Cell, u32>,
    heap_site: BTreeMap<Block, Loc>,
}

#[derive(Debug, Error)]
#[error("fault: {0}")]
struct Fault(String);

type R<T> = Result<T, Fault>;

fn fault<T>(s: impl Into<String>) -> R<T> {
    Err(Fault(s.into()))
}

/// One step of a schedule: which thread moved, over which source line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SchedStep {
    pub tid: u32,
    pub line: u32,
}

#[derive(Clone, Debug, Serialize)]
pub struct DeadlockWitness {
    /// Abstract object of every lock on the allocation-graph cycle.
    #[serde(skip)]
    pub locks: Vec<AbstractObject>,
    pub lock_names: Vec<String>,
    /// Abstract place of every thread on the cycle.
    pub places: Vec<Place>,
    pub schedule: Vec<SchedStep>,
}

/// Everything observed while exploring.
#[derive(Clone, Debug, Default)]
pub struct Exploration {
    pub states: usize,
    pub budget_exceeded: bool,
    /// (place, abstract objects of the locks its thread holds) for every
    /// live thread of every reached state.
    pub held: BTreeSet<(Place, BTreeSet<AbstractObject>)>,
    /// Pairs of places occupied at once by two distinct live threads.
    pub co_reached: HashSet<(Place, Place)>,
    /// (place, abstract object) for every executed lock statement.
    pub lock_targets: BTreeSet<(Place, AbstractObject)>,
    pub deadlocks: Vec<DeadlockWitness>,
    pub deadlock_count: usize,
    /// A thread waits on a lock it already holds.
    pub self_locks: usize,
    /// Steps whose abstract successor place did not exist.
    pub place_mismatches: usize,
    pub faults: usize,
}

impl Exploration {
    pub fn co_reachable(&self, a: &[Loc], b: &[Loc]) -> bool {
        let key = if a <= b { (a.to_vec(), b.to_vec()) } else { (b.to_vec(), a.to_vec()) };
        self.co_reached.contains(&key)
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    states: usize,
    budget_exceeded: bool,
    deadlocks: usize,
    self_locks: usize,
    faults: usize,
    witnesses: &'a [DeadlockWitness],
}

impl Exploration {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&Summary {
            states: self.states,
            budget_exceeded: self.budget_exceeded,
            deadlocks: self.deadlock_count,
            self_locks: self.self_locks,
            faults: self.faults,
            witnesses: &self.deadlocks,
        })
        .expect("summary serializes")
    }
}

fn abstract_cell(m: &Model, st: &BTreeMap<Block, Loc>, c: &Cell) -> AbstractObject {
    let mut o = match &c.block {
        Block::Global(v) | Block::Local { var: v, .. } => AbstractObject::of_var(&m.prog, *v),
        Block::Heap { .. } => AbstractObject::AllocSite(st.get(&c.block).copied().unwrap_or(0)),
    };
    for s in &c.path {
        o = match s {
            Step::Field(f) => AbstractObject::Field(Box::new(o), f.clone()),
            Step::Index(_) => AbstractObject::ArrayCell(Box::new(o)),
        };
    }
    o
}

struct Interp<'a> {
    m: &'a Model,
    opts: &'a OracleOpts,
    local_only: Vec<bool>,
}

struct Ctx<'s> {
    st: &'s mut State,
    t: u32,
    at: Loc,
}

impl<'a> Interp<'a> {
    fn wrap(&self, v: i64) -> i64 {
        let bits = self.opts.int_bits.clamp(2, 63);
        let m = 1i64 << bits;
        let r = v.rem_euclid(m);
        if r >= m / 2 {
            r - m
        } else {
            r
        }
    }

    fn var_cell(&self, cx: &Ctx, v: VarId) -> Cell {
        let block = match self.m.prog.var(v).kind {
            VarKind::Global => Block::Global(v),
            VarKind::Local(_) | VarKind::Param(_) => {
                let depth = cx.st.threads[cx.t as usize].frames.len() as u32 - 1;
                Block::Local { thread: cx.t, depth, var: v }
            }
        };
        Cell { block, path: Vec::new() }
    }

    fn read(&self, cx: &Ctx, c: &Cell) -> Value {
        cx.st.mem.get(c).cloned().unwrap_or(Value::Int(0))
    }

    fn addr(&self, cx: &mut Ctx, e: &Expr) -> R<Cell> {
        match &e.kind {
            ExprKind::Var(v) => Ok(self.var_cell(cx, *v)),
            ExprKind::Deref(q) => match self.eval(cx, q)? {
                Value::Ptr(c) => Ok(c),
                v => fault(format!("dereference of {v:?}")),
            },
            ExprKind::Arrow(q, f) => match self.eval(cx, q)? {
                Value::Ptr(c) => Ok(c.with(Step::Field(f.clone()))),
                v => fault(format!("field access through {v:?}")),
            },
            ExprKind::Index(a, i) => {
                let base = self.addr(cx, a)?;
                let Value::Int(i) = self.eval(cx, i)? else { return fault("non-integer index") };
                if let Type::Array(_, n) = &a.ty {
                    if i < 0 || i >= *n as i64 {
                        return fault("index out of bounds");
                    }
                }
                Ok(base.with(Step::Index(i)))
            }
            _ => fault("not an lvalue"),
        }
    }

    fn eval(&self, cx: &mut Ctx, e: &Expr) -> R<Value> {
        Ok(match &e.kind {
            ExprKind::Int(v) => Value::Int(self.wrap(*v)),
            ExprKind::Func(f) => Value::Func(*f),
            ExprKind::Var(_) | ExprKind::Deref(_) | ExprKind::Arrow(..) | ExprKind::Index(..) => {
                let c = self.addr(cx, e)?;
                self.read(cx, &c)
            }
            ExprKind::AddrOf(l) => Value::Ptr(self.addr(cx, l)?),
            ExprKind::Malloc(_) => {
                let th = &mut cx.st.threads[cx.t as usize];
                let block = Block::Heap { thread: cx.t, n: th.allocs };
                th.allocs += 1;
                cx.st.heap_site.insert(block.clone(), cx.at);
                Value::Ptr(Cell { block, path: Vec::new() })
            }
            ExprKind::Cast(_, inner) => self.eval(cx, inner)?,
            ExprKind::Unary(op, a) => {
                let v = self.eval(cx, a)?;
                match op {
                    UnOp::Not => Value::Int(!v.truthy() as i64),
                    UnOp::Neg => match v {
                        Value::Int(i) => Value::Int(self.wrap(-i)),
                        _ => return fault("negating a non-integer"),
                    },
                }
            }
            ExprKind::Binary(op, a, b) => {
                let (x, y) = (self.eval(cx, a)?, self.eval(cx, b)?);
                match op {
                    BinOp::Eq => Value::Int((x == y) as i64),
                    BinOp::Ne => Value::Int((x != y) as i64),
                    BinOp::And => Value::Int((x.truthy() && y.truthy()) as i64),
                    BinOp::Or => Value::Int((x.truthy() || y.truthy()) as i64),
                    _ => {
                        let (Value::Int(x), Value::Int(y)) = (x, y) else { return fault("arithmetic on a non-integer") };
                        let r = match op {
                            BinOp::Add => x + y,
                            BinOp::Sub => x - y,
                            BinOp::Mul => x * y,
                            BinOp::Div | BinOp::Mod if y == 0 => return fault("division by zero"),
                            BinOp::Div => x / y,
                            BinOp::Mod => x % y,
                            BinOp::Lt => (x < y) as i64,
                            BinOp::Le => (x <= y) as i64,
                            BinOp::Gt => (x > y) as i64,
                            BinOp::Ge => (x >= y) as i64,
                            _ => unreachable!(),
                        };
                        Value::Int(self.wrap(r))
                    }
                }
            }
        })
    }

    fn pointer(&self, cx: &mut Ctx, e: &Expr) -> R<Cell> {
        match self.eval(cx, e)? {
            Value::Ptr(c) => Ok(c),
            v => fault(format!("expected a pointer, got {v:?}")),
        }
    }

    /// Moves thread `t` along edge `e` to `tgt`, updating its abstract place.
    fn advance(&self, st: &mut State, t: u32, e: EdgeId, mismatch: &mut usize) {
        let th = &mut st.threads[t as usize];
        let tgt = self.m.icfa.edge(e).tgt;
        th.frames.last_mut().unwrap().loc = tgt;
        th.place = match next_place(self.m, e, &th.place) {
            Some(p) => p,
            None => {
                *mismatch += 1;
                let mut p = th.place.clone();
                *p.last_mut().unwrap() = tgt;
                p
            }
        };
    }

    /// Enters a loop head; false when the bound is exhausted.
    fn count_loop(&self, st: &mut State, t: u32) -> bool {
        let th = &mut st.threads[t as usize];
        let l = th.frames.last().unwrap().loc;
        if !self.m.icfa.loop_heads.contains(&l) {
            return true;
        }
        let c = th.loops.entry(l).or_insert(0);
        *c += 1;
        *c <= self.opts.loop_bound + 1
    }

    fn drop_frame(&self, st: &mut State, t: u32, depth: u32) {
        st.mem.retain(|c, _| !matches!(c.block, Block::Local { thread, depth: d, .. } if thread == t && d == depth));
    }

    /// The successor state when thread `t` can move; None when it is blocked
    /// or finished.
    fn step(&self, st: &State, t: u32, out: &mut Exploration) -> Option<(State, u32)> {
        let th = &st.threads[t as usize];
        if th.status != Status::Running {
            return None;
        }
        let icfa = &self.m.icfa;
        let fr = th.frames.last().unwrap().clone();
        let l = fr.loc;
        let mut ns = st.clone();

        // function or thread exit
        if l == icfa.exit_loc(fr.func) {
            let depth = th.frames.len() as u32 - 1;
            if th.frames.len() == 1 {
                self.drop_frame(&mut ns, t, depth);
                ns.threads[t as usize].status = Status::Done;
                let line = icfa.inc[l as usize].iter().map(|e| icfa.edge(*e).line).max().unwrap_or(0);
                return Some((ns, line));
            }
            let caller = th.frames[th.frames.len() - 2].loc;
            let e = *icfa.out[l as usize].iter().find(|e| matches!(icfa.edge(**e).op, Op::FuncExit { call_site, .. } if call_site == caller))?;
            let Op::FuncExit { ret, lhs, .. } = &icfa.edge(e).op else { unreachable!() };
            let mut cx = Ctx { st: &mut ns, t, at: l };
            let rv = match ret.as_ref().map(|r| self.eval(&mut cx, r)).transpose() {
                Ok(v) => v,
                Err(_) => return Some(self.stuck(st, t, out)),
            };
            self.drop_frame(&mut ns, t, depth);
            ns.threads[t as usize].frames.pop();
            if let (Some(v), Some(lhs)) = (rv, lhs) {
                let cx = Ctx { st: &mut ns, t, at: l };
                let c = self.var_cell(&cx, *lhs);
                ns.mem.insert(c, v);
            }
            self.advance(&mut ns, t, e, &mut out.place_mismatches);
            return Some((ns, icfa.loc_line[caller as usize]));
        }

        for &e in &icfa.out[l as usize] {
            let edge = icfa.edge(e);
            let line = edge.line;
            let mut cx = Ctx { st: &mut ns, t, at: l };
            let r: R<bool> = (|| {
                match &edge.op {
                    Op::Guard(c) => Ok(self.eval(&mut cx, c)?.truthy()),
                    Op::Skip => Ok(true),
                    Op::Assign(lhs, rhs) => {
                        let c = self.addr(&mut cx, lhs)?;
                        let v = self.eval(&mut cx, rhs)?;
                        cx.st.mem.insert(c, v);
                        Ok(true)
                    }
                    Op::Lock(a) => {
                        let c = self.pointer(&mut cx, a)?;
                        match cx.st.owner.get(&c) {
                            Some(_) => Ok(false),
                            None => {
                                out.lock_targets.insert((st.threads[t as usize].place.clone(), abstract_cell(self.m, &cx.st.heap_site, &c)));
                                cx.st.owner.insert(c, t);
                                Ok(true)
                            }
                        }
                    }
                    Op::Unlock(a) => {
                        let c = self.pointer(&mut cx, a)?;
                        if cx.st.owner.get(&c) != Some(&t) {
                            return fault("unlock of a mutex the thread does not hold");
                        }
                        cx.st.owner.remove(&c);
                        Ok(true)
                    }
                    Op::Join(tid) => match self.eval(&mut cx, tid)? {
                        Value::Tid(k) => Ok(cx.st.threads[k as usize].status == Status::Done),
                        _ => fault("join on a thread id that was never set"),
                    },
                    Op::Create { tid, thr, .. } => {
                        let Value::Func(g) = self.eval(&mut cx, thr)? else { return fault("create of a non-function") };
                        let Some(te) = icfa.out[l as usize].iter().copied().find(|x| matches!(icfa.edge(*x).op, Op::ThreadEntry { func, .. } if func == g)) else {
                            return fault("thread function is not a candidate");
                        };
                        let Op::ThreadEntry { arg, par, .. } = &icfa.edge(te).op else { unreachable!() };
                        let argv = self.eval(&mut cx, arg)?;
                        let tc = self.pointer(&mut cx, tid)?;
                        let k = cx.st.threads.len() as u32;
                        let place = next_place(self.m, te, &st.threads[t as usize].place).unwrap_or_else(|| vec![icfa.entry_loc(g)]);
                        cx.st.threads.push(Thread {
                            frames: vec![Frame { func: g, loc: icfa.entry_loc(g) }],
                            status: Status::Running,
                            place,
                            loops: BTreeMap::new(),
                            allocs: 0,
                        });
                        if let Some(p) = par {
                            cx.st.mem.insert(Cell { block: Block::Local { thread: k, depth: 0, var: *p }, path: Vec::new() }, argv);
                        }
                        cx.st.mem.insert(tc, Value::Tid(k));
                        Ok(true)
                    }
                    Op::FuncEntry { args, params, callee } => {
                        if cx.st.threads[t as usize].frames.len() >= self.opts.max_depth {
                            return fault("call depth bound");
                        }
                        let vals = args.iter().map(|a| self.eval(&mut cx, a)).collect::<R<Vec<_>>>()?;
                        let depth = cx.st.threads[t as usize].frames.len() as u32;
                        for (p, v) in params.iter().zip(vals) {
                            cx.st.mem.insert(Cell { block: Block::Local { thread: t, depth, var: *p }, path: Vec::new() }, v);
                        }
                        let th = &mut cx.st.threads[t as usize];
                        th.place = next_place(self.m, e, &th.place).expect("entries always have a successor place");
                        th.frames.push(Frame { func: *callee, loc: edge.tgt });
                        Ok(true)
                    }
                    Op::ThreadEntry { .. } | Op::FuncExit { .. } | Op::ThreadExit { .. } | Op::ThreadJoin { .. } => Ok(false),
                }
            })();
            match r {
                Ok(true) => {
                    if !matches!(edge.op, Op::FuncEntry { .. }) {
                        self.advance(&mut ns, t, e, &mut out.place_mismatches);
                    }
                    if !self.count_loop(&mut ns, t) {
                        ns.threads[t as usize].status = Status::Stuck;
                    }
                    return Some((ns, line));
                }
                Ok(false) => {
                    ns = st.clone();
                }
                Err(_) => return Some(self.stuck(st, t, out)),
            }
        }
        None
    }

    fn stuck(&self, st: &State, t: u32, out: &mut Exploration) -> (State, u32) {
        out.faults += 1;
        let mut ns = st.clone();
        ns.threads[t as usize].status = Status::Stuck;
        let l = st.threads[t as usize].frames.last().unwrap().loc;
        (ns, self.m.icfa.loc_line[l as usize])
    }

    /// Next step of `t` touches only its own unaliased locals.
    fn is_local_step(&self, st: &State, t: u32) -> bool {
        let th = &st.threads[t as usize];
        if th.status != Status::Running {
            return false;
        }
        let l = th.frames.last().unwrap().loc;
        if l == self.m.icfa.exit_loc(th.frames.last().unwrap().func) {
            return false;
        }
        self.m.icfa.out[l as usize].iter().all(|e| match &self.m.icfa.edge(*e).op {
            Op::Skip => true,
            Op::Guard(x) => self.local_expr(x),
            Op::Assign(a, b) => self.local_expr(a) && self.local_expr(b),
            _ => false,
        })
    }

    fn local_expr(&self, e: &Expr) -> bool {
        let mut ok = true;
        e.walk(&mut |s| match &s.kind {
            ExprKind::Var(v) => ok &= self.local_only[*v as usize],
            ExprKind::Int(_) | ExprKind::Unary(..) | ExprKind::Binary(..) => {}
            _ => ok = false,
        });
        ok
    }

    fn observe(&self, st: &State, out: &mut Exploration) {
        let live: Vec<u32> = (0..st.threads.len() as u32).filter(|t| st.threads[*t as usize].status == Status::Running).collect();
        for &t in &live {
            let held: BTreeSet<_> = st.owner.iter().filter(|(_, o)| **o == t).map(|(c, _)| abstract_cell(self.m, &st.heap_site, c)).collect();
            out.held.insert((st.threads[t as usize].place.clone(), held));
        }
        for (i, a) in live.iter().enumerate() {
            for b in &live[i + 1..] {
                let (pa, pb) = (&st.threads[*a as usize].place, &st.threads[*b as usize].place);
                let key = if pa <= pb { (pa.clone(), pb.clone()) } else { (pb.clone(), pa.clone()) };
                out.co_reached.insert(key);
            }
        }
    }

    /// Lock a blocked thread waits for.
    fn requested(&self, st: &State, t: u32) -> Option<Cell> {
        let th = &st.threads[t as usize];
        if th.status != Status::Running {
            return None;
        }
        let l = th.frames.last().unwrap().loc;
        let mut scratch = st.clone();
        for e in &self.m.icfa.out[l as usize] {
            if let Op::Lock(a) = &self.m.icfa.edge(*e).op {
                let mut cx = Ctx { st: &mut scratch, t, at: l };
                if let Ok(c) = self.pointer(&mut cx, a) {
                    if st.owner.contains_key(&c) {
                        return Some(c);
                    }
                }
            }
        }
        None
    }

    /// Cycle of the lock-allocation graph, as (thread, requested lock) pairs.
    fn lag_cycle(&self, st: &State) -> Option<Vec<(u32, Cell)>> {
        let n = st.threads.len() as u32;
        let req: Vec<Option<Cell>> = (0..n).map(|t| self.requested(st, t)).collect();
        for start in 0..n {
            let mut seen = Vec::new();
            let mut t = start;
            loop {
                let Some(c) = &req[t as usize] else { break };
                if let Some(pos) = seen.iter().position(|(x, _)| *x == t) {
                    let cyc: Vec<(u32, Cell)> = seen[pos..].to_vec();
                    if cyc.iter().map(|(x, _)| *x).min() == Some(start) {
                        return Some(cyc);
                    }
                    break;
                }
                seen.push((t, c.clone()));
                t = st.owner[c];
            }
        }
        None
    }
}

/// Variables whose address is taken anywhere, directly or through a
/// field or element.
fn address_taken_vars(m: &Model) -> Vec<bool> {
    let mut taken = vec![false; m.prog.vars.len()];
    for f in &m.prog.functions {
        visit_exprs(&f.body, &mut |e| {
            e.walk(&mut |sub| {
                if let ExprKind::AddrOf(inner) = &sub.kind {
                    inner.walk(&mut |x| {
                        if let ExprKind::Var(v) = x.kind {
                            taken[v as usize] = true;
                        }
                    });
                }
            })
        });
    }
    taken
}

fn hash_state(s: &State) -> u64 {
    let mut h = DefaultHasher::new();
    s.hash(&mut h);
    h.finish()
}

/// Explores every interleaving of the program within the bounds.
pub fn explore(m: &Model, opts: &OracleOpts) -> Exploration {
    let taken = address_taken_vars(m);
    let local_only = m
        .prog
        .vars
        .iter()
        .enumerate()
        .map(|(i, v)| !matches!(v.kind, VarKind::Global) && !taken[i])
        .collect();
    let it = Interp { m, opts, local_only };
    let main = m.prog.entry;
    let init = State {
        threads: vec![Thread {
            frames: vec![Frame { func: main, loc: m.icfa.main_entry() }],
            status: Status::Running,
            place: vec![m.icfa.main_entry()],
            loops: BTreeMap::new(),
            allocs: 0,
        }],
        mem: BTreeMap::new(),
        owner: BTreeMap::new(),
        heap_site: BTreeMap::new(),
    };
    let mut out = Exploration::default();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut seen_deadlocks: BTreeSet<Vec<(Place, AbstractObject)>> = BTreeSet::new();
    // (state, next thread to try, step that led here)
    let mut stack: Vec<(State, u32, Option<SchedStep>)> = Vec::new();
    seen.insert(hash_state(&init));
    it.observe(&init, &mut out);
    stack.push((init, 0, None));
    while let Some(top) = stack.last_mut() {
        let st = top.0.clone();
        let n = st.threads.len() as u32;
        let forced = if opts.por { (0..n).find(|t| it.is_local_step(&st, *t)) } else { None };
        let t = top.1;
        if t >= n || (forced.is_some() && t > forced.unwrap()) {
            stack.pop();
            continue;
        }
        top.1 = match forced {
            Some(f) => f.max(t) + n,
            None => t + 1,
        };
        let t = forced.unwrap_or(t);
        let Some((ns, line)) = it.step(&st, t, &mut out) else { continue };
        if !seen.insert(hash_state(&ns)) {
            continue;
        }
        if seen.len() > opts.max_states {
            out.budget_exceeded = true;
            break;
        }
        it.observe(&ns, &mut out);
        if let Some(cyc) = it.lag_cycle(&ns) {
            if cyc.len() == 1 {
                out.self_locks += 1;
            } else {
                out.deadlock_count += 1;
                let mut key: Vec<(Place, AbstractObject)> = cyc
                    .iter()
                    .map(|(th, c)| (ns.threads[*th as usize].place.clone(), abstract_cell(m, &ns.heap_site, c)))
                    .collect();
                key.sort();
                if seen_deadlocks.insert(key) && out.deadlocks.len() < opts.max_witnesses {
                    let mut schedule: Vec<SchedStep> = stack.iter().filter_map(|(_, _, s)| s.clone()).collect();
                    schedule.push(SchedStep { tid: t, line });
                    let locks: Vec<AbstractObject> = cyc.iter().map(|(_, c)| abstract_cell(m, &ns.heap_site, c)).collect();
                    out.deadlocks.push(DeadlockWitness {
                        lock_names: locks.iter().map(|o| o.render(m)).collect(),
                        locks,
                        places: cyc.iter().map(|(th, _)| ns.threads[*th as usize].place.clone()).collect(),
                        schedule,
                    });
                }
            }
        }
        stack.push((ns, 0, Some(SchedStep { tid: t, line })));
    }
    out.states = seen.len();
    out
}

/// A failed cross-check between the oracle and the static results.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub place: String,
    pub detail: String,
}

fn violation(m: &Model, p: &[Loc], detail: String) -> Violation {
    Violation { place: render_place(&m.prog, &m.icfa, p), detail }
}

fn covered(vs: &ValueSet, o: &AbstractObject) -> bool {
    match vs.objects() {
        None => true,
        Some(s) => s.contains(o),
    }
}

/// Every concretely held lock lies in the may lockset of the thread's place.
pub fn check_may_covers_held(a: &Analysis, ex: &Exploration) -> Result<(), Violation> {
    let m = &a.model;
    for (p, held) in &ex.held {
        let may = a.places.lookup(p).and_then(|id| a.ls.may_at(id));
        let Some(may) = may else {
            return Err(violation(m, p, "place reached concretely but not statically".into()));
        };
        if let Some(o) = held.iter().find(|o| !covered(may, o)) {
            return Err(violation(m, p, format!("holds {} outside may set {}", o.render(m), may.render(m))));
        }
    }
    Ok(())
}

/// Every lock in the must lockset of a place is held whenever a thread is there.
pub fn check_must(a: &Analysis, ex: &Exploration) -> Result<(), Violation> {
    let m = &a.model;
    for (p, held) in &ex.held {
        let Some(id) = a.places.lookup(p) else {
            return Err(violation(m, p, "place reached concretely but not statically".into()));
        };
        match a.ls.must_at(id) {
            MustSet::Universe => return Err(violation(m, p, "must set is bottom at a reached place".into())),
            MustSet::Set(must) => {
                if let Some(o) = must.iter().find(|o| !held.contains(o)) {
                    return Err(violation(m, p, format!("must lock {} not held", o.render(m))));
                }
            }
        }
    }
    Ok(())
}

/// Each witness lock is matched to a distinct node of the cycle; the summary
/// node stands for any lock.
fn cycle_covers(c: &Cycle, locks: &[AbstractObject]) -> bool {
    let mut nodes = c.locks();
    let mut rest = Vec::new();
    for o in locks {
        match nodes.iter().position(|n| *n == LockNode::Obj(o.clone())) {
            Some(i) => {
                nodes.remove(i);
            }
            None => rest.push(o),
        }
    }
    let stars = nodes.iter().filter(|n| **n == LockNode::Star).count();
    rest.len() <= stars
}

/// Every concrete deadlock is covered by a reported cycle.
pub fn check_deadlocks_reported(a: &Analysis, ex: &Exploration) -> Result<(), Violation> {
    if a.search.truncated {
        return Ok(());
    }
    let m = &a.model;
    for w in &ex.deadlocks {
        if !a.search.reported.iter().any(|c| cycle_covers(c, &w.locks)) {
            return Err(violation(m, &w.places[0], format!("deadlock over {{{}}} has no reported cycle", w.lock_names.join(", "))));
        }
    }
    Ok(())
}

/// Oracle-confirmed deadlock matched by a reported cycle, as (witness, cycle) indices.
pub fn confirmed_cycles(a: &Analysis, ex: &Exploration) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, w) in ex.deadlocks.iter().enumerate() {
        for (j, c) in a.search.reported.iter().enumerate() {
            if cycle_covers(c, &w.locks) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Samples `samples` place pairs and checks that every pair declared
/// non-concurrent is never occupied at once. Returns the number of pairs
/// the analysis declared non-concurrent.
pub fn check_nonconc(a: &Analysis, ex: &Exploration, samples: usize, seed: u64) -> Result<usize, Violation> {
    use rand::{Rng, SeedableRng};
    let m = &a.model;
    let ids: Vec<PlaceId> = a.ls.may.states.keys().copied().collect();
    if ids.is_empty() {
        return Ok(0);
    }
    let nc = a.nonconc();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    // bias half the samples toward pairs the oracle saw together
    let seen: Vec<(PlaceId, PlaceId)> = ex
        .co_reached
        .iter()
        .filter_map(|(p, q)| Some((a.places.lookup(p)?, a.places.lookup(q)?)))
        .collect();
    let mut yes = 0;
    for k in 0..samples {
        let (x, y) = if k % 2 == 0 && !seen.is_empty() {
            seen[rng.gen_range(0..seen.len())]
        } else {
            (ids[rng.gen_range(0..ids.len())], ids[rng.gen_range(0..ids.len())])
        };
        if nc.non_concurrent(x, y) {
            yes += 1;
            let (p, q) = (a.places.get(x), a.places.get(y));
            if ex.co_reachable(&p, &q) {
                return Err(violation(m, &p, format!("declared non-concurrent with {} but co-reached", render_place(&m.prog, &m.icfa, &q))));
            }
        }
    }
    Ok(yes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(src: &str) -> Exploration {
        explore(&Model::load(src).unwrap(), &OracleOpts::default())
    }

    #[test]
    fn inversions_has_no_deadlock() {
        let ex = run(include_str!("../fixtures/two_inversions.mc"));
        assert!(!ex.budget_exceeded);
        assert_eq!(ex.deadlock_count, 0);
        assert_eq!(ex.place_mismatches, 0);
        assert_eq!(ex.faults, 0);
    }

    #[test]
    fn single_thread_is_one_path() {
        let ex = run("int x; int main() { x = 1; x = x + 1; return 0; }");
        // entry, two assignments, return-value store, exit, done
        let m = Model::load("int x; int main() { x = 1; x = x + 1; return 0; }").unwrap();
        assert_eq!(ex.states, m.icfa.edges.len() + 2);
        assert!(ex.co_reached.is_empty());
    }

    #[test]
    fn inversion_deadlocks() {
        let src = "mutex a; mutex b;\nint w() {\n lock(&b);\n lock(&a);\n unlock(&a);\n unlock(&b);\n return 0;\n}\n\
                   int main() {\n tid t;\n create(&t, w, 0);\n lock(&a);\n lock(&b);\n unlock(&b);\n unlock(&a);\n join(t);\n return 0;\n}";
        let ex = run(src);
        assert!(ex.deadlock_count > 0);
        let w = &ex.deadlocks[0];
        let names: BTreeSet<_> = w.lock_names.iter().cloned().collect();
        assert_eq!(names, ["a".to_string(), "b".into()].into());
        assert!(!w.schedule.is_empty());
    }

    #[test]
    fn loop_bound_cuts() {
        let ex = run("int x; int main() { while (1) { x = x + 1; } return 0; }");
        assert!(!ex.budget_exceeded);
        assert!(ex.states < 20);
    }

    #[test]
    fn deterministic() {
        let a = run(include_str!("../fixtures/heap_lock.mc"));
        let b = run(include_str!("../fixtures/heap_lock.mc"));
        assert_eq!(a.states, b.states);
        assert_eq!(a.held, b.held);
        assert_eq!(a.deadlock_count, b.deadlock_count);
    }

    #[test]
    fn heap_lock_cycle_found() {
        let ex = run(include_str!("../fixtures/heap_lock.mc"));
        assert!(ex.deadlock_count > 0);
    }

    #[test]
    fn por_keeps_deadlocks() {
        let m = Model::load(include_str!("../fixtures/heap_lock.mc")).unwrap();
        let full = explore(&m, &OracleOpts::default());
        let red = explore(&m, &OracleOpts { por: true, ..OracleOpts::default() });
        assert!(red.states <= full.states);
        assert_eq!(red.deadlock_count > 0, full.deadlock_count > 0);
    }

    #[test]
    fn concrete_places_are_abstract_places() {
        for src in [
            include_str!("../fixtures/two_inversions.mc"),
            include_str!("../fixtures/wrapper.mc"),
            include_str!("../fixtures/nested_join.mc"),
            include_str!("../fixtures/heap_lock.mc"),
        ] {
            let ex = run(src);
            assert_eq!(ex.place_mismatches, 0);
            assert!(!ex.held.is_empty());
        }
    }

    #[test]
    fn inversions_cross_checks() {
        let src = include_str!("../fixtures/two_inversions.mc");
        let a = crate::pipeline::analyze(src, &Default::default()).unwrap();
        let ex = run(src);
        check_may_covers_held(&a, &ex).unwrap();
        check_must(&a, &ex).unwrap();
        check_deadlocks_reported(&a, &ex).unwrap();
        assert!(check_nonconc(&a, &ex, 1000, 1).unwrap() > 0);
    }

    #[test]
    fn inversion_confirmed() {
        let src = "mutex a; mutex b;\nint w() {\n lock(&b);\n lock(&a);\n unlock(&a);\n unlock(&b);\n return 0;\n}\n\
                   int main() {\n tid t;\n create(&t, w, 0);\n lock(&a);\n lock(&b);\n unlock(&b);\n unlock(&a);\n join(t);\n return 0;\n}";
        let a = crate::pipeline::analyze(src, &Default::default()).unwrap();
        let ex = run(src);
        check_deadlocks_reported(&a, &ex).unwrap();
        assert!(!confirmed_cycles(&a, &ex).is_empty());
    }

    #[test]
    fn empty_program_vacuous() {
        let src = "int main() { return 0; }";
        let a = crate::pipeline::analyze(src, &Default::default()).unwrap();
        let ex = run(src);
        check_may_covers_held(&a, &ex).unwrap();
        check_deadlocks_reported(&a, &ex).unwrap();
    }

    #[test]
    fn wrap_is_signed() {
        let m = Model::load("int main() { return 0; }").unwrap();
        let opts = OracleOpts::default();
        let it = Interp { m: &m, opts: &opts, local_only: vec![] };
        assert_eq!(it.wrap(127), 127);
        assert_eq!(it.wrap(128), -128);
        assert_eq!(it.wrap(-129), 127);
    }
}
