//! May and must lockset analyses.

use std::collections::BTreeSet;

use crate::framework::{solve_fs, Client, SolveError, SolveOpts, Solution};
use crate::frontend::icfa::{EdgeId, Loc, Op};
use crate::model::Model;
use crate::places::{Place, PlaceId, PlaceMap};
use crate::pointsto::{AbstractObject, PointsTo, ValueSet};

/// May locksets share the value-set domain: finite set or the indeterminate set.
pub type MaySet = ValueSet;

pub fn may_join(a: &MaySet, b: &MaySet) -> MaySet {
    a.union(b)
}

/// Must locksets. `Universe` is the bottom of the intersection lattice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MustSet {
    Universe,
    Set(BTreeSet<AbstractObject>),
}

impl MustSet {
    pub fn empty() -> MustSet {
        MustSet::Set(BTreeSet::new())
    }

    pub fn objects(&self) -> Option<&BTreeSet<AbstractObject>> {
        match self {
            MustSet::Set(s) => Some(s),
            MustSet::Universe => None,
        }
    }
}

pub fn must_join(a: &MustSet, b: &MustSet) -> MustSet {
    match (a, b) {
        (MustSet::Universe, x) | (x, MustSet::Universe) => x.clone(),
        (MustSet::Set(x), MustSet::Set(y)) => MustSet::Set(x.intersection(y).cloned().collect()),
    }
}

/// May-lockset step for lock/unlock given the argument's value set. Only
/// objects standing for one concrete lock are ever removed.
pub fn may_step(m: &Model, op: &Op, s: &MaySet, vs: &ValueSet) -> MaySet {
    match op {
        Op::Lock(_) => s.union(vs),
        Op::Unlock(_) => {
            let ValueSet::Set(held) = s else { return s.clone() };
            if held.len() == 1 {
                let only = held.iter().next().unwrap();
                return if only.is_unique(m) { MaySet::empty() } else { s.clone() };
            }
            if let ValueSet::Set(v) = vs {
                let common: Vec<_> = held.intersection(v).collect();
                if common.len() == 1 && common[0].is_unique(m) {
                    let mut out = held.clone();
                    out.remove(common[0]);
                    return ValueSet::Set(out);
                }
            }
            s.clone()
        }
        Op::ThreadEntry { .. } | Op::ThreadExit { .. } | Op::ThreadJoin { .. } => MaySet::empty(),
        _ => s.clone(),
    }
}

pub fn must_step(op: &Op, s: &MustSet, vs: &ValueSet) -> MustSet {
    let MustSet::Set(held) = s else { return s.clone() };
    match op {
        Op::Lock(_) => match vs.singleton() {
            Some(o) => {
                let mut out = held.clone();
                out.insert(o.clone());
                MustSet::Set(out)
            }
            None => s.clone(),
        },
        Op::Unlock(_) => match vs {
            ValueSet::Star => MustSet::empty(),
            ValueSet::Set(v) => MustSet::Set(held.difference(v).cloned().collect()),
        },
        Op::ThreadEntry { .. } | Op::ThreadExit { .. } | Op::ThreadJoin { .. } => MustSet::empty(),
        _ => s.clone(),
    }
}

fn arg_vs(m: &Model, pt: &PointsTo, e: EdgeId, p: &[Loc]) -> ValueSet {
    match &m.icfa.edge(e).op {
        Op::Lock(a) | Op::Unlock(a) => pt.lock_vs(m, p, a),
        _ => ValueSet::empty(),
    }
}

pub struct MayClient<'a> {
    pub pt: &'a PointsTo,
}

impl<'a> Client for MayClient<'a> {
    type State = MaySet;

    fn bottom(&self) -> MaySet {
        MaySet::empty()
    }

    fn join(&self, a: &MaySet, b: &MaySet) -> MaySet {
        may_join(a, b)
    }

    fn transfer(&self, m: &Model, e: EdgeId, p: &[Loc], s: &MaySet) -> MaySet {
        may_step(m, &m.icfa.edge(e).op, s, &arg_vs(m, self.pt, e, p))
    }
}

pub struct MustClient<'a> {
    pub pt: &'a PointsTo,
}

impl<'a> Client for MustClient<'a> {
    type State = MustSet;

    fn bottom(&self) -> MustSet {
        MustSet::Universe
    }

    fn init(&self) -> MustSet {
        MustSet::empty()
    }

    fn join(&self, a: &MustSet, b: &MustSet) -> MustSet {
        must_join(a, b)
    }

    fn transfer(&self, m: &Model, e: EdgeId, p: &[Loc], s: &MustSet) -> MustSet {
        must_step(&m.icfa.edge(e).op, s, &arg_vs(m, self.pt, e, p))
    }
}

pub struct Locksets {
    pub may: Solution<MaySet>,
    pub must: Solution<MustSet>,
}

/// A lock acquired while it is definitely held already.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelfLock {
    pub place: Place,
    pub lock: AbstractObject,
    pub line: u32,
}

impl Locksets {
    pub fn analyze(m: &Model, pm: &mut PlaceMap, pt: &PointsTo, opts: &SolveOpts) -> Result<Locksets, SolveError> {
        let may = solve_fs(m, pm, &MayClient { pt }, opts)?;
        let must = solve_fs(m, pm, &MustClient { pt }, opts)?;
        Ok(Locksets { may, must })
    }

    pub fn may_at(&self, p: PlaceId) -> Option<&MaySet> {
        self.may.get(p)
    }

    pub fn must_at(&self, p: PlaceId) -> MustSet {
        self.must.get(p).cloned().unwrap_or(MustSet::Universe)
    }

    /// (place id, lock edge) for every reached place whose top starts a lock.
    pub fn lock_places(&self, m: &Model, pm: &PlaceMap) -> Vec<(PlaceId, EdgeId)> {
        let mut out = Vec::new();
        for pid in self.may.states.keys() {
            for e in &m.icfa.out[pm.top(*pid) as usize] {
                if matches!(m.icfa.edge(*e).op, Op::Lock(_)) {
                    out.push((*pid, *e));
                }
            }
        }
        out
    }

    /// Fraction of lock places whose argument is a single known object.
    pub fn precise_must_fraction(&self, m: &Model, pm: &PlaceMap, pt: &PointsTo) -> f64 {
        let places = self.lock_places(m, pm);
        if places.is_empty() {
            return 1.0;
        }
        let precise = places.iter().filter(|(pid, e)| arg_vs(m, pt, *e, &pm.get(*pid)).singleton().is_some()).count();
        precise as f64 / places.len() as f64
    }

    pub fn self_locks(&self, m: &Model, pm: &PlaceMap, pt: &PointsTo) -> Vec<SelfLock> {
        let mut out = Vec::new();
        for (pid, e) in self.lock_places(m, pm) {
            let p = pm.get(pid);
            let vs = arg_vs(m, pt, e, &p);
            if let (Some(o), MustSet::Set(held)) = (vs.singleton(), self.must_at(pid)) {
                if o.is_unique(m) && held.contains(o) {
                    out.push(SelfLock { place: p, lock: o.clone(), line: m.icfa.edge(e).line });
                }
            }
        }
        out
    }
}
