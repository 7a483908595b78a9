//! Places, abstract thread ids, and the trie-backed place map.

use std::collections::HashMap;

use thiserror::Error;

use crate::frontend::ast::Program;
use crate::frontend::icfa::{Icfa, Loc};

pub type PlaceId = u32;
pub type Place = Vec<Loc>;

/// Creation history of an abstract thread. Empty for main.
pub type ThreadId = Vec<Loc>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlaceError {
    #[error("unknown place id {0}")]
    UnknownId(PlaceId),
}

#[derive(Debug, Clone)]
struct Node {
    loc: Loc,
    parent: usize,
    depth: u32,
    children: HashMap<Loc, usize>,
    id: Option<PlaceId>,
}

/// Two-way mapping between places and dense ids. Places sharing a prefix
/// share the trie nodes for it.
#[derive(Debug, Clone)]
pub struct PlaceMap {
    nodes: Vec<Node>,
    ids: Vec<usize>,
}

const ROOT: usize = 0;

impl Default for PlaceMap {
    fn default() -> Self {
        Self::new()
    }
}

impl PlaceMap {
    pub fn new() -> PlaceMap {
        PlaceMap {
            nodes: vec![Node { loc: Loc::MAX, parent: ROOT, depth: 0, children: HashMap::new(), id: None }],
            ids: Vec::new(),
        }
    }

    pub fn intern(&mut self, p: &[Loc]) -> PlaceId {
        assert!(!p.is_empty(), "places are non-empty");
        let mut n = ROOT;
        for &l in p {
            n = match self.nodes[n].children.get(&l) {
                Some(c) => *c,
                None => {
                    let c = self.nodes.len();
                    let depth = self.nodes[n].depth + 1;
                    self.nodes.push(Node { loc: l, parent: n, depth, children: HashMap::new(), id: None });
                    self.nodes[n].children.insert(l, c);
                    c
                }
            };
        }
        match self.nodes[n].id {
            Some(id) => id,
            None => {
                let id = self.ids.len() as PlaceId;
                self.ids.push(n);
                self.nodes[n].id = Some(id);
                id
            }
        }
    }

    pub fn lookup(&self, p: &[Loc]) -> Option<PlaceId> {
        let mut n = ROOT;
        for l in p {
            n = *self.nodes[n].children.get(l)?;
        }
        self.nodes[n].id
    }

    pub fn resolve(&self, id: PlaceId) -> Result<Place, PlaceError> {
        let mut n = *self.ids.get(id as usize).ok_or(PlaceError::UnknownId(id))?;
        let mut out = vec![0; self.nodes[n].depth as usize];
        while n != ROOT {
            out[self.nodes[n].depth as usize - 1] = self.nodes[n].loc;
            n = self.nodes[n].parent;
        }
        Ok(out)
    }

    /// Like `resolve` for ids known to be valid.
    pub fn get(&self, id: PlaceId) -> Place {
        self.resolve(id).expect("place id issued by this map")
    }

    pub fn top(&self, id: PlaceId) -> Loc {
        self.nodes[self.ids[id as usize]].loc
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Trie nodes excluding the root.
    pub fn node_count(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// Prefix of `p` up to its last create site, not counting the top location.
pub fn get_thread(icfa: &Icfa, p: &[Loc]) -> ThreadId {
    let hist = &p[..p.len().saturating_sub(1)];
    match hist.iter().rposition(|l| icfa.is_create_site(*l)) {
        Some(i) => hist[..=i].to_vec(),
        None => Vec::new(),
    }
}

pub fn common_prefix(p1: &[Loc], p2: &[Loc]) -> usize {
    p1.iter().zip(p2).take_while(|(a, b)| a == b).count()
}

/// Call string such as `main:7 > thread:12`.
pub fn render_place(prog: &Program, icfa: &Icfa, p: &[Loc]) -> String {
    p.iter()
        .map(|l| format!("{}:{}", prog.func(icfa.func_of(*l)).name, icfa.loc_line[*l as usize]))
        .collect::<Vec<_>>()
        .join(" > ")
}

pub fn render_thread(prog: &Program, icfa: &Icfa, t: &[Loc]) -> String {
    if t.is_empty() {
        "main".into()
    } else {
        render_place(prog, icfa, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::load;
    use proptest::prelude::*;

    #[test]
    fn interning_is_stable() {
        let mut pm = PlaceMap::new();
        let a = pm.intern(&[1]);
        assert_eq!(pm.intern(&[1]), a);
        assert_eq!(pm.len(), 1);
    }

    #[test]
    fn two_way_fixture() {
        // ids assigned in the order (l1,l2), (l1), (l3)
        let mut pm = PlaceMap::new();
        assert_eq!(pm.intern(&[1, 2]), 0);
        assert_eq!(pm.intern(&[1]), 1);
        assert_eq!(pm.intern(&[3]), 2);
        assert_eq!(pm.resolve(0).unwrap(), vec![1, 2]);
        assert_eq!(pm.resolve(1).unwrap(), vec![1]);
        assert_eq!(pm.node_count(), 3);
        assert_eq!(pm.resolve(7), Err(PlaceError::UnknownId(7)));
    }

    #[test]
    fn common_prefix_cases() {
        assert_eq!(common_prefix(&[1, 2, 3], &[1, 2, 4]), 2);
        assert_eq!(common_prefix(&[1, 2, 3], &[1, 2, 3]), 3);
        assert_eq!(common_prefix(&[5, 6, 9], &[7, 10]), 0);
    }

    #[test]
    fn thread_of_place() {
        let src = "tid t; int x; void w() { x = 1; } void g() { x = 2; } \
                   int main() { g(); create(&t, w, 0); return 0; }";
        let (prog, icfa) = load(src).unwrap();
        let create = *icfa.create_sites.keys().next().unwrap();
        let call = *icfa.call_sites.keys().next().unwrap();
        let w = icfa.entry_loc(prog.func_by_name("w").unwrap());
        let g = icfa.entry_loc(prog.func_by_name("g").unwrap());
        assert_eq!(get_thread(&icfa, &[create, w]), vec![create]);
        assert_eq!(get_thread(&icfa, &[call, g]), Vec::<Loc>::new());
        assert_eq!(get_thread(&icfa, &[create, call, create, w]), vec![create, call, create]);
        // the create location itself still runs in the creating thread
        assert_eq!(get_thread(&icfa, &[create]), Vec::<Loc>::new());
    }

    #[test]
    fn random_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut pm = PlaceMap::new();
        let mut places = Vec::new();
        let mut total = 0;
        for _ in 0..10_000 {
            let n = rng.gen_range(1..6);
            let p: Place = (0..n).map(|_| rng.gen_range(0..8)).collect();
            let id = pm.intern(&p);
            places.push((id, p));
        }
        let mut distinct = std::collections::HashSet::new();
        for (id, p) in &places {
            assert_eq!(&pm.resolve(*id).unwrap(), p);
            if distinct.insert(p.clone()) {
                total += p.len();
            }
        }
        assert_eq!(pm.len(), distinct.len());
        assert!(pm.node_count() <= total);
    }

    proptest! {
        #[test]
        fn ids_dense_and_bijective(ps in proptest::collection::vec(proptest::collection::vec(0u32..5, 1..5), 1..40)) {
            let mut pm = PlaceMap::new();
            for p in &ps {
                pm.intern(p);
            }
            let mut seen = std::collections::HashSet::new();
            for id in 0..pm.len() as PlaceId {
                let p = pm.resolve(id).unwrap();
                prop_assert_eq!(pm.lookup(&p), Some(id));
                prop_assert!(seen.insert(p));
            }
        }

        #[test]
        fn shared_prefix_stored_once(prefix in proptest::collection::vec(0u32..50, 1..6), tails in proptest::collection::vec(100u32..200, 1..20)) {
            let mut pm = PlaceMap::new();
            for t in &tails {
                let mut p = prefix.clone();
                p.push(*t);
                pm.intern(&p);
            }
            let distinct: std::collections::BTreeSet<_> = tails.iter().collect();
            prop_assert_eq!(pm.node_count(), prefix.len() + distinct.len());
        }
    }
}
