use lockhound::lockgraph::PrunedBy;
use lockhound::oracle::{check_may_covers_held, check_deadlocks_reported, explore, OracleOpts};
use lockhound::pipeline::{analyze, Config, Verdict};
use lockhound::pointsto::ValueSet;

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn lock_names(src: &str) -> Vec<Vec<String>> {
    let a = analyze(src, &Config::default()).unwrap();
    a.cycle_reports(false)
        .into_iter()
        .map(|c| {
            let mut l = c.locks;
            l.sort();
            l
        })
        .collect()
}

#[test]
fn join_deleted_reports_m4_m5() {
    assert_eq!(lock_names(&fixture("mutants/no_join.mc")), vec![vec!["m4".to_string(), "m5".into()]]);
}

#[test]
fn gatelock_deleted_reports_m2_m3() {
    assert_eq!(lock_names(&fixture("mutants/no_gatelock.mc")), vec![vec!["m2".to_string(), "m3".into()]]);
}

#[test]
fn deadlock_free_fixtures_are_proved() {
    for f in ["two_inversions.mc", "wrapper.mc", "wrapper_stats.mc", "wrapper_struct.mc", "nested_join.mc"] {
        let a = analyze(&fixture(f), &Config::default()).unwrap();
        assert_eq!(a.verdict(), Verdict::ProvedDeadlockFree, "{f}");
        let ex = explore(&a.model, &OracleOpts::default());
        assert_eq!(ex.deadlock_count, 0, "{f}");
    }
}

#[test]
fn every_fixture_passes_cross_checks() {
    let dir = format!("{}/fixtures", env!("CARGO_MANIFEST_DIR"));
    let mut files: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.extend(std::fs::read_dir(format!("{dir}/mutants")).unwrap().map(|e| e.unwrap().path()));
    let mut n = 0;
    for p in files.into_iter().filter(|p| p.extension().is_some_and(|e| e == "mc")) {
        let src = std::fs::read_to_string(&p).unwrap();
        let a = analyze(&src, &Config::default()).unwrap();
        let ex = explore(&a.model, &OracleOpts::default());
        check_may_covers_held(&a, &ex).unwrap_or_else(|v| panic!("{}: {v:?}", p.display()));
        check_deadlocks_reported(&a, &ex).unwrap_or_else(|v| panic!("{}: {v:?}", p.display()));
        n += 1;
    }
    assert!(n >= 14);
}

#[test]
fn broken_may_transfer_is_caught() {
    let src = fixture("two_inversions.mc");
    let mut a = analyze(&src, &Config::default()).unwrap();
    for (_, s) in a.ls.may.states.values_mut() {
        *s = ValueSet::empty();
    }
    let ex = explore(&a.model, &OracleOpts::default());
    assert!(check_may_covers_held(&a, &ex).is_err());
}

#[test]
fn pruned_reasons_on_inversions() {
    let a = analyze(&fixture("two_inversions.mc"), &Config::default()).unwrap();
    let mut r: Vec<PrunedBy> = a.search.pruned.iter().map(|(_, r)| *r).collect();
    r.sort_by_key(|r| r.to_string());
    assert_eq!(r, [PrunedBy::CreateJoin, PrunedBy::Gatelock]);
}

#[test]
fn self_lock_is_diagnosed_separately() {
    let src = "mutex a;\nint main() {\n  lock(&a);\n  lock(&a);\n  return 0;\n}\n";
    let a = analyze(src, &Config::default()).unwrap();
    assert_eq!(a.verdict(), Verdict::ProvedDeadlockFree);
    assert_eq!(a.self_locks.len(), 1);
    assert_eq!(a.self_locks[0].line, 4);
    let ex = explore(&a.model, &OracleOpts::default());
    assert_eq!(ex.self_locks, 1);
    assert_eq!(ex.deadlock_count, 0);
}
