use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lockhound"));
    c.env("LOCKHOUND_COLOR", "0");
    c
}

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn exit_codes() {
    let ok = bin().args(["analyze", &fixture("two_inversions.mc")]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let bad = bin().args(["analyze", &fixture("mutants/no_join.mc")]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));

    let dir = std::env::temp_dir().join(format!("lockhound-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let broken = dir.join("broken.mc");
    std::fs::write(&broken, "int main( {").unwrap();
    let err = bin().args(["analyze", broken.to_str().unwrap()]).output().unwrap();
    assert_eq!(err.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&err.stderr).contains("[frontend]"));
    let missing = bin().args(["analyze", dir.join("nope.mc").to_str().unwrap()]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn color_can_be_disabled() {
    let out = bin().args(["analyze", &fixture("mutants/no_join.mc")]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("POTENTIAL_DEADLOCKS"));
    assert!(!text.contains('\x1b'));
    let colored = Command::new(env!("CARGO_BIN_EXE_lockhound")).env("LOCKHOUND_COLOR", "1").args(["analyze", &fixture("two_inversions.mc")]).output().unwrap();
    assert!(String::from_utf8(colored.stdout).unwrap().contains('\x1b'));
}

#[test]
fn json_report_schema() {
    let out = bin().args(["analyze", &fixture("two_inversions.mc"), "--report=json", "--verbose"]).output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let cycles = v["cycles"].as_array().unwrap();
    let mut pruned: Vec<&str> = cycles.iter().map(|c| c["pruned_by"].as_str().unwrap()).collect();
    pruned.sort();
    assert_eq!(pruned, ["create_join", "gatelock"]);

    let out = bin().args(["analyze", &fixture("mutants/no_join.mc"), "--report=json"]).output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let c = &v["cycles"][0];
    assert!(c["pruned_by"].is_null());
    let mut locks: Vec<&str> = c["locks"].as_array().unwrap().iter().map(|l| l.as_str().unwrap()).collect();
    locks.sort();
    assert_eq!(locks, ["m4", "m5"]);
    assert_eq!(c["places"].as_array().unwrap().len(), 2);
}

#[test]
fn no_nonconc_reports_both_inversions() {
    let out = bin().args(["analyze", &fixture("two_inversions.mc"), "--no-nonconc"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.matches("cycle #").count(), 2);
}

#[test]
fn emits_dot_files() {
    let dir = std::env::temp_dir().join(format!("lockhound-dot-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let f = dir.join("heap.mc");
    std::fs::copy(fixture("heap_lock.mc"), &f).unwrap();
    let out = bin().args(["analyze", f.to_str().unwrap(), "--emit-icfa=dot", "--emit-lockgraph=dot"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let icfa = std::fs::read_to_string(dir.join("heap.mc.icfa.dot")).unwrap();
    assert!(icfa.starts_with("digraph") && icfa.contains("style=dashed"));
    let lg = std::fs::read_to_string(dir.join("heap.mc.lockgraph.dot")).unwrap();
    assert!(lg.contains("doublecircle"));
}

#[test]
fn oracle_json() {
    let out = bin().args(["oracle", &fixture("mutants/ring3.mc"), "--budget", "100000", "--json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["states"].as_u64().unwrap() > 0);
    let w = &v["witnesses"][0];
    assert_eq!(w["lock_names"].as_array().unwrap().len(), 3);
    let step = &w["schedule"][0];
    assert!(step["tid"].is_u64() && step["line"].is_u64());

    let free = bin().args(["oracle", &fixture("two_inversions.mc"), "--json"]).output().unwrap();
    assert_eq!(free.status.code(), Some(0));
}

#[test]
fn gen_is_deterministic_and_loadable() {
    let a = bin().args(["gen", "--seed", "11"]).output().unwrap().stdout;
    let b = bin().args(["gen", "--seed", "11"]).output().unwrap().stdout;
    assert_eq!(a, b);
    lockhound::model::Model::load(std::str::from_utf8(&a).unwrap()).unwrap();
}

#[test]
fn dump_nonconc_lists_pairs() {
    let out = bin().args(["analyze", &fixture("two_inversions.mc"), "--dump-nonconc", "5"]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains("=>")).count(), 5);
}
