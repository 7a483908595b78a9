//! Wires the stages together and renders reports.

use std::fmt::Write;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::depend::{self, Affecting};
use crate::framework::{SolveError, SolveOpts};
use crate::frontend::FrontendError;
use crate::lockgraph::{find_deadlocks, CycleReport, CycleSearch, LockGraph, SearchOpts};
use crate::locksets::{Locksets, SelfLock};
use crate::model::Model;
use crate::nonconc::NonConc;
use crate::places::{render_place, PlaceMap};
use crate::pointsto::PointsTo;

#[derive(Clone, Debug, Default)]
pub struct Config {
    pub no_nonconc: bool,
    pub no_depend: bool,
    /// Merge all contexts of a function in the points-to results. Testing only.
    pub context_insensitive: bool,
    pub solve: SolveOpts,
    pub max_cycles: Option<usize>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[frontend] {0}")]
    Frontend(#[from] FrontendError),
    #[error("[{stage}] {err}")]
    Solve { stage: &'static str, err: SolveError },
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Timings {
    pub frontend: Duration,
    pub dependency: Duration,
    pub pointer: Duration,
    pub locksets: Duration,
    pub lock_graph: Duration,
    pub cycles: Duration,
}

impl Timings {
    pub fn total(&self) -> Duration {
        self.frontend + self.dependency + self.pointer + self.locksets + self.lock_graph + self.cycles
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    ProvedDeadlockFree,
    PotentialDeadlocks(usize),
    Inconclusive(String),
}

impl Verdict {
    pub fn exit_code(&self) -> i32 {
        match self {
            Verdict::ProvedDeadlockFree => 0,
            Verdict::PotentialDeadlocks(_) => 1,
            Verdict::Inconclusive(_) => 2,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::ProvedDeadlockFree => "PROVED_DEADLOCK_FREE",
            Verdict::PotentialDeadlocks(_) => "POTENTIAL_DEADLOCKS",
            Verdict::Inconclusive(_) => "INCONCLUSIVE",
        }
    }
}

pub struct Analysis {
    pub model: Model,
    pub places: PlaceMap,
    pub dep: Option<Affecting>,
    pub pt: PointsTo,
    pub ls: Locksets,
    /// Closed lock graph.
    pub graph: LockGraph,
    pub search: CycleSearch,
    pub self_locks: Vec<SelfLock>,
    pub timings: Timings,
    pub config: Config,
}

fn timed<T>(slot: &mut Duration, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let r = f();
    *slot = t.elapsed();
    r
}

pub fn analyze(src: &str, cfg: &Config) -> Result<Analysis, PipelineError> {
    let mut tm = Timings::default();
    let m = timed(&mut tm.frontend, || Model::load(src))?;
    analyze_model(m, cfg, tm)
}

pub fn analyze_model(m: Model, cfg: &Config, mut tm: Timings) -> Result<Analysis, PipelineError> {
    let dep = timed(&mut tm.dependency, || (!cfg.no_depend).then(|| depend::analyze(&m)));
    let followed = dep.as_ref().map(|d| d.followed(&m));
    let mut pm = PlaceMap::new();
    let mut pt = timed(&mut tm.pointer, || PointsTo::analyze(&m, &mut pm, followed.as_ref(), &cfg.solve))
        .map_err(|err| PipelineError::Solve { stage: "pointsto", err })?;
    if cfg.context_insensitive {
        pt.make_context_insensitive(&m);
    }
    let ls = timed(&mut tm.locksets, || Locksets::analyze(&m, &mut pm, &pt, &cfg.solve))
        .map_err(|err| PipelineError::Solve { stage: "locksets", err })?;
    let graph = timed(&mut tm.lock_graph, || LockGraph::build(&m, &pm, &pt, &ls).closure());
    let opts = SearchOpts { max_cycles: cfg.max_cycles.unwrap_or(SearchOpts::default().max_cycles) };
    let search = timed(&mut tm.cycles, || {
        if cfg.no_nonconc {
            find_deadlocks(&m, &pm, &graph, None, &opts)
        } else {
            let nc = NonConc::new(&m, &pm, &pt, &ls);
            find_deadlocks(&m, &pm, &graph, Some(&nc), &opts)
        }
    });
    let self_locks = ls.self_locks(&m, &pm, &pt);
    Ok(Analysis { model: m, places: pm, dep, pt, ls, graph, search, self_locks, timings: tm, config: cfg.clone() })
}

#[derive(Serialize)]
struct JsonReport {
    verdict: &'static str,
    cycles: Vec<CycleReport>,
    #[serde(rename = "selfLocks")]
    self_locks: Vec<JsonSelfLock>,
    warnings: Vec<String>,
    #[serde(rename = "timingsMs")]
    timings_ms: Vec<(&'static str, f64)>,
}

#[derive(Serialize)]
struct JsonSelfLock {
    lock: String,
    line: u32,
    #[serde(rename = "callString")]
    call_string: String,
}

impl Analysis {
    pub fn nonconc(&self) -> NonConc<'_> {
        NonConc::new(&self.model, &self.places, &self.pt, &self.ls)
    }

    pub fn verdict(&self) -> Verdict {
        if self.search.reported.is_empty() && !self.search.truncated {
            Verdict::ProvedDeadlockFree
        } else {
            Verdict::PotentialDeadlocks(self.search.reported.len())
        }
    }

    /// Reported cycles, then pruned ones when `verbose`.
    pub fn cycle_reports(&self, verbose: bool) -> Vec<CycleReport> {
        let m = &self.model;
        let mut out: Vec<_> = self.search.reported.iter().map(|c| CycleReport::new(m, &self.places, c, None)).collect();
        if verbose {
            out.extend(self.search.pruned.iter().map(|(c, r)| CycleReport::new(m, &self.places, c, Some(*r))));
        }
        out
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w: Vec<String> = self.model.prog.warnings.iter().chain(&self.model.icfa.warnings).cloned().collect();
        if self.search.truncated {
            w.push("EXPLOSION: cycle enumeration truncated; remaining cycles are treated as potential deadlocks".into());
        }
        w
    }

    fn timing_rows(&self) -> Vec<(&'static str, f64)> {
        let t = &self.timings;
        let ms = |d: Duration| d.as_secs_f64() * 1000.0;
        vec![
            ("frontend", ms(t.frontend)),
            ("dependency", ms(t.dependency)),
            ("pointer", ms(t.pointer)),
            ("locksets", ms(t.locksets)),
            ("lockGraph", ms(t.lock_graph)),
            ("cycles", ms(t.cycles)),
            ("total", ms(t.total())),
        ]
    }

    pub fn report_json(&self, verbose: bool) -> String {
        let m = &self.model;
        let r = JsonReport {
            verdict: self.verdict().label(),
            cycles: self.cycle_reports(verbose),
            self_locks: self
                .self_locks
                .iter()
                .map(|s| JsonSelfLock { lock: s.lock.render(m), line: s.line, call_string: render_place(&m.prog, &m.icfa, &s.place) })
                .collect(),
            warnings: self.warnings(),
            timings_ms: self.timing_rows(),
        };
        serde_json::to_string_pretty(&r).expect("report serializes")
    }

    pub fn report_text(&self, verbose: bool, color: bool) -> String {
        let paint = |code: &str, s: &str| if color { format!("\x1b[{code}m{s}\x1b[0m") } else { s.to_string() };
        let mut out = String::new();
        let v = self.verdict();
        let head = match &v {
            Verdict::ProvedDeadlockFree => paint("32;1", v.label()),
            _ => paint("31;1", v.label()),
        };
        let _ = writeln!(out, "{head}");
        for w in self.warnings() {
            let _ = writeln!(out, "{} {w}", paint("33", "warning:"));
        }
        for (i, c) in self.cycle_reports(verbose).iter().enumerate() {
            let tag = match c.pruned_by {
                None => paint("31", "cycle"),
                Some(r) => paint("2", &format!("pruned ({r})")),
            };
            let _ = writeln!(out, "{tag} #{}: {{{}}}", i + 1, c.locks.join(", "));
            for (lock, p) in c.locks.iter().zip(&c.places) {
                let _ = writeln!(out, "    holding {lock} at {}  [thread {}]", p.call_string, p.thread_id);
            }
        }
        for s in &self.self_locks {
            let m = &self.model;
            let _ = writeln!(
                out,
                "{} {} re-locked at line {} ({})",
                paint("33", "SELF_LOCK:"),
                s.lock.render(m),
                s.line,
                render_place(&m.prog, &m.icfa, &s.place)
            );
        }
        if verbose {
            let _ = writeln!(out, "places: {}, pointer edge visits: {}", self.places.len(), self.pt.edge_visits());
            if let Some(d) = &self.dep {
                let st = d.stats(&self.model);
                let _ = writeln!(
                    out,
                    "affecting assignments: {:.1}%, functions: {:.1}%",
                    100.0 * st.assignment_fraction(),
                    100.0 * st.function_fraction()
                );
            }
        }
        let _ = writeln!(out, "timing (ms):");
        for (k, ms) in self.timing_rows() {
            let _ = writeln!(out, "  {k:<12}{ms:>10.3}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INVERSIONS: &str = include_str!("../fixtures/two_inversions.mc");

    #[test]
    fn inversions_proved() {
        let a = analyze(INVERSIONS, &Config::default()).unwrap();
        assert_eq!(a.verdict(), Verdict::ProvedDeadlockFree);
        assert_eq!(a.cycle_reports(false).len(), 0);
        assert_eq!(a.cycle_reports(true).len(), 2);
    }

    #[test]
    fn no_nonconc_only_adds() {
        let a = analyze(INVERSIONS, &Config { no_nonconc: true, ..Config::default() }).unwrap();
        assert_eq!(a.verdict(), Verdict::PotentialDeadlocks(2));
    }

    #[test]
    fn syntax_error_is_tagged() {
        let e = analyze("int main( {", &Config::default()).err().unwrap();
        assert!(e.to_string().starts_with("[frontend]"));
    }

    #[test]
    fn json_shape() {
        let a = analyze(INVERSIONS, &Config::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&a.report_json(true)).unwrap();
        let cycles = v["cycles"].as_array().unwrap();
        assert_eq!(cycles.len(), 2);
        for c in cycles {
            assert!(c["locks"].is_array());
            assert!(c["places"][0]["callString"].is_string());
            assert!(c["places"][0]["threadId"].is_string());
            assert!(c["pruned_by"].is_string());
        }
        let quiet: serde_json::Value = serde_json::from_str(&a.report_json(false)).unwrap();
        assert!(quiet["cycles"].as_array().unwrap().is_empty());
    }

    #[test]
    fn text_without_color_has_no_escapes() {
        let a = analyze(INVERSIONS, &Config::default()).unwrap();
        let t = a.report_text(true, false);
        assert!(!t.contains('\x1b'));
        assert!(t.starts_with("PROVED_DEADLOCK_FREE"));
        assert!(t.contains("gatelock") && t.contains("create_join"));
    }
}
