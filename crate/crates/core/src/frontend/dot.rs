//! Graphviz rendering of the ICFA.

use std::fmt::Write;

use super::ast::Program;
use super::icfa::{Icfa, Op};

pub fn op_label(prog: &Program, op: &Op) -> String {
    let s = |e| prog.show_expr(e);
    match op {
        Op::Assign(l, r) => format!("{} = {}", s(l), s(r)),
        Op::Guard(c) => format!("[{}]", s(c)),
        Op::Lock(e) => format!("lock({})", s(e)),
        Op::Unlock(e) => format!("unlock({})", s(e)),
        Op::Create { tid, thr, arg } => format!("create({}, {}, {})", s(tid), s(thr), s(arg)),
        Op::Join(e) => format!("join({})", s(e)),
        Op::FuncEntry { args, params, .. } => {
            let a: Vec<_> = args.iter().map(s).collect();
            let p: Vec<_> = params.iter().map(|v| prog.var(*v).name.clone()).collect();
            format!("func_entry(({}), ({}))", a.join(", "), p.join(", "))
        }
        Op::FuncExit { ret, lhs, .. } => format!(
            "func_exit({}, {})",
            ret.as_ref().map(s).unwrap_or_else(|| "-".into()),
            lhs.map(|v| prog.var(v).name.clone()).unwrap_or_else(|| "-".into())
        ),
        Op::ThreadEntry { thr, arg, par, .. } => format!(
            "thread_entry({}, {}, {})",
            s(thr),
            s(arg),
            par.map(|v| prog.var(v).name.clone()).unwrap_or_else(|| "-".into())
        ),
        Op::ThreadExit { .. } => "thread_exit".into(),
        Op::ThreadJoin { tid, .. } => format!("thread_join({})", s(tid)),
        Op::Skip => "skip".into(),
    }
}

fn esc(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// One cluster per function; inter-function edges are dashed.
pub fn icfa_to_dot(prog: &Program, icfa: &Icfa) -> String {
    let mut out = String::from("digraph icfa {\n  node [shape=circle, fontsize=10];\n");
    for f in &prog.functions {
        let _ = writeln!(out, "  subgraph cluster_{} {{\n    label=\"{}\";", f.id, esc(&f.name));
        for l in 0..icfa.num_locs() {
            if icfa.loc_func[l] == f.id {
                let _ = writeln!(out, "    n{l} [label=\"{l}\\nL{}\"];", icfa.loc_line[l]);
            }
        }
        out.push_str("  }\n");
    }
    for e in &icfa.edges {
        let style = if e.op.is_inter() { ", style=dashed" } else { "" };
        let _ = writeln!(out, "  n{} -> n{} [label=\"{}\"{style}];", e.src, e.tgt, esc(&op_label(prog, &e.op)));
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::super::load;
    use super::*;

    #[test]
    fn inter_edges_dashed() {
        let (prog, icfa) = load("void f() { } int main() { f(); return 0; }").unwrap();
        let dot = icfa_to_dot(&prog, &icfa);
        assert_eq!(dot.matches("style=dashed").count(), 2);
        assert!(dot.contains("func_entry"));
    }
}
