//! The two source-level preprocessing passes that run before ICFA construction.

use super::ast::*;

/// Replaces every call through a function pointer by an if/else-if chain over
/// the address-taken functions whose signature matches the pointer's type.
pub fn remove_fp_calls(prog: &Program) -> Program {
    let mut out = prog.clone();
    let taken = prog.address_taken();
    let mut warnings = Vec::new();
    for f in out.functions.iter_mut() {
        let body = std::mem::take(&mut f.body);
        f.body = rewrite_calls(prog, &taken, body, &f.name, &mut warnings);
    }
    for w in warnings {
        if !out.warnings.contains(&w) {
            out.warnings.push(w);
        }
    }
    out
}

fn fp_candidates(prog: &Program, taken: &[bool], ty: &Type) -> Vec<FuncId> {
    prog.functions
        .iter()
        .filter(|g| taken[g.id as usize] && g.id != prog.entry && &g.signature(&prog.vars) == ty)
        .map(|g| g.id)
        .collect()
}

fn rewrite_calls(prog: &Program, taken: &[bool], stmts: Vec<Stmt>, fname: &str, warnings: &mut Vec<String>) -> Vec<Stmt> {
    let mut out = Vec::with_capacity(stmts.len());
    for s in stmts {
        let line = s.line;
        let kind = match s.kind {
            StmtKind::If(c, a, b) => StmtKind::If(
                c,
                rewrite_calls(prog, taken, a, fname, warnings),
                rewrite_calls(prog, taken, b, fname, warnings),
            ),
            StmtKind::While(c, b) => StmtKind::While(c, rewrite_calls(prog, taken, b, fname, warnings)),
            StmtKind::Call { lhs, callee: Callee::Pointer(v), args } => {
                let vty = prog.var(v).ty.clone();
                let cands = fp_candidates(prog, taken, &vty);
                if cands.is_empty() {
                    warnings.push(format!(
                        "line {line}: call through '{}' in {fname} has no candidate functions; dropped",
                        prog.var(v).name
                    ));
                    StmtKind::Skip
                } else {
                    // build the chain back to front
                    let mut chain: Vec<Stmt> = Vec::new();
                    for g in cands.into_iter().rev() {
                        let test = Expr::new(
                            ExprKind::Binary(
                                BinOp::Eq,
                                Box::new(Expr::var(v, vty.clone())),
                                Box::new(Expr::new(ExprKind::Func(g), vty.clone())),
                            ),
                            Type::Int,
                        );
                        let call = Stmt::new(StmtKind::Call { lhs, callee: Callee::Direct(g), args: args.clone() }, line);
                        chain = vec![Stmt::new(StmtKind::If(test, vec![call], chain), line)];
                    }
                    out.extend(chain);
                    continue;
                }
            }
            k => k,
        };
        out.push(Stmt::new(kind, line));
    }
    out
}

/// Rewrites every function to have one exit: `return e` becomes an assignment
/// to a synthetic return variable followed by a jump to the end.
pub fn single_exit(prog: &Program) -> Program {
    let mut out = prog.clone();
    for i in 0..out.functions.len() {
        let (ret, name, fid) = {
            let f = &out.functions[i];
            (f.ret.clone(), f.name.clone(), f.id)
        };
        if ret != Type::Void && out.functions[i].ret_var.is_none() {
            // '$' cannot appear in source identifiers, so this never clashes
            let v = out.add_var(format!("{name}::$ret"), ret.clone(), VarKind::Local(fid));
            out.functions[i].locals.push(v);
            out.functions[i].ret_var = Some(v);
        }
        let rv = out.functions[i].ret_var.map(|v| Expr::var(v, ret.clone()));
        let body = std::mem::take(&mut out.functions[i].body);
        let mut body = lower_returns(body, &rv);
        // a trailing jump to the end is the fall-through
        if matches!(body.last(), Some(Stmt { kind: StmtKind::GotoEnd, .. })) {
            body.pop();
        }
        out.functions[i].body = body;
        out.functions[i].single_exit = true;
    }
    out
}

fn lower_returns(stmts: Vec<Stmt>, rv: &Option<Expr>) -> Vec<Stmt> {
    let mut out = Vec::with_capacity(stmts.len());
    for s in stmts {
        let line = s.line;
        match s.kind {
            StmtKind::Return(e) => {
                if let (Some(e), Some(rv)) = (e, rv) {
                    out.push(Stmt::new(StmtKind::Assign(rv.clone(), e), line));
                }
                out.push(Stmt::new(StmtKind::GotoEnd, line));
                // anything after a return in the same block is dead
                break;
            }
            StmtKind::If(c, a, b) => out.push(Stmt::new(StmtKind::If(c, lower_returns(a, rv), lower_returns(b, rv)), line)),
            StmtKind::While(c, b) => out.push(Stmt::new(StmtKind::While(c, lower_returns(b, rv)), line)),
            k => out.push(Stmt::new(k, line)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    const FP: &str = "
        int f1(int a) { return a; }
        int f2(int a) { return a; }
        int f3(int a) { return 1; }
        void f4() { }
        int main() {
            fn(int) -> int fp;
            fn() -> void g;
            int r;
            fp = f1;
            fp = f3;
            g = f4;
            r = fp(2);
            return 0;
        }";

    fn count_calls(stmts: &[Stmt], out: &mut Vec<String>, prog: &Program) {
        for s in stmts {
            match &s.kind {
                StmtKind::Call { callee: Callee::Direct(f), .. } => out.push(prog.func(*f).name.clone()),
                StmtKind::Call { callee: Callee::Pointer(_), .. } => out.push("<fp>".into()),
                StmtKind::If(_, a, b) => {
                    count_calls(a, out, prog);
                    count_calls(b, out, prog);
                }
                StmtKind::While(_, b) => count_calls(b, out, prog),
                _ => {}
            }
        }
    }

    #[test]
    fn chain_over_taken_compatible_functions() {
        let p = remove_fp_calls(&parse(FP).unwrap());
        let main = p.func(p.entry);
        let mut calls = Vec::new();
        count_calls(&main.body, &mut calls, &p);
        assert_eq!(calls, ["f1", "f3"]);
    }

    #[test]
    fn direct_calls_untouched() {
        let src = "void f() { } int main() { f(); return 0; }";
        let p = parse(src).unwrap();
        assert_eq!(remove_fp_calls(&p).functions, p.functions);
    }

    #[test]
    fn empty_candidate_set_warns() {
        let src = "int main() { fn() -> void g; g = 0; g(); return 0; }";
        let p = remove_fp_calls(&parse(src).unwrap());
        assert_eq!(p.warnings.len(), 1);
        let mut calls = Vec::new();
        count_calls(&p.func(p.entry).body, &mut calls, &p);
        assert!(calls.is_empty());
    }

    #[test]
    fn passes_are_idempotent() {
        let p = parse(FP).unwrap();
        let once = remove_fp_calls(&p);
        assert_eq!(remove_fp_calls(&once), once);
        let s1 = single_exit(&once);
        assert_eq!(single_exit(&s1), s1);
    }

    fn returns_and_gotos(stmts: &[Stmt]) -> (usize, usize) {
        let mut r = (0, 0);
        for s in stmts {
            let sub = match &s.kind {
                StmtKind::Return(_) => (1, 0),
                StmtKind::GotoEnd => (0, 1),
                StmtKind::If(_, a, b) => {
                    let (x, y) = (returns_and_gotos(a), returns_and_gotos(b));
                    (x.0 + y.0, x.1 + y.1)
                }
                StmtKind::While(_, b) => returns_and_gotos(b),
                _ => (0, 0),
            };
            r = (r.0 + sub.0, r.1 + sub.1);
        }
        r
    }

    #[test]
    fn two_returns_become_one_exit() {
        let src = "int f(int a) { if (a) { return 1; } return 2; } int main() { int r; r = f(0); return 0; }";
        let p = single_exit(&parse(src).unwrap());
        let f = p.func(p.func_by_name("f").unwrap());
        assert!(f.ret_var.is_some());
        assert_eq!(p.var(f.ret_var.unwrap()).name, "f::$ret");
        // the early return keeps its jump, the final one falls through
        assert_eq!(returns_and_gotos(&f.body), (0, 1));
    }

    #[test]
    fn void_without_return() {
        let src = "void f() { } int main() { f(); return 0; }";
        let p = single_exit(&parse(src).unwrap());
        let f = p.func(p.func_by_name("f").unwrap());
        assert!(f.ret_var.is_none());
        assert!(f.body.is_empty());
    }
}
