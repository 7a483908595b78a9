//! Name resolution and type checking: turns the raw syntax tree into a `Program`.

use std::collections::{BTreeMap, HashMap};

use super::ast::*;
use super::parser::{RExpr, RFunc, RProgram, RStmt, RStmtKind};
use super::FrontendError;

pub const NO_ENTRY: FuncId = FuncId::MAX;

struct Checker<'a> {
    prog: Program,
    globals: HashMap<String, VarId>,
    funcs: HashMap<String, FuncId>,
    raw: &'a RProgram,
}

struct Scope {
    func: FuncId,
    names: HashMap<String, VarId>,
}

fn terr<T>(line: u32, msg: impl Into<String>) -> Result<T, FrontendError> {
    Err(FrontendError::Type { line, msg: msg.into() })
}

pub fn check(raw: &RProgram) -> Result<Program, FrontendError> {
    let mut c = Checker {
        prog: Program {
            structs: BTreeMap::new(),
            vars: Vec::new(),
            globals: Vec::new(),
            functions: Vec::new(),
            entry: NO_ENTRY,
            warnings: Vec::new(),
        },
        globals: HashMap::new(),
        funcs: HashMap::new(),
        raw,
    };
    c.declare()?;
    for i in 0..raw.funcs.len() {
        c.body(i)?;
    }
    Ok(c.prog)
}

impl<'a> Checker<'a> {
    fn declare(&mut self) -> Result<(), FrontendError> {
        for (name, fields, line) in &self.raw.structs {
            if self.prog.structs.contains_key(name) {
                return terr(*line, format!("duplicate struct '{name}'"));
            }
            let mut fs: Vec<(String, Type)> = Vec::new();
            for (t, f) in fields {
                if fs.iter().any(|(n, _)| n == f) {
                    return terr(*line, format!("duplicate field '{f}' in struct '{name}'"));
                }
                fs.push((f.clone(), t.clone()));
            }
            self.prog.structs.insert(name.clone(), StructDef { name: name.clone(), fields: fs });
        }
        for (name, fields, line) in &self.raw.structs {
            for (t, _) in fields {
                self.valid_type(t, *line, false)?;
                if contains_struct_by_value(t, name, &self.prog.structs) {
                    return terr(*line, format!("struct '{name}' contains itself"));
                }
            }
        }
        for (t, name, line) in &self.raw.globals {
            self.valid_type(t, *line, false)?;
            if self.globals.contains_key(name) {
                return terr(*line, format!("duplicate global '{name}'"));
            }
            let v = self.prog.add_var(name.clone(), t.clone(), VarKind::Global);
            self.prog.globals.push(v);
            self.globals.insert(name.clone(), v);
        }
        for f in &self.raw.funcs {
            if self.funcs.contains_key(&f.name) || self.globals.contains_key(&f.name) {
                return terr(f.line, format!("duplicate definition of '{}'", f.name));
            }
            self.valid_type(&f.ret, f.line, true)?;
            if matches!(f.ret, Type::Array(..) | Type::Struct(_) | Type::Mutex) {
                return terr(f.line, format!("'{}' has an unsupported return type", f.name));
            }
            let id = self.prog.functions.len() as FuncId;
            let mut params = Vec::new();
            for (t, n) in &f.params {
                self.valid_type(t, f.line, false)?;
                if matches!(t, Type::Array(..) | Type::Struct(_) | Type::Mutex) {
                    return terr(f.line, format!("parameter '{n}' must be a scalar or pointer"));
                }
                if params.iter().any(|p: &VarId| self.prog.vars[*p as usize].name == format!("{}::{n}", f.name)) {
                    return terr(f.line, format!("duplicate parameter '{n}'"));
                }
                params.push(self.prog.add_var(format!("{}::{n}", f.name), t.clone(), VarKind::Param(id)));
            }
            if f.name == "main" {
                if !params.is_empty() {
                    return terr(f.line, "main takes no parameters");
                }
                self.prog.entry = id;
            }
            self.prog.functions.push(Function {
                id,
                name: f.name.clone(),
                ret: f.ret.clone(),
                params,
                locals: Vec::new(),
                body: Vec::new(),
                line: f.line,
                ret_var: None,
                single_exit: false,
            });
            self.funcs.insert(f.name.clone(), id);
        }
        Ok(())
    }

    fn valid_type(&self, t: &Type, line: u32, allow_void: bool) -> Result<(), FrontendError> {
        match t {
            Type::Void if allow_void => Ok(()),
            Type::Void => terr(line, "void is only allowed as a return type"),
            Type::Int | Type::Mutex | Type::Tid => Ok(()),
            Type::Struct(s) => {
                if self.prog.structs.contains_key(s) {
                    Ok(())
                } else {
                    terr(line, format!("unknown struct '{s}'"))
                }
            }
            Type::Ptr(inner) => match &**inner {
                Type::Void => terr(line, "void pointers are not supported"),
                i => self.valid_type(i, line, false),
            },
            Type::Array(inner, _) => self.valid_type(inner, line, false),
            Type::Fn(ps, r) => {
                for p in ps {
                    self.valid_type(p, line, false)?;
                }
                self.valid_type(r, line, true)
            }
        }
    }

    fn body(&mut self, idx: usize) -> Result<(), FrontendError> {
        let rf: &RFunc = &self.raw.funcs[idx];
        let fid = idx as FuncId;
        let mut scope = Scope { func: fid, names: HashMap::new() };
        for (p, (_, n)) in self.prog.functions[idx].params.clone().iter().zip(&rf.params) {
            scope.names.insert(n.clone(), *p);
        }
        let body = self.block(&rf.body, &mut scope)?;
        self.prog.functions[idx].body = body;
        Ok(())
    }

    fn block(&mut self, stmts: &[RStmt], scope: &mut Scope) -> Result<Vec<Stmt>, FrontendError> {
        let mut out = Vec::new();
        for s in stmts {
            self.stmt(s, scope, &mut out)?;
        }
        Ok(out)
    }

    fn stmt(&mut self, s: &RStmt, scope: &mut Scope, out: &mut Vec<Stmt>) -> Result<(), FrontendError> {
        let line = s.line;
        let fid = scope.func;
        let kind = match &s.kind {
            RStmtKind::Decl(t, n, init) => {
                self.valid_type(t, line, false)?;
                if scope.names.contains_key(n) {
                    return terr(line, format!("duplicate local '{n}'"));
                }
                let fname = self.prog.functions[fid as usize].name.clone();
                let v = self.prog.add_var(format!("{fname}::{n}"), t.clone(), VarKind::Local(fid));
                self.prog.functions[fid as usize].locals.push(v);
                scope.names.insert(n.clone(), v);
                match init {
                    None => return Ok(()),
                    Some(r) => {
                        let lhs = Expr::var(v, t.clone());
                        let rhs = self.expr(r, scope, line)?;
                        self.check_assign(&lhs.ty, &rhs, line)?;
                        StmtKind::Assign(lhs, rhs)
                    }
                }
            }
            RStmtKind::Assign(l, r) => {
                let lhs = self.expr(l, scope, line)?;
                if !lhs.is_lvalue() {
                    return terr(line, "left side of assignment is not an lvalue");
                }
                if matches!(lhs.ty, Type::Array(..) | Type::Struct(_) | Type::Mutex) {
                    return terr(line, format!("cannot assign to a value of type {}", lhs.ty));
                }
                let rhs = self.expr(r, scope, line)?;
                self.check_assign(&lhs.ty, &rhs, line)?;
                StmtKind::Assign(lhs, rhs)
            }
            RStmtKind::Call(lhs, name, args) => {
                let (callee, sig) = if let Some(v) = scope.names.get(name).or_else(|| self.globals.get(name)) {
                    let t = self.prog.vars[*v as usize].ty.clone();
                    if !t.is_fn() {
                        return terr(line, format!("'{name}' is not callable"));
                    }
                    (Callee::Pointer(*v), t)
                } else if let Some(f) = self.funcs.get(name) {
                    if *f == self.prog.entry {
                        return terr(line, "main cannot be called");
                    }
                    (Callee::Direct(*f), self.prog.functions[*f as usize].signature(&self.prog.vars))
                } else {
                    return terr(line, format!("unknown function '{name}'"));
                };
                let Type::Fn(ptys, rty) = sig else { unreachable!() };
                if ptys.len() != args.len() {
                    return terr(line, format!("'{name}' expects {} arguments, got {}", ptys.len(), args.len()));
                }
                let mut targs = Vec::new();
                for (a, pt) in args.iter().zip(&ptys) {
                    let e = self.expr(a, scope, line)?;
                    self.check_assign(pt, &e, line)?;
                    targs.push(e);
                }
                let lhs = match lhs {
                    None => None,
                    Some(n) => {
                        let v = self.lookup_var(n, scope, line)?;
                        let vt = &self.prog.vars[v as usize].ty;
                        if *rty == Type::Void || vt != &*rty {
                            return terr(line, format!("cannot assign result of '{name}' to '{n}'"));
                        }
                        Some(v)
                    }
                };
                StmtKind::Call { lhs, callee, args: targs }
            }
            RStmtKind::If(c, a, b) => {
                let c = self.cond(c, scope, line)?;
                let a = self.block(a, scope)?;
                let b = self.block(b, scope)?;
                StmtKind::If(c, a, b)
            }
            RStmtKind::While(c, b) => {
                let c = self.cond(c, scope, line)?;
                let b = self.block(b, scope)?;
                StmtKind::While(c, b)
            }
            RStmtKind::Return(e) => {
                let ret = self.prog.functions[fid as usize].ret.clone();
                match (e, &ret) {
                    (None, Type::Void) => StmtKind::Return(None),
                    (None, _) => return terr(line, "missing return value"),
                    (Some(_), Type::Void) => return terr(line, "void function returns a value"),
                    (Some(e), t) => {
                        let e = self.expr(e, scope, line)?;
                        self.check_assign(t, &e, line)?;
                        StmtKind::Return(Some(e))
                    }
                }
            }
            RStmtKind::Lock(e) | RStmtKind::Unlock(e) => {
                let te = self.expr(e, scope, line)?;
                if te.ty != Type::ptr(Type::Mutex) {
                    let what = if matches!(s.kind, RStmtKind::Lock(_)) { "lock" } else { "unlock" };
                    return terr(line, format!("{what} expects a mutex pointer, got {}", te.ty));
                }
                if matches!(s.kind, RStmtKind::Lock(_)) {
                    StmtKind::Lock(te)
                } else {
                    StmtKind::Unlock(te)
                }
            }
            RStmtKind::Create(t, f, a) => {
                let tid = self.expr(t, scope, line)?;
                if tid.ty != Type::ptr(Type::Tid) {
                    return terr(line, format!("create expects a tid pointer, got {}", tid.ty));
                }
                let thr = self.expr(f, scope, line)?;
                let ptys = match (&thr.kind, &thr.ty) {
                    (ExprKind::Func(_), Type::Fn(ps, _)) | (ExprKind::Var(_), Type::Fn(ps, _)) => ps.clone(),
                    _ => return terr(line, "create given a non-function value"),
                };
                if let ExprKind::Func(fid2) = thr.kind {
                    if fid2 == self.prog.entry {
                        return terr(line, "main cannot be used as a thread");
                    }
                }
                let arg = self.expr(a, scope, line)?;
                match ptys.as_slice() {
                    [] => {}
                    [pt] => self.check_assign(pt, &arg, line)?,
                    _ => return terr(line, "thread functions take at most one parameter"),
                }
                StmtKind::Create { tid, thr, arg }
            }
            RStmtKind::Join(e) => {
                let te = self.expr(e, scope, line)?;
                if te.ty != Type::Tid || !te.is_lvalue() {
                    return terr(line, "join expects a tid variable");
                }
                StmtKind::Join(te)
            }
            RStmtKind::Skip => StmtKind::Skip,
        };
        out.push(Stmt::new(kind, line));
        Ok(())
    }

    fn lookup_var(&self, n: &str, scope: &Scope, line: u32) -> Result<VarId, FrontendError> {
        match scope.names.get(n).or_else(|| self.globals.get(n)) {
            Some(v) => Ok(*v),
            None => terr(line, format!("unknown variable '{n}'")),
        }
    }

    fn cond(&mut self, c: &RExpr, scope: &Scope, line: u32) -> Result<Expr, FrontendError> {
        let e = self.expr(c, scope, line)?;
        match e.ty {
            Type::Int | Type::Ptr(_) | Type::Fn(..) => Ok(e),
            ref t => terr(line, format!("condition of type {t}")),
        }
    }

    fn check_assign(&self, want: &Type, e: &Expr, line: u32) -> Result<(), FrontendError> {
        if &e.ty == want {
            return Ok(());
        }
        let null = matches!(e.kind, ExprKind::Int(0));
        if null && (want.is_ptr() || want.is_fn()) {
            return Ok(());
        }
        terr(line, format!("type mismatch: expected {want}, got {}", e.ty))
    }

    fn expr(&mut self, r: &RExpr, scope: &Scope, line: u32) -> Result<Expr, FrontendError> {
        let e = self.expr_inner(r, scope, line)?;
        if let Type::Array(..) = e.ty {
            return terr(line, "arrays can only be used through indexing");
        }
        Ok(e)
    }

    fn expr_inner(&mut self, r: &RExpr, scope: &Scope, line: u32) -> Result<Expr, FrontendError> {
        Ok(match r {
            RExpr::Int(v) => Expr::int(*v),
            RExpr::Name(n) => {
                if let Some(v) = scope.names.get(n).or_else(|| self.globals.get(n)) {
                    Expr::var(*v, self.prog.vars[*v as usize].ty.clone())
                } else if let Some(f) = self.funcs.get(n) {
                    Expr::new(ExprKind::Func(*f), self.prog.functions[*f as usize].signature(&self.prog.vars))
                } else {
                    return terr(line, format!("unknown identifier '{n}'"));
                }
            }
            RExpr::AddrOf(inner) => {
                let e = self.expr(inner, scope, line)?;
                if !e.is_lvalue() || matches!(e.ty, Type::Array(..)) {
                    return terr(line, "cannot take the address of this expression");
                }
                let t = Type::ptr(e.ty.clone());
                Expr::new(ExprKind::AddrOf(Box::new(e)), t)
            }
            RExpr::Deref(inner) => {
                let e = self.expr(inner, scope, line)?;
                let t = match e.ty.pointee() {
                    Some(t) => t.clone(),
                    None => return terr(line, format!("dereference of non-pointer type {}", e.ty)),
                };
                Expr::new(ExprKind::Deref(Box::new(e)), t)
            }
            RExpr::Arrow(inner, f) => {
                let e = self.expr(inner, scope, line)?;
                let t = match e.ty.pointee() {
                    Some(Type::Struct(s)) => match self.prog.field_type(s, f) {
                        Some(t) => t.clone(),
                        None => return terr(line, format!("struct '{s}' has no field '{f}'")),
                    },
                    _ => return terr(line, format!("'->' applied to {}", e.ty)),
                };
                Expr::new(ExprKind::Arrow(Box::new(e), f.clone()), t)
            }
            RExpr::Index(a, i) => {
                let ea = self.expr_inner(a, scope, line)?;
                let t = match &ea.ty {
                    Type::Array(t, _) if ea.is_lvalue() => (**t).clone(),
                    t => return terr(line, format!("indexing a value of type {t}")),
                };
                let ei = self.expr(i, scope, line)?;
                if ei.ty != Type::Int {
                    return terr(line, "array index must be an int");
                }
                Expr::new(ExprKind::Index(Box::new(ea), Box::new(ei)), t)
            }
            RExpr::Malloc(t) => {
                self.valid_type(t, line, false)?;
                Expr::new(ExprKind::Malloc(t.clone()), Type::ptr(t.clone()))
            }
            RExpr::Cast(t, inner) => {
                self.valid_type(t, line, false)?;
                let e = self.expr(inner, scope, line)?;
                let ok = &e.ty == t
                    || (t.is_ptr() && e.ty == Type::Int)
                    || (*t == Type::Int && e.ty.is_ptr());
                if !ok {
                    return terr(line, format!("cannot cast {} to {t}", e.ty));
                }
                Expr::new(ExprKind::Cast(t.clone(), Box::new(e)), t.clone())
            }
            RExpr::Unary(op, inner) => {
                let e = self.expr(inner, scope, line)?;
                if e.ty != Type::Int {
                    return terr(line, format!("unary operator on {}", e.ty));
                }
                Expr::new(ExprKind::Unary(*op, Box::new(e)), Type::Int)
            }
            RExpr::Binary(op, a, b) => {
                let ea = self.expr(a, scope, line)?;
                let eb = self.expr(b, scope, line)?;
                let ok = match op {
                    BinOp::Eq | BinOp::Ne => {
                        (ea.ty == eb.ty && matches!(ea.ty, Type::Int | Type::Ptr(_) | Type::Fn(..)))
                            || (matches!(eb.kind, ExprKind::Int(0)) && (ea.ty.is_ptr() || ea.ty.is_fn()))
                            || (matches!(ea.kind, ExprKind::Int(0)) && (eb.ty.is_ptr() || eb.ty.is_fn()))
                    }
                    BinOp::And | BinOp::Or => {
                        matches!(ea.ty, Type::Int | Type::Ptr(_)) && matches!(eb.ty, Type::Int | Type::Ptr(_))
                    }
                    _ => ea.ty == Type::Int && eb.ty == Type::Int,
                };
                if !ok {
                    return terr(line, format!("operator '{}' on {} and {}", op.symbol(), ea.ty, eb.ty));
                }
                Expr::new(ExprKind::Binary(*op, Box::new(ea), Box::new(eb)), Type::Int)
            }
        })
    }
}

fn contains_struct_by_value(t: &Type, name: &str, structs: &BTreeMap<String, StructDef>) -> bool {
    fn go(t: &Type, name: &str, structs: &BTreeMap<String, StructDef>, depth: usize) -> bool {
        if depth > 32 {
            return true;
        }
        match t {
            Type::Struct(s) if s == name => true,
            Type::Struct(s) => structs
                .get(s)
                .map(|d| d.fields.iter().any(|(_, ft)| go(ft, name, structs, depth + 1)))
                .unwrap_or(false),
            Type::Array(inner, _) => go(inner, name, structs, depth + 1),
            _ => false,
        }
    }
    go(t, name, structs, 0)
}
