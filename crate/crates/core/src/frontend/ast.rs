use std::collections::BTreeMap;
use std::fmt;

pub type VarId = u32;
pub type FuncId = u32;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Type {
    Int,
    Mutex,
    Tid,
    Void,
    Struct(String),
    Ptr(Box<Type>),
    Array(Box<Type>, usize),
    Fn(Vec<Type>, Box<Type>),
}

impl Type {
    pub fn ptr(t: Type) -> Type {
        Type::Ptr(Box::new(t))
    }

    pub fn is_ptr(&self) -> bool {
        matches!(self, Type::Ptr(_))
    }

    pub fn is_fn(&self) -> bool {
        matches!(self, Type::Fn(..))
    }

    pub fn pointee(&self) -> Option<&Type> {
        match self {
            Type::Ptr(t) => Some(t),
            _ => None,
        }
    }

    pub fn is_scalar_int(&self) -> bool {
        matches!(self, Type::Int)
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Int => write!(f, "int"),
            Type::Mutex => write!(f, "mutex"),
            Type::Tid => write!(f, "tid"),
            Type::Void => write!(f, "void"),
            Type::Struct(s) => write!(f, "struct {s}"),
            Type::Ptr(t) => write!(f, "{t}*"),
            Type::Array(t, n) => write!(f, "{t}[{n}]"),
            Type::Fn(ps, r) => {
                write!(f, "fn(")?;
                for (i, p) in ps.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, ") -> {r}")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ExprKind {
    Int(i64),
    Var(VarId),
    Func(FuncId),
    AddrOf(Box<Expr>),
    Deref(Box<Expr>),
    Arrow(Box<Expr>, String),
    Index(Box<Expr>, Box<Expr>),
    Malloc(Type),
    Cast(Type, Box<Expr>),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

/// Typed expression. `ty` is filled in by the checker.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Expr {
    pub kind: ExprKind,
    pub ty: Type,
}

impl Expr {
    pub fn new(kind: ExprKind, ty: Type) -> Expr {
        Expr { kind, ty }
    }

    pub fn int(v: i64) -> Expr {
        Expr::new(ExprKind::Int(v), Type::Int)
    }

    pub fn var(v: VarId, ty: Type) -> Expr {
        Expr::new(ExprKind::Var(v), ty)
    }

    pub fn is_lvalue(&self) -> bool {
        matches!(
            self.kind,
            ExprKind::Var(_) | ExprKind::Deref(_) | ExprKind::Arrow(..) | ExprKind::Index(..)
        )
    }

    /// Pre-order walk over sub-expressions, including `self`.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match &self.kind {
            ExprKind::Int(_) | ExprKind::Var(_) | ExprKind::Func(_) | ExprKind::Malloc(_) => {}
            ExprKind::AddrOf(e)
            | ExprKind::Deref(e)
            | ExprKind::Arrow(e, _)
            | ExprKind::Cast(_, e)
            | ExprKind::Unary(_, e) => e.walk(f),
            ExprKind::Index(a, b) | ExprKind::Binary(_, a, b) => {
                a.walk(f);
                b.walk(f);
            }
        }
    }

    pub fn vars(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let ExprKind::Var(v) = e.kind {
                out.push(v);
            }
        });
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Callee {
    Direct(FuncId),
    Pointer(VarId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StmtKind {
    Assign(Expr, Expr),
    If(Expr, Vec<Stmt>, Vec<Stmt>),
    While(Expr, Vec<Stmt>),
    Call {
        lhs: Option<VarId>,
        callee: Callee,
        args: Vec<Expr>,
    },
    Return(Option<Expr>),
    Lock(Expr),
    Unlock(Expr),
    Create {
        tid: Expr,
        thr: Expr,
        arg: Expr,
    },
    Join(Expr),
    /// Jump to the function's single exit; only produced by the single-exit pass.
    GotoEnd,
    Skip,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub line: u32,
}

impl Stmt {
    pub fn new(kind: StmtKind, line: u32) -> Stmt {
        Stmt { kind, line }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VarKind {
    Global,
    Param(FuncId),
    Local(FuncId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarDecl {
    /// Qualified name: `g` for globals, `f::x` for locals and parameters.
    pub name: String,
    pub ty: Type,
    pub kind: VarKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructDef {
    pub name: String,
    pub fields: Vec<(String, Type)>,
}

impl StructDef {
    pub fn field(&self, name: &str) -> Option<&Type> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Function {
    pub id: FuncId,
    pub name: String,
    pub ret: Type,
    pub params: Vec<VarId>,
    pub locals: Vec<VarId>,
    pub body: Vec<Stmt>,
    pub line: u32,
    /// Synthetic return variable introduced by the single-exit pass.
    pub ret_var: Option<VarId>,
    /// Set once the single-exit pass has run.
    pub single_exit: bool,
}

impl Function {
    pub fn signature(&self, vars: &[VarDecl]) -> Type {
        Type::Fn(
            self.params.iter().map(|p| vars[*p as usize].ty.clone()).collect(),
            Box::new(self.ret.clone()),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub structs: BTreeMap<String, StructDef>,
    pub vars: Vec<VarDecl>,
    pub globals: Vec<VarId>,
    pub functions: Vec<Function>,
    pub entry: FuncId,
    pub warnings: Vec<String>,
}

impl Program {
    pub fn var(&self, v: VarId) -> &VarDecl {
        &self.vars[v as usize]
    }

    pub fn func(&self, f: FuncId) -> &Function {
        &self.functions[f as usize]
    }

    pub fn func_by_name(&self, name: &str) -> Option<FuncId> {
        self.functions.iter().find(|f| f.name == name).map(|f| f.id)
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == name).map(|i| i as VarId)
    }

    pub fn add_var(&mut self, name: String, ty: Type, kind: VarKind) -> VarId {
        self.vars.push(VarDecl { name, ty, kind });
        (self.vars.len() - 1) as VarId
    }

    pub fn field_type(&self, sname: &str, field: &str) -> Option<&Type> {
        self.structs.get(sname).and_then(|s| s.field(field))
    }

    pub fn show_expr(&self, e: &Expr) -> String {
        match &e.kind {
            ExprKind::Int(v) => v.to_string(),
            ExprKind::Var(v) => self.var(*v).name.clone(),
            ExprKind::Func(f) => self.func(*f).name.clone(),
            ExprKind::AddrOf(a) => format!("&{}", self.show_expr(a)),
            ExprKind::Deref(a) => format!("*{}", self.show_expr(a)),
            ExprKind::Arrow(a, f) => format!("{}->{f}", self.show_expr(a)),
            ExprKind::Index(a, i) => format!("{}[{}]", self.show_expr(a), self.show_expr(i)),
            ExprKind::Malloc(t) => format!("malloc({t})"),
            ExprKind::Cast(t, a) => format!("({t}) {}", self.show_expr(a)),
            ExprKind::Unary(UnOp::Neg, a) => format!("-{}", self.show_expr(a)),
            ExprKind::Unary(UnOp::Not, a) => format!("!({})", self.show_expr(a)),
            ExprKind::Binary(op, a, b) => format!("({} {} {})", self.show_expr(a), op.symbol(), self.show_expr(b)),
        }
    }

    /// Functions whose identifier is used as a value somewhere (not as a direct callee).
    pub fn address_taken(&self) -> Vec<bool> {
        let mut taken = vec![false; self.functions.len()];
        for f in &self.functions {
            visit_exprs(&f.body, &mut |e| {
                e.walk(&mut |sub| {
                    if let ExprKind::Func(id) = sub.kind {
                        taken[id as usize] = true;
                    }
                })
            });
        }
        taken
    }
}

/// Calls `f` on every top-level expression appearing in `stmts`, recursively.
pub fn visit_exprs<'a>(stmts: &'a [Stmt], f: &mut dyn FnMut(&'a Expr)) {
    for s in stmts {
        match &s.kind {
            StmtKind::Assign(l, r) => {
                f(l);
                f(r);
            }
            StmtKind::If(c, a, b) => {
                f(c);
                visit_exprs(a, f);
                visit_exprs(b, f);
            }
            StmtKind::While(c, b) => {
                f(c);
                visit_exprs(b, f);
            }
            StmtKind::Call { args, .. } => args.iter().for_each(|a| f(a)),
            StmtKind::Return(Some(e)) | StmtKind::Lock(e) | StmtKind::Unlock(e) | StmtKind::Join(e) => f(e),
            StmtKind::Create { tid, thr, arg } => {
                f(tid);
                f(thr);
                f(arg);
            }
            StmtKind::Return(None) | StmtKind::GotoEnd | StmtKind::Skip => {}
        }
    }
}
