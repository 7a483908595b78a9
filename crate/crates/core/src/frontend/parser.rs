//! Recursive-descent parser producing an unresolved syntax tree.

use super::ast::{BinOp, Type, UnOp};
use super::lexer::{lex, Tok, Token};
use super::FrontendError;

#[derive(Clone, Debug)]
pub enum RExpr {
    Int(i64),
    Name(String),
    AddrOf(Box<RExpr>),
    Deref(Box<RExpr>),
    Arrow(Box<RExpr>, String),
    Index(Box<RExpr>, Box<RExpr>),
    Malloc(Type),
    Cast(Type, Box<RExpr>),
    Unary(UnOp, Box<RExpr>),
    Binary(BinOp, Box<RExpr>, Box<RExpr>),
}

#[derive(Clone, Debug)]
pub enum RStmtKind {
    Decl(Type, String, Option<RExpr>),
    Assign(RExpr, RExpr),
    Call(Option<String>, String, Vec<RExpr>),
    If(RExpr, Vec<RStmt>, Vec<RStmt>),
    While(RExpr, Vec<RStmt>),
    Return(Option<RExpr>),
    Lock(RExpr),
    Unlock(RExpr),
    Create(RExpr, RExpr, RExpr),
    Join(RExpr),
    Skip,
}

#[derive(Clone, Debug)]
pub struct RStmt {
    pub kind: RStmtKind,
    pub line: u32,
    pub col: u32,
}

#[derive(Clone, Debug)]
pub struct RFunc {
    pub ret: Type,
    pub name: String,
    pub params: Vec<(Type, String)>,
    pub body: Vec<RStmt>,
    pub line: u32,
    pub col: u32,
}

#[derive(Clone, Debug, Default)]
pub struct RProgram {
    pub structs: Vec<(String, Vec<(Type, String)>, u32)>,
    pub globals: Vec<(Type, String, u32)>,
    pub funcs: Vec<RFunc>,
}

pub struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

const TYPE_WORDS: &[&str] = &["int", "mutex", "tid", "void", "struct", "fn"];

impl Parser {
    pub fn new(src: &str) -> Result<Parser, FrontendError> {
        Ok(Parser { toks: lex(src)?, pos: 0 })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> (u32, u32) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, FrontendError> {
        let (line, col) = self.here();
        Err(FrontendError::Syntax { line, col, msg: msg.into() })
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == w)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, p: &str) -> Result<(), FrontendError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.err(format!("expected '{p}', found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self) -> Result<String, FrontendError> {
        match self.peek().clone() {
            Tok::Ident(s) if !is_keyword(&s) => {
                self.bump();
                Ok(s)
            }
            t => self.err(format!("expected identifier, found {}", describe(&t))),
        }
    }

    fn at_type(&self) -> bool {
        matches!(self.peek(), Tok::Ident(s) if TYPE_WORDS.contains(&s.as_str()))
    }

    pub fn parse_type(&mut self) -> Result<Type, FrontendError> {
        let word = match self.peek().clone() {
            Tok::Ident(s) => s,
            t => return self.err(format!("expected type, found {}", describe(&t))),
        };
        let mut ty = match word.as_str() {
            "int" => {
                self.bump();
                Type::Int
            }
            "mutex" => {
                self.bump();
                Type::Mutex
            }
            "tid" => {
                self.bump();
                Type::Tid
            }
            "void" => {
                self.bump();
                Type::Void
            }
            "struct" => {
                self.bump();
                Type::Struct(self.ident()?)
            }
            "fn" => {
                self.bump();
                self.expect("(")?;
                let mut ps = Vec::new();
                if !self.is_punct(")") {
                    loop {
                        ps.push(self.parse_type()?);
                        if !self.eat_punct(",") {
                            break;
                        }
                    }
                }
                self.expect(")")?;
                self.expect("->")?;
                let r = self.parse_type()?;
                Type::Fn(ps, Box::new(r))
            }
            _ => return self.err(format!("expected type, found '{word}'")),
        };
        while self.eat_punct("*") {
            ty = Type::ptr(ty);
        }
        Ok(ty)
    }

    fn array_suffix(&mut self, ty: Type) -> Result<Type, FrontendError> {
        if self.eat_punct("[") {
            let n = match self.bump() {
                Tok::Int(n) if n > 0 => n as usize,
                _ => return self.err("expected positive array size"),
            };
            self.expect("]")?;
            Ok(Type::Array(Box::new(ty), n))
        } else {
            Ok(ty)
        }
    }

    pub fn parse_program(&mut self) -> Result<RProgram, FrontendError> {
        let mut prog = RProgram::default();
        while *self.peek() != Tok::Eof {
            let (line, col) = self.here();
            if self.is_word("struct") && matches!(self.peek_at(2), Tok::Punct("{")) {
                self.bump();
                let name = self.ident()?;
                self.expect("{")?;
                let mut fields = Vec::new();
                while !self.eat_punct("}") {
                    let t = self.parse_type()?;
                    let f = self.ident()?;
                    let t = self.array_suffix(t)?;
                    self.expect(";")?;
                    fields.push((t, f));
                }
                self.expect(";")?;
                prog.structs.push((name, fields, line));
                continue;
            }
            let ty = self.parse_type()?;
            let name = self.ident()?;
            if self.eat_punct("(") {
                let mut params = Vec::new();
                if !self.is_punct(")") {
                    loop {
                        let t = self.parse_type()?;
                        let n = self.ident()?;
                        params.push((t, n));
                        if !self.eat_punct(",") {
                            break;
                        }
                    }
                }
                self.expect(")")?;
                let body = self.block()?;
                prog.funcs.push(RFunc { ret: ty, name, params, body, line, col });
            } else {
                let ty = self.array_suffix(ty)?;
                self.expect(";")?;
                prog.globals.push((ty, name, line));
            }
        }
        Ok(prog)
    }

    fn block(&mut self) -> Result<Vec<RStmt>, FrontendError> {
        self.expect("{")?;
        let mut out = Vec::new();
        while !self.eat_punct("}") {
            if *self.peek() == Tok::Eof {
                return self.err("unexpected end of input, expected '}'");
            }
            out.push(self.stmt()?);
        }
        Ok(out)
    }

    fn stmt(&mut self) -> Result<RStmt, FrontendError> {
        let (line, col) = self.here();
        let mk = |kind| Ok(RStmt { kind, line, col });
        if self.at_type() {
            let t = self.parse_type()?;
            let n = self.ident()?;
            let t = self.array_suffix(t)?;
            let init = if self.eat_punct("=") { Some(self.expr()?) } else { None };
            self.expect(";")?;
            return mk(RStmtKind::Decl(t, n, init));
        }
        if self.eat_punct(";") {
            return mk(RStmtKind::Skip);
        }
        let word = match self.peek() {
            Tok::Ident(s) => Some(s.clone()),
            _ => None,
        };
        match word.as_deref() {
            Some("if") => {
                self.bump();
                self.expect("(")?;
                let c = self.expr()?;
                self.expect(")")?;
                let a = self.block()?;
                let b = if self.is_word("else") {
                    self.bump();
                    if self.is_word("if") {
                        vec![self.stmt()?]
                    } else {
                        self.block()?
                    }
                } else {
                    Vec::new()
                };
                mk(RStmtKind::If(c, a, b))
            }
            Some("while") => {
                self.bump();
                self.expect("(")?;
                let c = self.expr()?;
                self.expect(")")?;
                let b = self.block()?;
                mk(RStmtKind::While(c, b))
            }
            Some("return") => {
                self.bump();
                let e = if self.is_punct(";") { None } else { Some(self.expr()?) };
                self.expect(";")?;
                mk(RStmtKind::Return(e))
            }
            Some(w @ ("lock" | "unlock" | "join")) => {
                let w = w.to_string();
                self.bump();
                self.expect("(")?;
                let e = self.expr()?;
                self.expect(")")?;
                self.expect(";")?;
                mk(match w.as_str() {
                    "lock" => RStmtKind::Lock(e),
                    "unlock" => RStmtKind::Unlock(e),
                    _ => RStmtKind::Join(e),
                })
            }
            Some("create") => {
                self.bump();
                self.expect("(")?;
                let t = self.expr()?;
                self.expect(",")?;
                let f = self.expr()?;
                self.expect(",")?;
                let a = self.expr()?;
                self.expect(")")?;
                self.expect(";")?;
                mk(RStmtKind::Create(t, f, a))
            }
            Some(name) if !is_keyword(name) && matches!(self.peek_at(1), Tok::Punct("(")) => {
                let name = name.to_string();
                self.bump();
                let args = self.call_args()?;
                self.expect(";")?;
                mk(RStmtKind::Call(None, name, args))
            }
            Some(name)
                if !is_keyword(name)
                    && matches!(self.peek_at(1), Tok::Punct("="))
                    && matches!(self.peek_at(2), Tok::Ident(s) if !is_keyword(s))
                    && matches!(self.peek_at(3), Tok::Punct("(")) =>
            {
                let lhs = name.to_string();
                self.bump();
                self.bump();
                let callee = self.ident()?;
                let args = self.call_args()?;
                self.expect(";")?;
                mk(RStmtKind::Call(Some(lhs), callee, args))
            }
            _ => {
                let l = self.expr()?;
                self.expect("=")?;
                let r = self.expr()?;
                self.expect(";")?;
                mk(RStmtKind::Assign(l, r))
            }
        }
    }

    fn call_args(&mut self) -> Result<Vec<RExpr>, FrontendError> {
        self.expect("(")?;
        let mut args = Vec::new();
        if !self.is_punct(")") {
            loop {
                args.push(self.expr()?);
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect(")")?;
        Ok(args)
    }

    pub fn expr(&mut self) -> Result<RExpr, FrontendError> {
        self.binary(0)
    }

    fn binary(&mut self, min_prec: u8) -> Result<RExpr, FrontendError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Punct(p) => match *p {
                    "||" => BinOp::Or,
                    "&&" => BinOp::And,
                    "==" => BinOp::Eq,
                    "!=" => BinOp::Ne,
                    "<" => BinOp::Lt,
                    "<=" => BinOp::Le,
                    ">" => BinOp::Gt,
                    ">=" => BinOp::Ge,
                    "+" => BinOp::Add,
                    "-" => BinOp::Sub,
                    "*" => BinOp::Mul,
                    "/" => BinOp::Div,
                    "%" => BinOp::Mod,
                    _ => break,
                },
                _ => break,
            };
            let prec = precedence(op);
            if prec < min_prec {
                break;
            }
            self.bump();
            let rhs = self.binary(prec + 1)?;
            lhs = RExpr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<RExpr, FrontendError> {
        if self.eat_punct("-") {
            return Ok(RExpr::Unary(UnOp::Neg, Box::new(self.unary()?)));
        }
        if self.eat_punct("!") {
            return Ok(RExpr::Unary(UnOp::Not, Box::new(self.unary()?)));
        }
        if self.eat_punct("&") {
            return Ok(RExpr::AddrOf(Box::new(self.unary()?)));
        }
        if self.eat_punct("*") {
            return Ok(RExpr::Deref(Box::new(self.unary()?)));
        }
        if self.is_punct("(") && matches!(self.peek_at(1), Tok::Ident(s) if TYPE_WORDS.contains(&s.as_str())) {
            self.bump();
            let t = self.parse_type()?;
            self.expect(")")?;
            return Ok(RExpr::Cast(t, Box::new(self.unary()?)));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<RExpr, FrontendError> {
        let mut e = self.primary()?;
        loop {
            if self.eat_punct("->") {
                let f = self.ident()?;
                e = RExpr::Arrow(Box::new(e), f);
            } else if self.eat_punct("[") {
                let i = self.expr()?;
                self.expect("]")?;
                e = RExpr::Index(Box::new(e), Box::new(i));
            } else {
                return Ok(e);
            }
        }
    }

    fn primary(&mut self) -> Result<RExpr, FrontendError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(RExpr::Int(v))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Ident(s) if s == "malloc" => {
                self.bump();
                self.expect("(")?;
                let t = self.parse_type()?;
                self.expect(")")?;
                Ok(RExpr::Malloc(t))
            }
            Tok::Ident(s) if !is_keyword(&s) => {
                self.bump();
                Ok(RExpr::Name(s))
            }
            t => self.err(format!("expected expression, found {}", describe(&t))),
        }
    }
}

fn precedence(op: BinOp) -> u8 {
    match op {
        BinOp::Or => 1,
        BinOp::And => 2,
        BinOp::Eq | BinOp::Ne => 3,
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
        BinOp::Add | BinOp::Sub => 5,
        BinOp::Mul | BinOp::Div | BinOp::Mod => 6,
    }
}

fn is_keyword(s: &str) -> bool {
    matches!(
        s,
        "if" | "else" | "while" | "return" | "lock" | "unlock" | "create" | "join" | "malloc"
    ) || TYPE_WORDS.contains(&s)
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("'{s}'"),
        Tok::Int(v) => format!("'{v}'"),
        Tok::Punct(p) => format!("'{p}'"),
        Tok::Eof => "end of input".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(src: &str) -> Result<RProgram, FrontendError> {
        Parser::new(src)?.parse_program()
    }

    #[test]
    fn precedence_climbs() {
        let mut p = Parser::new("a + b * c == d").unwrap();
        match p.expr().unwrap() {
            RExpr::Binary(BinOp::Eq, l, _) => {
                assert!(matches!(*l, RExpr::Binary(BinOp::Add, _, _)))
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn call_vs_assign() {
        let p = parse("int main() { int r; r = f(1); g(); r = x; x = malloc(int); return 0; }").unwrap();
        let b = &p.funcs[0].body;
        assert!(matches!(&b[1].kind, RStmtKind::Call(Some(l), c, a) if l == "r" && c == "f" && a.len() == 1));
        assert!(matches!(&b[2].kind, RStmtKind::Call(None, c, _) if c == "g"));
        assert!(matches!(&b[3].kind, RStmtKind::Assign(..)));
        assert!(matches!(&b[4].kind, RStmtKind::Assign(_, RExpr::Malloc(Type::Int))));
    }

    #[test]
    fn syntax_error_position() {
        match parse("int main() {\n  x = ;\n}") {
            Err(FrontendError::Syntax { line, col, .. }) => assert_eq!((line, col), (2, 7)),
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn fn_pointer_type_and_cast() {
        let p = parse("fn(int*) -> int fp; int main() { int* q; q = (int*) 5; return 0; }").unwrap();
        assert_eq!(
            p.globals[0].0,
            Type::Fn(vec![Type::ptr(Type::Int)], Box::new(Type::Int))
        );
    }
}
