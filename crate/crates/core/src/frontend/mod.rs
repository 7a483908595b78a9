//! Mini-language frontend: lexing, parsing, checking, preprocessing and ICFA construction.

pub mod ast;
pub mod check;
pub mod dot;
pub mod icfa;
pub mod lexer;
pub mod parser;
pub mod preprocess;

use thiserror::Error;

pub use ast::Program;
pub use icfa::{build_icfa, Edge, EdgeId, Icfa, Loc, Op};
pub use preprocess::{remove_fp_calls, single_exit};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrontendError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: u32, col: u32, msg: String },
    #[error("type error at line {line}: {msg}")]
    Type { line: u32, msg: String },
    #[error("program has no main function")]
    MissingMain,
}

/// Parses and type-checks a source file. Preprocessing is separate.
pub fn parse(src: &str) -> Result<Program, FrontendError> {
    let raw = parser::Parser::new(src)?.parse_program()?;
    check::check(&raw)
}

/// parse + both preprocessing passes + ICFA.
pub fn load(src: &str) -> Result<(Program, Icfa), FrontendError> {
    let prog = single_exit(&remove_fp_calls(&parse(src)?));
    let icfa = build_icfa(&prog)?;
    Ok((prog, icfa))
}
