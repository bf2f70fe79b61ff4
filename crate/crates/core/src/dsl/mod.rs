//! `.mfd` source language: parsing, type checking and lowering to a
//! [`MatrixDfg`](crate::dfg::MatrixDfg).
//!
//! ```text
//! // ProtoNN-style fragment
//! int[4][8] W; int[8] x; int[4] p;
//! p = relu(W * x)
//! ```

pub mod ast;
mod lexer;
mod lower;
mod parser;
mod pretty;
mod typeck;

use std::fmt;

use thiserror::Error;

pub use ast::{
    Ast, BinOp, Builtin, DeclType, Expr, ExprKind, Literal, Span, Sparsity, Stmt, StmtKind,
};
pub use lower::{lower_to_dfg, lower_with_map, LowerError, Lowered};
pub use parser::parse;
pub use pretty::pretty_print;
pub use typeck::{type_check, SymbolTable, TensorType, TypeError};

use crate::dfg::MatrixDfg;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    UnterminatedLiteral,
    UnknownToken,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: u32,
    pub col: u32,
    pub message: String,
}

impl ParseError {
    pub(crate) fn syntax(line: u32, col: u32, message: impl Into<String>) -> Self {
        ParseError {
            kind: ParseErrorKind::Syntax,
            line,
            col,
            message: message.into(),
        }
    }

    pub(crate) fn unterminated(line: u32, col: u32) -> Self {
        ParseError {
            kind: ParseErrorKind::UnterminatedLiteral,
            line,
            col,
            message: "unterminated literal".into(),
        }
    }

    pub(crate) fn unknown_token(line: u32, col: u32, ch: char) -> Self {
        ParseError {
            kind: ParseErrorKind::UnknownToken,
            line,
            col,
            message: format!("unknown token `{ch}`"),
        }
    }
}

/// Any frontend failure, each carrying a source position.
#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("syntax error at {0}")]
    Parse(#[from] ParseError),
    #[error("type error at {0}")]
    Type(#[from] TypeError),
    #[error("lowering error at {0}")]
    Lower(#[from] LowerError),
}

impl FrontendError {
    pub fn position(&self) -> (u32, u32) {
        match self {
            FrontendError::Parse(e) => (e.line, e.col),
            FrontendError::Type(e) => (e.span().line, e.span().col),
            FrontendError::Lower(e) => e.span().map_or((0, 0), |s| (s.line, s.col)),
        }
    }
}

/// Result of running the full frontend on a source text.
#[derive(Debug)]
pub struct Compiled {
    pub ast: Ast,
    pub symbols: SymbolTable,
    pub dfg: MatrixDfg,
}

pub fn compile_source(src: &str) -> Result<Compiled, FrontendError> {
    let ast = parse(src)?;
    let symbols = type_check(&ast)?;
    let dfg = lower_to_dfg(&ast, &symbols)?;
    Ok(Compiled { ast, symbols, dfg })
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParseErrorKind::Syntax => "syntax",
            ParseErrorKind::UnterminatedLiteral => "unterminated literal",
            ParseErrorKind::UnknownToken => "unknown token",
        })
    }
}
