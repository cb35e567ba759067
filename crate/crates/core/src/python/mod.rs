//! Parsing and canonical rendering of the Python subset found in
//! deep-learning module definitions.

pub mod ast;
mod lexer;
mod parser;
mod unparse;

use std::fmt;

pub use ast::{Arg, Expr, Module, Stmt};
pub use parser::{parse_expression, parse_module};
pub use unparse::{render, unparse, unparse_expr, CallSite, Rendered};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(line: usize, col: usize, message: impl Into<String>) -> Self {
        ParseError {
            line,
            col,
            message: message.into(),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

impl std::error::Error for ParseError {}
