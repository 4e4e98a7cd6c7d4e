//! The structured loop-nest kernel language: parser, printer, interpreter
//! and operation counter.

mod ast;
mod emit;
mod interp;
mod lexer;
mod parser;

pub use ast::*;
pub use emit::{assign_to_string, emit_source, expr_to_string, stmt_summary, write_stmts};
pub use interp::{
    count_operations, eval_expr, execute, execute_stmts, interpret, measure, states_equal, Array, ExecEnv,
    MeasureMode, Mismatch, OpCount, Value,
};
pub use lexer::{tokenize, Tok, Token};
pub use parser::{parse_expr, parse_kernel, Cursor};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("line {line}: index {index:?} out of bounds for `{array}` with extents {extents:?} in `{stmt}`")]
    OutOfBounds { line: usize, stmt: String, array: String, index: Vec<i64>, extents: Vec<usize> },
    #[error("unbound name `{0}`")]
    Unbound(String),
    #[error("unknown array `{0}`")]
    UnknownArray(String),
    #[error("`{name}` used with rank {used}, declared with rank {declared}")]
    Rank { name: String, used: usize, declared: usize },
    #[error("{0}")]
    Type(String),
    #[error("integer overflow in `{0}`")]
    Overflow(String),
    #[error("cannot infer extents of `{array}`: {reason}")]
    Extent { array: String, reason: String },
    #[error("operation count is data dependent: {0}")]
    NotAnalyzable(String),
}

impl KernelError {
    pub fn syntax(line: usize, col: usize, msg: impl Into<String>) -> Self {
        KernelError::Syntax { line, col, msg: msg.into() }
    }
}
