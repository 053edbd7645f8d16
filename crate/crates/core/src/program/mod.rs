//! The tool-call program language: AST, parser, renderer and interpreter.
//!
//! Two grammar modes share one AST. Flat mode is what the stage planners
//! emit: a sequence of calls such as `trim("end")`, plus plain assignments.
//! Extended mode adds `if`/`else`, `for` and `return` for single-stage
//! programs, which run through [`Interpreter`].

mod ast;
mod interp;
mod parser;
mod render;

pub use ast::{is_identifier, CmpOp, Expr, Mode, Program, Stmt, KEYWORDS};
pub use interp::{compare, interpret, CallTrace, Dispatch, Interpreter, RuntimeError, Value, DEFAULT_STEP_BUDGET};
pub use parser::{parse, parse_file, ParseError, MAX_DEPTH};
pub use render::{quote, render, render_expr, render_file};
