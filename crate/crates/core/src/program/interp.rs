//! Tree-walking interpreter for extended-mode programs.
//!
//! Statements run in order against a flat variable scope. Every call, whether
//! written as a statement or nested in an expression, goes to the dispatcher
//! and is appended to the call trace. Each executed statement and each
//! dispatched call costs one step; exceeding the budget aborts the run.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ast::{CmpOp, Expr, Program, Stmt};

pub const DEFAULT_STEP_BUDGET: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    #[default]
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<Value>),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Str(_) => "string",
            Value::List(_) => "list",
        }
    }

    pub fn truthy(&self) -> bool {
        match self {
            Value::Null => false,
            Value::Bool(b) => *b,
            Value::Int(i) => *i != 0,
            Value::Float(f) => *f != 0.0,
            Value::Str(s) => !s.is_empty(),
            Value::List(v) => !v.is_empty(),
        }
    }

    fn as_number(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    /// Equality with numeric coercion between ints and floats.
    pub fn loose_eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::List(a), Value::List(b)) => a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.loose_eq(y)),
            _ => match (self.as_number(), other.as_number()) {
                (Some(a), Some(b)) => a == b,
                _ => self == other,
            },
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }

    /// Converts JSON into a value; objects have no counterpart.
    pub fn from_json(v: &serde_json::Value) -> Option<Value> {
        Some(match v {
            serde_json::Value::Null => Value::Null,
            serde_json::Value::Bool(b) => Value::Bool(*b),
            serde_json::Value::Number(n) => match n.as_i64() {
                Some(i) => Value::Int(i),
                None => Value::Float(n.as_f64()?),
            },
            serde_json::Value::String(s) => Value::Str(s.clone()),
            serde_json::Value::Array(items) => Value::List(items.iter().map(Value::from_json).collect::<Option<_>>()?),
            serde_json::Value::Object(_) => return None,
        })
    }

    /// Text form used when a value becomes an answer.
    pub fn to_text(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Str(s) => s.clone(),
            Value::Bool(b) => b.to_string(),
            Value::Int(i) => i.to_string(),
            Value::Float(f) => f.to_string(),
            Value::List(items) => items.iter().map(Value::to_text).collect::<Vec<_>>().join(", "),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_owned())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Str(s)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallTrace {
    pub name: String,
    pub args: Vec<Value>,
    pub result: Value,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RuntimeError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("`for` expects a list, found {0}")]
    NotIterable(&'static str),
    #[error("call to `{name}` failed: {message}")]
    Dispatch { name: String, message: String },
    #[error("step budget of {0} exceeded")]
    StepBudget(usize),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
}

impl RuntimeError {
    /// Short stable label for failure breakdowns.
    pub fn kind(&self) -> &'static str {
        match self {
            RuntimeError::UnboundVariable(_) => "unbound_variable",
            RuntimeError::NotIterable(_) => "not_iterable",
            RuntimeError::Dispatch { .. } => "dispatch",
            RuntimeError::StepBudget(_) => "step_budget",
            RuntimeError::TypeMismatch(_) => "type_mismatch",
        }
    }
}

/// Resolves calls made by a program.
pub trait Dispatch {
    fn dispatch(&mut self, name: &str, args: &[Value]) -> Result<Value, String>;
}

impl<F> Dispatch for F
where
    F: FnMut(&str, &[Value]) -> Result<Value, String>,
{
    fn dispatch(&mut self, name: &str, args: &[Value]) -> Result<Value, String> {
        self(name, args)
    }
}

enum Flow {
    Next(Value),
    Return(Value),
}

pub struct Interpreter<D> {
    dispatch: D,
    env: BTreeMap<String, Value>,
    trace: Vec<CallTrace>,
    steps: usize,
    budget: usize,
}

impl<D: Dispatch> Interpreter<D> {
    pub fn new(dispatch: D) -> Self {
        Self { dispatch, env: BTreeMap::new(), trace: Vec::new(), steps: 0, budget: DEFAULT_STEP_BUDGET }
    }

    pub fn with_env(mut self, env: BTreeMap<String, Value>) -> Self {
        self.env = env;
        self
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn trace(&self) -> &[CallTrace] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<CallTrace> {
        self.trace
    }

    pub fn env(&self) -> &BTreeMap<String, Value> {
        &self.env
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Runs the program; the result is the returned value or, without a
    /// `return`, the value of the last executed statement.
    pub fn run(&mut self, program: &Program) -> Result<Value, RuntimeError> {
        match self.block(program, Value::Null)? {
            Flow::Next(v) | Flow::Return(v) => Ok(v),
        }
    }

    fn tick(&mut self) -> Result<(), RuntimeError> {
        self.steps += 1;
        if self.steps > self.budget {
            Err(RuntimeError::StepBudget(self.budget))
        } else {
            Ok(())
        }
    }

    fn block(&mut self, program: &Program, mut last: Value) -> Result<Flow, RuntimeError> {
        for stmt in &program.statements {
            match self.stmt(stmt, last)? {
                Flow::Next(v) => last = v,
                ret @ Flow::Return(_) => return Ok(ret),
            }
        }
        Ok(Flow::Next(last))
    }

    fn stmt(&mut self, stmt: &Stmt, last: Value) -> Result<Flow, RuntimeError> {
        self.tick()?;
        match stmt {
            Stmt::Call { name, args } => Ok(Flow::Next(self.call(name, args)?)),
            Stmt::Assign { var, value } => {
                let v = self.eval(value)?;
                self.env.insert(var.clone(), v.clone());
                Ok(Flow::Next(v))
            }
            Stmt::If { cond, then_branch, else_branch } => {
                if self.eval(cond)?.truthy() {
                    self.block(then_branch, last)
                } else if let Some(else_branch) = else_branch {
                    self.block(else_branch, last)
                } else {
                    Ok(Flow::Next(last))
                }
            }
            Stmt::For { var, iterable, body } => {
                let items = match self.eval(iterable)? {
                    Value::List(items) => items,
                    other => return Err(RuntimeError::NotIterable(other.type_name())),
                };
                let mut last = last;
                for item in items {
                    self.env.insert(var.clone(), item);
                    match self.block(body, last)? {
                        Flow::Next(v) => last = v,
                        ret @ Flow::Return(_) => return Ok(ret),
                    }
                }
                Ok(Flow::Next(last))
            }
            Stmt::Return { value } => Ok(Flow::Return(self.eval(value)?)),
        }
    }

    fn call(&mut self, name: &str, args: &[Expr]) -> Result<Value, RuntimeError> {
        let args = args.iter().map(|a| self.eval(a)).collect::<Result<Vec<_>, _>>()?;
        self.tick()?;
        let result = self
            .dispatch
            .dispatch(name, &args)
            .map_err(|message| RuntimeError::Dispatch { name: name.to_owned(), message })?;
        self.trace.push(CallTrace { name: name.to_owned(), args, result: result.clone() });
        Ok(result)
    }

    fn eval(&mut self, expr: &Expr) -> Result<Value, RuntimeError> {
        match expr {
            Expr::Str(s) => Ok(Value::Str(s.clone())),
            Expr::Int(i) => Ok(Value::Int(*i)),
            Expr::Float(f) => Ok(Value::Float(*f)),
            Expr::Bool(b) => Ok(Value::Bool(*b)),
            Expr::Var(name) => self.env.get(name).cloned().ok_or_else(|| RuntimeError::UnboundVariable(name.clone())),
            Expr::Call { name, args } => self.call(name, args),
            Expr::List(items) => Ok(Value::List(items.iter().map(|e| self.eval(e)).collect::<Result<_, _>>()?)),
            Expr::Compare { op, lhs, rhs } => {
                let l = self.eval(lhs)?;
                let r = self.eval(rhs)?;
                compare(*op, &l, &r).map(Value::Bool)
            }
        }
    }
}

pub fn compare(op: CmpOp, l: &Value, r: &Value) -> Result<bool, RuntimeError> {
    match op {
        CmpOp::Eq => return Ok(l.loose_eq(r)),
        CmpOp::Ne => return Ok(!l.loose_eq(r)),
        _ => {}
    }
    let ord = match (l, r) {
        (Value::Int(a), Value::Int(b)) => Some(a.cmp(b)),
        (Value::Str(a), Value::Str(b)) => Some(a.cmp(b)),
        _ => match (l.as_number(), r.as_number()) {
            (Some(a), Some(b)) => a.partial_cmp(&b),
            _ => {
                return Err(RuntimeError::TypeMismatch(format!(
                    "cannot compare {} {} {}",
                    l.type_name(),
                    op.symbol(),
                    r.type_name()
                )))
            }
        },
    };
    Ok(match (op, ord) {
        (_, None) => false,
        (CmpOp::Lt, Some(o)) => o == Ordering::Less,
        (CmpOp::Le, Some(o)) => o != Ordering::Greater,
        (CmpOp::Gt, Some(o)) => o == Ordering::Greater,
        (CmpOp::Ge, Some(o)) => o != Ordering::Less,
        (CmpOp::Eq | CmpOp::Ne, _) => unreachable!("handled above"),
    })
}

/// Runs `program` with a fresh interpreter and returns its value.
pub fn interpret<D: Dispatch>(
    program: &Program,
    env: BTreeMap<String, Value>,
    dispatch: D,
) -> Result<(Value, Vec<CallTrace>), RuntimeError> {
    let mut interp = Interpreter::new(dispatch).with_env(env);
    let v = interp.run(program)?;
    Ok((v, interp.into_trace()))
}
