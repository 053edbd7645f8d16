//! Straightforward reference implementations used as test oracles.

use std::collections::BTreeMap;

use morevqa::program::{CallTrace, CmpOp, Expr, Program, Stmt, Value};

/// Outcome of the reference evaluator: the value or an error kind, plus
/// every completed call.
#[derive(Debug, PartialEq)]
pub struct RefRun {
    pub result: Result<Value, &'static str>,
    pub trace: Vec<CallTrace>,
}

struct Eval<'d> {
    env: BTreeMap<String, Value>,
    trace: Vec<CallTrace>,
    steps: usize,
    budget: usize,
    dispatch: &'d mut dyn FnMut(&str, &[Value]) -> Result<Value, String>,
}

enum Done {
    Value(Value),
    Returned(Value),
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Int(i) => Some(*i as f64),
        Value::Float(f) => Some(*f),
        _ => None,
    }
}

fn equal(a: &Value, b: &Value) -> bool {
    if let (Value::Int(x), Value::Int(y)) = (a, b) {
        return x == y;
    }
    if let (Value::List(x), Value::List(y)) = (a, b) {
        return x.len() == y.len() && x.iter().zip(y).all(|(p, q)| equal(p, q));
    }
    if let (Some(x), Some(y)) = (number(a), number(b)) {
        return x == y;
    }
    a == b
}

fn ordered(op: CmpOp, a: &Value, b: &Value) -> Result<bool, &'static str> {
    let ord = if let (Value::Int(x), Value::Int(y)) = (a, b) {
        x.partial_cmp(y)
    } else if let (Value::Str(x), Value::Str(y)) = (a, b) {
        x.partial_cmp(y)
    } else if let (Some(x), Some(y)) = (number(a), number(b)) {
        x.partial_cmp(&y)
    } else {
        return Err("type_mismatch");
    };
    let Some(ord) = ord else { return Ok(false) };
    Ok(match op {
        CmpOp::Lt => ord.is_lt(),
        CmpOp::Le => ord.is_le(),
        CmpOp::Gt => ord.is_gt(),
        CmpOp::Ge => ord.is_ge(),
        CmpOp::Eq | CmpOp::Ne => unreachable!(),
    })
}

fn truthy(v: &Value) -> bool {
    !matches!(v, Value::Null | Value::Bool(false) | Value::Int(0))
        && !matches!(v, Value::Float(f) if *f == 0.0)
        && !matches!(v, Value::Str(s) if s.is_empty())
        && !matches!(v, Value::List(l) if l.is_empty())
}

impl Eval<'_> {
    fn step(&mut self) -> Result<(), &'static str> {
        self.steps += 1;
        if self.steps > self.budget {
            Err("step_budget")
        } else {
            Ok(())
        }
    }

    fn expr(&mut self, e: &Expr) -> Result<Value, &'static str> {
        Ok(match e {
            Expr::Str(s) => Value::Str(s.clone()),
            Expr::Int(i) => Value::Int(*i),
            Expr::Float(f) => Value::Float(*f),
            Expr::Bool(b) => Value::Bool(*b),
            Expr::Var(v) => self.env.get(v).cloned().ok_or("unbound_variable")?,
            Expr::List(items) => {
                let mut out = Vec::new();
                for i in items {
                    out.push(self.expr(i)?);
                }
                Value::List(out)
            }
            Expr::Call { name, args } => self.call(name, args)?,
            Expr::Compare { op, lhs, rhs } => {
                let a = self.expr(lhs)?;
                let b = self.expr(rhs)?;
                Value::Bool(match op {
                    CmpOp::Eq => equal(&a, &b),
                    CmpOp::Ne => !equal(&a, &b),
                    _ => ordered(*op, &a, &b)?,
                })
            }
        })
    }

    fn call(&mut self, name: &str, args: &[Expr]) -> Result<Value, &'static str> {
        let mut vals = Vec::new();
        for a in args {
            vals.push(self.expr(a)?);
        }
        self.step()?;
        let result = (self.dispatch)(name, &vals).map_err(|_| "dispatch")?;
        self.trace.push(CallTrace { name: name.to_owned(), args: vals, result: result.clone() });
        Ok(result)
    }

    fn block(&mut self, p: &Program, mut last: Value) -> Result<Done, &'static str> {
        for s in &p.statements {
            self.step()?;
            last = match s {
                Stmt::Call { name, args } => self.call(name, args)?,
                Stmt::Assign { var, value } => {
                    let v = self.expr(value)?;
                    self.env.insert(var.clone(), v.clone());
                    v
                }
                Stmt::Return { value } => return Ok(Done::Returned(self.expr(value)?)),
                Stmt::If { cond, then_branch, else_branch } => {
                    let branch = if truthy(&self.expr(cond)?) { Some(then_branch) } else { else_branch.as_ref() };
                    match branch {
                        None => last,
                        Some(b) => match self.block(b, last)? {
                            Done::Value(v) => v,
                            r @ Done::Returned(_) => return Ok(r),
                        },
                    }
                }
                Stmt::For { var, iterable, body } => {
                    let Value::List(items) = self.expr(iterable)? else { return Err("not_iterable") };
                    for item in items {
                        self.env.insert(var.clone(), item);
                        last = match self.block(body, last)? {
                            Done::Value(v) => v,
                            r @ Done::Returned(_) => return Ok(r),
                        };
                    }
                    last
                }
            };
        }
        Ok(Done::Value(last))
    }
}

pub fn reference_eval(
    program: &Program,
    env: BTreeMap<String, Value>,
    budget: usize,
    dispatch: &mut dyn FnMut(&str, &[Value]) -> Result<Value, String>,
) -> RefRun {
    let mut ev = Eval { env, trace: Vec::new(), steps: 0, budget, dispatch };
    let result = ev.block(program, Value::Null).map(|d| match d {
        Done::Value(v) | Done::Returned(v) => v,
    });
    RefRun { result, trace: ev.trace }
}

/// Deterministic stub tools for interpreter tests.
pub fn stub_dispatch(name: &str, args: &[Value]) -> Result<Value, String> {
    match name {
        "count" => Ok(Value::Int(args.len() as i64)),
        "pack" => Ok(Value::List(args.to_vec())),
        "text" => Ok(Value::Str(args.iter().map(Value::to_text).collect::<Vec<_>>().join("|"))),
        "frames" => Ok(Value::List((0..args.len() as i64 % 4).map(Value::Int).collect())),
        "fail" => Err("stub failure".into()),
        _ => Ok(Value::Bool(args.len().is_multiple_of(2))),
    }
}

/// Frames `[k, k + 1)` (in ms) covered by both intervals, counted one by one.
pub fn ms_overlap(a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0.min(b.0)..a.1.max(b.1)).filter(|&k| a.0 <= k && k < a.1 && b.0 <= k && k < b.1).count() as i64
}

pub fn ms_len(a: (i64, i64)) -> i64 {
    (a.0..a.1).count() as i64
}
