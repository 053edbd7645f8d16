use std::fmt::Write;

use super::ast::{Expr, Mode, Program, Stmt};

/// Canonical text for a program: one statement per line, four spaces per
/// block level, trailing newline.
pub fn render(program: &Program) -> String {
    let mut out = String::new();
    render_block(program, 0, &mut out);
    out
}

/// `render` prefixed with the `.mvp` mode header.
pub fn render_file(program: &Program, mode: Mode) -> String {
    format!("#mode={}\n{}", mode.as_str(), render(program))
}

fn render_block(program: &Program, level: usize, out: &mut String) {
    for stmt in &program.statements {
        render_stmt(stmt, level, out);
    }
}

fn render_stmt(stmt: &Stmt, level: usize, out: &mut String) {
    let pad = "    ".repeat(level);
    match stmt {
        Stmt::Call { name, args } => {
            let _ = writeln!(out, "{pad}{}", render_call(name, args));
        }
        Stmt::Assign { var, value } => {
            let _ = writeln!(out, "{pad}{var} = {}", render_expr(value));
        }
        Stmt::If { cond, then_branch, else_branch } => {
            let _ = writeln!(out, "{pad}if {}:", render_expr(cond));
            render_block(then_branch, level + 1, out);
            if let Some(else_branch) = else_branch {
                let _ = writeln!(out, "{pad}else:");
                render_block(else_branch, level + 1, out);
            }
        }
        Stmt::For { var, iterable, body } => {
            let _ = writeln!(out, "{pad}for {var} in {}:", render_expr(iterable));
            render_block(body, level + 1, out);
        }
        Stmt::Return { value } => {
            let _ = writeln!(out, "{pad}return {}", render_expr(value));
        }
    }
}

fn render_call(name: &str, args: &[Expr]) -> String {
    format!("{name}({})", render_list(args))
}

fn render_list(items: &[Expr]) -> String {
    items.iter().map(render_expr).collect::<Vec<_>>().join(", ")
}

pub fn render_expr(expr: &Expr) -> String {
    match expr {
        Expr::Str(s) => quote(s),
        Expr::Int(i) => i.to_string(),
        Expr::Float(f) => render_float(*f),
        Expr::Bool(b) => b.to_string(),
        Expr::Var(v) => v.clone(),
        Expr::Call { name, args } => render_call(name, args),
        Expr::Compare { op, lhs, rhs } => {
            format!("{} {} {}", operand(lhs), op.symbol(), operand(rhs))
        }
        Expr::List(items) => format!("[{}]", render_list(items)),
    }
}

fn operand(e: &Expr) -> String {
    match e {
        Expr::Compare { .. } => format!("({})", render_expr(e)),
        _ => render_expr(e),
    }
}

/// Shortest text that reads back to the same `f64`, always with a `.` or an
/// exponent so it lexes as a float.
fn render_float(f: f64) -> String {
    let s = format!("{f:?}");
    if s.contains(['.', 'e', 'E']) || !f.is_finite() {
        s
    } else {
        format!("{s}.0")
    }
}

pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}
