//! Random program generation.

use morevqa::program::{CmpOp, Expr, Mode, Program, Stmt, KEYWORDS};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const STRING_CHARS: &[char] = &[
    'a', 'b', 'z', 'Q', '0', '9', ' ', '_', '"', '\\', '\n', '\t', '\r', '#', ':', '(', ')', ',', '[', ']', '=', '<',
    'é', '→', '日',
];

pub struct AstGen {
    pub rng: ChaCha8Rng,
    pub mode: Mode,
    /// Names used for variables and calls; `None` draws fresh identifiers.
    pub vars: Option<Vec<&'static str>>,
    pub calls: Option<Vec<&'static str>>,
    pub max_expr_depth: usize,
    pub max_block_depth: usize,
}

impl AstGen {
    pub fn new(rng: ChaCha8Rng, mode: Mode) -> Self {
        Self { rng, mode, vars: None, calls: None, max_expr_depth: 5, max_block_depth: 3 }
    }

    fn fresh_ident(&mut self) -> String {
        loop {
            let len = self.rng.gen_range(1..8);
            let first = b"abcdefghijklmnopqrstuvwxyz_ABCXYZ";
            let rest = b"abcdefghijklmnopqrstuvwxyz_0123456789";
            let mut s = String::new();
            s.push(first[self.rng.gen_range(0..first.len())] as char);
            for _ in 1..len {
                s.push(rest[self.rng.gen_range(0..rest.len())] as char);
            }
            if !KEYWORDS.contains(&s.as_str()) {
                return s;
            }
        }
    }

    pub fn var_name(&mut self) -> String {
        match &self.vars {
            Some(pool) => pool.choose(&mut self.rng).expect("non-empty pool").to_string(),
            None => self.fresh_ident(),
        }
    }

    fn call_name(&mut self) -> String {
        match &self.calls {
            Some(pool) => pool.choose(&mut self.rng).expect("non-empty pool").to_string(),
            None => self.fresh_ident(),
        }
    }

    fn string(&mut self) -> String {
        let len = self.rng.gen_range(0..10);
        (0..len).map(|_| *STRING_CHARS.choose(&mut self.rng).expect("chars")).collect()
    }

    fn float(&mut self) -> f64 {
        match self.rng.gen_range(0..5) {
            0 => self.rng.gen_range(-1000.0..1000.0),
            1 => self.rng.gen_range(-1.0..1.0) * 1e-9,
            2 => self.rng.gen_range(-1.0..1.0) * 1e300,
            3 => self.rng.gen_range(0..100) as f64,
            _ => self.rng.gen::<f64>(),
        }
    }

    fn int(&mut self) -> i64 {
        match self.rng.gen_range(0..4) {
            0 => self.rng.gen(),
            1 => *[i64::MIN, i64::MAX, 0, -1].choose(&mut self.rng).expect("ints"),
            _ => self.rng.gen_range(-20..20),
        }
    }

    pub fn leaf(&mut self) -> Expr {
        match self.rng.gen_range(0..6) {
            0 => Expr::Str(self.string()),
            1 => Expr::Int(self.int()),
            2 => Expr::Float(self.float()),
            3 => Expr::Bool(self.rng.gen()),
            _ => Expr::Var(self.var_name()),
        }
    }

    /// An expression with `depth()` at most `budget`.
    pub fn expr(&mut self, budget: usize) -> Expr {
        if budget <= 1 || self.rng.gen_bool(0.4) {
            return self.leaf();
        }
        match self.rng.gen_range(0..3) {
            0 => {
                let n = self.rng.gen_range(0..4);
                let name = self.call_name();
                Expr::Call { name, args: (0..n).map(|_| self.expr(budget - 1)).collect() }
            }
            1 => {
                let n = self.rng.gen_range(0..4);
                Expr::List((0..n).map(|_| self.expr(budget - 1)).collect())
            }
            _ => {
                let op = *CmpOp::ALL.choose(&mut self.rng).expect("ops");
                Expr::compare(op, self.expr(budget - 1), self.expr(budget - 1))
            }
        }
    }

    fn call_stmt(&mut self) -> Stmt {
        let n = self.rng.gen_range(0..4);
        let name = self.call_name();
        let budget = self.max_expr_depth - 1;
        Stmt::Call { name, args: (0..n).map(|_| self.expr(budget)).collect() }
    }

    fn block(&mut self, level: usize) -> Program {
        let n = self.rng.gen_range(1..4);
        Program::new((0..n).map(|_| self.stmt(level)).collect())
    }

    pub fn stmt(&mut self, level: usize) -> Stmt {
        let budget = self.max_expr_depth;
        let nested = self.mode == Mode::Extended && level < self.max_block_depth;
        let pick = if self.mode == Mode::Flat { self.rng.gen_range(0..2) } else { self.rng.gen_range(0..5) };
        match pick {
            0 => self.call_stmt(),
            1 => Stmt::Assign { var: self.var_name(), value: self.expr(budget) },
            2 if nested => {
                let cond = self.expr(budget);
                let then_branch = self.block(level + 1);
                let else_branch = self.rng.gen_bool(0.5).then(|| self.block(level + 1));
                Stmt::If { cond, then_branch, else_branch }
            }
            3 if nested => {
                let iterable = if self.rng.gen_bool(0.7) {
                    let n = self.rng.gen_range(0..4);
                    Expr::List((0..n).map(|_| self.expr(budget - 1)).collect())
                } else {
                    self.expr(budget)
                };
                Stmt::For { var: self.var_name(), iterable, body: self.block(level + 1) }
            }
            4 => Stmt::Return { value: self.expr(budget) },
            _ => self.call_stmt(),
        }
    }

    pub fn program(&mut self) -> Program {
        let n = self.rng.gen_range(1..7);
        Program::new((0..n).map(|_| self.stmt(0)).collect())
    }
}
