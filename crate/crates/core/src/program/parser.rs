//! Line-oriented parser for the tool-call language.
//!
//! Statements are one per line. Blocks (`if`, `else`, `for`) are delimited by
//! indentation of exactly four spaces per level. Blank lines and lines
//! starting with `#` are ignored, as is anything after a `#` outside a string.

use std::fmt;

use super::ast::{CmpOp, Expr, Mode, Program, Stmt};

/// Nesting bound for expressions and for blocks.
pub const MAX_DEPTH: usize = 16;

const INDENT: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
    pub snippet: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)?;
        if !self.snippet.is_empty() {
            write!(f, " (in `{}`)", self.snippet)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Int(i64),
    Float(f64),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Assign,
    Cmp(CmpOp),
    If,
    Else,
    For,
    In,
    Return,
    Bool(bool),
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Str(_) => "string literal".into(),
            Tok::Int(_) | Tok::Float(_) => "number".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Assign => "`=`".into(),
            Tok::Cmp(op) => format!("`{}`", op.symbol()),
            Tok::If => "`if`".into(),
            Tok::Else => "`else`".into(),
            Tok::For => "`for`".into(),
            Tok::In => "`in`".into(),
            Tok::Return => "`return`".into(),
            Tok::Bool(b) => format!("`{b}`"),
        }
    }
}

struct Line<'a> {
    no: usize,
    level: usize,
    text: &'a str,
    toks: Vec<(Tok, usize)>,
}

fn error(line: usize, col: usize, message: impl Into<String>, snippet: &str) -> ParseError {
    ParseError { line, col: col.max(1), message: message.into(), snippet: snippet.trim().to_owned() }
}

fn lex_line(no: usize, text: &str, start_col: usize) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = start_col - 1;
    let err = |col: usize, msg: String| error(no, col, msg, text);
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c == ' ' {
            i += 1;
            continue;
        }
        if c == '#' {
            break;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            ',' => Some(Tok::Comma),
            ':' => Some(Tok::Colon),
            _ => None,
        };
        if let Some(t) = single {
            toks.push((t, col));
            i += 1;
            continue;
        }
        let next = chars.get(i + 1).copied();
        match (c, next) {
            ('=', Some('=')) => {
                toks.push((Tok::Cmp(CmpOp::Eq), col));
                i += 2;
                continue;
            }
            ('!', Some('=')) => {
                toks.push((Tok::Cmp(CmpOp::Ne), col));
                i += 2;
                continue;
            }
            ('<', Some('=')) => {
                toks.push((Tok::Cmp(CmpOp::Le), col));
                i += 2;
                continue;
            }
            ('>', Some('=')) => {
                toks.push((Tok::Cmp(CmpOp::Ge), col));
                i += 2;
                continue;
            }
            ('<', _) => {
                toks.push((Tok::Cmp(CmpOp::Lt), col));
                i += 1;
                continue;
            }
            ('>', _) => {
                toks.push((Tok::Cmp(CmpOp::Gt), col));
                i += 1;
                continue;
            }
            ('=', _) => {
                toks.push((Tok::Assign, col));
                i += 1;
                continue;
            }
            _ => {}
        }
        if c == '"' {
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err(err(col, "unterminated string literal".into())),
                    Some('"') => {
                        i += 1;
                        break;
                    }
                    Some('\\') => {
                        let esc = match chars.get(i + 1) {
                            Some('"') => '"',
                            Some('\\') => '\\',
                            Some('n') => '\n',
                            Some('t') => '\t',
                            Some('r') => '\r',
                            Some(other) => return Err(err(i + 1, format!("unknown escape `\\{other}`"))),
                            None => return Err(err(col, "unterminated string literal".into())),
                        };
                        s.push(esc);
                        i += 2;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            toks.push((Tok::Str(s), col));
            continue;
        }
        if c.is_ascii_digit() || (c == '-' && next.is_some_and(|n| n.is_ascii_digit())) {
            let begin = i;
            i += 1;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let mut is_float = false;
            if chars.get(i) == Some(&'.') && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                is_float = true;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if matches!(chars.get(i), Some('e') | Some('E')) {
                let mut j = i + 1;
                if matches!(chars.get(j), Some('+') | Some('-')) {
                    j += 1;
                }
                if chars.get(j).is_some_and(|d| d.is_ascii_digit()) {
                    is_float = true;
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            if chars.get(i).is_some_and(|c| c.is_ascii_alphanumeric() || *c == '_' || *c == '.') {
                return Err(err(i + 1, "malformed number".into()));
            }
            let lit: String = chars[begin..i].iter().collect();
            let tok = if is_float {
                Tok::Float(lit.parse().map_err(|_| err(col, format!("bad float `{lit}`")))?)
            } else {
                Tok::Int(lit.parse().map_err(|_| err(col, format!("integer `{lit}` out of range")))?)
            };
            toks.push((tok, col));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let begin = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[begin..i].iter().collect();
            let tok = match word.as_str() {
                "if" => Tok::If,
                "else" => Tok::Else,
                "for" => Tok::For,
                "in" => Tok::In,
                "return" => Tok::Return,
                "true" | "True" => Tok::Bool(true),
                "false" | "False" => Tok::Bool(false),
                _ => Tok::Ident(word),
            };
            toks.push((tok, col));
            continue;
        }
        return Err(err(col, format!("unexpected character `{c}`")));
    }
    Ok(toks)
}

/// Cursor over one line's tokens.
struct Cursor<'l, 'a> {
    line: &'l Line<'a>,
    pos: usize,
}

impl<'l, 'a> Cursor<'l, 'a> {
    fn new(line: &'l Line<'a>) -> Self {
        Self { line, pos: 0 }
    }

    fn peek(&self) -> Option<&Tok> {
        self.line.toks.get(self.pos).map(|(t, _)| t)
    }

    fn peek_at(&self, offset: usize) -> Option<&Tok> {
        self.line.toks.get(self.pos + offset).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        match self.line.toks.get(self.pos) {
            Some((_, c)) => *c,
            None => self.line.text.chars().count(),
        }
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.line.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        error(self.line.no, self.col(), msg, self.line.text)
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        match self.peek() {
            Some(t) => self.err(format!("expected {wanted}, found {}", t.describe())),
            None => self.err(format!("expected {wanted}, found end of line")),
        }
    }

    fn expect(&mut self, tok: Tok, wanted: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected(wanted))
        }
    }

    fn expect_end(&self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(_) => Err(self.unexpected("end of line")),
        }
    }

    fn ident(&mut self, wanted: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(name)) => {
                let name = name.clone();
                self.pos += 1;
                Ok(name)
            }
            _ => Err(self.unexpected(wanted)),
        }
    }

    fn expr(&mut self, depth: usize) -> Result<Expr, ParseError> {
        if depth > MAX_DEPTH {
            return Err(self.err(format!("expression nesting exceeds {MAX_DEPTH}")));
        }
        let lhs = self.primary(depth)?;
        if let Some(Tok::Cmp(op)) = self.peek() {
            let op = *op;
            self.pos += 1;
            let rhs = self.primary(depth)?;
            if matches!(self.peek(), Some(Tok::Cmp(_))) {
                return Err(self.err("chained comparisons need parentheses"));
            }
            return Ok(Expr::compare(op, lhs, rhs));
        }
        Ok(lhs)
    }

    fn primary(&mut self, depth: usize) -> Result<Expr, ParseError> {
        let tok = match self.peek() {
            Some(Tok::Str(_) | Tok::Int(_) | Tok::Float(_) | Tok::Bool(_) | Tok::Ident(_) | Tok::LBracket | Tok::LParen) => {
                self.bump()
            }
            _ => return Err(self.unexpected("expression")),
        };
        match tok {
            Some(Tok::Str(s)) => Ok(Expr::Str(s)),
            Some(Tok::Int(i)) => Ok(Expr::Int(i)),
            Some(Tok::Float(f)) => Ok(Expr::Float(f)),
            Some(Tok::Bool(b)) => Ok(Expr::Bool(b)),
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    let args = self.args(Tok::RParen, "`)`", depth)?;
                    Ok(Expr::Call { name, args })
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Some(Tok::LBracket) => Ok(Expr::List(self.args(Tok::RBracket, "`]`", depth)?)),
            Some(Tok::LParen) => {
                let inner = self.expr(depth + 1)?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            _ => unreachable!("token kinds filtered above"),
        }
    }

    fn args(&mut self, close: Tok, close_desc: &str, depth: usize) -> Result<Vec<Expr>, ParseError> {
        if depth + 1 > MAX_DEPTH {
            return Err(self.err(format!("expression nesting exceeds {MAX_DEPTH}")));
        }
        let mut out = Vec::new();
        if self.peek() == Some(&close) {
            self.pos += 1;
            return Ok(out);
        }
        loop {
            out.push(self.expr(depth + 1)?);
            match self.peek() {
                Some(Tok::Comma) => {
                    self.pos += 1;
                }
                Some(t) if *t == close => {
                    self.pos += 1;
                    return Ok(out);
                }
                _ => return Err(self.unexpected(&format!("`,` or {close_desc}"))),
            }
        }
    }
}

struct Parser<'a> {
    lines: Vec<Line<'a>>,
    pos: usize,
    mode: Mode,
}

impl<'a> Parser<'a> {
    fn block(&mut self, level: usize) -> Result<Program, ParseError> {
        if level > MAX_DEPTH {
            let line = &self.lines[self.pos];
            return Err(error(line.no, 1, format!("block nesting exceeds {MAX_DEPTH}"), line.text));
        }
        let mut statements = Vec::new();
        while let Some(line) = self.lines.get(self.pos) {
            if line.level < level {
                break;
            }
            if line.level > level {
                return Err(error(line.no, 1, "unexpected indent", line.text));
            }
            statements.push(self.statement(level)?);
        }
        Ok(Program { statements })
    }

    fn nested_block(&mut self, level: usize, header: usize) -> Result<Program, ParseError> {
        match self.lines.get(self.pos) {
            Some(line) if line.level == level + 1 => self.block(level + 1),
            Some(line) => Err(error(line.no, 1, "expected an indented block", line.text)),
            None => {
                let h = &self.lines[header];
                Err(error(h.no, h.text.chars().count(), "expected an indented block", h.text))
            }
        }
    }

    fn require_extended(&self, cur: &Cursor<'_, '_>, what: &str) -> Result<(), ParseError> {
        if self.mode == Mode::Flat {
            Err(cur.err(format!("`{what}` is not allowed in flat mode")))
        } else {
            Ok(())
        }
    }

    fn statement(&mut self, level: usize) -> Result<Stmt, ParseError> {
        let idx = self.pos;
        self.pos += 1;
        let line = &self.lines[idx];
        let mut cur = Cursor::new(line);
        match cur.peek() {
            Some(Tok::If) => {
                self.require_extended(&cur, "if")?;
                cur.bump();
                let cond = cur.expr(1)?;
                cur.expect(Tok::Colon, "`:`")?;
                cur.expect_end()?;
                let then_branch = self.nested_block(level, idx)?;
                let mut else_branch = None;
                if let Some(next) = self.lines.get(self.pos) {
                    if next.level == level && next.toks.first().map(|t| &t.0) == Some(&Tok::Else) {
                        let else_idx = self.pos;
                        self.pos += 1;
                        let mut ec = Cursor::new(&self.lines[else_idx]);
                        ec.bump();
                        ec.expect(Tok::Colon, "`:`")?;
                        ec.expect_end()?;
                        else_branch = Some(self.nested_block(level, else_idx)?);
                    }
                }
                Ok(Stmt::If { cond, then_branch, else_branch })
            }
            Some(Tok::For) => {
                self.require_extended(&cur, "for")?;
                cur.bump();
                let var = cur.ident("loop variable")?;
                cur.expect(Tok::In, "`in`")?;
                let iterable = cur.expr(1)?;
                cur.expect(Tok::Colon, "`:`")?;
                cur.expect_end()?;
                let body = self.nested_block(level, idx)?;
                Ok(Stmt::For { var, iterable, body })
            }
            Some(Tok::Return) => {
                self.require_extended(&cur, "return")?;
                cur.bump();
                let value = cur.expr(1)?;
                cur.expect_end()?;
                Ok(Stmt::Return { value })
            }
            Some(Tok::Else) => Err(cur.err("`else` without matching `if`")),
            Some(Tok::Ident(_)) if cur.peek_at(1) == Some(&Tok::Assign) => {
                let var = cur.ident("variable")?;
                cur.bump();
                let value = cur.expr(1)?;
                cur.expect_end()?;
                Ok(Stmt::Assign { var, value })
            }
            Some(Tok::Ident(_)) if cur.peek_at(1) == Some(&Tok::LParen) => match cur.expr(1)? {
                Expr::Call { name, args } => {
                    cur.expect_end()?;
                    Ok(Stmt::Call { name, args })
                }
                _ => Err(cur.err("comparison is not a statement")),
            },
            _ => Err(cur.unexpected("a statement")),
        }
    }
}

/// Parses program text in the given mode.
pub fn parse(text: &str, mode: Mode) -> Result<Program, ParseError> {
    let mut lines = Vec::new();
    for (i, raw) in text.split('\n').enumerate() {
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        let no = i + 1;
        let body = raw.trim_start_matches([' ', '\t']);
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let lead = &raw[..raw.len() - body.len()];
        if let Some(pos) = lead.find('\t') {
            return Err(error(no, pos + 1, "tabs are not allowed in indentation", raw));
        }
        if lead.len() % INDENT != 0 {
            return Err(error(no, lead.len() + 1, format!("indentation must be a multiple of {INDENT} spaces"), raw));
        }
        let toks = lex_line(no, raw, lead.len() + 1)?;
        if toks.is_empty() {
            continue;
        }
        lines.push(Line { no, level: lead.len() / INDENT, text: raw, toks });
    }
    if lines.is_empty() {
        return Err(error(1, 1, "empty program", ""));
    }
    if lines[0].level != 0 {
        return Err(error(lines[0].no, 1, "unexpected indent", lines[0].text));
    }
    let mut parser = Parser { lines, pos: 0, mode };
    let program = parser.block(0)?;
    if let Some(line) = parser.lines.get(parser.pos) {
        return Err(error(line.no, 1, "unexpected dedent", line.text));
    }
    Ok(program)
}

/// Parses a `.mvp` file whose first line is `#mode=flat` or `#mode=extended`.
pub fn parse_file(text: &str) -> Result<(Mode, Program), ParseError> {
    let first = text.lines().next().unwrap_or("").trim();
    let mode = first
        .strip_prefix("#mode=")
        .ok_or_else(|| error(1, 1, "missing `#mode=flat|extended` header", first))?
        .parse::<Mode>()
        .map_err(|e| error(1, 7, e, first))?;
    Ok((mode, parse(text, mode)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(s: &str) -> Result<Program, ParseError> {
        parse(s, Mode::Flat)
    }

    fn ext(s: &str) -> Result<Program, ParseError> {
        parse(s, Mode::Extended)
    }

    #[test]
    fn single_localize_call() {
        let p = flat("localize(\"cat lying on its back\")").unwrap();
        assert_eq!(p.statements, vec![Stmt::call("localize", vec![Expr::str("cat lying on its back")])]);
    }

    #[test]
    fn empty_input_is_error_at_line_one() {
        for input in ["", "\n\n", "# just a comment\n"] {
            let e = flat(input).unwrap_err();
            assert_eq!((e.line, e.col), (1, 1), "{input:?}");
        }
    }

    #[test]
    fn extended_if_program() {
        let src = "frames = localize(\"ball\")\nif verify_action(3, \"throwing\"):\n    caption(3)\nreturn frames\n";
        let p = ext(src).unwrap();
        let expected = Program::new(vec![
            Stmt::Assign { var: "frames".into(), value: Expr::call("localize", vec![Expr::str("ball")]) },
            Stmt::If {
                cond: Expr::call("verify_action", vec![Expr::Int(3), Expr::str("throwing")]),
                then_branch: Program::new(vec![Stmt::call("caption", vec![Expr::Int(3)])]),
                else_branch: None,
            },
            Stmt::Return { value: Expr::var("frames") },
        ]);
        assert_eq!(p, expected);
    }

    #[test]
    fn if_else_and_for() {
        let src = "for f in frames:\n    if f >= 3:\n        x = 1\n    else:\n        x = -2.5e1\nreturn [x, true, \"a\\\"b\"]";
        let p = ext(src).unwrap();
        let Stmt::For { body, .. } = &p.statements[0] else { panic!() };
        let Stmt::If { else_branch: Some(e), .. } = &body.statements[0] else { panic!() };
        assert_eq!(e.statements[0], Stmt::Assign { var: "x".into(), value: Expr::Float(-25.0) });
        assert_eq!(
            p.statements[1],
            Stmt::Return { value: Expr::List(vec![Expr::var("x"), Expr::Bool(true), Expr::str("a\"b")]) }
        );
    }

    #[test]
    fn control_flow_rejected_in_flat_mode() {
        for src in ["if x:\n    noop()", "for f in xs:\n    noop()", "return 1"] {
            let e = flat(src).unwrap_err();
            assert!(e.message.contains("flat mode"), "{e}");
            assert_eq!(e.line, 1);
        }
        assert!(flat("x = \"cat\"\nlocalize(x)").is_ok());
    }

    #[test]
    fn indentation_errors() {
        assert!(ext("  noop()").unwrap_err().message.contains("multiple of 4"));
        assert!(ext("\tnoop()").unwrap_err().message.contains("tabs"));
        assert!(ext("    noop()").unwrap_err().message.contains("unexpected indent"));
        assert!(ext("noop()\n    noop()").unwrap_err().message.contains("unexpected indent"));
        let e = ext("if x:\nnoop()").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("indented block"));
        assert!(ext("if x:").unwrap_err().message.contains("indented block"));
        assert!(ext("else:\n    noop()").unwrap_err().message.contains("without matching"));
    }

    #[test]
    fn token_errors_point_at_column() {
        let e = flat("trim(\"end\") $").unwrap_err();
        assert_eq!((e.line, e.col), (1, 13));
        let e = flat("noop()\ntrim(\"end)").unwrap_err();
        assert_eq!((e.line, e.col), (2, 6));
        assert!(flat("trim(\"\\q\")").unwrap_err().message.contains("unknown escape"));
        assert!(flat("f(99999999999999999999)").unwrap_err().message.contains("out of range"));
        assert!(flat("f(1abc)").unwrap_err().message.contains("malformed"));
        assert!(flat("x").is_err());
        assert!(flat("f(1, )").is_err());
        assert!(flat("f() g()").is_err());
        assert!(flat("f(a == b == c)").unwrap_err().message.contains("chained"));
    }

    #[test]
    fn depth_bound_enforced() {
        let mut deep = String::from("f(");
        for _ in 0..20 {
            deep.push('[');
        }
        for _ in 0..20 {
            deep.push(']');
        }
        deep.push(')');
        assert!(flat(&deep).unwrap_err().message.contains("nesting"));

        let mut ok = String::from("f(");
        ok.push_str(&"[".repeat(14));
        ok.push_str(&"]".repeat(14));
        ok.push(')');
        assert!(flat(&ok).is_ok());

        let mut blocks = String::new();
        for level in 0..18 {
            blocks.push_str(&" ".repeat(level * 4));
            blocks.push_str("if x:\n");
        }
        blocks.push_str(&" ".repeat(18 * 4));
        blocks.push_str("noop()\n");
        assert!(ext(&blocks).unwrap_err().message.contains("nesting"));
    }

    #[test]
    fn comments_and_blank_lines_skipped() {
        let p = flat("#mode=flat\n\n# plan\ntrim(\"end\")  # trailing\n\nnoop()\n").unwrap();
        assert_eq!(p.statements.len(), 2);
    }

    #[test]
    fn parse_file_reads_header() {
        let (mode, p) = parse_file("#mode=extended\nreturn 2\n").unwrap();
        assert_eq!(mode, Mode::Extended);
        assert_eq!(p.statements.len(), 1);
        assert!(parse_file("return 2").is_err());
        assert!(parse_file("#mode=loose\nnoop()").is_err());
    }

    #[test]
    fn crlf_and_python_booleans() {
        let p = ext("x = True\r\nreturn x\r\n").unwrap();
        assert_eq!(p.statements[0], Stmt::Assign { var: "x".into(), value: Expr::Bool(true) });
    }
}
