use std::sync::Arc;

use crate::ast::{BinOp, Expr, FunctionDef, Stmt, StmtKind, Target, UnaryOp};
use crate::error::PlanError;
use crate::lexer::{tokenize, Kw, Tok, Token};
use crate::value::Value;

/// A parsed plan script. Parsing is all-or-nothing: a script with any
/// syntax error is rejected whole.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanScript {
    pub source: String,
    pub statements: Vec<Stmt>,
}

impl PlanScript {
    pub fn parse(source: &str) -> Result<Self, PlanError> {
        let statements = parse_program(source)?;
        Ok(Self { source: source.to_string(), statements })
    }
}

pub fn parse_program(src: &str) -> Result<Vec<Stmt>, PlanError> {
    let tokens = tokenize(src)?;
    let mut p = Parser { tokens, pos: 0 };
    let stmts = p.statements(|t| matches!(t, Tok::Eof))?;
    p.expect(&Tok::Eof, "end of script")?;
    Ok(stmts)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn line(&self) -> usize {
        self.tokens[self.pos].line
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, PlanError> {
        Err(PlanError::Parse { line: self.line(), message: message.into() })
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &Tok, what: &str) -> Result<(), PlanError> {
        if self.eat(tok) {
            Ok(())
        } else {
            self.err(format!("expected {what}, found {:?}", self.peek()))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, PlanError> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                Ok(name)
            }
            other => self.err(format!("expected {what}, found {other:?}")),
        }
    }

    fn skip_separators(&mut self) {
        while matches!(self.peek(), Tok::Newline | Tok::Semi) {
            self.bump();
        }
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek(), Tok::Newline) {
            self.bump();
        }
    }

    fn statements(&mut self, end: impl Fn(&Tok) -> bool) -> Result<Vec<Stmt>, PlanError> {
        let mut out = Vec::new();
        self.skip_separators();
        while !end(self.peek()) {
            let stmt = self.statement()?;
            let compound = matches!(
                stmt.kind,
                StmtKind::If { .. }
                    | StmtKind::While { .. }
                    | StmtKind::For { .. }
                    | StmtKind::Def(_)
                    | StmtKind::Parallel(_)
            );
            out.push(stmt);
            if end(self.peek()) {
                break;
            }
            if !matches!(self.peek(), Tok::Newline | Tok::Semi) && !compound {
                return self.err(format!("expected end of statement, found {:?}", self.peek()));
            }
            self.skip_separators();
        }
        Ok(out)
    }

    fn block(&mut self) -> Result<Vec<Stmt>, PlanError> {
        self.expect(&Tok::LBrace, "'{'")?;
        let body = self.statements(|t| matches!(t, Tok::RBrace | Tok::Eof))?;
        self.expect(&Tok::RBrace, "'}'")?;
        Ok(body)
    }

    /// Looks past newlines for `elif`/`else` so `}\nelse {` parses.
    fn peek_past_newlines(&self) -> &Tok {
        let mut i = self.pos;
        while matches!(self.tokens[i].tok, Tok::Newline) && i + 1 < self.tokens.len() {
            i += 1;
        }
        &self.tokens[i].tok
    }

    fn statement(&mut self) -> Result<Stmt, PlanError> {
        let line = self.line();
        let kind = match self.peek().clone() {
            Tok::Kw(Kw::If) => {
                self.bump();
                self.if_rest()?
            }
            Tok::Kw(Kw::While) => {
                self.bump();
                let cond = self.expr()?;
                let body = self.block()?;
                StmtKind::While { cond, body }
            }
            Tok::Kw(Kw::For) => {
                self.bump();
                let var = self.ident("loop variable")?;
                self.expect(&Tok::Kw(Kw::In), "'in'")?;
                let iter = self.expr()?;
                let body = self.block()?;
                StmtKind::For { var, iter, body }
            }
            Tok::Kw(Kw::Def) => {
                self.bump();
                let name = self.ident("function name")?;
                self.expect(&Tok::LParen, "'('")?;
                let mut params = Vec::new();
                while !matches!(self.peek(), Tok::RParen) {
                    let p = self.ident("parameter name")?;
                    if params.contains(&p) {
                        return self.err(format!("duplicate parameter {p}"));
                    }
                    params.push(p);
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
                self.expect(&Tok::RParen, "')'")?;
                let body = self.block()?;
                StmtKind::Def(Arc::new(FunctionDef { name, params, body }))
            }
            Tok::Kw(Kw::Return) => {
                self.bump();
                if matches!(self.peek(), Tok::Newline | Tok::Semi | Tok::RBrace | Tok::Eof) {
                    StmtKind::Return(None)
                } else {
                    StmtKind::Return(Some(self.expr()?))
                }
            }
            Tok::Kw(Kw::Break) => {
                self.bump();
                StmtKind::Break
            }
            Tok::Kw(Kw::Continue) => {
                self.bump();
                StmtKind::Continue
            }
            Tok::Kw(Kw::Parallel) => {
                self.bump();
                let body = self.block()?;
                StmtKind::Parallel(body)
            }
            _ => {
                let expr = self.expr()?;
                let op = match self.peek() {
                    Tok::Assign => None,
                    Tok::PlusAssign => Some(BinOp::Add),
                    Tok::MinusAssign => Some(BinOp::Sub),
                    _ => return Ok(Stmt { kind: StmtKind::Expr(expr), line }),
                };
                self.bump();
                let target = match into_target(expr) {
                    Some(t) => t,
                    None => return Err(PlanError::Parse { line, message: "invalid assignment target".into() }),
                };
                let value = self.expr()?;
                match op {
                    None => StmtKind::Assign { target, value },
                    Some(op) => StmtKind::AugAssign { target, op, value },
                }
            }
        };
        Ok(Stmt { kind, line })
    }

    fn if_rest(&mut self) -> Result<StmtKind, PlanError> {
        let mut branches = vec![(self.expr()?, self.block()?)];
        let mut otherwise = None;
        loop {
            match self.peek_past_newlines() {
                Tok::Kw(Kw::Elif) => {
                    self.skip_newlines();
                    self.bump();
                    branches.push((self.expr()?, self.block()?));
                }
                Tok::Kw(Kw::Else) => {
                    self.skip_newlines();
                    self.bump();
                    if matches!(self.peek(), Tok::Kw(Kw::If)) {
                        let line = self.line();
                        self.bump();
                        let nested = self.if_rest()?;
                        otherwise = Some(vec![Stmt { kind: nested, line }]);
                    } else {
                        otherwise = Some(self.block()?);
                    }
                    break;
                }
                _ => break,
            }
        }
        Ok(StmtKind::If { branches, otherwise })
    }

    fn expr(&mut self) -> Result<Expr, PlanError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, PlanError> {
        let mut lhs = self.and_expr()?;
        while self.eat(&Tok::Kw(Kw::Or)) {
            let rhs = self.and_expr()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, PlanError> {
        let mut lhs = self.not_expr()?;
        while self.eat(&Tok::Kw(Kw::And)) {
            let rhs = self.not_expr()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, PlanError> {
        if self.eat(&Tok::Kw(Kw::Not)) {
            let inner = self.not_expr()?;
            return Ok(Expr::Unary { op: UnaryOp::Not, expr: Box::new(inner) });
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, PlanError> {
        let lhs = self.additive()?;
        let (op, negate) = match self.peek() {
            Tok::Eq => (BinOp::Eq, false),
            Tok::Ne => (BinOp::Ne, false),
            Tok::Lt => (BinOp::Lt, false),
            Tok::Le => (BinOp::Le, false),
            Tok::Gt => (BinOp::Gt, false),
            Tok::Ge => (BinOp::Ge, false),
            Tok::Kw(Kw::In) => (BinOp::In, false),
            Tok::Kw(Kw::Not) if matches!(self.tokens[self.pos + 1].tok, Tok::Kw(Kw::In)) => {
                self.bump();
                (BinOp::In, true)
            }
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.additive()?;
        let cmp = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        if matches!(
            self.peek(),
            Tok::Eq | Tok::Ne | Tok::Lt | Tok::Le | Tok::Gt | Tok::Ge | Tok::Kw(Kw::In)
        ) {
            return self.err("chained comparisons are not supported");
        }
        Ok(if negate { Expr::Unary { op: UnaryOp::Not, expr: Box::new(cmp) } } else { cmp })
    }

    fn additive(&mut self) -> Result<Expr, PlanError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.multiplicative()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, PlanError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                Tok::SlashSlash => BinOp::FloorDiv,
                Tok::Percent => BinOp::Mod,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
    }

    fn unary(&mut self) -> Result<Expr, PlanError> {
        if self.eat(&Tok::Minus) {
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Literal(Value::Int(n)) => Expr::Literal(Value::Int(-n)),
                Expr::Literal(Value::Float(f)) => Expr::Literal(Value::Float(-f)),
                other => Expr::Unary { op: UnaryOp::Neg, expr: Box::new(other) },
            });
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, PlanError> {
        let mut expr = self.primary()?;
        loop {
            match self.peek() {
                Tok::LParen => {
                    let Expr::Name(callee) = expr else {
                        return self.err("only named functions can be called");
                    };
                    self.bump();
                    let args = self.args(&Tok::RParen)?;
                    expr = Expr::Call { callee, args };
                }
                Tok::LBracket => {
                    self.bump();
                    let index = self.expr()?;
                    self.expect(&Tok::RBracket, "']'")?;
                    expr = Expr::Index { base: Box::new(expr), index: Box::new(index) };
                }
                Tok::Dot => {
                    self.bump();
                    let method = self.ident("method name")?;
                    if !self.eat(&Tok::LParen) {
                        return self.err(format!("attribute access .{method} must be a method call"));
                    }
                    let args = self.args(&Tok::RParen)?;
                    expr = Expr::Method { receiver: Box::new(expr), method, args };
                }
                _ => return Ok(expr),
            }
        }
    }

    fn args(&mut self, close: &Tok) -> Result<Vec<Expr>, PlanError> {
        let mut args = Vec::new();
        while self.peek() != close {
            args.push(self.expr()?);
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(close, "closing delimiter")?;
        Ok(args)
    }

    fn primary(&mut self) -> Result<Expr, PlanError> {
        let expr = match self.bump() {
            Tok::Int(n) => Expr::Literal(Value::Int(n)),
            Tok::Float(f) => Expr::Literal(Value::Float(f)),
            Tok::Str(s) => Expr::Literal(Value::Str(s)),
            Tok::Kw(Kw::True) => Expr::Literal(Value::Bool(true)),
            Tok::Kw(Kw::False) => Expr::Literal(Value::Bool(false)),
            Tok::Kw(Kw::None) => Expr::Literal(Value::None),
            Tok::Ident(name) => Expr::Name(name),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(&Tok::RParen, "')'")?;
                inner
            }
            Tok::LBracket => Expr::List(self.args(&Tok::RBracket)?),
            Tok::LBrace => {
                let mut entries = Vec::new();
                self.skip_newlines();
                while !matches!(self.peek(), Tok::RBrace) {
                    let key = self.expr()?;
                    self.expect(&Tok::Colon, "':' in map literal")?;
                    self.skip_newlines();
                    let value = self.expr()?;
                    entries.push((key, value));
                    self.skip_newlines();
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                    self.skip_newlines();
                }
                self.skip_newlines();
                self.expect(&Tok::RBrace, "'}'")?;
                Expr::Map(entries)
            }
            other => {
                self.pos = self.pos.saturating_sub(1);
                return self.err(format!("unexpected token {other:?}"));
            }
        };
        Ok(expr)
    }
}

fn into_target(expr: Expr) -> Option<Target> {
    match expr {
        Expr::Name(name) => Some(Target { name, path: Vec::new() }),
        Expr::Index { base, index } => {
            let mut t = into_target(*base)?;
            t.path.push(*index);
            Some(t)
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_semicolon_separated_parallel_block() {
        let stmts = parse_program("parallel { a = fetch('A'); b = fetch('B') }").unwrap();
        assert_eq!(stmts.len(), 1);
        let StmtKind::Parallel(body) = &stmts[0].kind else { panic!() };
        assert_eq!(body.len(), 2);
    }

    #[test]
    fn if_elif_else_across_lines() {
        let src = "if x > 1 {\n y = 1\n}\nelif x == 1 {\n y = 2\n} else {\n y = 3\n}\nz = y";
        let stmts = parse_program(src).unwrap();
        assert_eq!(stmts.len(), 2);
        let StmtKind::If { branches, otherwise } = &stmts[0].kind else { panic!() };
        assert_eq!(branches.len(), 2);
        assert!(otherwise.is_some());
    }

    #[test]
    fn multiline_map_literal() {
        let stmts = parse_program("m = {\n 'a': 1,\n 'b': [1,\n 2],\n}").unwrap();
        assert_eq!(stmts.len(), 1);
    }

    #[test]
    fn rejects_garbage_whole() {
        assert!(parse_program("x = 1\ny = = 2").is_err());
        assert!(parse_program("f(x) = 3").is_err());
        assert!(parse_program("x = 1 y = 2").is_err());
        assert!(parse_program("def f( { }").is_err());
    }

    #[test]
    fn index_assignment_target() {
        let stmts = parse_program("m['k'][0] = 1").unwrap();
        let StmtKind::Assign { target, .. } = &stmts[0].kind else { panic!() };
        assert_eq!(target.name, "m");
        assert_eq!(target.path.len(), 2);
    }

    #[test]
    fn not_in_operator() {
        let stmts = parse_program("x = 1 not in [2]").unwrap();
        let StmtKind::Assign { value, .. } = &stmts[0].kind else { panic!() };
        assert!(matches!(value, Expr::Unary { op: UnaryOp::Not, .. }));
    }
}
