use std::sync::Arc;

use crate::value::Value;

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Assign { target: Target, value: Expr },
    AugAssign { target: Target, op: BinOp, value: Expr },
    Expr(Expr),
    If { branches: Vec<(Expr, Vec<Stmt>)>, otherwise: Option<Vec<Stmt>> },
    While { cond: Expr, body: Vec<Stmt> },
    For { var: String, iter: Expr, body: Vec<Stmt> },
    Def(Arc<FunctionDef>),
    Return(Option<Expr>),
    Break,
    Continue,
    Parallel(Vec<Stmt>),
}

/// Assignment target: a name, optionally followed by index steps
/// (`m["k"][0] = v`).
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub name: String,
    pub path: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionDef {
    pub name: String,
    pub params: Vec<String>,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Value),
    Name(String),
    List(Vec<Expr>),
    Map(Vec<(Expr, Expr)>),
    Unary { op: UnaryOp, expr: Box<Expr> },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Call { callee: String, args: Vec<Expr> },
    Method { receiver: Box<Expr>, method: String, args: Vec<Expr> },
    Index { base: Box<Expr>, index: Box<Expr> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    FloorDiv,
    Mod,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    In,
}

impl Stmt {
    /// Number of statements in this subtree, counting this one.
    pub fn size(&self) -> usize {
        1 + match &self.kind {
            StmtKind::If { branches, otherwise } => {
                branches.iter().map(|(_, b)| block_size(b)).sum::<usize>()
                    + otherwise.as_deref().map_or(0, block_size)
            }
            StmtKind::While { body, .. } | StmtKind::For { body, .. } | StmtKind::Parallel(body) => {
                block_size(body)
            }
            StmtKind::Def(f) => block_size(&f.body),
            _ => 0,
        }
    }
}

pub fn block_size(stmts: &[Stmt]) -> usize {
    stmts.iter().map(Stmt::size).sum()
}
