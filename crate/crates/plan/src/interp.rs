use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::ast::{BinOp, Expr, FunctionDef, Stmt, StmtKind, Target, UnaryOp};
use crate::builtins;
use crate::error::ExecErrorKind;
use crate::value::Value;
use crate::{ActionContext, ActionHandler};

/// Variable environment seen by the interpreter.
pub(crate) trait Env: Sync {
    fn get(&self, name: &str) -> Option<Value>;
    fn set(&mut self, name: &str, value: Value);
}

/// Bindings, output and control flow of one `parallel` branch.
type BranchOutcome = (Vec<(String, Value)>, Sink, Result<Flow, RtErr>);

/// Copy-on-write view used by each statement of a `parallel` block.
struct Overlay<'a> {
    base: &'a dyn Env,
    delta: Vec<(String, Value)>,
}

impl Env for Overlay<'_> {
    fn get(&self, name: &str) -> Option<Value> {
        self.delta
            .iter()
            .rev()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.clone())
            .or_else(|| self.base.get(name))
    }

    fn set(&mut self, name: &str, value: Value) {
        if let Some(slot) = self.delta.iter_mut().find(|(k, _)| k == name) {
            slot.1 = value;
        } else {
            self.delta.push((name.to_string(), value));
        }
    }
}

/// Function call frame: locals shadow the enclosing (read-only) globals.
struct Frame<'a> {
    globals: &'a dyn Env,
    locals: BTreeMap<String, Value>,
}

impl Env for Frame<'_> {
    fn get(&self, name: &str) -> Option<Value> {
        self.locals.get(name).cloned().or_else(|| self.globals.get(name))
    }

    fn set(&mut self, name: &str, value: Value) {
        self.locals.insert(name.to_string(), value);
    }
}

#[derive(Debug, Default)]
pub(crate) struct Sink {
    pub outputs: Vec<String>,
    pub actions: Vec<String>,
}

impl Sink {
    fn absorb(&mut self, other: Sink) {
        self.outputs.extend(other.outputs);
        self.actions.extend(other.actions);
    }
}

pub(crate) enum Flow {
    Normal,
    Break,
    Continue,
    Return(Value),
}

#[derive(Debug)]
pub(crate) struct RtErr {
    pub kind: ExecErrorKind,
    pub message: String,
    pub line: usize,
}

fn rt<T>(line: usize, message: impl Into<String>) -> Result<T, RtErr> {
    Err(RtErr { kind: ExecErrorKind::Runtime, message: message.into(), line })
}

pub(crate) struct Interp<'a> {
    pub actions: &'a BTreeMap<String, Arc<dyn ActionHandler>>,
    pub executed: &'a AtomicUsize,
    pub context: &'a ActionContext,
    pub budget: usize,
    pub max_call_depth: usize,
}

const MAX_COLLECTION: usize = 1_000_000;

impl Interp<'_> {
    pub fn exec_block(
        &self,
        stmts: &[Stmt],
        env: &mut dyn Env,
        sink: &mut Sink,
        depth: usize,
    ) -> Result<Flow, RtErr> {
        for stmt in stmts {
            match self.exec_stmt(stmt, env, sink, depth)? {
                Flow::Normal => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Normal)
    }

    fn tick(&self, line: usize) -> Result<(), RtErr> {
        let n = self.executed.fetch_add(1, Ordering::SeqCst) + 1;
        if n > self.budget {
            return Err(RtErr {
                kind: ExecErrorKind::BudgetExceeded,
                message: format!("statement budget of {} exceeded", self.budget),
                line,
            });
        }
        Ok(())
    }

    pub fn exec_stmt(
        &self,
        stmt: &Stmt,
        env: &mut dyn Env,
        sink: &mut Sink,
        depth: usize,
    ) -> Result<Flow, RtErr> {
        let line = stmt.line;
        self.tick(line)?;
        match &stmt.kind {
            StmtKind::Assign { target, value } => {
                let v = self.eval(value, env, sink, depth, line)?;
                self.assign(target, v, env, sink, depth, line)?;
            }
            StmtKind::AugAssign { target, op, value } => {
                let rhs = self.eval(value, env, sink, depth, line)?;
                let current = self.read_target(target, env, sink, depth, line)?;
                let v = binary(*op, current, rhs, line)?;
                self.assign(target, v, env, sink, depth, line)?;
            }
            StmtKind::Expr(expr) => {
                self.eval(expr, env, sink, depth, line)?;
            }
            StmtKind::If { branches, otherwise } => {
                for (cond, body) in branches {
                    if self.eval(cond, env, sink, depth, line)?.truthy() {
                        return self.exec_block(body, env, sink, depth);
                    }
                }
                if let Some(body) = otherwise {
                    return self.exec_block(body, env, sink, depth);
                }
            }
            StmtKind::While { cond, body } => {
                while self.eval(cond, env, sink, depth, line)?.truthy() {
                    match self.exec_block(body, env, sink, depth)? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Normal | Flow::Continue => {}
                    }
                    // Loops with empty bodies still consume budget.
                    if body.is_empty() {
                        self.tick(line)?;
                    }
                }
            }
            StmtKind::For { var, iter, body } => {
                let items = iterate(self.eval(iter, env, sink, depth, line)?, line)?;
                for item in items {
                    env.set(var, item);
                    match self.exec_block(body, env, sink, depth)? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Normal | Flow::Continue => {}
                    }
                }
            }
            StmtKind::Def(def) => env.set(&def.name, Value::Function(def.clone())),
            StmtKind::Return(expr) => {
                let v = match expr {
                    Some(e) => self.eval(e, env, sink, depth, line)?,
                    None => Value::None,
                };
                return Ok(Flow::Return(v));
            }
            StmtKind::Break => return Ok(Flow::Break),
            StmtKind::Continue => return Ok(Flow::Continue),
            StmtKind::Parallel(body) => self.exec_parallel(body, env, sink, depth)?,
        }
        Ok(Flow::Normal)
    }

    /// Runs every statement of the block on its own thread against a
    /// snapshot of `env`, waits for all of them, then merges writes in
    /// statement order. A failing branch does not cancel its siblings.
    fn exec_parallel(
        &self,
        body: &[Stmt],
        env: &mut dyn Env,
        sink: &mut Sink,
        depth: usize,
    ) -> Result<(), RtErr> {
        let results: Vec<BranchOutcome> = {
            let base: &dyn Env = &*env;
            std::thread::scope(|scope| {
                let handles: Vec<_> = body
                    .iter()
                    .map(|stmt| {
                        scope.spawn(move || {
                            let mut overlay = Overlay { base, delta: Vec::new() };
                            let mut branch_sink = Sink::default();
                            let r = self.exec_stmt(stmt, &mut overlay, &mut branch_sink, depth);
                            (overlay.delta, branch_sink, r)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .zip(body)
                    .map(|(h, stmt)| {
                        h.join().unwrap_or_else(|_| {
                            (
                                Vec::new(),
                                Sink::default(),
                                rt(stmt.line, "parallel branch panicked"),
                            )
                        })
                    })
                    .collect()
            })
        };

        let mut first_err = None;
        for ((delta, branch_sink, result), stmt) in results.into_iter().zip(body) {
            for (k, v) in delta {
                env.set(&k, v);
            }
            sink.absorb(branch_sink);
            let err = match result {
                Ok(Flow::Normal) => None,
                Ok(_) => Some(RtErr {
                    kind: ExecErrorKind::Runtime,
                    message: "break/continue/return cannot cross a parallel block".into(),
                    line: stmt.line,
                }),
                Err(e) => Some(e),
            };
            if first_err.is_none() {
                first_err = err;
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn read_target(
        &self,
        target: &Target,
        env: &mut dyn Env,
        sink: &mut Sink,
        depth: usize,
        line: usize,
    ) -> Result<Value, RtErr> {
        let mut v = match env.get(&target.name) {
            Some(v) => v,
            None => return rt(line, format!("name '{}' is not defined", target.name)),
        };
        for idx in &target.path {
            let i = self.eval(idx, env, sink, depth, line)?;
            v = index(&v, &i, line)?;
        }
        Ok(v)
    }

    fn assign(
        &self,
        target: &Target,
        value: Value,
        env: &mut dyn Env,
        sink: &mut Sink,
        depth: usize,
        line: usize,
    ) -> Result<(), RtErr> {
        if target.path.is_empty() {
            env.set(&target.name, value);
            return Ok(());
        }
        let mut keys = Vec::with_capacity(target.path.len());
        for idx in &target.path {
            keys.push(self.eval(idx, env, sink, depth, line)?);
        }
        let Some(mut root) = env.get(&target.name) else {
            return rt(line, format!("name '{}' is not defined", target.name));
        };
        set_path(&mut root, &keys, value, line)?;
        env.set(&target.name, root);
        Ok(())
    }

    pub fn eval(
        &self,
        expr: &Expr,
        env: &mut dyn Env,
        sink: &mut Sink,
        depth: usize,
        line: usize,
    ) -> Result<Value, RtErr> {
        Ok(match expr {
            Expr::Literal(v) => v.clone(),
            Expr::Name(name) => match env.get(name) {
                Some(v) => v,
                None => return rt(line, format!("name '{name}' is not defined")),
            },
            Expr::List(items) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    out.push(self.eval(item, env, sink, depth, line)?);
                }
                Value::list(out)
            }
            Expr::Map(entries) => {
                let mut out = BTreeMap::new();
                for (k, v) in entries {
                    let key = match self.eval(k, env, sink, depth, line)? {
                        Value::Str(s) => s,
                        other => return rt(line, format!("map keys must be str, got {}", other.kind())),
                    };
                    let value = self.eval(v, env, sink, depth, line)?;
                    out.insert(key, value);
                }
                Value::map(out)
            }
            Expr::Unary { op, expr } => {
                let v = self.eval(expr, env, sink, depth, line)?;
                match op {
                    UnaryOp::Not => Value::Bool(!v.truthy()),
                    UnaryOp::Neg => match v {
                        Value::Int(n) => Value::Int(
                            n.checked_neg().ok_or_else(|| overflow(line))?,
                        ),
                        Value::Float(f) => Value::Float(-f),
                        other => return rt(line, format!("cannot negate {}", other.kind())),
                    },
                }
            }
            Expr::Binary { op, lhs, rhs } => {
                let l = self.eval(lhs, env, sink, depth, line)?;
                let r = self.eval(rhs, env, sink, depth, line)?;
                binary(*op, l, r, line)?
            }
            Expr::And(lhs, rhs) => {
                let l = self.eval(lhs, env, sink, depth, line)?;
                if !l.truthy() {
                    l
                } else {
                    self.eval(rhs, env, sink, depth, line)?
                }
            }
            Expr::Or(lhs, rhs) => {
                let l = self.eval(lhs, env, sink, depth, line)?;
                if l.truthy() {
                    l
                } else {
                    self.eval(rhs, env, sink, depth, line)?
                }
            }
            Expr::Index { base, index: idx } => {
                let b = self.eval(base, env, sink, depth, line)?;
                let i = self.eval(idx, env, sink, depth, line)?;
                index(&b, &i, line)?
            }
            Expr::Call { callee, args } => {
                let mut values = Vec::with_capacity(args.len());
                for a in args {
                    values.push(self.eval(a, env, sink, depth, line)?);
                }
                self.call(callee, values, env, sink, depth, line)?
            }
            Expr::Method { receiver, method, args } => {
                let mut values = Vec::with_capacity(args.len());
                for a in args {
                    values.push(self.eval(a, env, sink, depth, line)?);
                }
                let mut recv = self.eval(receiver, env, sink, depth, line)?;
                let (result, mutated) = builtins::method(&mut recv, method, values)
                    .map_err(|m| RtErr { kind: ExecErrorKind::Runtime, message: m, line })?;
                if mutated {
                    if let Expr::Name(name) = receiver.as_ref() {
                        env.set(name, recv);
                    }
                }
                result
            }
        })
    }

    fn call(
        &self,
        callee: &str,
        args: Vec<Value>,
        env: &mut dyn Env,
        sink: &mut Sink,
        depth: usize,
        line: usize,
    ) -> Result<Value, RtErr> {
        match env.get(callee) {
            Some(Value::Function(def)) => return self.call_user(&def, args, env, sink, depth, line),
            Some(other) if !builtins::is_builtin(callee) && !self.actions.contains_key(callee) => {
                return rt(line, format!("'{callee}' is a {}, not a function", other.kind()));
            }
            _ => {}
        }
        if callee == "print" {
            let text = args.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
            sink.outputs.push(text);
            return Ok(Value::None);
        }
        if builtins::is_builtin(callee) {
            return builtins::call(callee, args)
                .map_err(|m| RtErr { kind: ExecErrorKind::Runtime, message: m, line });
        }
        if let Some(handler) = self.actions.get(callee) {
            sink.actions.push(callee.to_string());
            return handler.call_in(self.context, &args).map_err(|m| RtErr {
                kind: ExecErrorKind::ActionFailed,
                message: format!("action {callee} failed: {m}"),
                line,
            });
        }
        Err(RtErr {
            kind: ExecErrorKind::ActionUnknown,
            message: format!("unknown action or function '{callee}'"),
            line,
        })
    }

    fn call_user(
        &self,
        def: &Arc<FunctionDef>,
        args: Vec<Value>,
        env: &dyn Env,
        sink: &mut Sink,
        depth: usize,
        line: usize,
    ) -> Result<Value, RtErr> {
        if depth >= self.max_call_depth {
            return rt(line, format!("maximum call depth {} exceeded", self.max_call_depth));
        }
        if args.len() != def.params.len() {
            return rt(
                line,
                format!("{}() takes {} arguments, got {}", def.name, def.params.len(), args.len()),
            );
        }
        let locals = def.params.iter().cloned().zip(args).collect();
        let mut frame = Frame { globals: env, locals };
        match self.exec_block(&def.body, &mut frame, sink, depth + 1)? {
            Flow::Return(v) => Ok(v),
            Flow::Normal => Ok(Value::None),
            Flow::Break | Flow::Continue => rt(line, "break/continue outside loop"),
        }
    }
}

fn overflow(line: usize) -> RtErr {
    RtErr { kind: ExecErrorKind::Runtime, message: "integer overflow".into(), line }
}

fn iterate(v: Value, line: usize) -> Result<Vec<Value>, RtErr> {
    Ok(match v {
        Value::List(items) => items.as_ref().clone(),
        Value::Str(s) => s.chars().map(|c| Value::Str(c.to_string())).collect(),
        Value::Map(m) => m.keys().map(|k| Value::Str(k.clone())).collect(),
        other => return rt(line, format!("{} is not iterable", other.kind())),
    })
}

fn norm_index(i: i64, len: usize, line: usize) -> Result<usize, RtErr> {
    let idx = if i < 0 { len as i64 + i } else { i };
    if idx < 0 || idx as usize >= len {
        return rt(line, format!("index {i} out of range for length {len}"));
    }
    Ok(idx as usize)
}

fn index(base: &Value, idx: &Value, line: usize) -> Result<Value, RtErr> {
    match (base, idx) {
        (Value::List(items), Value::Int(i)) => Ok(items[norm_index(*i, items.len(), line)?].clone()),
        (Value::Str(s), Value::Int(i)) => {
            let chars: Vec<char> = s.chars().collect();
            Ok(Value::Str(chars[norm_index(*i, chars.len(), line)?].to_string()))
        }
        (Value::Map(m), Value::Str(k)) => match m.get(k) {
            Some(v) => Ok(v.clone()),
            None => rt(line, format!("key {k:?} not found")),
        },
        (b, i) => rt(line, format!("cannot index {} with {}", b.kind(), i.kind())),
    }
}

fn set_path(slot: &mut Value, keys: &[Value], value: Value, line: usize) -> Result<(), RtErr> {
    let Some((first, rest)) = keys.split_first() else {
        *slot = value;
        return Ok(());
    };
    match (slot, first) {
        (Value::List(items), Value::Int(i)) => {
            let items = Arc::make_mut(items);
            let idx = norm_index(*i, items.len(), line)?;
            set_path(&mut items[idx], rest, value, line)
        }
        (Value::Map(m), Value::Str(k)) => {
            let m = Arc::make_mut(m);
            if rest.is_empty() {
                m.insert(k.clone(), value);
                Ok(())
            } else {
                match m.get_mut(k) {
                    Some(inner) => set_path(inner, rest, value, line),
                    None => rt(line, format!("key {k:?} not found")),
                }
            }
        }
        (s, k) => rt(line, format!("cannot assign into {} with {} index", s.kind(), k.kind())),
    }
}

pub(crate) fn binary(op: BinOp, l: Value, r: Value, line: usize) -> Result<Value, RtErr> {
    use Value::*;
    let num = |v: &Value| match v {
        Int(n) => Some(*n as f64),
        Float(f) => Some(*f),
        _ => Option::None,
    };
    Ok(match op {
        BinOp::Add => match (l, r) {
            (Int(a), Int(b)) => Int(a.checked_add(b).ok_or_else(|| overflow(line))?),
            (Str(a), Str(b)) => Str(a + &b),
            (List(a), List(b)) => {
                let mut out = a.as_ref().clone();
                out.extend(b.iter().cloned());
                Value::list(out)
            }
            (a, b) => match (num(&a), num(&b)) {
                (Some(x), Some(y)) => Float(x + y),
                _ => return rt(line, format!("cannot add {} and {}", a.kind(), b.kind())),
            },
        },
        BinOp::Sub => match (l, r) {
            (Int(a), Int(b)) => Int(a.checked_sub(b).ok_or_else(|| overflow(line))?),
            (a, b) => match (num(&a), num(&b)) {
                (Some(x), Some(y)) => Float(x - y),
                _ => return rt(line, format!("cannot subtract {} from {}", b.kind(), a.kind())),
            },
        },
        BinOp::Mul => match (l, r) {
            (Int(a), Int(b)) => Int(a.checked_mul(b).ok_or_else(|| overflow(line))?),
            (Str(s), Int(n)) | (Int(n), Str(s)) => {
                let n = n.max(0) as usize;
                if s.len().saturating_mul(n) > MAX_COLLECTION {
                    return rt(line, "string too large");
                }
                Str(s.repeat(n))
            }
            (List(items), Int(n)) | (Int(n), List(items)) => {
                let n = n.max(0) as usize;
                if items.len().saturating_mul(n) > MAX_COLLECTION {
                    return rt(line, "list too large");
                }
                let mut out = Vec::with_capacity(items.len() * n);
                for _ in 0..n {
                    out.extend(items.iter().cloned());
                }
                Value::list(out)
            }
            (a, b) => match (num(&a), num(&b)) {
                (Some(x), Some(y)) => Float(x * y),
                _ => return rt(line, format!("cannot multiply {} and {}", a.kind(), b.kind())),
            },
        },
        BinOp::Div => match (num(&l), num(&r)) {
            (Some(_), Some(0.0)) => return rt(line, "division by zero"),
            (Some(x), Some(y)) => Float(x / y),
            _ => return rt(line, format!("cannot divide {} by {}", l.kind(), r.kind())),
        },
        BinOp::FloorDiv | BinOp::Mod => match (l, r) {
            (Int(_), Int(0)) => return rt(line, "division by zero"),
            (Int(a), Int(b)) => {
                if op == BinOp::FloorDiv {
                    Int(a.checked_div_euclid(b).ok_or_else(|| overflow(line))?)
                } else {
                    Int(a.checked_rem_euclid(b).ok_or_else(|| overflow(line))?)
                }
            }
            (a, b) => match (num(&a), num(&b)) {
                (Some(_), Some(0.0)) => return rt(line, "division by zero"),
                (Some(x), Some(y)) => {
                    if op == BinOp::FloorDiv {
                        Float((x / y).floor())
                    } else {
                        Float(x - y * (x / y).floor())
                    }
                }
                _ => return rt(line, format!("unsupported operands {} and {}", a.kind(), b.kind())),
            },
        },
        BinOp::Eq => Bool(l == r),
        BinOp::Ne => Bool(l != r),
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
            let ord = match (&l, &r) {
                (Str(a), Str(b)) => a.cmp(b),
                _ => match (num(&l), num(&r)) {
                    (Some(x), Some(y)) => match x.partial_cmp(&y) {
                        Some(o) => o,
                        Option::None => return Ok(Bool(false)),
                    },
                    _ => return rt(line, format!("cannot compare {} and {}", l.kind(), r.kind())),
                },
            };
            Bool(match op {
                BinOp::Lt => ord.is_lt(),
                BinOp::Le => ord.is_le(),
                BinOp::Gt => ord.is_gt(),
                _ => ord.is_ge(),
            })
        }
        BinOp::In => match (&l, &r) {
            (_, List(items)) => Bool(items.contains(&l)),
            (Str(needle), Str(hay)) => Bool(hay.contains(needle.as_str())),
            (Str(k), Map(m)) => Bool(m.contains_key(k)),
            _ => return rt(line, format!("'in' not supported for {} in {}", l.kind(), r.kind())),
        },
    })
}
