use std::any::Any;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::error::{ExecError, ExecErrorKind, PlanError};
use crate::interp::{Env, Flow, Interp, RtErr, Sink};
use crate::parser::PlanScript;
use crate::value::Value;
use crate::{builtins, ActionContext, ActionHandler};

pub const DIGEST_TAG: &str = "digest/v1";
pub const EMPTY_DIGEST: &str = "(no cached state)";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SessionId(String);

impl SessionId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SessionId {
    fn from(s: &str) -> Self {
        SessionId(s.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    /// Maximum statements executed by one `execute` call.
    pub statement_budget: usize,
    /// Characters of each value shown in the namespace digest.
    pub preview_chars: usize,
    pub max_call_depth: usize,
    pub max_digest_entries: usize,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self { statement_budget: 10_000, preview_chars: 200, max_call_depth: 64, max_digest_entries: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    /// Printed lines, plus the value of a trailing expression statement.
    pub outputs: Vec<String>,
    pub error: Option<ExecError>,
    /// Names written by this call, in first-write order.
    pub new_bindings: Vec<String>,
    pub statements_executed: usize,
    pub actions_invoked: Vec<String>,
}

impl ExecutionResult {
    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }
}

/// Frozen bindings shared by a session and the branches forked from it.
#[derive(Debug)]
struct Layer {
    bindings: BTreeMap<String, Value>,
    parent: Option<Arc<Layer>>,
}

#[derive(Debug)]
struct Namespace {
    local: BTreeMap<String, Value>,
    parent: Option<Arc<Layer>>,
    generation: u64,
    branched_from: Option<SessionId>,
    total_statements: u64,
}

impl Namespace {
    fn lookup(&self, name: &str) -> Option<&Value> {
        if let Some(v) = self.local.get(name) {
            return Some(v);
        }
        let mut layer = self.parent.as_deref();
        while let Some(l) = layer {
            if let Some(v) = l.bindings.get(name) {
                return Some(v);
            }
            layer = l.parent.as_deref();
        }
        None
    }

    fn merged(&self) -> BTreeMap<String, Value> {
        let mut chain = Vec::new();
        let mut layer = self.parent.as_deref();
        while let Some(l) = layer {
            chain.push(&l.bindings);
            layer = l.parent.as_deref();
        }
        let mut out = BTreeMap::new();
        for bindings in chain.into_iter().rev() {
            out.extend(bindings.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
        out.extend(self.local.iter().map(|(k, v)| (k.clone(), v.clone())));
        out
    }
}

/// Records which names a script wrote.
struct Tracked<'a> {
    ns: &'a mut Namespace,
    written: Vec<String>,
}

impl Env for Tracked<'_> {
    fn get(&self, name: &str) -> Option<Value> {
        self.ns.lookup(name).cloned()
    }

    fn set(&mut self, name: &str, value: Value) {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        self.ns.local.insert(name.to_string(), value);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionInfo {
    pub generation: u64,
    pub branched_from: Option<SessionId>,
    pub total_statements: u64,
}

/// Executes plan scripts against cached, per-session namespaces.
///
/// Calls on one session are serialized; distinct sessions (including
/// sibling branches) run concurrently.
pub struct PlanRuntime {
    config: RuntimeConfig,
    sessions: RwLock<HashMap<SessionId, Arc<Mutex<Namespace>>>>,
    actions: RwLock<BTreeMap<String, Arc<dyn ActionHandler>>>,
    next_id: AtomicU64,
}

impl Default for PlanRuntime {
    fn default() -> Self {
        Self::new(RuntimeConfig::default())
    }
}

impl PlanRuntime {
    pub fn new(config: RuntimeConfig) -> Self {
        Self {
            config,
            sessions: RwLock::new(HashMap::new()),
            actions: RwLock::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.config
    }

    fn fresh_id(&self) -> SessionId {
        SessionId(format!("ns-{:06}", self.next_id.fetch_add(1, Ordering::Relaxed)))
    }

    pub fn create_session(&self) -> SessionId {
        let id = self.fresh_id();
        let ns = Namespace {
            local: BTreeMap::new(),
            parent: None,
            generation: 0,
            branched_from: None,
            total_statements: 0,
        };
        self.sessions.write().insert(id.clone(), Arc::new(Mutex::new(ns)));
        id
    }

    pub fn close_session(&self, id: &SessionId) -> bool {
        self.sessions.write().remove(id).is_some()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().len()
    }

    fn session(&self, id: &SessionId) -> Result<Arc<Mutex<Namespace>>, PlanError> {
        self.sessions.read().get(id).cloned().ok_or_else(|| PlanError::UnknownSession(id.0.clone()))
    }

    pub fn register_action<H>(&self, name: &str, handler: H) -> Result<(), PlanError>
    where
        H: ActionHandler + 'static,
    {
        let mut actions = self.actions.write();
        if actions.contains_key(name) || builtins::is_builtin(name) {
            return Err(PlanError::DuplicateAction(name.to_string()));
        }
        actions.insert(name.to_string(), Arc::new(handler));
        Ok(())
    }

    pub fn has_action(&self, name: &str) -> bool {
        self.actions.read().contains_key(name)
    }

    pub fn execute(&self, id: &SessionId, source: &str) -> Result<ExecutionResult, PlanError> {
        let script = PlanScript::parse(source)?;
        self.execute_script(id, &script)
    }

    pub fn execute_script(&self, id: &SessionId, script: &PlanScript) -> Result<ExecutionResult, PlanError> {
        self.execute_in(id, script, None)
    }

    /// Runs `script` with `scope` made available to context-aware actions
    /// (see [`crate::with_context`]).
    pub fn execute_in(
        &self,
        id: &SessionId,
        script: &PlanScript,
        scope: Option<Arc<dyn Any + Send + Sync>>,
    ) -> Result<ExecutionResult, PlanError> {
        let context = ActionContext { session: id.clone(), scope };
        let slot = self.session(id)?;
        let actions = self.actions.read().clone();
        let mut ns = slot.lock();
        let executed = AtomicUsize::new(0);
        let interp = Interp {
            actions: &actions,
            executed: &executed,
            context: &context,
            budget: self.config.statement_budget,
            max_call_depth: self.config.max_call_depth,
        };
        let mut env = Tracked { ns: &mut ns, written: Vec::new() };
        let mut sink = Sink::default();
        let mut error = None;

        let last = script.statements.len().saturating_sub(1);
        for (index, stmt) in script.statements.iter().enumerate() {
            let result = match &stmt.kind {
                crate::ast::StmtKind::Expr(expr) if index == last => {
                    run_trailing_expr(&interp, stmt, expr, &mut env, &mut sink)
                }
                _ => interp.exec_stmt(stmt, &mut env, &mut sink, 0).and_then(|flow| match flow {
                    Flow::Normal => Ok(()),
                    Flow::Return(_) => Err(RtErr {
                        kind: ExecErrorKind::Runtime,
                        message: "return outside function".into(),
                        line: stmt.line,
                    }),
                    Flow::Break | Flow::Continue => Err(RtErr {
                        kind: ExecErrorKind::Runtime,
                        message: "break/continue outside loop".into(),
                        line: stmt.line,
                    }),
                }),
            };
            if let Err(e) = result {
                error = Some(ExecError {
                    kind: e.kind,
                    message: e.message,
                    failing_statement_index: index,
                    line: e.line,
                });
                break;
            }
        }

        let new_bindings = env.written;
        let statements_executed = executed.load(Ordering::SeqCst).min(self.config.statement_budget);
        ns.total_statements += statements_executed as u64;
        Ok(ExecutionResult {
            status: if error.is_some() { ExecStatus::Error } else { ExecStatus::Ok },
            outputs: sink.outputs,
            error,
            new_bindings,
            statements_executed,
            actions_invoked: sink.actions,
        })
    }

    /// Forks `id`. The source's current bindings are frozen into a shared
    /// layer; both the source and the new branch keep writing into their
    /// own local maps on top of it, so neither sees the other's writes.
    pub fn branch(&self, id: &SessionId) -> Result<SessionId, PlanError> {
        let slot = self.session(id)?;
        let mut src = slot.lock();
        let frozen = Arc::new(Layer { bindings: std::mem::take(&mut src.local), parent: src.parent.take() });
        src.parent = Some(frozen.clone());
        src.generation += 1;
        let child_id = self.fresh_id();
        let child = Namespace {
            local: BTreeMap::new(),
            parent: Some(frozen),
            generation: 0,
            branched_from: Some(id.clone()),
            total_statements: 0,
        };
        drop(src);
        self.sessions.write().insert(child_id.clone(), Arc::new(Mutex::new(child)));
        Ok(child_id)
    }

    pub fn get(&self, id: &SessionId, name: &str) -> Result<Option<Value>, PlanError> {
        Ok(self.session(id)?.lock().lookup(name).cloned())
    }

    /// Every visible binding, with local writes shadowing inherited ones.
    pub fn bindings(&self, id: &SessionId) -> Result<BTreeMap<String, Value>, PlanError> {
        Ok(self.session(id)?.lock().merged())
    }

    pub fn info(&self, id: &SessionId) -> Result<SessionInfo, PlanError> {
        let slot = self.session(id)?;
        let ns = slot.lock();
        Ok(SessionInfo {
            generation: ns.generation,
            branched_from: ns.branched_from.clone(),
            total_statements: ns.total_statements,
        })
    }

    pub fn namespace_digest(&self, id: &SessionId) -> Result<String, PlanError> {
        let bindings = self.bindings(id)?;
        Ok(render_digest(&bindings, &self.config))
    }
}

fn run_trailing_expr(
    interp: &Interp<'_>,
    stmt: &crate::ast::Stmt,
    expr: &crate::ast::Expr,
    env: &mut Tracked<'_>,
    sink: &mut Sink,
) -> Result<(), RtErr> {
    let executed_before = interp.executed.fetch_add(1, Ordering::SeqCst) + 1;
    if executed_before > interp.budget {
        return Err(RtErr {
            kind: ExecErrorKind::BudgetExceeded,
            message: format!("statement budget of {} exceeded", interp.budget),
            line: stmt.line,
        });
    }
    let v = interp.eval(expr, env, sink, 0, stmt.line)?;
    if !matches!(v, Value::None) {
        sink.outputs.push(v.repr());
    }
    Ok(())
}

/// Renders `digest/v1`: one line per binding in name order, with a
/// bounded preview of each value.
pub fn render_digest(bindings: &BTreeMap<String, Value>, config: &RuntimeConfig) -> String {
    let mut out = String::from(DIGEST_TAG);
    out.push('\n');
    if bindings.is_empty() {
        out.push_str(EMPTY_DIGEST);
        return out;
    }
    for (i, (name, value)) in bindings.iter().enumerate() {
        if i == config.max_digest_entries {
            out.push_str(&format!("… ({} more bindings)\n", bindings.len() - i));
            break;
        }
        let line = match value {
            Value::Function(def) => format!("{name}: function({})", def.params.join(", ")),
            other => format!("{name}: {} = {}", other.kind(), preview(&other.to_string(), config.preview_chars)),
        };
        out.push_str(&line);
        out.push('\n');
    }
    out.pop();
    out
}

/// Escapes control characters and cuts to `limit` characters, appending
/// `…` when something was dropped.
pub fn preview(text: &str, limit: usize) -> String {
    let escaped: String = text
        .chars()
        .flat_map(|c| match c {
            '\n' => vec!['\\', 'n'],
            '\r' => vec!['\\', 'r'],
            '\t' => vec!['\\', 't'],
            c => vec![c],
        })
        .collect();
    if escaped.chars().count() <= limit {
        escaped
    } else {
        let mut cut: String = escaped.chars().take(limit).collect();
        cut.push('…');
        cut
    }
}
