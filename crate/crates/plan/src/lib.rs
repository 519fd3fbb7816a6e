//! Sandboxed plan language and its session-caching runtime.
//!
//! Plans are small imperative scripts: literals, arithmetic, strings,
//! lists, maps, `if`/`elif`/`else`, `while`, `for … in`, `def`, calls to
//! registered kernel actions, and a `parallel { … }` block whose
//! statements run concurrently and join before the next statement.
//! The language has no file, process or network primitives; the only way
//! out of the sandbox is an action registered with
//! [`PlanRuntime::register_action`].
//!
//! Each session keeps its variables and function definitions between
//! `execute` calls, the way a notebook kernel does. [`PlanRuntime::branch`]
//! forks a session so concurrent consumers of the same cached state cannot
//! interfere with each other.

mod ast;
mod builtins;
mod error;
mod interp;
mod lexer;
mod parser;
mod runtime;
mod value;

pub use ast::{BinOp, Expr, FunctionDef, Stmt, StmtKind, Target, UnaryOp};
pub use error::{ExecError, ExecErrorKind, PlanError};
pub use parser::PlanScript;
pub use runtime::{
    preview, render_digest, ExecStatus, ExecutionResult, PlanRuntime, RuntimeConfig, SessionId,
    SessionInfo, DIGEST_TAG, EMPTY_DIGEST,
};
pub use value::{Handle, Value};

use std::any::Any;
use std::sync::Arc;

/// Per-execution information handed to actions.
#[derive(Clone)]
pub struct ActionContext {
    pub session: SessionId,
    pub scope: Option<Arc<dyn Any + Send + Sync>>,
}

impl ActionContext {
    /// Downcasts the caller-supplied scope.
    pub fn scope<T: Any + Send + Sync>(&self) -> Option<&T> {
        self.scope.as_deref().and_then(|s| s.downcast_ref::<T>())
    }
}

impl std::fmt::Debug for ActionContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ActionContext")
            .field("session", &self.session)
            .field("scoped", &self.scope.is_some())
            .finish()
    }
}

/// Host side of a kernel action callable from plan scripts.
pub trait ActionHandler: Send + Sync {
    fn call(&self, args: &[Value]) -> Result<Value, String>;

    fn call_in(&self, _cx: &ActionContext, args: &[Value]) -> Result<Value, String> {
        self.call(args)
    }
}

impl<F> ActionHandler for F
where
    F: Fn(&[Value]) -> Result<Value, String> + Send + Sync,
{
    fn call(&self, args: &[Value]) -> Result<Value, String> {
        self(args)
    }
}

/// Adapter for actions that need the calling session or scope.
pub struct ContextAction<F>(F);

pub fn with_context<F>(f: F) -> ContextAction<F>
where
    F: Fn(&ActionContext, &[Value]) -> Result<Value, String> + Send + Sync,
{
    ContextAction(f)
}

impl<F> ActionHandler for ContextAction<F>
where
    F: Fn(&ActionContext, &[Value]) -> Result<Value, String> + Send + Sync,
{
    fn call(&self, _args: &[Value]) -> Result<Value, String> {
        Err("action requires an execution context".into())
    }

    fn call_in(&self, cx: &ActionContext, args: &[Value]) -> Result<Value, String> {
        (self.0)(cx, args)
    }
}

/// Returns true if `name` is reserved by the language.
pub fn is_builtin(name: &str) -> bool {
    builtins::is_builtin(name)
}
