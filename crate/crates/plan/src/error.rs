use thiserror::Error;

/// Errors raised by the runtime API itself. Failures *inside* a script
/// are reported through [`crate::ExecutionResult`] so the caller can feed
/// them back to the policy.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("action {0} is already registered")]
    DuplicateAction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecErrorKind {
    Runtime,
    ActionUnknown,
    ActionFailed,
    BudgetExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecError {
    pub kind: ExecErrorKind,
    pub message: String,
    /// Index of the top-level statement that failed.
    pub failing_statement_index: usize,
    pub line: usize,
}

impl std::fmt::Display for ExecError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (statement {}, line {})",
            self.message, self.failing_statement_index, self.line
        )
    }
}
