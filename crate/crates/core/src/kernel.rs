//! The autopilot loop. Each step shows the observed state to the policy,
//! which answers, runs a plan, or starts a perception task one level
//! deeper (web, file, memory). Perception results flow back into the
//! parent's observed state as fragments.

use std::any::Any;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use autopilot_plan::{with_context, ActionContext, ExecutionResult, PlanRuntime, PlanScript, SessionId, Value};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decision::{parse_step_decision, StepDecision, WebAction};
use crate::events::{EventBody, EventBus};
use crate::file::{FileHandle, FileOp, FileRegistry, NavTarget, OpResult, ReadRequest};
use crate::memory::{capitalized_phrases, MemorySource, MemoryStore, RecordMeta, RetrievalQuery};
use crate::policy::PolicyHandle;
use crate::prompt::{condense_trajectory, prompt_trajectory, BudgetUnsatisfiable, PromptConfig, Trajectory, Turn};
use crate::state::{FragmentSource, Limits, ObservedState, StateFragment, TaskContext, TaskId};
use crate::tokenizer::ReferenceTokenizer;
use crate::web::{browse, BrowseConfig, BrowseHooks, BrowseStatus, Observation, Targeting, WebEnvironment, WebError, WebSession};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Completed,
    StepLimit,
    DepthLimit,
    Cancelled,
    Error,
}

impl TaskStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Completed => "completed",
            Self::StepLimit => "step_limit",
            Self::DepthLimit => "depth_limit",
            Self::Cancelled => "cancelled",
            Self::Error => "error",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone)]
pub struct KernelConfig {
    pub limits: Limits,
    /// Extra attempts after an unparseable policy output, per step.
    pub retry_budget: u32,
    pub prompt: PromptConfig,
    pub observation_budget: usize,
    pub targeting: Targeting,
    pub memory_k: usize,
    pub preview_chars: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            limits: Limits::default(),
            retry_budget: 2,
            prompt: PromptConfig::default(),
            observation_budget: crate::web::DEFAULT_OBSERVATION_BUDGET,
            targeting: Targeting::RoleName,
            memory_k: 5,
            preview_chars: 200,
        }
    }
}

/// Where a task runs: whose data it may touch, which plan namespace it
/// caches into, and where its events go.
#[derive(Clone)]
pub struct TaskEnv {
    pub user_id: String,
    pub chat_session: String,
    pub namespace: SessionId,
    pub events: EventBus,
    pub cancel: CancelToken,
    pub deadline: Option<Instant>,
    ids: Arc<AtomicU64>,
}

impl TaskEnv {
    pub fn new(user_id: impl Into<String>, chat_session: impl Into<String>, namespace: SessionId) -> Self {
        Self {
            user_id: user_id.into(),
            chat_session: chat_session.into(),
            namespace,
            events: EventBus::null(),
            cancel: CancelToken::new(),
            deadline: None,
            ids: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn with_events(mut self, events: EventBus) -> Self {
        self.events = events;
        self
    }

    pub fn with_cancel(mut self, cancel: CancelToken) -> Self {
        self.cancel = cancel;
        self
    }

    fn expired(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u32,
    pub decision_kind: String,
    pub payload_digest: String,
    pub payload_preview: String,
    /// Policy calls spent on this step, including malformed outputs.
    pub attempts: u32,
    pub fragments_added: Vec<StateFragment>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TaskTrace>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTrace {
    pub task_id: String,
    pub parent_task: Option<String>,
    /// `task`, `web`, `file` or `memory`.
    pub kind: String,
    pub instruction: String,
    pub depth: u32,
    pub status: TaskStatus,
    pub answer: String,
    pub policy_calls: u32,
    pub records: Vec<TraceRecord>,
}

impl TaskTrace {
    fn new(ctx: &TaskContext, kind: &str) -> Self {
        Self {
            task_id: ctx.task_id.0.clone(),
            parent_task: ctx.parent_task.as_ref().map(|t| t.0.clone()),
            kind: kind.into(),
            instruction: ctx.instruction.clone(),
            depth: ctx.depth,
            status: TaskStatus::Completed,
            answer: String::new(),
            policy_calls: 0,
            records: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn children(&self) -> impl Iterator<Item = &TaskTrace> {
        self.records.iter().flat_map(|r| r.children.iter())
    }

    /// Visits every task in the tree with its parent.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a TaskTrace, Option<&'a TaskTrace>)) {
        fn go<'a>(t: &'a TaskTrace, parent: Option<&'a TaskTrace>, f: &mut dyn FnMut(&'a TaskTrace, Option<&'a TaskTrace>)) {
            f(t, parent);
            for c in t.children() {
                go(c, Some(t), f);
            }
        }
        go(self, None, f)
    }

    pub fn max_depth(&self) -> u32 {
        let mut d = 0;
        self.walk(&mut |t, _| d = d.max(t.depth));
        d
    }

    pub fn decision_kinds(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.decision_kind.as_str()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TaskResult {
    pub task_id: TaskId,
    pub answer: String,
    pub status: TaskStatus,
    pub error: Option<String>,
    pub trace: TaskTrace,
    pub state: ObservedState,
    /// The last prompt in message form, followed by the policy's reply.
    pub final_messages: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("malformed decision after {attempts} attempts: {last}")]
    MalformedDecision { attempts: u32, last: String },
    #[error("policy unavailable: {0}")]
    PolicyUnavailable(String),
    #[error(transparent)]
    Budget(#[from] BudgetUnsatisfiable),
    #[error("depth limit: a perception task at depth {depth} exceeds max_depth {max_depth}")]
    DepthExceeded { depth: u32, max_depth: u32 },
    #[error("{0}")]
    Perception(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PerceptionRequest {
    Web { instruction: String, url: Option<String> },
    File { instruction: String, file: Option<String> },
    MemoryRead(String),
    MemoryWrite(String),
}

impl PerceptionRequest {
    pub fn from_decision(d: &StepDecision) -> Option<Self> {
        Some(match d {
            StepDecision::PerceiveWeb { instruction, url } => Self::Web { instruction: instruction.clone(), url: url.clone() },
            StepDecision::PerceiveFile { instruction, file } => {
                Self::File { instruction: instruction.clone(), file: file.clone() }
            }
            StepDecision::MemoryRead(q) => Self::MemoryRead(q.clone()),
            StepDecision::MemoryWrite(t) => Self::MemoryWrite(t.clone()),
            StepDecision::FinalAnswer(_) | StepDecision::ExecutePlan(_) => return None,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Web { .. } => "web",
            Self::File { .. } => "file",
            Self::MemoryRead(_) | Self::MemoryWrite(_) => "memory",
        }
    }

    pub fn instruction(&self) -> &str {
        match self {
            Self::Web { instruction, .. } | Self::File { instruction, .. } => instruction,
            Self::MemoryRead(s) | Self::MemoryWrite(s) => s,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PerceptionResult {
    pub summary: String,
    /// The fragment type the summary enters the parent's state as.
    pub source: FragmentSource,
    pub status: TaskStatus,
    pub trace: TaskTrace,
}

#[derive(Debug, Clone)]
pub struct Stepped {
    pub decision: StepDecision,
    pub raw: String,
    pub attempts: u32,
    pub messages: Vec<serde_json::Value>,
}

const SUMMARIZE: &str = "The step limit is reached. Summarize what you found so far as FinalAnswer(answer=\"...\").";

pub fn payload_digest(payload: &str) -> String {
    let d = Sha256::digest(payload.as_bytes());
    let hex: String = d.iter().take(8).map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

fn now_secs() -> String {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0).to_string()
}

struct Inner {
    config: KernelConfig,
    policy: PolicyHandle,
    runtime: Arc<PlanRuntime>,
    memory: Arc<MemoryStore>,
    files: Arc<FileRegistry>,
    web: Option<Arc<dyn WebEnvironment>>,
    next_root: AtomicU64,
}

#[derive(Clone)]
pub struct Kernel {
    inner: Arc<Inner>,
}

pub struct KernelBuilder {
    config: KernelConfig,
    policy: PolicyHandle,
    runtime: Option<Arc<PlanRuntime>>,
    memory: Option<Arc<MemoryStore>>,
    files: Option<Arc<FileRegistry>>,
    web: Option<Arc<dyn WebEnvironment>>,
}

impl KernelBuilder {
    pub fn config(mut self, config: KernelConfig) -> Self {
        self.config = config;
        self
    }

    pub fn runtime(mut self, runtime: Arc<PlanRuntime>) -> Self {
        self.runtime = Some(runtime);
        self
    }

    pub fn memory(mut self, memory: Arc<MemoryStore>) -> Self {
        self.memory = Some(memory);
        self
    }

    pub fn files(mut self, files: Arc<FileRegistry>) -> Self {
        self.files = Some(files);
        self
    }

    pub fn web(mut self, web: Arc<dyn WebEnvironment>) -> Self {
        self.web = Some(web);
        self
    }

    pub fn build(self) -> Kernel {
        let runtime = self.runtime.unwrap_or_default();
        register_actions(&runtime);
        Kernel {
            inner: Arc::new(Inner {
                config: self.config,
                policy: self.policy,
                runtime,
                memory: self.memory.unwrap_or_default(),
                files: self.files.unwrap_or_default(),
                web: self.web,
                next_root: AtomicU64::new(1),
            }),
        }
    }
}

impl Kernel {
    pub fn builder(policy: PolicyHandle) -> KernelBuilder {
        KernelBuilder { config: KernelConfig::default(), policy, runtime: None, memory: None, files: None, web: None }
    }

    pub fn new(policy: PolicyHandle) -> Self {
        Self::builder(policy).build()
    }

    pub fn config(&self) -> &KernelConfig {
        &self.inner.config
    }

    pub fn runtime(&self) -> &Arc<PlanRuntime> {
        &self.inner.runtime
    }

    pub fn memory(&self) -> &Arc<MemoryStore> {
        &self.inner.memory
    }

    pub fn files(&self) -> &Arc<FileRegistry> {
        &self.inner.files
    }

    pub fn policy(&self) -> &PolicyHandle {
        &self.inner.policy
    }

    pub fn new_task_id(&self) -> TaskId {
        TaskId(format!("task-{:06}", self.inner.next_root.fetch_add(1, Ordering::SeqCst)))
    }

    /// A root context with the kernel's default limits.
    pub fn root_context(&self, instruction: impl Into<String>) -> TaskContext {
        TaskContext::root(self.new_task_id(), instruction, self.inner.config.limits)
    }

    /// Convenience: runs `instruction` as a root task in `env`.
    pub fn run(&self, env: &TaskEnv, instruction: &str) -> TaskResult {
        let ctx = self.root_context(instruction);
        self.run_task(env, ctx, ObservedState::with_user_input(instruction))
    }

    pub fn run_task(&self, env: &TaskEnv, ctx: TaskContext, initial: ObservedState) -> TaskResult {
        let mut env = env.clone();
        let budget_end = Instant::now() + ctx.limits.wall_clock_budget;
        env.deadline = Some(env.deadline.map_or(budget_end, |d| d.min(budget_end)));
        self.run_loop(&env, ctx, initial, "task")
    }

    fn emit(&self, env: &TaskEnv, ctx: &TaskContext, body: EventBody) {
        env.events.emit(&ctx.task_id.0, ctx.depth, body);
    }

    fn push(&self, env: &TaskEnv, ctx: &TaskContext, state: &mut ObservedState, source: FragmentSource, content: String) {
        let body = if source == FragmentSource::ErrorReport {
            EventBody::Error { message: content.clone(), fatal: false }
        } else {
            EventBody::Observation { step: ctx.step_index, source: source.as_str().into(), content: content.clone() }
        };
        state.push(source, content, ctx.step_index);
        self.emit(env, ctx, body);
    }

    fn digest(&self, env: &TaskEnv) -> String {
        self.inner.runtime.namespace_digest(&env.namespace).unwrap_or_default()
    }

    fn prompt(&self, ctx: &TaskContext, state: &ObservedState, digest: &str, tail: Option<&str>) -> Result<Trajectory, BudgetUnsatisfiable> {
        let mut t = prompt_trajectory(ctx, state, digest, &self.inner.config.prompt);
        if let Some(tail) = tail {
            t.turns.pop();
            t.push(Turn::system(tail));
        }
        condense_trajectory(&t, self.inner.config.prompt.context_budget, &ReferenceTokenizer)
    }

    /// Asks the policy for one decision. Unparseable outputs append an
    /// error report to `state` and are retried up to `retry_budget` times.
    pub fn step(&self, env: &TaskEnv, ctx: &TaskContext, state: &mut ObservedState) -> Result<Stepped, KernelError> {
        let digest = self.digest(env);
        let mut attempts = 0;
        loop {
            let traj = self.prompt(ctx, state, &digest, None)?;
            attempts += 1;
            let raw = self
                .inner
                .policy
                .complete(&traj.render())
                .map_err(|e| KernelError::PolicyUnavailable(e.to_string()))?;
            match parse_step_decision(&raw) {
                Ok(p) => {
                    let mut messages = traj.to_messages();
                    messages.push(serde_json::json!({ "role": "assistant", "content": raw }));
                    return Ok(Stepped { decision: p.action, raw, attempts, messages });
                }
                Err(e) => {
                    self.push(
                        env,
                        ctx,
                        state,
                        FragmentSource::ErrorReport,
                        format!("Your last output could not be parsed: {e}. Emit exactly one decision in the required format."),
                    );
                    if attempts > self.inner.config.retry_budget {
                        return Err(KernelError::MalformedDecision { attempts, last: e.to_string() });
                    }
                }
            }
        }
    }

    fn summarize(&self, env: &TaskEnv, ctx: &TaskContext, state: &ObservedState) -> (String, Vec<serde_json::Value>) {
        let digest = self.digest(env);
        let traj = match self.prompt(ctx, state, &digest, Some(SUMMARIZE)) {
            Ok(t) => t,
            Err(e) => return (format!("Step limit reached; no summary available ({e})"), Vec::new()),
        };
        let mut messages = traj.to_messages();
        match self.inner.policy.complete(&traj.render()) {
            Ok(raw) => {
                messages.push(serde_json::json!({ "role": "assistant", "content": raw }));
                let parsed = parse_step_decision(&raw).or_else(|_| parse_step_decision(&format!("Action: {}", raw.trim())));
                let answer = match parsed {
                    Ok(p) => match p.action {
                        StepDecision::FinalAnswer(a) => a,
                        _ => raw.trim().to_string(),
                    },
                    Err(_) => raw.trim().to_string(),
                };
                (answer, messages)
            }
            Err(e) => (format!("Step limit reached; no summary available ({e})"), messages),
        }
    }

    fn run_loop(&self, env: &TaskEnv, mut ctx: TaskContext, mut state: ObservedState, kind: &str) -> TaskResult {
        let mut trace = TaskTrace::new(&ctx, kind);
        let mut answer = String::new();
        let mut error = None;
        let mut messages = Vec::new();
        let status;

        if ctx.depth > ctx.limits.max_depth {
            status = TaskStatus::DepthLimit;
            error = Some(KernelError::DepthExceeded { depth: ctx.depth, max_depth: ctx.limits.max_depth }.to_string());
        } else if self.inner.runtime.info(&env.namespace).is_err() {
            status = TaskStatus::Error;
            error = Some(format!("unknown plan namespace {}", env.namespace.as_str()));
        } else {
            loop {
                if env.cancel.is_cancelled() {
                    status = TaskStatus::Cancelled;
                    error = Some("cancelled".into());
                    break;
                }
                if ctx.step_index >= ctx.limits.max_steps || env.expired() {
                    let before = state.len();
                    let (a, m) = self.summarize(env, &ctx, &state);
                    trace.policy_calls += 1;
                    trace.records.push(TraceRecord {
                        step: ctx.step_index,
                        decision_kind: "final_answer".into(),
                        payload_digest: payload_digest(&a),
                        payload_preview: autopilot_plan::preview(&a, self.inner.config.preview_chars),
                        attempts: 1,
                        fragments_added: state.fragments()[before..].to_vec(),
                        children: Vec::new(),
                    });
                    answer = a;
                    messages = m;
                    status = TaskStatus::StepLimit;
                    break;
                }
                let before = state.len();
                let stepped = match self.step(env, &ctx, &mut state) {
                    Ok(s) => s,
                    Err(e) => {
                        let attempts = match &e {
                            KernelError::MalformedDecision { attempts, .. } => *attempts,
                            KernelError::PolicyUnavailable(_) => 1,
                            _ => 0,
                        };
                        trace.policy_calls += attempts;
                        let kind = match &e {
                            KernelError::MalformedDecision { .. } => "malformed_decision",
                            _ => "error",
                        };
                        trace.records.push(TraceRecord {
                            step: ctx.step_index,
                            decision_kind: kind.into(),
                            payload_digest: payload_digest(""),
                            payload_preview: String::new(),
                            attempts,
                            fragments_added: state.fragments()[before..].to_vec(),
                            children: Vec::new(),
                        });
                        status = TaskStatus::Error;
                        error = Some(e.to_string());
                        break;
                    }
                };
                trace.policy_calls += stepped.attempts;
                messages = stepped.messages;
                let payload = stepped.decision.payload();
                let mut record = TraceRecord {
                    step: ctx.step_index,
                    decision_kind: stepped.decision.kind().as_str().into(),
                    payload_digest: payload_digest(&payload),
                    payload_preview: autopilot_plan::preview(&payload, self.inner.config.preview_chars),
                    attempts: stepped.attempts,
                    fragments_added: Vec::new(),
                    children: Vec::new(),
                };
                let done = match stepped.decision {
                    StepDecision::FinalAnswer(a) => {
                        answer = a;
                        true
                    }
                    StepDecision::ExecutePlan(script) => {
                        self.execute_plan(env, &ctx, &mut state, &script, &mut record);
                        false
                    }
                    other => {
                        let req = PerceptionRequest::from_decision(&other).expect("perception decision");
                        match self.spawn_perception(env, &ctx, req) {
                            Ok(r) => {
                                record.children.push(r.trace);
                                self.push(env, &ctx, &mut state, r.source, r.summary);
                            }
                            Err(e) => self.push(env, &ctx, &mut state, FragmentSource::ErrorReport, e.to_string()),
                        }
                        false
                    }
                };
                record.fragments_added = state.fragments()[before..].to_vec();
                trace.records.push(record);
                if done {
                    status = TaskStatus::Completed;
                    break;
                }
                ctx.step_index += 1;
            }
        }

        if let Some(e) = &error {
            self.emit(env, &ctx, EventBody::Error { message: e.clone(), fatal: true });
        }
        self.emit(env, &ctx, EventBody::FinalAnswer { answer: answer.clone(), status });
        trace.status = status;
        trace.answer = answer.clone();
        TaskResult { task_id: ctx.task_id, answer, status, error, trace, state, final_messages: messages }
    }

    fn execute_plan(&self, env: &TaskEnv, ctx: &TaskContext, state: &mut ObservedState, script: &PlanScript, record: &mut TraceRecord) {
        self.emit(env, ctx, EventBody::PlanGenerated { step: ctx.step_index, script: script.source.clone() });
        let scope = Arc::new(PlanScope {
            kernel: self.clone(),
            env: env.clone(),
            ctx: ctx.clone(),
            children: Mutex::new(Vec::new()),
            refusals: Mutex::new(Vec::new()),
        });
        let result = self.inner.runtime.execute_in(&env.namespace, script, Some(scope.clone() as Arc<dyn Any + Send + Sync>));
        match result {
            Ok(r) => {
                self.emit(
                    env,
                    ctx,
                    EventBody::ActionExecuted {
                        step: ctx.step_index,
                        action: "execute_plan".into(),
                        ok: r.is_ok(),
                        detail: format!("{} statement(s); actions: [{}]", r.statements_executed, r.actions_invoked.join(", ")),
                    },
                );
                self.push(env, ctx, state, FragmentSource::ExecutionResult, describe_execution(&script.source, &r));
            }
            Err(e) => self.push(env, ctx, state, FragmentSource::ErrorReport, format!("Plan could not run: {e}")),
        }
        record.children.extend(scope.children.lock().drain(..));
        let refusals: Vec<String> = scope.refusals.lock().drain(..).collect();
        for r in refusals {
            self.push(env, ctx, state, FragmentSource::ErrorReport, r);
        }
    }

    /// Starts a perception task one level below `parent`. Refused with
    /// `DepthExceeded` before anything runs if that level is too deep.
    pub fn spawn_perception(&self, env: &TaskEnv, parent: &TaskContext, req: PerceptionRequest) -> Result<PerceptionResult, KernelError> {
        let n = env.ids.fetch_add(1, Ordering::SeqCst) + 1;
        let child_id = TaskId(format!("{}.{n}", parent.task_id));
        let child = parent.child(child_id, req.instruction()).ok_or(KernelError::DepthExceeded {
            depth: parent.depth + 1,
            max_depth: parent.limits.max_depth,
        })?;
        self.emit(
            env,
            &child,
            EventBody::PerceptionStarted {
                kind: req.kind().into(),
                instruction: req.instruction().into(),
                parent_task_id: parent.task_id.0.clone(),
            },
        );
        let result = match req {
            PerceptionRequest::Web { instruction, url } => self.perceive_web(env, child.clone(), &instruction, url.as_deref()),
            PerceptionRequest::File { instruction, file } => self.perceive_file(env, child.clone(), &instruction, file.as_deref()),
            PerceptionRequest::MemoryRead(q) => Ok(self.recall(env, &child, &q)),
            PerceptionRequest::MemoryWrite(t) => Ok(self.remember(env, &child, &t)),
        };
        if let Err(e) = &result {
            self.emit(env, &child, EventBody::Error { message: e.to_string(), fatal: true });
            self.emit(env, &child, EventBody::FinalAnswer { answer: String::new(), status: TaskStatus::Error });
        }
        result
    }

    fn leaf_result(&self, env: &TaskEnv, ctx: &TaskContext, kind: &str, source: FragmentSource, summary: String) -> PerceptionResult {
        let mut trace = TaskTrace::new(ctx, "memory");
        trace.records.push(TraceRecord {
            step: 0,
            decision_kind: kind.into(),
            payload_digest: payload_digest(&ctx.instruction),
            payload_preview: autopilot_plan::preview(&ctx.instruction, self.inner.config.preview_chars),
            attempts: 0,
            fragments_added: vec![StateFragment { source, content: summary.clone(), step_of_origin: 0 }],
            children: Vec::new(),
        });
        trace.answer = summary.clone();
        self.emit(env, ctx, EventBody::FinalAnswer { answer: summary.clone(), status: TaskStatus::Completed });
        PerceptionResult { summary, source, status: TaskStatus::Completed, trace }
    }

    fn recall(&self, env: &TaskEnv, ctx: &TaskContext, query: &str) -> PerceptionResult {
        let memory = &self.inner.memory;
        let q = RetrievalQuery::from_text(query, self.inner.config.memory_k, memory.embedder())
            .with_concepts(capitalized_phrases(query));
        let hits = memory.retrieve(&q, &env.user_id);
        let summary = if hits.entries.is_empty() {
            format!("No memories match \"{query}\".")
        } else {
            let mut out = format!("Memories matching \"{query}\":");
            for (i, e) in hits.entries.iter().enumerate() {
                if let Some(r) = memory.get(&env.user_id, &e.doc_id) {
                    out.push_str(&format!("\n{}. [{} score {:.3}] {}", i + 1, e.doc_id, e.score, r.text));
                }
            }
            out
        };
        self.leaf_result(env, ctx, "memory_read", FragmentSource::MemoryRecall, summary)
    }

    fn remember(&self, env: &TaskEnv, ctx: &TaskContext, text: &str) -> PerceptionResult {
        let meta = RecordMeta { timestamp: now_secs(), source: MemorySource::Note, user_id: env.user_id.clone() };
        let (source, summary) = match self.inner.memory.ingest(text, meta) {
            Ok(id) => (FragmentSource::ExecutionResult, format!("Stored in memory as {id}.")),
            Err(e) => (FragmentSource::ErrorReport, format!("Memory write failed: {e}")),
        };
        self.leaf_result(env, ctx, "memory_write", source, summary)
    }

    fn perceive_web(&self, env: &TaskEnv, ctx: TaskContext, instruction: &str, url: Option<&str>) -> Result<PerceptionResult, KernelError> {
        let web = self.inner.web.as_ref().ok_or_else(|| KernelError::Perception("no web environment is configured".into()))?;
        let driver = web.open(url).map_err(|e| KernelError::Perception(format!("could not open a browser session: {e}")))?;
        let cfg = &self.inner.config;
        let mut session = WebSession::new(driver).with_budget(cfg.observation_budget).with_targeting(cfg.targeting);
        let bcfg = BrowseConfig {
            max_steps: ctx.limits.max_steps,
            retry_budget: cfg.retry_budget,
            context_budget: cfg.prompt.context_budget,
            ..BrowseConfig::default()
        };
        let mut hooks = WebHooks { kernel: self, env, ctx: &ctx, children: BTreeMap::new() };
        let r = browse(&mut session, instruction, self.inner.policy.as_ref(), &bcfg, &mut hooks);
        let mut children = hooks.children;

        let status = match r.status {
            BrowseStatus::Completed => TaskStatus::Completed,
            BrowseStatus::StepLimit => TaskStatus::StepLimit,
            BrowseStatus::Cancelled if !env.cancel.is_cancelled() => TaskStatus::StepLimit,
            BrowseStatus::Cancelled => TaskStatus::Cancelled,
            BrowseStatus::Error => TaskStatus::Error,
        };
        let mut trace = TaskTrace::new(&ctx, "web");
        trace.policy_calls = r.steps.len() as u32 + u32::from(r.status == BrowseStatus::StepLimit);
        for s in &r.steps {
            trace.records.push(TraceRecord {
                step: s.index,
                decision_kind: s.action.clone().map(|a| a.to_lowercase()).unwrap_or_else(|| "malformed_decision".into()),
                payload_digest: payload_digest(&s.decision),
                payload_preview: autopilot_plan::preview(&s.decision, cfg.preview_chars),
                attempts: 1,
                fragments_added: Vec::new(),
                children: children.remove(&s.index).unwrap_or_default(),
            });
        }
        let (summary, source) = match (&r.error, status) {
            (Some(e), TaskStatus::Error | TaskStatus::Cancelled) => (format!("Web perception failed: {e}"), FragmentSource::ErrorReport),
            _ => (r.summary.clone(), FragmentSource::WebObservation),
        };
        trace.status = status;
        trace.answer = summary.clone();
        if let Some(e) = &r.error {
            self.emit(env, &ctx, EventBody::Error { message: e.clone(), fatal: true });
        }
        self.emit(env, &ctx, EventBody::FinalAnswer { answer: summary.clone(), status });
        Ok(PerceptionResult { summary, source, status, trace })
    }

    fn perceive_file(&self, env: &TaskEnv, ctx: TaskContext, instruction: &str, file: Option<&str>) -> Result<PerceptionResult, KernelError> {
        let files = &self.inner.files;
        let file_id = match file {
            Some(f) => f.to_string(),
            None => {
                let listed = files.session_files(&env.user_id, &env.chat_session);
                match listed.as_slice() {
                    [(id, _)] => id.clone(),
                    [] => return Err(KernelError::Perception("no file has been uploaded in this session".into())),
                    many => {
                        let ids: Vec<&str> = many.iter().map(|(id, _)| id.as_str()).collect();
                        return Err(KernelError::Perception(format!("several files are available; name one of {}", ids.join(", "))));
                    }
                }
            }
        };
        let handle = files
            .get_in_session(&env.user_id, &env.chat_session, &file_id)
            .ok_or_else(|| KernelError::Perception(format!("no file {file_id} in this session")))?;
        let meta = handle.lock().meta.clone();
        let intro = format!(
            "{instruction}\n\nFile {file_id}: \"{}\" ({}, {} page(s), {} characters).\n\
             Plan actions for files (pages are numbered from 0):\n\
             file_count(file, term) -> int, case-insensitive substring count\n\
             file_find(file, term) -> list of {{page, offset}}\n\
             file_extract(file, first_page, last_page) -> text\n\
             file_goto(file, \"next\" | \"prev\" | page) -> text\n\
             file_search(file, query, k) -> list of {{page, score, text}}\n\
             file_read(file, first_page, last_page) or file_read(file, question) -> text\n\
             Answer with FinalAnswer once you have what the task needs.",
            meta.filename, meta.media_type, meta.page_count, meta.char_count
        );
        let ns = self.inner.runtime.create_session();
        let mut cenv = env.clone();
        cenv.namespace = ns.clone();
        let r = self.run_loop(&cenv, ctx, ObservedState::with_user_input(intro), "file");
        self.inner.runtime.close_session(&ns);
        let (summary, source) = match r.status {
            TaskStatus::Completed | TaskStatus::StepLimit => (r.answer, FragmentSource::FileObservation),
            _ => (
                format!("File perception failed: {}", r.error.unwrap_or_else(|| r.status.as_str().into())),
                FragmentSource::ErrorReport,
            ),
        };
        Ok(PerceptionResult { summary, source, status: r.status, trace: r.trace })
    }
}

fn describe_execution(source: &str, r: &ExecutionResult) -> String {
    let mut out = format!("Plan:\n```plan\n{}\n```\n", source.trim_end());
    match &r.error {
        None => out.push_str(&format!("Status: ok ({} statement(s) executed)", r.statements_executed)),
        Some(e) => out.push_str(&format!("Status: error at statement {} (line {}): {:?}: {}", e.failing_statement_index, e.line, e.kind, e.message)),
    }
    if !r.outputs.is_empty() {
        out.push_str("\nOutput:\n");
        out.push_str(&r.outputs.join("\n"));
    }
    if !r.new_bindings.is_empty() {
        out.push_str(&format!("\nNew bindings: {}", r.new_bindings.join(", ")));
    }
    out
}

struct WebHooks<'a> {
    kernel: &'a Kernel,
    env: &'a TaskEnv,
    ctx: &'a TaskContext,
    children: BTreeMap<u32, Vec<TaskTrace>>,
}

impl BrowseHooks for WebHooks<'_> {
    fn on_observation(&mut self, step: u32, obs: &Observation) {
        self.kernel.env_emit(
            self.env,
            self.ctx,
            EventBody::Observation { step, source: FragmentSource::WebObservation.as_str().into(), content: obs.render() },
        );
    }

    fn on_action(&mut self, step: u32, action: &WebAction, outcome: &Result<(), WebError>) {
        self.kernel.env_emit(
            self.env,
            self.ctx,
            EventBody::ActionExecuted {
                step,
                action: action.name().into(),
                ok: outcome.is_ok(),
                detail: match outcome {
                    Ok(()) => crate::decision::render_web_action(None, action),
                    Err(e) => e.to_string(),
                },
            },
        );
    }

    fn nested(&mut self, step: u32, decision: &StepDecision) -> Result<String, String> {
        let req = PerceptionRequest::from_decision(decision).ok_or("only perception decisions are allowed while browsing")?;
        let mut at = self.ctx.clone();
        at.step_index = step;
        match self.kernel.spawn_perception(self.env, &at, req) {
            Ok(r) => {
                self.children.entry(step).or_default().push(r.trace);
                if r.source == FragmentSource::ErrorReport {
                    Err(r.summary)
                } else {
                    Ok(r.summary)
                }
            }
            Err(e) => Err(e.to_string()),
        }
    }

    fn cancelled(&self) -> bool {
        self.env.cancel.is_cancelled() || self.env.expired()
    }
}

impl Kernel {
    fn env_emit(&self, env: &TaskEnv, ctx: &TaskContext, body: EventBody) {
        self.emit(env, ctx, body)
    }
}

/// What context-aware plan actions see of the task that runs them.
struct PlanScope {
    kernel: Kernel,
    env: TaskEnv,
    ctx: TaskContext,
    children: Mutex<Vec<TaskTrace>>,
    refusals: Mutex<Vec<String>>,
}

impl PlanScope {
    fn perceive(&self, req: PerceptionRequest) -> Result<String, String> {
        match self.kernel.spawn_perception(&self.env, &self.ctx, req) {
            Ok(r) => {
                self.children.lock().push(r.trace);
                if r.source == FragmentSource::ErrorReport {
                    Err(r.summary)
                } else {
                    Ok(r.summary)
                }
            }
            Err(e) => {
                if matches!(e, KernelError::DepthExceeded { .. }) {
                    self.refusals.lock().push(e.to_string());
                }
                Err(e.to_string())
            }
        }
    }

    fn file(&self, id: &str) -> Result<Arc<Mutex<FileHandle>>, String> {
        self.kernel
            .inner
            .files
            .get_in_session(&self.env.user_id, &self.env.chat_session, id)
            .ok_or_else(|| format!("no file {id} in this session"))
    }
}

fn arg_str<'a>(name: &str, args: &'a [Value], i: usize) -> Result<&'a str, String> {
    args.get(i).and_then(Value::as_str).ok_or_else(|| format!("{name}() argument {} must be a string", i + 1))
}

fn arg_int(name: &str, args: &[Value], i: usize) -> Result<usize, String> {
    args.get(i)
        .and_then(Value::as_int)
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| format!("{name}() argument {} must be a non-negative int", i + 1))
}

fn opt_str(args: &[Value], i: usize) -> Option<String> {
    args.get(i).and_then(Value::as_str).map(str::to_string)
}

fn scope(cx: &ActionContext) -> Result<&PlanScope, String> {
    cx.scope::<PlanScope>().ok_or_else(|| "action is only available inside a task".to_string())
}

fn map(entries: Vec<(&str, Value)>) -> Value {
    Value::map(entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

fn op(s: &PlanScope, id: &str, o: FileOp) -> Result<OpResult, String> {
    s.file(id)?.lock().operate(&o).map_err(|e| e.to_string())
}

fn register_actions(runtime: &PlanRuntime) {
    type Action = fn(&ActionContext, &[Value]) -> Result<Value, String>;
    let actions: Vec<(&str, Action)> = vec![
        ("perceive_web", |cx, a| {
            let s = scope(cx)?;
            let instruction = arg_str("perceive_web", a, 0)?.to_string();
            s.perceive(PerceptionRequest::Web { instruction, url: opt_str(a, 1) }).map(Value::Str)
        }),
        ("perceive_file", |cx, a| {
            let s = scope(cx)?;
            let instruction = arg_str("perceive_file", a, 0)?.to_string();
            s.perceive(PerceptionRequest::File { instruction, file: opt_str(a, 1) }).map(Value::Str)
        }),
        ("recall", |cx, a| scope(cx)?.perceive(PerceptionRequest::MemoryRead(arg_str("recall", a, 0)?.into())).map(Value::Str)),
        ("remember", |cx, a| scope(cx)?.perceive(PerceptionRequest::MemoryWrite(arg_str("remember", a, 0)?.into())).map(Value::Str)),
        ("llm", |cx, a| {
            let s = scope(cx)?;
            s.kernel.inner.policy.complete(arg_str("llm", a, 0)?).map(Value::Str).map_err(|e| e.to_string())
        }),
        ("file_count", |cx, a| {
            let s = scope(cx)?;
            let term = arg_str("file_count", a, 1)?.to_string();
            match op(s, arg_str("file_count", a, 0)?, FileOp::CountOccurrences { term })? {
                OpResult::Count(n) => Ok(Value::Int(n as i64)),
                other => Ok(Value::str(other.to_string())),
            }
        }),
        ("file_find", |cx, a| {
            let s = scope(cx)?;
            let term = arg_str("file_find", a, 1)?.to_string();
            match op(s, arg_str("file_find", a, 0)?, FileOp::FindTerm { term })? {
                OpResult::Hits { hits, .. } => Ok(Value::list(
                    hits.iter()
                        .map(|h| map(vec![("page", Value::Int(h.page as i64)), ("offset", Value::Int(h.char_offset as i64))]))
                        .collect(),
                )),
                other => Ok(Value::str(other.to_string())),
            }
        }),
        ("file_extract", |cx, a| {
            let s = scope(cx)?;
            let (start, end) = (arg_int("file_extract", a, 1)?, arg_int("file_extract", a, 2)?);
            op(s, arg_str("file_extract", a, 0)?, FileOp::ExtractRange { start, end }).map(|r| Value::str(r.to_string()))
        }),
        ("file_goto", |cx, a| {
            let s = scope(cx)?;
            let target = match a.get(1) {
                Some(Value::Str(t)) if t == "next" => NavTarget::Next,
                Some(Value::Str(t)) if t == "prev" => NavTarget::Prev,
                Some(Value::Int(n)) if *n >= 0 => NavTarget::Page(*n as usize),
                _ => return Err("file_goto() target must be \"next\", \"prev\" or a page number".into()),
            };
            let h = s.file(arg_str("file_goto", a, 0)?)?;
            let mut h = h.lock();
            h.navigate(target).map(Value::str).map_err(|e| e.to_string())
        }),
        ("file_search", |cx, a| {
            let s = scope(cx)?;
            let query = arg_str("file_search", a, 1)?;
            let k = if a.len() > 2 { arg_int("file_search", a, 2)? } else { 3 };
            let h = s.file(arg_str("file_search", a, 0)?)?;
            let passages = h.lock().search(query, k);
            Ok(Value::list(
                passages
                    .into_iter()
                    .map(|p| map(vec![("page", Value::Int(p.page as i64)), ("score", Value::Float(p.score)), ("text", Value::Str(p.text))]))
                    .collect(),
            ))
        }),
        ("file_read", |cx, a| {
            let s = scope(cx)?;
            let req = match a.get(1) {
                Some(Value::Str(q)) => ReadRequest::Question(q.clone()),
                Some(Value::Int(_)) => {
                    let start = arg_int("file_read", a, 1)?;
                    let end = if a.len() > 2 { arg_int("file_read", a, 2)? } else { start };
                    ReadRequest::Range { start, end }
                }
                _ => return Err("file_read() takes a page range or a question".into()),
            };
            let h = s.file(arg_str("file_read", a, 0)?)?;
            let budget = s.kernel.inner.files.config().read_budget;
            let r = h.lock().read(&req, budget).map_err(|e| e.to_string())?;
            Ok(Value::str(r.render()))
        }),
    ];
    for (name, f) in actions {
        if runtime.has_action(name) {
            continue;
        }
        runtime.register_action(name, with_context(f)).expect("kernel action names are free");
    }
}
