//! Live trace events (`events/v1`).

use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::kernel::TaskStatus;

pub const EVENT_SCHEMA: &str = "events/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventBody {
    PlanGenerated { step: u32, script: String },
    ActionExecuted { step: u32, action: String, ok: bool, detail: String },
    Observation { step: u32, source: String, content: String },
    /// `depth` on the enclosing event is the new task's depth.
    PerceptionStarted { kind: String, instruction: String, parent_task_id: String },
    FinalAnswer { answer: String, status: TaskStatus },
    Error { message: String, fatal: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub task_id: String,
    pub depth: u32,
    #[serde(flatten)]
    pub body: EventBody,
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self.body {
            EventBody::PlanGenerated { .. } => "plan_generated",
            EventBody::ActionExecuted { .. } => "action_executed",
            EventBody::Observation { .. } => "observation",
            EventBody::PerceptionStarted { .. } => "perception_started",
            EventBody::FinalAnswer { .. } => "final_answer",
            EventBody::Error { .. } => "error",
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

pub trait EventSink: Send + Sync {
    fn emit(&self, event: &Event);
}

impl<F: Fn(&Event) + Send + Sync> EventSink for F {
    fn emit(&self, event: &Event) {
        self(event)
    }
}

pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&self, _event: &Event) {}
}

#[derive(Default)]
pub struct VecSink {
    events: Mutex<Vec<Event>>,
}

impl VecSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<Event> {
        self.events.lock().clone()
    }
}

impl EventSink for VecSink {
    fn emit(&self, event: &Event) {
        self.events.lock().push(event.clone());
    }
}

/// Numbers events for one root task and forwards them in numbering order,
/// including events from perception tasks running in parallel.
#[derive(Clone)]
pub struct EventBus {
    inner: Arc<Mutex<(u64, Arc<dyn EventSink>)>>,
}

impl EventBus {
    pub fn new(sink: Arc<dyn EventSink>) -> Self {
        Self { inner: Arc::new(Mutex::new((0, sink))) }
    }

    pub fn null() -> Self {
        Self::new(Arc::new(NullSink))
    }

    pub fn emit(&self, task_id: &str, depth: u32, body: EventBody) -> u64 {
        let mut g = self.inner.lock();
        g.0 += 1;
        let event = Event { seq: g.0, task_id: task_id.into(), depth, body };
        g.1.emit(&event);
        g.0
    }

    pub fn emitted(&self) -> u64 {
        self.inner.lock().0
    }
}
