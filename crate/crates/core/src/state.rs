//! Task context and the observed state a task accumulates.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub String);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub max_depth: u32,
    pub max_steps: u32,
    #[serde(with = "secs")]
    pub wall_clock_budget: Duration,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_depth: 3, max_steps: 20, wall_clock_budget: Duration::from_secs(600) }
    }
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskContext {
    pub task_id: TaskId,
    pub instruction: String,
    pub depth: u32,
    pub step_index: u32,
    pub limits: Limits,
    pub parent_task: Option<TaskId>,
}

impl TaskContext {
    pub fn root(task_id: TaskId, instruction: impl Into<String>, limits: Limits) -> Self {
        Self { task_id, instruction: instruction.into(), depth: 0, step_index: 0, limits, parent_task: None }
    }

    /// Context for a perception task one level below `self`, or `None` if
    /// that level would exceed `max_depth`.
    pub fn child(&self, task_id: TaskId, instruction: impl Into<String>) -> Option<Self> {
        let depth = self.depth + 1;
        (depth <= self.limits.max_depth).then(|| Self {
            task_id,
            instruction: instruction.into(),
            depth,
            step_index: 0,
            limits: self.limits,
            parent_task: Some(self.task_id.clone()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FragmentSource {
    UserInput,
    ExecutionResult,
    WebObservation,
    FileObservation,
    MemoryRecall,
    ErrorReport,
}

impl FragmentSource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::UserInput => "user_input",
            Self::ExecutionResult => "execution_result",
            Self::WebObservation => "web_observation",
            Self::FileObservation => "file_observation",
            Self::MemoryRecall => "memory_recall",
            Self::ErrorReport => "error_report",
        }
    }

    /// Observations are the fragments trajectory condensation may replace.
    pub fn is_observation(self) -> bool {
        matches!(self, Self::WebObservation | Self::FileObservation | Self::MemoryRecall)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateFragment {
    pub source: FragmentSource,
    pub content: String,
    pub step_of_origin: u32,
}

/// Append-only list of state fragments gathered by a task.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedState {
    components: Vec<StateFragment>,
}

impl ObservedState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_user_input(text: impl Into<String>) -> Self {
        let mut s = Self::new();
        s.push(FragmentSource::UserInput, text, 0);
        s
    }

    pub fn push(&mut self, source: FragmentSource, content: impl Into<String>, step: u32) {
        self.components.push(StateFragment { source, content: content.into(), step_of_origin: step });
    }

    pub fn fragments(&self) -> &[StateFragment] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn count(&self, source: FragmentSource) -> usize {
        self.components.iter().filter(|f| f.source == source).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("state serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn child_depth_is_bounded() {
        let root = TaskContext::root(TaskId("t0".into()), "x", Limits::default());
        let c1 = root.child(TaskId("t1".into()), "a").unwrap();
        assert_eq!(c1.depth, 1);
        assert_eq!(c1.parent_task, Some(root.task_id.clone()));
        let c3 = c1.child(TaskId("t2".into()), "b").unwrap().child(TaskId("t3".into()), "c").unwrap();
        assert_eq!(c3.depth, 3);
        assert!(c3.child(TaskId("t4".into()), "d").is_none());
    }

    #[test]
    fn serialization_is_stable() {
        let mut s = ObservedState::with_user_input("hi");
        s.push(FragmentSource::ErrorReport, "bad", 1);
        assert_eq!(s.to_json(), s.clone().to_json());
        assert!(s.to_json().contains("\"error_report\""));
    }
}
