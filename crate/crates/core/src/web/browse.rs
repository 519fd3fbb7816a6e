//! The inner browse loop: observe, prompt, decide, act, until Stop or the
//! step limit.

use serde::{Deserialize, Serialize};

use super::observe::Observation;
use super::session::{WebError, WebSession};
use crate::decision::{parse_decision, parse_web_decision, Decision, StepDecision, WebAction, WEB_SCHEMA};
use crate::policy::Policy;
use crate::prompt::{condense_trajectory, Trajectory, Turn, DEFAULT_CONTEXT_BUDGET};
use crate::tokenizer::ReferenceTokenizer;

#[derive(Debug, Clone)]
pub struct BrowseConfig {
    pub max_steps: u32,
    /// Consecutive unparseable outputs tolerated before giving up.
    pub retry_budget: u32,
    pub context_budget: usize,
    pub preamble: String,
}

impl Default for BrowseConfig {
    fn default() -> Self {
        Self {
            max_steps: 20,
            retry_budget: 2,
            context_budget: DEFAULT_CONTEXT_BUDGET,
            preamble: "You are browsing the web to complete a task. Each observation lists the visible \
                       accessibility tree as [index] role 'name'. Target elements by role and name."
                .into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrowseStatus {
    Completed,
    StepLimit,
    Cancelled,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrowseStep {
    pub index: u32,
    pub url: String,
    pub decision: String,
    pub action: Option<String>,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrowseResult {
    pub summary: String,
    pub status: BrowseStatus,
    pub trajectory: Trajectory,
    pub steps: Vec<BrowseStep>,
    pub error: Option<String>,
}

/// Callbacks into the caller of [`browse`].
pub trait BrowseHooks {
    fn on_observation(&mut self, _step: u32, _obs: &Observation) {}
    fn on_action(&mut self, _step: u32, _action: &WebAction, _outcome: &Result<(), WebError>) {}
    /// Handles a nested perception request (memory, file) issued while
    /// browsing. Returns the text to show the policy.
    fn nested(&mut self, _step: u32, _decision: &StepDecision) -> Result<String, String> {
        Err("nested perception is not available in this context".into())
    }
    fn cancelled(&self) -> bool {
        false
    }
}

pub struct NoHooks;

impl BrowseHooks for NoHooks {}

const SUMMARIZE: &str = "The step limit is reached. Summarize what you found so far as Stop(\"<summary>\").";

fn prompt(traj: &Trajectory, tail: &str, config: &BrowseConfig) -> Result<String, String> {
    let mut t = condense_trajectory(traj, config.context_budget, &ReferenceTokenizer).map_err(|e| e.to_string())?;
    t.push(Turn::system(tail));
    Ok(t.render())
}

pub fn browse(
    session: &mut WebSession,
    instruction: &str,
    policy: &dyn Policy,
    config: &BrowseConfig,
    hooks: &mut dyn BrowseHooks,
) -> BrowseResult {
    let mut traj = Trajectory::new(vec![
        Turn::system(format!("{}\n\n{}", config.preamble, WEB_SCHEMA)),
        Turn::state(format!("Task: {instruction}")),
    ]);
    let mut steps = Vec::new();
    let finish = |status, summary: String, traj: Trajectory, steps, error: Option<String>| BrowseResult {
        summary,
        status,
        trajectory: traj,
        steps,
        error,
    };

    let mut pending = None;
    let mut malformed = 0;
    for step in 0..config.max_steps {
        if hooks.cancelled() {
            return finish(BrowseStatus::Cancelled, String::new(), traj, steps, Some("cancelled".into()));
        }
        let obs = match pending.take() {
            Some(o) => o,
            None => match session.observe() {
                Ok(o) => o,
                Err(e) => return finish(BrowseStatus::Error, String::new(), traj, steps, Some(e.to_string())),
            },
        };
        hooks.on_observation(step, &obs);
        traj.push(Turn::observation(obs.render()));

        let text = match prompt(&traj, "Emit exactly one action now.", config).and_then(|p| policy.complete(&p).map_err(|e| e.to_string())) {
            Ok(t) => t,
            Err(e) => return finish(BrowseStatus::Error, String::new(), traj, steps, Some(e)),
        };
        traj.push(Turn::policy(text.clone()));
        let mut record = BrowseStep { index: step, url: obs.url.clone(), decision: text.clone(), action: None, outcome: String::new() };

        let decision = match parse_web_decision(&text) {
            Ok(p) => {
                malformed = 0;
                p.action
            }
            Err(e) => {
                malformed += 1;
                record.outcome = e.to_string();
                steps.push(record);
                if malformed > config.retry_budget {
                    return finish(BrowseStatus::Error, String::new(), traj, steps, Some(e.to_string()));
                }
                traj.push(Turn::state(format!("Error: {e}. Emit exactly one valid action.")));
                pending = Some(obs);
                continue;
            }
        };

        match decision {
            Decision::Web(WebAction::Stop { summary }) => {
                record.action = Some("Stop".into());
                record.outcome = "stopped".into();
                steps.push(record);
                return finish(BrowseStatus::Completed, summary, traj, steps, None);
            }
            Decision::Web(action) => {
                record.action = Some(action.name().into());
                match session.act(&action) {
                    Ok(r) => {
                        hooks.on_action(step, &action, &r.outcome);
                        if let Err(e) = &r.outcome {
                            record.outcome = format!("error: {e}");
                            traj.push(Turn::state(format!("Action failed: {e}")));
                        } else {
                            record.outcome = "ok".into();
                        }
                        pending = r.observation_after;
                    }
                    Err(e) => {
                        hooks.on_action(step, &action, &Err(e.clone()));
                        record.outcome = format!("error: {e}");
                        steps.push(record);
                        return finish(BrowseStatus::Error, String::new(), traj, steps, Some(e.to_string()));
                    }
                }
            }
            Decision::Step(d) => {
                record.action = Some(d.kind().as_str().into());
                match hooks.nested(step, &d) {
                    Ok(text) => {
                        record.outcome = "ok".into();
                        traj.push(Turn::observation(text));
                    }
                    Err(e) => {
                        record.outcome = format!("error: {e}");
                        traj.push(Turn::state(format!("Perception failed: {e}")));
                    }
                }
                pending = Some(obs);
            }
        }
        steps.push(record);
    }

    let summary = match prompt(&traj, SUMMARIZE, config).and_then(|p| policy.complete(&p).map_err(|e| e.to_string())) {
        Ok(text) => match parse_decision(&text) {
            Ok(p) => match p.action {
                Decision::Web(WebAction::Stop { summary }) => summary,
                _ => text.trim().to_string(),
            },
            Err(_) => text.trim().to_string(),
        },
        Err(e) => format!("Step limit reached; no summary available ({e})"),
    };
    finish(BrowseStatus::StepLimit, summary, traj, steps, None)
}
