//! Prompt assembly and trajectory condensation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::STEP_SCHEMA;
use crate::state::{ObservedState, TaskContext};
use crate::tokenizer::{ReferenceTokenizer, Tokenizer};

/// Replaces an observation dropped to fit the context budget.
pub const OBS_OMITTED: &str = "<|obs_omitted|>";

pub const DEFAULT_CONTEXT_BUDGET: usize = 16_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("prompt needs at least {required} tokens but the budget is {budget}")]
pub struct BudgetUnsatisfiable {
    pub required: usize,
    pub budget: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    State,
    Policy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
    pub is_observation: bool,
}

impl Turn {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into(), is_observation: false }
    }

    pub fn state(content: impl Into<String>) -> Self {
        Self { role: Role::State, content: content.into(), is_observation: false }
    }

    pub fn observation(content: impl Into<String>) -> Self {
        Self { role: Role::State, content: content.into(), is_observation: true }
    }

    pub fn policy(content: impl Into<String>) -> Self {
        Self { role: Role::Policy, content: content.into(), is_observation: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub turns: Vec<Turn>,
}

impl Trajectory {
    pub fn new(turns: Vec<Turn>) -> Self {
        Self { turns }
    }

    pub fn push(&mut self, turn: Turn) {
        self.turns.push(turn);
    }

    pub fn token_count(&self, tok: &dyn Tokenizer) -> usize {
        self.turns.iter().map(|t| tok.count(&t.content)).sum()
    }

    pub fn render(&self) -> String {
        self.turns.iter().map(|t| t.content.as_str()).collect::<Vec<_>>().join("\n\n")
    }

    /// Messages in chat form, as stored with feedback records.
    pub fn to_messages(&self) -> Vec<serde_json::Value> {
        self.turns
            .iter()
            .map(|t| {
                let role = match t.role {
                    Role::System => "system",
                    Role::State => "user",
                    Role::Policy => "assistant",
                };
                serde_json::json!({ "role": role, "content": t.content })
            })
            .collect()
    }

    fn latest_observation(&self) -> Option<usize> {
        self.turns.iter().rposition(|t| t.is_observation)
    }
}

/// Replaces observation turns, oldest first, with [`OBS_OMITTED`] until the
/// trajectory fits `budget`. Non-observation turns and the most recent
/// observation are never altered.
pub fn condense_trajectory(
    traj: &Trajectory,
    budget: usize,
    tok: &dyn Tokenizer,
) -> Result<Trajectory, BudgetUnsatisfiable> {
    let mut total = traj.token_count(tok);
    if total <= budget {
        return Ok(traj.clone());
    }
    let latest = traj.latest_observation();
    let marker = tok.count(OBS_OMITTED);
    let floor: usize = traj
        .turns
        .iter()
        .enumerate()
        .map(|(i, t)| if t.is_observation && Some(i) != latest { marker.min(tok.count(&t.content)) } else { tok.count(&t.content) })
        .sum();
    if floor > budget {
        return Err(BudgetUnsatisfiable { required: floor, budget });
    }
    let mut out = traj.clone();
    for (i, turn) in out.turns.iter_mut().enumerate() {
        if total <= budget {
            break;
        }
        if !turn.is_observation || Some(i) == latest || turn.content == OBS_OMITTED {
            continue;
        }
        let before = tok.count(&turn.content);
        if before <= marker {
            continue;
        }
        turn.content = OBS_OMITTED.to_string();
        total = total - before + marker;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PromptConfig {
    pub context_budget: usize,
    pub preamble: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            context_budget: DEFAULT_CONTEXT_BUDGET,
            preamble: "You are an autopilot agent. You complete tasks end to end. When the observed \
                       state is not enough to answer, acquire what is missing: run a plan, browse the \
                       web, read an uploaded file, or recall memory. Plans run in a sandboxed language \
                       whose variables and functions persist between steps."
                .into(),
        }
    }
}

/// Lays out the reasoning prompt as a trajectory (before condensation).
pub fn prompt_trajectory(ctx: &TaskContext, state: &ObservedState, digest: &str, config: &PromptConfig) -> Trajectory {
    let mut t = Trajectory::default();
    t.push(Turn::system(format!("{}\n\n{}", config.preamble, STEP_SCHEMA)));
    t.push(Turn::state(format!(
        "Task: {}\nDepth: {} of {}. Step: {} of {}.",
        ctx.instruction, ctx.depth, ctx.limits.max_depth, ctx.step_index + 1, ctx.limits.max_steps
    )));
    let digest = if digest.trim().is_empty() { autopilot_plan::EMPTY_DIGEST } else { digest };
    t.push(Turn::state(format!("Cached plan state:\n{digest}")));
    for f in state.fragments() {
        let body = format!("[step {}] {}:\n{}", f.step_of_origin, f.source.as_str(), f.content);
        t.push(if f.source.is_observation() { Turn::observation(body) } else { Turn::state(body) });
    }
    t.push(Turn::system("Emit exactly one decision now."));
    t
}

/// Renders the reasoning prompt, condensing observations if needed.
pub fn build_prompt(
    ctx: &TaskContext,
    state: &ObservedState,
    digest: &str,
    config: &PromptConfig,
) -> Result<String, BudgetUnsatisfiable> {
    build_prompt_with(ctx, state, digest, config, &ReferenceTokenizer)
}

pub fn build_prompt_with(
    ctx: &TaskContext,
    state: &ObservedState,
    digest: &str,
    config: &PromptConfig,
    tok: &dyn Tokenizer,
) -> Result<String, BudgetUnsatisfiable> {
    let t = prompt_trajectory(ctx, state, digest, config);
    Ok(condense_trajectory(&t, config.context_budget, tok)?.render())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::count_tokens;

    fn obs(n: usize, word: &str) -> Turn {
        Turn::observation(vec![word; n].join(" "))
    }

    #[test]
    fn identity_under_budget() {
        let t = Trajectory::new(vec![Turn::system("sys"), obs(10, "a"), Turn::policy("Action: Goback()")]);
        assert_eq!(condense_trajectory(&t, 100, &ReferenceTokenizer).unwrap(), t);
    }

    #[test]
    fn floor_violation() {
        let t = Trajectory::new(vec![Turn::system("s s s"), obs(50, "a"), obs(50, "b")]);
        let err = condense_trajectory(&t, 40, &ReferenceTokenizer).unwrap_err();
        assert_eq!(err.required, 3 + 7 + 50);
    }

    #[test]
    fn marker_token_count() {
        assert_eq!(count_tokens(OBS_OMITTED), 7);
    }
}
