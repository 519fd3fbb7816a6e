//! Scripted browse tasks over SimWeb sites, with expected end states.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::browse::{browse, BrowseConfig, BrowseHooks, BrowseStatus};
use super::observe::Observation;
use super::session::{Targeting, WebEnvironment, WebSession};
use super::simweb::{FixtureError, SimWeb};
use crate::policy::ScriptedPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub url: String,
    pub observation_contains: String,
    #[serde(default)]
    pub summary_contains: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTask {
    pub name: String,
    #[serde(default)]
    pub category: String,
    pub start_url: String,
    pub instruction: String,
    /// Policy outputs, replayed in order.
    pub script: Vec<String>,
    pub expect: Expectation,
    /// Set on tasks built around occluded targets, where clicking by
    /// coordinates lands on the wrong element.
    #[serde(default)]
    pub coordinates_must_fail: bool,
}

#[derive(Debug, Deserialize)]
struct Manifest {
    tasks: Vec<SimTask>,
}

pub fn load_tasks(path: impl AsRef<Path>) -> Result<Vec<SimTask>, FixtureError> {
    let p = path.as_ref();
    let text = std::fs::read_to_string(p).map_err(|source| FixtureError::Io { path: p.display().to_string(), source })?;
    Ok(serde_json::from_str::<Manifest>(&text)?.tasks)
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub name: String,
    pub status: BrowseStatus,
    pub final_url: String,
    pub summary: String,
    pub last_observation: String,
    pub failures: Vec<String>,
}

impl SimOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Default)]
struct LastObservation(Option<Observation>);

impl BrowseHooks for LastObservation {
    fn on_observation(&mut self, _step: u32, obs: &Observation) {
        self.0 = Some(obs.clone());
    }
}

impl SimTask {
    pub fn run(&self, web: &SimWeb, targeting: Targeting) -> SimOutcome {
        let mut out = SimOutcome {
            name: self.name.clone(),
            status: BrowseStatus::Error,
            final_url: String::new(),
            summary: String::new(),
            last_observation: String::new(),
            failures: Vec::new(),
        };
        let driver = match web.open(Some(&self.start_url)) {
            Ok(d) => d,
            Err(e) => {
                out.failures.push(format!("open: {e}"));
                return out;
            }
        };
        let mut session = WebSession::new(driver).with_targeting(targeting);
        let policy = ScriptedPolicy::new(self.script.iter().cloned());
        let mut hooks = LastObservation::default();
        let result = browse(&mut session, &self.instruction, &policy, &BrowseConfig::default(), &mut hooks);
        out.status = result.status;
        out.summary = result.summary;
        if let Some(obs) = hooks.0 {
            out.final_url = obs.url.clone();
            out.last_observation = obs.render();
        }
        if result.status != BrowseStatus::Completed {
            out.failures.push(format!("status {:?}: {}", result.status, result.error.unwrap_or_default()));
        }
        if out.final_url != self.expect.url {
            out.failures.push(format!("ended on {} instead of {}", out.final_url, self.expect.url));
        }
        if !out.last_observation.contains(&self.expect.observation_contains) {
            out.failures.push(format!("final observation lacks {:?}", self.expect.observation_contains));
        }
        if let Some(s) = &self.expect.summary_contains {
            if !out.summary.contains(s.as_str()) {
                out.failures.push(format!("summary lacks {s:?}"));
            }
        }
        out
    }
}
