//! Browser driver interface and a session that observes and acts through it.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ax::AXSnapshot;
use super::observe::{observe_snapshot, resolve, Observation, ResolveError, DEFAULT_OBSERVATION_BUDGET};
use crate::decision::{Direction, Target, WebAction};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WebError {
    #[error("no element matches {0}")]
    TargetNotFound(Target),
    #[error("{count} elements match {target}; add nth=<k> to pick one")]
    AmbiguousTarget { target: Target, count: usize },
    #[error("element {0} does not accept text")]
    NotEditable(String),
    #[error("no page to go back to")]
    NoHistory,
    #[error("navigation failed: {0}")]
    Navigation(String),
    #[error("browser session lost: {0}")]
    DriverGone(String),
    #[error("page crashed: {0}")]
    PageCrashed(String),
}

impl WebError {
    /// Errors the policy can recover from by choosing another action.
    pub fn is_recoverable(&self) -> bool {
        !matches!(self, Self::DriverGone(_) | Self::PageCrashed(_))
    }
}

impl From<ResolveError> for WebError {
    fn from(e: ResolveError) -> Self {
        match e {
            ResolveError::NotFound(t) => Self::TargetNotFound(t),
            ResolveError::Ambiguous { target, count } => Self::AmbiguousTarget { target, count },
        }
    }
}

/// Low-level browser operations. Element operations take node ids from the
/// driver's most recent snapshot.
pub trait BrowserDriver: Send {
    fn snapshot(&mut self) -> Result<AXSnapshot, WebError>;
    fn click(&mut self, node_id: &str) -> Result<(), WebError>;
    /// Clicks whatever is topmost at a document coordinate.
    fn click_at(&mut self, x: f64, y: f64) -> Result<(), WebError>;
    /// Clears the element's value, then fills it with `text`.
    fn type_text(&mut self, node_id: &str, text: &str) -> Result<(), WebError>;
    fn scroll(&mut self, direction: Direction) -> Result<(), WebError>;
    fn go_back(&mut self) -> Result<(), WebError>;
    fn navigate(&mut self, url: &str) -> Result<(), WebError>;
    fn start_url(&self) -> String;
    /// Grace period after an action before the page counts as settled.
    fn settle_time(&self) -> Duration {
        Duration::from_millis(200)
    }
}

/// Opens browser sessions, e.g. one per perception task.
pub trait WebEnvironment: Send + Sync {
    fn open(&self, url: Option<&str>) -> Result<Box<dyn BrowserDriver>, WebError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targeting {
    /// Resolve Click/Type targets by role and name in the observed tree.
    #[default]
    RoleName,
    /// Click the centre of the target's box and let the page hit-test it.
    /// Only useful as a comparison baseline.
    Coordinates,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActResult {
    pub outcome: Result<(), WebError>,
    pub observation_after: Option<Observation>,
}

pub struct WebSession {
    driver: Box<dyn BrowserDriver>,
    budget: usize,
    targeting: Targeting,
    tree: Option<AXSnapshot>,
}

impl WebSession {
    pub fn new(driver: Box<dyn BrowserDriver>) -> Self {
        Self { driver, budget: DEFAULT_OBSERVATION_BUDGET, targeting: Targeting::RoleName, tree: None }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_targeting(mut self, targeting: Targeting) -> Self {
        self.targeting = targeting;
        self
    }

    pub fn observe(&mut self) -> Result<Observation, WebError> {
        let snap = self.driver.snapshot()?;
        let (tree, obs) = observe_snapshot(&snap, self.budget);
        self.tree = Some(tree);
        Ok(obs)
    }

    fn settle(&self) {
        let t = self.driver.settle_time();
        if !t.is_zero() {
            std::thread::sleep(t);
        }
    }

    fn resolve(&mut self, target: &Target) -> Result<(String, (f64, f64)), WebError> {
        if self.tree.is_none() {
            self.observe()?;
        }
        let tree = self.tree.as_ref().expect("observed");
        let node = resolve(tree, target)?;
        Ok((node.node_id.clone(), node.bbox.center()))
    }

    fn apply(&mut self, action: &WebAction) -> Result<(), WebError> {
        match action {
            WebAction::Click { target } => {
                let (id, (x, y)) = self.resolve(target)?;
                match self.targeting {
                    Targeting::RoleName => self.driver.click(&id),
                    Targeting::Coordinates => self.driver.click_at(x, y),
                }
            }
            WebAction::Type { target, text } => {
                let (id, _) = self.resolve(target)?;
                self.driver.type_text(&id, text)
            }
            WebAction::Scroll { direction } => self.driver.scroll(*direction),
            WebAction::Goback => self.driver.go_back(),
            WebAction::Restart => {
                let url = self.driver.start_url();
                self.driver.navigate(&url)
            }
            WebAction::Stop { .. } => Ok(()),
        }
    }

    /// Executes one action and attaches a fresh observation. Recoverable
    /// failures are reported in `outcome`; a lost driver is an `Err`.
    pub fn act(&mut self, action: &WebAction) -> Result<ActResult, WebError> {
        if matches!(action, WebAction::Stop { .. }) {
            return Ok(ActResult { outcome: Ok(()), observation_after: None });
        }
        let outcome = self.apply(action);
        if let Err(e) = &outcome {
            if !e.is_recoverable() {
                return Err(e.clone());
            }
        } else {
            self.settle();
        }
        let observation_after = Some(self.observe()?);
        Ok(ActResult { outcome, observation_after })
    }

    pub fn driver(&self) -> &dyn BrowserDriver {
        self.driver.as_ref()
    }
}
