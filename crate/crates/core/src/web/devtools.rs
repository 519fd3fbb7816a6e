//! Live-browser bridge. Speaks a devtools-style command protocol to a
//! bridge process that owns the real browser:
//!
//! ```text
//! POST {endpoint}  {"id": 7, "method": "Page.navigate", "params": {"url": "..."}}
//!               -> {"id": 7, "result": {...}} | {"id": 7, "error": {"message": "..."}}
//! ```
//!
//! Methods: `Page.navigate{url}`, `Page.goBack`, `Page.scrollBy{dy}`,
//! `Accessibility.snapshot -> ax/v1`, `Input.click{node_id}`,
//! `Input.clickAt{x,y}`, `Input.type{node_id,text}`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde_json::{json, Value};

use super::ax::AXSnapshot;
use super::session::{BrowserDriver, WebEnvironment, WebError};
use crate::decision::Direction;

#[derive(Debug, Clone)]
pub struct DevtoolsConfig {
    pub endpoint: String,
    pub start_url: String,
    pub settle: Duration,
    pub timeout: Duration,
}

impl DevtoolsConfig {
    pub fn new(endpoint: impl Into<String>, start_url: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            start_url: start_url.into(),
            settle: Duration::from_millis(200),
            timeout: Duration::from_secs(30),
        }
    }
}

pub struct DevtoolsDriver {
    config: DevtoolsConfig,
    agent: ureq::Agent,
    next_id: AtomicU64,
    viewport_h: f64,
}

impl DevtoolsDriver {
    pub fn connect(config: DevtoolsConfig) -> Result<Self, WebError> {
        let agent = ureq::Agent::config_builder().timeout_global(Some(config.timeout)).build().into();
        let mut d = Self { config, agent, next_id: AtomicU64::new(1), viewport_h: 720.0 };
        let url = d.config.start_url.clone();
        d.navigate(&url)?;
        Ok(d)
    }

    fn call(&self, method: &str, params: Value) -> Result<Value, WebError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let body = json!({ "id": id, "method": method, "params": params });
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .send_json(&body)
            .map_err(|e| WebError::DriverGone(e.to_string()))?;
        let v: Value = resp.body_mut().read_json().map_err(|e| WebError::DriverGone(e.to_string()))?;
        if let Some(err) = v.get("error") {
            let msg = err.get("message").and_then(Value::as_str).unwrap_or("unknown error").to_string();
            return Err(if msg.contains("crash") { WebError::PageCrashed(msg) } else { WebError::Navigation(msg) });
        }
        Ok(v.get("result").cloned().unwrap_or(Value::Null))
    }
}

impl BrowserDriver for DevtoolsDriver {
    fn snapshot(&mut self) -> Result<AXSnapshot, WebError> {
        let v = self.call("Accessibility.snapshot", json!({}))?;
        let snap: AXSnapshot = serde_json::from_value(v).map_err(|e| WebError::PageCrashed(format!("bad snapshot: {e}")))?;
        self.viewport_h = snap.viewport.h;
        Ok(snap)
    }

    fn click(&mut self, node_id: &str) -> Result<(), WebError> {
        self.call("Input.click", json!({ "node_id": node_id })).map(drop)
    }

    fn click_at(&mut self, x: f64, y: f64) -> Result<(), WebError> {
        self.call("Input.clickAt", json!({ "x": x, "y": y })).map(drop)
    }

    fn type_text(&mut self, node_id: &str, text: &str) -> Result<(), WebError> {
        self.call("Input.type", json!({ "node_id": node_id, "text": text, "clear": true })).map(drop)
    }

    fn scroll(&mut self, direction: Direction) -> Result<(), WebError> {
        let dy = if direction == Direction::Down { self.viewport_h } else { -self.viewport_h };
        self.call("Page.scrollBy", json!({ "dy": dy })).map(drop)
    }

    fn go_back(&mut self) -> Result<(), WebError> {
        self.call("Page.goBack", json!({})).map(drop)
    }

    fn navigate(&mut self, url: &str) -> Result<(), WebError> {
        self.call("Page.navigate", json!({ "url": url })).map(drop)
    }

    fn start_url(&self) -> String {
        self.config.start_url.clone()
    }

    fn settle_time(&self) -> Duration {
        self.config.settle
    }
}

/// Opens a bridge session per perception task.
pub struct DevtoolsEnvironment {
    pub endpoint: String,
    pub default_url: String,
    pub settle: Duration,
}

impl WebEnvironment for DevtoolsEnvironment {
    fn open(&self, url: Option<&str>) -> Result<Box<dyn BrowserDriver>, WebError> {
        let mut c = DevtoolsConfig::new(self.endpoint.clone(), url.unwrap_or(&self.default_url));
        c.settle = self.settle;
        Ok(Box::new(DevtoolsDriver::connect(c)?))
    }
}
