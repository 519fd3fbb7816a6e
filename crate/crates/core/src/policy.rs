//! Policy model clients: a scripted double for tests and an HTTP client for
//! a remote inference service.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("policy unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: usize, message: String },
    #[error("invalid policy fixture: {0}")]
    Fixture(String),
}

impl PolicyError {
    fn unavailable(attempts: usize, message: impl Into<String>) -> Self {
        Self::Unavailable { attempts, message: message.into() }
    }
}

pub trait Policy: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, PolicyError>;

    /// Completes several prompts; backends that support batched generation
    /// override this.
    fn complete_batch(&self, prompts: &[String]) -> Vec<Result<String, PolicyError>> {
        prompts.iter().map(|p| self.complete(p)).collect()
    }
}

pub type PolicyHandle = Arc<dyn Policy>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f32,
    pub max_output_tokens: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self { temperature: 0.0, max_output_tokens: 1024 }
    }
}

type ScriptFn = dyn Fn(&str, usize) -> Option<String> + Send + Sync;

/// Deterministic policy: the output is a function of the prompt and the
/// call index only. Once the script is exhausted every call fails with
/// [`PolicyError::Unavailable`].
pub struct ScriptedPolicy {
    script: Box<ScriptFn>,
    calls: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

#[derive(Debug, Deserialize)]
struct Fixture {
    entries: Vec<String>,
}

impl ScriptedPolicy {
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = S>) -> Self {
        let entries: Vec<String> = entries.into_iter().map(Into::into).collect();
        Self::from_fn(move |_, i| entries.get(i).cloned())
    }

    pub fn from_fn(f: impl Fn(&str, usize) -> Option<String> + Send + Sync + 'static) -> Self {
        Self { script: Box::new(f), calls: AtomicUsize::new(0), prompts: Mutex::new(Vec::new()) }
    }

    /// Loads `{"entries": ["...", ...]}`.
    pub fn from_json(json: &str) -> Result<Self, PolicyError> {
        let f: Fixture = serde_json::from_str(json).map_err(|e| PolicyError::Fixture(e.to_string()))?;
        Ok(Self::new(f.entries))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| PolicyError::Fixture(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Every prompt received so far, in call order.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().clone()
    }
}

impl Policy for ScriptedPolicy {
    fn complete(&self, prompt: &str) -> Result<String, PolicyError> {
        let mut prompts = self.prompts.lock();
        let index = self.calls.fetch_add(1, Ordering::SeqCst);
        prompts.push(prompt.to_string());
        drop(prompts);
        (self.script)(prompt, index)
            .ok_or_else(|| PolicyError::unavailable(1, format!("script exhausted at call {}", index + 1)))
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub token: Option<String>,
    pub decode: DecodeParams,
    pub retries: u32,
    pub backoff_base: Duration,
    pub timeout: Duration,
    /// Whether the endpoint accepts `{"prompts": [...]}` batches.
    pub batch: bool,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            token: None,
            decode: DecodeParams::default(),
            retries: 3,
            backoff_base: Duration::from_millis(250),
            timeout: Duration::from_secs(120),
            batch: false,
        }
    }

    /// Reads `AUTOPILOT_POLICY_URL` and optional `AUTOPILOT_POLICY_TOKEN`,
    /// `AUTOPILOT_POLICY_RETRIES`, `AUTOPILOT_POLICY_BATCH`.
    pub fn from_env() -> Option<Self> {
        let mut c = Self::new(std::env::var("AUTOPILOT_POLICY_URL").ok()?);
        c.token = std::env::var("AUTOPILOT_POLICY_TOKEN").ok();
        if let Some(r) = std::env::var("AUTOPILOT_POLICY_RETRIES").ok().and_then(|v| v.parse().ok()) {
            c.retries = r;
        }
        c.batch = std::env::var("AUTOPILOT_POLICY_BATCH").is_ok_and(|v| v == "1" || v == "true");
        Some(c)
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    decode_params: DecodeParams,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

#[derive(Serialize)]
struct BatchRequest<'a> {
    prompts: &'a [String],
    decode_params: DecodeParams,
}

#[derive(Deserialize)]
struct BatchResponse {
    texts: Vec<String>,
}

/// Client for a remote inference service speaking
/// `POST {prompt, decode_params} -> {text}`.
pub struct RemotePolicy {
    config: RemoteConfig,
    agent: ureq::Agent,
    attempts: AtomicUsize,
}

impl RemotePolicy {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self { config, agent, attempts: AtomicUsize::new(0) }
    }

    /// Total HTTP attempts made, including retries.
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, body: &B) -> Result<R, PolicyError> {
        let max = self.config.retries as usize + 1;
        let mut last = String::new();
        for attempt in 0..max {
            if attempt > 0 {
                let delay = self.config.backoff_base * 2u32.saturating_pow(attempt as u32 - 1);
                debug!(attempt, ?delay, "retrying policy request");
                std::thread::sleep(delay);
            }
            self.attempts.fetch_add(1, Ordering::SeqCst);
            let mut req = self.agent.post(&self.config.endpoint);
            if let Some(t) = &self.config.token {
                req = req.header("Authorization", &format!("Bearer {t}"));
            }
            match req.send_json(body).and_then(|mut r| r.body_mut().read_json::<R>()) {
                Ok(r) => return Ok(r),
                Err(e) => {
                    warn!(attempt = attempt + 1, error = %e, "policy request failed");
                    last = e.to_string();
                }
            }
        }
        Err(PolicyError::unavailable(max, last))
    }
}

impl Policy for RemotePolicy {
    fn complete(&self, prompt: &str) -> Result<String, PolicyError> {
        let r: GenerateResponse = self.post(&GenerateRequest { prompt, decode_params: self.config.decode })?;
        Ok(r.text)
    }

    fn complete_batch(&self, prompts: &[String]) -> Vec<Result<String, PolicyError>> {
        if !self.config.batch || prompts.len() < 2 {
            return prompts.iter().map(|p| self.complete(p)).collect();
        }
        match self.post::<_, BatchResponse>(&BatchRequest { prompts, decode_params: self.config.decode }) {
            Ok(r) if r.texts.len() == prompts.len() => r.texts.into_iter().map(Ok).collect(),
            Ok(r) => {
                let msg = format!("batch returned {} texts for {} prompts", r.texts.len(), prompts.len());
                prompts.iter().map(|_| Err(PolicyError::unavailable(1, msg.clone()))).collect()
            }
            Err(e) => prompts.iter().map(|_| Err(e.clone())).collect(),
        }
    }
}

#[derive(Default)]
struct Slot {
    result: Mutex<Option<Result<String, PolicyError>>>,
    ready: Condvar,
}

#[derive(Default)]
struct Queue {
    pending: Vec<(String, Arc<Slot>)>,
    leader: bool,
}

/// Groups concurrent `complete` calls into `complete_batch` calls on the
/// inner policy. The first caller to arrive waits `window`, then serves
/// every queued request in batches of at most `max_batch`.
pub struct BatchingPolicy<P> {
    inner: P,
    window: Duration,
    max_batch: usize,
    queue: Mutex<Queue>,
    batches: AtomicUsize,
}

impl<P: Policy> BatchingPolicy<P> {
    pub fn new(inner: P, window: Duration, max_batch: usize) -> Self {
        Self { inner, window, max_batch: max_batch.max(1), queue: Mutex::new(Queue::default()), batches: AtomicUsize::new(0) }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn batches(&self) -> usize {
        self.batches.load(Ordering::SeqCst)
    }

    fn drain(&self) {
        std::thread::sleep(self.window);
        loop {
            let batch: Vec<(String, Arc<Slot>)> = {
                let mut q = self.queue.lock();
                let n = q.pending.len().min(self.max_batch);
                if n == 0 {
                    q.leader = false;
                    return;
                }
                q.pending.drain(..n).collect()
            };
            self.batches.fetch_add(1, Ordering::SeqCst);
            let prompts: Vec<String> = batch.iter().map(|(p, _)| p.clone()).collect();
            let results = self.inner.complete_batch(&prompts);
            for ((_, slot), r) in batch.into_iter().zip(results) {
                *slot.result.lock() = Some(r);
                slot.ready.notify_all();
            }
        }
    }
}

impl<P: Policy> Policy for BatchingPolicy<P> {
    fn complete(&self, prompt: &str) -> Result<String, PolicyError> {
        let slot = Arc::new(Slot::default());
        let lead = {
            let mut q = self.queue.lock();
            q.pending.push((prompt.to_string(), slot.clone()));
            !std::mem::replace(&mut q.leader, true)
        };
        if lead {
            self.drain();
        }
        let mut r = slot.result.lock();
        while r.is_none() {
            slot.ready.wait(&mut r);
        }
        r.take().expect("result delivered")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_exhaustion() {
        let p = ScriptedPolicy::new(["a", "b"]);
        assert_eq!(p.complete("x").unwrap(), "a");
        assert_eq!(p.complete("y").unwrap(), "b");
        assert!(matches!(p.complete("z"), Err(PolicyError::Unavailable { .. })));
        assert_eq!(p.prompts(), vec!["x", "y", "z"]);
    }

    #[test]
    fn fixture_loading() {
        let p = ScriptedPolicy::from_json(r#"{"entries": ["Action: Goback()"]}"#).unwrap();
        assert_eq!(p.complete("").unwrap(), "Action: Goback()");
        assert!(ScriptedPolicy::from_json("[]").is_err());
    }

    #[test]
    fn batching_groups_concurrent_calls() {
        let inner = ScriptedPolicy::from_fn(|p, _| Some(format!("echo {p}")));
        let b = Arc::new(BatchingPolicy::new(inner, Duration::from_millis(50), 16));
        let handles: Vec<_> = (0..6)
            .map(|i| {
                let b = b.clone();
                std::thread::spawn(move || b.complete(&i.to_string()).unwrap())
            })
            .collect();
        let mut out: Vec<String> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        out.sort();
        assert_eq!(out, (0..6).map(|i| format!("echo {i}")).collect::<Vec<_>>());
        assert!(b.batches() < 6, "batches = {}", b.batches());
    }
}
