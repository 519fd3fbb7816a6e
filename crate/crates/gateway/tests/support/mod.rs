#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use autopilot_core::kernel::{Kernel, KernelConfig};
use autopilot_core::policy::ScriptedPolicy;
use autopilot_core::web::SimWeb;
use autopilot_gateway::{router, AppState, GatewayConfig, Store};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub fn fixtures() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

pub struct App {
    pub router: Router,
    pub state: Arc<AppState>,
    pub policy: Arc<ScriptedPolicy>,
}

pub fn app_with(store: Arc<Store>, policy: ScriptedPolicy, config: GatewayConfig) -> App {
    let policy = Arc::new(policy);
    let web = SimWeb::from_dir(fixtures().join("simweb")).unwrap();
    let kernel = Kernel::builder(policy.clone()).config(KernelConfig::default()).web(Arc::new(web)).build();
    let state = AppState::new(store, kernel, config).unwrap();
    App { router: router(state.clone()), state, policy }
}

/// Answers every prompt with a final answer naming the call index.
pub fn answering() -> ScriptedPolicy {
    ScriptedPolicy::from_fn(|_, i| Some(format!("Action: FinalAnswer(\"answer {i}\")")))
}

pub fn app() -> App {
    app_with(Arc::new(Store::open_in_memory().unwrap()), answering(), GatewayConfig::default())
}

pub struct Resp {
    pub status: StatusCode,
    pub headers: axum::http::HeaderMap,
    pub body: Vec<u8>,
}

impl Resp {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", self.text()))
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    /// `data:` payloads of an SSE body, parsed.
    pub fn sse_events(&self) -> Vec<Value> {
        self.text()
            .lines()
            .filter_map(|l| l.strip_prefix("data: ").or_else(|| l.strip_prefix("data:")))
            .map(|d| serde_json::from_str(d).unwrap())
            .collect()
    }
}

pub fn request(method: &str, uri: &str, token: Option<&str>, body: impl Into<Body>) -> Request<Body> {
    let mut b = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        b = b.header("authorization", format!("Bearer {t}"));
    }
    b.header("content-type", "application/json").body(body.into()).unwrap()
}

pub async fn send(router: &Router, req: Request<Body>) -> Resp {
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Resp { status, headers, body }
}

pub async fn call(router: &Router, method: &str, uri: &str, token: Option<&str>, body: &str) -> Resp {
    send(router, request(method, uri, token, body.to_string())).await
}

pub fn user(app: &App, name: &str) -> String {
    app.state.store.add_user(name).unwrap().1
}

pub async fn session(app: &App, token: &str) -> String {
    let r = call(&app.router, "POST", "/sessions", Some(token), r#"{"title":"t"}"#).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text());
    r.json()["session_id"].as_str().unwrap().to_string()
}

pub async fn message(app: &App, token: &str, session: &str, content: &str) -> Resp {
    let body = serde_json::json!({ "content": content }).to_string();
    call(&app.router, "POST", &format!("/sessions/{session}/messages"), Some(token), &body).await
}
