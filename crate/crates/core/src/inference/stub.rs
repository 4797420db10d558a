//! In-process stand-in for a local inference server, for tests and dry runs.
//!
//! Serves `POST /api/chat` (any path, in fact) in the local-inference chat
//! shape and records every request body it receives.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;

/// What the stub sends back for one request.
#[derive(Debug, Clone)]
pub struct StubReply {
    pub content: String,
    pub status: u16,
    pub delay: Duration,
}

impl StubReply {
    pub fn text(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            status: 200,
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16) -> Self {
        Self {
            content: String::new(),
            status,
            delay: Duration::ZERO,
        }
    }

    pub fn delayed(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

/// Called with the request body and the zero-based request index.
pub type Responder = dyn Fn(&Value, usize) -> StubReply + Send + Sync;

struct Shared {
    responder: Box<Responder>,
    requests: Mutex<Vec<Value>>,
}

pub struct StubServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
    handle: Option<thread::JoinHandle<()>>,
}

impl StubServer {
    pub fn start<F>(responder: F) -> std::io::Result<Self>
    where
        F: Fn(&Value, usize) -> StubReply + Send + Sync + 'static,
    {
        let shared = Arc::new(Shared {
            responder: Box::new(responder),
            requests: Mutex::new(Vec::new()),
        });
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = Router::new().fallback(handle).with_state(shared.clone());
        let handle = thread::spawn(move || {
            runtime.block_on(async move {
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(Self {
            addr,
            shared,
            shutdown: Some(tx),
            handle: Some(handle),
        })
    }

    /// Chat endpoint URL.
    pub fn url(&self) -> String {
        format!("http://{}/api/chat", self.addr)
    }

    pub fn request_count(&self) -> usize {
        self.shared.requests.lock().expect("stub lock").len()
    }

    pub fn requests(&self) -> Vec<Value> {
        self.shared.requests.lock().expect("stub lock").clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

async fn handle(State(shared): State<Arc<Shared>>, body: axum::body::Bytes) -> Response {
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let index = {
        let mut reqs = shared.requests.lock().expect("stub lock");
        reqs.push(body.clone());
        reqs.len() - 1
    };
    let reply = (shared.responder)(&body, index);
    if !reply.delay.is_zero() {
        tokio::time::sleep(reply.delay).await;
    }
    let status = StatusCode::from_u16(reply.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    if !status.is_success() {
        return (status, reply.content).into_response();
    }
    let model = body.get("model").cloned().unwrap_or(Value::Null);
    Json(json!({
        "model": model,
        "message": {"role": "assistant", "content": reply.content},
        "done": true,
    }))
    .into_response()
}

/// Text of the last user message in a chat request body.
pub fn user_text(body: &Value) -> &str {
    body["messages"]
        .as_array()
        .and_then(|m| m.iter().rev().find(|m| m["role"] == "user"))
        .and_then(|m| m["content"].as_str())
        .unwrap_or("")
}

/// Deterministic keyword-driven answers wrapped in a reasoning block, so a
/// fixture corpus gets varied but valid classifications.
pub fn canned_classifier(body: &Value, _index: usize) -> StubReply {
    let text = user_text(body).to_lowercase();
    let object = if text.contains("failed to detect") || text.contains("did not detect") {
        r#"{"AV_Failed": "Y", "Cause": "S", "System": "PE", "Late": true}"#
    } else if text.contains("lane change") || text.contains("merg") {
        r#"{"AV_Failed": "Y", "Cause": "S", "System": "PL", "Late": false, "Secondary": "H"}"#
    } else if text.contains("rain") || text.contains("fog") {
        r#"{"AV_Failed": "N", "Cause": "E", "System": "N", "Late": false}"#
    } else if text.contains("rear-ended") || text.contains("struck from behind") {
        r#"{"AV_Failed": "N", "Cause": "H", "System": "N", "Late": false}"#
    } else {
        r#"{"AV_Failed": "I", "Cause": "N", "System": "N", "Late": false}"#
    };
    StubReply::text(format!(
        "<think>Reading the report carefully.</think>\n{object}"
    ))
}
