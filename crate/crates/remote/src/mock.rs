//! Deterministic stand-in for a chat and embeddings backend.
//!
//! Ratings are lexicon hit counts and embeddings are seeded hashed
//! bag-of-words vectors, so a run against the mock is reproducible bit for
//! bit. An optional failure injector exercises client retry paths.

use std::collections::{BTreeSet, HashMap};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use emi_core::preprocess::{normalize_token, tokenize};
use emi_core::rater::{input_text, Message, Role, Task};
use emi_core::seed::derive_seed;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::wire::{ChatChoice, ChatRequest, ChatResponse, EmbeddingItem, EmbeddingRequest, EmbeddingResponse, ErrorBody};
use crate::{RemoteError, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FailureInjection {
    /// Every Nth request overall gets HTTP 500.
    pub fail_every: u64,
    /// Every Nth request overall gets a 200 with an unusable payload.
    pub garbage_every: u64,
    /// The first N deliveries of each distinct request body are unusable.
    pub garbage_first: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRules {
    pub seed: u64,
    pub evidence_lexicon: Vec<String>,
    pub intuition_lexicon: Vec<String>,
    pub procedural_lexicon: Vec<String>,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(default)]
    pub failure: FailureInjection,
}

fn default_dim() -> usize {
    64
}

/// Weight of the category direction added per lexicon hit.
const LEXICON_BOOST: f64 = 6.0;
const GARBAGE: &str = "I am unable to rate this statement.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockError {
    pub status: u16,
    pub message: String,
}

fn bad_request(message: impl Into<String>) -> MockError {
    MockError { status: 400, message: message.into() }
}

struct Lexicons {
    evidence: BTreeSet<String>,
    intuition: BTreeSet<String>,
    procedural: BTreeSet<String>,
}

impl MockRules {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| RemoteError::io(path, e))?;
        let rules: MockRules = toml::from_str(&raw).map_err(|e| RemoteError::Config(format!("{}: {e}", path.display())))?;
        rules.validate()?;
        Ok(rules)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lex) in [
            ("evidence_lexicon", &self.evidence_lexicon),
            ("intuition_lexicon", &self.intuition_lexicon),
            ("procedural_lexicon", &self.procedural_lexicon),
        ] {
            if lex.iter().all(|w| normalize_token(w).is_empty()) {
                return Err(RemoteError::Config(format!("mock rules: {name} is empty")));
            }
        }
        if self.embedding_dim < 8 {
            return Err(RemoteError::Config(format!("mock rules: embedding_dim {} < 8", self.embedding_dim)));
        }
        Ok(())
    }

    fn lexicons(&self) -> Lexicons {
        let set = |v: &[String]| v.iter().map(|w| normalize_token(w)).filter(|w| !w.is_empty()).collect();
        Lexicons {
            evidence: set(&self.evidence_lexicon),
            intuition: set(&self.intuition_lexicon),
            procedural: set(&self.procedural_lexicon),
        }
    }
}

fn hits(text: &str, lexicon: &BTreeSet<String>) -> usize {
    tokenize(text).into_iter().filter(|t| lexicon.contains(&normalize_token(t))).count()
}

fn detect_task(messages: &[Message]) -> Option<Task> {
    let system = messages.iter().find(|m| m.role == Role::System)?;
    let first = system.content.lines().next()?.trim();
    [Task::Procedural, Task::Epistemic].into_iter().find(|t| t.signature().trim() == first)
}

fn digest(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Rating reply for a chat request. Pure in `(rules, request)`.
pub fn mock_chat(rules: &MockRules, req: &ChatRequest) -> std::result::Result<ChatResponse, MockError> {
    let task = detect_task(&req.messages).ok_or_else(|| bad_request("unrecognised system prompt"))?;
    let user = req.messages.iter().rev().find(|m| m.role == Role::User).ok_or_else(|| bad_request("no user message"))?;
    let text = input_text(&user.content);
    let lex = rules.lexicons();
    let clip = |n: usize| n.min(4);
    let content = match task {
        Task::Procedural => serde_json::json!({ "procedural": clip(hits(text, &lex.procedural)) }),
        Task::Epistemic => serde_json::json!({
            "evidence_based": clip(hits(text, &lex.evidence)),
            "evidence_free": clip(hits(text, &lex.intuition)),
        }),
    }
    .to_string();
    Ok(ChatResponse {
        id: format!("mock-{}", digest(serde_json::to_string(req).expect("request serializes").as_bytes())),
        object: "chat.completion".into(),
        model: req.model.clone(),
        choices: vec![ChatChoice {
            index: 0,
            message: Message { role: Role::Assistant, content },
            finish_reason: Some("stop".into()),
        }],
    })
}

/// Uniform values in [-1, 1) from a seeded splitmix stream.
fn hashed_vector(seed: u64, key: &str, dim: usize) -> Vec<f64> {
    (0..dim as u64)
        .map(|i| {
            let bits = derive_seed(seed, key, i) >> 11;
            bits as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Direction a category's lexicon pulls embeddings toward.
pub fn category_direction(rules: &MockRules, category: &str) -> Vec<f64> {
    unit(hashed_vector(rules.seed, &format!("\u{1}direction:{category}"), rules.embedding_dim))
}

fn embed_one(rules: &MockRules, lex: &Lexicons, text: &str) -> Vec<f64> {
    let dim = rules.embedding_dim;
    let ev = category_direction(rules, "evidence");
    let int = category_direction(rules, "intuition");
    let mut v = vec![0.0; dim];
    let mut any = false;
    for token in tokenize(text) {
        let t = normalize_token(token);
        if t.is_empty() {
            continue;
        }
        any = true;
        for (a, b) in v.iter_mut().zip(hashed_vector(rules.seed, &t, dim)) {
            *a += b;
        }
        let boost = if lex.evidence.contains(&t) {
            Some(&ev)
        } else if lex.intuition.contains(&t) {
            Some(&int)
        } else {
            None
        };
        if let Some(d) = boost {
            for (a, b) in v.iter_mut().zip(d) {
                *a += LEXICON_BOOST * b;
            }
        }
    }
    if !any {
        v = hashed_vector(rules.seed, text, dim);
    }
    v
}

/// Embedding reply. Pure in `(rules, request)`.
pub fn mock_embed(rules: &MockRules, req: &EmbeddingRequest) -> std::result::Result<EmbeddingResponse, MockError> {
    if let Some(i) = req.input.iter().position(|t| t.trim().is_empty()) {
        return Err(bad_request(format!("empty input at index {i}")));
    }
    let lex = rules.lexicons();
    Ok(EmbeddingResponse {
        object: "list".into(),
        model: req.model.clone(),
        data: req
            .input
            .iter()
            .enumerate()
            .map(|(index, t)| EmbeddingItem { object: "embedding".into(), index, embedding: embed_one(rules, &lex, t) })
            .collect(),
    })
}

struct ServerState {
    rules: MockRules,
    requests: AtomicU64,
    deliveries: Mutex<HashMap<String, u32>>,
}

enum Injected {
    Fail,
    Garbage,
}

impl ServerState {
    fn inject(&self, body: &[u8]) -> Option<Injected> {
        let f = &self.rules.failure;
        let k = self.requests.fetch_add(1, Ordering::SeqCst) + 1;
        if f.fail_every > 0 && k % f.fail_every == 0 {
            return Some(Injected::Fail);
        }
        if f.garbage_every > 0 && k % f.garbage_every == 0 {
            return Some(Injected::Garbage);
        }
        if f.garbage_first > 0 {
            let mut seen = self.deliveries.lock().expect("lock");
            let n = seen.entry(digest(body)).or_insert(0);
            *n += 1;
            if *n <= f.garbage_first {
                return Some(Injected::Garbage);
            }
        }
        None
    }

    async fn delay(&self) {
        if self.rules.delay_ms > 0 {
            tokio::time::sleep(Duration::from_millis(self.rules.delay_ms)).await;
        }
    }
}

fn error_response(status: u16, kind: &str, message: String) -> Response {
    let code = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (code, Json(ErrorBody::new(kind, message))).into_response()
}

async fn chat_handler(State(state): State<Arc<ServerState>>, body: Bytes) -> Response {
    state.delay().await;
    let req: ChatRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(400, "invalid_request_error", e.to_string()),
    };
    match state.inject(&body) {
        Some(Injected::Fail) => return error_response(500, "server_error", "injected failure".into()),
        Some(Injected::Garbage) => {
            let resp = ChatResponse {
                id: "mock-garbage".into(),
                object: "chat.completion".into(),
                model: req.model.clone(),
                choices: vec![ChatChoice {
                    index: 0,
                    message: Message { role: Role::Assistant, content: GARBAGE.into() },
                    finish_reason: Some("stop".into()),
                }],
            };
            return Json(resp).into_response();
        }
        None => {}
    }
    match mock_chat(&state.rules, &req) {
        Ok(r) => Json(r).into_response(),
        Err(e) => error_response(e.status, "invalid_request_error", e.message),
    }
}

async fn embed_handler(State(state): State<Arc<ServerState>>, body: Bytes) -> Response {
    state.delay().await;
    let req: EmbeddingRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(400, "invalid_request_error", e.to_string()),
    };
    match state.inject(&body) {
        Some(Injected::Fail) => return error_response(500, "server_error", "injected failure".into()),
        Some(Injected::Garbage) => {
            return Json(EmbeddingResponse { object: "list".into(), model: req.model, data: vec![] }).into_response()
        }
        None => {}
    }
    match mock_embed(&state.rules, &req) {
        Ok(r) => Json(r).into_response(),
        Err(e) => error_response(e.status, "invalid_request_error", e.message),
    }
}

async fn models_handler() -> Response {
    Json(serde_json::json!({ "object": "list", "data": [{ "id": "mock", "object": "model" }] })).into_response()
}

pub fn router(rules: MockRules) -> Router {
    let state = Arc::new(ServerState { rules, requests: AtomicU64::new(0), deliveries: Mutex::new(HashMap::new()) });
    Router::new()
        .route("/v1/models", get(models_handler))
        .route("/v1/chat/completions", post(chat_handler))
        .route("/v1/embeddings", post(embed_handler))
        .with_state(state)
}

/// A mock backend running on the current tokio runtime.
pub struct MockServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl MockServer {
    pub async fn start(rules: MockRules, addr: SocketAddr) -> Result<Self> {
        rules.validate()?;
        let listener =
            tokio::net::TcpListener::bind(addr).await.map_err(|e| RemoteError::Config(format!("cannot bind {addr}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| RemoteError::Config(e.to_string()))?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = router(rules);
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(MockServer { addr, shutdown: Some(tx), task })
    }

    /// Binds an ephemeral port on the loopback interface.
    pub async fn start_local(rules: MockRules) -> Result<Self> {
        Self::start(rules, SocketAddr::from(([127, 0, 0, 1], 0))).await
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }

    /// Serves until the task is cancelled.
    pub async fn wait(mut self) {
        let _ = (&mut self.task).await;
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}
