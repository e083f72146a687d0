//! HTTP front end for [`MockBackend`].

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::sync::oneshot;

use super::{ChatRequest, EmbedRequest, ErrorBody, ErrorDetail, MockBackend};
use crate::error::{Error, ProtocolError, Result};

pub fn router(mock: Arc<MockBackend>) -> Router {
    Router::new()
        .route("/v1/chat", post(chat))
        .route("/v1/embed", post(embed))
        .route("/v1/health", get(health))
        .with_state(mock)
}

fn error_response(e: ProtocolError) -> Response {
    let (status, kind) = match &e {
        ProtocolError::InvalidRequest(_) => (StatusCode::BAD_REQUEST, "invalid_request"),
        ProtocolError::Backend(_) => (StatusCode::UNPROCESSABLE_ENTITY, "backend"),
        ProtocolError::Transport(_) | ProtocolError::Malformed(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    };
    let message = match e {
        ProtocolError::InvalidRequest(m)
        | ProtocolError::Backend(m)
        | ProtocolError::Transport(m)
        | ProtocolError::Malformed(m) => m,
    };
    (
        status,
        Json(ErrorBody {
            error: ErrorDetail {
                kind: kind.into(),
                message,
            },
        }),
    )
        .into_response()
}

async fn simulate(mock: &MockBackend, ms: f64) {
    if mock.real_sleep() && ms > 0.0 {
        tokio::time::sleep(Duration::from_secs_f64(ms / 1000.0)).await;
    }
}

async fn chat(State(mock): State<Arc<MockBackend>>, Json(req): Json<ChatRequest>) -> Response {
    match mock.respond_chat(&req) {
        Ok(resp) => {
            simulate(&mock, resp.wall_time_ms).await;
            Json(resp).into_response()
        }
        Err(e) => error_response(e),
    }
}

async fn embed(State(mock): State<Arc<MockBackend>>, Json(req): Json<EmbedRequest>) -> Response {
    match mock.respond_embed(&req) {
        Ok(resp) => {
            simulate(&mock, resp.wall_time_ms).await;
            Json(resp).into_response()
        }
        Err(e) => error_response(e),
    }
}

async fn health(State(mock): State<Arc<MockBackend>>) -> Response {
    Json(mock.health_report()).into_response()
}

/// A mock server running on its own thread; shuts down on drop.
pub struct MockServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn start(mock: Arc<MockBackend>, addr: SocketAddr) -> Result<Self> {
        let (ready_tx, ready_rx) = std::sync::mpsc::channel();
        let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = match tokio::runtime::Builder::new_multi_thread()
                .worker_threads(4)
                .enable_all()
                .build()
            {
                Ok(rt) => rt,
                Err(e) => {
                    let _ = ready_tx.send(Err(e.to_string()));
                    return;
                }
            };
            rt.block_on(async move {
                let listener = match tokio::net::TcpListener::bind(addr).await {
                    Ok(l) => l,
                    Err(e) => {
                        let _ = ready_tx.send(Err(format!("cannot bind {addr}: {e}")));
                        return;
                    }
                };
                let bound = listener.local_addr().expect("bound listener has an address");
                let _ = ready_tx.send(Ok(bound));
                let _ = axum::serve(listener, router(mock))
                    .with_graceful_shutdown(async {
                        let _ = shutdown_rx.await;
                    })
                    .await;
            });
        });
        let addr = ready_rx
            .recv()
            .map_err(|_| Error::Config("mock server thread exited early".into()))?
            .map_err(Error::Config)?;
        Ok(Self {
            addr,
            shutdown: Some(shutdown_tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops (it only stops when dropped elsewhere).
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
