use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use embmark_core::EmbeddingService;
use tokio::sync::oneshot;

use crate::protocol::{EmbedRequest, EmbedResponse, EmbeddingItem, ErrorBody};

/// Environment variable that overrides the bind address.
pub const BIND_ENV: &str = "EMBMARK_BIND";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("address {0} is already in use")]
    AddressInUse(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("server runtime: {0}")]
    Runtime(#[from] std::io::Error),
}

/// Bind address from `EMBMARK_BIND` if set, else loopback on `port`.
pub fn bind_address(port: Option<u16>) -> String {
    match std::env::var(BIND_ENV) {
        Ok(addr) if !addr.trim().is_empty() => addr.trim().to_string(),
        _ => format!("127.0.0.1:{}", port.unwrap_or(DEFAULT_PORT)),
    }
}

struct AppState {
    service: Arc<dyn EmbeddingService>,
    model_id: String,
    served: Arc<AtomicUsize>,
}

/// A server running on its own thread. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    served: Arc<AtomicUsize>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Number of embedding requests answered so far, successful or not.
    pub fn requests_served(&self) -> usize {
        self.served.load(Ordering::SeqCst)
    }

    /// Blocks until the server stops on its own.
    pub fn wait(mut self) -> Result<(), ServeError> {
        match self.thread.take() {
            Some(t) => t
                .join()
                .expect("server thread panicked")
                .map_err(ServeError::Runtime),
            None => Ok(()),
        }
    }

    pub fn shutdown(mut self) -> Result<(), ServeError> {
        self.stop()
    }

    fn stop(&mut self) -> Result<(), ServeError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t
                .join()
                .expect("server thread panicked")
                .map_err(ServeError::Runtime),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}

/// Serves `service` on `bind` (use port 0 for an ephemeral port) and returns once
/// the socket is listening.
pub fn serve(
    service: Arc<dyn EmbeddingService>,
    model_id: impl Into<String>,
    bind: &str,
) -> Result<ServerHandle, ServeError> {
    let listener = TcpListener::bind(bind).map_err(|source| match source.kind() {
        std::io::ErrorKind::AddrInUse => ServeError::AddressInUse(bind.to_string()),
        _ => ServeError::Bind {
            addr: bind.to_string(),
            source,
        },
    })?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let served = Arc::new(AtomicUsize::new(0));
    let state = Arc::new(AppState {
        service,
        model_id: model_id.into(),
        served: Arc::clone(&served),
    });
    let app = Router::new()
        .route("/v1/embeddings", post(embeddings))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(state);

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name(format!("embmark-serve-{addr}"))
        .spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                log::info!("serving embeddings on http://{addr}");
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
            })
        })?;
    Ok(ServerHandle {
        addr,
        served,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

fn error_response(status: StatusCode, error: String) -> Response {
    (status, Json(ErrorBody { error })).into_response()
}

async fn embeddings(
    State(state): State<Arc<AppState>>,
    body: Result<Json<EmbedRequest>, JsonRejection>,
) -> Response {
    state.served.fetch_add(1, Ordering::SeqCst);
    let Json(request) = match body {
        Ok(b) => b,
        Err(rejection) => return error_response(StatusCode::BAD_REQUEST, rejection.body_text()),
    };
    if let Err(e) = request.validate() {
        return error_response(StatusCode::BAD_REQUEST, e);
    }
    let service = Arc::clone(&state.service);
    let result = tokio::task::spawn_blocking(move || service.embed_batch(&request.input)).await;
    match result {
        Ok(Ok(embeddings)) => Json(EmbedResponse {
            model_id: state.model_id.clone(),
            data: embeddings
                .into_iter()
                .enumerate()
                .map(|(index, e)| EmbeddingItem {
                    index,
                    embedding: e.into_vec(),
                })
                .collect(),
        })
        .into_response(),
        Ok(Err(e)) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error_response(
            StatusCode::INTERNAL_SERVER_ERROR,
            format!("embedding task failed: {e}"),
        ),
    }
}
