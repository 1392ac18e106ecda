//! Wire protocol, server and client for embedding endpoints.
//!
//! A served model answers `POST /v1/embeddings` with `{"input": [...]}` and
//! replies `{"model_id": ..., "data": [{"index": i, "embedding": [...]}]}`.
//! [`HttpEmbeddingService`] speaks the same protocol and implements
//! [`EmbeddingService`](embmark_core::EmbeddingService), so the verifier can
//! query a remote model exactly as it queries an in-process one.

mod client;
mod protocol;
mod server;

pub use client::{HttpEmbeddingService, RetryPolicy};
pub use protocol::{EmbedRequest, EmbedResponse, EmbeddingItem, ErrorBody, MAX_BATCH};
pub use server::{bind_address, serve, ServeError, ServerHandle, BIND_ENV, DEFAULT_PORT};
