//! Black-box embedding service abstraction. Verification and extraction only ever
//! see a service through this trait, whether it runs in-process or over HTTP.

use std::sync::Arc;

use crate::embedder::Embedding;
use crate::error::{Error, Result};

pub trait EmbeddingService: Send + Sync {
    /// Embeds a batch; the output is aligned with `texts`.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>>;

    fn embed(&self, text: &str) -> Result<Embedding> {
        let mut out = self.embed_batch(&[text.to_string()])?;
        match out.pop() {
            Some(e) if out.is_empty() => Ok(e),
            _ => Err(Error::ServiceUnavailable(
                "service returned a wrong number of embeddings".into(),
            )),
        }
    }
}

impl<S: EmbeddingService + ?Sized> EmbeddingService for &S {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        (**self).embed_batch(texts)
    }
}

impl<S: EmbeddingService + ?Sized> EmbeddingService for Box<S> {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        (**self).embed_batch(texts)
    }
}

impl<S: EmbeddingService + ?Sized> EmbeddingService for Arc<S> {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        (**self).embed_batch(texts)
    }
}

/// Adapts a per-text closure into a service.
pub struct FnService<F>(pub F);

impl<F> EmbeddingService for FnService<F>
where
    F: Fn(&str) -> Result<Embedding> + Send + Sync,
{
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        texts.iter().map(|t| (self.0)(t)).collect()
    }
}

/// Queries `service` and checks the response is aligned and well formed.
pub(crate) fn query_checked<S: EmbeddingService + ?Sized>(
    service: &S,
    texts: &[String],
) -> Result<Vec<Embedding>> {
    let out = service.embed_batch(texts)?;
    if out.len() != texts.len() {
        return Err(Error::ServiceUnavailable(format!(
            "asked for {} embeddings, got {}",
            texts.len(),
            out.len()
        )));
    }
    Ok(out)
}
