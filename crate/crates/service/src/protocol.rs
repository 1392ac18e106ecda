use serde::{Deserialize, Serialize};

/// Largest number of texts accepted in one request.
pub const MAX_BATCH: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub input: Vec<String>,
}

impl EmbedRequest {
    pub fn validate(&self) -> Result<(), String> {
        match self.input.len() {
            0 => Err("input must hold at least one text".into()),
            n if n > MAX_BATCH => Err(format!("input holds {n} texts; the limit is {MAX_BATCH}")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingItem {
    pub index: usize,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub model_id: String,
    pub data: Vec<EmbeddingItem>,
}

impl EmbedResponse {
    /// Checks that `data` has one item per input, indexed in order.
    pub fn check_aligned(&self, expected: usize) -> Result<(), String> {
        if self.data.len() != expected {
            return Err(format!(
                "expected {expected} embeddings, got {}",
                self.data.len()
            ));
        }
        match self
            .data
            .iter()
            .enumerate()
            .find(|(i, item)| item.index != *i)
        {
            Some((i, item)) => Err(format!("item {i} carries index {}", item.index)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
