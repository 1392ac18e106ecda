//! Backdoor and benign probe texts.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{FrequencyTable, TriggerSet};
use crate::error::{Error, Result};

pub const DEFAULT_PROBE_COUNT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSets {
    pub backdoor_texts: Vec<String>,
    pub benign_texts: Vec<String>,
    pub seed: u64,
}

/// Non-trigger words from the trigger set's own frequency band, sorted.
pub fn benign_pool<'a>(triggers: &TriggerSet, vocab: &'a FrequencyTable) -> Vec<&'a str> {
    vocab
        .words_in_band(triggers.interval.lo, triggers.interval.hi)
        .into_iter()
        .filter(|w| !triggers.contains(w))
        .collect()
}

/// Backdoor texts of `m` distinct triggers and benign texts of `m` distinct
/// non-trigger words from the same frequency band.
pub fn build_probe_sets(
    triggers: &TriggerSet,
    vocab: &FrequencyTable,
    m: usize,
    count_per_set: usize,
    seed: u64,
) -> Result<ProbeSets> {
    build_mixed_probe_sets(triggers, vocab, m, m, count_per_set, seed)
}

/// Like [`build_probe_sets`], but each backdoor text holds exactly
/// `trigger_words` triggers padded with `m − trigger_words` benign words.
pub fn build_mixed_probe_sets(
    triggers: &TriggerSet,
    vocab: &FrequencyTable,
    m: usize,
    trigger_words: usize,
    count_per_set: usize,
    seed: u64,
) -> Result<ProbeSets> {
    if m == 0 || trigger_words > m {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= m and trigger words <= m (m = {m}, trigger words = {trigger_words})"
        )));
    }
    if triggers.len() < trigger_words {
        return Err(Error::InsufficientVocabulary {
            eligible: triggers.len(),
            required: trigger_words,
        });
    }
    let pool = benign_pool(triggers, vocab);
    if pool.len() < m {
        return Err(Error::InsufficientVocabulary {
            eligible: pool.len(),
            required: m,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut backdoor_texts = Vec::with_capacity(count_per_set);
    for _ in 0..count_per_set {
        let mut words: Vec<&str> = index::sample(&mut rng, triggers.len(), trigger_words)
            .iter()
            .map(|i| triggers.triggers[i].as_str())
            .collect();
        words.extend(
            index::sample(&mut rng, pool.len(), m - trigger_words)
                .iter()
                .map(|i| pool[i]),
        );
        backdoor_texts.push(words.join(" "));
    }
    let benign_texts = (0..count_per_set)
        .map(|_| {
            index::sample(&mut rng, pool.len(), m)
                .iter()
                .map(|i| pool[i])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    Ok(ProbeSets {
        backdoor_texts,
        benign_texts,
        seed,
    })
}
