use serde::{Deserialize, Serialize};

use super::bm25::sort_scored;
use super::instances::{RetrievalInstance, Task};
use crate::error::{Error, Result};
use crate::store::{cosine, EmbeddingStore};

/// Number of most recent history turns pooled into the query vector.
pub const HISTORY_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedWeights {
    pub w_text: f64,
    pub w_image: f64,
}

impl Default for EmbedWeights {
    fn default() -> Self {
        EmbedWeights { w_text: 1.0, w_image: 1.0 }
    }
}

fn lookup<'a>(store: &'a EmbeddingStore, name: &'static str, id: &str) -> Result<&'a [f32]> {
    store.vector(id).ok_or_else(|| Error::MissingId {
        store: name,
        id: id.to_string(),
    })
}

/// Unweighted mean of the last few history vectors.
pub fn pooled_history(instance: &RetrievalInstance, utterances: &EmbeddingStore) -> Result<Option<Vec<f32>>> {
    let window = &instance.history_ids[instance.history_ids.len().saturating_sub(HISTORY_WINDOW)..];
    if window.is_empty() {
        return Ok(None);
    }
    let mut sum = vec![0f64; utterances.dim()];
    for id in window {
        for (s, &x) in sum.iter_mut().zip(lookup(utterances, "utterance", id)?) {
            *s += x as f64;
        }
    }
    let n = window.len() as f64;
    Ok(Some(sum.into_iter().map(|s| (s / n) as f32).collect()))
}

/// Zero-shot ranking by cosine similarity to the pooled history and, when
/// the instance carries one, to the shared image.
///
/// Candidates are utterance ids for text tasks and image ids for image
/// retrieval.
pub fn embed_rank<S: AsRef<str>>(
    instance: &RetrievalInstance,
    candidates: &[S],
    utterances: &EmbeddingStore,
    images: &EmbeddingStore,
    weights: EmbedWeights,
) -> Result<Vec<String>> {
    let history = pooled_history(instance, utterances)?;
    let image = match &instance.image_id {
        Some(id) if weights.w_image != 0.0 => Some(lookup(images, "image", id)?),
        _ => None,
    };
    let (cand_store, cand_name) = match instance.task {
        Task::ImageRetrieval => (images, "image"),
        _ => (utterances, "utterance"),
    };
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        let id = c.as_ref();
        let v = lookup(cand_store, cand_name, id)?;
        let mut score = 0.0;
        if let Some(h) = &history {
            score += weights.w_text * cosine(h, v)?;
        }
        if let Some(i) = image {
            score += weights.w_image * cosine(i, v)?;
        }
        scored.push((score, id));
    }
    Ok(sort_scored(scored, candidates.len()))
}
