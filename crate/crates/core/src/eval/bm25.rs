use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Okapi BM25 over a fixed document collection.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    ids: Vec<String>,
    position: HashMap<String, usize>,
    term_counts: Vec<HashMap<String, u32>>,
    lengths: Vec<u32>,
    doc_freq: HashMap<String, u32>,
    avg_len: f64,
}

impl Bm25Index {
    pub fn build<I, S, T>(docs: I, params: Bm25Params) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        let mut index = Bm25Index {
            params,
            ids: Vec::new(),
            position: HashMap::new(),
            term_counts: Vec::new(),
            lengths: Vec::new(),
            doc_freq: HashMap::new(),
            avg_len: 0.0,
        };
        let mut total = 0u64;
        for (id, text) in docs {
            let id = id.into();
            if index.position.insert(id.clone(), index.ids.len()).is_some() {
                return Err(Error::DuplicateId(id));
            }
            let tokens = tokenize(text.as_ref());
            let mut counts: HashMap<String, u32> = HashMap::new();
            for tok in &tokens {
                *counts.entry(tok.clone()).or_default() += 1;
            }
            for term in counts.keys() {
                *index.doc_freq.entry(term.clone()).or_default() += 1;
            }
            total += tokens.len() as u64;
            index.lengths.push(tokens.len() as u32);
            index.term_counts.push(counts);
            index.ids.push(id);
        }
        if !index.ids.is_empty() {
            index.avg_len = total as f64 / index.ids.len() as f64;
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`, which stays positive for
    /// terms present in more than half the collection.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn score_doc(&self, terms: &[String], doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let len = self.lengths[doc] as f64;
        let norm = if self.avg_len > 0.0 {
            k1 * (1.0 - b + b * len / self.avg_len)
        } else {
            k1
        };
        let mut score = 0.0;
        for term in terms {
            let Some(&tf) = self.term_counts[doc].get(term) else { continue };
            let tf = tf as f64;
            score += self.idf(term) * tf * (k1 + 1.0) / (tf + norm);
        }
        score
    }

    /// Score of one document for a query; each distinct query term counts once.
    pub fn score(&self, query: &str, doc_id: &str) -> Result<f64> {
        let doc = *self
            .position
            .get(doc_id)
            .ok_or_else(|| Error::UnknownDocument(doc_id.to_string()))?;
        Ok(self.score_doc(&query_terms(query), doc))
    }
}

fn query_terms(query: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    tokenize(query).into_iter().filter(|t| seen.insert(t.clone())).collect()
}

/// Ranks `candidates` by BM25 score, ties by id ascending, and keeps `k`.
pub fn bm25_rank<S: AsRef<str>>(
    index: &Bm25Index,
    query: &str,
    candidates: &[S],
    k: usize,
) -> Result<Vec<String>> {
    let terms = query_terms(query);
    if terms.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let mut seen = HashSet::new();
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        let id = c.as_ref();
        if !seen.insert(id) {
            return Err(Error::DuplicateCandidate(id.to_string()));
        }
        let doc = *index
            .position
            .get(id)
            .ok_or_else(|| Error::UnknownDocument(id.to_string()))?;
        scored.push((index.score_doc(&terms, doc), id));
    }
    Ok(sort_scored(scored, k))
}

/// Descending score, then id ascending.
pub(crate) fn sort_scored(mut scored: Vec<(f64, &str)>, k: usize) -> Vec<String> {
    scored.sort_by(|a, b| match b.0.total_cmp(&a.0) {
        Ordering::Equal => a.1.cmp(b.1),
        o => o,
    });
    scored.into_iter().take(k).map(|(_, id)| id.to_string()).collect()
}
