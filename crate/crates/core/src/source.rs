//! Source data filtering: dialogue deduplication, image–caption similarity
//! thresholding, and seeded train/valid/test splitting.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{cosine, EmbeddingStore};

/// Default minimum image–caption cosine similarity.
pub const DEFAULT_PAIR_THRESHOLD: f64 = 0.185;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill: Option<String>,
    /// Split the source corpus assigned, when it ships one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidDialogue {
            id: self.dialogue_id.clone(),
            reason,
        };
        if self.dialogue_id.is_empty() || self.dialogue_id.contains(['\n', '\r']) {
            return Err(invalid("dialogue_id must be a non-empty single line".into()));
        }
        if self.turns.is_empty() {
            return Err(invalid("no turns".into()));
        }
        if let Some(i) = self.turns.iter().position(|t| t.text.trim().is_empty()) {
            return Err(invalid(format!("turn {i} is empty")));
        }
        Ok(())
    }

    /// Lowercased, whitespace-collapsed turn texts joined by a unit separator
    /// so turn boundaries stay significant.
    pub fn dedup_key(&self) -> String {
        let mut key = String::new();
        for (i, turn) in self.turns.iter().enumerate() {
            if i > 0 {
                key.push('\u{1f}');
            }
            for (j, word) in turn.text.split_whitespace().enumerate() {
                if j > 0 {
                    key.push(' ');
                }
                key.extend(word.chars().flat_map(char::to_lowercase));
            }
        }
        key
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageCaptionPair {
    pub image_id: String,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_hash: Option<String>,
}

/// Keeps the first dialogue of each dedup-key class, in input order.
pub fn dedup_dialogues(dialogues: Vec<Dialogue>) -> Vec<Dialogue> {
    let mut seen = HashSet::with_capacity(dialogues.len());
    dialogues
        .into_iter()
        .filter(|d| seen.insert(d.dedup_key()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFilterOutcome {
    pub kept: Vec<String>,
    pub input_pairs: usize,
    pub hash_duplicates: usize,
    pub below_threshold: usize,
    pub threshold: f64,
}

/// Drops exact-duplicate images (by content hash, first occurrence kept), then
/// pairs whose image–caption cosine falls below `threshold`.
pub fn filter_image_caption_pairs(
    pairs: &[ImageCaptionPair],
    images: &EmbeddingStore,
    captions: &EmbeddingStore,
    threshold: f64,
) -> Result<PairFilterOutcome> {
    let mut ids = HashSet::with_capacity(pairs.len());
    let mut hashes = HashSet::new();
    let mut unique = Vec::with_capacity(pairs.len());
    for pair in pairs {
        if !ids.insert(pair.image_id.as_str()) {
            return Err(Error::DuplicateId(pair.image_id.clone()));
        }
        match &pair.content_hash {
            Some(h) if !hashes.insert(h.as_str()) => {}
            _ => unique.push(pair),
        }
    }
    let hash_duplicates = pairs.len() - unique.len();

    let keep: Vec<bool> = unique
        .par_iter()
        .map(|pair| {
            let img = images.vector(&pair.image_id).ok_or_else(|| Error::MissingId {
                store: "image",
                id: pair.image_id.clone(),
            })?;
            let cap = captions.vector(&pair.image_id).ok_or_else(|| Error::MissingId {
                store: "caption",
                id: pair.image_id.clone(),
            })?;
            let sim = cosine(img, cap).map_err(|e| match e {
                Error::ZeroNorm(_) => Error::ZeroNorm(Some(pair.image_id.clone())),
                other => other,
            })?;
            Ok(sim >= threshold)
        })
        .collect::<Result<_>>()?;

    let kept: Vec<String> = unique
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(p, _)| p.image_id.clone())
        .collect();
    Ok(PairFilterOutcome {
        below_threshold: unique.len() - kept.len(),
        kept,
        input_pairs: pairs.len(),
        hash_duplicates,
        threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.valid.len(), self.test.len())
    }

    pub fn split_of(&self) -> std::collections::HashMap<&str, Split> {
        Split::ALL
            .iter()
            .flat_map(|&s| self.ids(s).iter().map(move |id| (id.as_str(), s)))
            .collect()
    }
}

/// Shuffles `ids` with a seeded RNG and cuts at `floor(n·a/t)` and
/// `floor(n·(a+b)/t)` for ratio `(a, b, c)`, `t = a+b+c`. Each bucket is
/// returned sorted.
pub fn split_pairs(ids: &[String], ratio: (u32, u32, u32), seed: u64) -> Result<SplitAssignment> {
    let total = ratio.0 as u128 + ratio.1 as u128 + ratio.2 as u128;
    if total == 0 {
        return Err(Error::InvalidConfig("split ratio sums to zero".into()));
    }
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    let mut order: Vec<&String> = ids.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n = ids.len() as u128;
    let cut1 = (n * ratio.0 as u128 / total) as usize;
    let cut2 = (n * (ratio.0 as u128 + ratio.1 as u128) / total) as usize;
    let bucket = |range: &[&String]| {
        let mut v: Vec<String> = range.iter().map(|s| (*s).clone()).collect();
        v.sort_unstable();
        v
    };
    Ok(SplitAssignment {
        seed,
        train: bucket(&order[..cut1]),
        valid: bucket(&order[cut1..cut2]),
        test: bucket(&order[cut2..]),
    })
}
