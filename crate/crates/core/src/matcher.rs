//! Utterance–image matching.
//!
//! Every utterance is scored against every image twice, once against the
//! image vector and once against its caption vector. Both similarity types
//! are z-normalized with moments taken from the training split, then mixed:
//!
//! ```text
//! combined = alpha * (s_ui - mean_ui) / std_ui + (1 - alpha) * (s_uc - mean_uc) / std_uc
//! ```
//!
//! The normalization removes the scale offset between text–image and
//! text–text similarities so neither dominates the mix.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};
use crate::source::Split;
use crate::stats::Moments;
use crate::store::{cosine_from_parts, dot, norm, EmbeddingStore};

/// Pairs per block when moments are computed over a sampled population.
const SAMPLE_BLOCK: usize = 4096;

fn default_alpha() -> f64 {
    0.5
}
fn default_k() -> usize {
    100
}
fn default_tau2() -> f64 {
    75.0
}
fn default_max_images() -> usize {
    10
}
fn default_block() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Weight of the utterance–image term.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Candidates kept per utterance before filtering.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Frequency-filter percentile in (0, 100].
    #[serde(default = "default_tau2")]
    pub tau2_percentile: f64,
    #[serde(default = "default_max_images")]
    pub max_images_per_utterance: usize,
    /// When set, z-score moments come from this many seeded random pairs
    /// instead of the full utterance × image grid.
    #[serde(default)]
    pub zscore_sample_pairs: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    /// Tile edge for blocked scoring. Has no effect on results.
    #[serde(default = "default_block")]
    pub block_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            alpha: default_alpha(),
            k: default_k(),
            tau2_percentile: default_tau2(),
            max_images_per_utterance: default_max_images(),
            zscore_sample_pairs: None,
            seed: 0,
            block_size: default_block(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        if !(self.tau2_percentile > 0.0 && self.tau2_percentile <= 100.0) {
            return bad(format!(
                "tau2_percentile must be in (0, 100], got {}",
                self.tau2_percentile
            ));
        }
        if self.max_images_per_utterance == 0 {
            return bad("max_images_per_utterance must be positive".into());
        }
        if matches!(self.zscore_sample_pairs, Some(n) if n < 2) {
            return bad("zscore_sample_pairs must be at least 2".into());
        }
        if self.block_size == 0 {
            return bad("block_size must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UtteranceKey {
    pub dialogue_id: String,
    pub turn_index: usize,
}

/// Store id of turn `turn_index` (zero-based) of a dialogue.
pub fn utterance_id(dialogue_id: &str, turn_index: usize) -> String {
    format!("{dialogue_id}#{turn_index}")
}

pub fn parse_utterance_id(id: &str) -> Result<UtteranceKey> {
    let (dialogue_id, turn) = id
        .rsplit_once('#')
        .ok_or_else(|| Error::BadUtteranceId(id.to_string()))?;
    let turn_index = turn
        .parse()
        .map_err(|_| Error::BadUtteranceId(id.to_string()))?;
    if dialogue_id.is_empty() {
        return Err(Error::BadUtteranceId(id.to_string()));
    }
    Ok(UtteranceKey {
        dialogue_id: dialogue_id.to_string(),
        turn_index,
    })
}

fn checked_norm(v: &[f32], id: &str) -> Result<f64> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm(Some(id.to_string())));
    }
    Ok(n)
}

/// A selection of utterance rows with precomputed norms.
pub struct UtteranceSet<'a> {
    store: &'a EmbeddingStore,
    rows: Vec<usize>,
    norms: Vec<f64>,
    keys: Vec<UtteranceKey>,
}

impl<'a> UtteranceSet<'a> {
    pub fn all(store: &'a EmbeddingStore) -> Result<Self> {
        Self::from_rows(store, (0..store.len()).collect())
    }

    pub fn select<S: AsRef<str>>(store: &'a EmbeddingStore, ids: &[S]) -> Result<Self> {
        let rows = ids
            .iter()
            .map(|id| {
                store.row_of(id.as_ref()).ok_or_else(|| Error::MissingId {
                    store: "utterance",
                    id: id.as_ref().to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Self::from_rows(store, rows)
    }

    fn from_rows(store: &'a EmbeddingStore, rows: Vec<usize>) -> Result<Self> {
        let mut norms = Vec::with_capacity(rows.len());
        let mut keys = Vec::with_capacity(rows.len());
        for &r in &rows {
            norms.push(checked_norm(store.row(r), store.id(r))?);
            keys.push(parse_utterance_id(store.id(r))?);
        }
        Ok(UtteranceSet {
            store,
            rows,
            norms,
            keys,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.store.dim()
    }

    pub fn keys(&self) -> &[UtteranceKey] {
        &self.keys
    }

    fn vector(&self, i: usize) -> &[f32] {
        self.store.row(self.rows[i])
    }
}

/// A selection of images paired with their caption rows.
pub struct ImageGallery<'a> {
    images: &'a EmbeddingStore,
    captions: &'a EmbeddingStore,
    image_rows: Vec<usize>,
    caption_rows: Vec<usize>,
    image_norms: Vec<f64>,
    caption_norms: Vec<f64>,
    /// Position of each image in ascending id order, for tie-breaking.
    id_rank: Vec<u32>,
}

impl<'a> ImageGallery<'a> {
    pub fn all(images: &'a EmbeddingStore, captions: &'a EmbeddingStore) -> Result<Self> {
        Self::from_rows(images, captions, (0..images.len()).collect())
    }

    pub fn select<S: AsRef<str>>(
        images: &'a EmbeddingStore,
        captions: &'a EmbeddingStore,
        image_ids: &[S],
    ) -> Result<Self> {
        let rows = image_ids
            .iter()
            .map(|id| {
                images.row_of(id.as_ref()).ok_or_else(|| Error::MissingId {
                    store: "image",
                    id: id.as_ref().to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Self::from_rows(images, captions, rows)
    }

    fn from_rows(
        images: &'a EmbeddingStore,
        captions: &'a EmbeddingStore,
        image_rows: Vec<usize>,
    ) -> Result<Self> {
        if images.dim() != captions.dim() {
            return Err(Error::DimMismatch {
                left: images.dim(),
                right: captions.dim(),
            });
        }
        let mut caption_rows = Vec::with_capacity(image_rows.len());
        let mut image_norms = Vec::with_capacity(image_rows.len());
        let mut caption_norms = Vec::with_capacity(image_rows.len());
        for &r in &image_rows {
            let id = images.id(r);
            // Same manifest order is the common case; fall back to id lookup.
            let c = if captions.len() > r && captions.id(r) == id {
                r
            } else {
                captions
                    .row_of(id)
                    .ok_or_else(|| Error::MissingCaption(id.to_string()))?
            };
            image_norms.push(checked_norm(images.row(r), id)?);
            caption_norms.push(checked_norm(captions.row(c), id)?);
            caption_rows.push(c);
        }
        let mut order: Vec<usize> = (0..image_rows.len()).collect();
        order.sort_by(|&a, &b| images.id(image_rows[a]).cmp(images.id(image_rows[b])));
        let mut id_rank = vec![0u32; image_rows.len()];
        for (rank, &i) in order.iter().enumerate() {
            id_rank[i] = rank as u32;
        }
        Ok(ImageGallery {
            images,
            captions,
            image_rows,
            caption_rows,
            image_norms,
            caption_norms,
            id_rank,
        })
    }

    pub fn len(&self) -> usize {
        self.image_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.dim()
    }

    pub fn image_id(&self, j: usize) -> &str {
        self.images.id(self.image_rows[j])
    }

    /// `(s_ui, s_uc)` for an utterance vector with norm `u_norm` against image `j`.
    #[inline]
    fn similarities(&self, u: &[f32], u_norm: f64, j: usize) -> (f64, f64) {
        let img = self.images.row(self.image_rows[j]);
        let cap = self.captions.row(self.caption_rows[j]);
        (
            cosine_from_parts(dot(u, img), u_norm, self.image_norms[j]),
            cosine_from_parts(dot(u, cap), u_norm, self.caption_norms[j]),
        )
    }
}

fn check_dims(utterances: &UtteranceSet, gallery: &ImageGallery) -> Result<()> {
    if utterances.dim() != gallery.dim() {
        return Err(Error::DimMismatch {
            left: utterances.dim(),
            right: gallery.dim(),
        });
    }
    Ok(())
}

/// Per-similarity-type moments for z-normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreStats {
    pub mean_ui: f64,
    pub std_ui: f64,
    pub mean_uc: f64,
    pub std_uc: f64,
    pub population_size: u64,
    pub computed_on: Split,
    pub seed: u64,
    pub sampled: bool,
}

impl ZScoreStats {
    pub fn from_moments(ui: &Moments, uc: &Moments, seed: u64, sampled: bool) -> Result<Self> {
        if ui.n < 2 {
            return Err(Error::EmptyPopulation(ui.n));
        }
        let stats = ZScoreStats {
            mean_ui: ui.mean,
            std_ui: ui.population_std(),
            mean_uc: uc.mean,
            std_uc: uc.population_std(),
            population_size: ui.n,
            computed_on: Split::Train,
            seed,
            sampled,
        };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::EmptyPopulation(self.population_size));
        }
        if self.std_ui.is_nan() || self.std_ui <= 0.0 {
            return Err(Error::ZeroVariance("utterance-image"));
        }
        if self.std_uc.is_nan() || self.std_uc <= 0.0 {
            return Err(Error::ZeroVariance("utterance-caption"));
        }
        if self.computed_on != Split::Train {
            return Err(Error::InvalidConfig(
                "z-score statistics must come from the train split".into(),
            ));
        }
        Ok(())
    }
}

/// Population moments of both similarity types over every utterance × image
/// pair, or over `config.zscore_sample_pairs` seeded random pairs.
pub fn compute_zscore_stats(
    utterances: &UtteranceSet,
    gallery: &ImageGallery,
    config: &PipelineConfig,
) -> Result<ZScoreStats> {
    check_dims(utterances, gallery)?;
    let (n, m) = (utterances.len(), gallery.len());
    if n == 0 || m == 0 {
        return Err(Error::EmptyPopulation(0));
    }

    let blocks: Vec<(Moments, Moments)> = match config.zscore_sample_pairs {
        None => (0..n)
            .into_par_iter()
            .map_init(
                || (Vec::with_capacity(m), Vec::with_capacity(m)),
                |(ui, uc), i| {
                    ui.clear();
                    uc.clear();
                    let u = utterances.vector(i);
                    for j in 0..m {
                        let (a, b) = gallery.similarities(u, utterances.norms[i], j);
                        ui.push(a);
                        uc.push(b);
                    }
                    (Moments::from_slice(ui), Moments::from_slice(uc))
                },
            )
            .collect(),
        Some(samples) => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let pairs: Vec<(u32, u32)> = (0..samples)
                .map(|_| (rng.gen_range(0..n) as u32, rng.gen_range(0..m) as u32))
                .collect();
            pairs
                .par_chunks(SAMPLE_BLOCK)
                .map(|chunk| {
                    let (ui, uc): (Vec<f64>, Vec<f64>) = chunk
                        .iter()
                        .map(|&(i, j)| {
                            let i = i as usize;
                            gallery.similarities(utterances.vector(i), utterances.norms[i], j as usize)
                        })
                        .unzip();
                    (Moments::from_slice(&ui), Moments::from_slice(&uc))
                })
                .collect()
        }
    };

    let ui = Moments::merged(blocks.iter().map(|b| &b.0));
    let uc = Moments::merged(blocks.iter().map(|b| &b.1));
    ZScoreStats::from_moments(&ui, &uc, config.seed, config.zscore_sample_pairs.is_some())
}

/// Weighted sum of the two z-normalized similarities.
#[inline]
pub fn combined_score(s_ui: f64, s_uc: f64, stats: &ZScoreStats, alpha: f64) -> f64 {
    let z_ui = (s_ui - stats.mean_ui) / stats.std_ui;
    let z_uc = (s_uc - stats.mean_uc) / stats.std_uc;
    alpha * z_ui + (1.0 - alpha) * z_uc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub image_id: String,
    pub s_ui: f64,
    pub s_uc: f64,
    pub combined: f64,
}

impl Candidate {
    pub fn utterance(&self) -> (&str, usize) {
        (&self.dialogue_id, self.turn_index)
    }
}

/// Orders candidates best-first: higher combined score, then smaller image id.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.combined
        .total_cmp(&a.combined)
        .then_with(|| a.image_id.cmp(&b.image_id))
}

/// Top-k candidates per utterance. Entries are grouped by utterance and each
/// group is sorted with [`rank_order`].
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub k: usize,
    pub entries: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Consecutive runs of entries sharing an utterance.
    pub fn groups(&self) -> impl Iterator<Item = &[Candidate]> {
        self.entries
            .chunk_by(|a, b| a.utterance() == b.utterance())
    }

    pub fn retain(&self, mut keep: impl FnMut(&Candidate) -> bool) -> CandidateSet {
        CandidateSet {
            k: self.k,
            entries: self.entries.iter().filter(|c| keep(c)).cloned().collect(),
        }
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.entries)
    }

    pub fn read_jsonl(path: &Path, k: usize) -> Result<CandidateSet> {
        Ok(CandidateSet {
            k,
            entries: read_jsonl(path)?,
        })
    }
}

#[derive(Clone, Copy)]
struct Scored {
    combined: f64,
    id_rank: u32,
    image: u32,
    s_ui: f64,
    s_uc: f64,
}

impl PartialEq for Scored {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scored {}
impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scored {
    /// Greater means better.
    fn cmp(&self, other: &Self) -> Ordering {
        self.combined
            .total_cmp(&other.combined)
            .then_with(|| other.id_rank.cmp(&self.id_rank))
    }
}

struct TopK {
    k: usize,
    heap: BinaryHeap<Reverse<Scored>>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, s: Scored) {
        if self.heap.len() < self.k {
            self.heap.push(Reverse(s));
        } else if let Some(Reverse(worst)) = self.heap.peek() {
            if s > *worst {
                self.heap.pop();
                self.heap.push(Reverse(s));
            }
        }
    }

    fn into_sorted(self) -> Vec<Scored> {
        let mut v: Vec<Scored> = self.heap.into_iter().map(|Reverse(s)| s).collect();
        v.sort_unstable_by(|a, b| b.cmp(a));
        v
    }
}

/// For each utterance, the `config.k` images with the highest combined score.
///
/// The utterance × image grid is scored in `block_size` tiles, utterance tiles
/// in parallel. Selection uses a total order, so results do not depend on the
/// tile size or thread count.
pub fn match_topk(
    utterances: &UtteranceSet,
    gallery: &ImageGallery,
    stats: &ZScoreStats,
    config: &PipelineConfig,
) -> Result<CandidateSet> {
    check_dims(utterances, gallery)?;
    stats.validate()?;
    let block = config.block_size.max(1);
    let (n, m) = (utterances.len(), gallery.len());
    let alpha = config.alpha;

    let starts: Vec<usize> = (0..n).step_by(block).collect();
    let tiles: Vec<Vec<Candidate>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + block).min(n);
            let mut heaps: Vec<TopK> = (start..end).map(|_| TopK::new(config.k)).collect();
            for img_start in (0..m).step_by(block) {
                let img_end = (img_start + block).min(m);
                for (heap, i) in heaps.iter_mut().zip(start..end) {
                    let u = utterances.vector(i);
                    let u_norm = utterances.norms[i];
                    for j in img_start..img_end {
                        let (s_ui, s_uc) = gallery.similarities(u, u_norm, j);
                        let c = combined_score(s_ui, s_uc, stats, alpha);
                        heap.offer(Scored {
                            // Folds -0.0 into 0.0 so equal scores tie.
                            combined: c + 0.0,
                            id_rank: gallery.id_rank[j],
                            image: j as u32,
                            s_ui,
                            s_uc,
                        });
                    }
                }
            }
            let mut out = Vec::new();
            for (heap, i) in heaps.into_iter().zip(start..end) {
                let key = &utterances.keys[i];
                out.extend(heap.into_sorted().into_iter().map(|s| Candidate {
                    dialogue_id: key.dialogue_id.clone(),
                    turn_index: key.turn_index,
                    image_id: gallery.image_id(s.image as usize).to_string(),
                    s_ui: s.s_ui,
                    s_uc: s.s_uc,
                    combined: s.combined,
                }));
            }
            out
        })
        .collect();

    Ok(CandidateSet {
        k: config.k,
        entries: tiles.into_iter().flatten().collect(),
    })
}
