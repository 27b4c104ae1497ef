//! Two-stage filtering of matched candidates and dataset assembly.
//!
//! Stage one drops candidates scoring below the median of all combined
//! scores. Stage two counts, per image, how many utterances it is still
//! matched to and drops images above a nearest-rank percentile of those
//! counts, which removes generic images that match almost anything.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::{rank_order, Candidate, CandidateSet};
use crate::source::{Dialogue, Split, Turn};
use crate::stats::{lower_median, nearest_rank};

/// Lower median of all combined scores.
pub fn compute_tau1(candidates: &CandidateSet) -> Result<f64> {
    let mut scores: Vec<f64> = candidates.entries.iter().map(|c| c.combined).collect();
    lower_median(&mut scores).ok_or(Error::EmptyCandidates)
}

/// Keeps entries with `combined >= tau1`.
pub fn apply_score_filter(candidates: &CandidateSet, tau1: f64) -> CandidateSet {
    candidates.retain(|c| c.combined >= tau1)
}

fn match_counts(candidates: &CandidateSet) -> HashMap<&str, u64> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for c in &candidates.entries {
        *counts.entry(c.image_id.as_str()).or_default() += 1;
    }
    counts
}

/// Nearest-rank `percentile` of per-image match counts, or `None` when the
/// candidate set is empty.
pub fn frequency_threshold(candidates: &CandidateSet, percentile: f64) -> Option<u64> {
    let mut counts: Vec<u64> = match_counts(candidates).into_values().collect();
    nearest_rank(&mut counts, percentile)
}

/// Keeps entries whose image is matched no more often than the
/// `percentile`-th per-image match count. Images tied at the cut are kept.
pub fn apply_frequency_filter(candidates: &CandidateSet, percentile: f64) -> CandidateSet {
    let Some(cut) = frequency_threshold(candidates, percentile) else {
        return candidates.clone();
    };
    let counts = match_counts(candidates);
    let keep: HashSet<&str> = counts
        .iter()
        .filter(|(_, &n)| n <= cut)
        .map(|(id, _)| *id)
        .collect();
    candidates.retain(|c| keep.contains(c.image_id.as_str()))
}

fn distinct_images(candidates: &CandidateSet) -> usize {
    candidates
        .entries
        .iter()
        .map(|c| c.image_id.as_str())
        .collect::<HashSet<_>>()
        .len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub links_before: usize,
    pub links_after: usize,
    pub images_before: usize,
    pub images_after: usize,
}

impl StageCounts {
    fn between(before: &CandidateSet, after: &CandidateSet) -> Self {
        StageCounts {
            links_before: before.len(),
            links_after: after.len(),
            images_before: distinct_images(before),
            images_after: distinct_images(after),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    /// Median combined score; absent when there were no candidates.
    pub tau1: Option<f64>,
    pub median_convention: String,
    pub tau2_percentile: f64,
    /// Per-image match count at the percentile cut.
    pub frequency_threshold: Option<f64>,
    pub score_stage: StageCounts,
    pub frequency_stage: StageCounts,
}

/// Runs the score filter, then the frequency filter on what survives.
pub fn filter_candidates(candidates: &CandidateSet, percentile: f64) -> (CandidateSet, FilterStats) {
    let tau1 = compute_tau1(candidates).ok();
    let scored = match tau1 {
        Some(t) => apply_score_filter(candidates, t),
        None => candidates.clone(),
    };
    let cut = frequency_threshold(&scored, percentile);
    let filtered = apply_frequency_filter(&scored, percentile);
    let stats = FilterStats {
        tau1,
        median_convention: "lower".into(),
        tau2_percentile: percentile,
        frequency_threshold: cut.map(|c| c as f64),
        score_stage: StageCounts::between(candidates, &scored),
        frequency_stage: StageCounts::between(&scored, &filtered),
    };
    (filtered, stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub percentile: f64,
    pub frequency_threshold: Option<u64>,
    pub links_retained: usize,
    pub images_retained: usize,
}

/// Frequency-filter outcomes for several percentiles over the same
/// score-filtered candidates.
pub fn tau2_sweep(score_filtered: &CandidateSet, percentiles: &[f64]) -> Vec<SweepRow> {
    percentiles
        .iter()
        .map(|&p| {
            let kept = apply_frequency_filter(score_filtered, p);
            SweepRow {
                percentile: p,
                frequency_threshold: frequency_threshold(score_filtered, p),
                links_retained: kept.len(),
                images_retained: distinct_images(&kept),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub image_id: String,
    pub score: f64,
}

/// A dialogue with ranked images attached to some of its turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "MatchedRecord", into = "MatchedRecord")]
pub struct MatchedDialogue {
    pub dialogue: Dialogue,
    /// Turn index to images, best first.
    pub attachments: BTreeMap<usize, Vec<Attachment>>,
}

impl MatchedDialogue {
    pub fn image_count(&self) -> usize {
        self.attachments.values().map(Vec::len).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct MatchedRecord {
    dialogue_id: String,
    source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    skill: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
    turns: Vec<Turn>,
    attachments: BTreeMap<usize, Vec<Attachment>>,
}

impl From<MatchedRecord> for MatchedDialogue {
    fn from(r: MatchedRecord) -> Self {
        MatchedDialogue {
            dialogue: Dialogue {
                dialogue_id: r.dialogue_id,
                source: r.source,
                skill: r.skill,
                split: r.split,
                turns: r.turns,
            },
            attachments: r.attachments,
        }
    }
}

impl From<MatchedDialogue> for MatchedRecord {
    fn from(m: MatchedDialogue) -> Self {
        let d = m.dialogue;
        MatchedRecord {
            dialogue_id: d.dialogue_id,
            source: d.source,
            skill: d.skill,
            split: d.split,
            turns: d.turns,
            attachments: m.attachments,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    /// Dialogues with at least one attachment, in input order.
    pub dataset: Vec<MatchedDialogue>,
    /// Ids of input dialogues that ended up with no attachments.
    pub dropped: Vec<String>,
}

/// Attaches up to `max_images` surviving candidates to each turn.
pub fn assemble_dataset(
    dialogues: &[Dialogue],
    candidates: &CandidateSet,
    max_images: usize,
) -> Result<Assembly> {
    let position: HashMap<&str, usize> = dialogues
        .iter()
        .enumerate()
        .map(|(i, d)| (d.dialogue_id.as_str(), i))
        .collect();

    let mut per_turn: Vec<BTreeMap<usize, Vec<&Candidate>>> = vec![BTreeMap::new(); dialogues.len()];
    for c in &candidates.entries {
        let &i = position
            .get(c.dialogue_id.as_str())
            .ok_or_else(|| Error::DanglingDialogue(c.dialogue_id.clone()))?;
        let turns = dialogues[i].turns.len();
        if c.turn_index >= turns {
            return Err(Error::DanglingTurn {
                dialogue_id: c.dialogue_id.clone(),
                turn_index: c.turn_index,
                turns,
            });
        }
        per_turn[i].entry(c.turn_index).or_default().push(c);
    }

    let mut dataset = Vec::new();
    let mut dropped = Vec::new();
    for (dialogue, turns) in dialogues.iter().zip(per_turn) {
        let mut attachments = BTreeMap::new();
        for (turn, mut cands) in turns {
            cands.sort_by(|a, b| rank_order(a, b));
            let mut seen = HashSet::new();
            let list: Vec<Attachment> = cands
                .into_iter()
                .filter(|c| seen.insert(c.image_id.as_str()))
                .take(max_images)
                .map(|c| Attachment {
                    image_id: c.image_id.clone(),
                    score: c.combined,
                })
                .collect();
            attachments.insert(turn, list);
        }
        if attachments.is_empty() {
            dropped.push(dialogue.dialogue_id.clone());
        } else {
            dataset.push(MatchedDialogue {
                dialogue: dialogue.clone(),
                attachments,
            });
        }
    }
    Ok(Assembly { dataset, dropped })
}
