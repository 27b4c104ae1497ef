use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::instances::Task;
use crate::error::{Error, Result};

/// Cutoffs reported for every run.
pub const RECALL_CUTOFFS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    /// Gold plus seeded random distractors, 100 items in total.
    #[serde(rename = "candidates-100")]
    Candidates100,
    /// Every candidate of the evaluated split.
    #[serde(rename = "full")]
    Full,
}

impl Protocol {
    pub const ALL: [Protocol; 2] = [Protocol::Candidates100, Protocol::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Candidates100 => "candidates-100",
            Protocol::Full => "full",
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const POOL_SIZE: usize = 100;

/// The gold plus `size - 1` distinct distractors drawn from the sorted
/// `universe`, returned sorted. The gold must be in the universe.
pub fn candidate_pool(gold: &str, universe: &[String], size: usize, seed: u64) -> Result<Vec<String>> {
    let gold_pos = universe
        .binary_search_by(|x| x.as_str().cmp(gold))
        .map_err(|_| Error::GoldMissing {
            instance: 0,
            gold: gold.to_string(),
        })?;
    let others = universe.len() - 1;
    let draw = size.saturating_sub(1).min(others);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, others, draw)
        .into_iter()
        .map(|i| if i >= gold_pos { i + 1 } else { i })
        .collect();
    picked.push(gold_pos);
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| universe[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub protocol: Protocol,
    pub ranker: String,
    #[serde(rename = "R@1")]
    pub r1: f64,
    #[serde(rename = "R@5")]
    pub r5: f64,
    #[serde(rename = "R@10")]
    pub r10: f64,
    pub n: usize,
}

/// Percentage of instances whose gold appears within each cutoff.
///
/// Each ranking must contain its gold; a ranking without it means the
/// pool was built wrongly and is reported as an error.
pub fn recall_at_k<S: AsRef<str>, G: AsRef<str>>(
    task: Task,
    protocol: Protocol,
    ranker: &str,
    rankings: &[Vec<S>],
    golds: &[G],
) -> Result<EvalReport> {
    if rankings.len() != golds.len() {
        return Err(Error::RankingGoldMismatch {
            rankings: rankings.len(),
            golds: golds.len(),
        });
    }
    let mut hits = [0usize; RECALL_CUTOFFS.len()];
    for (i, (ranking, gold)) in rankings.iter().zip(golds).enumerate() {
        let gold = gold.as_ref();
        let rank = ranking
            .iter()
            .position(|x| x.as_ref() == gold)
            .ok_or_else(|| Error::GoldMissing {
                instance: i,
                gold: gold.to_string(),
            })?;
        for (h, &k) in hits.iter_mut().zip(&RECALL_CUTOFFS) {
            if rank < k {
                *h += 1;
            }
        }
    }
    let n = golds.len();
    let pct = |h: usize| if n == 0 { 0.0 } else { h as f64 * 100.0 / n as f64 };
    Ok(EvalReport {
        task,
        protocol,
        ranker: ranker.to_string(),
        r1: pct(hits[0]),
        r5: pct(hits[1]),
        r10: pct(hits[2]),
        n,
    })
}
