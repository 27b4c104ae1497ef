//! Retrieval evaluation without training: instance construction, BM25 and
//! embedding rankers, Recall@K and synonym perturbation.

mod bm25;
mod instances;
mod perturb;
mod rank;
mod recall;

use std::collections::{BTreeSet, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bm25::{bm25_rank, Bm25Index, Bm25Params};
pub use instances::{make_eval_instances, RetrievalInstance, Task};
pub use perturb::perturb_synonyms;
pub use rank::{embed_rank, pooled_history, EmbedWeights, HISTORY_WINDOW};
pub use recall::{candidate_pool, recall_at_k, EvalReport, Protocol, POOL_SIZE, RECALL_CUTOFFS};

use crate::dialog_filter::MatchedDialogue;
use crate::error::{Error, Result};
use crate::io::derive_seed;
use crate::matcher::utterance_id;
use crate::store::EmbeddingStore;
use crate::text::SynonymLexicon;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ranker {
    Bm25,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub tasks: Vec<Task>,
    pub protocols: Vec<Protocol>,
    pub rankers: Vec<Ranker>,
    pub bm25: Bm25Params,
    pub weights: EmbedWeights,
    pub pool_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            tasks: Task::ALL.to_vec(),
            protocols: Protocol::ALL.to_vec(),
            rankers: vec![Ranker::Bm25, Ranker::Embedding],
            bm25: Bm25Params::default(),
            weights: EmbedWeights::default(),
            pool_size: POOL_SIZE,
        }
    }
}

/// Synonym replacement applied to BM25 queries for a robustness run.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub synonyms: SynonymLexicon,
    pub stopwords: HashSet<String>,
    pub ratio: f64,
}

pub struct EvalInputs<'a> {
    pub dataset: &'a [MatchedDialogue],
    pub captions: &'a HashMap<String, String>,
    /// Utterance store keyed `dialogue_id#turn_index`, needed by the embedding ranker.
    pub utterances: Option<&'a EmbeddingStore>,
    pub images: Option<&'a EmbeddingStore>,
    pub perturbation: Option<&'a Perturbation>,
}

/// Text of every candidate document for a task, keyed by candidate id.
fn documents<'a>(
    inputs: &EvalInputs<'a>,
    task: Task,
    instances: &[RetrievalInstance],
) -> Result<Vec<(String, &'a str)>> {
    let golds: BTreeSet<&str> = instances.iter().map(|i| i.gold.as_str()).collect();
    if task == Task::ImageRetrieval {
        return golds
            .into_iter()
            .map(|g| {
                let text = inputs.captions.get(g).ok_or_else(|| Error::MissingCaption(g.to_string()))?;
                Ok((g.to_string(), text.as_str()))
            })
            .collect();
    }
    let mut texts = HashMap::new();
    for d in inputs.dataset {
        for (i, turn) in d.dialogue.turns.iter().enumerate() {
            texts.insert(utterance_id(&d.dialogue.dialogue_id, i), turn.text.as_str());
        }
    }
    Ok(golds.into_iter().map(|g| (g.to_string(), texts[g])).collect())
}

fn bm25_query(inst: &RetrievalInstance, captions: &HashMap<String, String>) -> String {
    let start = inst.history.len().saturating_sub(HISTORY_WINDOW);
    let mut query = inst.history[start..].join(" ");
    if let Some(caption) = inst.image_id.as_ref().and_then(|id| captions.get(id)) {
        query.push(' ');
        query.push_str(caption);
    }
    query
}

fn instance_seed(seed: u64, label: &str, inst: &RetrievalInstance) -> u64 {
    derive_seed(seed, &[label, inst.task.as_str(), &inst.dialogue_id, &inst.t.to_string()])
}

/// Runs every configured task, protocol and ranker and returns one report each,
/// ordered task, protocol, ranker.
pub fn evaluate(inputs: &EvalInputs<'_>, options: &EvalOptions, seed: u64) -> Result<Vec<EvalReport>> {
    if options.pool_size == 0 {
        return Err(Error::InvalidConfig("eval pool_size must be positive".into()));
    }
    let stores = match (inputs.utterances, inputs.images) {
        (Some(u), Some(i)) => Some((u, i)),
        _ if options.rankers.contains(&Ranker::Embedding) => {
            return Err(Error::InvalidConfig("embedding ranker needs utterance and image stores".into()))
        }
        _ => None,
    };

    let mut reports = Vec::new();
    for &task in &options.tasks {
        let instances = make_eval_instances(inputs.dataset, task);
        let docs = documents(inputs, task, &instances)?;
        let universe: Vec<String> = docs.iter().map(|(id, _)| id.clone()).collect();
        let index = Bm25Index::build(docs.iter().map(|(id, t)| (id.as_str(), *t)), options.bm25)?;
        let golds: Vec<&str> = instances.iter().map(|i| i.gold.as_str()).collect();

        for &protocol in &options.protocols {
            let pools: Vec<Vec<String>> = instances
                .par_iter()
                .map(|inst| match protocol {
                    Protocol::Full => Ok(universe.clone()),
                    Protocol::Candidates100 => candidate_pool(
                        &inst.gold,
                        &universe,
                        options.pool_size,
                        instance_seed(seed, "eval-pool", inst),
                    ),
                })
                .collect::<Result<_>>()?;

            let mut runs: Vec<(String, Option<&Perturbation>, Ranker)> = Vec::new();
            for &ranker in &options.rankers {
                match ranker {
                    Ranker::Bm25 => {
                        runs.push(("bm25".into(), None, ranker));
                        if let Some(p) = inputs.perturbation {
                            runs.push((format!("bm25+synonyms@{}", p.ratio), Some(p), ranker));
                        }
                    }
                    Ranker::Embedding => runs.push(("embedding".into(), None, ranker)),
                }
            }

            for (label, perturbation, ranker) in runs {
                let rankings: Vec<Vec<String>> = instances
                    .par_iter()
                    .zip(&pools)
                    .map(|(inst, pool)| match ranker {
                        Ranker::Bm25 => {
                            let mut query = bm25_query(inst, inputs.captions);
                            if let Some(p) = perturbation {
                                let s = instance_seed(seed, "eval-perturb", inst);
                                query = perturb_synonyms(&query, &p.synonyms, p.ratio, &p.stopwords, s);
                            }
                            match bm25_rank(&index, &query, pool, pool.len()) {
                                Err(Error::EmptyQuery) => Ok(pool.clone()),
                                other => other,
                            }
                        }
                        Ranker::Embedding => {
                            let (u, i) = stores.expect("checked above");
                            embed_rank(inst, pool, u, i, options.weights)
                        }
                    })
                    .collect::<Result<_>>()?;
                reports.push(recall_at_k(task, protocol, &label, &rankings, &golds)?);
            }
        }
    }
    Ok(reports)
}
