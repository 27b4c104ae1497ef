//! Scale and diversity statistics for matched datasets.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dialog_filter::MatchedDialogue;
use crate::error::{Error, Result};
use crate::text::{tokenize, HypernymLexicon};

/// Default minimum occurrence count for a hypernym to be reported.
pub const DEFAULT_HYPERNYM_MIN_COUNT: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub split: String,
    pub unique_dialogues: usize,
    pub avg_turns: f64,
    pub unique_images: usize,
    pub avg_images_per_dialogue: f64,
    /// Averaged over utterances carrying at least one image.
    pub avg_images_per_utterance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub splits: Vec<StatsRow>,
    pub total: StatsRow,
    /// Dialogue counts per conversational-skill tag, where tagged.
    pub skills: BTreeMap<String, usize>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn row<'a>(split: &str, dialogues: impl Iterator<Item = &'a MatchedDialogue>) -> StatsRow {
    let mut ids = HashSet::new();
    let mut images = HashSet::new();
    let (mut n, mut turns, mut attachments, mut utterances) = (0usize, 0usize, 0usize, 0usize);
    for d in dialogues {
        n += 1;
        ids.insert(d.dialogue.dialogue_id.as_str());
        turns += d.dialogue.turns.len();
        for list in d.attachments.values() {
            if !list.is_empty() {
                utterances += 1;
            }
            attachments += list.len();
            images.extend(list.iter().map(|a| a.image_id.as_str()));
        }
    }
    StatsRow {
        split: split.to_string(),
        unique_dialogues: ids.len(),
        avg_turns: ratio(turns, n),
        unique_images: images.len(),
        avg_images_per_dialogue: ratio(attachments, n),
        avg_images_per_utterance: ratio(attachments, utterances),
    }
}

/// One row per labelled split plus a total row over all of them.
pub fn dataset_stats(splits: &[(&str, &[MatchedDialogue])]) -> StatsReport {
    let mut skills = BTreeMap::new();
    for (_, ds) in splits {
        for d in ds.iter() {
            if let Some(skill) = &d.dialogue.skill {
                *skills.entry(skill.clone()).or_insert(0) += 1;
            }
        }
    }
    StatsReport {
        splits: splits.iter().map(|(name, ds)| row(name, ds.iter())).collect(),
        total: row("total", splits.iter().flat_map(|(_, ds)| ds.iter())),
        skills,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub unique_words_dialogue: usize,
    pub unique_words_caption: usize,
    /// Size of the union of dialogue and caption vocabularies.
    pub unique_words_total: usize,
    pub unique_hypernyms_dialogue: usize,
    pub unique_hypernyms_caption: usize,
    pub unique_hypernyms_total: usize,
    pub min_count: u64,
    pub lexicon_mode: String,
}

#[derive(Default)]
struct Tally {
    words: HashSet<String>,
    hypernyms: HashMap<String, u64>,
}

impl Tally {
    fn add(&mut self, text: &str, lexicon: &HypernymLexicon) {
        for token in tokenize(text) {
            if let Some(h) = lexicon.hypernym(&token) {
                *self.hypernyms.entry(h.to_string()).or_default() += 1;
            }
            self.words.insert(token);
        }
    }
}

/// Word and hypernym coverage of dialogue turns and of the captions of
/// attached images (each distinct image counted once).
///
/// A hypernym survives when its combined dialogue + caption occurrence count
/// reaches `min_count`.
pub fn diversity_stats(
    dataset: &[MatchedDialogue],
    captions: &HashMap<String, String>,
    lexicon: &HypernymLexicon,
    min_count: u64,
) -> Result<DiversityReport> {
    let mut dialogue = Tally::default();
    let mut caption = Tally::default();
    let mut seen_images = HashSet::new();
    for d in dataset {
        for turn in &d.dialogue.turns {
            dialogue.add(&turn.text, lexicon);
        }
        for a in d.attachments.values().flatten() {
            if seen_images.insert(a.image_id.as_str()) {
                let text = captions
                    .get(&a.image_id)
                    .ok_or_else(|| Error::MissingCaption(a.image_id.clone()))?;
                caption.add(text, lexicon);
            }
        }
    }

    let mut totals: HashMap<&str, u64> = HashMap::new();
    for (h, n) in dialogue.hypernyms.iter().chain(&caption.hypernyms) {
        *totals.entry(h.as_str()).or_default() += n;
    }
    let survives = |h: &str| totals.get(h).copied().unwrap_or(0) >= min_count;
    let surviving = |t: &Tally| t.hypernyms.keys().filter(|h| survives(h)).count();

    Ok(DiversityReport {
        unique_words_dialogue: dialogue.words.len(),
        unique_words_caption: caption.words.len(),
        unique_words_total: dialogue.words.union(&caption.words).count(),
        unique_hypernyms_dialogue: surviving(&dialogue),
        unique_hypernyms_caption: surviving(&caption),
        unique_hypernyms_total: totals.values().filter(|&&n| n >= min_count).count(),
        min_count,
        lexicon_mode: "flat word-to-hypernym lexicon, one hypernym per word".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialog_filter::Attachment;
    use crate::source::{Dialogue, Turn};

    fn matched(id: &str, turns: &[&str], attach: &[(usize, &[&str])]) -> MatchedDialogue {
        MatchedDialogue {
            dialogue: Dialogue {
                dialogue_id: id.into(),
                source: "s".into(),
                skill: None,
                split: None,
                turns: turns
                    .iter()
                    .map(|t| Turn {
                        speaker: 0,
                        text: t.to_string(),
                    })
                    .collect(),
            },
            attachments: attach
                .iter()
                .map(|(t, imgs)| {
                    (
                        *t,
                        imgs.iter()
                            .map(|i| Attachment {
                                image_id: i.to_string(),
                                score: 1.0,
                            })
                            .collect(),
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn hand_counted_table_row() {
        let ds = vec![
            matched("a", &["1", "2", "3", "4"], &[(0, &["x", "y", "z"]), (2, &["x"])]),
            matched("b", &["1", "2", "3", "4"], &[]),
        ];
        let r = dataset_stats(&[("train", &ds)]);
        assert_eq!(r.total.avg_turns, 4.0);
        assert_eq!(r.total.avg_images_per_utterance, 2.0);
        assert_eq!(r.total.avg_images_per_dialogue, 2.0);
        assert_eq!(r.total.unique_images, 3);
        assert_eq!(r.splits[0], StatsRow { split: "train".into(), ..r.total.clone() });
    }

    #[test]
    fn empty_dataset_reports_zeros() {
        let r = dataset_stats(&[("test", &[])]);
        assert_eq!(r.total.unique_dialogues, 0);
        assert_eq!(r.total.avg_turns, 0.0);
        assert_eq!(r.total.avg_images_per_utterance, 0.0);
    }

    #[test]
    fn identical_images_count_once() {
        let ds = vec![
            matched("a", &["x"], &[(0, &["same"])]),
            matched("b", &["y"], &[(0, &["same"])]),
        ];
        assert_eq!(dataset_stats(&[("train", &ds)]).total.unique_images, 1);
    }

    #[test]
    fn hypernym_cutoff_boundary() {
        let lex = HypernymLexicon::from_pairs([("dog", "animal"), ("car", "vehicle")]);
        let nine = ["dog"; 9].join(" ");
        let ten = ["car"; 10].join(" ");
        let ds = vec![matched("a", &[&nine, &ten], &[])];
        let r = diversity_stats(&ds, &HashMap::new(), &lex, 10).unwrap();
        assert_eq!(r.unique_hypernyms_dialogue, 1);
        assert_eq!(r.unique_hypernyms_total, 1);
        let r = diversity_stats(&ds, &HashMap::new(), &lex, 1).unwrap();
        assert_eq!(r.unique_hypernyms_total, 2);
    }

    #[test]
    fn words_union_across_sources() {
        let lex = HypernymLexicon::default();
        let ds = vec![matched("a", &["a dog runs"], &[(0, &["img"])])];
        let captions = HashMap::from([("img".to_string(), "a Dog sleeps".to_string())]);
        let r = diversity_stats(&ds, &captions, &lex, 10).unwrap();
        assert_eq!(r.unique_words_dialogue, 3);
        assert_eq!(r.unique_words_caption, 3);
        assert_eq!(r.unique_words_total, 4);
    }

    #[test]
    fn missing_caption_is_an_error() {
        let ds = vec![matched("a", &["x"], &[(0, &["img"])])];
        assert!(diversity_stats(&ds, &HashMap::new(), &HypernymLexicon::default(), 10).is_err());
    }
}
