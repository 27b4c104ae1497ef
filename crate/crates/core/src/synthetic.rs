//! Seeded synthetic corpora for tests, benchmarks and demos.
//!
//! Dialogues and images are drawn around shared topic centers so that
//! utterances land near images of the same topic. Image and text vectors get
//! different fixed offsets, mimicking the gap between modalities in a real
//! dual encoder.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use crate::error::Result;
use crate::io::{write_json, write_jsonl, write_lines};
use crate::matcher::utterance_id;
use crate::source::{Dialogue, ImageCaptionPair, Turn};
use crate::store::write_store;

const STOPWORDS: [&str; 14] = [
    "the", "a", "and", "is", "to", "of", "i", "you", "it", "that", "this", "my", "so", "we",
];
const FILLERS: [&str; 6] = ["ok", "sure", "really", "wow", "nice", "yes"];
const SYLLABLES: [&str; 16] = [
    "ba", "ko", "ri", "me", "lu", "sa", "te", "no", "vi", "da", "pe", "mo", "ga", "fu", "zi", "ho",
];
const SOURCES: [&str; 4] = ["persona", "empathy", "wizard", "blended"];
const SKILLS: [&str; 3] = ["empathy", "knowledge", "persona"];

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub dialogues: usize,
    pub images: usize,
    pub dim: usize,
    pub topics: usize,
    pub words_per_topic: usize,
    pub min_turns: usize,
    pub max_turns: usize,
    /// Fraction of image–caption pairs whose caption describes another topic.
    pub mismatched_pairs: f64,
    /// Images sharing a content hash with an earlier image.
    pub duplicate_images: usize,
    /// Extra dialogues that repeat an earlier one modulo case and spacing.
    pub duplicate_dialogues: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            dialogues: 20,
            images: 200,
            dim: 32,
            topics: 8,
            words_per_topic: 6,
            min_turns: 4,
            max_turns: 8,
            mismatched_pairs: 0.1,
            duplicate_images: 3,
            duplicate_dialogues: 2,
            seed: 1,
        }
    }
}

struct Generator {
    rng: ChaCha8Rng,
    dim: usize,
    unit: Normal<f64>,
}

impl Generator {
    fn gaussian(&mut self, scale: f64) -> Vec<f64> {
        let s = scale / (self.dim as f64).sqrt();
        (0..self.dim).map(|_| self.unit.sample(&mut self.rng) * s).collect()
    }

    /// `sum of parts + isotropic noise`, as f32.
    fn mix(&mut self, parts: &[&[f64]], noise: f64) -> Vec<f32> {
        let n = self.gaussian(noise);
        (0..self.dim)
            .map(|d| (parts.iter().map(|p| p[d]).sum::<f64>() + n[d]) as f32)
            .collect()
    }

    fn word(&mut self, used: &mut HashSet<String>) -> String {
        loop {
            let len = self.rng.gen_range(2..=3);
            let w: String = (0..len).map(|_| *SYLLABLES.choose(&mut self.rng).unwrap()).collect();
            if used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn pick<'a>(&mut self, words: &'a [String], n: usize) -> Vec<&'a str> {
        (0..n).map(|_| words.choose(&mut self.rng).unwrap().as_str()).collect()
    }
}

/// Writes a complete input set plus `config.json` into `dir` and returns the
/// config path. Identical specs produce identical bytes.
pub fn write_fixture(dir: &Path, spec: &FixtureSpec) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    let mut g = Generator {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        dim: spec.dim,
        unit: Normal::new(0.0, 1.0).expect("valid normal"),
    };
    let topics = spec.topics.max(1);

    let mut used: HashSet<String> = STOPWORDS.iter().chain(&FILLERS).map(|s| s.to_string()).collect();
    used.extend(["photo", "picture"].map(String::from));
    let vocab: Vec<Vec<String>> = (0..topics)
        .map(|_| (0..spec.words_per_topic.max(1)).map(|_| g.word(&mut used)).collect())
        .collect();
    let centers: Vec<Vec<f64>> = (0..topics).map(|_| g.gaussian(1.0)).collect();
    let image_offset = g.gaussian(0.6);
    let text_offset = g.gaussian(0.6);

    let mut pairs = Vec::with_capacity(spec.images);
    let mut image_ids = Vec::with_capacity(spec.images);
    let mut image_rows = Vec::with_capacity(spec.images);
    let mut caption_rows = Vec::with_capacity(spec.images);
    for i in 0..spec.images {
        let topic = g.rng.gen_range(0..topics);
        let caption_topic = match g.rng.gen_bool(spec.mismatched_pairs.clamp(0.0, 1.0)) && topics > 1 {
            true => (topic + g.rng.gen_range(1..topics)) % topics,
            false => topic,
        };
        let id = format!("img{i:06}");
        let content_hash = match i > 0 && i <= spec.duplicate_images {
            true => "h000000".to_string(),
            false => format!("h{i:06}"),
        };
        let words = g.pick(&vocab[caption_topic], 3).join(" ");
        pairs.push(ImageCaptionPair {
            image_id: id.clone(),
            caption: format!("a photo of {words}"),
            content_hash: Some(content_hash),
        });
        image_rows.push(g.mix(&[&centers[topic], &image_offset], 0.35));
        caption_rows.push(g.mix(&[&centers[caption_topic], &text_offset], 0.35));
        image_ids.push(id);
    }

    let mut dialogues = Vec::with_capacity(spec.dialogues + spec.duplicate_dialogues);
    for i in 0..spec.dialogues {
        let topic = g.rng.gen_range(0..topics);
        let n_turns = g.rng.gen_range(spec.min_turns.max(1)..=spec.max_turns.max(spec.min_turns.max(1)));
        let turns = (0..n_turns)
            .map(|t| {
                let text = match g.rng.gen_bool(0.75) {
                    true => {
                        let mut words = g.pick(&vocab[topic], 3);
                        let mut stop: Vec<&str> = (0..2).map(|_| *STOPWORDS.choose(&mut g.rng).unwrap()).collect();
                        words.append(&mut stop);
                        words.shuffle(&mut g.rng);
                        words.join(" ")
                    }
                    false => format!("{} {}", FILLERS.choose(&mut g.rng).unwrap(), STOPWORDS.choose(&mut g.rng).unwrap()),
                };
                Turn { speaker: (t % 2) as u32, text }
            })
            .collect();
        dialogues.push(Dialogue {
            dialogue_id: format!("dlg{i:05}"),
            source: SOURCES[i % SOURCES.len()].into(),
            skill: (i % 2 == 0).then(|| SKILLS[i % SKILLS.len()].to_string()),
            split: None,
            turns,
        });
    }
    for j in 0..spec.duplicate_dialogues.min(spec.dialogues) {
        let mut copy = dialogues[j].clone();
        copy.dialogue_id = format!("dup{j:05}");
        for turn in &mut copy.turns {
            turn.text = format!("  {}  ", turn.text.to_uppercase().replace(' ', "   "));
        }
        dialogues.push(copy);
    }

    let topic_of_word: std::collections::HashMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .flat_map(|(t, ws)| ws.iter().map(move |w| (w.as_str(), t)))
        .collect();
    let mut utt_ids = Vec::new();
    let mut utt_rows = Vec::new();
    for d in &dialogues {
        for (t, turn) in d.turns.iter().enumerate() {
            let lower = turn.text.to_lowercase();
            let topic = lower.split_whitespace().find_map(|w| topic_of_word.get(w).copied());
            let row = match topic {
                Some(tp) => g.mix(&[&centers[tp], &text_offset], 0.6),
                None => g.mix(&[&text_offset], 0.9),
            };
            utt_ids.push(utterance_id(&d.dialogue_id, t));
            utt_rows.push(row);
        }
    }

    write_jsonl(&dir.join("dialogues.jsonl"), &dialogues)?;
    write_jsonl(&dir.join("pairs.jsonl"), &pairs)?;
    write_store(dir.join("utterances"), spec.dim, &utt_ids, &utt_rows)?;
    write_store(dir.join("images"), spec.dim, &image_ids, &image_rows)?;
    write_store(dir.join("captions"), spec.dim, &image_ids, &caption_rows)?;

    let categories = ["animal", "place", "food", "object"];
    let hypernyms: Vec<String> = vocab
        .iter()
        .enumerate()
        .flat_map(|(t, ws)| ws.iter().map(move |w| format!("{w}\t{}", categories[t % categories.len()])))
        .collect();
    write_lines(&dir.join("hypernyms.tsv"), &hypernyms)?;
    let synonyms: Vec<String> = vocab.iter().flatten().map(|w| format!("{w}\t{w}x")).collect();
    write_lines(&dir.join("synonyms.tsv"), &synonyms)?;
    write_lines(&dir.join("stopwords.txt"), &STOPWORDS)?;

    let config = json!({
        "inputs": {
            "dialogues": "dialogues.jsonl",
            "pairs": "pairs.jsonl",
            "utterances": "utterances",
            "images": "images",
            "captions": "captions",
            "hypernyms": "hypernyms.tsv",
            "synonyms": "synonyms.tsv",
            "stopwords": "stopwords.txt"
        },
        "out": "out",
        "seed": spec.seed,
        "alpha": 0.5,
        "k": 100,
        "tau2_percentile": 75.0,
        "max_images_per_utterance": 10,
        "image_caption_threshold": 0.185,
        "split_ratio": [5, 1, 1],
        "hypernym_min_count": 10,
        "eval": { "enabled": true, "split": "test", "synonym_ratio": 0.3 }
    });
    let path = dir.join("config.json");
    write_json(&path, &config)?;
    Ok(path)
}
