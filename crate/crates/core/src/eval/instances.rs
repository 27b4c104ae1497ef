use serde::{Deserialize, Serialize};

use crate::dialog_filter::MatchedDialogue;
use crate::matcher::utterance_id;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    CurrentTurn,
    NextTurn,
    ImageRetrieval,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::CurrentTurn, Task::NextTurn, Task::ImageRetrieval];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::CurrentTurn => "current_turn",
            Task::NextTurn => "next_turn",
            Task::ImageRetrieval => "image_retrieval",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalInstance {
    pub task: Task,
    pub dialogue_id: String,
    /// Zero-based index of the image-sharing turn.
    pub t: usize,
    /// Utterance ids of the history, oldest first.
    pub history_ids: Vec<String>,
    pub history: Vec<String>,
    /// The shared image, absent for image retrieval.
    pub image_id: Option<String>,
    /// Utterance id for text tasks, image id for image retrieval.
    pub gold: String,
}

/// One instance per image-bearing turn, using that turn's best image.
///
/// Turn 0 yields no current-turn or image-retrieval instance (empty
/// history) and the last turn yields no next-turn instance.
pub fn make_eval_instances(dataset: &[MatchedDialogue], task: Task) -> Vec<RetrievalInstance> {
    let mut out = Vec::new();
    for d in dataset {
        let id = &d.dialogue.dialogue_id;
        let turns = &d.dialogue.turns;
        for (&t, images) in &d.attachments {
            let Some(top) = images.first() else { continue };
            let (history_end, gold, image_id) = match task {
                Task::CurrentTurn if t >= 1 => (t, utterance_id(id, t), Some(top.image_id.clone())),
                Task::NextTurn if t + 1 < turns.len() => {
                    (t + 1, utterance_id(id, t + 1), Some(top.image_id.clone()))
                }
                Task::ImageRetrieval if t >= 1 => (t, top.image_id.clone(), None),
                _ => continue,
            };
            out.push(RetrievalInstance {
                task,
                dialogue_id: id.clone(),
                t,
                history_ids: (0..history_end).map(|j| utterance_id(id, j)).collect(),
                history: turns[..history_end].iter().map(|u| u.text.clone()).collect(),
                image_id,
                gold,
            });
        }
    }
    out
}
