use std::collections::HashSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::text::SynonymLexicon;

/// Byte ranges of maximal alphanumeric runs, the same tokens `tokenize` yields.
fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Replaces `ceil(ratio * eligible)` randomly chosen non-stopword tokens that
/// have synonyms. Punctuation, spacing and token count are preserved.
pub fn perturb_synonyms(
    text: &str,
    synonyms: &SynonymLexicon,
    ratio: f64,
    stopwords: &HashSet<String>,
    seed: u64,
) -> String {
    let ratio = if ratio.is_nan() { 0.0 } else { ratio.clamp(0.0, 1.0) };
    let spans = token_spans(text);
    let eligible: Vec<(usize, usize, String)> = spans
        .into_iter()
        .filter_map(|(s, e)| {
            let word = text[s..e].to_lowercase();
            (!stopwords.contains(&word) && !synonyms.synonyms(&word).is_empty()).then_some((s, e, word))
        })
        .collect();
    let n = (ratio * eligible.len() as f64).ceil() as usize;
    if n == 0 {
        return text.to_string();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, eligible.len(), n).into_vec();
    chosen.sort_unstable();

    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for i in chosen {
        let (s, e, word) = &eligible[i];
        let options = synonyms.synonyms(word);
        out.push_str(&text[cursor..*s]);
        out.push_str(&options[rng.gen_range(0..options.len())]);
        cursor = *e;
    }
    out.push_str(&text[cursor..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;
    use proptest::prelude::*;

    fn lexicon() -> SynonymLexicon {
        SynonymLexicon::from_pairs([
            ("dog", "puppy"),
            ("dog", "hound"),
            ("big", "large"),
            ("the", "a"),
            ("happy", "glad"),
        ])
    }

    fn stopwords() -> HashSet<String> {
        ["the", "a", "is"].into_iter().map(String::from).collect()
    }

    #[test]
    fn zero_ratio_is_identity() {
        let text = "The big dog is happy!";
        assert_eq!(perturb_synonyms(text, &lexicon(), 0.0, &stopwords(), 3), text);
    }

    #[test]
    fn full_ratio_replaces_every_eligible_word() {
        let out = perturb_synonyms("The big dog is happy!", &lexicon(), 1.0, &stopwords(), 3);
        assert!(out.starts_with("The large "));
        assert!(out.ends_with(" is glad!"));
        assert!(out.contains("puppy") || out.contains("hound"));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = perturb_synonyms("dog dog dog big", &lexicon(), 0.5, &stopwords(), 11);
        let b = perturb_synonyms("dog dog dog big", &lexicon(), 0.5, &stopwords(), 11);
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn preserves_token_count_and_stopwords(
            words in proptest::collection::vec(prop::sample::select(vec!["the", "big", "dog", "is", "happy", "cat", "a"]), 0..30),
            ratio in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let text = words.join(" ");
            let out = perturb_synonyms(&text, &lexicon(), ratio, &stopwords(), seed);
            let before = tokenize(&text);
            let after = tokenize(&out);
            prop_assert_eq!(before.len(), after.len());
            for (b, a) in before.iter().zip(&after) {
                if stopwords().contains(b) {
                    prop_assert_eq!(b, a);
                }
            }
        }
    }
}
