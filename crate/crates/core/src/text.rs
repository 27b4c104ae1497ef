//! Tokenization and word-list loaders shared by analytics and evaluation.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.chars().flat_map(char::to_lowercase).collect())
        .collect()
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses `word<TAB>value` lines. Blank lines and `#` comments are skipped.
fn parse_tsv<'a>(
    text: &'a str,
    path: &Path,
    what: &'static str,
) -> Result<Vec<(&'a str, &'a str)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('\t').ok_or(Error::Lexicon {
            what,
            path: path.to_path_buf(),
            line: i + 1,
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::Lexicon {
                what,
                path: path.to_path_buf(),
                line: i + 1,
            });
        }
        out.push((k, v));
    }
    Ok(out)
}

/// One hypernym per lowercase word.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HypernymLexicon {
    map: HashMap<String, String>,
}

impl HypernymLexicon {
    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut map = HashMap::new();
        for (k, v) in pairs {
            map.entry(k.into().to_lowercase()).or_insert_with(|| v.into());
        }
        HypernymLexicon { map }
    }

    /// Loads a `word<TAB>hypernym` file. The first entry for a word wins.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        Ok(Self::from_pairs(parse_tsv(&text, path, "hypernym lexicon")?))
    }

    pub fn hypernym(&self, word: &str) -> Option<&str> {
        self.map.get(word).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Word to single-token synonyms, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynonymLexicon {
    map: HashMap<String, Vec<String>>,
}

impl SynonymLexicon {
    /// Multi-word synonyms and self-synonyms are skipped so a replacement
    /// never changes the token count.
    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut map: HashMap<String, Vec<String>> = HashMap::new();
        for (k, v) in pairs {
            let (k, v) = (k.into().to_lowercase(), v.into());
            if tokenize(&v) != [v.to_lowercase()] || v.to_lowercase() == k {
                continue;
            }
            let list = map.entry(k).or_default();
            if !list.contains(&v) {
                list.push(v);
            }
        }
        SynonymLexicon { map }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        Ok(Self::from_pairs(parse_tsv(&text, path, "synonym lexicon")?))
    }

    pub fn synonyms(&self, word: &str) -> &[String] {
        self.map.get(word).map(Vec::as_slice).unwrap_or(&[])
    }
}

pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    Ok(read_text(path)?
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect())
}
