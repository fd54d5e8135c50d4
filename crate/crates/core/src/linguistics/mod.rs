//! Text-derived linguistic measures for error analysis.
//!
//! Four groups: lexical richness (11 measures), syntactic complexity (7, with
//! the part-of-speech distribution counted as one), disfluency (2) and semantic
//! coherence (5). Lexical-diversity measures are computed on the stream with
//! hesitation fillers removed; everything else, including the raw
//! unique/total ratio and the word count, uses the stream as transcribed.

mod features;
mod tagger;
mod tokenize;

use std::collections::{HashMap, HashSet};
use std::path::Path;

pub use features::*;
pub use tagger::{read_tagged, write_tagged, LexiconTagger, PosTag, PosTagger, TaggedToken};
pub use tokenize::{is_filler, tokenize, TokenStream, FILLERS};

#[derive(Debug, thiserror::Error)]
pub enum LinguisticsError {
    #[error("text has no word tokens")]
    EmptyText,
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("unknown part-of-speech tag {0:?}")]
    UnknownTag(String),
    #[error("tagged token file, line {line}: {message}")]
    TaggedFormat { line: usize, message: String },
    #[error("resource {path}: {message}")]
    Resource { path: String, message: String },
}

const BUNDLED_FREQUENCIES: &str = include_str!("../../data/word_frequency.tsv");
const BUNDLED_SCENE_LEXICON: &str = include_str!("../../data/scene_lexicon.txt");

/// Reference word frequencies (`word<TAB>log10 frequency per million`).
#[derive(Debug, Clone)]
pub struct FrequencyTable {
    entries: HashMap<String, f64>,
    minimum: f64,
}

impl FrequencyTable {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_FREQUENCIES).expect("bundled frequency table is well formed")
    }

    pub fn load(path: &Path) -> Result<Self, LinguisticsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LinguisticsError::Resource { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text).map_err(|message| LinguisticsError::Resource { path: path.display().to_string(), message })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut entries = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, value) =
                line.split_once('\t').ok_or_else(|| format!("line {}: expected word<TAB>value", i + 1))?;
            let value: f64 = value.trim().parse().map_err(|_| format!("line {}: bad number {value:?}", i + 1))?;
            if !value.is_finite() {
                return Err(format!("line {}: non-finite value", i + 1));
            }
            entries.insert(word.trim().to_lowercase(), value);
        }
        let minimum = entries
            .values()
            .copied()
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
            .ok_or_else(|| "empty frequency table".to_string())?;
        Ok(Self { entries, minimum })
    }

    /// Log frequency of `word`; words missing from the table get the table minimum.
    pub fn lookup(&self, word: &str) -> f64 {
        self.entries.get(word).copied().unwrap_or(self.minimum)
    }

    pub fn minimum(&self) -> f64 {
        self.minimum
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Words naming things in the described picture.
#[derive(Debug, Clone, Default)]
pub struct SceneLexicon {
    words: HashSet<String>,
}

impl SceneLexicon {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_SCENE_LEXICON)
    }

    pub fn load(path: &Path) -> Result<Self, LinguisticsError> {
        std::fs::read_to_string(path)
            .map(|t| Self::parse(&t))
            .map_err(|e| LinguisticsError::Resource { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        Self { words }
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self { words: words.into_iter().map(|w| w.as_ref().to_lowercase()).collect() }
    }

    /// Exact match, or match after stripping a plural `s` / `es`.
    pub fn contains(&self, token: &str) -> bool {
        if self.words.contains(token) {
            return true;
        }
        [token.strip_suffix("es"), token.strip_suffix('s')]
            .into_iter()
            .flatten()
            .any(|stem| !stem.is_empty() && self.words.contains(stem))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Reference data the feature extractors need.
#[derive(Debug, Clone)]
pub struct Resources {
    pub frequencies: FrequencyTable,
    pub scene: SceneLexicon,
}

impl Resources {
    pub fn bundled() -> Self {
        Self { frequencies: FrequencyTable::bundled(), scene: SceneLexicon::bundled() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_resources_load() {
        let r = Resources::bundled();
        assert!(r.frequencies.len() > 5000);
        assert!(r.frequencies.lookup("the") > r.frequencies.lookup("cookie"));
        assert_eq!(r.frequencies.lookup("zzxqv"), r.frequencies.minimum());
        assert!(r.scene.contains("cookies"));
        assert!(r.scene.contains("dishes"));
        assert!(!r.scene.contains("takes"));
    }

    #[test]
    fn frequency_table_rejects_garbage() {
        assert!(FrequencyTable::parse("the 4.7\n").is_err());
        assert!(FrequencyTable::parse("# only a comment\n").is_err());
        assert!(FrequencyTable::parse("the\tlots\n").is_err());
    }
}
