//! Part-of-speech tagging.
//!
//! The default [`LexiconTagger`] uses exact closed-class word lists for
//! determiners, articles, pronouns, relative pronouns and negative adverbs, and
//! suffix/lexicon heuristics for the open classes. An external tagger's output
//! can be fed in through [`read_tagged`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tokenize::{is_filler, TokenStream};
use super::LinguisticsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[allow(non_camel_case_types)]
pub enum PosTag {
    NOUN,
    VERB,
    ADJ,
    ADV,
    PRON,
    DET,
    ART_DEF,
    ART_INDEF,
    REL_PRON,
    NEG_ADV,
    OTHER,
}

impl PosTag {
    pub const ALL: [PosTag; 11] = [
        PosTag::NOUN,
        PosTag::VERB,
        PosTag::ADJ,
        PosTag::ADV,
        PosTag::PRON,
        PosTag::DET,
        PosTag::ART_DEF,
        PosTag::ART_INDEF,
        PosTag::REL_PRON,
        PosTag::NEG_ADV,
        PosTag::OTHER,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::NOUN => "NOUN",
            PosTag::VERB => "VERB",
            PosTag::ADJ => "ADJ",
            PosTag::ADV => "ADV",
            PosTag::PRON => "PRON",
            PosTag::DET => "DET",
            PosTag::ART_DEF => "ART_DEF",
            PosTag::ART_INDEF => "ART_INDEF",
            PosTag::REL_PRON => "REL_PRON",
            PosTag::NEG_ADV => "NEG_ADV",
            PosTag::OTHER => "OTHER",
        }
    }

    /// Nouns, verbs, adjectives and adverbs (negative adverbs included).
    pub fn is_content(self) -> bool {
        matches!(self, PosTag::NOUN | PosTag::VERB | PosTag::ADJ | PosTag::ADV | PosTag::NEG_ADV)
    }

    /// Articles count as determiners.
    pub fn is_determiner(self) -> bool {
        matches!(self, PosTag::DET | PosTag::ART_DEF | PosTag::ART_INDEF)
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PosTag {
    type Err = LinguisticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PosTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim())
            .ok_or_else(|| LinguisticsError::UnknownTag(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub token: String,
    pub tag: PosTag,
}

impl TaggedToken {
    pub fn new(token: impl Into<String>, tag: PosTag) -> Self {
        Self { token: token.into(), tag }
    }
}

pub trait PosTagger: Send + Sync {
    fn tag(&self, stream: &TokenStream) -> Vec<TaggedToken>;
}

const DEFINITE_ARTICLES: &[&str] = &["the"];
const INDEFINITE_ARTICLES: &[&str] = &["a", "an"];
const RELATIVE_PRONOUNS: &[&str] = &["who", "whom", "whose", "which", "whoever", "whichever"];
const DETERMINERS: &[&str] = &[
    "this", "these", "those", "some", "any", "each", "every", "no", "another", "either", "neither", "all", "both",
    "my", "your", "his", "its", "our", "their", "such", "what", "whatever", "much", "many", "few", "several", "enough",
];
const PRONOUNS: &[&str] = &[
    "i",
    "me",
    "you",
    "he",
    "him",
    "she",
    "her",
    "it",
    "we",
    "us",
    "they",
    "them",
    "myself",
    "yourself",
    "himself",
    "herself",
    "itself",
    "ourselves",
    "yourselves",
    "themselves",
    "mine",
    "yours",
    "hers",
    "ours",
    "theirs",
    "someone",
    "somebody",
    "something",
    "anyone",
    "anybody",
    "anything",
    "everyone",
    "everybody",
    "everything",
    "nobody",
    "nothing",
    "none",
    "one",
    "i'm",
    "i've",
    "i'd",
    "i'll",
    "you're",
    "you've",
    "you'll",
    "he's",
    "she's",
    "it's",
    "we're",
    "we've",
    "they're",
    "they've",
    "that's",
    "there's",
    "what's",
    "who's",
];
const NEGATIVE_ADVERBS: &[&str] =
    &["not", "never", "nowhere", "hardly", "barely", "scarcely", "seldom", "rarely", "nor"];
const OTHER_WORDS: &[&str] = &[
    "and", "or", "but", "so", "if", "because", "while", "when", "where", "as", "than", "then", "of", "in", "on", "at",
    "to", "from", "with", "by", "for", "into", "onto", "off", "about", "over", "under", "behind", "beside", "near",
    "through", "across", "after", "before", "around", "against", "between", "like", "yes", "yeah", "okay", "ok", "oh",
    "well", "there", "how", "why", "whether", "though", "although", "until", "unless", "since", "upon", "within",
    "without", "of",
];
const VERBS: &[&str] = &[
    "be",
    "is",
    "are",
    "was",
    "were",
    "been",
    "am",
    "being",
    "have",
    "has",
    "had",
    "do",
    "does",
    "did",
    "done",
    "go",
    "goes",
    "went",
    "gone",
    "get",
    "gets",
    "got",
    "gotten",
    "see",
    "sees",
    "saw",
    "seen",
    "take",
    "takes",
    "took",
    "taken",
    "fall",
    "falls",
    "fell",
    "fallen",
    "run",
    "runs",
    "ran",
    "make",
    "makes",
    "made",
    "say",
    "says",
    "said",
    "know",
    "knows",
    "knew",
    "think",
    "thinks",
    "thought",
    "come",
    "comes",
    "came",
    "give",
    "gives",
    "gave",
    "given",
    "reach",
    "reaches",
    "reached",
    "steal",
    "steals",
    "stole",
    "stolen",
    "wash",
    "washes",
    "dry",
    "dries",
    "spill",
    "spills",
    "overflow",
    "overflows",
    "stand",
    "stands",
    "stood",
    "hold",
    "holds",
    "held",
    "tip",
    "tips",
    "want",
    "wants",
    "look",
    "looks",
    "put",
    "puts",
    "can",
    "could",
    "will",
    "would",
    "shall",
    "should",
    "may",
    "might",
    "must",
    "let",
    "lets",
    "seem",
    "seems",
    "keep",
    "keeps",
    "kept",
    "tell",
    "tells",
    "told",
    "happen",
    "happens",
    "sit",
    "sits",
    "sat",
    "drip",
    "drips",
    "climb",
    "climbs",
    "hand",
    "hands",
    "grab",
    "grabs",
    "don't",
    "doesn't",
    "didn't",
    "isn't",
    "aren't",
    "wasn't",
    "weren't",
    "can't",
    "cannot",
    "couldn't",
    "won't",
    "wouldn't",
    "shouldn't",
    "haven't",
    "hasn't",
    "hadn't",
    "ain't",
];
const ADJECTIVES: &[&str] = &[
    "big",
    "little",
    "small",
    "large",
    "good",
    "bad",
    "old",
    "young",
    "new",
    "high",
    "low",
    "tall",
    "short",
    "long",
    "full",
    "empty",
    "wet",
    "dry",
    "open",
    "closed",
    "clean",
    "dirty",
    "nice",
    "pretty",
    "happy",
    "sad",
    "other",
    "same",
    "different",
    "whole",
    "next",
    "last",
    "first",
    "second",
    "right",
    "left",
    "sure",
    "fine",
    "real",
    "cold",
    "hot",
    "warm",
];
const ADVERBS: &[&str] = &[
    "here",
    "now",
    "up",
    "down",
    "out",
    "away",
    "back",
    "also",
    "just",
    "very",
    "too",
    "still",
    "again",
    "already",
    "always",
    "often",
    "sometimes",
    "maybe",
    "perhaps",
    "really",
    "quite",
    "almost",
    "even",
    "only",
    "soon",
    "together",
    "yet",
    "once",
    "anyway",
    "probably",
];
const ADJECTIVE_SUFFIXES: &[&str] = &["ous", "ful", "ive", "able", "ible", "less", "ish", "ical"];

fn closed_class(word: &str) -> Option<PosTag> {
    if DEFINITE_ARTICLES.contains(&word) {
        Some(PosTag::ART_DEF)
    } else if INDEFINITE_ARTICLES.contains(&word) {
        Some(PosTag::ART_INDEF)
    } else if RELATIVE_PRONOUNS.contains(&word) {
        Some(PosTag::REL_PRON)
    } else if NEGATIVE_ADVERBS.contains(&word) {
        Some(PosTag::NEG_ADV)
    } else if DETERMINERS.contains(&word) {
        Some(PosTag::DET)
    } else if PRONOUNS.contains(&word) {
        Some(PosTag::PRON)
    } else {
        None
    }
}

fn open_class(word: &str) -> PosTag {
    if is_filler(word) || OTHER_WORDS.contains(&word) {
        PosTag::OTHER
    } else if VERBS.contains(&word) {
        PosTag::VERB
    } else if ADJECTIVES.contains(&word) {
        PosTag::ADJ
    } else if ADVERBS.contains(&word) || (word.len() > 4 && word.ends_with("ly")) {
        PosTag::ADV
    } else if word.len() > 4 && (word.ends_with("ing") || word.ends_with("ed")) {
        PosTag::VERB
    } else if ADJECTIVE_SUFFIXES.iter().any(|s| word.len() > s.len() + 2 && word.ends_with(s)) {
        PosTag::ADJ
    } else {
        PosTag::NOUN
    }
}

/// Default rule-based tagger.
///
/// Every token is tagged from its own form except `that`, which is a relative
/// pronoun after a noun or pronoun and a determiner elsewhere. Content-word
/// tags therefore never depend on context.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexiconTagger;

impl PosTagger for LexiconTagger {
    fn tag(&self, stream: &TokenStream) -> Vec<TaggedToken> {
        let mut out: Vec<TaggedToken> = Vec::with_capacity(stream.len());
        for token in &stream.tokens {
            let tag = if token == "that" {
                match out.last().map(|t| t.tag) {
                    Some(PosTag::NOUN) | Some(PosTag::PRON) => PosTag::REL_PRON,
                    _ => PosTag::DET,
                }
            } else {
                closed_class(token).unwrap_or_else(|| open_class(token))
            };
            out.push(TaggedToken::new(token.clone(), tag));
        }
        out
    }
}

/// Reads the tagger exchange format: `token<TAB>tag` per line, a blank line
/// between sentences. Returns the tagged tokens and the sentence end indices.
pub fn read_tagged(text: &str) -> Result<(Vec<TaggedToken>, Vec<usize>), LinguisticsError> {
    let mut tokens = Vec::new();
    let mut ends = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if ends.last().copied().unwrap_or(0) < tokens.len() {
                ends.push(tokens.len());
            }
            continue;
        }
        let (token, tag) = line.split_once('\t').ok_or_else(|| LinguisticsError::TaggedFormat {
            line: lineno + 1,
            message: "expected token<TAB>tag".into(),
        })?;
        let tag: PosTag = tag.parse().map_err(|_| LinguisticsError::TaggedFormat {
            line: lineno + 1,
            message: format!("unknown tag {tag:?}"),
        })?;
        tokens.push(TaggedToken::new(token.to_lowercase(), tag));
    }
    if ends.last().copied().unwrap_or(0) < tokens.len() {
        ends.push(tokens.len());
    }
    Ok((tokens, ends))
}

/// Writes tokens in the exchange format understood by [`read_tagged`].
pub fn write_tagged(tokens: &[TaggedToken], sentence_ends: &[usize]) -> String {
    let mut out = String::new();
    let mut start = 0;
    for &end in sentence_ends {
        for t in &tokens[start..end] {
            out.push_str(&t.token);
            out.push('\t');
            out.push_str(t.tag.as_str());
            out.push('\n');
        }
        out.push('\n');
        start = end;
    }
    out
}
