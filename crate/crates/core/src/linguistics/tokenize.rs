use serde::{Deserialize, Serialize};

/// Hesitation fillers. They stay in the token stream (disfluency features need
/// them) and are dropped by [`TokenStream::without_fillers`].
pub const FILLERS: &[&str] = &["uh", "um", "er", "erm", "ah", "eh", "hmm", "hm", "mm", "mhm", "uhm", "umm", "uhh"];

pub fn is_filler(token: &str) -> bool {
    FILLERS.contains(&token)
}

/// Lowercased word tokens with sentence boundaries.
///
/// `sentence_ends[k]` is the exclusive token index where sentence `k` ends;
/// the list is strictly increasing and its last entry equals `tokens.len()`
/// whenever the stream is non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenStream {
    pub tokens: Vec<String>,
    pub sentence_ends: Vec<usize>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sentence_count(&self) -> usize {
        self.sentence_ends.len()
    }

    /// Builds a stream from already-split tokens; the whole stream is one sentence.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let sentence_ends = if tokens.is_empty() { vec![] } else { vec![tokens.len()] };
        Self { tokens, sentence_ends }
    }

    /// The same stream with hesitation fillers removed. Sentence boundaries are
    /// remapped; sentences that become empty disappear.
    pub fn without_fillers(&self) -> TokenStream {
        let mut tokens = Vec::with_capacity(self.tokens.len());
        let mut sentence_ends = Vec::with_capacity(self.sentence_ends.len());
        let mut start = 0;
        for &end in &self.sentence_ends {
            for token in &self.tokens[start..end] {
                if !is_filler(token) {
                    tokens.push(token.clone());
                }
            }
            if sentence_ends.last().copied().unwrap_or(0) < tokens.len() {
                sentence_ends.push(tokens.len());
            }
            start = end;
        }
        TokenStream { tokens, sentence_ends }
    }
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Splits text into words made of letters with internal apostrophes
/// (`don't` stays whole), lowercased. Sentences end at `.`, `?` or `!`.
pub fn tokenize(text: &str) -> TokenStream {
    let mut stream = TokenStream::default();
    let mut current = String::new();

    let flush = |current: &mut String, stream: &mut TokenStream| {
        let word = current.trim_end_matches('\'');
        if !word.is_empty() {
            stream.tokens.push(word.to_string());
        }
        current.clear();
    };

    for c in text.chars() {
        if c.is_alphabetic() {
            current.extend(c.to_lowercase());
        } else if is_apostrophe(c) && !current.is_empty() {
            current.push('\'');
        } else {
            flush(&mut current, &mut stream);
            if matches!(c, '.' | '?' | '!') {
                close_sentence(&mut stream);
            }
        }
    }
    flush(&mut current, &mut stream);
    close_sentence(&mut stream);
    stream
}

fn close_sentence(stream: &mut TokenStream) {
    let n = stream.tokens.len();
    if stream.sentence_ends.last().copied().unwrap_or(0) < n {
        stream.sentence_ends.push(n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_sentences() {
        let s = tokenize("The boy. He falls!");
        assert_eq!(s.tokens, ["the", "boy", "he", "falls"]);
        assert_eq!(s.sentence_ends, [2, 4]);
        assert_eq!(s.sentence_count(), 2);
    }

    #[test]
    fn keeps_contractions() {
        assert_eq!(tokenize("don't").tokens, ["don't"]);
        assert_eq!(tokenize("Don\u{2019}t stop").tokens, ["don't", "stop"]);
        assert_eq!(tokenize("'quoted' boys'").tokens, ["quoted", "boys"]);
    }

    #[test]
    fn fillers_are_retained() {
        let s = tokenize("uh the uh boy");
        assert_eq!(s.tokens, ["uh", "the", "uh", "boy"]);
        assert_eq!(s.without_fillers().tokens, ["the", "boy"]);
    }

    #[test]
    fn unterminated_text_forms_one_sentence() {
        let s = tokenize("a boy on a stool ... and, uh");
        assert_eq!(s.sentence_ends, [5, 7]);
        assert!(tokenize("   ").is_empty());
        assert!(tokenize("...").sentence_ends.is_empty());
    }

    #[test]
    fn digits_split_words() {
        assert_eq!(tokenize("a1b 42").tokens, ["a", "b"]);
    }

    #[test]
    fn unicode_letters() {
        assert_eq!(tokenize("Café ÉTÉ").tokens, ["café", "été"]);
    }
}
