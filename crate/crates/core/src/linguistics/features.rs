use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tagger::{PosTag, PosTagger, TaggedToken};
use super::tokenize::{tokenize, TokenStream};
use super::{FrequencyTable, LinguisticsError, Resources, SceneLexicon};

/// Exponent of Brunet's index.
pub const BRUNET_EXPONENT: f64 = 0.165;
/// Running type–token ratio at which an MTLD factor is closed.
pub const MTLD_THRESHOLD: f64 = 0.72;
/// Sample size of HD-D.
pub const HDD_SAMPLE: usize = 42;
/// Longest n-gram checked for back-to-back repetition.
pub const MAX_REPEAT_NGRAM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LexicalFeatures {
    pub ttr: f64,
    pub rttr: f64,
    pub cttr: f64,
    pub brunet: f64,
    pub honore: f64,
    pub mtld: f64,
    pub hdd: f64,
    pub unique_total_ratio: f64,
    pub unique_word_count: f64,
    pub lexical_frequency: f64,
    pub content_words_ratio: f64,
    /// Set when every type is a hapax and Honoré's statistic was replaced by its cap.
    pub honore_capped: bool,
}

/// Share of each major part-of-speech category. Relative pronouns are counted
/// with pronouns, articles with determiners, negative adverbs with adverbs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PosRate {
    pub noun: f64,
    pub verb: f64,
    pub adj: f64,
    pub adv: f64,
    pub pron: f64,
    pub det: f64,
    pub other: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntacticFeatures {
    pub pos_rate: PosRate,
    pub relative_pronouns_rate: f64,
    pub determiners_ratio: f64,
    pub verbs_ratio: f64,
    pub nouns_ratio: f64,
    pub negative_adverbs_rate: f64,
    pub word_count: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisfluencyFeatures {
    /// Words per second.
    pub speech_rate: f64,
    pub consecutive_repeated_clauses: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceFeatures {
    pub content_density: f64,
    pub reference_rate_to_reality: f64,
    pub pronouns_ratio: f64,
    pub definite_articles_ratio: f64,
    pub indefinite_articles_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinguisticProfile {
    pub lexical: LexicalFeatures,
    pub syntactic: SyntacticFeatures,
    pub disfluency: DisfluencyFeatures,
    pub coherence: CoherenceFeatures,
}

impl LinguisticProfile {
    /// Flat `(column name, value)` list in report order. The part-of-speech
    /// distribution expands into one `pos_rate_*` column per category.
    pub fn columns(&self) -> Vec<(&'static str, f64)> {
        let l = &self.lexical;
        let s = &self.syntactic;
        let d = &self.disfluency;
        let c = &self.coherence;
        vec![
            ("ttr", l.ttr),
            ("rttr", l.rttr),
            ("cttr", l.cttr),
            ("brunet", l.brunet),
            ("honore", l.honore),
            ("mtld", l.mtld),
            ("hdd", l.hdd),
            ("unique_total_ratio", l.unique_total_ratio),
            ("unique_word_count", l.unique_word_count),
            ("lexical_frequency", l.lexical_frequency),
            ("content_words_ratio", l.content_words_ratio),
            ("pos_rate_noun", s.pos_rate.noun),
            ("pos_rate_verb", s.pos_rate.verb),
            ("pos_rate_adj", s.pos_rate.adj),
            ("pos_rate_adv", s.pos_rate.adv),
            ("pos_rate_pron", s.pos_rate.pron),
            ("pos_rate_det", s.pos_rate.det),
            ("pos_rate_other", s.pos_rate.other),
            ("relative_pronouns_rate", s.relative_pronouns_rate),
            ("determiners_ratio", s.determiners_ratio),
            ("verbs_ratio", s.verbs_ratio),
            ("nouns_ratio", s.nouns_ratio),
            ("negative_adverbs_rate", s.negative_adverbs_rate),
            ("word_count", s.word_count),
            ("speech_rate", d.speech_rate),
            ("consecutive_repeated_clauses", d.consecutive_repeated_clauses),
            ("content_density", c.content_density),
            ("reference_rate_to_reality", c.reference_rate_to_reality),
            ("pronouns_ratio", c.pronouns_ratio),
            ("definite_articles_ratio", c.definite_articles_ratio),
            ("indefinite_articles_ratio", c.indefinite_articles_ratio),
        ]
    }

    pub fn column_names() -> Vec<&'static str> {
        const ZERO_LEX: LexicalFeatures = LexicalFeatures {
            ttr: 0.0,
            rttr: 0.0,
            cttr: 0.0,
            brunet: 0.0,
            honore: 0.0,
            mtld: 0.0,
            hdd: 0.0,
            unique_total_ratio: 0.0,
            unique_word_count: 0.0,
            lexical_frequency: 0.0,
            content_words_ratio: 0.0,
            honore_capped: false,
        };
        let zero = LinguisticProfile {
            lexical: ZERO_LEX,
            syntactic: SyntacticFeatures {
                pos_rate: PosRate::default(),
                relative_pronouns_rate: 0.0,
                determiners_ratio: 0.0,
                verbs_ratio: 0.0,
                nouns_ratio: 0.0,
                negative_adverbs_rate: 0.0,
                word_count: 0.0,
            },
            disfluency: DisfluencyFeatures { speech_rate: 0.0, consecutive_repeated_clauses: 0.0 },
            coherence: CoherenceFeatures {
                content_density: 0.0,
                reference_rate_to_reality: 0.0,
                pronouns_ratio: 0.0,
                definite_articles_ratio: 0.0,
                indefinite_articles_ratio: 0.0,
            },
        };
        zero.columns().into_iter().map(|(name, _)| name).collect()
    }
}

fn type_counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for t in tokens {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    counts
}

/// Brunet's index `W = N^(V^-0.165)`.
pub fn brunet(n: usize, v: usize) -> f64 {
    (n as f64).powf((v as f64).powf(-BRUNET_EXPONENT))
}

/// Honoré's statistic `R = 100 ln N / (1 - V1/V)`.
///
/// When every type occurs once (`V1 == V`) the denominator vanishes; the value
/// is then capped at `100 ln N * V` and the second element is `true`.
pub fn honore(n: usize, v: usize, hapaxes: usize) -> (f64, bool) {
    let log_n = (n as f64).ln();
    if hapaxes >= v {
        (100.0 * log_n * v as f64, true)
    } else {
        (100.0 * log_n / (1.0 - hapaxes as f64 / v as f64), false)
    }
}

fn mtld_pass<'a>(tokens: impl Iterator<Item = &'a String>, threshold: f64) -> f64 {
    let mut total = 0usize;
    let mut factors = 0.0;
    let mut types = std::collections::HashSet::new();
    let mut count = 0usize;
    let mut ttr = 1.0;
    for token in tokens {
        total += 1;
        count += 1;
        types.insert(token.as_str());
        ttr = types.len() as f64 / count as f64;
        if ttr <= threshold {
            factors += 1.0;
            types.clear();
            count = 0;
            ttr = 1.0;
        }
    }
    factors += (1.0 - ttr) / (1.0 - threshold);
    if factors > 0.0 {
        total as f64 / factors
    } else {
        // The running TTR never dropped: the whole text is one partial factor of
        // zero weight. Its length is the natural lower bound of the measure.
        total as f64
    }
}

/// Measure of textual lexical diversity: mean of a forward and a backward pass.
pub fn mtld(tokens: &[String], threshold: f64) -> f64 {
    (mtld_pass(tokens.iter(), threshold) + mtld_pass(tokens.iter().rev(), threshold)) / 2.0
}

/// HD-D: for every type, the probability that it appears at least once in a
/// random draw of `sample` tokens without replacement (hypergeometric), summed
/// over types and divided by the draw size. Texts shorter than `sample` use
/// their full length, which makes HD-D equal TTR there.
pub fn hdd(tokens: &[String], sample: usize) -> f64 {
    let n = tokens.len();
    if n == 0 {
        return 0.0;
    }
    let draws = sample.min(n);
    let mut sum = 0.0;
    for &freq in type_counts(tokens).values() {
        // P(absent) = C(n - f, draws) / C(n, draws) = prod_{i<f} (n - draws - i) / (n - i)
        let mut absent = 1.0;
        for i in 0..freq {
            if n - draws <= i {
                absent = 0.0;
                break;
            }
            absent *= (n - draws - i) as f64 / (n - i) as f64;
        }
        sum += 1.0 - absent;
    }
    sum / draws as f64
}

fn is_primitive(unit: &[String]) -> bool {
    let n = unit.len();
    !(1..n).any(|d| n.is_multiple_of(d) && (d..n).all(|i| unit[i] == unit[i - d]))
}

/// Counts back-to-back repeats of an n-gram (2 ≤ n ≤ 6).
///
/// Scanning left to right, the shortest primitive n-gram immediately followed
/// by a copy of itself counts once however many copies follow; scanning then
/// resumes after the last copy. Repeats of single words, and of n-grams that
/// are themselves single-word repeats, are not counted.
pub fn repeated_clause_count(tokens: &[String]) -> usize {
    let mut count = 0;
    let mut i = 0;
    while i < tokens.len() {
        let hit = (2..=MAX_REPEAT_NGRAM).find(|&n| {
            i + 2 * n <= tokens.len() && tokens[i..i + n] == tokens[i + n..i + 2 * n] && is_primitive(&tokens[i..i + n])
        });
        match hit {
            Some(n) => {
                count += 1;
                let mut end = i + 2 * n;
                while end + n <= tokens.len() && tokens[end..end + n] == tokens[i..i + n] {
                    end += n;
                }
                i = end;
            }
            None => i += 1,
        }
    }
    count
}

pub fn lexical_features(
    stream: &TokenStream,
    tagged: &[TaggedToken],
    frequencies: &FrequencyTable,
) -> Result<LexicalFeatures, LinguisticsError> {
    if stream.is_empty() {
        return Err(LinguisticsError::EmptyText);
    }
    let raw_types = type_counts(&stream.tokens).len();
    let unique_total_ratio = raw_types as f64 / stream.len() as f64;

    let normalized = stream.without_fillers();
    // A transcript made only of fillers keeps its raw tokens.
    let tokens = if normalized.is_empty() { &stream.tokens } else { &normalized.tokens };
    let n = tokens.len();
    let counts = type_counts(tokens);
    let v = counts.len();
    let hapaxes = counts.values().filter(|&&c| c == 1).count();
    let nf = n as f64;
    let vf = v as f64;
    let (honore, honore_capped) = honore(n, v, hapaxes);
    let content = tagged.iter().filter(|t| t.tag.is_content()).count();

    Ok(LexicalFeatures {
        ttr: vf / nf,
        rttr: vf / nf.sqrt(),
        cttr: vf / (2.0 * nf).sqrt(),
        brunet: brunet(n, v),
        honore,
        mtld: mtld(tokens, MTLD_THRESHOLD),
        hdd: hdd(tokens, HDD_SAMPLE),
        unique_total_ratio,
        unique_word_count: vf,
        lexical_frequency: tokens.iter().map(|t| frequencies.lookup(t)).sum::<f64>() / nf,
        content_words_ratio: (content as f64 / nf).min(1.0),
        honore_capped,
    })
}

fn rate(tagged: &[TaggedToken], pred: impl Fn(PosTag) -> bool) -> f64 {
    tagged.iter().filter(|t| pred(t.tag)).count() as f64 / tagged.len() as f64
}

pub fn syntactic_features(tagged: &[TaggedToken]) -> Result<SyntacticFeatures, LinguisticsError> {
    if tagged.is_empty() {
        return Err(LinguisticsError::EmptyText);
    }
    use PosTag::*;
    Ok(SyntacticFeatures {
        pos_rate: PosRate {
            noun: rate(tagged, |t| t == NOUN),
            verb: rate(tagged, |t| t == VERB),
            adj: rate(tagged, |t| t == ADJ),
            adv: rate(tagged, |t| matches!(t, ADV | NEG_ADV)),
            pron: rate(tagged, |t| matches!(t, PRON | REL_PRON)),
            det: rate(tagged, PosTag::is_determiner),
            other: rate(tagged, |t| t == OTHER),
        },
        relative_pronouns_rate: rate(tagged, |t| t == REL_PRON),
        determiners_ratio: rate(tagged, PosTag::is_determiner),
        verbs_ratio: rate(tagged, |t| t == VERB),
        nouns_ratio: rate(tagged, |t| t == NOUN),
        negative_adverbs_rate: rate(tagged, |t| t == NEG_ADV),
        word_count: tagged.len() as f64,
    })
}

pub fn disfluency_features(
    stream: &TokenStream,
    duration_seconds: f64,
) -> Result<DisfluencyFeatures, LinguisticsError> {
    if duration_seconds.is_nan() || duration_seconds <= 0.0 || !duration_seconds.is_finite() {
        return Err(LinguisticsError::NonPositiveDuration(duration_seconds));
    }
    Ok(DisfluencyFeatures {
        speech_rate: stream.len() as f64 / duration_seconds,
        consecutive_repeated_clauses: repeated_clause_count(&stream.tokens) as f64,
    })
}

pub fn coherence_features(tagged: &[TaggedToken], scene: &SceneLexicon) -> Result<CoherenceFeatures, LinguisticsError> {
    if tagged.is_empty() {
        return Err(LinguisticsError::EmptyText);
    }
    Ok(CoherenceFeatures {
        content_density: rate(tagged, PosTag::is_content),
        reference_rate_to_reality: tagged.iter().filter(|t| scene.contains(&t.token)).count() as f64
            / tagged.len() as f64,
        pronouns_ratio: rate(tagged, |t| t == PosTag::PRON),
        definite_articles_ratio: rate(tagged, |t| t == PosTag::ART_DEF),
        indefinite_articles_ratio: rate(tagged, |t| t == PosTag::ART_INDEF),
    })
}

/// All measures from pre-tagged tokens (e.g. an external tagger's output).
pub fn profile_from_tagged(
    tagged: &[TaggedToken],
    sentence_ends: &[usize],
    duration_seconds: f64,
    resources: &Resources,
) -> Result<LinguisticProfile, LinguisticsError> {
    let stream =
        TokenStream { tokens: tagged.iter().map(|t| t.token.clone()).collect(), sentence_ends: sentence_ends.to_vec() };
    Ok(LinguisticProfile {
        lexical: lexical_features(&stream, tagged, &resources.frequencies)?,
        syntactic: syntactic_features(tagged)?,
        disfluency: disfluency_features(&stream, duration_seconds)?,
        coherence: coherence_features(tagged, &resources.scene)?,
    })
}

pub fn profile_from_text(
    text: &str,
    duration_seconds: f64,
    tagger: &dyn PosTagger,
    resources: &Resources,
) -> Result<LinguisticProfile, LinguisticsError> {
    let stream = tokenize(text);
    let tagged = tagger.tag(&stream);
    profile_from_tagged(&tagged, &stream.sentence_ends, duration_seconds, resources)
}
