//! Input builders shared by the benchmarks.

use cogharness_core::corpus::{Gender, Split};
use cogharness_core::embedding::Provenance;
use cogharness_core::rng::SplitMix64;
use cogharness_core::{EmbeddingStore, EmbeddingVector, Label, SubjectRecord};

const WORDS: &[&str] = &[
    "the",
    "boy",
    "is",
    "on",
    "stool",
    "and",
    "he",
    "taking",
    "a",
    "cookie",
    "from",
    "jar",
    "mother",
    "washing",
    "dishes",
    "water",
    "overflowing",
    "sink",
    "girl",
    "uh",
    "um",
    "she",
    "reaching",
    "for",
    "it",
    "window",
];

fn unit(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// A picture-description-like word salad of `len` tokens.
pub fn transcript(rng: &mut SplitMix64, len: usize) -> String {
    let mut out = String::new();
    for i in 0..len {
        if i > 0 {
            out.push(if i % 12 == 0 { '.' } else { ' ' });
            if i % 12 == 0 {
                out.push(' ');
            }
        }
        out.push_str(WORDS[rng.below(WORDS.len())]);
    }
    out.push('.');
    out
}

/// `per_class` training subjects per class with random `dim`-dimensional embeddings.
pub fn training_pool(per_class: usize, dim: usize, seed: u64) -> (Vec<SubjectRecord>, EmbeddingStore) {
    let mut rng = SplitMix64::new(seed);
    let mut records = Vec::new();
    let mut store = EmbeddingStore::new(dim, Provenance { provider: "bench".into(), model: "random".into() });
    for label in Label::BOTH {
        for i in 0..per_class {
            let id = format!("{label}{i:04}");
            let text = transcript(&mut rng, 40);
            records.push(
                SubjectRecord::new(id.clone(), label, Some(25), Gender::F, 70.0, 60.0, text, Split::Train).unwrap(),
            );
            store.insert(id, random_vector(&mut rng, dim)).unwrap();
        }
    }
    (records, store)
}

pub fn random_vector(rng: &mut SplitMix64, dim: usize) -> EmbeddingVector {
    let v: Vec<f64> = (0..dim).map(|_| unit(rng) * 2.0 - 1.0).collect();
    EmbeddingVector::new(v).expect("random vector is non-zero")
}

/// Scores with roughly 1 in 10 ties.
pub fn scored(n: usize, seed: u64) -> Vec<(Label, f64)> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::CI } else { Label::CN };
            (label, (unit(&mut rng) * 1000.0).round() / 100.0)
        })
        .collect()
}

pub fn samples(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..n).map(|_| unit(&mut rng)).collect()
}
