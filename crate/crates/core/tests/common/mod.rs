#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cogharness_core::corpus::{Gender, Split, SubjectRecord};
use cogharness_core::embedding::{EmbeddingStore, EmbeddingVector, Provenance};
use cogharness_core::label::Label;
use cogharness_core::rng::SplitMix64;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("mini")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

pub fn uniform(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Approximately normal draw (Irwin–Hall with 12 uniforms).
pub fn normalish(rng: &mut SplitMix64, mean: f64, sd: f64) -> f64 {
    let s: f64 = (0..12).map(|_| uniform(rng)).sum();
    mean + sd * (s - 6.0)
}

pub fn record(id: &str, dx: Label, split: Split, text: &str) -> SubjectRecord {
    SubjectRecord::new(id, dx, Some(25), Gender::F, 70.0, 60.0, text, split).unwrap()
}

/// Development pool of 166: 87 CI (58 F) and 79 CN
/// (52 F), CI with lower MMSE and longer recordings.
pub fn synthetic_dev_pool(seed: u64) -> Vec<SubjectRecord> {
    let mut rng = SplitMix64::new(seed);
    let mut out = Vec::new();
    let groups = [(Label::CI, 87usize, 58usize), (Label::CN, 79, 52)];
    let mut k = 0;
    for (dx, n, females) in groups {
        for i in 0..n {
            k += 1;
            let gender = if i < females { Gender::F } else { Gender::M };
            let (mmse, duration, age) = match dx {
                Label::CI => (
                    normalish(&mut rng, 17.5, 5.3).round().clamp(3.0, 28.0),
                    normalish(&mut rng, 87.5, 40.0).clamp(35.0, 268.0),
                    normalish(&mut rng, 69.7, 6.8).clamp(53.0, 80.0),
                ),
                Label::CN => (
                    normalish(&mut rng, 29.0, 1.2).round().clamp(26.0, 30.0),
                    normalish(&mut rng, 68.8, 25.0).clamp(22.0, 168.0),
                    normalish(&mut rng, 66.1, 6.4).clamp(54.0, 80.0),
                ),
            };
            // a few missing scores exercise the unknown bin
            let mmse = if k % 41 == 0 { None } else { Some(mmse as u8) };
            let words = 20 + (rng.next_u64() % 120) as usize;
            let text = vec!["word"; words].join(" ");
            out.push(
                SubjectRecord::new(format!("D{k:03}"), dx, mmse, gender, age, duration, text, Split::Unassigned)
                    .unwrap(),
            );
        }
    }
    out
}

/// Random unit-free embeddings for a random two-class training pool.
pub struct RandomPool {
    pub records: Vec<SubjectRecord>,
    pub store: EmbeddingStore,
    pub test: EmbeddingVector,
}

pub fn random_pool(rng: &mut SplitMix64, per_class_max: usize, dim: usize) -> RandomPool {
    let mut records = Vec::new();
    let mut store = EmbeddingStore::new(dim, Provenance { provider: "test".into(), model: "random".into() });
    for (c, dx) in [Label::CI, Label::CN].into_iter().enumerate() {
        let size = 3 + (rng.next_u64() as usize) % (per_class_max - 2);
        for i in 0..size {
            let id = format!("{}{:02}", ["I", "N"][c], i);
            records.push(record(&id, dx, Split::Train, "some words"));
            store.insert(id, random_vector(rng, dim)).unwrap();
        }
    }
    let test = random_vector(rng, dim);
    RandomPool { records, store, test }
}

pub fn random_vector(rng: &mut SplitMix64, dim: usize) -> EmbeddingVector {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| uniform(rng) * 2.0 - 1.0).collect();
        if let Ok(e) = EmbeddingVector::new(v) {
            return e;
        }
    }
}

pub fn dot_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// All k-subsets of 0..n.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

pub const GOLDEN_TRANSCRIPT: &str = "the boy is on the stool. uh he is taking a cookie.";

pub fn golden_plain_demos() -> cogharness_core::DemonstrationSet {
    use cogharness_core::selection::Demonstration;
    let item = |id: &str, text: &str, label| Demonstration {
        subject_id: id.into(),
        transcript_text: text.into(),
        label,
        score: None,
    };
    cogharness_core::DemonstrationSet {
        policy: cogharness_core::SelectionPolicy::Random,
        n: 2,
        items: vec![item("G1", "mother washes dishes.", Label::CN), item("G2", "boy falls.", Label::CI)],
    }
}

pub fn golden_reasoned_demos() -> Vec<cogharness_core::ReasonedDemonstration> {
    use cogharness_core::prompt::RationaleSource;
    let item = |id: &str, text: &str, rationale: &str, label| cogharness_core::ReasonedDemonstration {
        subject_id: id.into(),
        transcript_text: text.into(),
        rationale_text: rationale.into(),
        label,
        rationale_source: RationaleSource::SelfGenerated,
    };
    vec![
        item("G1", "mother washes dishes.", "Fluent, complete description.", Label::CN),
        item("G2", "boy falls.", "Very short \"telegraphic\" speech.", Label::CI),
    ]
}

/// Renders `kind` with the inputs the golden files were built from.
pub fn golden_render(kind: cogharness_core::PromptKind) -> cogharness_core::RenderedPrompt {
    use cogharness_core::prompt::PromptInput;
    use cogharness_core::PromptKind;
    let plain = golden_plain_demos();
    let reasoned = golden_reasoned_demos();
    let input = PromptInput::new(GOLDEN_TRANSCRIPT);
    let input = match kind {
        PromptKind::FewShot => input.with_demos(&plain),
        PromptKind::ReasoningInference => input.with_reasoned(&reasoned),
        PromptKind::RationaleGeneration => input.with_label(Label::CI),
        _ => input,
    };
    cogharness_core::render(kind, &input).expect("golden inputs render")
}

pub fn golden_text(kind: cogharness_core::PromptKind) -> String {
    std::fs::read_to_string(golden_dir().join(format!("{}.txt", kind.as_str()))).expect("golden file")
}
