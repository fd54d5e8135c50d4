//! Class-balanced demonstration selection for few-shot prompts.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Split, SubjectRecord};
use crate::embedding::{class_centroid, cosine_similarity, EmbeddingError, EmbeddingStore, EmbeddingVector};
use crate::label::Label;
use crate::rng::{derive_seed, SplitMix64};

#[derive(Debug, thiserror::Error)]
pub enum SelectionError {
    #[error("shot count must be even and at least 2, got {0}")]
    InvalidShotCount(usize),
    #[error("training pool has {available} {class} candidates, need {needed}")]
    InsufficientPool { class: Label, available: usize, needed: usize },
    #[error("{0} selection needs the test subject's embedding")]
    MissingTestEmbedding(SelectionPolicy),
    #[error("{0} selection needs an embedding store")]
    MissingStore(SelectionPolicy),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    MostSimilar,
    LeastSimilar,
    AverageSimilar,
    Random,
}

impl SelectionPolicy {
    pub const ALL: [SelectionPolicy; 4] = [
        SelectionPolicy::MostSimilar,
        SelectionPolicy::LeastSimilar,
        SelectionPolicy::AverageSimilar,
        SelectionPolicy::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SelectionPolicy::MostSimilar => "most_similar",
            SelectionPolicy::LeastSimilar => "least_similar",
            SelectionPolicy::AverageSimilar => "average_similar",
            SelectionPolicy::Random => "random",
        }
    }

    /// Whether the chosen set depends on the test subject.
    pub fn per_subject(self) -> bool {
        matches!(self, SelectionPolicy::MostSimilar | SelectionPolicy::LeastSimilar)
    }
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SelectionPolicy::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| format!("unknown policy {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub subject_id: String,
    pub transcript_text: String,
    pub label: Label,
    /// Cosine score that ranked this item; absent for random draws.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationSet {
    pub policy: SelectionPolicy,
    pub n: usize,
    pub items: Vec<Demonstration>,
}

impl DemonstrationSet {
    pub fn ids(&self) -> Vec<&str> {
        self.items.iter().map(|d| d.subject_id.as_str()).collect()
    }

    /// The audit form: policy, n and `(subject_id, label)` per item.
    pub fn audit_json(&self) -> serde_json::Value {
        serde_json::json!({
            "policy": self.policy,
            "n": self.n,
            "items": self.items.iter().map(|d| serde_json::json!({
                "subject_id": d.subject_id,
                "label": d.label,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Training-split candidates, grouped by class and sorted by subject_id,
/// together with the store their embeddings come from.
#[derive(Debug, Clone)]
pub struct DemoPool<'a> {
    by_class: BTreeMap<Label, Vec<&'a SubjectRecord>>,
    store: Option<&'a EmbeddingStore>,
    centroids: BTreeMap<Label, EmbeddingVector>,
}

impl<'a> DemoPool<'a> {
    /// Keeps only training-split records. Centroids are computed over each
    /// class's full training pool when a store is given.
    pub fn new(records: &'a [SubjectRecord], store: Option<&'a EmbeddingStore>) -> Result<Self, SelectionError> {
        Self::from_records(records.iter().filter(|r| r.split == Split::Train), store)
    }

    /// Uses exactly the given records as candidates, whatever their split.
    pub fn from_records(
        records: impl IntoIterator<Item = &'a SubjectRecord>,
        store: Option<&'a EmbeddingStore>,
    ) -> Result<Self, SelectionError> {
        let mut by_class: BTreeMap<Label, Vec<&SubjectRecord>> =
            Label::BOTH.into_iter().map(|l| (l, Vec::new())).collect();
        for r in records {
            by_class.get_mut(&r.diagnosis).expect("both classes present").push(r);
        }
        for members in by_class.values_mut() {
            members.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        }
        let mut centroids = BTreeMap::new();
        if let Some(store) = store {
            for (label, members) in &by_class {
                if !members.is_empty() {
                    let ids: Vec<&str> = members.iter().map(|r| r.subject_id.as_str()).collect();
                    centroids.insert(*label, class_centroid(store, &ids)?);
                }
            }
        }
        Ok(Self { by_class, store, centroids })
    }

    pub fn class_members(&self, label: Label) -> &[&'a SubjectRecord] {
        &self.by_class[&label]
    }

    pub fn centroid(&self, label: Label) -> Option<&EmbeddingVector> {
        self.centroids.get(&label)
    }

    pub fn store(&self) -> Option<&'a EmbeddingStore> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.by_class.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn by_score_desc(a: &(f64, &SubjectRecord), b: &(f64, &SubjectRecord)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.subject_id.cmp(&b.1.subject_id))
}

fn by_score_asc(a: &(f64, &SubjectRecord), b: &(f64, &SubjectRecord)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.subject_id.cmp(&b.1.subject_id))
}

/// Picks `n / 2` training demonstrations per class.
///
/// * `MostSimilar` / `LeastSimilar`: highest / lowest cosine to the test embedding.
/// * `AverageSimilar`: highest cosine to the candidate's own class centroid.
/// * `Random`: uniform without replacement, per class, from a seed derived
///   from `seed` and the class name.
///
/// Equal scores are broken by ascending subject_id. Items alternate classes
/// starting with CN; within a class they are ordered by descending score
/// (draw order for `Random`).
pub fn select_demonstrations(
    policy: SelectionPolicy,
    n: usize,
    test_embedding: Option<&EmbeddingVector>,
    pool: &DemoPool<'_>,
    seed: u64,
) -> Result<DemonstrationSet, SelectionError> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(SelectionError::InvalidShotCount(n));
    }
    let per_class = n / 2;
    for label in [Label::CN, Label::CI] {
        let available = pool.class_members(label).len();
        if available < per_class {
            return Err(SelectionError::InsufficientPool { class: label, available, needed: per_class });
        }
    }

    let mut chosen: BTreeMap<Label, Vec<Demonstration>> = BTreeMap::new();
    for label in [Label::CN, Label::CI] {
        let members = pool.class_members(label);
        let picked: Vec<(Option<f64>, &SubjectRecord)> = match policy {
            SelectionPolicy::Random => {
                let mut order: Vec<&SubjectRecord> = members.to_vec();
                let mut rng = SplitMix64::new(derive_seed(seed, label.as_str()));
                rng.shuffle(&mut order);
                order.into_iter().take(per_class).map(|r| (None, r)).collect()
            }
            _ => {
                let store = pool.store().ok_or(SelectionError::MissingStore(policy))?;
                let reference = match policy {
                    SelectionPolicy::AverageSimilar => pool.centroid(label).expect("non-empty class has a centroid"),
                    _ => test_embedding.ok_or(SelectionError::MissingTestEmbedding(policy))?,
                };
                let mut scored = members
                    .iter()
                    .map(|r| Ok((cosine_similarity(reference, store.require(&r.subject_id)?)?, *r)))
                    .collect::<Result<Vec<_>, EmbeddingError>>()?;
                if policy == SelectionPolicy::LeastSimilar {
                    scored.sort_by(by_score_asc);
                } else {
                    scored.sort_by(by_score_desc);
                }
                scored.truncate(per_class);
                scored.sort_by(by_score_desc);
                scored.into_iter().map(|(s, r)| (Some(s), r)).collect()
            }
        };
        chosen.insert(
            label,
            picked
                .into_iter()
                .map(|(score, r)| Demonstration {
                    subject_id: r.subject_id.clone(),
                    transcript_text: r.transcript_text.clone(),
                    label,
                    score,
                })
                .collect(),
        );
    }

    let mut cn = chosen.remove(&Label::CN).unwrap_or_default().into_iter();
    let mut ci = chosen.remove(&Label::CI).unwrap_or_default().into_iter();
    let mut items = Vec::with_capacity(n);
    for _ in 0..per_class {
        items.extend(cn.next());
        items.extend(ci.next());
    }
    Ok(DemonstrationSet { policy, n, items })
}
