//! Subject records, manifest I/O, stratified validation sampling and
//! per-partition descriptive statistics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::label::Label;
use crate::linguistics::tokenize;
use crate::rng::SplitMix64;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("reading manifest {path}: {source}")]
    Manifest { path: PathBuf, source: csv::Error },
    #[error("manifest row {row}: {message}")]
    Schema { row: usize, message: String },
    #[error("subject {subject_id}: transcript {path}: {source}")]
    Transcript { subject_id: String, path: PathBuf, source: std::io::Error },
    #[error("subject {subject_id}: {message}")]
    Validation { subject_id: String, message: String },
    #[error("duplicate subject_id {0}")]
    Duplicate(String),
    #[error("split: {0}")]
    Split(String),
    #[error("writing manifest {path}: {source}")]
    Write { path: PathBuf, source: csv::Error },
    #[error("no records")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
    Other,
}

impl Gender {
    fn parse(s: &str) -> Gender {
        match s.trim() {
            "F" | "f" => Gender::F,
            "M" | "m" => Gender::M,
            _ => Gender::Other,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Gender::F => "F",
            Gender::M => "M",
            Gender::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            "unassigned" | "" => Ok(Split::Unassigned),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub diagnosis: Label,
    pub mmse: Option<u8>,
    pub gender: Gender,
    pub age: f64,
    pub duration_seconds: f64,
    pub transcript_text: String,
    pub split: Split,
    pub word_count: usize,
    /// Transcript path as written in the manifest (relative to the transcript directory).
    pub transcript_file: String,
}

impl SubjectRecord {
    /// Builds a record and checks its invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        subject_id: impl Into<String>,
        diagnosis: Label,
        mmse: Option<u8>,
        gender: Gender,
        age: f64,
        duration_seconds: f64,
        transcript_text: impl Into<String>,
        split: Split,
    ) -> Result<Self, CorpusError> {
        let subject_id = subject_id.into();
        let transcript_text = transcript_text.into();
        let invalid = |message: String| CorpusError::Validation { subject_id: subject_id.clone(), message };
        if let Some(m) = mmse {
            if m > 30 {
                return Err(invalid(format!("mmse {m} outside 0..=30")));
            }
        }
        if !(duration_seconds > 0.0 && duration_seconds.is_finite()) {
            return Err(invalid(format!("duration_seconds must be positive, got {duration_seconds}")));
        }
        if !(age > 0.0 && age.is_finite()) {
            return Err(invalid(format!("age must be positive, got {age}")));
        }
        if transcript_text.trim().is_empty() {
            return Err(invalid("transcript is empty".into()));
        }
        let word_count = tokenize(&transcript_text).len();
        let transcript_file = format!("{subject_id}.txt");
        Ok(Self {
            subject_id,
            diagnosis,
            mmse,
            gender,
            age,
            duration_seconds,
            transcript_text,
            split,
            word_count,
            transcript_file,
        })
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct ManifestRow {
    subject_id: String,
    diagnosis: String,
    mmse: String,
    gender: String,
    age: String,
    duration_seconds: String,
    split: String,
    transcript_file: String,
}

/// Reads the manifest CSV and every transcript it references.
pub fn load_corpus(manifest_path: &Path, transcripts_dir: &Path) -> Result<Vec<SubjectRecord>, CorpusError> {
    let mut reader = csv::Reader::from_path(manifest_path)
        .map_err(|source| CorpusError::Manifest { path: manifest_path.to_path_buf(), source })?;
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row_no = i + 2;
        let row = row.map_err(|e| CorpusError::Schema { row: row_no, message: e.to_string() })?;
        let schema = |message: String| CorpusError::Schema { row: row_no, message };

        let diagnosis: Label =
            row.diagnosis.parse().map_err(|e: crate::label::ParseLabelError| schema(e.to_string()))?;
        let mmse = match row.mmse.trim() {
            "" | "NA" | "na" => None,
            m => {
                let value: i64 = m.parse().map_err(|_| schema(format!("bad mmse {m:?}")))?;
                if !(0..=30).contains(&value) {
                    return Err(CorpusError::Validation {
                        subject_id: row.subject_id.clone(),
                        message: format!("mmse {value} outside 0..=30"),
                    });
                }
                Some(value as u8)
            }
        };
        let age: f64 = row.age.trim().parse().map_err(|_| schema(format!("bad age {:?}", row.age)))?;
        let duration: f64 = row
            .duration_seconds
            .trim()
            .parse()
            .map_err(|_| schema(format!("bad duration_seconds {:?}", row.duration_seconds)))?;
        let split: Split = row.split.parse().map_err(schema)?;

        let path = transcripts_dir.join(&row.transcript_file);
        let text = std::fs::read_to_string(&path).map_err(|source| CorpusError::Transcript {
            subject_id: row.subject_id.clone(),
            path: path.clone(),
            source,
        })?;

        if !seen.insert(row.subject_id.clone()) {
            return Err(CorpusError::Duplicate(row.subject_id));
        }
        let mut record = SubjectRecord::new(
            row.subject_id,
            diagnosis,
            mmse,
            Gender::parse(&row.gender),
            age,
            duration,
            text,
            split,
        )?;
        record.transcript_file = row.transcript_file;
        records.push(record);
    }
    Ok(records)
}

/// Writes records back in manifest form (same columns, split filled in).
pub fn write_manifest(records: &[SubjectRecord], path: &Path) -> Result<(), CorpusError> {
    let write_err = |source| CorpusError::Write { path: path.to_path_buf(), source };
    let mut writer = csv::Writer::from_path(path).map_err(write_err)?;
    for r in records {
        writer
            .serialize(ManifestRow {
                subject_id: r.subject_id.clone(),
                diagnosis: r.diagnosis.to_string(),
                mmse: r.mmse.map(|m| m.to_string()).unwrap_or_default(),
                gender: r.gender.as_str().to_string(),
                age: r.age.to_string(),
                duration_seconds: r.duration_seconds.to_string(),
                split: r.split.to_string(),
                transcript_file: r.transcript_file.clone(),
            })
            .map_err(write_err)?;
    }
    writer.flush().map_err(|e| write_err(e.into()))?;
    Ok(())
}

/// Quantile by linear interpolation between closest ranks: for sorted values
/// `x[0..n]` and probability `p`, position `h = (n - 1) p`, result
/// `x[floor h] + (h - floor h) (x[floor h + 1] - x[floor h])`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Stratum key used for validation sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Stratum {
    pub diagnosis: Label,
    pub gender: Gender,
    /// 0..=3 for MMSE quartile bins, 4 for missing MMSE.
    pub mmse_bin: u8,
    /// 0 at or below the median duration, 1 above.
    pub duration_bin: u8,
}

pub const MMSE_UNKNOWN_BIN: u8 = 4;

fn sorted_values(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Computes each record's stratum: diagnosis × gender × MMSE quartile bin
/// (cut points from the pool) × duration above/below the pool median.
pub fn strata(records: &[SubjectRecord]) -> Vec<Stratum> {
    let mmse = sorted_values(records.iter().filter_map(|r| r.mmse.map(f64::from)));
    let cuts =
        if mmse.is_empty() { None } else { Some([quantile(&mmse, 0.25), quantile(&mmse, 0.5), quantile(&mmse, 0.75)]) };
    let durations = sorted_values(records.iter().map(|r| r.duration_seconds));
    let median = quantile(&durations, 0.5);
    records
        .iter()
        .map(|r| Stratum {
            diagnosis: r.diagnosis,
            gender: r.gender,
            mmse_bin: match (r.mmse, cuts) {
                (Some(m), Some(cuts)) => cuts.iter().filter(|&&c| f64::from(m) > c).count() as u8,
                _ => MMSE_UNKNOWN_BIN,
            },
            duration_bin: u8::from(r.duration_seconds > median),
        })
        .collect()
}

/// Assigns `target_validation_n` of the development records to validation and
/// the rest to train.
///
/// Each stratum receives `floor(size * f)` validation slots (`f` the global
/// fraction); the remaining slots go to the strata with the largest fractional
/// remainders, ties resolved by a seeded shuffle of the strata. Members are
/// sorted by subject_id, shuffled (Fisher–Yates over SplitMix64) and the first
/// slots taken. Every stratum therefore lands within one subject of its
/// proportional share. Returns `(subject_id, split)` pairs in input order.
pub fn stratified_split(
    dev_records: &[SubjectRecord],
    target_validation_n: usize,
    seed: u64,
) -> Result<Vec<(String, Split)>, CorpusError> {
    if let Some(r) = dev_records.iter().find(|r| !matches!(r.split, Split::Train | Split::Unassigned)) {
        return Err(CorpusError::Split(format!("subject {} is already in the {} split", r.subject_id, r.split)));
    }
    if target_validation_n >= dev_records.len() {
        return Err(CorpusError::Split(format!(
            "validation target {target_validation_n} must be smaller than the pool of {}",
            dev_records.len()
        )));
    }
    let keys = strata(dev_records);
    let mut groups: BTreeMap<Stratum, Vec<usize>> = BTreeMap::new();
    for (i, key) in keys.iter().enumerate() {
        groups.entry(*key).or_default().push(i);
    }

    let fraction = target_validation_n as f64 / dev_records.len() as f64;
    let mut rng = SplitMix64::new(seed);
    let mut quotas: Vec<(Stratum, usize, f64)> = groups
        .iter()
        .map(|(k, members)| {
            let exact = members.len() as f64 * fraction;
            (*k, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    rng.shuffle(&mut order);
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2));
    for &i in order.iter().take(target_validation_n - assigned) {
        quotas[i].1 += 1;
    }

    let mut splits = vec![Split::Train; dev_records.len()];
    for (key, quota, _) in quotas {
        let mut members = groups[&key].clone();
        members.sort_by(|&a, &b| dev_records[a].subject_id.cmp(&dev_records[b].subject_id));
        rng.shuffle(&mut members);
        for &m in members.iter().take(quota) {
            splits[m] = Split::Validation;
        }
    }
    Ok(dev_records.iter().zip(splits).map(|(r, s)| (r.subject_id.clone(), s)).collect())
}

/// Descriptive statistics of one variable within a group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariableSummary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

impl VariableSummary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let sorted = sorted_values(values.iter().copied());
        let n = sorted.len();
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let std =
            if n > 1 { (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Some(Self {
            n,
            mean,
            std,
            min: sorted[0],
            max: sorted[n - 1],
            q25: quantile(&sorted, 0.25),
            q50: quantile(&sorted, 0.5),
            q75: quantile(&sorted, 0.75),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub split: Split,
    pub diagnosis: Label,
    pub n: usize,
    pub female: usize,
    pub male: usize,
    pub other_gender: usize,
    pub age: VariableSummary,
    /// Absent when no member of the group has an MMSE score.
    pub mmse: Option<VariableSummary>,
    pub duration_seconds: VariableSummary,
    pub word_count: VariableSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub groups: Vec<GroupSummary>,
}

impl PartitionSummary {
    pub fn group(&self, split: Split, diagnosis: Label) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.split == split && g.diagnosis == diagnosis)
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(|g| g.n).sum()
    }

    /// Plain-text table, one line per group.
    pub fn to_table(&self) -> String {
        let mut out = String::from(
            "split       dx   n    F/M     age (mean±sd)   MMSE (mean±sd)  duration (mean±sd)  words (mean±sd)\n",
        );
        for g in &self.groups {
            let mmse = g.mmse.map(|m| format!("{:.2}±{:.2}", m.mean, m.std)).unwrap_or_else(|| "-".into());
            let sex = format!("{}/{}", g.female, g.male);
            let age = format!("{:.2}±{:.2}", g.age.mean, g.age.std);
            let duration = format!("{:.2}±{:.2}", g.duration_seconds.mean, g.duration_seconds.std);
            let words = format!("{:.2}±{:.2}", g.word_count.mean, g.word_count.std);
            out.push_str(&format!(
                "{:<11} {:<4} {:<4} {sex:<7} {age:<15} {mmse:<15} {duration:<19} {words}\n",
                g.split.as_str(),
                g.diagnosis.as_str(),
                g.n,
            ));
        }
        out
    }
}

/// Statistics per split × diagnosis group; empty groups are omitted.
pub fn partition_summary(records: &[SubjectRecord]) -> Result<PartitionSummary, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut groups: BTreeMap<(Split, Label), Vec<&SubjectRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.split, r.diagnosis)).or_default().push(r);
    }
    let groups = groups
        .into_iter()
        .map(|((split, diagnosis), members)| {
            let values = |f: &dyn Fn(&SubjectRecord) -> f64| -> Vec<f64> { members.iter().map(|r| f(r)).collect() };
            let mmse: Vec<f64> = members.iter().filter_map(|r| r.mmse.map(f64::from)).collect();
            GroupSummary {
                split,
                diagnosis,
                n: members.len(),
                female: members.iter().filter(|r| r.gender == Gender::F).count(),
                male: members.iter().filter(|r| r.gender == Gender::M).count(),
                other_gender: members.iter().filter(|r| r.gender == Gender::Other).count(),
                age: VariableSummary::from_values(&values(&|r| r.age)).expect("non-empty group"),
                mmse: VariableSummary::from_values(&mmse),
                duration_seconds: VariableSummary::from_values(&values(&|r| r.duration_seconds))
                    .expect("non-empty group"),
                word_count: VariableSummary::from_values(&values(&|r| r.word_count as f64)).expect("non-empty group"),
            }
        })
        .collect();
    Ok(PartitionSummary { groups })
}

/// Applies `(subject_id, split)` assignments to records in place.
pub fn apply_splits(records: &mut [SubjectRecord], assignments: &[(String, Split)]) {
    let lookup: std::collections::HashMap<&str, Split> = assignments.iter().map(|(id, s)| (id.as_str(), *s)).collect();
    for r in records {
        if let Some(s) = lookup.get(r.subject_id.as_str()) {
            r.split = *s;
        }
    }
}
