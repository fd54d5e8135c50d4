mod common;

use std::collections::BTreeSet;

use cogharness_core::corpus::{apply_splits, write_manifest, Split};
use cogharness_core::{load_corpus, partition_summary, stratified_split, Label};
use common::*;

#[test]
fn fixture_corpus_loads_in_manifest_order() {
    let dir = fixture_dir();
    let records = load_corpus(&dir.join("manifest.csv"), &dir.join("transcripts")).unwrap();
    assert_eq!(records.len(), 8);
    assert_eq!(records.iter().filter(|r| r.diagnosis == Label::CI).count(), 4);
    assert_eq!(records.iter().filter(|r| r.split == Split::Test).count(), 2);
    assert!(records.iter().all(|r| r.word_count > 0));
    assert!(records.iter().any(|r| r.mmse.is_none()));
}

#[test]
fn manifest_round_trips() {
    let dir = fixture_dir();
    let records = load_corpus(&dir.join("manifest.csv"), &dir.join("transcripts")).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("manifest.csv");
    write_manifest(&records, &path).unwrap();
    let again = load_corpus(&path, &dir.join("transcripts")).unwrap();
    assert_eq!(records, again);
}

#[test]
fn split_partitions_every_dev_subject_once() {
    let mut pool = synthetic_dev_pool(3);
    let assignments = stratified_split(&pool, 50, 11).unwrap();
    assert_eq!(assignments.len(), pool.len());
    let ids: BTreeSet<&str> = assignments.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(ids.len(), pool.len());
    apply_splits(&mut pool, &assignments);
    let summary = partition_summary(&pool).unwrap();
    assert_eq!(summary.total(), 166);
    let validation: usize = Label::BOTH.iter().filter_map(|&l| summary.group(Split::Validation, l)).map(|g| g.n).sum();
    assert_eq!(validation, 50);
    assert!(summary.to_table().contains("validation"));
}

#[test]
fn different_seeds_usually_differ() {
    let pool = synthetic_dev_pool(3);
    let a = stratified_split(&pool, 50, 1).unwrap();
    let b = stratified_split(&pool, 50, 2).unwrap();
    assert_ne!(a, b);
}

#[test]
fn test_subjects_cannot_be_resplit() {
    let mut pool = synthetic_dev_pool(3);
    pool[0].split = Split::Test;
    assert!(stratified_split(&pool, 50, 1).is_err());
}

#[test]
fn oversized_target_is_rejected() {
    let pool = synthetic_dev_pool(3);
    assert!(stratified_split(&pool, pool.len() + 1, 1).is_err());
}
