//! Per-subject text embeddings, cosine similarity and class centroids.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::SubjectRecord;
use crate::linguistics::tokenize;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("vector has non-finite component at index {0}")]
    NonFinite(usize),
    #[error("zero vector: cosine similarity is undefined")]
    ZeroNorm,
    #[error("empty vector")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no subject ids given")]
    NoIds,
    #[error("subject {0} has no embedding")]
    UnknownId(String),
    #[error("provider request for subject {subject_id} failed (retryable): {message}")]
    Transport { subject_id: String, message: String },
    #[error("provider returned {got} vectors for {expected} texts")]
    Cardinality { expected: usize, got: usize },
    #[error("embedding for subject {subject_id}: {source}")]
    Subject { subject_id: String, source: Box<EmbeddingError> },
    #[error("store file {path}: {message}")]
    Storage { path: PathBuf, message: String },
    #[error("environment variable {0} is not set")]
    MissingAuth(String),
}

/// A finite, non-zero real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(EmbeddingError::ZeroNorm);
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, EmbeddingError> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dimension() != b.dimension() {
        return Err(EmbeddingError::DimensionMismatch { expected: a.dimension(), got: b.dimension() });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Who produced the vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub provider: String,
    pub model: String,
}

impl Provenance {
    fn slug(&self) -> String {
        format!("{}-{}", self.provider, self.model)
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
            .collect()
    }
}

/// Write-once map from subject id to vector, all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dimension: usize,
    vectors: BTreeMap<String, EmbeddingVector>,
    provenance: Provenance,
}

impl EmbeddingStore {
    pub fn new(dimension: usize, provenance: Provenance) -> Self {
        Self { dimension, vectors: BTreeMap::new(), provenance }
    }

    pub fn insert(&mut self, subject_id: impl Into<String>, vector: EmbeddingVector) -> Result<(), EmbeddingError> {
        if vector.dimension() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch { expected: self.dimension, got: vector.dimension() });
        }
        self.vectors.insert(subject_id.into(), vector);
        Ok(())
    }

    pub fn get(&self, subject_id: &str) -> Option<&EmbeddingVector> {
        self.vectors.get(subject_id)
    }

    pub fn require(&self, subject_id: &str) -> Result<&EmbeddingVector, EmbeddingError> {
        self.get(subject_id).ok_or_else(|| EmbeddingError::UnknownId(subject_id.to_string()))
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Entries in subject_id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Every vector multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, EmbeddingError> {
        let mut out = Self::new(self.dimension, self.provenance.clone());
        for (k, v) in &self.vectors {
            out.vectors.insert(k.clone(), v.scaled(factor)?);
        }
        Ok(out)
    }

    /// Persists as `<stem>.bin` (little-endian f64 rows in subject_id order)
    /// plus `<stem>.json` (dimension, provenance, row keys).
    pub fn save(&self, stem: &Path) -> Result<(), EmbeddingError> {
        let keys: Vec<String> = self.vectors.keys().cloned().collect();
        let rows: Vec<&[f64]> = self.vectors.values().map(|v| v.values()).collect();
        write_vector_file(stem, self.dimension, &self.provenance, &keys, &rows)
    }

    pub fn load(stem: &Path) -> Result<Self, EmbeddingError> {
        let (header, rows) = read_vector_file(stem)?;
        let mut store = Self::new(header.dimension, header.provenance);
        for (key, row) in header.keys.into_iter().zip(rows) {
            store.insert(key, EmbeddingVector::new(row)?)?;
        }
        Ok(store)
    }

    /// CSV with `subject_id,v0,...,v{d-1}` for external plotting.
    pub fn export_csv(&self, path: &Path) -> Result<(), EmbeddingError> {
        let storage = |e: csv::Error| EmbeddingError::Storage { path: path.to_path_buf(), message: e.to_string() };
        let mut w = csv::Writer::from_path(path).map_err(storage)?;
        let mut header = vec!["subject_id".to_string()];
        header.extend((0..self.dimension).map(|i| format!("v{i}")));
        w.write_record(&header).map_err(storage)?;
        for (id, v) in &self.vectors {
            let mut row = vec![id.clone()];
            row.extend(v.values().iter().map(|x| x.to_string()));
            w.write_record(&row).map_err(storage)?;
        }
        w.flush().map_err(|e| storage(e.into()))
    }
}

/// Componentwise mean of the given subjects' vectors, accumulated in
/// subject_id order with Neumaier-compensated summation.
pub fn class_centroid(store: &EmbeddingStore, subject_ids: &[&str]) -> Result<EmbeddingVector, EmbeddingError> {
    if subject_ids.is_empty() {
        return Err(EmbeddingError::NoIds);
    }
    let mut ids = subject_ids.to_vec();
    ids.sort_unstable();
    let d = store.dimension();
    let mut sum = vec![0.0f64; d];
    let mut compensation = vec![0.0f64; d];
    for id in &ids {
        let v = store.require(id)?;
        for (j, &x) in v.values().iter().enumerate() {
            let t = sum[j] + x;
            if sum[j].abs() >= x.abs() {
                compensation[j] += (sum[j] - t) + x;
            } else {
                compensation[j] += (x - t) + sum[j];
            }
            sum[j] = t;
        }
    }
    let n = ids.len() as f64;
    EmbeddingVector::new(sum.iter().zip(&compensation).map(|(s, c)| (s + c) / n).collect())
}

/// Anything that maps texts to vectors of one dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn provenance(&self) -> Provenance;
    /// One vector per input text, in order.
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, String>;
}

/// Offline provider: feature-hashes word tokens into a fixed number of buckets.
///
/// Each token from the harness tokenizer adds 1.0 to bucket
/// `u64::from_le_bytes(SHA-256(token)[0..8]) mod dimension`; the count vector is
/// then scaled to unit Euclidean length. Texts without tokens hash the literal
/// string `<empty>` so the result is never a zero vector.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    pub dimension: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dimension: 256 }
    }
}

impl HashingEmbedder {
    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        let stream = tokenize(text);
        let empty = ["<empty>".to_string()];
        let tokens: &[String] = if stream.is_empty() { &empty } else { &stream.tokens };
        for token in tokens {
            let digest = Sha256::digest(token.as_bytes());
            let mut bytes = [0u8; 8];
            bytes.copy_from_slice(&digest[..8]);
            v[(u64::from_le_bytes(bytes) % self.dimension as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn provenance(&self) -> Provenance {
        Provenance { provider: "hashing".into(), model: format!("sha256-bucket-{}", self.dimension) }
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, String> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Remote provider speaking the common embeddings wire shape:
/// `POST {"input": [...], "model": "..."}` → `{"data": [{"embedding": [...]}, ...]}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    pub endpoint: String,
    pub model: String,
    pub auth_token: Option<String>,
    pub max_retries: u32,
    pub timeout: Duration,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            auth_token: None,
            max_retries: 3,
            timeout: Duration::from_secs(60),
        }
    }

    pub fn with_auth_env(mut self, var: &str) -> Result<Self, EmbeddingError> {
        self.auth_token = Some(std::env::var(var).map_err(|_| EmbeddingError::MissingAuth(var.into()))?);
        Ok(self)
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl EmbeddingProvider for HttpEmbedder {
    fn provenance(&self) -> Provenance {
        Provenance { provider: "http".into(), model: self.model.clone() }
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, String> {
        let body = serde_json::json!({ "input": texts, "model": self.model });
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(self.timeout)).http_status_as_error(false).build().into();
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(crate::gateway::backoff_delay(attempt));
            }
            let mut req = agent.post(&self.endpoint).header("Content-Type", "application/json");
            if let Some(token) = &self.auth_token {
                req = req.header("Authorization", &format!("Bearer {token}"));
            }
            match req.send(body.to_string()) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.body_mut().read_to_string().map_err(|e| e.to_string());
                    match (status, text) {
                        (200..=299, Ok(text)) => {
                            let parsed: EmbeddingResponse =
                                serde_json::from_str(&text).map_err(|e| format!("bad response: {e}"))?;
                            return Ok(parsed.data.into_iter().map(|d| d.embedding).collect());
                        }
                        (500..=599, _) => last = format!("HTTP {status}"),
                        (_, text) => return Err(format!("HTTP {status}: {}", text.unwrap_or_default())),
                    }
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(format!("gave up after {} attempts: {last}", self.max_retries + 1))
    }
}

/// Hex SHA-256 of a text, the cache key of its vector.
pub fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Serialize, Deserialize)]
struct VectorFileHeader {
    dimension: usize,
    provenance: Provenance,
    keys: Vec<String>,
}

fn write_vector_file(
    stem: &Path,
    dimension: usize,
    provenance: &Provenance,
    keys: &[String],
    rows: &[&[f64]],
) -> Result<(), EmbeddingError> {
    let storage =
        |path: &Path, e: std::io::Error| EmbeddingError::Storage { path: path.to_path_buf(), message: e.to_string() };
    let bin = stem.with_extension("bin");
    let json = stem.with_extension("json");
    if let Some(parent) = stem.parent() {
        std::fs::create_dir_all(parent).map_err(|e| storage(parent, e))?;
    }
    let mut bytes = Vec::with_capacity(rows.len() * dimension * 8);
    for row in rows {
        for v in *row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::File::create(&bin).and_then(|mut f| f.write_all(&bytes)).map_err(|e| storage(&bin, e))?;
    let header = VectorFileHeader { dimension, provenance: provenance.clone(), keys: keys.to_vec() };
    std::fs::write(&json, serde_json::to_vec_pretty(&header).expect("header serializes")).map_err(|e| storage(&json, e))
}

fn read_vector_file(stem: &Path) -> Result<(VectorFileHeader, Vec<Vec<f64>>), EmbeddingError> {
    let bin = stem.with_extension("bin");
    let json = stem.with_extension("json");
    let storage = |path: &Path, message: String| EmbeddingError::Storage { path: path.to_path_buf(), message };
    let header: VectorFileHeader =
        serde_json::from_slice(&std::fs::read(&json).map_err(|e| storage(&json, e.to_string()))?)
            .map_err(|e| storage(&json, e.to_string()))?;
    let mut bytes = Vec::new();
    std::fs::File::open(&bin).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| storage(&bin, e.to_string()))?;
    let expected = header.keys.len() * header.dimension * 8;
    if bytes.len() != expected {
        return Err(storage(&bin, format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let rows = bytes
        .chunks_exact(header.dimension.max(1) * 8)
        .map(|row| row.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
        .collect();
    Ok((header, rows))
}

/// Options for [`embed_texts`].
#[derive(Debug, Clone)]
pub struct EmbedOptions {
    /// Directory for the per-provider vector cache; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
    pub batch_size: usize,
    /// Maximum concurrent provider calls.
    pub parallelism: usize,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self { cache_dir: None, batch_size: 32, parallelism: 1 }
    }
}

/// Embeds every record's transcript. Vectors already cached under the same
/// provider and text hash are reused; new ones are appended to the cache.
pub fn embed_texts(
    provider: &dyn EmbeddingProvider,
    records: &[SubjectRecord],
    options: &EmbedOptions,
) -> Result<EmbeddingStore, EmbeddingError> {
    let provenance = provider.provenance();
    let cache_stem = options.cache_dir.as_ref().map(|d| d.join(provenance.slug()));
    let mut cache: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut dimension: Option<usize> = None;
    if let Some(stem) = &cache_stem {
        if stem.with_extension("json").exists() {
            let (header, rows) = read_vector_file(stem)?;
            if header.provenance == provenance {
                dimension = Some(header.dimension);
                cache.extend(header.keys.into_iter().zip(rows));
            }
        }
    }

    let mut ordered: Vec<&SubjectRecord> = records.iter().collect();
    ordered.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let mut missing: Vec<(&SubjectRecord, String)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for r in &ordered {
        let h = text_hash(&r.transcript_text);
        if !cache.contains_key(&h) && seen.insert(h.clone()) {
            missing.push((r, h));
        }
    }

    let batches: Vec<&[(&SubjectRecord, String)]> = missing.chunks(options.batch_size.max(1)).collect();
    let mut results: Vec<Option<Result<Vec<Vec<f64>>, EmbeddingError>>> = (0..batches.len()).map(|_| None).collect();
    let parallelism = options.parallelism.max(1);
    for (wave_index, wave) in batches.chunks(parallelism).enumerate() {
        let outputs: Vec<Result<Vec<Vec<f64>>, EmbeddingError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|batch| {
                    scope.spawn(move || {
                        let texts: Vec<&str> = batch.iter().map(|(r, _)| r.transcript_text.as_str()).collect();
                        let vectors = provider.embed(&texts).map_err(|message| EmbeddingError::Transport {
                            subject_id: batch[0].0.subject_id.clone(),
                            message,
                        })?;
                        if vectors.len() != texts.len() {
                            return Err(EmbeddingError::Cardinality { expected: texts.len(), got: vectors.len() });
                        }
                        Ok(vectors)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("embedding worker panicked")).collect()
        });
        for (i, out) in outputs.into_iter().enumerate() {
            results[wave_index * parallelism + i] = Some(out);
        }
    }
    for (batch, result) in batches.iter().zip(results) {
        let vectors = result.expect("every batch ran")?;
        for ((record, hash), vector) in batch.iter().zip(vectors) {
            match dimension {
                Some(d) if d != vector.len() => {
                    return Err(EmbeddingError::Subject {
                        subject_id: record.subject_id.clone(),
                        source: Box::new(EmbeddingError::DimensionMismatch { expected: d, got: vector.len() }),
                    })
                }
                _ => dimension = Some(vector.len()),
            }
            cache.insert(hash.clone(), vector);
        }
    }

    let dimension = dimension.unwrap_or(0);
    let mut store = EmbeddingStore::new(dimension, provenance.clone());
    for r in &ordered {
        let v = cache[&text_hash(&r.transcript_text)].clone();
        let v = EmbeddingVector::new(v)
            .map_err(|e| EmbeddingError::Subject { subject_id: r.subject_id.clone(), source: Box::new(e) })?;
        store.insert(r.subject_id.clone(), v)?;
    }

    if let Some(stem) = &cache_stem {
        if !missing.is_empty() {
            let keys: Vec<String> = cache.keys().cloned().collect();
            let rows: Vec<&[f64]> = cache.values().map(|v| v.as_slice()).collect();
            write_vector_file(stem, dimension, &provenance, &keys, &rows)?;
        }
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Gender, Split};
    use crate::label::Label;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine_similarity(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn vector_validation() {
        assert!(matches!(EmbeddingVector::new(vec![0.0, 0.0]), Err(EmbeddingError::ZeroNorm)));
        assert!(matches!(EmbeddingVector::new(vec![1.0, f64::NAN]), Err(EmbeddingError::NonFinite(1))));
        assert!(matches!(
            cosine_similarity(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
        assert!(serde_json::from_str::<EmbeddingVector>("[0.0]").is_err());
    }

    fn store(entries: &[(&str, &[f64])]) -> EmbeddingStore {
        let mut s = EmbeddingStore::new(entries[0].1.len(), Provenance { provider: "t".into(), model: "t".into() });
        for (id, x) in entries {
            s.insert(*id, v(x)).unwrap();
        }
        s
    }

    #[test]
    fn centroid_examples() {
        let s = store(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        assert_eq!(class_centroid(&s, &["a", "b"]).unwrap().values(), &[0.5, 0.5]);
        assert_eq!(class_centroid(&s, &["a"]).unwrap().values(), &[1.0, 0.0]);
        let s = store(&[("a", &[2.0, 0.0]), ("b", &[0.0, 2.0]), ("c", &[2.0, 2.0])]);
        let c = class_centroid(&s, &["c", "a", "b"]).unwrap();
        assert!((c.values()[0] - 4.0 / 3.0).abs() < 1e-15);
        assert!((c.values()[1] - 4.0 / 3.0).abs() < 1e-15);
        assert!(matches!(class_centroid(&s, &[]), Err(EmbeddingError::NoIds)));
        assert!(matches!(class_centroid(&s, &["zz"]), Err(EmbeddingError::UnknownId(_))));
    }

    #[test]
    fn store_insert_checks_dimension() {
        let mut s = store(&[("a", &[1.0, 0.0])]);
        assert!(s.insert("b", v(&[1.0])).is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(&[("b", &[0.25, -1.5]), ("a", &[1.0, 1e-300])]);
        s.save(&dir.path().join("store")).unwrap();
        assert_eq!(EmbeddingStore::load(&dir.path().join("store")).unwrap(), s);
        std::fs::write(dir.path().join("store.bin"), [0u8; 3]).unwrap();
        assert!(EmbeddingStore::load(&dir.path().join("store")).is_err());
    }

    #[test]
    fn hashing_embedder_is_unit_length() {
        let e = HashingEmbedder::default();
        let x = e.embed_one("The boy, the boy!");
        assert_eq!(x.len(), 256);
        assert!((x.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(x, e.embed_one("the BOY the boy"));
        assert!(EmbeddingVector::new(e.embed_one("")).is_ok());
    }

    struct CountingProvider {
        calls: AtomicUsize,
        inner: HashingEmbedder,
    }

    impl EmbeddingProvider for CountingProvider {
        fn provenance(&self) -> Provenance {
            self.inner.provenance()
        }
        fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, String> {
            self.calls.fetch_add(texts.len(), Ordering::SeqCst);
            self.inner.embed(texts)
        }
    }

    fn records(n: usize) -> Vec<SubjectRecord> {
        (0..n)
            .map(|i| {
                SubjectRecord::new(
                    format!("s{i:02}"),
                    Label::CI,
                    None,
                    Gender::F,
                    70.0,
                    50.0,
                    format!("the boy number {i} falls"),
                    Split::Train,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn cache_reuses_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let provider = CountingProvider { calls: AtomicUsize::new(0), inner: HashingEmbedder::default() };
        let opts = EmbedOptions { cache_dir: Some(dir.path().to_path_buf()), batch_size: 3, parallelism: 2 };
        let recs = records(7);
        let first = embed_texts(&provider, &recs, &opts).unwrap();
        assert_eq!(first.len(), 7);
        assert_eq!(provider.calls.load(Ordering::SeqCst), 7);
        let second = embed_texts(&provider, &recs, &opts).unwrap();
        assert_eq!(provider.calls.load(Ordering::SeqCst), 7);
        assert_eq!(first, second);
    }

    struct Flaky;
    impl EmbeddingProvider for Flaky {
        fn provenance(&self) -> Provenance {
            Provenance { provider: "flaky".into(), model: "x".into() }
        }
        fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, String> {
            if texts.len() > 1 {
                Err("boom".into())
            } else {
                Ok(vec![vec![1.0, 2.0]])
            }
        }
    }

    #[test]
    fn provider_failure_names_subject() {
        let err = embed_texts(&Flaky, &records(3), &EmbedOptions { batch_size: 2, ..Default::default() }).unwrap_err();
        match err {
            EmbeddingError::Transport { subject_id, .. } => assert_eq!(subject_id, "s00"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
