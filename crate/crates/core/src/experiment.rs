//! Config-driven orchestration: strategy suites, result files, reports and
//! the error analysis.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus, CorpusError, Split, SubjectRecord};
use crate::embedding::{
    embed_texts, EmbedOptions, EmbeddingError, EmbeddingProvider, EmbeddingStore, HashingEmbedder, HttpEmbedder,
};
use crate::gateway::{Backend, Gateway, GatewayError, HttpChatBackend, RuleBackend, RunLog, ScriptedBackend};
use crate::label::{Label, Prediction};
use crate::linguistics::{
    profile_from_tagged, read_tagged, LexiconTagger, LinguisticProfile, LinguisticsError, PosTagger, Resources,
    TokenStream,
};
use crate::metrics::{write_report_csv, MetricsError, ReportRow};
use crate::prompt::RationaleSource;
use crate::runner::{
    generate_rationales, run_icl_sweep, run_logprob_eval, run_self_consistency, run_tot, run_zero_shot,
    select_reasoned, sweep, PredictionRecord, RunOptions, RunnerError, ShotCount, StrategySpec, SweepOutcome,
    DEFAULT_SHOTS,
};
use crate::selection::SelectionPolicy;
use crate::stats::{mann_whitney_u_two_sided, UTestMethod};

pub const RUN_LOG_FILE: &str = "run_log.jsonl";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const REPORT_TEXT_FILE: &str = "report.txt";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("environment variable {0} is not set (needed for backend auth)")]
    MissingAuth(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("strategy {strategy}: {source}")]
    Strategy { strategy: String, source: RunnerError },
    #[error("strategy {strategy}: {failed} of {total} subjects failed, above the {threshold} threshold")]
    ThresholdExceeded { strategy: String, failed: usize, total: usize, threshold: f64 },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Linguistics(#[from] LinguisticsError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{0}")]
    Input(String),
}

impl ExperimentError {
    /// 1 for problems found before running anything, 2 for failures during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_)
            | ExperimentError::MissingAuth(_)
            | ExperimentError::Corpus(_)
            | ExperimentError::Input(_) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::Io { path: path.to_path_buf(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub manifest: PathBuf,
    pub transcripts_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Labels CI when the transcript has fewer than `threshold` words.
    Rule,
    /// Replays `replies` in order.
    Scripted,
    /// Chat-completions endpoint.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub name: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replies: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_seconds: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests_per_minute: Option<f64>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

impl BackendConfig {
    pub fn rule(name: impl Into<String>, threshold: usize) -> Self {
        Self {
            name: name.into(),
            kind: BackendKind::Rule,
            threshold: Some(threshold),
            replies: None,
            endpoint: None,
            model: None,
            auth_env: None,
            timeout_seconds: None,
            requests_per_minute: None,
            max_retries: default_retries(),
        }
    }

    pub fn http(name: impl Into<String>, endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Http,
            threshold: None,
            endpoint: Some(endpoint.into()),
            model: Some(model.into()),
            ..Self::rule(name, 0)
        }
    }

    fn validate(&self) -> Result<(), String> {
        let present = |set: bool, field: &str| {
            if set {
                Err(format!("backend {}: {field} does not apply to {:?} backends", self.name, self.kind))
            } else {
                Ok(())
            }
        };
        let required = |set: bool, field: &str| {
            if set {
                Ok(())
            } else {
                Err(format!("backend {}: {field} is required", self.name))
            }
        };
        match self.kind {
            BackendKind::Rule => {
                required(self.threshold.is_some(), "threshold")?;
                present(self.replies.is_some(), "replies")?;
                present(
                    self.endpoint.is_some() || self.model.is_some() || self.auth_env.is_some(),
                    "endpoint/model/auth_env",
                )
            }
            BackendKind::Scripted => {
                required(self.replies.is_some(), "replies")?;
                present(self.threshold.is_some(), "threshold")?;
                present(
                    self.endpoint.is_some() || self.model.is_some() || self.auth_env.is_some(),
                    "endpoint/model/auth_env",
                )
            }
            BackendKind::Http => {
                required(self.endpoint.is_some(), "endpoint")?;
                required(self.model.is_some(), "model")?;
                present(self.threshold.is_some() || self.replies.is_some(), "threshold/replies")
            }
        }
    }
}

fn default_retries() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingConfig {
    Hashing {
        #[serde(default = "default_dimension")]
        dimension: usize,
    },
    Http {
        endpoint: String,
        model: String,
        #[serde(default)]
        auth_env: Option<String>,
        #[serde(default = "default_batch")]
        batch_size: usize,
    },
}

fn default_dimension() -> usize {
    256
}

fn default_batch() -> usize {
    32
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Hashing { dimension: default_dimension() }
    }
}

fn default_shots() -> Vec<usize> {
    DEFAULT_SHOTS.to_vec()
}

fn default_parallelism() -> usize {
    4
}

fn default_threshold() -> f64 {
    0.10
}

fn default_attempts() -> usize {
    2
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

/// A whole experiment. Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub corpus: CorpusConfig,
    pub backends: Vec<BackendConfig>,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    pub strategies: Vec<StrategySpec>,
    #[serde(default = "default_shots")]
    pub shots: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Largest tolerated fraction of failed subjects per strategy.
    #[serde(default = "default_threshold")]
    pub error_threshold: f64,
    /// Tries per training subject when generating rationales.
    #[serde(default = "default_attempts")]
    pub rationale_attempts: usize,
    /// Validation size used by the `split` command.
    #[serde(default)]
    pub validation_n: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let config: Self = serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config and makes its paths absolute relative to the file.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.corpus.manifest, &mut self.corpus.transcripts_dir, &mut self.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |m: String| Err(ExperimentError::Config(m));
        if self.name.trim().is_empty() || self.name.contains(['/', '\\']) {
            return fail(format!("experiment name {:?} must be non-empty and contain no path separators", self.name));
        }
        let mut names = BTreeSet::new();
        for b in &self.backends {
            b.validate().map_err(ExperimentError::Config)?;
            if !names.insert(b.name.as_str()) {
                return fail(format!("backend {:?} defined twice", b.name));
            }
            if let Some(rpm) = b.requests_per_minute {
                if !(rpm.is_finite() && rpm > 0.0) {
                    return fail(format!("backend {}: requests_per_minute must be positive", b.name));
                }
            }
        }
        if self.strategies.is_empty() {
            return fail("no strategies configured".into());
        }
        let mut strategy_names = BTreeSet::new();
        for s in &self.strategies {
            let name = s.name();
            for backend in s.backends() {
                if !names.contains(backend) {
                    return fail(format!("strategy {name} uses undefined backend {backend:?}"));
                }
            }
            s.validate().map_err(|m| ExperimentError::Config(format!("strategy {name}: {m}")))?;
            if !strategy_names.insert(name.clone()) {
                return fail(format!("strategy name {name:?} used twice; set distinct names"));
            }
            if name.contains(['/', '\\']) {
                return fail(format!("strategy name {name:?} contains a path separator"));
            }
        }
        if self.shots.is_empty() {
            return fail("shot set is empty".into());
        }
        if let Some(bad) = self.shots.iter().find(|n| **n < 2 || **n % 2 != 0) {
            return fail(format!("shot value {bad} must be even and at least 2"));
        }
        if self.parallelism == 0 {
            return fail("parallelism must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.error_threshold) {
            return fail(format!("error_threshold {} outside [0, 1]", self.error_threshold));
        }
        if let EmbeddingConfig::Hashing { dimension: 0 } = self.embedding {
            return fail("embedding dimension must be positive".into());
        }
        Ok(())
    }

    fn backend(&self, name: &str) -> &BackendConfig {
        self.backends.iter().find(|b| b.name == name).expect("validated backend reference")
    }

    /// Whether any strategy needs an embedding store.
    pub fn needs_embeddings(&self) -> bool {
        self.strategies.iter().any(|s| match s {
            StrategySpec::Icl { policy, .. } => *policy != SelectionPolicy::Random,
            StrategySpec::ReasoningIcl { .. } | StrategySpec::SelfConsistency { .. } => true,
            _ => false,
        })
    }
}

fn auth_token(var: &Option<String>) -> Result<Option<String>, ExperimentError> {
    match var {
        None => Ok(None),
        Some(v) => std::env::var(v).map(Some).map_err(|_| ExperimentError::MissingAuth(v.clone())),
    }
}

/// Builds the backend for one config entry; auth is read from the environment here.
pub fn build_backend(config: &BackendConfig) -> Result<Arc<dyn Backend>, ExperimentError> {
    config.validate().map_err(ExperimentError::Config)?;
    Ok(match config.kind {
        BackendKind::Rule => Arc::new(RuleBackend::new(config.threshold.unwrap_or_default())),
        BackendKind::Scripted => Arc::new(ScriptedBackend::new(config.replies.clone().unwrap_or_default())),
        BackendKind::Http => {
            let mut backend = HttpChatBackend::new(
                &config.name,
                config.endpoint.clone().unwrap_or_default(),
                config.model.clone().unwrap_or_default(),
            );
            backend.auth_token = auth_token(&config.auth_env)?;
            if let Some(t) = config.timeout_seconds {
                backend.timeout = Duration::from_secs(t);
            }
            Arc::new(backend)
        }
    })
}

pub fn build_embedder(config: &EmbeddingConfig) -> Result<Box<dyn EmbeddingProvider>, ExperimentError> {
    Ok(match config {
        EmbeddingConfig::Hashing { dimension } => Box::new(HashingEmbedder { dimension: *dimension }),
        EmbeddingConfig::Http { endpoint, model, auth_env, .. } => {
            let mut embedder = HttpEmbedder::new(endpoint, model);
            embedder.auth_token = auth_token(auth_env)?;
            Box::new(embedder)
        }
    })
}

/// Embeds every record, caching vectors under `<output_dir>/embedding_cache`.
pub fn embed_corpus(config: &ExperimentConfig, records: &[SubjectRecord]) -> Result<EmbeddingStore, ExperimentError> {
    let provider = build_embedder(&config.embedding)?;
    let batch_size = match &config.embedding {
        EmbeddingConfig::Http { batch_size, .. } => *batch_size,
        EmbeddingConfig::Hashing { .. } => 64,
    };
    let cache_dir = config.output_dir.join("embedding_cache");
    fs::create_dir_all(&cache_dir).map_err(io_err(&cache_dir))?;
    let options = EmbedOptions { cache_dir: Some(cache_dir), batch_size, parallelism: config.parallelism };
    Ok(embed_texts(provider.as_ref(), records, &options)?)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), ExperimentError> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Reads a results file, one record per line.
pub fn read_results(path: &Path) -> Result<Vec<PredictionRecord>, ExperimentError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line)
            .map_err(|e| ExperimentError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        records.push(rec);
    }
    Ok(records)
}

/// What a strategy wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutput {
    pub strategy: String,
    pub file: String,
    pub records: usize,
    pub failed: usize,
    pub chosen_n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub experiment: String,
    pub run_id: String,
    pub run_dir: PathBuf,
    pub strategies: Vec<StrategyOutput>,
    pub metrics: Vec<ReportRow>,
}

/// Overrides a CLI may apply on top of the file config.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunOverrides {
    pub fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(out) = &self.output_dir {
            config.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
    }
}

fn fresh_run_dir(experiment_dir: &Path) -> Result<(String, PathBuf), ExperimentError> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ").to_string();
    for suffix in 0.. {
        let run_id = if suffix == 0 { stamp.clone() } else { format!("{stamp}-{suffix}") };
        let dir = experiment_dir.join(&run_id);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok((run_id, dir)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_err(&dir)(e)),
        }
    }
    unreachable!("suffix range is unbounded")
}

struct Suite<'a> {
    config: &'a ExperimentConfig,
    records: &'a [SubjectRecord],
    store: Option<&'a EmbeddingStore>,
    gateways: BTreeMap<String, Gateway>,
    run_dir: &'a Path,
}

impl Suite<'_> {
    fn split(&self, split: Split) -> Vec<SubjectRecord> {
        self.records.iter().filter(|r| r.split == split).cloned().collect()
    }

    fn shots(&self, shots: ShotCount) -> Vec<usize> {
        match shots {
            ShotCount::Fixed(n) => vec![n],
            ShotCount::Sweep(_) => self.config.shots.clone(),
        }
    }

    fn run(&self, spec: &StrategySpec) -> Result<(Vec<PredictionRecord>, Option<SweepOutcome>), RunnerError> {
        let opts = RunOptions::for_spec(spec, self.config.parallelism, self.config.seed);
        let gw = &self.gateways[spec.backend()];
        let dev: Vec<SubjectRecord> =
            self.records.iter().filter(|r| matches!(r.split, Split::Train | Split::Validation)).cloned().collect();
        let test = self.split(Split::Test);
        match spec {
            StrategySpec::ZeroShot { temperature, split, .. } => {
                Ok((run_zero_shot(&split.select(self.records), gw, *temperature, &opts)?, None))
            }
            StrategySpec::Tot { variant, split, .. } => {
                Ok((run_tot(&split.select(self.records), gw, *variant, &opts)?, None))
            }
            StrategySpec::LogprobEval { prompt, top_logprobs, split, .. } => {
                Ok((run_logprob_eval(&split.select(self.records), gw, *prompt, *top_logprobs, &opts)?, None))
            }
            StrategySpec::Icl { policy, shots, temperature, .. } => {
                let outcome =
                    run_icl_sweep(&dev, &test, *policy, &self.shots(*shots), self.store, gw, *temperature, &opts)?;
                Ok((outcome.test.clone(), Some(outcome)))
            }
            StrategySpec::ReasoningIcl { rationale_backend, shots, temperature, .. } => {
                let rationales = self.rationales(spec, rationale_backend, &opts)?;
                let validation = self.split(Split::Validation);
                let outcome = sweep(&self.shots(*shots), &validation, &test, |split, n| {
                    let demos = self.reasoned(&rationales, n)?;
                    run_self_consistency(split, &demos, gw, 1, *temperature, &opts)
                })?;
                Ok((outcome.test.clone(), Some(outcome)))
            }
            StrategySpec::SelfConsistency { rationale_backend, shots, runs, temperature, .. } => {
                let rationales = self.rationales(spec, rationale_backend, &opts)?;
                let demos = self.reasoned(&rationales, *shots)?;
                Ok((run_self_consistency(&test, &demos, gw, *runs, *temperature, &opts)?, None))
            }
        }
    }

    fn reasoned(
        &self,
        rationales: &[crate::prompt::ReasonedDemonstration],
        n: usize,
    ) -> Result<Vec<crate::prompt::ReasonedDemonstration>, RunnerError> {
        let store = self.store.ok_or(RunnerError::MissingEmbedding {
            policy: SelectionPolicy::AverageSimilar,
            subject_id: "(training pool)".into(),
        })?;
        select_reasoned(rationales, &self.split(Split::Train), store, n, self.config.seed)
    }

    fn rationales(
        &self,
        spec: &StrategySpec,
        teacher: &Option<String>,
        opts: &RunOptions,
    ) -> Result<Vec<crate::prompt::ReasonedDemonstration>, RunnerError> {
        let (gw, source) = match teacher {
            Some(name) => (&self.gateways[name], RationaleSource::Teacher),
            None => (&self.gateways[spec.backend()], RationaleSource::SelfGenerated),
        };
        let demos = generate_rationales(&self.split(Split::Train), gw, source, self.config.rationale_attempts, opts)?;
        let path = self.run_dir.join(format!("{}.rationales.jsonl", spec.name()));
        if let Err(e) = write_jsonl(&path, &demos) {
            log::warn!("could not save rationales: {e}");
        }
        Ok(demos)
    }
}

/// Runs every configured strategy and writes results under
/// `<output_dir>/<name>/<run_id>/`: one `<strategy>.jsonl` per strategy,
/// sweep tables, the request log, a frozen config copy and a metrics summary.
pub fn cmd_run(config: &ExperimentConfig) -> Result<RunSummary, ExperimentError> {
    config.validate()?;
    // Fail on missing credentials before any network traffic.
    let used: BTreeSet<&str> = config.strategies.iter().flat_map(|s| s.backends()).collect();
    let mut backends = BTreeMap::new();
    for name in &used {
        backends.insert(name.to_string(), (build_backend(config.backend(name))?, config.backend(name)));
    }
    if config.needs_embeddings() {
        if let EmbeddingConfig::Http { auth_env, .. } = &config.embedding {
            auth_token(auth_env)?;
        }
    }
    let records = load_corpus(&config.corpus.manifest, &config.corpus.transcripts_dir)?;

    let experiment_dir = config.output_dir.join(&config.name);
    fs::create_dir_all(&experiment_dir).map_err(io_err(&experiment_dir))?;
    let (run_id, run_dir) = fresh_run_dir(&experiment_dir)?;
    write_json(&run_dir.join(RESOLVED_CONFIG_FILE), config)?;
    let log = Arc::new(RunLog::create(&run_dir.join(RUN_LOG_FILE))?);
    let gateways: BTreeMap<String, Gateway> = backends
        .into_iter()
        .map(|(name, (backend, cfg))| {
            let mut gw = Gateway::new(backend).with_retries(cfg.max_retries).with_log(log.clone());
            if let Some(rpm) = cfg.requests_per_minute {
                gw = gw.with_rate_limit(rpm);
            }
            (name, gw)
        })
        .collect();

    let store = if config.needs_embeddings() { Some(embed_corpus(config, &records)?) } else { None };
    let suite = Suite { config, records: &records, store: store.as_ref(), gateways, run_dir: &run_dir };

    let mut outputs = Vec::new();
    let mut metrics = Vec::new();
    for spec in &config.strategies {
        let name = spec.name();
        log::info!("running strategy {name}");
        let (results, outcome) =
            suite.run(spec).map_err(|source| ExperimentError::Strategy { strategy: name.clone(), source })?;
        let file = format!("{name}.jsonl");
        write_jsonl(&run_dir.join(&file), &results)?;
        if let Some(outcome) = &outcome {
            write_json(&run_dir.join(format!("{name}.sweep.json")), outcome)?;
        }
        let failed = results.iter().filter(|r| r.failed()).count();
        let chosen_n = outcome.as_ref().map(|o| o.chosen_n);
        metrics.push(ReportRow::from_records(&name, chosen_n.or_else(|| common_n(&results)), &results));
        outputs.push(StrategyOutput { strategy: name.clone(), file, records: results.len(), failed, chosen_n });
        if failed as f64 > config.error_threshold * results.len() as f64 {
            let partial = RunSummary {
                experiment: config.name.clone(),
                run_id: run_id.clone(),
                run_dir: run_dir.clone(),
                strategies: outputs,
                metrics,
            };
            write_json(&run_dir.join(SUMMARY_FILE), &partial)?;
            return Err(ExperimentError::ThresholdExceeded {
                strategy: name,
                failed,
                total: results.len(),
                threshold: config.error_threshold,
            });
        }
    }
    let summary = RunSummary { experiment: config.name.clone(), run_id, run_dir, strategies: outputs, metrics };
    write_json(&summary.run_dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn common_n(records: &[PredictionRecord]) -> Option<usize> {
    let first = records.first()?.n?;
    records.iter().all(|r| r.n == Some(first)).then_some(first)
}

fn is_results_file(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    name.ends_with(".jsonl") && name != RUN_LOG_FILE && !name.ends_with(".rationales.jsonl")
}

/// Metrics recomputed from the result files of one run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub sweeps: BTreeMap<String, SweepOutcome>,
}

impl Report {
    /// Plain-text table with 4-decimal and 2-decimal F1 values.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<28} {:>4} {:>8} {:>6} {:>8} {:>8} {:>8}\n",
            "strategy", "n", "F1_CI", "(2dp)", "F1_CN", "AUC", "abstain"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<28} {:>4} {:>8.4} {:>6.2} {:>8.4} {:>8} {:>8}\n",
                r.strategy,
                r.n.map(|n| n.to_string()).unwrap_or_else(|| "-".into()),
                r.f1_ci,
                r.f1_ci,
                r.f1_cn,
                r.auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into()),
                r.counts.abstains(),
            ));
        }
        for (name, sweep) in &self.sweeps {
            if sweep.validation.is_empty() {
                continue;
            }
            out.push_str(&format!("\nvalidation sweep: {name}\n"));
            for p in &sweep.validation {
                let mark = if p.n == sweep.chosen_n { "  <- chosen" } else { "" };
                out.push_str(&format!("  n={:<3} F1_CI={:.4} abstains={}{mark}\n", p.n, p.f1_ci, p.abstains));
            }
        }
        out
    }
}

/// Recomputes metrics for every result file in `results_dir` and writes
/// `report.csv` and `report.txt` there.
pub fn cmd_report(results_dir: &Path) -> Result<Report, ExperimentError> {
    let mut files: Vec<PathBuf> = fs::read_dir(results_dir)
        .map_err(io_err(results_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_results_file(p))
        .collect();
    files.sort();
    let mut rows = Vec::new();
    let mut sweeps = BTreeMap::new();
    for path in &files {
        let records = read_results(path)?;
        if records.is_empty() {
            continue;
        }
        let name = records[0].strategy.clone();
        let sweep_path = path.with_file_name(format!("{name}.sweep.json"));
        let mut n = common_n(&records);
        if sweep_path.exists() {
            let text = fs::read_to_string(&sweep_path).map_err(io_err(&sweep_path))?;
            let outcome: SweepOutcome = serde_json::from_str(&text)
                .map_err(|e| ExperimentError::Input(format!("{}: {e}", sweep_path.display())))?;
            n = Some(outcome.chosen_n);
            sweeps.insert(name.clone(), outcome);
        }
        rows.push(ReportRow::from_records(&name, n, &records));
    }
    if rows.is_empty() {
        return Err(ExperimentError::Input(format!("no results files in {}", results_dir.display())));
    }
    rows.sort_by(|a, b| b.f1_ci.total_cmp(&a.f1_ci).then_with(|| a.strategy.cmp(&b.strategy)));
    let csv_path = results_dir.join(REPORT_CSV_FILE);
    let file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    write_report_csv(&rows, file)?;
    let report = Report { rows, sweeps };
    let text_path = results_dir.join(REPORT_TEXT_FILE);
    fs::write(&text_path, report.to_text()).map_err(io_err(&text_path))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OutcomeGroup {
    TP,
    FN,
    TN,
    FP,
}

impl OutcomeGroup {
    pub fn of(truth: Label, prediction: Prediction) -> Option<Self> {
        match (truth, prediction) {
            (Label::CI, Prediction::CI) => Some(OutcomeGroup::TP),
            (Label::CI, Prediction::CN) => Some(OutcomeGroup::FN),
            (Label::CN, Prediction::CN) => Some(OutcomeGroup::TN),
            (Label::CN, Prediction::CI) => Some(OutcomeGroup::FP),
            (_, Prediction::Abstain) => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeGroup::TP => "TP",
            OutcomeGroup::FN => "FN",
            OutcomeGroup::TN => "TN",
            OutcomeGroup::FP => "FP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectFeatures {
    pub subject_id: String,
    pub group: OutcomeGroup,
    pub profile: LinguisticProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UTestRow {
    pub feature: String,
    pub comparison: String,
    pub u: f64,
    pub p: f64,
    pub method: UTestMethod,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorAnalysisReport {
    pub strategy: String,
    pub groups: BTreeMap<OutcomeGroup, Vec<String>>,
    pub features: Vec<SubjectFeatures>,
    pub tests: Vec<UTestRow>,
    pub flagged: Vec<String>,
    pub notes: Vec<String>,
}

/// Inputs to [`cmd_error_analysis`] beyond the results and corpus.
#[derive(Default)]
pub struct AnalysisOptions<'a> {
    /// External tagger output: `<subject_id>.tsv` files in the tagger exchange format.
    pub tagged_dir: Option<&'a Path>,
    pub tagger: Option<&'a dyn PosTagger>,
    pub resources: Option<&'a Resources>,
}

/// Computes linguistic profiles for every non-abstaining prediction, groups
/// them into TP/FN/TN/FP and compares TP vs FN and TN vs FP per feature.
pub fn error_analysis(
    records: &[PredictionRecord],
    corpus: &[SubjectRecord],
    options: &AnalysisOptions<'_>,
) -> Result<ErrorAnalysisReport, ExperimentError> {
    let bundled;
    let resources = match options.resources {
        Some(r) => r,
        None => {
            bundled = Resources::bundled();
            &bundled
        }
    };
    let default_tagger = LexiconTagger;
    let tagger = options.tagger.unwrap_or(&default_tagger);
    let by_id: BTreeMap<&str, &SubjectRecord> = corpus.iter().map(|r| (r.subject_id.as_str(), r)).collect();

    let mut groups: BTreeMap<OutcomeGroup, Vec<String>> = BTreeMap::new();
    let mut features = Vec::new();
    let mut notes = Vec::new();
    let abstained = records.iter().filter(|r| r.final_label.is_abstain()).count();
    if abstained > 0 {
        notes.push(format!("{abstained} abstaining prediction(s) excluded from the groups"));
    }
    let mut sorted: Vec<&PredictionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    for rec in sorted {
        let Some(group) = OutcomeGroup::of(rec.true_label, rec.final_label) else {
            continue;
        };
        let subject = by_id
            .get(rec.subject_id.as_str())
            .ok_or_else(|| ExperimentError::Input(format!("subject {} not in corpus", rec.subject_id)))?;
        let (tagged, ends) = match options.tagged_dir {
            Some(dir) => {
                let path = dir.join(format!("{}.tsv", subject.subject_id));
                let text = fs::read_to_string(&path).map_err(io_err(&path))?;
                read_tagged(&text)?
            }
            None => {
                let stream = crate::linguistics::tokenize(&subject.transcript_text);
                let tagged = tagger.tag(&stream);
                let TokenStream { sentence_ends, .. } = stream;
                (tagged, sentence_ends)
            }
        };
        let profile = profile_from_tagged(&tagged, &ends, subject.duration_seconds, resources)?;
        groups.entry(group).or_default().push(subject.subject_id.clone());
        features.push(SubjectFeatures { subject_id: subject.subject_id.clone(), group, profile });
    }

    let mut tests = Vec::new();
    for (left, right) in [(OutcomeGroup::TP, OutcomeGroup::FN), (OutcomeGroup::TN, OutcomeGroup::FP)] {
        let comparison = format!("{} vs {}", left.as_str(), right.as_str());
        let members = |g: OutcomeGroup| features.iter().filter(move |f| f.group == g).collect::<Vec<_>>();
        let (a, b) = (members(left), members(right));
        if a.is_empty() || b.is_empty() {
            let empty = if a.is_empty() { left } else { right };
            notes.push(format!("{comparison} skipped: no {} subjects", empty.as_str()));
            continue;
        }
        for (col, name) in LinguisticProfile::column_names().into_iter().enumerate() {
            let values = |set: &[&SubjectFeatures]| set.iter().map(|f| f.profile.columns()[col].1).collect::<Vec<_>>();
            match mann_whitney_u_two_sided(&values(&a), &values(&b)) {
                Ok(r) => tests.push(UTestRow {
                    feature: name.to_string(),
                    comparison: comparison.clone(),
                    u: r.u_statistic,
                    p: r.p_two_sided,
                    method: r.method,
                    flagged: r.flagged,
                }),
                Err(e) => notes.push(format!("{comparison} {name} skipped: {e}")),
            }
        }
    }
    if !tests.is_empty() {
        notes.push("p-values are unadjusted for multiple comparisons".into());
    }
    let flagged = tests.iter().filter(|t| t.flagged).map(|t| format!("{} ({})", t.feature, t.comparison)).collect();
    Ok(ErrorAnalysisReport {
        strategy: records.first().map(|r| r.strategy.clone()).unwrap_or_default(),
        groups,
        features,
        tests,
        flagged,
        notes,
    })
}

/// [`error_analysis`] over a results file, written to `out_dir` as
/// `error_analysis.json`, `error_analysis_features.csv` and `error_analysis_tests.csv`.
pub fn cmd_error_analysis(
    results_file: &Path,
    corpus: &[SubjectRecord],
    out_dir: &Path,
    options: &AnalysisOptions<'_>,
) -> Result<ErrorAnalysisReport, ExperimentError> {
    let records = read_results(results_file)?;
    let report = error_analysis(&records, corpus, options)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_json(&out_dir.join("error_analysis.json"), &report)?;

    let csv_err = |e: csv::Error| ExperimentError::Input(e.to_string());
    let path = out_dir.join("error_analysis_features.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    let mut header = vec!["subject_id".to_string(), "group".to_string()];
    header.extend(LinguisticProfile::column_names().into_iter().map(str::to_string));
    w.write_record(&header).map_err(csv_err)?;
    for f in &report.features {
        let mut row = vec![f.subject_id.clone(), f.group.as_str().to_string()];
        row.extend(f.profile.columns().into_iter().map(|(_, v)| format!("{v}")));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = out_dir.join("error_analysis_tests.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["feature", "comparison", "U", "p", "method", "flagged"]).map_err(csv_err)?;
    for t in &report.tests {
        w.write_record([
            t.feature.clone(),
            t.comparison.clone(),
            format!("{}", t.u),
            format!("{}", t.p),
            t.method.as_str().to_string(),
            t.flagged.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(report)
}

/// Most recent run directory of an experiment (run ids sort by time).
pub fn latest_run_dir(config: &ExperimentConfig) -> Result<PathBuf, ExperimentError> {
    let dir = config.output_dir.join(&config.name);
    let mut runs: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    runs.sort();
    runs.pop().ok_or_else(|| ExperimentError::Input(format!("no runs under {}", dir.display())))
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}
