//! End-to-end execution of each prompting strategy over a split.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Split, SubjectRecord};
use crate::embedding::EmbeddingStore;
use crate::gateway::{
    first_json_object, parse_label, parse_tot_consensus, CompletionRequest, CompletionResponse, Gateway, ParsedLabel,
    TotVariant,
};
use crate::label::{Label, Prediction};
use crate::metrics::{confusion_from_records, f1_for_class};
use crate::prompt::{
    render, Lexicon, PromptError, PromptInput, PromptKind, RationaleSource, ReasonedDemonstration, RenderedPrompt,
};
use crate::selection::{select_demonstrations, DemoPool, DemonstrationSet, SelectionError, SelectionPolicy};

pub const SCHEMA_VERSION: u32 = 1;
/// Shot counts swept when a config does not list its own.
pub const DEFAULT_SHOTS: [usize; 6] = [2, 4, 6, 8, 10, 12];
pub const DEFAULT_TOP_LOGPROBS: u32 = 5;
pub const DEFAULT_CONSISTENCY_RUNS: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("no shot counts to evaluate")]
    NoShots,
    #[error("{policy} selection needs embeddings for {subject_id}")]
    MissingEmbedding { policy: SelectionPolicy, subject_id: String },
    #[error("no rationale could be generated for any of {attempted} training subjects")]
    NoRationales { attempted: usize },
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Which subjects a demonstration-free strategy is evaluated on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    #[default]
    Test,
    Validation,
    All,
}

impl EvalSplit {
    pub fn select(self, records: &[SubjectRecord]) -> Vec<SubjectRecord> {
        records
            .iter()
            .filter(|r| match self {
                EvalSplit::Test => r.split == Split::Test,
                EvalSplit::Validation => r.split == Split::Validation,
                EvalSplit::All => true,
            })
            .cloned()
            .collect()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EvalSplit::Test => "test",
            EvalSplit::Validation => "validation",
            EvalSplit::All => "all",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKeyword {
    Sweep,
}

/// A fixed shot count, or `"sweep"` over the experiment's shot set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShotCount {
    Fixed(usize),
    Sweep(SweepKeyword),
}

fn zero() -> f64 {
    0.0
}

fn default_runs() -> usize {
    DEFAULT_CONSISTENCY_RUNS
}

fn default_top_logprobs() -> u32 {
    DEFAULT_TOP_LOGPROBS
}

fn default_finetune_kind() -> PromptKind {
    PromptKind::FinetuneEval
}

fn default_sc_shots() -> usize {
    2
}

/// One strategy as written in an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategySpec {
    ZeroShot {
        #[serde(default)]
        name: Option<String>,
        backend: String,
        #[serde(default = "zero")]
        temperature: f64,
        #[serde(default)]
        split: EvalSplit,
    },
    Icl {
        #[serde(default)]
        name: Option<String>,
        backend: String,
        policy: SelectionPolicy,
        shots: ShotCount,
        #[serde(default = "zero")]
        temperature: f64,
    },
    ReasoningIcl {
        #[serde(default)]
        name: Option<String>,
        backend: String,
        /// Teacher backend for rationales; the strategy's own backend when absent.
        #[serde(default)]
        rationale_backend: Option<String>,
        shots: ShotCount,
        #[serde(default = "zero")]
        temperature: f64,
    },
    SelfConsistency {
        #[serde(default)]
        name: Option<String>,
        backend: String,
        #[serde(default)]
        rationale_backend: Option<String>,
        #[serde(default = "default_sc_shots")]
        shots: usize,
        #[serde(default = "default_runs")]
        runs: usize,
        #[serde(default = "zero")]
        temperature: f64,
    },
    Tot {
        #[serde(default)]
        name: Option<String>,
        backend: String,
        variant: TotVariant,
        #[serde(default)]
        split: EvalSplit,
    },
    LogprobEval {
        #[serde(default)]
        name: Option<String>,
        backend: String,
        #[serde(default = "default_finetune_kind")]
        prompt: PromptKind,
        #[serde(default = "default_top_logprobs")]
        top_logprobs: u32,
        #[serde(default)]
        split: EvalSplit,
    },
}

impl StrategySpec {
    /// Configured name, or one derived from the kind and its main parameter.
    pub fn name(&self) -> String {
        let explicit = match self {
            StrategySpec::ZeroShot { name, .. }
            | StrategySpec::Icl { name, .. }
            | StrategySpec::ReasoningIcl { name, .. }
            | StrategySpec::SelfConsistency { name, .. }
            | StrategySpec::Tot { name, .. }
            | StrategySpec::LogprobEval { name, .. } => name.clone(),
        };
        explicit.unwrap_or_else(|| match self {
            StrategySpec::ZeroShot { .. } => "zero_shot".into(),
            StrategySpec::Icl { policy, .. } => format!("icl_{policy}"),
            StrategySpec::ReasoningIcl { rationale_backend: Some(_), .. } => "reasoning_icl_teacher".into(),
            StrategySpec::ReasoningIcl { .. } => "reasoning_icl_self".into(),
            StrategySpec::SelfConsistency { temperature, .. } => {
                format!("self_consistency_t{temperature}")
            }
            StrategySpec::Tot { variant, .. } => format!("tot_{}", variant.as_str()),
            StrategySpec::LogprobEval { prompt, .. } => format!("logprob_{prompt}"),
        })
    }

    pub fn backend(&self) -> &str {
        match self {
            StrategySpec::ZeroShot { backend, .. }
            | StrategySpec::Icl { backend, .. }
            | StrategySpec::ReasoningIcl { backend, .. }
            | StrategySpec::SelfConsistency { backend, .. }
            | StrategySpec::Tot { backend, .. }
            | StrategySpec::LogprobEval { backend, .. } => backend,
        }
    }

    /// Every backend the strategy calls.
    pub fn backends(&self) -> Vec<&str> {
        let mut out = vec![self.backend()];
        if let StrategySpec::ReasoningIcl { rationale_backend: Some(b), .. }
        | StrategySpec::SelfConsistency { rationale_backend: Some(b), .. } = self
        {
            out.push(b);
        }
        out
    }

    /// Short digest of the spec's canonical JSON.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    /// Checks parameter combinations that serde cannot.
    pub fn validate(&self) -> Result<(), String> {
        let check_temp = |t: f64| {
            if t.is_finite() && t >= 0.0 {
                Ok(())
            } else {
                Err(format!("temperature {t} must be finite and non-negative"))
            }
        };
        let check_shots = |shots: &ShotCount| match shots {
            ShotCount::Fixed(n) if *n < 2 || n % 2 != 0 => Err(format!("shot count {n} must be even and at least 2")),
            _ => Ok(()),
        };
        match self {
            StrategySpec::ZeroShot { temperature, .. } => check_temp(*temperature),
            StrategySpec::Icl { shots, temperature, .. } | StrategySpec::ReasoningIcl { shots, temperature, .. } => {
                check_shots(shots)?;
                check_temp(*temperature)
            }
            StrategySpec::SelfConsistency { shots, runs, temperature, .. } => {
                check_shots(&ShotCount::Fixed(*shots))?;
                if *runs == 0 {
                    return Err("runs must be at least 1".into());
                }
                check_temp(*temperature)
            }
            StrategySpec::Tot { .. } => Ok(()),
            StrategySpec::LogprobEval { top_logprobs, .. } => {
                if *top_logprobs == 0 {
                    Err("top_logprobs must be at least 1".into())
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// One model decision about one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub schema_version: u32,
    pub subject_id: String,
    pub strategy: String,
    pub strategy_fingerprint: String,
    pub prompt_kind: PromptKind,
    pub prompt_hash: String,
    pub split: Split,
    pub true_label: Label,
    pub n: Option<usize>,
    pub demo_ids: Vec<String>,
    pub temperature: f64,
    pub raw_outputs: Vec<String>,
    pub parsed_labels: Vec<Prediction>,
    pub final_label: Prediction,
    pub p_ci: Option<f64>,
    pub rationales: Vec<String>,
    /// Failure messages of calls that produced no response.
    pub errors: Vec<String>,
}

impl PredictionRecord {
    pub fn failed(&self) -> bool {
        !self.errors.is_empty() && self.final_label.is_abstain()
    }
}

/// Settings shared by every run function.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub parallelism: usize,
    pub seed: u64,
    pub strategy: String,
    pub fingerprint: String,
}

impl RunOptions {
    pub fn new(strategy: impl Into<String>) -> Self {
        Self { parallelism: 1, seed: 0, strategy: strategy.into(), fingerprint: String::new() }
    }

    pub fn for_spec(spec: &StrategySpec, parallelism: usize, seed: u64) -> Self {
        Self { parallelism, seed, strategy: spec.name(), fingerprint: spec.fingerprint() }
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Applies `f` to every item on up to `parallelism` threads, keeping input order.
pub fn parallel_map<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = parallelism.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                slots.lock().unwrap()[i] = Some(out);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// Majority over non-abstaining votes; a tie goes to CI and no votes to Abstain.
pub fn majority_vote(votes: &[Prediction]) -> Prediction {
    let ci = votes.iter().filter(|v| **v == Prediction::CI).count();
    let cn = votes.iter().filter(|v| **v == Prediction::CN).count();
    match (ci, cn) {
        (0, 0) => Prediction::Abstain,
        (ci, cn) if ci >= cn => Prediction::CI,
        _ => Prediction::CN,
    }
}

struct Call<'a> {
    prompt: RenderedPrompt,
    n: Option<usize>,
    demo_ids: Vec<String>,
    temperature: f64,
    runs: usize,
    parse: &'a (dyn Fn(&CompletionResponse) -> (ParsedLabel, Option<f64>) + Sync),
    logprobs: Option<u32>,
}

fn predict(gateway: &Gateway, subject: &SubjectRecord, call: Call<'_>, opts: &RunOptions) -> PredictionRecord {
    let mut request = CompletionRequest::from_prompt(&call.prompt, call.temperature);
    if let Some(k) = call.logprobs {
        request = request.with_logprobs(k);
    }
    let mut raw_outputs = Vec::with_capacity(call.runs);
    let mut parsed_labels = Vec::with_capacity(call.runs);
    let mut rationales = Vec::new();
    let mut errors = Vec::new();
    let mut p_ci = None;
    for _ in 0..call.runs {
        match gateway.complete(&request) {
            Ok(resp) => {
                let (parsed, p) = (call.parse)(&resp);
                raw_outputs.push(resp.text);
                parsed_labels.push(parsed.prediction);
                rationales.extend(parsed.rationale);
                p_ci = p_ci.or(p);
            }
            Err(e) => {
                log::warn!("{}: subject {}: {e}", opts.strategy, subject.subject_id);
                raw_outputs.push(String::new());
                parsed_labels.push(Prediction::Abstain);
                errors.push(e.to_string());
            }
        }
    }
    PredictionRecord {
        schema_version: SCHEMA_VERSION,
        subject_id: subject.subject_id.clone(),
        strategy: opts.strategy.clone(),
        strategy_fingerprint: opts.fingerprint.clone(),
        prompt_kind: call.prompt.kind,
        prompt_hash: call.prompt.hash,
        split: subject.split,
        true_label: subject.diagnosis,
        n: call.n,
        demo_ids: call.demo_ids,
        temperature: call.temperature,
        final_label: majority_vote(&parsed_labels),
        raw_outputs,
        parsed_labels,
        p_ci,
        rationales,
        errors,
    }
}

fn finish(mut records: Vec<PredictionRecord>) -> Vec<PredictionRecord> {
    records.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    records
}

/// Runs `body` per subject concurrently and returns records sorted by subject_id.
fn run_each<F>(split: &[SubjectRecord], opts: &RunOptions, body: F) -> Result<Vec<PredictionRecord>, RunnerError>
where
    F: Fn(&SubjectRecord) -> Result<PredictionRecord, RunnerError> + Sync,
{
    if split.is_empty() {
        return Err(RunnerError::EmptySplit("evaluation"));
    }
    let results = parallel_map(split, opts.parallelism, body);
    Ok(finish(results.into_iter().collect::<Result<Vec<_>, _>>()?))
}

fn label_parser(kind: PromptKind) -> impl Fn(&CompletionResponse) -> (ParsedLabel, Option<f64>) + Sync {
    let lexicon = kind.lexicon();
    move |resp: &CompletionResponse| (parse_label(&resp.text, &lexicon), None)
}

/// Zero-shot classification, one greedy completion per subject.
pub fn run_zero_shot(
    split: &[SubjectRecord],
    gateway: &Gateway,
    temperature: f64,
    opts: &RunOptions,
) -> Result<Vec<PredictionRecord>, RunnerError> {
    let parse = label_parser(PromptKind::ZeroShot);
    run_each(split, opts, |subject| {
        let prompt = render(PromptKind::ZeroShot, &PromptInput::new(&subject.transcript_text))?;
        let call = Call { prompt, n: None, demo_ids: vec![], temperature, runs: 1, parse: &parse, logprobs: None };
        Ok(predict(gateway, subject, call, opts))
    })
}

fn test_embedding<'s>(
    policy: SelectionPolicy,
    store: Option<&'s EmbeddingStore>,
    subject: &SubjectRecord,
) -> Result<Option<&'s crate::embedding::EmbeddingVector>, RunnerError> {
    if !policy.per_subject() {
        return Ok(None);
    }
    store
        .and_then(|s| s.get(&subject.subject_id))
        .map(Some)
        .ok_or_else(|| RunnerError::MissingEmbedding { policy, subject_id: subject.subject_id.clone() })
}

/// Few-shot classification at a fixed shot count. Demonstrations are chosen
/// per subject for similarity policies and once for the others.
pub fn run_icl(
    split: &[SubjectRecord],
    pool: &DemoPool<'_>,
    policy: SelectionPolicy,
    n: usize,
    gateway: &Gateway,
    temperature: f64,
    opts: &RunOptions,
) -> Result<Vec<PredictionRecord>, RunnerError> {
    let shared =
        if policy.per_subject() { None } else { Some(select_demonstrations(policy, n, None, pool, opts.seed)?) };
    let parse = label_parser(PromptKind::FewShot);
    run_each(split, opts, |subject| {
        let own;
        let demos: &DemonstrationSet = match &shared {
            Some(set) => set,
            None => {
                let emb = test_embedding(policy, pool.store(), subject)?;
                own = select_demonstrations(policy, n, emb, pool, opts.seed)?;
                &own
            }
        };
        let prompt = render(PromptKind::FewShot, &PromptInput::new(&subject.transcript_text).with_demos(demos))?;
        let demo_ids = demos.ids().into_iter().map(str::to_string).collect();
        let call = Call { prompt, n: Some(n), demo_ids, temperature, runs: 1, parse: &parse, logprobs: None };
        Ok(predict(gateway, subject, call, opts))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub f1_ci: f64,
    pub abstains: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub chosen_n: usize,
    pub validation: Vec<SweepPoint>,
    #[serde(skip)]
    pub test: Vec<PredictionRecord>,
}

/// Shot count with the best validation F1(CI); ties go to the smallest n.
pub fn choose_n(points: &[SweepPoint]) -> Option<usize> {
    points.iter().min_by(|a, b| b.f1_ci.total_cmp(&a.f1_ci).then(a.n.cmp(&b.n))).map(|p| p.n)
}

/// Evaluates `eval` on the validation split for every shot count, then once
/// on the test split at the chosen count.
pub fn sweep<F>(
    shots: &[usize],
    validation: &[SubjectRecord],
    test: &[SubjectRecord],
    eval: F,
) -> Result<SweepOutcome, RunnerError>
where
    F: Fn(&[SubjectRecord], usize) -> Result<Vec<PredictionRecord>, RunnerError>,
{
    let mut shots = shots.to_vec();
    shots.sort_unstable();
    shots.dedup();
    if shots.is_empty() {
        return Err(RunnerError::NoShots);
    }
    if test.is_empty() {
        return Err(RunnerError::EmptySplit("test"));
    }
    let mut points = Vec::new();
    let chosen_n = if shots.len() == 1 {
        shots[0]
    } else {
        if validation.is_empty() {
            return Err(RunnerError::EmptySplit("validation"));
        }
        for &n in &shots {
            let records = eval(validation, n)?;
            let counts = confusion_from_records(&records);
            points.push(SweepPoint { n, f1_ci: f1_for_class(&counts, Label::CI), abstains: counts.abstains() });
        }
        choose_n(&points).expect("non-empty sweep")
    };
    let test = eval(test, chosen_n)?;
    Ok(SweepOutcome { chosen_n, validation: points, test })
}

/// Few-shot sweep: the pool is the training part of `dev`, shot counts are
/// scored on its validation part, and the test split is run at the winner.
#[allow(clippy::too_many_arguments)]
pub fn run_icl_sweep(
    dev: &[SubjectRecord],
    test: &[SubjectRecord],
    policy: SelectionPolicy,
    shots: &[usize],
    store: Option<&EmbeddingStore>,
    gateway: &Gateway,
    temperature: f64,
    opts: &RunOptions,
) -> Result<SweepOutcome, RunnerError> {
    let pool = DemoPool::new(dev, store)?;
    let validation: Vec<SubjectRecord> = dev.iter().filter(|r| r.split == Split::Validation).cloned().collect();
    sweep(shots, &validation, test, |split, n| run_icl(split, &pool, policy, n, gateway, temperature, opts))
}

/// Asks `gateway` to explain each record's known label. Records whose reply
/// has no `reason` after `attempts` tries are skipped with a warning.
/// Output keeps input order.
pub fn generate_rationales(
    train: &[SubjectRecord],
    gateway: &Gateway,
    source: RationaleSource,
    attempts: usize,
    opts: &RunOptions,
) -> Result<Vec<ReasonedDemonstration>, RunnerError> {
    let results = parallel_map(train, opts.parallelism, |record| {
        let prompt = render(
            PromptKind::RationaleGeneration,
            &PromptInput::new(&record.transcript_text).with_label(record.diagnosis),
        )?;
        let request = CompletionRequest::from_prompt(&prompt, 0.0);
        for attempt in 1..=attempts.max(1) {
            match gateway.complete(&request) {
                Ok(resp) => {
                    let reason = first_json_object(&resp.text)
                        .and_then(|m| m.get("reason").and_then(|v| v.as_str()).map(str::to_string))
                        .filter(|r| !r.trim().is_empty());
                    if let Some(rationale_text) = reason {
                        return Ok(Some(ReasonedDemonstration {
                            subject_id: record.subject_id.clone(),
                            transcript_text: record.transcript_text.clone(),
                            rationale_text,
                            label: record.diagnosis,
                            rationale_source: source,
                        }));
                    }
                    log::debug!("rationale for {} attempt {attempt}: no reason field", record.subject_id);
                }
                Err(e) => log::debug!("rationale for {} attempt {attempt}: {e}", record.subject_id),
            }
        }
        log::warn!("no rationale for {} after {} attempt(s); excluded", record.subject_id, attempts.max(1));
        Ok(None)
    });
    let demos: Vec<ReasonedDemonstration> =
        results.into_iter().collect::<Result<Vec<_>, RunnerError>>()?.into_iter().flatten().collect();
    if demos.is_empty() {
        return Err(RunnerError::NoRationales { attempted: train.len() });
    }
    Ok(demos)
}

/// Picks reasoned demonstrations with the centroid policy from the training
/// subjects that have a rationale.
pub fn select_reasoned(
    rationales: &[ReasonedDemonstration],
    train: &[SubjectRecord],
    store: &EmbeddingStore,
    n: usize,
    seed: u64,
) -> Result<Vec<ReasonedDemonstration>, RunnerError> {
    let eligible = train.iter().filter(|r| rationales.iter().any(|d| d.subject_id == r.subject_id));
    let pool = DemoPool::from_records(eligible, Some(store))?;
    let set = select_demonstrations(SelectionPolicy::AverageSimilar, n, None, &pool, seed)?;
    Ok(set
        .items
        .iter()
        .map(|item| {
            rationales.iter().find(|d| d.subject_id == item.subject_id).cloned().expect("pool limited to rationales")
        })
        .collect())
}

/// `runs` completions of the same reasoning prompt per subject, combined by
/// [`majority_vote`]. With `runs == 1` this is plain reasoning few-shot.
pub fn run_self_consistency(
    split: &[SubjectRecord],
    demos: &[ReasonedDemonstration],
    gateway: &Gateway,
    runs: usize,
    temperature: f64,
    opts: &RunOptions,
) -> Result<Vec<PredictionRecord>, RunnerError> {
    if runs > 1 && runs.is_multiple_of(2) {
        log::warn!("{}: even number of runs ({runs}); ties resolve to CI", opts.strategy);
    }
    let parse = label_parser(PromptKind::ReasoningInference);
    let demo_ids: Vec<String> = demos.iter().map(|d| d.subject_id.clone()).collect();
    run_each(split, opts, |subject| {
        let prompt =
            render(PromptKind::ReasoningInference, &PromptInput::new(&subject.transcript_text).with_reasoned(demos))?;
        let call = Call {
            prompt,
            n: Some(demos.len()),
            demo_ids: demo_ids.clone(),
            temperature,
            runs: runs.max(1),
            parse: &parse,
            logprobs: None,
        };
        Ok(predict(gateway, subject, call, opts))
    })
}

/// Tree-of-thought prompting, zero-shot, one completion per subject.
pub fn run_tot(
    split: &[SubjectRecord],
    gateway: &Gateway,
    variant: TotVariant,
    opts: &RunOptions,
) -> Result<Vec<PredictionRecord>, RunnerError> {
    let parse = move |resp: &CompletionResponse| (parse_tot_consensus(&resp.text, variant), None);
    run_each(split, opts, |subject| {
        let prompt = render(variant.prompt_kind(), &PromptInput::new(&subject.transcript_text))?;
        let call = Call { prompt, n: None, demo_ids: vec![], temperature: 0.0, runs: 1, parse: &parse, logprobs: None };
        Ok(predict(gateway, subject, call, opts))
    })
}

/// Label decision read from token probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenDecision {
    pub prediction: Prediction,
    pub p_ci: Option<f64>,
}

/// Whether a generated token can be the start of `surface`: an exact match,
/// or a prefix of at least two characters (tokenizers may split long labels).
fn token_matches(token: &str, surface: &str) -> bool {
    let token = token.trim().to_lowercase();
    let surface = surface.to_lowercase();
    token == surface || (token.chars().count() >= 2 && surface.starts_with(&token))
}

fn token_class(token: &str, lexicon: &Lexicon) -> Option<Label> {
    lexicon.tokens().find(|(surface, _)| token_matches(token, surface)).map(|(_, label)| label)
}

/// Two-class probability from the alternatives at the first non-whitespace
/// generated token. A class absent from the alternatives gets the leftover
/// mass `max(0, 1 - sum of listed probabilities)`; the pair is then
/// normalized. Falls back to [`parse_label`] when neither class is listed.
pub fn classify_from_token_probs(response: &CompletionResponse, lexicon: &Lexicon) -> TokenDecision {
    let fallback = || TokenDecision { prediction: parse_label(&response.text, lexicon).prediction, p_ci: None };
    let Some(position) =
        response.logprobs.as_ref().and_then(|positions| positions.iter().find(|p| !p.token.trim().is_empty()))
    else {
        return fallback();
    };
    let alternatives: Vec<(&str, f64)> = if position.top.is_empty() {
        vec![(position.token.as_str(), position.logprob)]
    } else {
        position.top.iter().map(|a| (a.token.as_str(), a.logprob)).collect()
    };
    let mut ci: Vec<f64> = Vec::new();
    let mut cn: Vec<f64> = Vec::new();
    for (token, lp) in &alternatives {
        match token_class(token, lexicon) {
            Some(Label::CI) => ci.push(*lp),
            Some(Label::CN) => cn.push(*lp),
            None => {}
        }
    }
    let logsumexp = |v: &[f64]| {
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    };
    let p_ci = match (ci.is_empty(), cn.is_empty()) {
        (true, true) => return fallback(),
        (false, false) => 1.0 / (1.0 + (logsumexp(&cn) - logsumexp(&ci)).exp()),
        (present_ci, _) => {
            let listed: f64 = alternatives.iter().map(|(_, lp)| lp.exp()).sum();
            let missing = (1.0 - listed).max(0.0);
            let (p_a, p_h) = if present_ci { (missing, logsumexp(&cn).exp()) } else { (logsumexp(&ci).exp(), missing) };
            if p_a + p_h > 0.0 {
                p_a / (p_a + p_h)
            } else {
                0.5
            }
        }
    };
    let prediction = if p_ci >= 0.5 { Prediction::CI } else { Prediction::CN };
    TokenDecision { prediction, p_ci: Some(p_ci) }
}

/// Evaluation of a tuned model through label-token probabilities.
pub fn run_logprob_eval(
    split: &[SubjectRecord],
    gateway: &Gateway,
    kind: PromptKind,
    top_logprobs: u32,
    opts: &RunOptions,
) -> Result<Vec<PredictionRecord>, RunnerError> {
    let lexicon = kind.lexicon();
    let parse = move |resp: &CompletionResponse| {
        let decision = classify_from_token_probs(resp, &lexicon);
        let mut parsed = parse_label(&resp.text, &lexicon);
        parsed.prediction = decision.prediction;
        (parsed, decision.p_ci)
    };
    run_each(split, opts, |subject| {
        let prompt = render(kind, &PromptInput::new(&subject.transcript_text))?;
        let call = Call {
            prompt,
            n: None,
            demo_ids: vec![],
            temperature: 0.0,
            runs: 1,
            parse: &parse,
            logprobs: Some(top_logprobs),
        };
        Ok(predict(gateway, subject, call, opts))
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::corpus::Gender;
    use crate::gateway::{RuleBackend, ScriptedBackend, TokenAlternative, TokenLogprobs};

    fn subject(id: &str, dx: Label, words: usize, split: Split) -> SubjectRecord {
        let text = vec!["word"; words].join(" ");
        SubjectRecord::new(id, dx, Some(25), Gender::F, 70.0, 60.0, text, split).unwrap()
    }

    fn response(top: &[(&str, f64)]) -> CompletionResponse {
        CompletionResponse {
            text: top.first().map(|t| t.0.to_string()).unwrap_or_default(),
            logprobs: Some(vec![TokenLogprobs {
                token: top[0].0.into(),
                logprob: top[0].1,
                top: top.iter().map(|(t, l)| TokenAlternative { token: t.to_string(), logprob: *l }).collect(),
            }]),
            backend: "test".into(),
            latency_ms: 0,
        }
    }

    #[test]
    fn zero_shot_matches_rule() {
        let split: Vec<_> = [("a", 10), ("b", 60), ("c", 49), ("d", 50)]
            .iter()
            .map(|(id, w)| subject(id, Label::CI, *w, Split::Test))
            .collect();
        let gw = Gateway::new(Arc::new(RuleBackend::new(50)));
        let recs = run_zero_shot(&split, &gw, 0.0, &RunOptions::new("zs").with_parallelism(3)).unwrap();
        let got: Vec<_> = recs.iter().map(|r| r.final_label).collect();
        let expected: Vec<_> =
            split.iter().map(|s| if s.word_count < 50 { Prediction::CI } else { Prediction::CN }).collect();
        assert_eq!(got, expected);
        assert!(recs.iter().all(|r| r.prompt_kind == PromptKind::ZeroShot && r.temperature == 0.0));
        assert!(matches!(run_zero_shot(&[], &gw, 0.0, &RunOptions::new("zs")), Err(RunnerError::EmptySplit(_))));
    }

    #[test]
    fn constant_backend_all_ci() {
        let split: Vec<_> = (0..4).map(|i| subject(&format!("s{i}"), Label::CN, 5, Split::Test)).collect();
        let gw = Gateway::new(Arc::new(ScriptedBackend::constant("{\"label\":\"AD\"}")));
        let recs = run_zero_shot(&split, &gw, 0.0, &RunOptions::new("zs")).unwrap();
        assert!(recs.iter().all(|r| r.final_label == Prediction::CI));
    }

    #[test]
    fn backend_failure_becomes_abstain() {
        let split = vec![subject("a", Label::CI, 5, Split::Test)];
        let gw = Gateway::new(Arc::new(ScriptedBackend::new(Vec::<String>::new())));
        let recs = run_zero_shot(&split, &gw, 0.0, &RunOptions::new("zs")).unwrap();
        assert_eq!(recs[0].final_label, Prediction::Abstain);
        assert!(recs[0].failed());
    }

    #[test]
    fn votes() {
        use Prediction::*;
        assert_eq!(majority_vote(&[CI, CI, CN, CI, CN]), CI);
        assert_eq!(majority_vote(&[CN; 5]), CN);
        assert_eq!(majority_vote(&[CI, CN, Abstain, CN, CI]), CI);
        assert_eq!(majority_vote(&[Abstain; 5]), Abstain);
    }

    #[test]
    fn sweep_tie_goes_to_smallest() {
        let pts =
            |v: &[(usize, f64)]| v.iter().map(|&(n, f1_ci)| SweepPoint { n, f1_ci, abstains: 0 }).collect::<Vec<_>>();
        assert_eq!(choose_n(&pts(&[(2, 0.6), (4, 0.7), (6, 0.7)])), Some(4));
        assert_eq!(choose_n(&pts(&[(6, 0.5), (2, 0.5)])), Some(2));
        assert_eq!(choose_n(&[]), None);
    }

    #[test]
    fn token_probability_examples() {
        let lex = Lexicon::AD_HEALTHY;
        let even = classify_from_token_probs(&response(&[("AD", -0.7), ("Healthy", -0.7)]), &lex);
        assert_eq!(even.p_ci, Some(0.5));
        assert_eq!(even.prediction, Prediction::CI);
        let d = classify_from_token_probs(&response(&[("AD", -0.1), ("Healthy", -2.1)]), &lex);
        let direct = (-0.1f64).exp() / ((-0.1f64).exp() + (-2.1f64).exp());
        assert!((d.p_ci.unwrap() - direct).abs() < 1e-12);
        let top = [
            ("AD", 0.90f64.ln()),
            ("A", 0.03f64.ln()),
            ("The", 0.02f64.ln()),
            ("I", 0.01f64.ln()),
            ("{", 0.01f64.ln()),
        ];
        let d = classify_from_token_probs(&response(&top), &lex);
        assert!((d.p_ci.unwrap() - 0.90 / 0.93).abs() < 1e-9);
        // split label token: "AD" then "RD"
        let d = classify_from_token_probs(&response(&[("AD", -0.2), ("Health", -1.8)]), &Lexicon::ADRD_HEALTHY);
        assert!(d.p_ci.unwrap() > 0.5);
        // no label alternatives: text fallback
        let mut r = response(&[("{", 0.0)]);
        r.text = "{\"label\": \"Healthy\"}".into();
        let d = classify_from_token_probs(&r, &lex);
        assert_eq!((d.prediction, d.p_ci), (Prediction::CN, None));
    }

    #[test]
    fn self_consistency_with_scripted_votes() {
        let split = vec![subject("a", Label::CI, 5, Split::Test)];
        let demos = vec![ReasonedDemonstration {
            subject_id: "t".into(),
            transcript_text: "x".into(),
            rationale_text: "r".into(),
            label: Label::CN,
            rationale_source: RationaleSource::SelfGenerated,
        }];
        let replies = [
            "{\"reason\":\"a\",\"label\":\"AD\"}",
            "{\"reason\":\"b\",\"label\":\"Healthy\"}",
            "no idea",
            "{\"reason\":\"c\",\"label\":\"Healthy\"}",
            "{\"reason\":\"d\",\"label\":\"AD\"}",
        ];
        let gw = Gateway::new(Arc::new(ScriptedBackend::new(replies)));
        let recs = run_self_consistency(&split, &demos, &gw, 5, 0.5, &RunOptions::new("sc")).unwrap();
        assert_eq!(recs[0].raw_outputs.len(), 5);
        assert_eq!(recs[0].final_label, Prediction::CI);
        assert_eq!(recs[0].rationales, vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn rationales_keep_pairing_and_skip_failures() {
        let train: Vec<_> = (0..3)
            .map(|i| subject(&format!("s{i}"), if i == 1 { Label::CI } else { Label::CN }, 5, Split::Train))
            .collect();
        let backend =
            ScriptedBackend::new(["{\"reason\":\"one\"}", "nothing", "still nothing", "{\"reason\":\"three\"}"]);
        let gw = Gateway::new(Arc::new(backend));
        let demos = generate_rationales(&train, &gw, RationaleSource::Teacher, 2, &RunOptions::new("r")).unwrap();
        assert_eq!(demos.len(), 2);
        assert_eq!((demos[0].subject_id.as_str(), demos[0].rationale_text.as_str()), ("s0", "one"));
        assert_eq!((demos[1].subject_id.as_str(), demos[1].label), ("s2", Label::CN));
        let gw = Gateway::new(Arc::new(ScriptedBackend::constant("no json")));
        assert!(matches!(
            generate_rationales(&train, &gw, RationaleSource::SelfGenerated, 1, &RunOptions::new("r")),
            Err(RunnerError::NoRationales { attempted: 3 })
        ));
    }

    #[test]
    fn tot_fallback_scan() {
        let split = vec![subject("a", Label::CN, 5, Split::Test)];
        let gw = Gateway::new(Arc::new(ScriptedBackend::new(["The experts conclude ... label: Healthy"])));
        let recs = run_tot(&split, &gw, TotVariant::Expert, &RunOptions::new("tot")).unwrap();
        assert_eq!(recs[0].final_label, Prediction::CN);
        assert_eq!(recs[0].prompt_kind, PromptKind::TotExpert);
    }

    #[test]
    fn spec_round_trip_and_names() {
        let spec: StrategySpec =
            serde_json::from_str(r#"{"kind":"icl","backend":"mock","policy":"most_similar","shots":"sweep"}"#).unwrap();
        assert_eq!(spec.name(), "icl_most_similar");
        assert!(matches!(spec, StrategySpec::Icl { shots: ShotCount::Sweep(_), .. }));
        assert!(serde_json::from_str::<StrategySpec>(r#"{"kind":"zero_shot","backend":"m","bogus":1}"#).is_err());
        let bad: StrategySpec =
            serde_json::from_str(r#"{"kind":"icl","backend":"m","policy":"random","shots":3}"#).unwrap();
        assert!(bad.validate().is_err());
        assert_eq!(spec.fingerprint().len(), 16);
    }
}
