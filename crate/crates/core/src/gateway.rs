//! Completion backends, the retrying/rate-limited gateway over them, and
//! parsing of model text into labels.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::label::{Label, Prediction};
use crate::linguistics::tokenize;
use crate::prompt::{messages_hash, ChatMessage, Lexicon, PromptKind, RenderedPrompt, Role};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider error: {0}")]
    Provider(String),
    #[error("run log: {0}")]
    Log(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub want_logprobs: bool,
    pub top_logprobs_k: u32,
}

impl CompletionRequest {
    pub fn from_prompt(prompt: &RenderedPrompt, temperature: f64) -> Self {
        Self { messages: prompt.messages(), temperature, max_tokens: 1024, want_logprobs: false, top_logprobs_k: 0 }
    }

    pub fn with_logprobs(mut self, top_k: u32) -> Self {
        self.want_logprobs = true;
        self.top_logprobs_k = top_k;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(GatewayError::InvalidRequest("no user message".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Same digest as [`RenderedPrompt::hash`] for an unmodified prompt.
    pub fn prompt_hash(&self) -> String {
        messages_hash(&self.messages)
    }

    pub fn system_text(&self) -> &str {
        self.messages.iter().find(|m| m.role == Role::System).map_or("", |m| m.content.as_str())
    }

    pub fn user_text(&self) -> &str {
        self.messages.iter().rev().find(|m| m.role == Role::User).map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAlternative {
    pub token: String,
    pub logprob: f64,
}

/// One generated token with its most likely alternatives, most likely first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprobs {
    pub token: String,
    pub logprob: f64,
    pub top: Vec<TokenAlternative>,
}

impl TokenLogprobs {
    /// Clamps rounding noise above zero and sorts alternatives descending.
    pub fn normalized(mut self) -> Self {
        self.logprob = self.logprob.min(0.0);
        for alt in &mut self.top {
            alt.logprob = alt.logprob.min(0.0);
        }
        self.top.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<TokenLogprobs>>,
    pub backend: String,
    pub latency_ms: u64,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    /// A single attempt; retrying is the gateway's job.
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError>;
}

enum ScriptItem {
    Reply(String, Option<Vec<TokenLogprobs>>),
    Fail(GatewayError),
}

/// Replays canned replies in FIFO order. With several workers the order
/// replies are handed out in follows request arrival, so scripted runs with
/// more than one subject should use parallelism 1.
pub struct ScriptedBackend {
    name: String,
    queue: Mutex<VecDeque<ScriptItem>>,
    repeat: Option<String>,
}

impl ScriptedBackend {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            name: "scripted".into(),
            queue: Mutex::new(replies.into_iter().map(|r| ScriptItem::Reply(r.into(), None)).collect()),
            repeat: None,
        }
    }

    /// Answers every request with the same text.
    pub fn constant(reply: impl Into<String>) -> Self {
        Self { name: "scripted".into(), queue: Mutex::new(VecDeque::new()), repeat: Some(reply.into()) }
    }

    pub fn push_reply(&self, text: impl Into<String>) {
        self.queue.lock().unwrap().push_back(ScriptItem::Reply(text.into(), None));
    }

    pub fn push_with_logprobs(&self, text: impl Into<String>, logprobs: Vec<TokenLogprobs>) {
        self.queue.lock().unwrap().push_back(ScriptItem::Reply(text.into(), Some(logprobs)));
    }

    pub fn push_error(&self, error: GatewayError) {
        self.queue.lock().unwrap().push_back(ScriptItem::Fail(error));
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, _request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let item = self.queue.lock().unwrap().pop_front();
        let (text, logprobs) = match item {
            Some(ScriptItem::Reply(text, lp)) => (text, lp),
            Some(ScriptItem::Fail(e)) => return Err(e),
            None => match &self.repeat {
                Some(text) => (text.clone(), None),
                None => return Err(GatewayError::Provider("script exhausted".into())),
            },
        };
        Ok(CompletionResponse { text, logprobs, backend: self.name.clone(), latency_ms: 0 })
    }
}

/// Locates the transcript under classification in a rendered user message.
/// The last transcript slot is the test subject's; demonstrations come first.
pub fn extract_transcript(user: &str) -> Option<&str> {
    if let Some(pos) = user.rfind("Transcript: \"") {
        let rest = &user[pos + "Transcript: \"".len()..];
        if let Some(end) = rest.rfind("\"\nLabel: {") {
            return Some(&rest[..end]);
        }
        return Some(rest.strip_suffix('"').unwrap_or(rest));
    }
    if let Some(pos) = user.rfind("Transcription: \"") {
        let rest = &user[pos + "Transcription: \"".len()..];
        let end = rest.rfind("\"\n\n").unwrap_or(rest.len());
        return Some(&rest[..end]);
    }
    if let Some(pos) = user.rfind("Text: ") {
        let rest = &user[pos + "Text: ".len()..];
        let end = rest.rfind("\n\nLabel:").unwrap_or(rest.len());
        return Some(&rest[..end]);
    }
    None
}

/// Guesses which template produced a request from its fixed text.
pub fn sniff_prompt_kind(request: &CompletionRequest) -> PromptKind {
    let system = request.system_text();
    let user = request.user_text();
    if system.contains("Imagine three different experts") {
        PromptKind::TotExpert
    } else if system.contains("Simulate three brilliant") {
        PromptKind::TotUnspecified
    } else if system.contains("explain the rationale") {
        PromptKind::RationaleGeneration
    } else if system.contains("\"reason\": \"provided reason\"") {
        PromptKind::ReasoningInference
    } else if user.contains("Transcription: \"") {
        PromptKind::MultimodalEval
    } else if user.starts_with("Text: ") {
        PromptKind::FinetuneEval
    } else if user.contains("Here are some example cases") {
        PromptKind::FewShot
    } else {
        PromptKind::ZeroShot
    }
}

/// Deterministic stand-in model: a transcript is CI iff it has fewer than
/// `threshold` words. Replies in whichever format the prompt asks for.
#[derive(Debug, Clone)]
pub struct RuleBackend {
    pub threshold: usize,
    /// Scale (in words) of the logistic used for token probabilities.
    pub softness: f64,
}

impl RuleBackend {
    pub fn new(threshold: usize) -> Self {
        Self { threshold, softness: 10.0 }
    }

    pub fn decide(&self, transcript: &str) -> Label {
        if tokenize(transcript).len() < self.threshold {
            Label::CI
        } else {
            Label::CN
        }
    }

    /// Probability of CI reported through logprobs.
    pub fn p_ci(&self, transcript: &str) -> f64 {
        let words = tokenize(transcript).len() as f64;
        let z = (self.threshold as f64 - 0.5 - words) / self.softness;
        1.0 / (1.0 + (-z).exp())
    }

    fn reason(&self, words: usize, label: Label) -> String {
        match label {
            Label::CI => format!("Short description of {words} words with little scene content."),
            Label::CN => format!("Full description of {words} words covering the scene."),
        }
    }
}

impl Backend for RuleBackend {
    fn name(&self) -> &str {
        "rule"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let transcript = extract_transcript(request.user_text())
            .ok_or_else(|| GatewayError::Provider("no transcript in prompt".into()))?;
        let words = tokenize(transcript).len();
        let kind = sniff_prompt_kind(request);
        let lexicon = kind.lexicon();
        let label = self.decide(transcript);
        let tok = lexicon.surface(label);
        let text = match kind {
            PromptKind::RationaleGeneration => {
                // Explains the label it was given, not its own decision.
                let given = request
                    .user_text()
                    .rsplit_once("Label: ")
                    .and_then(|(_, tail)| parse_label(tail, &lexicon).prediction.label())
                    .unwrap_or(label);
                json!({ "reason": self.reason(words, given) }).to_string()
            }
            PromptKind::ReasoningInference => json!({ "reason": self.reason(words, label), "label": tok }).to_string(),
            PromptKind::TotUnspecified => {
                json!({ "analysis": self.reason(words, label), "consensus label": tok }).to_string()
            }
            PromptKind::TotExpert => json!({
                "Language and Cognition Specialist": self.reason(words, label),
                "Neurocognitive Researcher Studying Everyday Speech": "Narrative structure considered.",
                "Specialized Speech-Language Pathologist": "Fluency considered.",
                "Consensus Label": tok,
            })
            .to_string(),
            PromptKind::FinetuneEval | PromptKind::MultimodalEval => tok.to_string(),
            PromptKind::ZeroShot | PromptKind::FewShot => json!({ "label": tok }).to_string(),
        };
        let logprobs = request.want_logprobs.then(|| {
            let first = text.split_whitespace().next().unwrap_or("").to_string();
            if first == tok {
                let p = self.p_ci(transcript).clamp(1e-12, 1.0 - 1e-12);
                let ci = TokenAlternative { token: lexicon.surface(Label::CI).into(), logprob: p.ln() };
                let cn = TokenAlternative { token: lexicon.surface(Label::CN).into(), logprob: (1.0 - p).ln() };
                let chosen = if label == Label::CI { &ci } else { &cn };
                let position =
                    TokenLogprobs { token: chosen.token.clone(), logprob: chosen.logprob, top: vec![ci.clone(), cn] };
                vec![position.normalized()]
            } else {
                vec![TokenLogprobs {
                    token: "{".into(),
                    logprob: 0.0,
                    top: vec![TokenAlternative { token: "{".into(), logprob: 0.0 }],
                }]
            }
        });
        Ok(CompletionResponse { text, logprobs, backend: "rule".into(), latency_ms: 0 })
    }
}

/// Client for a chat-completions style HTTP endpoint.
#[derive(Debug, Clone)]
pub struct HttpChatBackend {
    pub name: String,
    pub endpoint: String,
    pub model: String,
    pub auth_token: Option<String>,
    pub timeout: Duration,
}

impl HttpChatBackend {
    pub fn new(name: impl Into<String>, endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            endpoint: endpoint.into(),
            model: model.into(),
            auth_token: None,
            timeout: Duration::from_secs(120),
        }
    }

    pub fn request_body(&self, request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "logprobs": request.want_logprobs,
        });
        if request.want_logprobs {
            body["top_logprobs"] = json!(request.top_logprobs_k);
        }
        body
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Option<Vec<WireToken>>,
}

#[derive(Deserialize)]
struct WireToken {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<WireAlt>,
}

#[derive(Deserialize)]
struct WireAlt {
    token: String,
    logprob: f64,
}

/// Decodes a chat-completions response body.
pub fn parse_chat_response(body: &str, backend: &str, latency_ms: u64) -> Result<CompletionResponse, GatewayError> {
    let wire: WireResponse =
        serde_json::from_str(body).map_err(|e| GatewayError::Provider(format!("malformed response: {e}")))?;
    let choice = wire.choices.into_iter().next().ok_or_else(|| GatewayError::Provider("no choices".into()))?;
    let text = choice.message.content.unwrap_or_default();
    if text.trim().is_empty() {
        return Err(GatewayError::Provider("empty completion".into()));
    }
    let logprobs = choice.logprobs.and_then(|l| l.content).map(|tokens| {
        tokens
            .into_iter()
            .map(|t| {
                TokenLogprobs {
                    token: t.token,
                    logprob: t.logprob,
                    top: t
                        .top_logprobs
                        .into_iter()
                        .map(|a| TokenAlternative { token: a.token, logprob: a.logprob })
                        .collect(),
                }
                .normalized()
            })
            .collect()
    });
    Ok(CompletionResponse { text, logprobs, backend: backend.to_string(), latency_ms })
}

impl Backend for HttpChatBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(self.timeout)).http_status_as_error(false).build().into();
        let started = Instant::now();
        let mut req = agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(token) = &self.auth_token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let transport = |message: String| GatewayError::Transport { attempts: 1, message };
        let mut resp = req.send(self.request_body(request).to_string()).map_err(|e| transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| transport(e.to_string()))?;
        let latency_ms = started.elapsed().as_millis() as u64;
        match status {
            200..=299 => parse_chat_response(&body, &self.name, latency_ms),
            500..=599 => Err(transport(format!("HTTP {status}"))),
            _ => Err(GatewayError::Provider(format!("HTTP {status}: {body}"))),
        }
    }
}

const BACKOFF_BASE: Duration = Duration::from_millis(250);
const BACKOFF_CAP: Duration = Duration::from_secs(8);

/// Delay before retry number `attempt` (1-based): 250 ms doubling, capped at 8 s.
pub fn backoff_delay(attempt: u32) -> Duration {
    scaled_backoff(BACKOFF_BASE, attempt)
}

fn scaled_backoff(base: Duration, attempt: u32) -> Duration {
    let factor = 1u32 << attempt.saturating_sub(1).min(16);
    base.saturating_mul(factor).min(BACKOFF_CAP.max(base))
}

/// Token bucket admitting `requests_per_minute` with a burst of one second's worth.
#[derive(Debug)]
pub struct RateLimiter {
    rate_per_sec: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(requests_per_minute: f64) -> Self {
        let rate_per_sec = requests_per_minute / 60.0;
        let capacity = rate_per_sec.max(1.0);
        Self { rate_per_sec, capacity, state: Mutex::new((capacity, Instant::now())) }
    }

    /// Blocks until a request may be sent.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap();
                let now = Instant::now();
                let (tokens, last) = *state;
                let tokens = (tokens + now.duration_since(last).as_secs_f64() * self.rate_per_sec).min(self.capacity);
                if tokens >= 1.0 {
                    *state = (tokens - 1.0, now);
                    return;
                }
                *state = (tokens, now);
                (1.0 - tokens) / self.rate_per_sec
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

enum LogSink {
    File(BufWriter<File>),
    Memory(Vec<String>),
}

/// JSON Lines log of every request/response pair, written through one lock.
pub struct RunLog {
    sink: Mutex<LogSink>,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GatewayError::Log(format!("{}: {e}", path.display())))?;
        Ok(Self { sink: Mutex::new(LogSink::File(BufWriter::new(file))) })
    }

    pub fn in_memory() -> Self {
        Self { sink: Mutex::new(LogSink::Memory(Vec::new())) }
    }

    pub fn append(&self, entry: &Value) -> Result<(), GatewayError> {
        let line = entry.to_string();
        match &mut *self.sink.lock().unwrap() {
            LogSink::File(w) => {
                writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| GatewayError::Log(e.to_string()))
            }
            LogSink::Memory(lines) => {
                lines.push(line);
                Ok(())
            }
        }
    }

    /// Lines captured by an in-memory log; empty for file logs.
    pub fn lines(&self) -> Vec<String> {
        match &*self.sink.lock().unwrap() {
            LogSink::Memory(lines) => lines.clone(),
            LogSink::File(_) => Vec::new(),
        }
    }
}

/// Backend plus retry, rate-limit and logging policy. Cheap to clone.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    max_retries: u32,
    backoff_base: Duration,
    limiter: Option<Arc<RateLimiter>>,
    log: Option<Arc<RunLog>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self { backend, max_retries: 3, backoff_base: BACKOFF_BASE, limiter: None, log: None }
    }

    pub fn with_retries(mut self, max_retries: u32) -> Self {
        self.max_retries = max_retries;
        self
    }

    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    pub fn with_rate_limit(mut self, requests_per_minute: f64) -> Self {
        self.limiter = Some(Arc::new(RateLimiter::per_minute(requests_per_minute)));
        self
    }

    pub fn with_log(mut self, log: Arc<RunLog>) -> Self {
        self.log = Some(log);
        self
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn log(&self) -> Option<&Arc<RunLog>> {
        self.log.as_ref()
    }

    /// Sends `request`, retrying transport failures with exponential backoff.
    /// Every attempt's outcome is logged before the caller sees it.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        request.validate()?;
        let hash = request.prompt_hash();
        let mut attempt = 0;
        loop {
            attempt += 1;
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            let result = self.backend.complete(request);
            self.record(&hash, request, attempt, &result)?;
            match result {
                Err(e) if e.is_retryable() && attempt <= self.max_retries => {
                    std::thread::sleep(scaled_backoff(self.backoff_base, attempt));
                }
                Err(GatewayError::Transport { message, .. }) => {
                    return Err(GatewayError::Transport { attempts: attempt, message })
                }
                other => return other,
            }
        }
    }

    fn record(
        &self,
        hash: &str,
        request: &CompletionRequest,
        attempt: u32,
        result: &Result<CompletionResponse, GatewayError>,
    ) -> Result<(), GatewayError> {
        let Some(log) = &self.log else { return Ok(()) };
        let outcome = match result {
            Ok(resp) => json!({ "response": resp }),
            Err(e) => json!({ "error": e.to_string() }),
        };
        let mut entry = json!({
            "timestamp": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            "backend": self.backend.name(),
            "prompt_hash": hash,
            "attempt": attempt,
            "request": request,
        });
        entry.as_object_mut().unwrap().extend(outcome.as_object().unwrap().clone());
        log.append(&entry)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedLabel {
    pub prediction: Prediction,
    pub raw_surface_token: Option<String>,
    pub rationale: Option<String>,
}

impl ParsedLabel {
    fn abstain(rationale: Option<String>) -> Self {
        Self { prediction: Prediction::Abstain, raw_surface_token: None, rationale }
    }
}

/// First JSON object that parses cleanly, scanning each `{` left to right.
pub fn first_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    text.match_indices('{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

fn normalize_key(key: &str) -> String {
    key.chars().filter(|c| !matches!(c, ' ' | '_' | '-')).flat_map(char::to_lowercase).collect()
}

fn field<'a>(map: &'a serde_json::Map<String, Value>, normalized: &str) -> Option<&'a Value> {
    map.iter().find(|(k, _)| normalize_key(k) == normalized).map(|(_, v)| v)
}

/// Last whole word in `text` that is a permitted surface token.
fn scan_words(text: &str, lexicon: &Lexicon) -> Option<(Label, String)> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .filter_map(|w| lexicon.classify(w).map(|l| (l, w.to_string())))
        .next_back()
}

fn from_surface(value: Option<&Value>, lexicon: &Lexicon) -> Option<(Label, String)> {
    let s = value?.as_str()?;
    lexicon.classify(s).map(|l| (l, s.trim().to_string()))
}

/// Reads a label from model output: the `label` field of the first JSON
/// object, else the last permitted surface word anywhere in the text.
pub fn parse_label(text: &str, lexicon: &Lexicon) -> ParsedLabel {
    let object = first_json_object(text);
    let rationale = object.as_ref().and_then(|m| field(m, "reason")).and_then(Value::as_str).map(str::to_string);
    let found =
        object.as_ref().and_then(|m| from_surface(field(m, "label"), lexicon)).or_else(|| scan_words(text, lexicon));
    match found {
        Some((label, raw)) => ParsedLabel { prediction: label.into(), raw_surface_token: Some(raw), rationale },
        None => ParsedLabel::abstain(rationale),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TotVariant {
    Unspecified,
    Expert,
}

impl TotVariant {
    pub fn prompt_kind(self) -> PromptKind {
        match self {
            TotVariant::Unspecified => PromptKind::TotUnspecified,
            TotVariant::Expert => PromptKind::TotExpert,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TotVariant::Unspecified => "unspecified",
            TotVariant::Expert => "expert",
        }
    }
}

/// Reads the consensus field of a tree-of-thought reply, falling back to
/// [`parse_label`] over the whole text.
pub fn parse_tot_consensus(text: &str, variant: TotVariant) -> ParsedLabel {
    let lexicon = variant.prompt_kind().lexicon();
    let Some(object) = first_json_object(text) else {
        return parse_label(text, &lexicon);
    };
    let rationale = match variant {
        TotVariant::Unspecified => field(&object, "analysis").and_then(Value::as_str).map(str::to_string),
        TotVariant::Expert => {
            let lines: Vec<String> = object
                .iter()
                .filter(|(k, _)| normalize_key(k) != "consensuslabel")
                .filter_map(|(k, v)| v.as_str().map(|s| format!("{k}: {s}")))
                .collect();
            (!lines.is_empty()).then(|| lines.join("\n"))
        }
    };
    match from_surface(field(&object, "consensuslabel"), &lexicon) {
        Some((label, raw)) => ParsedLabel { prediction: label.into(), raw_surface_token: Some(raw), rationale },
        None => {
            let mut parsed = parse_label(text, &lexicon);
            parsed.rationale = parsed.rationale.or(rationale);
            parsed
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{render, PromptInput};

    fn zero_shot_request(transcript: &str) -> CompletionRequest {
        CompletionRequest::from_prompt(&render(PromptKind::ZeroShot, &PromptInput::new(transcript)).unwrap(), 0.0)
    }

    #[test]
    fn scripted_echo_in_order() {
        let backend = ScriptedBackend::new(["{\"label\":\"AD\"}", "second"]);
        let req = zero_shot_request("t");
        assert_eq!(backend.complete(&req).unwrap().text, "{\"label\":\"AD\"}");
        assert_eq!(backend.complete(&req).unwrap().text, "second");
        assert!(matches!(backend.complete(&req), Err(GatewayError::Provider(_))));
    }

    #[test]
    fn rule_backend_thresholds_word_count() {
        let words = vec!["word"; 30].join(" ");
        let backend = RuleBackend::new(50);
        assert_eq!(backend.complete(&zero_shot_request(&words)).unwrap().text, "{\"label\":\"AD\"}");
        let long = vec!["word"; 50].join(" ");
        assert_eq!(backend.complete(&zero_shot_request(&long)).unwrap().text, "{\"label\":\"Healthy\"}");
    }

    #[test]
    fn transcript_extraction_per_template() {
        let ft = render(PromptKind::FinetuneEval, &PromptInput::new("a b")).unwrap();
        assert_eq!(extract_transcript(&ft.user), Some("a b"));
        let mm = render(PromptKind::MultimodalEval, &PromptInput::new("c d")).unwrap();
        assert_eq!(extract_transcript(&mm.user), Some("c d"));
        let rg = render(PromptKind::RationaleGeneration, &PromptInput::new("e f").with_label(Label::CN)).unwrap();
        assert_eq!(extract_transcript(&rg.user), Some("e f"));
        for kind in PromptKind::ALL {
            let input = match kind {
                PromptKind::RationaleGeneration => PromptInput::new("x").with_label(Label::CI),
                _ => PromptInput::new("x"),
            };
            if let Ok(p) = render(kind, &input) {
                assert_eq!(sniff_prompt_kind(&CompletionRequest::from_prompt(&p, 0.0)), kind);
            }
        }
    }

    #[test]
    fn gateway_keeps_prompt_hash_and_logs() {
        let prompt = render(PromptKind::ZeroShot, &PromptInput::new("the boy")).unwrap();
        let req = CompletionRequest::from_prompt(&prompt, 0.0);
        assert_eq!(req.prompt_hash(), prompt.hash);
        let log = Arc::new(RunLog::in_memory());
        let gw = Gateway::new(Arc::new(ScriptedBackend::constant("x"))).with_log(log.clone());
        gw.complete(&req).unwrap();
        let lines = log.lines();
        assert_eq!(lines.len(), 1);
        let entry: Value = serde_json::from_str(&lines[0]).unwrap();
        assert_eq!(entry["prompt_hash"], prompt.hash);
        assert_eq!(entry["response"]["text"], "x");
    }

    #[test]
    fn gateway_retries_transport_only() {
        let backend = Arc::new(ScriptedBackend::new(["ok"]));
        backend
            .queue
            .lock()
            .unwrap()
            .push_front(ScriptItem::Fail(GatewayError::Transport { attempts: 1, message: "reset".into() }));
        let gw = Gateway::new(backend.clone()).with_backoff_base(Duration::from_millis(1));
        assert_eq!(gw.complete(&zero_shot_request("t")).unwrap().text, "ok");

        let refusing = Arc::new(ScriptedBackend::new(Vec::<String>::new()));
        refusing.push_error(GatewayError::Provider("refused".into()));
        refusing.push_reply("never reached");
        let gw = Gateway::new(refusing.clone()).with_backoff_base(Duration::from_millis(1));
        assert_eq!(gw.complete(&zero_shot_request("t")), Err(GatewayError::Provider("refused".into())));
        assert_eq!(refusing.remaining(), 1);
    }

    #[test]
    fn unreachable_host_gives_transport_error() {
        let backend = HttpChatBackend {
            timeout: Duration::from_secs(2),
            ..HttpChatBackend::new("remote", "http://127.0.0.1:9/v1/chat/completions", "m")
        };
        let gw = Gateway::new(Arc::new(backend)).with_retries(2).with_backoff_base(Duration::from_millis(1));
        match gw.complete(&zero_shot_request("t")) {
            Err(GatewayError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected transport error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_requests_rejected() {
        let mut req = zero_shot_request("t");
        req.temperature = f64::NAN;
        assert!(req.validate().is_err());
        req.temperature = 0.0;
        req.messages.retain(|m| m.role != Role::User);
        assert!(req.validate().is_err());
    }

    #[test]
    fn backoff_doubles_then_caps() {
        assert_eq!(backoff_delay(1), Duration::from_millis(250));
        assert_eq!(backoff_delay(2), Duration::from_millis(500));
        assert_eq!(backoff_delay(3), Duration::from_secs(1));
        assert_eq!(backoff_delay(30), Duration::from_secs(8));
    }

    #[test]
    fn wire_response_decoding() {
        let body = r#"{"choices":[{"message":{"content":"AD"},"logprobs":{"content":[
            {"token":"AD","logprob":-0.1,"top_logprobs":[{"token":"Healthy","logprob":-2.1},{"token":"AD","logprob":-0.1}]}]}}]}"#;
        let resp = parse_chat_response(body, "remote", 5).unwrap();
        assert_eq!(resp.text, "AD");
        let lp = resp.logprobs.unwrap();
        assert_eq!(lp[0].top[0].token, "AD");
        assert!(parse_chat_response(r#"{"choices":[{"message":{"content":""}}]}"#, "r", 0).is_err());
        let body = HttpChatBackend::new("r", "http://x", "m").request_body(&zero_shot_request("t").with_logprobs(5));
        assert_eq!(body["top_logprobs"], 5);
        assert_eq!(body["messages"][0]["role"], "system");
    }

    #[test]
    fn label_parsing() {
        let lex = Lexicon::AD_HEALTHY;
        assert_eq!(parse_label("Sure. {\"label\": \"AD\"}", &lex).prediction, Prediction::CI);
        let p = parse_label("{\"reason\":\"short utterances\",\"label\":\"Healthy\"}", &lex);
        assert_eq!(p.prediction, Prediction::CN);
        assert_eq!(p.rationale.as_deref(), Some("short utterances"));
        assert_eq!(parse_label("I cannot determine this.", &lex).prediction, Prediction::Abstain);
        assert_eq!(parse_label("{'label': 'ADRD'}", &lex).prediction, Prediction::CI);
        assert_eq!(parse_label("dementia", &Lexicon::DEMENTIA_CONTROL).prediction, Prediction::CI);
        assert_eq!(parse_label(" Control.", &Lexicon::DEMENTIA_CONTROL).prediction, Prediction::CN);
        // "AD" inside a longer word is not a match
        assert_eq!(parse_label("ADVERB", &lex).prediction, Prediction::Abstain);
    }

    #[test]
    fn tot_parsing() {
        let expert = r#"{"Language and Cognition Specialist": "x", "Consensus Label": "AD"}"#;
        assert_eq!(parse_tot_consensus(expert, TotVariant::Expert).prediction, Prediction::CI);
        let unspecified = r#"{"analysis": "fine", "consensus label": "Healthy"}"#;
        let p = parse_tot_consensus(unspecified, TotVariant::Unspecified);
        assert_eq!(p.prediction, Prediction::CN);
        assert_eq!(p.rationale.as_deref(), Some("fine"));
        assert_eq!(
            parse_tot_consensus("{\"consensus_label\": \"AD\"}", TotVariant::Unspecified).prediction,
            Prediction::CI
        );
        assert_eq!(
            parse_tot_consensus("{broken json, experts agree the speaker is Healthy", TotVariant::Expert).prediction,
            Prediction::CN
        );
    }
}
