//! Completion backends.
//!
//! [`CompletionBackend`] is the single seam between the reranker and a policy.
//! [`HttpBackend`] talks to any OpenAI-compatible `/chat/completions` server;
//! [`ScriptedBackend`] and [`PreferenceBackend`] are deterministic stand-ins
//! for tests and golden runs.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::BackendError;
use crate::parse_reward::render_completion;
use crate::prompts::RenderedPrompt;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_completion_units: usize,
    pub group_size: usize,
    pub seed: Option<u64>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            max_completion_units: 2048,
            group_size: 8,
            seed: None,
        }
    }
}

impl SamplingParams {
    /// One deterministic completion, as used by each reranking comparison.
    pub fn greedy() -> Self {
        Self {
            temperature: 0.0,
            group_size: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.group_size == 0 {
            return Err(BackendError::Params("group_size must be at least 1".into()));
        }
        if self.max_completion_units == 0 {
            return Err(BackendError::Params("max_completion_units must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::Params(format!(
                "temperature must be finite and non-negative, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
}

impl Completion {
    pub fn stop(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: FinishReason::Stop,
        }
    }
}

pub trait CompletionBackend: Send + Sync {
    /// Returns `params.group_size` completions for `prompt`.
    fn complete(&self, prompt: &RenderedPrompt, params: &SamplingParams) -> Result<Vec<Completion>, BackendError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for &B {
    fn complete(&self, prompt: &RenderedPrompt, params: &SamplingParams) -> Result<Vec<Completion>, BackendError> {
        (**self).complete(prompt, params)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn complete(&self, prompt: &RenderedPrompt, params: &SamplingParams) -> Result<Vec<Completion>, BackendError> {
        (**self).complete(prompt, params)
    }
}

/// Calls `backend` after validating `params`, and enforces the group-size and
/// length contracts on what comes back.
pub fn complete(
    backend: &dyn CompletionBackend,
    prompt: &RenderedPrompt,
    params: &SamplingParams,
) -> Result<Vec<Completion>, BackendError> {
    params.validate()?;
    let mut completions = backend.complete(prompt, params)?;
    if completions.len() != params.group_size {
        return Err(BackendError::ShortGroup {
            got: completions.len(),
            expected: params.group_size,
        });
    }
    for c in &mut completions {
        if c.finish_reason == FinishReason::Length {
            if let Some((cut, _)) = c.text.char_indices().nth(params.max_completion_units) {
                c.text.truncate(cut);
            }
        }
    }
    Ok(completions)
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Key used by [`ScriptedBackend`] tables.
pub fn prompt_hash(prompt: &RenderedPrompt) -> u64 {
    let mut bytes = Vec::with_capacity(prompt.system.len() + prompt.user.len() + 1);
    bytes.extend_from_slice(prompt.system.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(prompt.user.as_bytes());
    fnv1a(&bytes)
}

/// Replays canned completions: first by prompt hash, then from a FIFO queue
/// consumed one completion per group member.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    table: HashMap<u64, String>,
    queue: Mutex<VecDeque<String>>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_response(mut self, prompt: &RenderedPrompt, text: impl Into<String>) -> Self {
        self.table.insert(prompt_hash(prompt), text.into());
        self
    }

    pub fn with_queue<I, S>(self, texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.queue
            .lock()
            .expect("script queue poisoned")
            .extend(texts.into_iter().map(Into::into));
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, prompt: &RenderedPrompt, params: &SamplingParams) -> Result<Vec<Completion>, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(text) = self.table.get(&prompt_hash(prompt)) {
            return Ok(vec![Completion::stop(text.clone()); params.group_size]);
        }
        let mut queue = self.queue.lock().expect("script queue poisoned");
        if queue.len() < params.group_size {
            return Err(BackendError::ScriptExhausted);
        }
        Ok(queue.drain(..params.group_size).map(Completion::stop).collect())
    }
}

/// Always picks the candidate with the highest fixture preference. Ties go
/// to the lower tiebreak key, then to the lower label. Unknown documents rank
/// below every known one.
#[derive(Debug, Default)]
pub struct PreferenceBackend {
    preferences: HashMap<String, (f64, u64)>,
    calls: AtomicUsize,
}

impl PreferenceBackend {
    pub fn new<I, S>(scores: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Self {
            preferences: scores.into_iter().map(|(d, s)| (d.into(), (s, 0))).collect(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Scores with an explicit tiebreak key per document (lower wins).
    pub fn with_tiebreak<I, S>(scores: I) -> Self
    where
        I: IntoIterator<Item = (S, f64, u64)>,
        S: Into<String>,
    {
        Self {
            preferences: scores.into_iter().map(|(d, s, t)| (d.into(), (s, t))).collect(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// 1-based label the backend will answer for `prompt`.
    pub fn preferred_label(&self, prompt: &RenderedPrompt) -> usize {
        let key = |doc: &str| {
            self.preferences
                .get(doc)
                .copied()
                .unwrap_or((f64::NEG_INFINITY, u64::MAX))
        };
        let mut best = 0;
        for (i, doc) in prompt.label_order.iter().enumerate().skip(1) {
            let (score, tie) = key(doc);
            let (best_score, best_tie) = key(&prompt.label_order[best]);
            if score > best_score || (score == best_score && tie < best_tie) {
                best = i;
            }
        }
        best + 1
    }
}

impl CompletionBackend for PreferenceBackend {
    fn complete(&self, prompt: &RenderedPrompt, params: &SamplingParams) -> Result<Vec<Completion>, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let label = self.preferred_label(prompt) as u32;
        let text = render_completion("preferred by fixture score", label, prompt.mode);
        Ok(vec![Completion::stop(text); params.group_size])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: usize,
    /// Delay before retry `i` (0-based) is `base_delay * 2^i`.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: usize) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.min(16))
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL up to but excluding `/chat/completions`, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(300),
            retry: RetryPolicy::default(),
            max_in_flight: 8,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            available: Mutex::new(limit.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("semaphore poisoned") += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

const BODY_EXCERPT: usize = 512;

/// OpenAI-compatible chat-completions client.
#[derive(Debug)]
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    in_flight: InFlight,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Params(format!("cannot build HTTP client: {e}")))?;
        let in_flight = InFlight::new(config.max_in_flight);
        Ok(Self {
            config,
            client,
            in_flight,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn request_body(&self, prompt: &RenderedPrompt, params: &SamplingParams, n: usize) -> serde_json::Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": params.temperature,
            "max_tokens": params.max_completion_units,
            "n": n,
        });
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn send_once(&self, body: &serde_json::Value) -> Result<Vec<Completion>, BackendError> {
        let _permit = self.in_flight.acquire();
        let mut request = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| BackendError::Transport {
            attempts: 1,
            message: e.to_string(),
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| BackendError::Transport {
            attempts: 1,
            message: e.to_string(),
        })?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text.chars().take(BODY_EXCERPT).collect(),
            });
        }
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| BackendError::Response(e.to_string()))?;
        Ok(parsed
            .choices
            .into_iter()
            .map(|choice| Completion {
                text: choice.message.content.unwrap_or_default(),
                finish_reason: match choice.finish_reason.as_deref() {
                    Some("stop") | None => FinishReason::Stop,
                    Some("length") => FinishReason::Length,
                    Some(_) => FinishReason::Error,
                },
            })
            .collect())
    }

    fn send_with_retries(&self, body: &serde_json::Value) -> Result<Vec<Completion>, BackendError> {
        let retry = self.config.retry;
        let mut attempt = 0;
        loop {
            match self.send_once(body) {
                Ok(choices) => return Ok(choices),
                Err(e) if e.is_retryable() && attempt < retry.max_retries => {
                    log::warn!(
                        "completion request failed ({e}); retry {} of {}",
                        attempt + 1,
                        retry.max_retries
                    );
                    std::thread::sleep(retry.delay(attempt));
                    attempt += 1;
                }
                Err(BackendError::Transport { message, .. }) => {
                    return Err(BackendError::Transport {
                        attempts: attempt + 1,
                        message,
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, prompt: &RenderedPrompt, params: &SamplingParams) -> Result<Vec<Completion>, BackendError> {
        params.validate()?;
        let mut out = Vec::with_capacity(params.group_size);
        // Some servers ignore `n`; keep asking for the remainder.
        while out.len() < params.group_size {
            let missing = params.group_size - out.len();
            let body = self.request_body(prompt, params, missing);
            let batch = self.send_with_retries(&body)?;
            if batch.is_empty() {
                return Err(BackendError::Response("response has no choices".into()));
            }
            out.extend(batch.into_iter().take(missing));
        }
        Ok(out)
    }
}
