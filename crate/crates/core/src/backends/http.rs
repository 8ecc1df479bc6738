//! Chat-completion backend for remote models reached only through an API.
//!
//! The example payload is rendered into a prompt template, POSTed as an
//! OpenAI-style chat completion and the answer text is mapped back onto
//! the label space. When the endpoint returns per-token log-probabilities
//! over label tokens they become the probability vector; otherwise the
//! record is one-hot and the backend reports opaque confidence.
//!
//! Responses are cached on disk, one file per request hash, holding the
//! response body verbatim.

use std::fs;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendDescriptor, BackendError, BackendSource, Capacity, PredictionRecord};
use crate::dataset::{LabelSpace, LabeledExample};
use crate::hashing::sha256_fields_hex;

pub const DEFAULT_API_KEY_ENV: &str = "EA_API_KEY";
pub const CACHE_DIR_ENV: &str = "EA_CACHE_DIR";

fn default_max_tokens() -> u32 {
    16
}
fn default_top_logprobs() -> u32 {
    5
}
fn default_max_in_flight() -> usize {
    4
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    1000
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpEndpoint {
    /// Full chat-completions URL.
    pub url: String,
    pub model: String,
    /// Prompt with `{input}` and `{labels}` placeholders.
    pub template: String,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Request per-token log-probabilities.
    #[serde(default)]
    pub logprobs: bool,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Retries after the first attempt.
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// First backoff delay; doubles on every retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>, model: impl Into<String>, template: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            template: template.into(),
            max_tokens: default_max_tokens(),
            logprobs: false,
            top_logprobs: default_top_logprobs(),
            max_in_flight: default_max_in_flight(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            timeout_ms: default_timeout_ms(),
            api_key_env: default_api_key_env(),
        }
    }

    pub fn render_prompt(&self, input: &str, labels: &LabelSpace) -> String {
        self.template
            .replace("{labels}", &labels.labels().join(", "))
            .replace("{input}", input)
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": self.max_tokens,
        });
        if self.logprobs {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(self.top_logprobs);
        }
        body
    }

    pub fn cache_key(&self, prompt: &str) -> String {
        sha256_fields_hex([
            self.url.as_bytes(),
            self.model.as_bytes(),
            prompt.as_bytes(),
        ])
    }
}

/// First label occurring in `text` as a whole word, case-insensitively.
/// When several labels start at the same position the longest wins.
pub fn find_label(text: &str, labels: &LabelSpace) -> Option<usize> {
    let hay: Vec<char> = text.to_lowercase().chars().collect();
    let needles: Vec<Vec<char>> = labels
        .labels()
        .iter()
        .map(|l| l.to_lowercase().chars().collect())
        .collect();
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    for start in 0..hay.len() {
        if start > 0 && is_word(hay[start - 1]) {
            continue;
        }
        let mut best: Option<(usize, usize)> = None;
        for (idx, needle) in needles.iter().enumerate() {
            let end = start + needle.len();
            if needle.is_empty() || end > hay.len() || hay[start..end] != needle[..] {
                continue;
            }
            if end < hay.len() && is_word(hay[end]) {
                continue;
            }
            if best.is_none_or(|(_, len)| needle.len() > len) {
                best = Some((idx, needle.len()));
            }
        }
        if let Some((idx, _)) = best {
            return Some(idx);
        }
    }
    None
}

/// Probabilities from the first generated position whose candidate tokens
/// include a label: exponentiated log-probs over the labels found there,
/// renormalised. Labels absent from that position get zero.
pub fn label_probs_from_logprobs(logprobs: &Value, labels: &LabelSpace) -> Option<Vec<f64>> {
    let positions = logprobs.get("content")?.as_array()?;
    let lowered: Vec<String> = labels.labels().iter().map(|l| l.to_lowercase()).collect();
    for position in positions {
        let mut best: Vec<Option<f64>> = vec![None; labels.len()];
        let mut candidates = Vec::new();
        if let (Some(t), Some(lp)) = (position.get("token"), position.get("logprob")) {
            candidates.push((t, lp));
        }
        if let Some(top) = position.get("top_logprobs").and_then(Value::as_array) {
            for alt in top {
                if let (Some(t), Some(lp)) = (alt.get("token"), alt.get("logprob")) {
                    candidates.push((t, lp));
                }
            }
        }
        for (token, lp) in candidates {
            let (Some(token), Some(lp)) = (token.as_str(), lp.as_f64()) else {
                continue;
            };
            if !lp.is_finite() {
                continue;
            }
            let token = token.trim().to_lowercase();
            if let Some(idx) = lowered.iter().position(|l| *l == token) {
                best[idx] = Some(best[idx].map_or(lp, |cur: f64| cur.max(lp)));
            }
        }
        if best.iter().any(Option::is_some) {
            let max = best.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = best
                .iter()
                .map(|lp| lp.map_or(0.0, |lp| (lp - max).exp()))
                .collect();
            let total: f64 = exps.iter().sum();
            return Some(exps.into_iter().map(|e| e / total).collect());
        }
    }
    None
}

/// Maps a raw chat-completion response body onto a prediction.
pub fn parse_response(
    backend_id: &str,
    example_id: &str,
    body: &str,
    labels: &LabelSpace,
) -> Result<PredictionRecord, BackendError> {
    let parse_failure = || BackendError::ParseFailure {
        backend: backend_id.to_string(),
        raw: body.to_string(),
    };
    let value: Value = serde_json::from_str(body).map_err(|_| parse_failure())?;
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(parse_failure)?;
    if let Some(probs) = choice
        .get("logprobs")
        .and_then(|lp| label_probs_from_logprobs(lp, labels))
    {
        return PredictionRecord::new(backend_id, example_id, probs);
    }
    let content = choice
        .get("message")
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .ok_or_else(parse_failure)?;
    let predicted = find_label(content, labels).ok_or_else(|| BackendError::ParseFailure {
        backend: backend_id.to_string(),
        raw: content.to_string(),
    })?;
    Ok(PredictionRecord::one_hot(
        backend_id,
        example_id,
        labels.len(),
        predicted,
    ))
}

struct InFlight {
    count: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut count = self.count.lock().expect("in-flight lock");
        while *count >= self.limit {
            count = self.freed.wait(count).expect("in-flight lock");
        }
        *count += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.count.lock().expect("in-flight lock") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpBackend {
    descriptor: BackendDescriptor,
    cache_dir: Option<PathBuf>,
    client: reqwest::blocking::Client,
    in_flight: InFlight,
}

impl HttpBackend {
    /// `cache_dir` falls back to `EA_CACHE_DIR` when unset.
    pub fn new(descriptor: BackendDescriptor, cache_dir: Option<PathBuf>) -> Result<Self, BackendError> {
        let BackendSource::Http(endpoint) = &descriptor.source else {
            return Err(BackendError::Config(format!(
                "backend {} is not http",
                descriptor.id
            )));
        };
        for placeholder in ["{input}", "{labels}"] {
            if !endpoint.template.contains(placeholder) {
                return Err(BackendError::Config(format!(
                    "prompt template lacks the {placeholder} placeholder"
                )));
            }
        }
        if endpoint.max_in_flight == 0 {
            return Err(BackendError::Config("max_in_flight must be positive".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let limit = endpoint.max_in_flight;
        let cache_dir = cache_dir.or_else(|| std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from));
        Ok(Self {
            descriptor,
            cache_dir,
            client,
            in_flight: InFlight {
                count: Mutex::new(0),
                freed: Condvar::new(),
                limit,
            },
        })
    }

    fn endpoint(&self) -> &HttpEndpoint {
        match &self.descriptor.source {
            BackendSource::Http(e) => e,
            _ => unreachable!("checked in new"),
        }
    }

    fn cache_path(&self, key: &str) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    /// Sends one request with retries, returning the response body.
    fn fetch(&self, prompt: &str) -> Result<String, BackendError> {
        let endpoint = self.endpoint();
        let key = std::env::var(&endpoint.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| BackendError::AuthMissing(endpoint.api_key_env.clone()))?;
        let body = endpoint.request_body(prompt);
        let id = &self.descriptor.id;
        let _slot = self.in_flight.acquire();

        let mut last_err = None;
        for attempt in 0..=endpoint.retries {
            if attempt > 0 {
                let delay = endpoint.backoff_ms.saturating_mul(1 << (attempt - 1).min(20));
                std::thread::sleep(Duration::from_millis(delay));
            }
            let response = self
                .client
                .post(&endpoint.url)
                .bearer_auth(&key)
                .json(&body)
                .send();
            match response {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp.text().map_err(|e| BackendError::BackendUnavailable {
                            backend: id.clone(),
                            reason: e.to_string(),
                        });
                    }
                    let err = BackendError::HttpStatus {
                        backend: id.clone(),
                        code: status.as_u16(),
                    };
                    if status.is_client_error() && status.as_u16() != 429 {
                        return Err(err);
                    }
                    last_err = Some(err);
                }
                Err(e) => {
                    last_err = Some(BackendError::BackendUnavailable {
                        backend: id.clone(),
                        reason: e.to_string(),
                    });
                }
            }
            log::debug!("backend {id}: attempt {} failed", attempt + 1);
        }
        Err(last_err.expect("at least one attempt"))
    }
}

impl Backend for HttpBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn predict(
        &self,
        example: &LabeledExample,
        labels: &LabelSpace,
    ) -> Result<PredictionRecord, BackendError> {
        let endpoint = self.endpoint();
        let prompt = endpoint.render_prompt(&example.payload, labels);
        let cache_path = self.cache_path(&endpoint.cache_key(&prompt));

        let body = match cache_path.as_ref().filter(|p| p.exists()) {
            Some(path) => fs::read_to_string(path).map_err(|e| BackendError::io(path, e))?,
            None => {
                let body = self.fetch(&prompt)?;
                if let Some(path) = &cache_path {
                    if let Some(dir) = path.parent() {
                        fs::create_dir_all(dir).map_err(|e| BackendError::io(dir, e))?;
                    }
                    fs::write(path, &body).map_err(|e| BackendError::io(path, e))?;
                }
                body
            }
        };
        parse_response(&self.descriptor.id, &example.id, &body, labels)
    }

    fn opaque_confidence(&self) -> bool {
        !self.endpoint().logprobs
    }

    fn capacity(&self) -> Capacity {
        Capacity::MaxInFlight(self.endpoint().max_in_flight)
    }
}
