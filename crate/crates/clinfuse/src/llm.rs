//! The single boundary to any large language model: a blocking completion
//! trait, a deterministic scripted mock for hermetic runs, retry
//! machinery, and an HTTP client for real backends.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable carrying the completion endpoint URL when the
/// `--llm-endpoint` flag is absent.
pub const LLM_ENDPOINT_ENV: &str = "CLINFUSE_LLM_ENDPOINT";
/// Environment variable carrying the credential sent in the configured
/// auth header.
pub const LLM_API_KEY_ENV: &str = "CLINFUSE_LLM_API_KEY";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LlmError {
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("backend timed out")]
    Timeout,
    #[error("backend rate limited the request")]
    RateLimited,
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

impl LlmError {
    /// Transient failures are worth retrying; malformed responses and
    /// invalid prompts are not.
    pub fn is_transient(&self) -> bool {
        matches!(self, LlmError::Timeout | LlmError::RateLimited | LlmError::Unavailable(_))
    }
}

/// One completion request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub seed: Option<u64>,
}

impl Prompt {
    pub fn new(text: impl Into<String>, max_tokens: u32, temperature: f64) -> Self {
        Prompt { text: text.into(), max_tokens, temperature, seed: None }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.text.is_empty() {
            return Err(LlmError::InvalidPrompt("empty prompt text".to_string()));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidPrompt("max_tokens must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// One completion response with telemetry.
#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    pub backend_id: String,
    pub latency: Duration,
    /// Set whenever the backend produced empty or cut-off text.
    pub truncated: bool,
    /// Attempts spent, including retries.
    pub attempts: u32,
}

/// Blocking completion backend. Implementations are safe for concurrent
/// calls and never mutate pipeline data.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, prompt: &Prompt) -> Result<Completion, LlmError>;
    fn id(&self) -> &str;
}

// --- Deterministic mock -------------------------------------------------

/// Output format of a mock prediction, mirroring the two formats a real
/// fine-tuned backend emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictionStyle {
    /// Reasoning, then a `# Prediction #` line, then the 0/1 digit.
    HashMarker,
    /// Reasoning ending in `**Prediction**: d (word)`.
    BoldInline,
}

/// What the mock does for one prediction prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MockBehavior {
    /// Fixed label with optional canned reasoning.
    ScriptedLabel { label: u8, reasoning: Option<String> },
    /// Grade the patient-context section against the risk vocabulary and
    /// answer with severity-matched reasoning plus a noisy label.
    RiskNarrative,
    /// Reasoning without any prediction marker.
    MissingMarker,
    /// Two contradictory prediction markers.
    ConflictingMarkers,
    /// Echo the prompt payload (text after the first `---` line).
    Echo,
    /// Always fail with `Unavailable`.
    FailUnavailable,
}

/// Severity phrasing the risk narrative grades its reasoning with. These
/// deliberately differ from the note-level concept vocabulary so that
/// reasoning embeddings carry their own learnable surface.
pub const HIGH_RISK_PHRASES: [&str; 6] = [
    "critical",
    "deteriorating",
    "guarded prognosis",
    "escalating support",
    "unstable",
    "high concern",
];
pub const LOW_RISK_PHRASES: [&str; 6] = [
    "stable",
    "improving",
    "reassuring",
    "favorable trajectory",
    "routine recovery",
    "low concern",
];

/// Deterministic mock script: per-patient-key behaviors over a default,
/// with a seeded noise stream for the risk narrative.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockScript {
    pub default: MockBehavior,
    pub per_key: BTreeMap<String, MockBehavior>,
    pub style: PredictionStyle,
    pub seed: u64,
    pub risk_vocabulary: Vec<String>,
    pub benign_vocabulary: Vec<String>,
    /// Scale of the seeded noise added to the severity score before
    /// thresholding into the mock's 0/1 prediction.
    pub label_noise: f64,
    pub severity_threshold: f64,
}

impl MockScript {
    pub fn new(default: MockBehavior) -> Self {
        MockScript {
            default,
            per_key: BTreeMap::new(),
            style: PredictionStyle::HashMarker,
            seed: 0,
            risk_vocabulary: crate::cohort::RISK_CONCEPTS.iter().map(|s| s.to_string()).collect(),
            benign_vocabulary: crate::cohort::BENIGN_CONCEPTS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            label_noise: 3.0,
            severity_threshold: 5.0,
        }
    }

    pub fn echo() -> Self {
        MockScript::new(MockBehavior::Echo)
    }

    /// Default pipeline mock: label-correlated reasoning driven by the
    /// planted concept vocabulary in the prompt's own context section.
    pub fn risk_narrative(seed: u64) -> Self {
        let mut script = MockScript::new(MockBehavior::RiskNarrative);
        script.seed = seed;
        script
    }

    /// Fine-tuning-style corpus generation: reasoning conditioned on the
    /// true label per visit key. Test machinery only; never point it at
    /// evaluation visits.
    pub fn training_reasoning(labels: &BTreeMap<String, u8>) -> Self {
        let mut script = MockScript::new(MockBehavior::MissingMarker);
        for (key, &label) in labels {
            script
                .per_key
                .insert(key.clone(), MockBehavior::ScriptedLabel { label, reasoning: None });
        }
        script
    }

    pub fn with_style(mut self, style: PredictionStyle) -> Self {
        self.style = style;
        self
    }

    pub fn with_key_behavior(mut self, key: impl Into<String>, behavior: MockBehavior) -> Self {
        self.per_key.insert(key.into(), behavior);
        self
    }
}

/// Scripted mock backend. Identical `(prompt, script)` always produces an
/// identical completion.
pub struct MockLlm {
    script: MockScript,
    patient_key_re: regex::Regex,
}

impl MockLlm {
    pub fn new(script: MockScript) -> Self {
        MockLlm {
            script,
            patient_key_re: regex::Regex::new(r"Patient ID:\s*([A-Za-z0-9_.-]+)").unwrap(),
        }
    }

    fn echo_payload(text: &str) -> String {
        match text.split_once("\n---\n") {
            Some((_, payload)) => payload.trim().to_string(),
            None => text.to_string(),
        }
    }

    fn severity(&self, prompt_text: &str) -> i64 {
        // Grade only the patient's own context section; similar-case
        // exemplars carry their own vocabulary and must not bleed in.
        let section = prompt_text
            .split_once(crate::context::EHR_CONTEXT_HEADER)
            .map(|(_, rest)| rest.split("\n## ").next().unwrap_or(rest))
            .unwrap_or(prompt_text);
        let count = |vocab: &[String]| -> i64 {
            vocab.iter().map(|c| section.matches(c.as_str()).count() as i64).sum()
        };
        count(&self.script.risk_vocabulary) - count(&self.script.benign_vocabulary)
    }

    fn narrative(&self, severity: i64, found: &[&str]) -> String {
        let high = (4 + severity).clamp(0, 10) as usize;
        let low = (4 - severity).clamp(0, 10) as usize;
        let mut lines =
            vec!["Reviewing the documented conditions, procedures, and medications.".to_string()];
        if !found.is_empty() {
            lines.push(format!("Notable findings include {}.", found.join(", ")));
        }
        for i in 0..high {
            lines.push(format!(
                "The overall picture appears {} on this axis.",
                HIGH_RISK_PHRASES[i % HIGH_RISK_PHRASES.len()]
            ));
        }
        for i in 0..low {
            lines.push(format!(
                "Several indicators remain {} at this time.",
                LOW_RISK_PHRASES[i % LOW_RISK_PHRASES.len()]
            ));
        }
        lines.push(
            "Weighing these factors against comparable cases completes the assessment.".to_string(),
        );
        lines.join("\n")
    }

    fn render_prediction(&self, reasoning: &str, label: u8, prompt_text: &str) -> String {
        match self.script.style {
            PredictionStyle::HashMarker => format!("{reasoning}\n# Prediction #\n{label}"),
            PredictionStyle::BoldInline => {
                let word = if prompt_text.contains("mortality") {
                    if label == 1 {
                        "mortality"
                    } else {
                        "survival"
                    }
                } else if label == 1 {
                    "readmission"
                } else {
                    "no readmission"
                };
                format!("{reasoning}\n**Prediction**: {label} ({word})")
            }
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl CompletionClient for MockLlm {
    fn complete(&self, prompt: &Prompt) -> Result<Completion, LlmError> {
        prompt.validate()?;
        let started = Instant::now();
        let text = &prompt.text;

        let done = |out: String| {
            Ok(Completion {
                truncated: out.is_empty(),
                text: out,
                backend_id: "mock".to_string(),
                latency: started.elapsed(),
                attempts: 1,
            })
        };

        // Summarization prompts are always echoed: the payload is already
        // the best deterministic "summary" a mock can give.
        if text.starts_with(crate::context::SUMMARIZE_NOTES_MARKER) {
            return done(Self::echo_payload(text));
        }

        let key =
            self.patient_key_re.captures(text).map(|c| c[1].to_string()).unwrap_or_default();
        let behavior = self.script.per_key.get(&key).unwrap_or(&self.script.default);

        match behavior {
            MockBehavior::Echo => done(Self::echo_payload(text)),
            MockBehavior::FailUnavailable => {
                Err(LlmError::Unavailable("scripted failure".to_string()))
            }
            MockBehavior::MissingMarker => {
                done("The case was reviewed in detail but no verdict was committed.".to_string())
            }
            MockBehavior::ConflictingMarkers => done(
                "Initial read:\n# Prediction #\n1\nOn reflection:\n# Prediction #\n0".to_string(),
            ),
            MockBehavior::ScriptedLabel { label, reasoning } => {
                let body = reasoning
                    .clone()
                    .unwrap_or_else(|| self.narrative(if *label == 1 { 6 } else { -6 }, &[]));
                done(self.render_prediction(&body, *label, text))
            }
            MockBehavior::RiskNarrative => {
                let severity = self.severity(text);
                let found: Vec<&str> = self
                    .script
                    .risk_vocabulary
                    .iter()
                    .filter(|c| text.contains(c.as_str()))
                    .take(3)
                    .map(|s| s.as_str())
                    .collect();
                let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(key.as_bytes()) ^ self.script.seed);
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen::<f64>();
                let noise = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                let label = u8::from(
                    severity as f64 + self.script.label_noise * noise
                        > self.script.severity_threshold,
                );
                let reasoning = self.narrative(severity, &found);
                done(self.render_prediction(&reasoning, label, text))
            }
        }
    }

    fn id(&self) -> &str {
        "mock"
    }
}

// --- Retry machinery ----------------------------------------------------

/// Exponential backoff policy for transient failures.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_delay: Duration::from_millis(500), jitter: true }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: u32) -> Self {
        RetryPolicy { max_attempts, base_delay: Duration::ZERO, jitter: false }
    }

    fn delay(&self, attempt: u32) -> Duration {
        let base = self.base_delay.as_millis() as f64 * 2f64.powi(attempt as i32 - 1);
        let ms =
            if self.jitter { base * (0.75 + 0.5 * rand::thread_rng().gen::<f64>()) } else { base };
        Duration::from_millis(ms as u64)
    }
}

/// Wrapper that retries transient failures with exponential backoff and
/// reports total attempts in the completion telemetry.
pub struct RetryingClient<C: CompletionClient> {
    inner: C,
    policy: RetryPolicy,
}

impl<C: CompletionClient> RetryingClient<C> {
    pub fn new(inner: C, policy: RetryPolicy) -> Self {
        RetryingClient { inner, policy }
    }
}

impl<C: CompletionClient> CompletionClient for RetryingClient<C> {
    fn complete(&self, prompt: &Prompt) -> Result<Completion, LlmError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.inner.complete(prompt) {
                Ok(mut completion) => {
                    completion.attempts = attempt;
                    return Ok(completion);
                }
                Err(e) if e.is_transient() && attempt < self.policy.max_attempts => {
                    log::warn!("attempt {attempt} failed ({e}); retrying");
                    std::thread::sleep(self.policy.delay(attempt));
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn id(&self) -> &str {
        self.inner.id()
    }
}

/// Test helper: fails a configurable number of times, then delegates.
pub struct FlakyClient<C: CompletionClient> {
    inner: C,
    failures_left: AtomicUsize,
    error: LlmError,
}

impl<C: CompletionClient> FlakyClient<C> {
    pub fn new(inner: C, failures: usize, error: LlmError) -> Self {
        FlakyClient { inner, failures_left: AtomicUsize::new(failures), error }
    }
}

impl<C: CompletionClient> CompletionClient for FlakyClient<C> {
    fn complete(&self, prompt: &Prompt) -> Result<Completion, LlmError> {
        let left = self.failures_left.load(Ordering::SeqCst);
        if left > 0 {
            self.failures_left.store(left - 1, Ordering::SeqCst);
            return Err(self.error.clone());
        }
        self.inner.complete(prompt)
    }

    fn id(&self) -> &str {
        self.inner.id()
    }
}

/// Call-count wrapper for accounting tests and telemetry.
pub struct CountingClient<C: CompletionClient> {
    inner: C,
    calls: AtomicUsize,
}

impl<C: CompletionClient> CountingClient<C> {
    pub fn new(inner: C) -> Self {
        CountingClient { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<C: CompletionClient> CompletionClient for CountingClient<C> {
    fn complete(&self, prompt: &Prompt) -> Result<Completion, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(prompt)
    }

    fn id(&self) -> &str {
        self.inner.id()
    }
}

// --- HTTP backend -------------------------------------------------------

/// Configuration for the HTTP completion backend.
#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL; requests go to `{endpoint}/v1/complete`.
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
    /// Optional `(header name, value)` credential pair.
    pub auth_header: Option<(String, String)>,
}

#[derive(Serialize)]
struct CompleteRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct CompleteResponse {
    text: String,
}

/// Single-attempt HTTP client for the `POST /v1/complete` contract; wrap
/// in [`RetryingClient`] for backoff.
pub struct HttpLlm {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpLlm {
    pub fn new(config: HttpConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Unavailable(e.to_string()))?;
        Ok(HttpLlm { config, client })
    }
}

impl CompletionClient for HttpLlm {
    fn complete(&self, prompt: &Prompt) -> Result<Completion, LlmError> {
        prompt.validate()?;
        let started = Instant::now();
        let url = format!("{}/v1/complete", self.config.endpoint.trim_end_matches('/'));
        let body = CompleteRequest {
            model: &self.config.model,
            prompt: &prompt.text,
            max_tokens: prompt.max_tokens,
            temperature: prompt.temperature,
            seed: prompt.seed,
        };
        let mut request = self.client.post(&url).json(&body);
        if let Some((name, value)) = &self.config.auth_header {
            request = request.header(name.as_str(), value.as_str());
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout
            } else {
                LlmError::Unavailable(e.to_string())
            }
        })?;
        let status = response.status();
        if status.as_u16() == 429 {
            return Err(LlmError::RateLimited);
        }
        if status.as_u16() == 408 {
            return Err(LlmError::Timeout);
        }
        if !status.is_success() {
            return Err(LlmError::Unavailable(format!("status {status}")));
        }
        let text = response.text().map_err(|e| LlmError::Unavailable(e.to_string()))?;
        let parsed: CompleteResponse = serde_json::from_str(&text)
            .map_err(|e| LlmError::MalformedResponse(format!("{e}: {text:.120}")))?;
        Ok(Completion {
            truncated: parsed.text.is_empty(),
            text: parsed.text,
            backend_id: self.config.model.clone(),
            latency: started.elapsed(),
            attempts: 1,
        })
    }

    fn id(&self) -> &str {
        &self.config.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn prediction_prompt(key: &str) -> Prompt {
        Prompt::new(
            format!(
                "Decide 30-day readmission.\nPatient ID: {key}\n{}\nConditions: pneumonia\n",
                crate::context::EHR_CONTEXT_HEADER
            ),
            128,
            0.0,
        )
    }

    #[test]
    fn mock_is_deterministic() {
        let llm = MockLlm::new(MockScript::risk_narrative(9));
        let prompt = prediction_prompt("101_0").with_seed(1);
        let a = llm.complete(&prompt).unwrap();
        let b = llm.complete(&prompt).unwrap();
        assert_eq!(a.text, b.text);
    }

    #[test]
    fn scripted_label_zero_ends_with_hash_marker() {
        let script = MockScript::new(MockBehavior::ScriptedLabel { label: 0, reasoning: None });
        let llm = MockLlm::new(script);
        let out = llm.complete(&prediction_prompt("25070_0")).unwrap();
        assert!(out.text.ends_with("# Prediction #\n0"), "{}", out.text);
    }

    #[test]
    fn bold_inline_style_formats_mortality() {
        let script = MockScript::new(MockBehavior::ScriptedLabel { label: 1, reasoning: None })
            .with_style(PredictionStyle::BoldInline);
        let llm = MockLlm::new(script);
        let prompt = Prompt::new(
            format!(
                "Decide in-hospital mortality.\nPatient ID: 85258_1\n{}\nConditions: sepsis\n",
                crate::context::EHR_CONTEXT_HEADER
            ),
            128,
            0.0,
        );
        let out = llm.complete(&prompt).unwrap();
        assert!(out.text.contains("**Prediction**: 1 (mortality)"), "{}", out.text);
    }

    #[test]
    fn unknown_key_falls_back_to_default() {
        let script = MockScript::new(MockBehavior::ScriptedLabel { label: 1, reasoning: None })
            .with_key_behavior("known_0", MockBehavior::ScriptedLabel { label: 0, reasoning: None });
        let llm = MockLlm::new(script);
        let known = llm.complete(&prediction_prompt("known_0")).unwrap();
        let unknown = llm.complete(&prediction_prompt("stranger_3")).unwrap();
        assert!(known.text.ends_with('0'));
        assert!(unknown.text.ends_with('1'));
    }

    #[test]
    fn risk_narrative_tracks_context_severity() {
        let llm = MockLlm::new(MockScript::risk_narrative(4));
        let risky = Prompt::new(
            format!(
                "Task.\nPatient ID: 7_0\n{}\nseverity: septicemia shock respiratory failure septicemia shock\n## Similar Patient Cases\nstable vitals",
                crate::context::EHR_CONTEXT_HEADER
            ),
            128,
            0.0,
        );
        let calm = Prompt::new(
            format!(
                "Task.\nPatient ID: 8_0\n{}\nstable vitals routine follow up pain well controlled\n",
                crate::context::EHR_CONTEXT_HEADER
            ),
            128,
            0.0,
        );
        let risky_out = llm.complete(&risky).unwrap().text;
        let calm_out = llm.complete(&calm).unwrap().text;
        let count = |text: &str, vocab: &[&str]| -> usize {
            vocab.iter().map(|p| text.matches(p).count()).sum()
        };
        assert!(count(&risky_out, &HIGH_RISK_PHRASES) > count(&risky_out, &LOW_RISK_PHRASES));
        assert!(count(&calm_out, &LOW_RISK_PHRASES) > count(&calm_out, &HIGH_RISK_PHRASES));
    }

    #[test]
    fn retrying_client_reports_attempts() {
        let inner = MockLlm::new(MockScript::new(MockBehavior::ScriptedLabel {
            label: 1,
            reasoning: None,
        }));
        let flaky = FlakyClient::new(inner, 2, LlmError::Unavailable("blip".to_string()));
        let client = RetryingClient::new(flaky, RetryPolicy::no_delay(3));
        let out = client.complete(&prediction_prompt("1_0")).unwrap();
        assert_eq!(out.attempts, 3);
    }

    #[test]
    fn retrying_client_gives_up_after_max_attempts() {
        let inner = MockLlm::new(MockScript::echo());
        let flaky = FlakyClient::new(inner, 5, LlmError::RateLimited);
        let client = RetryingClient::new(flaky, RetryPolicy::no_delay(3));
        assert_eq!(client.complete(&prediction_prompt("1_0")), Err(LlmError::RateLimited));
    }

    #[test]
    fn invalid_prompt_is_rejected() {
        let llm = MockLlm::new(MockScript::echo());
        let empty = Prompt::new("", 10, 0.0);
        assert!(matches!(llm.complete(&empty), Err(LlmError::InvalidPrompt(_))));
        let zero = Prompt::new("x", 0, 0.0);
        assert!(matches!(llm.complete(&zero), Err(LlmError::InvalidPrompt(_))));
    }

    /// One-shot HTTP server answering a canned response on a local port.
    fn one_shot_server(response: &'static str) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            if let Ok((mut stream, _)) = listener.accept() {
                let mut buf = [0u8; 4096];
                let _ = stream.read(&mut buf);
                let _ = stream.write_all(response.as_bytes());
            }
        });
        format!("http://{addr}")
    }

    fn http_client(endpoint: String) -> HttpLlm {
        HttpLlm::new(HttpConfig {
            endpoint,
            model: "test-model".to_string(),
            timeout: Duration::from_secs(2),
            auth_header: None,
        })
        .unwrap()
    }

    #[test]
    fn http_ok_response_parses() {
        let endpoint = one_shot_server(
            "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: 16\r\n\r\n{\"text\": \"fine\"}",
        );
        let out = http_client(endpoint).complete(&prediction_prompt("9_0")).unwrap();
        assert_eq!(out.text, "fine");
        assert_eq!(out.backend_id, "test-model");
    }

    #[test]
    fn http_non_json_body_is_malformed() {
        let endpoint = one_shot_server(
            "HTTP/1.1 200 OK\r\ncontent-type: text/plain\r\ncontent-length: 9\r\n\r\nnot json!",
        );
        let err = http_client(endpoint).complete(&prediction_prompt("9_0")).unwrap_err();
        assert!(matches!(err, LlmError::MalformedResponse(_)), "{err}");
    }

    #[test]
    fn http_429_maps_to_rate_limited() {
        let endpoint =
            one_shot_server("HTTP/1.1 429 Too Many Requests\r\ncontent-length: 0\r\n\r\n");
        let err = http_client(endpoint).complete(&prediction_prompt("9_0")).unwrap_err();
        assert_eq!(err, LlmError::RateLimited);
    }

    #[test]
    fn http_5xx_maps_to_unavailable() {
        let endpoint =
            one_shot_server("HTTP/1.1 503 Service Unavailable\r\ncontent-length: 0\r\n\r\n");
        let err = http_client(endpoint).complete(&prediction_prompt("9_0")).unwrap_err();
        assert!(matches!(err, LlmError::Unavailable(_)));
    }

    #[test]
    fn http_unreachable_maps_to_unavailable() {
        // Port 1 on localhost refuses connections.
        let err = http_client("http://127.0.0.1:1".to_string())
            .complete(&prediction_prompt("9_0"))
            .unwrap_err();
        assert!(matches!(err, LlmError::Unavailable(_)), "{err}");
    }
}
