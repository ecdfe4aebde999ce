use std::env;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prompt::payload;
use crate::protect::PLACEHOLDER_OPEN;

/// Markers [`MockReversible`] puts around every translatable run.
pub const REVERSIBLE_OPEN: char = '⁅';
pub const REVERSIBLE_CLOSE: char = '⁆';

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Connection refused, DNS failure, timeout.
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend returned HTTP {0}")]
    Status(u16),
    #[error("malformed backend response: {0}")]
    BadResponse(String),
    #[error("{0}")]
    Rejected(String),
}

impl BackendError {
    pub fn is_unreachable(&self) -> bool {
        matches!(self, BackendError::Unreachable(_))
    }
}

pub trait TranslationBackend: Send + Sync {
    fn name(&self) -> &str;
    fn translate(&self, prompt: &str) -> Result<String, BackendError>;
}

fn payload_or_err(prompt: &str) -> Result<&str, BackendError> {
    payload(prompt).ok_or_else(|| BackendError::Rejected("prompt does not use the translation template".into()))
}

/// Returns the payload unchanged.
#[derive(Debug, Default, Clone, Copy)]
pub struct MockIdentity;

impl TranslationBackend for MockIdentity {
    fn name(&self) -> &str {
        "mock-identity"
    }

    fn translate(&self, prompt: &str) -> Result<String, BackendError> {
        payload_or_err(prompt).map(str::to_string)
    }
}

/// Wraps every run of text between placeholders in `⁅ ⁆`; [`MockReversible::invert`]
/// undoes it.
#[derive(Debug, Default, Clone, Copy)]
pub struct MockReversible;

impl MockReversible {
    pub fn wrap(payload: &str) -> String {
        let mut out = String::with_capacity(payload.len() + 8);
        let mut rest = payload;
        while !rest.is_empty() {
            let (text, tail) = match rest.find(PLACEHOLDER_OPEN) {
                Some(p) => {
                    let close = rest[p..].find('⟧').map_or(rest.len(), |c| p + c + '⟧'.len_utf8());
                    (&rest[..p], Some(&rest[p..close]))
                }
                None => (rest, None),
            };
            if !text.is_empty() {
                out.push(REVERSIBLE_OPEN);
                out.push_str(text);
                out.push(REVERSIBLE_CLOSE);
            }
            rest = &rest[text.len()..];
            if let Some(ph) = tail {
                out.push_str(ph);
                rest = &rest[ph.len()..];
            }
        }
        out
    }

    pub fn invert(text: &str) -> String {
        text.chars().filter(|&c| c != REVERSIBLE_OPEN && c != REVERSIBLE_CLOSE).collect()
    }
}

impl TranslationBackend for MockReversible {
    fn name(&self) -> &str {
        "mock-reversible"
    }

    fn translate(&self, prompt: &str) -> Result<String, BackendError> {
        payload_or_err(prompt).map(Self::wrap)
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    model: &'a str,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct RemoteResponse {
    text: String,
}

/// POSTs `{"model", "prompt"}` with a bearer token and reads `{"text"}`.
/// Non-2xx statuses map to [`BackendError::Status`]; transport failures
/// and timeouts to [`BackendError::Unreachable`].
pub struct RemoteHttp {
    endpoint: String,
    model: String,
    token: String,
    agent: ureq::Agent,
}

impl RemoteHttp {
    pub fn new(endpoint: &str, model: &str, token: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            token: token.to_string(),
            agent,
        }
    }
}

impl TranslationBackend for RemoteHttp {
    fn name(&self) -> &str {
        "remote-http"
    }

    fn translate(&self, prompt: &str) -> Result<String, BackendError> {
        let resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.token))
            .send_json(RemoteRequest {
                model: &self.model,
                prompt,
            });
        let mut resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::StatusCode(code)) => return Err(BackendError::Status(code)),
            Err(
                e @ (ureq::Error::Io(_)
                | ureq::Error::Timeout(_)
                | ureq::Error::HostNotFound
                | ureq::Error::ConnectionFailed),
            ) => return Err(BackendError::Unreachable(e.to_string())),
            Err(e) => return Err(BackendError::BadResponse(e.to_string())),
        };
        let body: RemoteResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::BadResponse(e.to_string()))?;
        Ok(body.text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendKind {
    RemoteHttp {
        endpoint: String,
        /// Environment variable holding the bearer token.
        auth_env: String,
        model: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
    MockIdentity,
    MockReversible,
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Sleep before attempt `n + 2` is `backoff_ms[n]` (last entry repeats).
    pub backoff_ms: Vec<u64>,
    /// Scale each sleep by a uniform factor in [0.5, 1.5).
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_ms: vec![1_000, 4_000, 16_000],
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// No sleeping between attempts.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            backoff_ms: Vec::new(),
            jitter: false,
        }
    }

    pub fn delay_before_retry(&self, failed_attempt: u32) -> Duration {
        let Some(&base) = self
            .backoff_ms
            .get(failed_attempt.saturating_sub(1) as usize)
            .or(self.backoff_ms.last())
        else {
            return Duration::ZERO;
        };
        let ms = if self.jitter {
            base as f64 * rand::random_range(0.5..1.5)
        } else {
            base as f64
        };
        Duration::from_millis(ms as u64)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("invalid backend config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    #[serde(flatten)]
    pub kind: BackendKind,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Requests per minute across all workers; `None` is unlimited.
    #[serde(default)]
    pub rate_limit_per_minute: Option<u32>,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

fn default_parallel() -> usize {
    4
}

fn default_checkpoint_every() -> usize {
    100
}

impl Default for BackendConfig {
    /// The offline identity mock; real runs must opt into a remote backend.
    fn default() -> Self {
        Self::mock_identity()
    }
}

impl BackendConfig {
    pub fn new(kind: BackendKind) -> Self {
        Self {
            kind,
            max_parallel: default_parallel(),
            retry: RetryPolicy::default(),
            rate_limit_per_minute: None,
            checkpoint_every: default_checkpoint_every(),
        }
    }

    pub fn mock_identity() -> Self {
        Self::new(BackendKind::MockIdentity)
    }

    pub fn mock_reversible() -> Self {
        Self::new(BackendKind::MockReversible)
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            BackendKind::RemoteHttp { .. } => "remote-http",
            BackendKind::MockIdentity => "mock-identity",
            BackendKind::MockReversible => "mock-reversible",
        }
    }

    /// Default Arabic-script threshold: mocks emit the source script, so
    /// they validate at 0.
    pub fn default_script_threshold(&self) -> f64 {
        match self.kind {
            BackendKind::RemoteHttp { .. } => 0.5,
            BackendKind::MockIdentity | BackendKind::MockReversible => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_parallel == 0 {
            return Err(ConfigError::Invalid("max_parallel must be at least 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(ConfigError::Invalid("retry.max_attempts must be at least 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(ConfigError::Invalid("checkpoint_every must be at least 1".into()));
        }
        if self.rate_limit_per_minute == Some(0) {
            return Err(ConfigError::Invalid("rate_limit_per_minute must be positive".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn TranslationBackend>, ConfigError> {
        self.validate()?;
        Ok(match &self.kind {
            BackendKind::MockIdentity => Box::new(MockIdentity),
            BackendKind::MockReversible => Box::new(MockReversible),
            BackendKind::RemoteHttp {
                endpoint,
                auth_env,
                model,
                timeout_secs,
            } => {
                let token = env::var(auth_env)
                    .ok()
                    .filter(|t| !t.is_empty())
                    .ok_or_else(|| ConfigError::Invalid(format!("environment variable {auth_env} is not set")))?;
                Box::new(RemoteHttp::new(endpoint, model, &token, Duration::from_secs(*timeout_secs)))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::translate::prompt::build_prompt;
    use crate::protect::{mask, segment, TermGlossary};

    fn prompt(text: &str) -> String {
        build_prompt(&mask(&segment(text, &TermGlossary::empty())))
    }

    #[test]
    fn identity_echoes_payload() {
        assert_eq!(MockIdentity.translate(&prompt("a `b` c")).unwrap(), "a ⟦P-0001⟧ c");
        assert!(MockIdentity.translate("free-form prompt").is_err());
    }

    #[test]
    fn reversible_wraps_text_runs() {
        let out = MockReversible.translate(&prompt("a `b` c `d`")).unwrap();
        assert_eq!(out, "⁅a ⁆⟦P-0001⟧⁅ c ⁆⟦P-0002⟧");
        assert_eq!(MockReversible::invert(&out), "a ⟦P-0001⟧ c ⟦P-0002⟧");
        assert_eq!(MockReversible::wrap(""), "");
    }

    #[test]
    fn backoff_schedule() {
        let r = RetryPolicy {
            jitter: false,
            ..RetryPolicy::default()
        };
        assert_eq!(r.delay_before_retry(1), Duration::from_secs(1));
        assert_eq!(r.delay_before_retry(2), Duration::from_secs(4));
        assert_eq!(r.delay_before_retry(3), Duration::from_secs(16));
        assert_eq!(r.delay_before_retry(9), Duration::from_secs(16));
        let j = RetryPolicy::default().delay_before_retry(2);
        assert!(j >= Duration::from_secs(2) && j < Duration::from_secs(6));
        assert_eq!(RetryPolicy::immediate(3).delay_before_retry(1), Duration::ZERO);
    }

    #[test]
    fn config_validation() {
        let mut c = BackendConfig::mock_identity();
        assert!(c.validate().is_ok());
        c.max_parallel = 0;
        assert!(c.validate().is_err());
        let mut c = BackendConfig::mock_identity();
        c.retry.max_attempts = 0;
        assert!(c.build().is_err());
    }

    #[test]
    fn remote_needs_token() {
        let c = BackendConfig::new(BackendKind::RemoteHttp {
            endpoint: "http://127.0.0.1:9/v1".into(),
            auth_env: "GEMFORGE_TEST_TOKEN_THAT_IS_NOT_SET".into(),
            model: "m".into(),
            timeout_secs: 1,
        });
        assert!(matches!(c.build(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn unreachable_remote() {
        let b = RemoteHttp::new("http://127.0.0.1:9/v1", "m", "t", Duration::from_secs(2));
        assert!(b.translate(&prompt("hi")).unwrap_err().is_unreachable());
    }

    #[test]
    fn config_from_json() {
        let c: BackendConfig = serde_json::from_str(
            r#"{"kind":"remote-http","endpoint":"https://x/v1","auth_env":"TOK","model":"flash","max_parallel":8}"#,
        )
        .unwrap();
        assert_eq!(c.max_parallel, 8);
        assert_eq!(c.retry.max_attempts, 3);
        assert_eq!(c.default_script_threshold(), 0.5);
    }
}
