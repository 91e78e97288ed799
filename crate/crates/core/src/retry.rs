//! Exponential-backoff retry loop shared by the chat and embedding clients.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Retry policy for transient endpoint failures (timeouts, 429, 5xx).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the first attempt; total attempts = max_retries + 1.
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .initial_backoff_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }
}

/// One attempt's failure: retry-worthy or final.
pub enum AttemptError {
    Transient(String),
    Fatal(Error),
}

/// Runs `op` until it succeeds, a fatal error occurs, or retries are
/// exhausted. Backoff delays are logged.
pub fn with_retries<T>(
    policy: &RetryPolicy,
    what: &str,
    mut op: impl FnMut() -> std::result::Result<T, AttemptError>,
) -> Result<T> {
    let mut last = String::new();
    for attempt in 0..=policy.max_retries {
        match op() {
            Ok(value) => return Ok(value),
            Err(AttemptError::Fatal(e)) => return Err(e),
            Err(AttemptError::Transient(message)) => {
                last = message;
                if attempt < policy.max_retries {
                    let delay = policy.backoff(attempt);
                    log::warn!(
                        "{what}: transient failure ({last}); retry {}/{} after {delay:?}",
                        attempt + 1,
                        policy.max_retries
                    );
                    std::thread::sleep(delay);
                }
            }
        }
    }
    Err(Error::RetriesExhausted {
        attempts: policy.max_retries + 1,
        last,
    })
}

/// Classifies a ureq failure: 429/5xx/timeouts/IO retry, 401/403 is an
/// authentication failure, anything else is final.
pub fn classify_ureq(err: ureq::Error) -> AttemptError {
    match err {
        ureq::Error::StatusCode(code) if code == 401 || code == 403 => {
            AttemptError::Fatal(Error::Auth { status: code })
        }
        ureq::Error::StatusCode(code) if code == 429 || (500..=599).contains(&code) => {
            AttemptError::Transient(format!("HTTP {code}"))
        }
        ureq::Error::StatusCode(code) => {
            AttemptError::Fatal(Error::Endpoint(format!("HTTP {code}")))
        }
        ureq::Error::Timeout(t) => AttemptError::Transient(format!("timeout: {t}")),
        ureq::Error::Io(e) => AttemptError::Transient(format!("io: {e}")),
        ureq::Error::ConnectionFailed => AttemptError::Transient("connection failed".to_string()),
        other => AttemptError::Fatal(Error::Endpoint(other.to_string())),
    }
}
