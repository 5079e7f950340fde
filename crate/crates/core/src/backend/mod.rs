//! Generator backends.
//!
//! A [`Backend`] samples completions and reports next-token probabilities.
//! Two implementations exist: [`OpenAiBackend`] talks to any
//! OpenAI-compatible HTTP endpoint, and [`SyntheticBackend`] simulates a model
//! with known answer distributions for tests and oracles.

mod openai;
mod synthetic;

use std::time::Duration;

use thiserror::Error;

pub use openai::{ApiMode, OpenAiBackend, OpenAiConfig, API_KEY_ENV};
pub use synthetic::{
    ConfidenceLaw, SyntheticBackend, SyntheticModelSpec, SyntheticQuery, SyntheticSettings,
};

/// Probability assigned to a requested token missing from a truncated top-k list.
pub const PROBABILITY_FLOOR: f64 = 1e-6;

/// Token spellings whose probabilities are summed to form p(Yes).
pub fn default_yes_variants() -> Vec<String> {
    vec!["Yes".to_string(), " Yes".to_string()]
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend refused the request (status {status}): {message}")]
    Refusal { status: u16, message: String },
    #[error("backend cannot provide next-token probabilities: {0}")]
    Unsupported(String),
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration error: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

/// One sampling call.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorRequest {
    pub system: Option<String>,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    /// Ask for the first generated position's top-k distribution.
    pub first_token_logprobs: bool,
}

impl GeneratorRequest {
    pub fn new(prompt: impl Into<String>, temperature: f64) -> Self {
        GeneratorRequest {
            system: None,
            prompt: prompt.into(),
            temperature,
            max_tokens: 1024,
            seed: None,
            first_token_logprobs: false,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Log-probabilities for one position, possibly only the top-k.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    entries: Vec<(String, f64)>,
    truncated: bool,
}

impl TokenDistribution {
    /// Positive log-probabilities up to 1e-9 are clamped to zero (servers emit
    /// tiny rounding noise); anything larger is rejected.
    pub fn new(entries: Vec<(String, f64)>, truncated: bool) -> Result<Self, BackendError> {
        if entries.is_empty() {
            return Err(BackendError::Protocol("empty token distribution".into()));
        }
        let mut clean = Vec::with_capacity(entries.len());
        for (token, lp) in entries {
            if lp.is_nan() || lp > 1e-9 {
                return Err(BackendError::Protocol(format!(
                    "invalid logprob {lp} for token {token:?}"
                )));
            }
            clean.push((token, lp.min(0.0)));
        }
        Ok(TokenDistribution {
            entries: clean,
            truncated,
        })
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// Probability mass of the given token spellings. Missing variants count
    /// [`PROBABILITY_FLOOR`] each when the list is truncated. Clipped to [0,1].
    pub fn probability_of(&self, variants: &[String]) -> f64 {
        let mut seen: Vec<&str> = Vec::with_capacity(variants.len());
        let mut total = 0.0;
        for v in variants {
            if seen.contains(&v.as_str()) {
                continue;
            }
            seen.push(v);
            match self.entries.iter().find(|(tok, _)| tok == v) {
                Some((_, lp)) => total += lp.exp(),
                None if self.truncated => total += PROBABILITY_FLOOR,
                None => {}
            }
        }
        total.clamp(0.0, 1.0)
    }
}

/// Shannon entropy (nats) of a first-token distribution.
///
/// Probabilities are `exp(logprob)`. For a truncated list the missing mass
/// `max(0, 1 - sum)` becomes one extra pseudo-entry. The result is computed on
/// the renormalized distribution.
pub fn first_token_entropy(dist: &TokenDistribution) -> f64 {
    let mut probs: Vec<f64> = dist.entries().iter().map(|(_, lp)| lp.exp()).collect();
    if dist.truncated() {
        let residual = (1.0 - probs.iter().sum::<f64>()).max(0.0);
        if residual > 0.0 {
            probs.push(residual);
        }
    }
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let h: f64 = probs
        .iter()
        .map(|p| p / total)
        .filter(|p| *p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    h.max(0.0)
}

/// A completion and, when requested and available, its first-token distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub first_token: Option<TokenDistribution>,
}

pub trait Backend: Send + Sync {
    /// Short identifier recorded in pool headers.
    fn name(&self) -> String;

    fn sample(&self, request: &GeneratorRequest) -> Result<Completion, BackendError>;

    /// Summed next-token probability of `variants` after `prompt`, in [0, 1].
    fn token_probability(&self, prompt: &str, variants: &[String]) -> Result<f64, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn name(&self) -> String {
        (**self).name()
    }

    fn sample(&self, request: &GeneratorRequest) -> Result<Completion, BackendError> {
        (**self).sample(request)
    }

    fn token_probability(&self, prompt: &str, variants: &[String]) -> Result<f64, BackendError> {
        (**self).token_probability(prompt, variants)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn sample(&self, request: &GeneratorRequest) -> Result<Completion, BackendError> {
        (**self).sample(request)
    }

    fn token_probability(&self, prompt: &str, variants: &[String]) -> Result<f64, BackendError> {
        (**self).token_probability(prompt, variants)
    }
}

/// Bounded exponential backoff for transport failures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn delay_for(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or
    /// `max_attempts` is exhausted. `op` receives the 1-based attempt number.
    pub fn run<T>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < attempts => {
                    log::debug!("attempt {attempt} failed: {e}; retrying");
                    std::thread::sleep(self.delay_for(attempt));
                    attempt += 1;
                }
                Err(BackendError::Transport { message, .. }) => {
                    return Err(BackendError::Transport { attempts: attempt, message })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(entries: &[(&str, f64)], truncated: bool) -> TokenDistribution {
        TokenDistribution::new(
            entries.iter().map(|(t, p)| (t.to_string(), *p)).collect(),
            truncated,
        )
        .unwrap()
    }

    #[test]
    fn yes_variants_are_summed() {
        let d = dist(&[("Yes", 0.5f64.ln()), (" Yes", 0.2f64.ln()), ("No", 0.3f64.ln())], true);
        let p = d.probability_of(&default_yes_variants());
        assert!((p - 0.7).abs() < 1e-12, "{p}");
    }

    #[test]
    fn missing_variants_get_floor() {
        let d = dist(&[("No", 0.9f64.ln())], true);
        let p = d.probability_of(&default_yes_variants());
        assert!((p - 2e-6).abs() < 1e-18, "{p}");
        let full = dist(&[("No", 0.0)], false);
        assert_eq!(full.probability_of(&default_yes_variants()), 0.0);
    }

    #[test]
    fn probability_is_clipped() {
        let d = dist(&[("Yes", 0.0), (" Yes", 0.0)], true);
        assert_eq!(d.probability_of(&default_yes_variants()), 1.0);
    }

    #[test]
    fn distribution_rejects_bad_logprobs() {
        assert!(TokenDistribution::new(vec![], false).is_err());
        assert!(TokenDistribution::new(vec![("a".into(), 0.5)], false).is_err());
        assert!(TokenDistribution::new(vec![("a".into(), f64::NAN)], false).is_err());
        let d = TokenDistribution::new(vec![("a".into(), 1e-12)], false).unwrap();
        assert_eq!(d.entries()[0].1, 0.0);
    }

    #[test]
    fn entropy_cases() {
        assert_eq!(first_token_entropy(&dist(&[("a", 0.0)], false)), 0.0);
        let two = dist(&[("a", 0.5f64.ln()), ("b", 0.5f64.ln())], false);
        assert!((first_token_entropy(&two) - std::f64::consts::LN_2).abs() < 1e-12);
        // 0.6 + 0.3 listed, 0.1 residual
        let trunc = dist(&[("a", 0.6f64.ln()), ("b", 0.3f64.ln())], true);
        let want: f64 = [0.6f64, 0.3, 0.1].iter().map(|p| -p * p.ln()).sum();
        assert!((first_token_entropy(&trunc) - want).abs() < 1e-12);
        // same list without truncation renormalizes 0.6/0.3 instead
        let untrunc = dist(&[("a", 0.6f64.ln()), ("b", 0.3f64.ln())], false);
        let want: f64 = [2.0f64 / 3.0, 1.0 / 3.0].iter().map(|p| -p * p.ln()).sum();
        assert!((first_token_entropy(&untrunc) - want).abs() < 1e-12);
    }

    #[test]
    fn retry_stops_after_max_attempts() {
        let policy = RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(2),
        };
        let mut calls = 0;
        let err = policy
            .run::<()>(|_| {
                calls += 1;
                Err(BackendError::Transport { attempts: 0, message: "down".into() })
            })
            .unwrap_err();
        assert_eq!(calls, 5);
        assert_eq!(err, BackendError::Transport { attempts: 5, message: "down".into() });

        let mut calls = 0;
        let err = policy
            .run::<()>(|_| {
                calls += 1;
                Err(BackendError::Refusal { status: 400, message: "bad".into() })
            })
            .unwrap_err();
        assert_eq!(calls, 1);
        assert!(!err.is_retryable());
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay_for(1), Duration::from_millis(250));
        assert_eq!(p.delay_for(2), Duration::from_millis(500));
        assert_eq!(p.delay_for(10), Duration::from_secs(8));
    }
}
