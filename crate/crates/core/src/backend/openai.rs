//! Client for OpenAI-compatible `chat/completions` and `completions` endpoints.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendError, Completion, GeneratorRequest, RetryPolicy, TokenDistribution};

/// Environment variable holding the bearer credential.
pub const API_KEY_ENV: &str = "CONFSCALE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiMode {
    #[default]
    Chat,
    Completions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenAiConfig {
    pub api_base: String,
    pub api_key: Option<String>,
    pub model: String,
    pub mode: ApiMode,
    pub max_in_flight: usize,
    pub top_logprobs: u32,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl OpenAiConfig {
    pub fn new(api_base: impl Into<String>, model: impl Into<String>) -> Self {
        OpenAiConfig {
            api_base: api_base.into(),
            api_key: None,
            model: model.into(),
            mode: ApiMode::Chat,
            max_in_flight: 8,
            top_logprobs: 20,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }

    /// Reads the credential from [`API_KEY_ENV`].
    pub fn with_env_key(mut self) -> Self {
        self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        self
    }
}

/// Counting semaphore capping concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cv.notify_one();
    }
}

pub struct OpenAiBackend {
    cfg: OpenAiConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl std::fmt::Debug for OpenAiBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiBackend")
            .field("api_base", &self.cfg.api_base)
            .field("model", &self.cfg.model)
            .finish_non_exhaustive()
    }
}

impl OpenAiBackend {
    /// Fails with [`BackendError::Config`] when no credential is configured,
    /// so misconfiguration surfaces before any request is made.
    pub fn new(cfg: OpenAiConfig) -> Result<Self, BackendError> {
        if cfg.api_key.as_deref().is_none_or(str::is_empty) {
            return Err(BackendError::Config(format!(
                "no API key: set {API_KEY_ENV} to use the live backend"
            )));
        }
        if cfg.api_base.trim().is_empty() {
            return Err(BackendError::Config("--api-base is required".into()));
        }
        if cfg.model.trim().is_empty() {
            return Err(BackendError::Config("model name is required".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Gate::new(cfg.max_in_flight);
        Ok(OpenAiBackend { cfg, agent, gate })
    }

    fn endpoint(&self) -> String {
        let base = self.cfg.api_base.trim_end_matches('/');
        match self.cfg.mode {
            ApiMode::Chat => format!("{base}/chat/completions"),
            ApiMode::Completions => format!("{base}/completions"),
        }
    }

    fn body(
        &self,
        system: Option<&str>,
        prompt: &str,
        temperature: f64,
        max_tokens: u32,
        seed: Option<u64>,
        logprobs: bool,
    ) -> Value {
        let mut body = match self.cfg.mode {
            ApiMode::Chat => {
                let mut messages = Vec::new();
                if let Some(s) = system {
                    messages.push(json!({"role": "system", "content": s}));
                }
                messages.push(json!({"role": "user", "content": prompt}));
                json!({"model": self.cfg.model, "messages": messages})
            }
            ApiMode::Completions => {
                let text = match system {
                    Some(s) => format!("{s}\n\n{prompt}"),
                    None => prompt.to_string(),
                };
                json!({"model": self.cfg.model, "prompt": text})
            }
        };
        let obj = body.as_object_mut().expect("object literal");
        obj.insert("temperature".into(), json!(temperature));
        obj.insert("max_tokens".into(), json!(max_tokens));
        if let Some(s) = seed {
            obj.insert("seed".into(), json!(s));
        }
        if logprobs {
            match self.cfg.mode {
                ApiMode::Chat => {
                    obj.insert("logprobs".into(), json!(true));
                    obj.insert("top_logprobs".into(), json!(self.cfg.top_logprobs));
                }
                ApiMode::Completions => {
                    obj.insert("logprobs".into(), json!(self.cfg.top_logprobs));
                }
            }
        }
        body
    }

    /// POSTs `body`, retrying transport failures. The payload is identical on
    /// every attempt.
    fn post(&self, body: &Value) -> Result<Value, BackendError> {
        let url = self.endpoint();
        let key = self.cfg.api_key.as_deref().unwrap_or_default();
        self.cfg.retry.run(|attempt| {
            let _permit = self.gate.acquire();
            log::trace!("POST {url} (attempt {attempt})");
            let mut resp = self
                .agent
                .post(&url)
                .header("Authorization", &format!("Bearer {key}"))
                .send_json(body)
                .map_err(|e| BackendError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                })?;
            let status = resp.status().as_u16();
            let text = resp
                .body_mut()
                .read_to_string()
                .map_err(|e| BackendError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                })?;
            if status == 429 || status >= 500 {
                return Err(BackendError::Transport {
                    attempts: attempt,
                    message: format!("status {status}: {}", error_message(&text)),
                });
            }
            if !(200..300).contains(&status) {
                return Err(BackendError::Refusal {
                    status,
                    message: error_message(&text),
                });
            }
            serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()))
        })
    }
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| v.pointer("/error/message").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| body.chars().take(500).collect())
}

/// Extracts the completion text from a response.
fn parse_text(mode: ApiMode, v: &Value) -> Result<String, BackendError> {
    let ptr = match mode {
        ApiMode::Chat => "/choices/0/message/content",
        ApiMode::Completions => "/choices/0/text",
    };
    v.pointer(ptr)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Protocol(format!("missing {ptr}")))
}

/// Extracts the top-k distribution of the first generated position, if present.
fn parse_first_token(mode: ApiMode, v: &Value) -> Result<Option<TokenDistribution>, BackendError> {
    let entries: Vec<(String, f64)> = match mode {
        ApiMode::Chat => {
            let Some(top) = v
                .pointer("/choices/0/logprobs/content/0/top_logprobs")
                .and_then(Value::as_array)
            else {
                return Ok(None);
            };
            top.iter()
                .filter_map(|e| {
                    Some((
                        e.get("token")?.as_str()?.to_string(),
                        e.get("logprob")?.as_f64()?,
                    ))
                })
                .collect()
        }
        ApiMode::Completions => {
            let Some(top) = v
                .pointer("/choices/0/logprobs/top_logprobs/0")
                .and_then(Value::as_object)
            else {
                return Ok(None);
            };
            top.iter()
                .filter_map(|(tok, lp)| Some((tok.clone(), lp.as_f64()?)))
                .collect()
        }
    };
    if entries.is_empty() {
        return Ok(None);
    }
    TokenDistribution::new(entries, true).map(Some)
}

impl Backend for OpenAiBackend {
    fn name(&self) -> String {
        self.cfg.model.clone()
    }

    fn sample(&self, request: &GeneratorRequest) -> Result<Completion, BackendError> {
        request.validate()?;
        let body = self.body(
            request.system.as_deref(),
            &request.prompt,
            request.temperature,
            request.max_tokens,
            request.seed,
            request.first_token_logprobs,
        );
        let v = self.post(&body)?;
        let text = parse_text(self.cfg.mode, &v)?;
        let first_token = if request.first_token_logprobs {
            parse_first_token(self.cfg.mode, &v)?
        } else {
            None
        };
        Ok(Completion { text, first_token })
    }

    fn token_probability(&self, prompt: &str, variants: &[String]) -> Result<f64, BackendError> {
        if variants.is_empty() {
            return Err(BackendError::InvalidRequest("no token variants given".into()));
        }
        let body = self.body(None, prompt, 0.0, 1, None, true);
        let v = self.post(&body)?;
        let dist = parse_first_token(self.cfg.mode, &v)?.ok_or_else(|| {
            BackendError::Unsupported(format!(
                "{} returned no next-token logprobs",
                self.endpoint()
            ))
        })?;
        Ok(dist.probability_of(variants))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_chat_logprobs() {
        let v = json!({"choices": [{"message": {"content": "Yes"}, "logprobs": {"content": [
            {"token": "Yes", "logprob": 0.5f64.ln(), "top_logprobs": [
                {"token": "Yes", "logprob": 0.5f64.ln()},
                {"token": " Yes", "logprob": 0.2f64.ln()},
                {"token": "No", "logprob": 0.25f64.ln()}
            ]}
        ]}}]});
        assert_eq!(parse_text(ApiMode::Chat, &v).unwrap(), "Yes");
        let d = parse_first_token(ApiMode::Chat, &v).unwrap().unwrap();
        assert!(d.truncated());
        let p = d.probability_of(&super::super::default_yes_variants());
        assert!((p - 0.7).abs() < 1e-12);
    }

    #[test]
    fn parses_completion_logprobs() {
        let v = json!({"choices": [{"text": " No", "logprobs": {"top_logprobs": [
            {" No": 0.9f64.ln(), "No": 0.05f64.ln()}
        ]}}]});
        let d = parse_first_token(ApiMode::Completions, &v).unwrap().unwrap();
        let p = d.probability_of(&super::super::default_yes_variants());
        assert!((p - 2e-6).abs() < 1e-15);
        assert_eq!(parse_first_token(ApiMode::Chat, &v).unwrap(), None);
    }

    #[test]
    fn missing_key_is_a_config_error() {
        let cfg = OpenAiConfig::new("http://localhost:1", "m");
        assert!(matches!(OpenAiBackend::new(cfg), Err(BackendError::Config(_))));
    }

    #[test]
    fn request_bodies() {
        let mut cfg = OpenAiConfig::new("http://x/v1/", "m");
        cfg.api_key = Some("k".into());
        let b = OpenAiBackend::new(cfg.clone()).unwrap();
        assert_eq!(b.endpoint(), "http://x/v1/chat/completions");
        let body = b.body(Some("sys"), "hi", 1.0, 10, Some(3), true);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["top_logprobs"], 20);
        assert_eq!(body["seed"], 3);
        cfg.mode = ApiMode::Completions;
        let b = OpenAiBackend::new(cfg).unwrap();
        let body = b.body(None, "hi", 0.0, 1, None, true);
        assert_eq!(body["prompt"], "hi");
        assert_eq!(body["logprobs"], 20);
        assert!(body.get("seed").is_none());
    }

    #[test]
    fn extracts_error_messages() {
        assert_eq!(error_message(r#"{"error":{"message":"nope"}}"#), "nope");
        assert_eq!(error_message("plain"), "plain");
    }
}
