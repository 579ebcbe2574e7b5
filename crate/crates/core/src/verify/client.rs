use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::format_proposals;
use super::VerificationRequest;
use crate::error::{Error, Result};

/// Usage reported for one completion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub seconds: f64,
}

impl TokenStats {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// Raw completion text plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: TokenStats,
    /// Attempts beyond the first that were needed.
    pub retries: u32,
}

/// A multimodal completion backend: one image and one prompt in, text out.
pub trait VisionClient: Send + Sync {
    fn complete(&self, req: &VerificationRequest) -> Result<Completion>;
}

/// Offline client that answers with the proposals it was given, each at a
/// fixed confidence. Token counts are whitespace word counts and wall time is
/// reported as zero so that runs are reproducible.
#[derive(Debug, Clone)]
pub struct MockEchoClient {
    pub confidence: u8,
}

impl MockEchoClient {
    pub fn new(confidence: u8) -> Self {
        MockEchoClient { confidence }
    }
}

impl Default for MockEchoClient {
    fn default() -> Self {
        MockEchoClient::new(3)
    }
}

impl VisionClient for MockEchoClient {
    fn complete(&self, req: &VerificationRequest) -> Result<Completion> {
        let n = req.proposals.len();
        let text = format!(
            r#"{{"interval_index":{},"confidence":{},"abnormal_description":"echo of {n} proposal(s)"}}"#,
            format_proposals(&req.proposals),
            serde_json::to_string(&vec![self.confidence; n])?,
        );
        let usage = TokenStats {
            prompt_tokens: req.prompt.split_whitespace().count() as u64,
            completion_tokens: text.split_whitespace().count() as u64,
            seconds: 0.0,
        };
        Ok(Completion {
            text,
            usage,
            retries: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChatConfig {
    /// Base URL; requests go to `<endpoint>/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: f64,
    /// Extra attempts after a transport failure.
    pub retries: u32,
    pub backoff_ms: u64,
    /// Request starts per minute across all threads; 0 disables the limit.
    pub requests_per_minute: u32,
}

impl Default for ChatConfig {
    fn default() -> Self {
        ChatConfig {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            temperature: 0.0,
            max_tokens: 1024,
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120.0,
            retries: 3,
            backoff_ms: 1000,
            requests_per_minute: 60,
        }
    }
}

/// Spaces request starts at least `interval` apart.
struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    fn new(per_minute: u32) -> Self {
        let interval = if per_minute == 0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(60.0 / f64::from(per_minute))
        };
        RateLimiter {
            interval,
            next: Mutex::new(None),
        }
    }

    fn wait(&self) {
        if self.interval.is_zero() {
            return;
        }
        let slot = {
            let mut next = self.next.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot
        };
        let now = Instant::now();
        if slot > now {
            thread::sleep(slot - now);
        }
    }
}

/// Client for OpenAI-compatible chat completion endpoints. The plot travels
/// as a base64 PNG data URL next to the text prompt.
pub struct ChatClient {
    config: ChatConfig,
    api_key: String,
    agent: ureq::Agent,
    limiter: RateLimiter,
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

impl ChatClient {
    /// Reads the API key from the configured environment variable; a missing
    /// key is a configuration error raised before any network traffic.
    pub fn new(config: ChatConfig) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            Error::Config(format!(
                "environment variable {} with the API key is not set",
                config.api_key_env
            ))
        })?;
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: ChatConfig, api_key: String) -> Result<Self> {
        if config.model.is_empty() {
            return Err(Error::Config("model name is empty".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = RateLimiter::new(config.requests_per_minute);
        Ok(ChatClient {
            config,
            api_key,
            agent,
            limiter,
        })
    }

    fn body(&self, req: &VerificationRequest) -> Result<String> {
        let png = req.image.to_png()?;
        let url = format!(
            "data:image/png;base64,{}",
            base64::engine::general_purpose::STANDARD.encode(png)
        );
        Ok(json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": req.prompt},
                    {"type": "image_url", "image_url": {"url": url}},
                ],
            }],
        })
        .to_string())
    }

    fn attempt(&self, body: &str) -> std::result::Result<(String, TokenStats), Attempt> {
        let url = format!(
            "{}/chat/completions",
            self.config.endpoint.trim_end_matches('/')
        );
        self.limiter.wait();
        let mut resp = self
            .agent
            .post(&url)
            .header("Content-Type", "application/json")
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send(body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        match status {
            200 => {}
            401 | 403 => {
                return Err(Attempt::Fatal(Error::Config(format!(
                    "endpoint rejected credentials (HTTP {status})"
                ))))
            }
            429 | 500.. => return Err(Attempt::Retry(format!("HTTP {status}: {text}"))),
            _ => {
                return Err(Attempt::Fatal(Error::Protocol(format!(
                    "completion endpoint answered HTTP {status}: {text}"
                ))))
            }
        }
        let reply: Value = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(Error::Protocol(format!("bad completion reply: {e}"))))?;
        let content = reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| {
                Attempt::Fatal(Error::Protocol("reply has no message content".into()))
            })?;
        let count = |key: &str| {
            reply
                .pointer(&format!("/usage/{key}"))
                .and_then(Value::as_u64)
                .unwrap_or(0)
        };
        let usage = TokenStats {
            prompt_tokens: count("prompt_tokens"),
            completion_tokens: count("completion_tokens"),
            seconds: 0.0,
        };
        Ok((content.to_string(), usage))
    }
}

impl VisionClient for ChatClient {
    fn complete(&self, req: &VerificationRequest) -> Result<Completion> {
        let body = self.body(req)?;
        let started = Instant::now();
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok((text, mut usage)) => {
                    usage.seconds = started.elapsed().as_secs_f64();
                    return Ok(Completion {
                        text,
                        usage,
                        retries: attempts - 1,
                    });
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(message)) if attempts > self.config.retries => {
                    return Err(Error::Transport { attempts, message })
                }
                Err(Attempt::Retry(msg)) => {
                    log::warn!("completion attempt {attempts} failed: {msg}");
                    let wait = self.config.backoff_ms << (attempts - 1).min(8);
                    thread::sleep(Duration::from_millis(wait));
                }
            }
        }
    }
}
