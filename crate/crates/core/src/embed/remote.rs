use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{check_geometry, EmbeddingProvider, PatchFeatureMap, ProviderId};
use crate::error::{Error, Result};
use crate::raster::RasterImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteConfig {
    /// Service root; requests go to `<url>/embed`.
    pub url: String,
    pub timeout_secs: f64,
    /// Extra attempts after the first failure.
    pub retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            url: "http://127.0.0.1:8500".into(),
            timeout_secs: 60.0,
            retries: 2,
            backoff_ms: 250,
            max_in_flight: 4,
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    image: String,
    provider: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    p: usize,
    d: usize,
    data: Vec<f32>,
}

/// Counting gate bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) {
        let mut free = self.free.lock().expect("gate poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate poisoned");
        }
        *free -= 1;
    }

    fn release(&self) {
        *self.free.lock().expect("gate poisoned") += 1;
        self.cv.notify_one();
    }
}

/// Client for an HTTP embedding service speaking the `/embed` contract:
/// request `{image: base64 PNG, provider: name}`, reply
/// `{p, d, data: [f32; p*p*d]}`.
pub struct RemoteProvider {
    id: ProviderId,
    config: RemoteConfig,
    agent: ureq::Agent,
    gate: Gate,
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

impl RemoteProvider {
    pub fn new(id: ProviderId, config: RemoteConfig) -> Result<Self> {
        id.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Gate {
            free: Mutex::new(config.max_in_flight.max(1)),
            cv: Condvar::new(),
        };
        Ok(RemoteProvider {
            id,
            config,
            agent,
            gate,
        })
    }

    fn attempt(&self, body: &str) -> std::result::Result<PatchFeatureMap, Attempt> {
        let url = format!("{}/embed", self.config.url.trim_end_matches('/'));
        let mut resp = self
            .agent
            .post(&url)
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        if status >= 500 || status == 429 {
            return Err(Attempt::Retry(format!("HTTP {status}: {text}")));
        }
        if status != 200 {
            return Err(Attempt::Fatal(Error::Protocol(format!(
                "embedding service answered HTTP {status}: {text}"
            ))));
        }
        let reply: EmbedResponse = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(Error::Protocol(format!("bad /embed reply: {e}"))))?;
        check_geometry(&self.id, reply.p, reply.d).map_err(Attempt::Fatal)?;
        let data = reply.data.into_iter().map(f64::from).collect();
        PatchFeatureMap::new(reply.p, reply.d, data)
            .map_err(|e| Attempt::Fatal(Error::Protocol(e.to_string())))
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn id(&self) -> &ProviderId {
        &self.id
    }

    fn embed_raw(&self, image: &RasterImage) -> Result<PatchFeatureMap> {
        let png = image.to_png()?;
        let body = serde_json::to_string(&EmbedRequest {
            image: base64::engine::general_purpose::STANDARD.encode(png),
            provider: &self.id.name,
        })?;

        self.gate.acquire();
        let mut attempts = 0;
        let result = loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(map) => break Ok(map),
                Err(Attempt::Fatal(e)) => break Err(e),
                Err(Attempt::Retry(msg)) if attempts > self.config.retries => {
                    break Err(Error::Transport {
                        attempts,
                        message: msg,
                    })
                }
                Err(Attempt::Retry(msg)) => {
                    log::debug!("embed attempt {attempts} failed: {msg}");
                    let wait = self.config.backoff_ms << (attempts - 1).min(8);
                    thread::sleep(Duration::from_millis(wait));
                }
            }
        };
        self.gate.release();
        result
    }
}
