//! Chat-completions client for OpenAI-compatible vision endpoints.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::{build_request, DescribeRequest};
use super::response::{parse_response, DescriberResponse};
use super::Describer;
use crate::error::{Error, Result};
use crate::memory::RetrievalBundle;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageEncoding {
    /// Read the handle as a file and inline it as a data URL.
    #[default]
    Base64,
    /// Pass the handle through as an image URL.
    Url,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URL, e.g. `http://localhost:8000/v1`.
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub in_flight: usize,
    pub api_key_env: String,
    pub image_encoding: ImageEncoding,
    pub max_tokens: Option<u32>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1".into(),
            model: "gpt-4o".into(),
            timeout_secs: 120,
            max_retries: 3,
            backoff_ms: 500,
            in_flight: 4,
            api_key_env: "OPENAI_API_KEY".into(),
            image_encoding: ImageEncoding::Base64,
            max_tokens: None,
        }
    }
}

/// Outcome of one call, with the number of retries it took.
#[derive(Clone, Debug, PartialEq)]
pub struct Described {
    pub response: DescriberResponse,
    pub retries: u32,
}

pub(crate) fn build_agent(timeout_secs: u64) -> ureq::Agent {
    ureq::AgentBuilder::new().timeout(Duration::from_secs(timeout_secs)).build()
}

pub(crate) fn api_key(env: &str) -> Option<String> {
    std::env::var(env).ok().filter(|k| !k.is_empty())
}

pub(crate) enum Failure {
    Retryable(String),
    Fatal(Error),
}

/// POSTs `body` and returns the decoded JSON reply, classifying failures.
pub(crate) fn post_json(agent: &ureq::Agent, url: &str, key: Option<&str>, body: &Value) -> std::result::Result<Value, Failure> {
    let mut req = agent.post(url).set("Content-Type", "application/json");
    if let Some(k) = key {
        req = req.set("Authorization", &format!("Bearer {k}"));
    }
    match req.send_json(body) {
        Ok(resp) => resp
            .into_json::<Value>()
            .map_err(|e| Failure::Retryable(format!("unreadable reply body: {e}"))),
        Err(ureq::Error::Status(code, resp)) if code >= 500 => {
            let text = resp.into_string().unwrap_or_default();
            Err(Failure::Retryable(format!("server error {code}: {text}")))
        }
        Err(ureq::Error::Status(code, resp)) => {
            let text = resp.into_string().unwrap_or_default();
            Err(Failure::Fatal(Error::Transport(format!("request rejected with {code}: {text}"))))
        }
        Err(ureq::Error::Transport(t)) => Err(Failure::Retryable(format!("transport: {t}"))),
    }
}

pub struct HttpDescriber {
    cfg: HttpConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    retries_total: AtomicUsize,
}

impl HttpDescriber {
    pub fn new(cfg: HttpConfig) -> Self {
        let api_key = api_key(&cfg.api_key_env);
        Self::with_key(cfg, api_key)
    }

    pub fn with_key(cfg: HttpConfig, api_key: Option<String>) -> Self {
        let agent = build_agent(cfg.timeout_secs);
        Self { cfg, agent, api_key, retries_total: AtomicUsize::new(0) }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.cfg
    }

    /// Retries performed over this client's lifetime.
    pub fn retries_total(&self) -> usize {
        self.retries_total.load(Ordering::Relaxed)
    }

    fn image_part(&self, handle: &str) -> Result<Value> {
        let url = match self.cfg.image_encoding {
            ImageEncoding::Url => handle.to_string(),
            ImageEncoding::Base64 => {
                let bytes = std::fs::read(handle)
                    .map_err(|e| Error::data(format!("cannot read frame {handle:?}: {e}")))?;
                let mime = match Path::new(handle).extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
                    Some(ext) if ext == "png" => "image/png",
                    Some(ext) if ext == "webp" => "image/webp",
                    _ => "image/jpeg",
                };
                format!("data:{mime};base64,{}", base64::engine::general_purpose::STANDARD.encode(bytes))
            }
        };
        Ok(json!({ "type": "image_url", "image_url": { "url": url } }))
    }

    pub fn request_body(&self, req: &DescribeRequest) -> Result<Value> {
        let mut content = vec![json!({ "type": "text", "text": req.prompt })];
        for h in &req.frame_handles {
            content.push(self.image_part(h)?);
        }
        let mut body = json!({
            "model": self.cfg.model,
            "messages": [{ "role": "user", "content": content }],
        });
        if let Some(m) = self.cfg.max_tokens {
            body["max_tokens"] = json!(m);
        }
        Ok(body)
    }

    /// Sends one request, retrying transport failures, 5xx replies and
    /// unparseable answers with exponential backoff.
    pub fn send(&self, req: &DescribeRequest) -> Result<Described> {
        let body = self.request_body(req)?;
        let url = format!("{}/chat/completions", self.cfg.endpoint.trim_end_matches('/'));
        let mut last_error = Error::Transport("no attempt made".into());
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                self.retries_total.fetch_add(1, Ordering::Relaxed);
                let wait = self.cfg.backoff_ms.saturating_mul(1u64 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            match post_json(&self.agent, &url, self.api_key.as_deref(), &body) {
                Ok(reply) => {
                    let text = reply["choices"][0]["message"]["content"].as_str().unwrap_or_default();
                    match parse_response(text) {
                        Ok(response) => return Ok(Described { response, retries: attempt }),
                        Err(e) => last_error = e,
                    }
                }
                Err(Failure::Retryable(msg)) => last_error = Error::Transport(msg),
                Err(Failure::Fatal(e)) => return Err(e),
            }
        }
        Err(last_error)
    }
}

impl Describer for HttpDescriber {
    fn describe(&self, bundle: &RetrievalBundle) -> Result<DescriberResponse> {
        Ok(self.send(&build_request(bundle))?.response)
    }
}
