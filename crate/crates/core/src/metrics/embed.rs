//! Text embedders used for description ranking.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::describer::http::{api_key, build_agent, post_json, Failure};
use crate::error::{Error, Result};

pub trait Embedder: Send + Sync {
    /// Unit-norm vectors, one per input text.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

/// L2-normalized hashed bag of words.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MockEmbedder {
    pub dim: usize,
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

impl MockEmbedder {
    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let mut any = false;
        for tok in tokenize(text) {
            v[(fnv1a(tok.as_bytes()) % self.dim as u64) as usize] += 1.0;
            any = true;
        }
        if !any {
            // texts without tokens share one fixed direction
            v[(fnv1a(b"") % self.dim as u64) as usize] = 1.0;
        }
        normalize(&mut v);
        v
    }
}

impl Embedder for MockEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

pub fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpEmbedderConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    pub api_key_env: String,
    pub batch_size: usize,
}

impl Default for HttpEmbedderConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1".into(),
            model: "text-embedding-3-large".into(),
            timeout_secs: 60,
            api_key_env: "OPENAI_API_KEY".into(),
            batch_size: 256,
        }
    }
}

/// Client for an OpenAI-compatible `/embeddings` endpoint.
pub struct HttpEmbedder {
    cfg: HttpEmbedderConfig,
    agent: ureq::Agent,
    key: Option<String>,
}

impl HttpEmbedder {
    pub fn new(cfg: HttpEmbedderConfig) -> Self {
        let key = api_key(&cfg.api_key_env);
        let agent = build_agent(cfg.timeout_secs);
        Self { cfg, agent, key }
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let url = format!("{}/embeddings", self.cfg.endpoint.trim_end_matches('/'));
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.cfg.batch_size.max(1)) {
            let body = json!({ "model": self.cfg.model, "input": chunk });
            let reply = post_json(&self.agent, &url, self.key.as_deref(), &body).map_err(|f| match f {
                Failure::Retryable(m) => Error::Transport(m),
                Failure::Fatal(e) => e,
            })?;
            let data = reply["data"]
                .as_array()
                .ok_or_else(|| Error::Transport("embeddings reply has no data array".into()))?;
            let mut rows: Vec<(usize, Vec<f64>)> = data
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    let idx = d["index"].as_u64().map(|x| x as usize).unwrap_or(i);
                    let mut v: Vec<f64> =
                        d["embedding"].as_array().map(|a| a.iter().filter_map(|x| x.as_f64()).collect()).unwrap_or_default();
                    normalize(&mut v);
                    (idx, v)
                })
                .collect();
            rows.sort_by_key(|r| r.0);
            if rows.len() != chunk.len() {
                return Err(Error::Transport(format!("asked for {} embeddings, got {}", chunk.len(), rows.len())));
            }
            out.extend(rows.into_iter().map(|r| r.1));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_vectors_are_unit_and_deterministic() {
        let e = MockEmbedder::default();
        for text in ["Wash the vegetables", "", "a a a b", "!!!"] {
            let v = e.embed_one(text);
            assert_eq!(v.len(), 256);
            assert!((cosine(&v, &v) - 1.0).abs() < 1e-12);
            assert_eq!(v, e.embed_one(text));
        }
    }

    #[test]
    fn mock_is_case_and_punctuation_insensitive() {
        let e = MockEmbedder::default();
        assert_eq!(e.embed_one("Cut onion."), e.embed_one("cut ONION"));
        assert!(cosine(&e.embed_one("cut onion"), &e.embed_one("peel potato")) < 0.99);
    }
}
