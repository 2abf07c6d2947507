//! JSON-over-HTTP adapter for a language model served elsewhere.
//!
//! Protocol:
//!
//! ```text
//! POST {base}/v1/next_token  {"tokens":[int,...]}          -> {"probs":[float,...]}
//! POST {base}/v1/embed       {"tokens":[int,...]}          -> {"vec":[float,...]}
//! ```
//!
//! `next_token` requests carry `"top_k"` when a cutoff is configured. A server
//! may answer with `"logits"` instead of `"probs"`; the adapter applies a
//! softmax. Probabilities are renormalized after validation so that top-k
//! answers and float round-off still yield a proper distribution.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::distribution::{ContextEmbedding, TokenDistribution};
use super::LanguageModel;
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub vocab_size: usize,
    pub dim: usize,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub top_k: Option<usize>,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, vocab_size: usize, dim: usize) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            vocab_size,
            dim,
            timeout: Duration::from_secs(30),
            max_in_flight: 8,
            top_k: None,
        }
    }
}

#[derive(Serialize)]
struct TokensRequest {
    tokens: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_k: Option<usize>,
}

#[derive(Deserialize)]
struct NextTokenResponse {
    probs: Option<Vec<f64>>,
    logits: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vec: Vec<f32>,
}

/// Counting gate bounding concurrent requests.
struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteLm {
    config: RemoteConfig,
    agent: ureq::Agent,
    gate: InFlight,
}

impl RemoteLm {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if config.vocab_size == 0 || config.dim == 0 || config.max_in_flight == 0 {
            return Err(Error::InvalidArgument(
                "remote LM needs positive vocab size, dimension and in-flight limit".into(),
            ));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        let gate = InFlight {
            limit: config.max_in_flight,
            active: Mutex::new(0),
            freed: Condvar::new(),
        };
        Ok(RemoteLm { config, agent, gate })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn post<T: for<'de> Deserialize<'de>>(&self, endpoint: &str, body: &TokensRequest) -> Result<T> {
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), endpoint);
        let _permit = self.gate.acquire();
        let mut resp = self.agent.post(&url).send_json(body).map_err(backend_error)?;
        resp.body_mut()
            .read_json::<T>()
            .map_err(|e| Error::Protocol(format!("{endpoint}: {e}")))
    }

    fn request(&self, context: &[TokenId], top_k: Option<usize>) -> TokensRequest {
        TokensRequest {
            tokens: context.iter().map(|t| t.0).collect(),
            top_k,
        }
    }
}

fn backend_error(e: ureq::Error) -> Error {
    match e {
        ureq::Error::Json(e) => Error::Protocol(e.to_string()),
        ureq::Error::StatusCode(code) => Error::BackendUnavailable(format!("HTTP status {code}")),
        other => Error::BackendUnavailable(other.to_string()),
    }
}

impl LanguageModel for RemoteLm {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn embedding_dim(&self) -> usize {
        self.config.dim
    }

    fn predict(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        let resp: NextTokenResponse = self.post("v1/next_token", &self.request(context, self.config.top_k))?;
        let (values, is_logits) = match (resp.probs, resp.logits) {
            (Some(p), _) => (p, false),
            (None, Some(l)) => (l, true),
            (None, None) => {
                return Err(Error::Protocol(
                    "next_token response has neither probs nor logits".into(),
                ))
            }
        };
        if values.len() != self.config.vocab_size {
            return Err(Error::VocabMismatch {
                expected: self.config.vocab_size,
                found: values.len(),
            });
        }
        let dist = if is_logits {
            TokenDistribution::softmax(&values)
        } else {
            TokenDistribution::from_weights(values)
        };
        dist.map_err(|e| Error::Protocol(e.to_string()))
    }

    fn embed(&self, context: &[TokenId]) -> Result<ContextEmbedding> {
        let resp: EmbedResponse = self.post("v1/embed", &self.request(context, None))?;
        if resp.vec.len() != self.config.dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.dim,
                found: resp.vec.len(),
            });
        }
        ContextEmbedding::new(resp.vec).map_err(|e| Error::Protocol(e.to_string()))
    }
}
