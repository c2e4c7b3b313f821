//! Chat-completions HTTP client speaking the de-facto OpenAI-compatible
//! JSON shape, with bounded exponential-backoff retries.
//!
//! Log-probabilities are converted to linear probabilities at this
//! boundary and clamped to (1e-300, 1] so downstream geometric means
//! never see a zero. The sample index is forwarded as the request
//! `seed` for providers that honor it; reproducibility otherwise comes
//! from the response cache.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::types::{Generation, TokenAlternative, TokenInfo};

use super::{Backend, BackendError, CacheKey, GenerationRequest, Role};

const MAX_ATTEMPTS: u32 = 5;
const MIN_PROB: f64 = 1e-300;

pub struct HttpBackend {
    model_id: String,
    endpoint: String,
    auth_env: String,
    client: reqwest::blocking::Client,
    base_backoff: Duration,
}

impl HttpBackend {
    pub fn new(model_id: &str, endpoint: &str, auth_env: &str) -> HttpBackend {
        HttpBackend {
            model_id: model_id.to_string(),
            endpoint: endpoint.to_string(),
            auth_env: auth_env.to_string(),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("http client builds"),
            base_backoff: Duration::from_millis(250),
        }
    }

    /// Base delay before the first retry; doubles per attempt.
    pub fn with_base_backoff(mut self, base: Duration) -> HttpBackend {
        self.base_backoff = base;
        self
    }

    fn api_key(&self) -> Result<String, BackendError> {
        std::env::var(&self.auth_env).map_err(|_| BackendError::Transport {
            message: format!("auth environment variable {} is not set", self.auth_env),
            attempts: 0,
        })
    }

    fn send_with_retries(&self, payload: &WireRequest<'_>, api_key: &str) -> Result<WireResponse, BackendError> {
        let mut last_error = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            if attempt > 1 {
                std::thread::sleep(self.base_backoff * 2u32.pow(attempt - 2));
            }
            let sent = self
                .client
                .post(&self.endpoint)
                .header("Authorization", format!("Bearer {api_key}"))
                .json(payload)
                .send();
            let response = match sent {
                Ok(response) => response,
                Err(e) => {
                    last_error = e.to_string();
                    continue;
                }
            };
            let status = response.status();
            let body = response.text().unwrap_or_default();
            if status.is_success() {
                return serde_json::from_str(&body)
                    .map_err(|e| BackendError::MalformedResponse(format!("{e}: {body}")));
            }
            let retryable = status.as_u16() == 429 || status.is_server_error();
            if !retryable {
                return Err(BackendError::ApiRefusal {
                    message: format!("{status}: {}", provider_message(&body)),
                });
            }
            last_error = format!("{status}: {}", provider_message(&body));
        }
        Err(BackendError::Transport { message: last_error, attempts: MAX_ATTEMPTS })
    }
}

fn provider_message(body: &str) -> String {
    let parsed: Option<serde_json::Value> = serde_json::from_str(body).ok();
    parsed
        .as_ref()
        .and_then(|v| v["error"]["message"].as_str())
        .map(str::to_string)
        .unwrap_or_else(|| body.chars().take(200).collect())
}

fn linear_prob(logprob: f64) -> f64 {
    logprob.exp().clamp(MIN_PROB, 1.0)
}

impl Backend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn generate(
        &self,
        request: &GenerationRequest,
        sample_index: u32,
    ) -> Result<Generation, BackendError> {
        request.validate()?;
        let api_key = self.api_key()?;

        let payload = WireRequest {
            model: &self.model_id,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            logprobs: request.want_token_probs,
            top_logprobs: if request.want_token_probs && request.top_alternatives > 0 {
                Some(request.top_alternatives)
            } else {
                None
            },
            seed: sample_index,
        };
        let response = self.send_with_retries(&payload, &api_key)?;

        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::MalformedResponse("no choices in response".into()))?;
        let text = choice.message.content.unwrap_or_default();

        let tokens = match choice.logprobs.and_then(|l| l.content) {
            Some(entries) => entries
                .into_iter()
                .map(|entry| TokenInfo {
                    text: entry.token,
                    prob: linear_prob(entry.logprob),
                    alternatives: entry
                        .top_logprobs
                        .into_iter()
                        .map(|alt| TokenAlternative {
                            text: alt.token,
                            prob: linear_prob(alt.logprob),
                        })
                        .collect(),
                })
                .collect(),
            None if request.want_token_probs => return Err(BackendError::ProbsUnavailable),
            // Probability-free call: surface the text as one placeholder token.
            None if !text.is_empty() => vec![TokenInfo::new(text.clone(), 1.0)],
            None => Vec::new(),
        };

        let key = CacheKey::compute(&self.model_id, request, sample_index);
        Generation::new(text, tokens, &self.model_id, request.temperature, key.digest())
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessageWire<'a>],
    temperature: f64,
    max_tokens: u32,
    logprobs: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_logprobs: Option<u32>,
    seed: u32,
}

// The wire shape of a message matches ours, so reuse it directly.
type ChatMessageWire<'a> = super::ChatMessage;

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[allow(dead_code)]
    #[serde(default)]
    role: Option<Role>,
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Option<Vec<WireTokenLogprob>>,
}

#[derive(Deserialize)]
struct WireTokenLogprob {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<WireAlternative>,
}

#[derive(Deserialize)]
struct WireAlternative {
    token: String,
    logprob: f64,
}
