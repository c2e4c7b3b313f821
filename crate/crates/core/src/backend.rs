//! Pluggable LLM access: a chat-style generation contract with
//! token-level probabilities, plus the [`Client`] wrapper that layers
//! response caching and audit logging over any [`Backend`].

pub mod audit;
pub mod cache;
pub mod http;
pub mod mock;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::types::{Generation, TypeError};

pub use audit::AuditLog;
pub use cache::{CachedResponse, ResponseCache};
pub use http::HttpBackend;
pub use mock::{MockBackend, MockResponse, MockRule, MockScript};

/// Default answer-generation temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.8;
/// Default completion budget per request.
pub const DEFAULT_MAX_TOKENS: u32 = 64;
/// Default bound on concurrent in-flight requests.
pub const DEFAULT_CONCURRENCY: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("api refusal: {message}")]
    ApiRefusal { message: String },
    #[error("backend cannot supply token probabilities")]
    ProbsUnavailable,
    #[error("no scripted response for request digest {digest}")]
    ScriptMiss { digest: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("cache i/o: {0}")]
    CacheIo(String),
    #[error(transparent)]
    Type(#[from] TypeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> ChatMessage {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> ChatMessage {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> ChatMessage {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

/// One chat-completion request. The model is chosen by the backend, not
/// the request, so identical requests can be replayed across backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub want_token_probs: bool,
    pub top_alternatives: u32,
}

impl GenerationRequest {
    /// A single-user-message request with the stock defaults.
    pub fn user_prompt(prompt: impl Into<String>) -> GenerationRequest {
        GenerationRequest {
            messages: vec![ChatMessage::user(prompt)],
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            want_token_probs: false,
            top_alternatives: 0,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> GenerationRequest {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> GenerationRequest {
        self.max_tokens = max_tokens;
        self
    }

    /// Requests per-token probabilities, with `top_alternatives`
    /// alternative tokens per position.
    pub fn want_probs(mut self, top_alternatives: u32) -> GenerationRequest {
        self.want_token_probs = true;
        self.top_alternatives = top_alternatives;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("no messages".into()));
        }
        if self.messages.last().map(|m| m.role) != Some(Role::User) {
            return Err(BackendError::InvalidRequest(
                "last message must have role user".into(),
            ));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} must be a finite non-negative number",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// All message text joined together; what mock rules match against.
    pub fn combined_text(&self) -> String {
        let mut combined = String::new();
        for message in &self.messages {
            if !combined.is_empty() {
                combined.push('\n');
            }
            combined.push_str(&message.content);
        }
        combined
    }
}

/// Content address of one (model, request, sample) triple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn compute(model_id: &str, request: &GenerationRequest, sample_index: u32) -> CacheKey {
        #[derive(Serialize)]
        struct KeyMaterial<'a> {
            model_id: &'a str,
            messages: &'a [ChatMessage],
            temperature: f64,
            max_tokens: u32,
            want_token_probs: bool,
            top_alternatives: u32,
            sample_index: u32,
        }
        let material = KeyMaterial {
            model_id,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            want_token_probs: request.want_token_probs,
            top_alternatives: request.top_alternatives,
            sample_index,
        };
        let bytes = serde_json::to_vec(&material).expect("key material serializes");
        CacheKey(hex::encode(Sha256::digest(bytes)))
    }

    pub fn digest(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    HttpApi,
    Mock,
}

/// Declarative backend selection, loadable from config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    /// Mock script file, for kind = mock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
}

impl BackendDescriptor {
    pub fn http(model_id: impl Into<String>, endpoint: impl Into<String>, auth_env: impl Into<String>) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::HttpApi,
            model_id: model_id.into(),
            endpoint: Some(endpoint.into()),
            auth_env: Some(auth_env.into()),
            script: None,
        }
    }

    pub fn mock(model_id: impl Into<String>, script: impl Into<PathBuf>) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::Mock,
            model_id: model_id.into(),
            endpoint: None,
            auth_env: None,
            script: Some(script.into()),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.kind {
            BackendKind::HttpApi => {
                if self.endpoint.is_none() || self.auth_env.is_none() {
                    return Err(BackendError::InvalidRequest(
                        "http-api backend needs endpoint and auth_env".into(),
                    ));
                }
            }
            BackendKind::Mock => {
                if self.endpoint.is_some() || self.auth_env.is_some() {
                    return Err(BackendError::InvalidRequest(
                        "mock backend must not set endpoint or auth_env".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Instantiates the described backend.
    pub fn build(&self) -> Result<Box<dyn Backend>, BackendError> {
        self.validate()?;
        match self.kind {
            BackendKind::HttpApi => Ok(Box::new(HttpBackend::new(
                &self.model_id,
                self.endpoint.as_deref().unwrap(),
                self.auth_env.as_deref().unwrap(),
            ))),
            BackendKind::Mock => {
                let path = self.script.as_ref().ok_or_else(|| {
                    BackendError::InvalidRequest("mock backend needs a script path".into())
                })?;
                let script = MockScript::load(path)?;
                Ok(Box::new(MockBackend::new(&self.model_id, script)))
            }
        }
    }
}

/// A chat-completion provider. Implementations must be deterministic
/// for a fixed (request, sample_index) or rely on the cache for
/// reproducibility.
pub trait Backend: Send + Sync {
    fn model_id(&self) -> &str;

    fn generate(
        &self,
        request: &GenerationRequest,
        sample_index: u32,
    ) -> Result<Generation, BackendError>;
}

/// A backend plus the cross-cutting concerns every pipeline stage
/// wants: response caching, audit logging, and a concurrency bound.
pub struct Client {
    backend: Box<dyn Backend>,
    cache: Option<ResponseCache>,
    audit: Option<AuditLog>,
    concurrency: usize,
}

impl Client {
    pub fn new(backend: Box<dyn Backend>) -> Client {
        Client {
            backend,
            cache: None,
            audit: None,
            concurrency: DEFAULT_CONCURRENCY,
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Client {
        self.cache = Some(cache);
        self
    }

    pub fn with_audit(mut self, audit: AuditLog) -> Client {
        self.audit = Some(audit);
        self
    }

    pub fn with_concurrency(mut self, limit: usize) -> Client {
        self.concurrency = limit.max(1);
        self
    }

    pub fn model_id(&self) -> &str {
        self.backend.model_id()
    }

    /// Upper bound on concurrent generate calls a stage should issue.
    pub fn concurrency(&self) -> usize {
        self.concurrency
    }

    pub fn generate(
        &self,
        request: &GenerationRequest,
        sample_index: u32,
    ) -> Result<Generation, BackendError> {
        self.generate_traced(request, sample_index).map(|(gen, _)| gen)
    }

    /// Like [`Client::generate`] but also reports whether the response
    /// came from the cache. Fresh responses are cached before return.
    pub fn generate_traced(
        &self,
        request: &GenerationRequest,
        sample_index: u32,
    ) -> Result<(Generation, bool), BackendError> {
        request.validate()?;
        let key = CacheKey::compute(self.model_id(), request, sample_index);

        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.load(&key) {
                self.audit_entry(&key, request, sample_index, &entry.generation, true);
                return Ok((entry.generation, true));
            }
        }

        let generation = self.backend.generate(request, sample_index)?;
        generation.validate()?;
        if let Some(cache) = &self.cache {
            cache
                .store(
                    &key,
                    &CachedResponse {
                        model_id: self.model_id().to_string(),
                        generation: generation.clone(),
                    },
                )
                .map_err(|e| BackendError::CacheIo(e.to_string()))?;
        }
        self.audit_entry(&key, request, sample_index, &generation, false);
        Ok((generation, false))
    }

    fn audit_entry(
        &self,
        key: &CacheKey,
        request: &GenerationRequest,
        sample_index: u32,
        generation: &Generation,
        from_cache: bool,
    ) {
        if let Some(audit) = &self.audit {
            audit.record(&audit::AuditEntry {
                model_id: self.model_id(),
                cache_key: key.digest(),
                sample_index,
                from_cache,
                request,
                response_text: &generation.text,
                response_tokens: generation.tokens.len(),
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(text: &str) -> GenerationRequest {
        GenerationRequest::user_prompt(text)
    }

    #[test]
    fn request_defaults_match_generation_setup() {
        let req = request("hello");
        assert_eq!(req.temperature, 0.8);
        assert_eq!(req.max_tokens, 64);
        assert!(!req.want_token_probs);
        assert!(req.validate().is_ok());
    }

    #[test]
    fn request_rejects_bad_shapes() {
        let empty = GenerationRequest { messages: vec![], ..request("x") };
        assert!(empty.validate().is_err());

        let wrong_tail = GenerationRequest {
            messages: vec![ChatMessage::user("q"), ChatMessage::assistant("a")],
            ..request("x")
        };
        assert!(wrong_tail.validate().is_err());

        assert!(request("x").with_temperature(-0.1).validate().is_err());
        assert!(request("x").with_max_tokens(0).validate().is_err());
    }

    #[test]
    fn cache_key_is_stable_and_input_sensitive() {
        let req = request("What is the capital of France?").want_probs(2);
        let base = CacheKey::compute("model-a", &req, 0);
        assert_eq!(base, CacheKey::compute("model-a", &req, 0));
        assert_eq!(base.digest().len(), 64);

        assert_ne!(base, CacheKey::compute("model-b", &req, 0));
        assert_ne!(base, CacheKey::compute("model-a", &req, 1));
        assert_ne!(base, CacheKey::compute("model-a", &req.clone().with_temperature(0.0), 0));
        let other = request("What is the capital of Spain?").want_probs(2);
        assert_ne!(base, CacheKey::compute("model-a", &other, 0));
    }

    #[test]
    fn descriptor_validation_by_kind() {
        assert!(BackendDescriptor::http("m", "http://localhost:1", "KEY").validate().is_ok());
        assert!(BackendDescriptor::mock("m", "script.json").validate().is_ok());

        let mut broken = BackendDescriptor::http("m", "http://localhost:1", "KEY");
        broken.endpoint = None;
        assert!(broken.validate().is_err());

        let mut mixed = BackendDescriptor::mock("m", "script.json");
        mixed.auth_env = Some("KEY".into());
        assert!(mixed.validate().is_err());
    }

    #[test]
    fn descriptor_serde_round_trip() {
        let descriptor = BackendDescriptor::http("gpt-x", "https://api.example/v1/chat", "API_KEY");
        let json = serde_json::to_string(&descriptor).unwrap();
        assert!(json.contains("\"kind\":\"http-api\""), "{json}");
        let back: BackendDescriptor = serde_json::from_str(&json).unwrap();
        assert_eq!(back, descriptor);
    }
}
