//! Scripted deterministic backend for offline runs and tests.
//!
//! A script is an ordered rule list; the first rule whose conditions
//! all hold supplies the response. Rules can condition on substrings of
//! the prompt text, on the model id (so one script file can drive
//! several mock backends), on the sample index (to model temperature
//! sampling), or on the exact request digest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::types::{Generation, TokenAlternative, TokenInfo};

use super::{Backend, BackendError, CacheKey, GenerationRequest};

/// One scripted reply: text, optional per-token probabilities, and
/// optional per-position alternative tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternatives: Option<Vec<Vec<TokenAlternative>>>,
}

impl MockResponse {
    pub fn text(text: impl Into<String>) -> MockResponse {
        MockResponse { text: text.into(), probs: None, alternatives: None }
    }

    pub fn with_probs(text: impl Into<String>, probs: Vec<f64>) -> MockResponse {
        MockResponse { text: text.into(), probs: Some(probs), alternatives: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    /// Substrings that must all appear in the combined prompt text.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    /// Restricts the rule to one backend's model id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Restricts the rule to one sample index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<u32>,
    /// Exact request digest match (see [`CacheKey`]).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    pub response: MockResponse,
}

impl MockRule {
    pub fn contains(needles: &[&str], response: MockResponse) -> MockRule {
        MockRule {
            contains: needles.iter().map(|s| s.to_string()).collect(),
            model: None,
            sample_index: None,
            digest: None,
            response,
        }
    }

    fn matches(&self, model_id: &str, text: &str, digest: &str, sample_index: u32) -> bool {
        if let Some(model) = &self.model {
            if model != model_id {
                return false;
            }
        }
        if let Some(wanted) = self.sample_index {
            if wanted != sample_index {
                return false;
            }
        }
        if let Some(wanted) = &self.digest {
            if wanted != digest {
                return false;
            }
        }
        self.contains.iter().all(|needle| text.contains(needle))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    /// Fallback when no rule matches; without it unmatched requests
    /// fail with ScriptMiss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<MockResponse>,
    /// When false the backend refuses token-probability requests.
    #[serde(default = "default_true")]
    pub supports_probs: bool,
}

fn default_true() -> bool {
    true
}

impl Default for MockScript {
    fn default() -> MockScript {
        MockScript { rules: Vec::new(), default: None, supports_probs: true }
    }
}

impl MockScript {
    pub fn new(rules: Vec<MockRule>) -> MockScript {
        MockScript { rules, default: None, supports_probs: true }
    }

    pub fn with_default(mut self, response: MockResponse) -> MockScript {
        self.default = Some(response);
        self
    }

    pub fn load(path: &Path) -> Result<MockScript, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            BackendError::InvalidRequest(format!("cannot read mock script {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| {
            BackendError::InvalidRequest(format!("malformed mock script {}: {e}", path.display()))
        })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("script serializes"))
    }
}

pub struct MockBackend {
    model_id: String,
    script: MockScript,
}

impl MockBackend {
    pub fn new(model_id: impl Into<String>, script: MockScript) -> MockBackend {
        MockBackend { model_id: model_id.into(), script }
    }

    /// A backend that always answers with `text`.
    pub fn fixed(model_id: impl Into<String>, text: impl Into<String>) -> MockBackend {
        MockBackend::new(model_id, MockScript::default().with_default(MockResponse::text(text)))
    }
}

/// Splits `text` into `count` contiguous chunks of near-equal char
/// length whose concatenation is exactly `text`.
fn chunk_text(text: &str, count: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut chunks = Vec::with_capacity(count);
    let mut start = 0;
    for i in 0..count {
        let end = (chars.len() * (i + 1)) / count;
        chunks.push(chars[start..end].iter().collect());
        start = end;
    }
    chunks
}

/// Word-ish split preserving whitespace so tokens concatenate back.
fn word_tokens(text: &str) -> Vec<String> {
    let mut tokens: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut in_space = false;
    for c in text.chars() {
        let is_space = c.is_whitespace();
        if !current.is_empty() && is_space != in_space && !is_space {
            tokens.push(std::mem::take(&mut current));
        }
        current.push(c);
        in_space = is_space;
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

impl Backend for MockBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn generate(
        &self,
        request: &GenerationRequest,
        sample_index: u32,
    ) -> Result<Generation, BackendError> {
        request.validate()?;
        if request.want_token_probs && !self.script.supports_probs {
            return Err(BackendError::ProbsUnavailable);
        }

        let key = CacheKey::compute(&self.model_id, request, sample_index);
        let text = request.combined_text();
        let response = self
            .script
            .rules
            .iter()
            .find(|rule| rule.matches(&self.model_id, &text, key.digest(), sample_index))
            .map(|rule| &rule.response)
            .or(self.script.default.as_ref())
            .ok_or_else(|| BackendError::ScriptMiss { digest: key.digest().to_string() })?;

        let mut tokens: Vec<TokenInfo> = match &response.probs {
            Some(probs) => chunk_text(&response.text, probs.len())
                .into_iter()
                .zip(probs)
                .map(|(chunk, &prob)| TokenInfo { text: chunk, prob, alternatives: Vec::new() })
                .collect(),
            None => word_tokens(&response.text)
                .into_iter()
                .map(|word| TokenInfo { text: word, prob: 1.0, alternatives: Vec::new() })
                .collect(),
        };
        if let Some(alternatives) = &response.alternatives {
            for (token, alts) in tokens.iter_mut().zip(alternatives) {
                token.alternatives = alts.clone();
            }
        }

        Ok(Generation::new(
            response.text.clone(),
            tokens,
            &self.model_id,
            request.temperature,
            key.digest(),
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs_of(generation: &Generation) -> Vec<f64> {
        generation.probs()
    }

    #[test]
    fn scripted_response_carries_probs() {
        let script = MockScript::new(vec![MockRule::contains(
            &["capital of France"],
            MockResponse::with_probs("Paris", vec![0.9, 0.8]),
        )]);
        let backend = MockBackend::new("mock", script);
        let generation = backend
            .generate(&GenerationRequest::user_prompt("What is the capital of France?"), 0)
            .unwrap();
        assert_eq!(generation.text, "Paris");
        assert_eq!(probs_of(&generation), vec![0.9, 0.8]);
        let concat: String = generation.tokens.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(concat, "Paris");
    }

    #[test]
    fn per_sample_rules_model_temperature_sampling() {
        let mut a = MockRule::contains(&["q1"], MockResponse::text("A"));
        a.sample_index = Some(0);
        let mut b = MockRule::contains(&["q1"], MockResponse::text("B"));
        b.sample_index = Some(1);
        let backend = MockBackend::new("mock", MockScript::new(vec![a, b]));

        let req = GenerationRequest::user_prompt("q1");
        assert_eq!(backend.generate(&req, 0).unwrap().text, "A");
        assert_eq!(backend.generate(&req, 1).unwrap().text, "B");
    }

    #[test]
    fn unscripted_request_without_default_misses() {
        let backend = MockBackend::new("mock", MockScript::new(vec![]));
        let err = backend.generate(&GenerationRequest::user_prompt("q2"), 0).unwrap_err();
        assert!(matches!(err, BackendError::ScriptMiss { .. }));
    }

    #[test]
    fn default_response_catches_everything() {
        let backend = MockBackend::fixed("mock", "fallback");
        let generation = backend.generate(&GenerationRequest::user_prompt("anything"), 3).unwrap();
        assert_eq!(generation.text, "fallback");
        assert!(generation.tokens.iter().all(|t| t.prob == 1.0));
    }

    #[test]
    fn model_scoped_rules_share_one_script() {
        let mut for_a = MockRule::contains(&["hello"], MockResponse::text("from a"));
        for_a.model = Some("model-a".into());
        let mut for_b = MockRule::contains(&["hello"], MockResponse::text("from b"));
        for_b.model = Some("model-b".into());
        let script = MockScript::new(vec![for_a, for_b]);

        let a = MockBackend::new("model-a", script.clone());
        let b = MockBackend::new("model-b", script);
        let req = GenerationRequest::user_prompt("hello");
        assert_eq!(a.generate(&req, 0).unwrap().text, "from a");
        assert_eq!(b.generate(&req, 0).unwrap().text, "from b");
    }

    #[test]
    fn probs_refused_when_unsupported() {
        let mut script = MockScript::default().with_default(MockResponse::text("x"));
        script.supports_probs = false;
        let backend = MockBackend::new("mock", script);
        let err = backend
            .generate(&GenerationRequest::user_prompt("q").want_probs(2), 0)
            .unwrap_err();
        assert_eq!(err, BackendError::ProbsUnavailable);
    }

    #[test]
    fn alternatives_attach_to_positions() {
        let response = MockResponse {
            text: "A".into(),
            probs: Some(vec![0.92]),
            alternatives: Some(vec![vec![
                TokenAlternative { text: "A".into(), prob: 0.92 },
                TokenAlternative { text: "B".into(), prob: 0.08 },
            ]]),
        };
        let backend =
            MockBackend::new("mock", MockScript::default().with_default(response));
        let generation = backend
            .generate(&GenerationRequest::user_prompt("judge").want_probs(2), 0)
            .unwrap();
        assert_eq!(generation.tokens[0].alternatives.len(), 2);
        assert_eq!(generation.tokens[0].alternatives[1].text, "B");
    }

    #[test]
    fn chunking_covers_multibyte_text() {
        assert_eq!(chunk_text("Paris", 2), vec!["Pa", "ris"]);
        assert_eq!(chunk_text("東京", 2), vec!["東", "京"]);
        assert_eq!(chunk_text("ab", 3), vec!["", "a", "b"]);
        let chunks = chunk_text("七つの大陸", 3);
        assert_eq!(chunks.concat(), "七つの大陸");
    }

    #[test]
    fn word_tokens_round_trip() {
        let tokens = word_tokens("two words here");
        assert_eq!(tokens.concat(), "two words here");
        assert_eq!(tokens.len(), 3);
        assert!(word_tokens("").is_empty());
    }

    #[test]
    fn script_round_trips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.json");
        let script = MockScript::new(vec![MockRule::contains(
            &["ping"],
            MockResponse::with_probs("pong", vec![0.5]),
        )])
        .with_default(MockResponse::text("dunno"));
        script.save(&path).unwrap();
        assert_eq!(MockScript::load(&path).unwrap(), script);
    }
}
