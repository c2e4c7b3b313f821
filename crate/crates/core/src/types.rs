//! Shared domain types: QA items, generations, and confidence records.
//!
//! All types here are immutable value data and safe to share across
//! threads. Bounded values are parsed once at construction and carry
//! their invariant in the type ([`Score`]).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::LanguageCode;

#[derive(Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("question must be non-empty after trimming")]
    EmptyQuestion,
    #[error("gold answers must be a non-empty list of non-empty strings")]
    EmptyGoldAnswers,
    #[error("item id must be non-empty")]
    EmptyItemId,
    #[error("token probability {0} outside (0, 1]")]
    TokenProbOutOfRange(f64),
    #[error("non-empty text requires at least one token")]
    MissingTokens,
    #[error("token texts concatenate to {got:?}, expected {expected:?}")]
    TokenTextMismatch { expected: String, got: String },
    #[error("unknown confidence method: {0:?}")]
    UnknownMethod(String),
}

/// A confidence score in [0, 1]. Construction validates the bound, so any
/// `Score` in the system is known to be in range.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Score(f64);

impl Score {
    pub fn new(value: f64) -> Result<Score, TypeError> {
        if value.is_nan() || !(0.0..=1.0).contains(&value) {
            return Err(TypeError::ScoreOutOfRange(value));
        }
        Ok(Score(value))
    }

    /// Clamps into [0, 1]; NaN becomes 0.
    pub fn clamped(value: f64) -> Score {
        if value.is_nan() {
            Score(0.0)
        } else {
            Score(value.clamp(0.0, 1.0))
        }
    }

    pub fn get(&self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Score {
    type Error = TypeError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Score::new(value)
    }
}

impl From<Score> for f64 {
    fn from(score: Score) -> f64 {
        score.0
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// One question/answer pair in one language. `item_id` is shared across
/// translations of the same underlying item so cross-lingual joins are
/// key-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub item_id: String,
    pub language: LanguageCode,
    pub question: String,
    pub gold_answers: Vec<String>,
}

impl QAItem {
    pub fn new(
        item_id: impl Into<String>,
        language: LanguageCode,
        question: impl Into<String>,
        gold_answers: Vec<String>,
    ) -> Result<QAItem, TypeError> {
        let item = QAItem {
            item_id: item_id.into(),
            language,
            question: question.into(),
            gold_answers,
        };
        item.validate()?;
        Ok(item)
    }

    pub fn validate(&self) -> Result<(), TypeError> {
        if self.item_id.trim().is_empty() {
            return Err(TypeError::EmptyItemId);
        }
        if self.question.trim().is_empty() {
            return Err(TypeError::EmptyQuestion);
        }
        if self.gold_answers.is_empty() || self.gold_answers.iter().any(|a| a.trim().is_empty()) {
            return Err(TypeError::EmptyGoldAnswers);
        }
        Ok(())
    }

    /// Primary gold answer (first alias).
    pub fn primary_answer(&self) -> &str {
        &self.gold_answers[0]
    }
}

/// An alternative token considered at one output position, with its
/// linear probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAlternative {
    pub text: String,
    pub prob: f64,
}

/// One generated token with its probability and, when requested, the
/// top alternative tokens at that position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenInfo {
    pub text: String,
    pub prob: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternatives: Vec<TokenAlternative>,
}

impl TokenInfo {
    pub fn new(text: impl Into<String>, prob: f64) -> TokenInfo {
        TokenInfo {
            text: text.into(),
            prob,
            alternatives: Vec::new(),
        }
    }
}

/// A model output: text plus per-token probabilities and request metadata.
/// Token texts concatenate to `text`; probabilities are linear and in (0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub tokens: Vec<TokenInfo>,
    pub model_id: String,
    pub temperature: f64,
    pub prompt_fingerprint: String,
}

impl Generation {
    pub fn new(
        text: impl Into<String>,
        tokens: Vec<TokenInfo>,
        model_id: impl Into<String>,
        temperature: f64,
        prompt_fingerprint: impl Into<String>,
    ) -> Result<Generation, TypeError> {
        let gen = Generation {
            text: text.into(),
            tokens,
            model_id: model_id.into(),
            temperature,
            prompt_fingerprint: prompt_fingerprint.into(),
        };
        gen.validate()?;
        Ok(gen)
    }

    pub fn validate(&self) -> Result<(), TypeError> {
        if !self.text.is_empty() && self.tokens.is_empty() {
            return Err(TypeError::MissingTokens);
        }
        for token in &self.tokens {
            if token.prob.is_nan() || token.prob <= 0.0 || token.prob > 1.0 {
                return Err(TypeError::TokenProbOutOfRange(token.prob));
            }
        }
        let concat: String = self.tokens.iter().map(|t| t.text.as_str()).collect();
        if concat != self.text {
            return Err(TypeError::TokenTextMismatch {
                expected: self.text.clone(),
                got: concat,
            });
        }
        Ok(())
    }

    /// Token probabilities in output order.
    pub fn probs(&self) -> Vec<f64> {
        self.tokens.iter().map(|t| t.prob).collect()
    }
}

/// How a confidence score was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidenceMethod {
    LikelihoodMin,
    LikelihoodAvg,
    LikelihoodNorm,
    TrueProbability,
    VerbalNumber,
    VerbalWord,
    TemperatureSampling,
    PromptPerturbation,
    CrossLingual,
}

impl ConfidenceMethod {
    /// The six per-language estimators (everything except the
    /// multi-output baselines and the cross-lingual aggregate).
    pub const MONOLINGUAL: [ConfidenceMethod; 6] = [
        ConfidenceMethod::LikelihoodMin,
        ConfidenceMethod::LikelihoodAvg,
        ConfidenceMethod::LikelihoodNorm,
        ConfidenceMethod::TrueProbability,
        ConfidenceMethod::VerbalNumber,
        ConfidenceMethod::VerbalWord,
    ];

    pub fn is_monolingual(&self) -> bool {
        Self::MONOLINGUAL.contains(self)
    }

    /// Whether the method is computed purely from token probabilities of an
    /// existing generation (no extra backend calls).
    pub fn is_likelihood(&self) -> bool {
        matches!(
            self,
            ConfidenceMethod::LikelihoodMin
                | ConfidenceMethod::LikelihoodAvg
                | ConfidenceMethod::LikelihoodNorm
        )
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ConfidenceMethod::LikelihoodMin => "likelihood-min",
            ConfidenceMethod::LikelihoodAvg => "likelihood-avg",
            ConfidenceMethod::LikelihoodNorm => "likelihood-norm",
            ConfidenceMethod::TrueProbability => "true-probability",
            ConfidenceMethod::VerbalNumber => "verbal-number",
            ConfidenceMethod::VerbalWord => "verbal-word",
            ConfidenceMethod::TemperatureSampling => "temperature-sampling",
            ConfidenceMethod::PromptPerturbation => "prompt-perturbation",
            ConfidenceMethod::CrossLingual => "cross-lingual",
        }
    }
}

impl fmt::Display for ConfidenceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConfidenceMethod {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "likelihood-min" => Ok(ConfidenceMethod::LikelihoodMin),
            "likelihood-avg" => Ok(ConfidenceMethod::LikelihoodAvg),
            "likelihood-norm" => Ok(ConfidenceMethod::LikelihoodNorm),
            "true-probability" => Ok(ConfidenceMethod::TrueProbability),
            "verbal-number" => Ok(ConfidenceMethod::VerbalNumber),
            "verbal-word" => Ok(ConfidenceMethod::VerbalWord),
            "temperature-sampling" => Ok(ConfidenceMethod::TemperatureSampling),
            "prompt-perturbation" => Ok(ConfidenceMethod::PromptPerturbation),
            "cross-lingual" => Ok(ConfidenceMethod::CrossLingual),
            _ => Err(TypeError::UnknownMethod(s.to_string())),
        }
    }
}

/// Flag set on a confidence record when the estimator fell back to the
/// neutral midpoint after repeated unparseable replies.
pub const FLAG_PARSE_FALLBACK: &str = "parse_fallback";

/// A confidence score for one item in one language, tagged with the
/// method that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub item_id: String,
    pub language: LanguageCode,
    pub method: ConfidenceMethod,
    pub score: Score,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flags: BTreeSet<String>,
}

impl ConfidenceRecord {
    pub fn new(
        item_id: impl Into<String>,
        language: LanguageCode,
        method: ConfidenceMethod,
        score: Score,
    ) -> ConfidenceRecord {
        ConfidenceRecord {
            item_id: item_id.into(),
            language,
            method,
            score,
            flags: BTreeSet::new(),
        }
    }

    pub fn with_flag(mut self, flag: impl Into<String>) -> ConfidenceRecord {
        self.flags.insert(flag.into());
        self
    }
}
