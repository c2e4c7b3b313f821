//! The six monolingual confidence estimators: three likelihood scores
//! computed from token probabilities, and three elicited scores
//! (true-probability self-evaluation, verbalized number, verbalized
//! word) that issue backend calls.
//!
//! Elicitation runs at temperature 0; answer generation keeps its own
//! sampling temperature. Unparseable elicitation replies fall back to
//! the neutral 0.5 after three attempts, flagged so reports can
//! exclude them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Client, GenerationRequest};
use crate::lang::LanguageCode;
use crate::prompt::{PromptError, PromptLibrary, PromptPurpose};
use crate::types::{
    ConfidenceMethod, ConfidenceRecord, Generation, QAItem, Score, FLAG_PARSE_FALLBACK,
};

/// Attempts per elicitation before falling back to 0.5.
pub const ELICIT_ATTEMPTS: u32 = 3;
/// Completion budget for elicitation replies (a number, word, or letter).
pub const ELICIT_MAX_TOKENS: u32 = 16;
/// Alternative tokens requested at the true/false decision position.
pub const DECISION_ALTERNATIVES: u32 = 5;

#[derive(Debug, Error, PartialEq)]
pub enum ConfidenceError {
    #[error("generation has no tokens")]
    EmptyGeneration,
    #[error("neither choice token appears at the decision position")]
    DecisionTokenMissing,
    #[error("invalid verbal word scale: {0}")]
    InvalidScale(String),
    #[error("method {0} is not a monolingual estimator")]
    NotMonolingual(ConfidenceMethod),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

fn sorted_probs(gen: &Generation) -> Result<Vec<f64>, ConfidenceError> {
    if gen.tokens.is_empty() {
        return Err(ConfidenceError::EmptyGeneration);
    }
    let mut probs = gen.probs();
    probs.sort_by(f64::total_cmp);
    Ok(probs)
}

fn all_equal(probs: &[f64]) -> bool {
    probs.windows(2).all(|w| w[0] == w[1])
}

/// Minimum token probability: dominated by the single least likely token.
pub fn likelihood_min(gen: &Generation) -> Result<Score, ConfidenceError> {
    let probs = sorted_probs(gen)?;
    Ok(Score::clamped(probs[0]))
}

/// Arithmetic mean of token probabilities.
pub fn likelihood_avg(gen: &Generation) -> Result<Score, ConfidenceError> {
    let probs = sorted_probs(gen)?;
    if all_equal(&probs) {
        return Ok(Score::clamped(probs[0]));
    }
    let mean = probs.iter().sum::<f64>() / probs.len() as f64;
    // Summing the sorted list makes the result permutation-invariant;
    // the clamp keeps final-ulp rounding inside the [min, max] bound.
    Ok(Score::clamped(mean.clamp(probs[0], probs[probs.len() - 1])))
}

/// Length-normalized geometric mean, computed in log space:
/// exp((1/N) * sum of ln p_i).
pub fn likelihood_norm(gen: &Generation) -> Result<Score, ConfidenceError> {
    let probs = sorted_probs(gen)?;
    if all_equal(&probs) {
        return Ok(Score::clamped(probs[0]));
    }
    let mean_log = probs.iter().map(|p| p.ln()).sum::<f64>() / probs.len() as f64;
    let geometric = mean_log.exp();
    // The geometric mean sits between the minimum and the arithmetic
    // mean; the clamp keeps final-ulp rounding from breaking that chain.
    let avg = likelihood_avg(gen)?.get();
    Ok(Score::clamped(geometric.clamp(probs[0], avg)))
}

/// The five ordinal confidence words of one language, mapped to
/// strictly increasing scores on [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbalWordScale {
    words: Vec<(String, Score)>,
}

impl VerbalWordScale {
    pub fn new(words: Vec<(String, f64)>) -> Result<VerbalWordScale, ConfidenceError> {
        if words.len() != 5 {
            return Err(ConfidenceError::InvalidScale(format!(
                "expected 5 levels, got {}",
                words.len()
            )));
        }
        let mut scored = Vec::with_capacity(5);
        let mut previous = f64::NEG_INFINITY;
        for (word, value) in words {
            if word.trim().is_empty() {
                return Err(ConfidenceError::InvalidScale("empty word".into()));
            }
            if value <= previous {
                return Err(ConfidenceError::InvalidScale(
                    "scores must be strictly increasing".into(),
                ));
            }
            previous = value;
            let score = Score::new(value)
                .map_err(|e| ConfidenceError::InvalidScale(e.to_string()))?;
            scored.push((word, score));
        }
        Ok(VerbalWordScale { words: scored })
    }

    /// The stock scale for a language: five localized words scored
    /// 0.0, 0.25, 0.5, 0.75, 1.0.
    pub fn builtin(language: LanguageCode) -> VerbalWordScale {
        let words: [&str; 5] = match language {
            LanguageCode::En => ["lowest", "low", "medium", "high", "highest"],
            LanguageCode::Fr => ["très faible", "faible", "moyenne", "élevée", "très élevée"],
            LanguageCode::De => ["sehr niedrig", "niedrig", "mittel", "hoch", "sehr hoch"],
            LanguageCode::It => ["molto bassa", "bassa", "media", "alta", "molto alta"],
            LanguageCode::Id => ["sangat rendah", "rendah", "sedang", "tinggi", "sangat tinggi"],
            LanguageCode::Zh => ["最低", "较低", "中等", "较高", "最高"],
            LanguageCode::Ja => ["最低", "低い", "中程度", "高い", "最高"],
            LanguageCode::Ar => ["الأدنى", "منخفض", "متوسط", "مرتفع", "الأعلى"],
            LanguageCode::Ko => ["최저", "낮음", "보통", "높음", "최고"],
            LanguageCode::Th => ["ต่ำที่สุด", "ต่ำ", "ปานกลาง", "สูง", "สูงที่สุด"],
        };
        let scored = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.to_string(), i as f64 * 0.25))
            .collect();
        VerbalWordScale::new(scored).expect("builtin scales are valid")
    }

    pub fn words(&self) -> impl Iterator<Item = (&str, Score)> {
        self.words.iter().map(|(w, s)| (w.as_str(), *s))
    }

    /// The word list as it appears in prompts.
    pub fn prompt_words(&self) -> String {
        let names: Vec<&str> = self.words.iter().map(|(w, _)| w.as_str()).collect();
        names.join(", ")
    }

    /// Finds the scale word in a reply, case-insensitively, trying
    /// longer words first so "lowest" is never read as "low".
    pub fn match_reply(&self, reply: &str) -> Option<Score> {
        let haystack = reply.to_lowercase();
        let mut by_length: Vec<&(String, Score)> = self.words.iter().collect();
        by_length.sort_by_key(|(word, _)| std::cmp::Reverse(word.chars().count()));
        by_length
            .into_iter()
            .find(|(word, _)| haystack.contains(&word.to_lowercase()))
            .map(|(_, score)| *score)
    }
}

fn elicit_request(prompt: String) -> GenerationRequest {
    GenerationRequest::user_prompt(prompt)
        .with_temperature(0.0)
        .with_max_tokens(ELICIT_MAX_TOKENS)
}

fn choice_letter(token_text: &str) -> Option<char> {
    let trimmed: String = token_text
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    match trimmed.as_str() {
        "a" => Some('a'),
        "b" => Some('b'),
        _ => None,
    }
}

/// Self-evaluated probability that `answer` is true: asks the model to
/// choose between (A) True and (B) False and reads the probability on
/// the choice tokens at the decision position. Normalizes over both
/// when both are visible among the top alternatives, otherwise returns
/// the raw probability of True.
pub fn true_probability(
    client: &Client,
    prompts: &PromptLibrary,
    item: &QAItem,
    answer: &str,
) -> Result<Score, ConfidenceError> {
    let prompt = prompts.render(
        PromptPurpose::TrueProbability,
        item.language,
        &[("question", &item.question), ("answer", answer)],
    )?;
    let request = elicit_request(prompt).want_probs(DECISION_ALTERNATIVES);
    let generation = client.generate(&request, 0)?;

    let decision = generation
        .tokens
        .iter()
        .find(|token| choice_letter(&token.text).is_some())
        .ok_or(ConfidenceError::DecisionTokenMissing)?;

    let mut p_true: Option<f64> = None;
    let mut p_false: Option<f64> = None;
    let candidates = std::iter::once((decision.text.as_str(), decision.prob))
        .chain(decision.alternatives.iter().map(|alt| (alt.text.as_str(), alt.prob)));
    for (text, prob) in candidates {
        match choice_letter(text) {
            Some('a') if p_true.is_none() => p_true = Some(prob),
            Some('b') if p_false.is_none() => p_false = Some(prob),
            _ => {}
        }
    }

    match (p_true, p_false) {
        (Some(t), Some(f)) => Ok(Score::clamped(t / (t + f))),
        (Some(t), None) => Ok(Score::clamped(t)),
        (None, Some(_)) => Ok(Score::clamped(0.0)),
        (None, None) => Err(ConfidenceError::DecisionTokenMissing),
    }
}

fn number_pattern() -> &'static regex::Regex {
    use std::sync::OnceLock;
    static PATTERN: OnceLock<regex::Regex> = OnceLock::new();
    PATTERN.get_or_init(|| regex::Regex::new(r"(\d+(?:[.,]\d+)?|[.,]\d+)(\s*%)?").unwrap())
}

/// Parses the first decimal (or percentage) in a reply into [0, 1].
pub fn parse_confidence_number(reply: &str) -> Option<f64> {
    let captures = number_pattern().captures(reply)?;
    let digits = captures[1].replace(',', ".");
    let mut value: f64 = digits.parse().ok()?;
    if captures.get(2).is_some() {
        value /= 100.0;
    }
    Some(value.clamp(0.0, 1.0))
}

/// Elicited numeric confidence. Returns the score and whether the 0.5
/// parse fallback was used after [`ELICIT_ATTEMPTS`] tries.
pub fn verbal_number(
    client: &Client,
    prompts: &PromptLibrary,
    item: &QAItem,
    answer: &str,
) -> Result<(Score, bool), ConfidenceError> {
    let prompt = prompts.render(
        PromptPurpose::VerbalNumber,
        item.language,
        &[("question", &item.question), ("answer", answer)],
    )?;
    let request = elicit_request(prompt);
    for attempt in 0..ELICIT_ATTEMPTS {
        let generation = client.generate(&request, attempt)?;
        if let Some(value) = parse_confidence_number(&generation.text) {
            return Ok((Score::clamped(value), false));
        }
    }
    Ok((Score::clamped(0.5), true))
}

/// Elicited ordinal-word confidence under `scale`; fallback semantics
/// as in [`verbal_number`].
pub fn verbal_word(
    client: &Client,
    prompts: &PromptLibrary,
    item: &QAItem,
    answer: &str,
    scale: &VerbalWordScale,
) -> Result<(Score, bool), ConfidenceError> {
    let prompt = prompts.render(
        PromptPurpose::VerbalWord,
        item.language,
        &[
            ("question", &item.question),
            ("answer", answer),
            ("words", &scale.prompt_words()),
        ],
    )?;
    let request = elicit_request(prompt);
    for attempt in 0..ELICIT_ATTEMPTS {
        let generation = client.generate(&request, attempt)?;
        if let Some(score) = scale.match_reply(&generation.text) {
            return Ok((score, false));
        }
    }
    Ok((Score::clamped(0.5), true))
}

/// Uniform dispatch over the six monolingual estimators, wrapping the
/// result as a [`ConfidenceRecord`].
pub fn estimate(
    method: ConfidenceMethod,
    client: &Client,
    prompts: &PromptLibrary,
    item: &QAItem,
    generation: &Generation,
) -> Result<ConfidenceRecord, ConfidenceError> {
    let record = |score: Score| ConfidenceRecord::new(&item.item_id, item.language, method, score);
    match method {
        ConfidenceMethod::LikelihoodMin => Ok(record(likelihood_min(generation)?)),
        ConfidenceMethod::LikelihoodAvg => Ok(record(likelihood_avg(generation)?)),
        ConfidenceMethod::LikelihoodNorm => Ok(record(likelihood_norm(generation)?)),
        ConfidenceMethod::TrueProbability => {
            Ok(record(true_probability(client, prompts, item, &generation.text)?))
        }
        ConfidenceMethod::VerbalNumber => {
            let (score, fallback) = verbal_number(client, prompts, item, &generation.text)?;
            let record = record(score);
            Ok(if fallback { record.with_flag(FLAG_PARSE_FALLBACK) } else { record })
        }
        ConfidenceMethod::VerbalWord => {
            let scale = VerbalWordScale::builtin(item.language);
            let (score, fallback) =
                verbal_word(client, prompts, item, &generation.text, &scale)?;
            let record = record(score);
            Ok(if fallback { record.with_flag(FLAG_PARSE_FALLBACK) } else { record })
        }
        other => Err(ConfidenceError::NotMonolingual(other)),
    }
}
