//! Answer-quality metrics: text normalization, exact match, uni-gram F1,
//! and AUROC over (confidence, correctness) pairs.
//!
//! AUROC is the Mann-Whitney statistic: the probability that a random
//! correct answer scores above a random incorrect one, ties counting
//! one-half. It is computed by rank-sum in O(n log n) and must agree
//! with brute-force pairwise counting to 1e-12 (see tests).

use std::collections::BTreeSet;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::LanguageCode;
use crate::types::Score;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("AUROC needs at least one positive and one negative label")]
    DegenerateLabels,
    #[error("scores must not contain NaN")]
    NanScore,
}

fn fold_case_and_punctuation(text: &str) -> String {
    let mut cleaned = String::with_capacity(text.len());
    for c in text.chars() {
        if c.is_alphanumeric() {
            cleaned.extend(c.to_lowercase());
        } else {
            cleaned.push(' ');
        }
    }
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercases, strips punctuation, collapses whitespace, and for English
/// drops the articles "a", "an", "the".
pub fn normalize(text: &str, language: LanguageCode) -> String {
    let cleaned = fold_case_and_punctuation(text);
    if language == LanguageCode::En {
        cleaned
            .split_whitespace()
            .filter(|w| !matches!(*w, "a" | "an" | "the"))
            .collect::<Vec<_>>()
            .join(" ")
    } else {
        cleaned
    }
}

/// Splits into uni-gram tokens: whitespace-delimited words, except for
/// scripts without whitespace word boundaries (zh, ja, th) which use
/// single characters.
pub fn tokenize(text: &str, language: LanguageCode) -> Vec<String> {
    if language.character_tokenized() {
        text.chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| c.to_string())
            .collect()
    } else {
        text.split_whitespace().map(|s| s.to_string()).collect()
    }
}

/// 1 iff the normalized prediction equals any normalized gold alias.
pub fn exact_match(pred: &str, golds: &[String], language: LanguageCode) -> bool {
    let pred_norm = normalize(pred, language);
    golds.iter().any(|g| normalize(g, language) == pred_norm)
}

fn token_counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for t in tokens {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    counts
}

fn f1_single(pred_tokens: &[String], gold_tokens: &[String]) -> f64 {
    if pred_tokens.is_empty() || gold_tokens.is_empty() {
        return 0.0;
    }
    let pred_counts = token_counts(pred_tokens);
    let gold_counts = token_counts(gold_tokens);
    let overlap: usize = pred_counts
        .iter()
        .map(|(tok, &n)| n.min(*gold_counts.get(tok).unwrap_or(&0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    // 2PR/(P+R) with P = o/|pred|, R = o/|gold| simplifies to this exact form.
    2.0 * overlap as f64 / (pred_tokens.len() + gold_tokens.len()) as f64
}

/// Uni-gram F1 between the prediction and the best-matching gold alias:
/// multiset token overlap o, precision o/|pred|, recall o/|gold|,
/// F1 = 2PR/(P+R). Texts are lowercased and stripped of punctuation
/// first; unlike [`exact_match`], English articles stay, so
/// function-word overlap counts toward the score.
pub fn unigram_f1(pred: &str, golds: &[String], language: LanguageCode) -> f64 {
    let pred_tokens = tokenize(&fold_case_and_punctuation(pred), language);
    golds
        .iter()
        .map(|g| f1_single(&pred_tokens, &tokenize(&fold_case_and_punctuation(g), language)))
        .fold(0.0, f64::max)
}

/// Area under the ROC curve for (score, correct) pairs, via the
/// Mann-Whitney rank-sum with average ranks for ties.
pub fn auroc(pairs: &[(f64, bool)]) -> Result<f64, MetricError> {
    if pairs.iter().any(|(s, _)| s.is_nan()) {
        return Err(MetricError::NanScore);
    }
    let positives = pairs.iter().filter(|(_, label)| *label).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::DegenerateLabels);
    }

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].0.total_cmp(&pairs[b].0));

    // Average rank over each run of equal scores keeps ties worth 0.5.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pairs[order[j + 1]].0 == pairs[order[i]].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if pairs[idx].1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    let p = positives as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// The three-way entailment verdict from a judge model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NliVerdict {
    Entailment,
    Neutral,
    Contradiction,
}

/// Finds the first verdict label in a judge reply, case-insensitively.
/// Judge prompts ask for the English labels in every language.
pub fn parse_nli_verdict(reply: &str) -> Option<NliVerdict> {
    let lower = reply.to_lowercase();
    let found: Vec<(usize, NliVerdict)> = [
        ("entailment", NliVerdict::Entailment),
        ("neutral", NliVerdict::Neutral),
        ("contradiction", NliVerdict::Contradiction),
    ]
    .into_iter()
    .filter_map(|(needle, verdict)| lower.find(needle).map(|pos| (pos, verdict)))
    .collect();
    found.into_iter().min_by_key(|(pos, _)| *pos).map(|(_, v)| v)
}

/// Per-item correctness signals, optionally joined with a confidence
/// score. `em` and `nli_correct` serialize as 0/1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub item_id: String,
    pub language: LanguageCode,
    #[serde(with = "bit")]
    pub em: bool,
    pub f1: Score,
    #[serde(with = "bit")]
    pub nli_correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<Score>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flags: BTreeSet<String>,
}

/// Serializes a bool as the integer 0 or 1.
mod bit {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &bool, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(u8::from(*value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<bool, D::Error> {
        match u8::deserialize(deserializer)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!(
                "expected 0 or 1, got {other}"
            ))),
        }
    }
}
