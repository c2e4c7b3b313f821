//! Python bindings for the analysis-side surface of polyconf: answer
//! metrics, likelihood and verbal confidence math, cross-lingual
//! aggregation, and refinement gating. Invalid inputs raise
//! ValueError with the library's own error text.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use polyconf::confidence::{
    likelihood_avg as core_likelihood_avg, likelihood_min as core_likelihood_min,
    likelihood_norm as core_likelihood_norm,
    parse_confidence_number as core_parse_confidence_number, VerbalWordScale,
};
use polyconf::crosslingual::cross_lingual_confidence;
use polyconf::lang::{GroupingMode, LanguageCode, LanguageGrouping};
use polyconf::metrics;
use polyconf::refine::{decide_refine as core_decide_refine, FeedbackPolicy};
use polyconf::types::{ConfidenceMethod, ConfidenceRecord, Generation, Score, TokenInfo};

fn value_err(err: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn language(code: &str) -> PyResult<LanguageCode> {
    LanguageCode::parse(code).map_err(value_err)
}

fn generation_of(probs: &[f64]) -> PyResult<Generation> {
    let tokens: Vec<TokenInfo> = probs.iter().map(|&p| TokenInfo::new("x", p)).collect();
    Generation::new("x".repeat(probs.len()), tokens, "py", 0.0, "py").map_err(value_err)
}

/// Supported language codes, in report column order.
#[pyfunction]
fn languages() -> Vec<&'static str> {
    LanguageCode::ALL.iter().map(|l| l.as_str()).collect()
}

/// Genealogical family of a language code.
#[pyfunction]
fn language_family(code: &str) -> PyResult<String> {
    Ok(format!("{:?}", language(code)?.family()))
}

/// English name of a language code, as used in translation prompts.
#[pyfunction]
fn english_name(code: &str) -> PyResult<&'static str> {
    Ok(language(code)?.english_name())
}

/// Lowercases, strips punctuation and articles, collapses whitespace.
#[pyfunction]
#[pyo3(signature = (text, language = "en"))]
fn normalize(text: &str, language: &str) -> PyResult<String> {
    Ok(metrics::normalize(text, self::language(language)?))
}

/// Normalized unigram list; single characters for scripts without
/// word boundaries (zh, ja, th), whitespace words elsewhere.
#[pyfunction]
#[pyo3(signature = (text, language = "en"))]
fn tokenize(text: &str, language: &str) -> PyResult<Vec<String>> {
    Ok(metrics::tokenize(text, self::language(language)?))
}

/// True when the normalized prediction equals any normalized gold.
#[pyfunction]
#[pyo3(signature = (prediction, golds, language = "en"))]
fn exact_match(prediction: &str, golds: Vec<String>, language: &str) -> PyResult<bool> {
    Ok(metrics::exact_match(prediction, &golds, self::language(language)?))
}

/// Best token-overlap F1 against any gold answer, in [0, 1].
#[pyfunction]
#[pyo3(signature = (prediction, golds, language = "en"))]
fn unigram_f1(prediction: &str, golds: Vec<String>, language: &str) -> PyResult<f64> {
    Ok(metrics::unigram_f1(prediction, &golds, self::language(language)?))
}

/// AUROC of (score, is_correct) pairs via the rank statistic, ties
/// counted half. Raises ValueError when a class is missing.
#[pyfunction]
fn auroc(pairs: Vec<(f64, bool)>) -> PyResult<f64> {
    metrics::auroc(&pairs).map_err(value_err)
}

/// Minimum token probability of a generation.
#[pyfunction]
fn likelihood_min(probs: Vec<f64>) -> PyResult<f64> {
    core_likelihood_min(&generation_of(&probs)?)
        .map(|s| s.get())
        .map_err(value_err)
}

/// Arithmetic mean of token probabilities.
#[pyfunction]
fn likelihood_avg(probs: Vec<f64>) -> PyResult<f64> {
    core_likelihood_avg(&generation_of(&probs)?)
        .map(|s| s.get())
        .map_err(value_err)
}

/// Length-normalized joint probability (geometric mean), computed in
/// log space.
#[pyfunction]
fn likelihood_norm(probs: Vec<f64>) -> PyResult<f64> {
    core_likelihood_norm(&generation_of(&probs)?)
        .map(|s| s.get())
        .map_err(value_err)
}

/// Mean of per-language confidence scores, the cross-lingual
/// aggregate. `scores` maps language codes to scores in [0, 1];
/// `pivot` defaults to "en" when present, else the first member.
#[pyfunction]
#[pyo3(signature = (scores, pivot = None))]
fn cross_lingual_score(scores: BTreeMap<String, f64>, pivot: Option<&str>) -> PyResult<f64> {
    if scores.is_empty() {
        return Err(PyValueError::new_err("scores must not be empty"));
    }
    let mut records = BTreeMap::new();
    for (code, value) in &scores {
        let member = language(code)?;
        let score = Score::new(*value).map_err(value_err)?;
        records.insert(
            member,
            ConfidenceRecord::new("item", member, ConfidenceMethod::VerbalNumber, score),
        );
    }
    let members: Vec<LanguageCode> = records.keys().copied().collect();
    let pivot = match pivot {
        Some(code) => language(code)?,
        None if records.contains_key(&LanguageCode::En) => LanguageCode::En,
        None => members[0],
    };
    let mut grouping = LanguageGrouping::new("adhoc", GroupingMode::Shared, members, pivot);
    grouping.mode = grouping.computed_mode();
    cross_lingual_confidence(&records, &grouping)
        .map(|record| record.score.get())
        .map_err(value_err)
}

/// Whether an item should be refined under a feedback policy
/// ("fixed:K" or "random:SEED"), and the threshold used. Fixed
/// policies refine when confidence <= K; random policies draw a
/// per-item threshold from the seed and the item index.
#[pyfunction]
#[pyo3(signature = (confidence, policy, item_index = 0))]
fn decide_refine(confidence: f64, policy: &str, item_index: u64) -> PyResult<(bool, f64)> {
    let policy: FeedbackPolicy = policy.parse().map_err(value_err)?;
    let confidence = Score::new(confidence).map_err(value_err)?;
    Ok(core_decide_refine(confidence, &policy, item_index))
}

/// First decimal or percentage in a reply, clamped to [0, 1]; None
/// when the reply holds no number.
#[pyfunction]
fn parse_confidence_number(reply: &str) -> Option<f64> {
    core_parse_confidence_number(reply)
}

/// Score of the longest confidence word found in a reply, using the
/// built-in five-word scale for the language; None on no match.
#[pyfunction]
#[pyo3(signature = (reply, language = "en"))]
fn match_confidence_word(reply: &str, language: &str) -> PyResult<Option<f64>> {
    Ok(VerbalWordScale::builtin(self::language(language)?)
        .match_reply(reply)
        .map(|s| s.get()))
}

/// The built-in five-word confidence scale for a language, as
/// (word, score) pairs from lowest to highest.
#[pyfunction]
#[pyo3(signature = (language = "en"))]
fn confidence_words(language: &str) -> PyResult<Vec<(String, f64)>> {
    Ok(VerbalWordScale::builtin(self::language(language)?)
        .words()
        .map(|(word, score)| (word.to_string(), score.get()))
        .collect())
}

#[pymodule]
fn polyconf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(languages, m)?)?;
    m.add_function(wrap_pyfunction!(language_family, m)?)?;
    m.add_function(wrap_pyfunction!(english_name, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(exact_match, m)?)?;
    m.add_function(wrap_pyfunction!(unigram_f1, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(likelihood_min, m)?)?;
    m.add_function(wrap_pyfunction!(likelihood_avg, m)?)?;
    m.add_function(wrap_pyfunction!(likelihood_norm, m)?)?;
    m.add_function(wrap_pyfunction!(cross_lingual_score, m)?)?;
    m.add_function(wrap_pyfunction!(decide_refine, m)?)?;
    m.add_function(wrap_pyfunction!(parse_confidence_number, m)?)?;
    m.add_function(wrap_pyfunction!(match_confidence_word, m)?)?;
    m.add_function(wrap_pyfunction!(confidence_words, m)?)?;
    Ok(())
}
