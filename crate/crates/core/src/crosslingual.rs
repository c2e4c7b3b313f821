//! Cross-lingual confidence: the arithmetic mean of monolingual scores
//! over a candidate language set, plus the two monolingual multi-output
//! baselines it is compared against (temperature sampling and prompt
//! perturbation).

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Client, GenerationRequest};
use crate::confidence::{estimate, ConfidenceError};
use crate::lang::{GroupingError, GroupingMode, LanguageCode, LanguageGrouping};
use crate::prompt::{PromptError, PromptLibrary, PromptPurpose};
use crate::types::{ConfidenceMethod, ConfidenceRecord, QAItem, Score};

#[derive(Debug, Error, PartialEq)]
pub enum CrossLingualError {
    #[error("no confidence record for language {0}")]
    MissingLanguage(LanguageCode),
    #[error("records mix item ids: {first:?} vs {other:?}")]
    MixedItems { first: String, other: String },
    #[error("need at least one sample")]
    NoSamples,
    #[error(transparent)]
    Grouping(#[from] GroupingError),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Mean of already-validated scores, exact under permutation and
/// bounded by the inputs.
fn mean_score(scores: &[Score]) -> Score {
    let mut values: Vec<f64> = scores.iter().map(|s| s.get()).collect();
    values.sort_by(f64::total_cmp);
    if values.windows(2).all(|w| w[0] == w[1]) {
        return Score::clamped(values[0]);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Score::clamped(mean.clamp(values[0], values[values.len() - 1]))
}

/// Aggregates one item's monolingual confidence scores over a language
/// set into a single score: the arithmetic mean over the set. The
/// result is tagged cross-lingual and attached to the pivot language,
/// whose correctness label it is evaluated against.
pub fn cross_lingual_confidence(
    records: &BTreeMap<LanguageCode, ConfidenceRecord>,
    grouping: &LanguageGrouping,
) -> Result<ConfidenceRecord, CrossLingualError> {
    grouping.validate()?;
    let mut scores = Vec::with_capacity(grouping.languages.len());
    let mut item_id: Option<&str> = None;
    let mut flags = BTreeSet::new();
    for language in &grouping.languages {
        let record = records
            .get(language)
            .ok_or(CrossLingualError::MissingLanguage(*language))?;
        match item_id {
            None => item_id = Some(&record.item_id),
            Some(first) if first != record.item_id => {
                return Err(CrossLingualError::MixedItems {
                    first: first.to_string(),
                    other: record.item_id.clone(),
                })
            }
            Some(_) => {}
        }
        scores.push(record.score);
        flags.extend(record.flags.iter().cloned());
    }

    let mut aggregated = ConfidenceRecord::new(
        item_id.expect("grouping is non-empty"),
        grouping.pivot,
        ConfidenceMethod::CrossLingual,
        mean_score(&scores),
    );
    aggregated.flags = flags;
    Ok(aggregated)
}

/// A cross-lingual confidence record tagged with the language set
/// that produced it, the unit of the aggregation stage's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub grouping: String,
    #[serde(flatten)]
    pub record: ConfidenceRecord,
}

fn answer_request(
    prompts: &PromptLibrary,
    item: &QAItem,
    question: &str,
    temperature: f64,
    want_probs: bool,
) -> Result<GenerationRequest, CrossLingualError> {
    let prompt = prompts.render(PromptPurpose::Answer, item.language, &[("question", question)])?;
    let mut request = GenerationRequest::user_prompt(prompt).with_temperature(temperature);
    if want_probs {
        request = request.want_probs(0);
    }
    Ok(request)
}

/// Temperature-sampling baseline: draws `m` answers at temperature `t`
/// (distinct sample indices), scores each with `base_method`, and
/// returns the mean. Any per-sample failure fails the whole record.
pub fn temperature_sampling_confidence(
    client: &Client,
    prompts: &PromptLibrary,
    item: &QAItem,
    m: u32,
    t: f64,
    base_method: ConfidenceMethod,
) -> Result<ConfidenceRecord, CrossLingualError> {
    if m == 0 {
        return Err(CrossLingualError::NoSamples);
    }
    if !base_method.is_monolingual() {
        return Err(ConfidenceError::NotMonolingual(base_method).into());
    }
    let mut scores = Vec::with_capacity(m as usize);
    let mut flags = BTreeSet::new();
    for sample_index in 0..m {
        let request =
            answer_request(prompts, item, &item.question, t, base_method.is_likelihood())?;
        let generation = client.generate(&request, sample_index).map_err(ConfidenceError::from)?;
        let record = estimate(base_method, client, prompts, item, &generation)?;
        scores.push(record.score);
        flags.extend(record.flags);
    }
    let mut record = ConfidenceRecord::new(
        &item.item_id,
        item.language,
        ConfidenceMethod::TemperatureSampling,
        mean_score(&scores),
    );
    record.flags = flags;
    Ok(record)
}

/// Prompt-perturbation baseline: answers the question once per
/// paraphrase, scores each answer with `base_method`, and returns the
/// mean.
pub fn prompt_perturbation_confidence(
    client: &Client,
    prompts: &PromptLibrary,
    item: &QAItem,
    paraphrases: &[String],
    base_method: ConfidenceMethod,
) -> Result<ConfidenceRecord, CrossLingualError> {
    if paraphrases.is_empty() {
        return Err(CrossLingualError::NoSamples);
    }
    if !base_method.is_monolingual() {
        return Err(ConfidenceError::NotMonolingual(base_method).into());
    }
    let mut scores = Vec::with_capacity(paraphrases.len());
    let mut flags = BTreeSet::new();
    for paraphrase in paraphrases {
        let variant = QAItem {
            question: paraphrase.clone(),
            ..item.clone()
        };
        let request =
            answer_request(prompts, &variant, paraphrase, 0.8, base_method.is_likelihood())?;
        let generation = client.generate(&request, 0).map_err(ConfidenceError::from)?;
        let record = estimate(base_method, client, prompts, &variant, &generation)?;
        scores.push(record.score);
        flags.extend(record.flags);
    }
    let mut record = ConfidenceRecord::new(
        &item.item_id,
        item.language,
        ConfidenceMethod::PromptPerturbation,
        mean_score(&scores),
    );
    record.flags = flags;
    Ok(record)
}

/// Asks the backend for `count` same-language rewrites of the
/// question. Empty replies fall back to the original question so the
/// perturbation baseline always has usable prompts.
pub fn generate_paraphrases(
    client: &Client,
    prompts: &PromptLibrary,
    item: &QAItem,
    count: u32,
) -> Result<Vec<String>, CrossLingualError> {
    if count == 0 {
        return Err(CrossLingualError::NoSamples);
    }
    let prompt =
        prompts.render(PromptPurpose::Paraphrase, item.language, &[("question", &item.question)])?;
    let request = GenerationRequest::user_prompt(prompt);
    let mut paraphrases = Vec::with_capacity(count as usize);
    for sample_index in 0..count {
        let generation =
            client.generate(&request, sample_index).map_err(ConfidenceError::from)?;
        let text = generation.text.trim();
        paraphrases.push(if text.is_empty() {
            item.question.clone()
        } else {
            text.to_string()
        });
    }
    Ok(paraphrases)
}

/// The named language sets used throughout evaluation: a monolingual
/// pivot baseline plus nine multi-language sets across shared-family,
/// distinct-family, and mixed compositions, all pivoted on English.
pub fn standard_groupings() -> Vec<LanguageGrouping> {
    use LanguageCode::*;
    let mut groupings = vec![
        LanguageGrouping::new("en", GroupingMode::Shared, vec![En], En),
        LanguageGrouping::new("shared2", GroupingMode::Shared, vec![En, De], En),
        LanguageGrouping::new("shared3", GroupingMode::Shared, vec![En, Fr, De], En),
        LanguageGrouping::new("shared5", GroupingMode::Shared, vec![En, Fr, De, It, Id], En),
        LanguageGrouping::new("distinct2", GroupingMode::Distinct, vec![En, Zh], En),
        LanguageGrouping::new("distinct4", GroupingMode::Distinct, vec![En, Zh, Ko, Ja], En),
        LanguageGrouping::new(
            "distinct6",
            GroupingMode::Distinct,
            vec![En, Zh, Ko, Th, Ar, Ja],
            En,
        ),
        LanguageGrouping::new("mixed3", GroupingMode::Mixed, vec![En, Zh, Fr], En),
        LanguageGrouping::new("mixed5", GroupingMode::Mixed, vec![En, Zh, Ja, Fr, De], En),
    ];
    groupings.push(LanguageGrouping::new(
        "all",
        GroupingMode::Mixed,
        LanguageCode::ALL.to_vec(),
        En,
    ));
    groupings
}
