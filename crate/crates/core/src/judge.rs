//! Answer-correctness judging: asks a judge model for an entailment
//! verdict on a predicted answer and assembles the per-item evaluation
//! record (exact match, unigram F1, judged accuracy).

use thiserror::Error;

use crate::backend::{BackendError, Client, GenerationRequest};
use crate::metrics::{exact_match, parse_nli_verdict, unigram_f1, EvalRecord, NliVerdict};
use crate::prompt::{PromptError, PromptLibrary, PromptPurpose};
use crate::types::{QAItem, Score};

/// Flag set when the judge never produced a parseable verdict and the
/// item was scored incorrect by fallback.
pub const FLAG_JUDGE_FALLBACK: &str = "judge_fallback";

/// Verdict parse attempts before falling back to incorrect.
pub const JUDGE_ATTEMPTS: u32 = 3;

#[derive(Debug, Error, PartialEq)]
pub enum JudgeError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Judged correctness of `prediction` against the item's primary gold
/// answer: true iff the judge rules Entailment. An unparseable verdict
/// is retried with fresh sample indices; after [`JUDGE_ATTEMPTS`]
/// failures the item scores incorrect and the second return reports
/// the fallback.
pub fn nli_accuracy(
    client: &Client,
    prompts: &PromptLibrary,
    item: &QAItem,
    prediction: &str,
) -> Result<(bool, bool), JudgeError> {
    let prompt = prompts.render(
        PromptPurpose::NliJudge,
        item.language,
        &[
            ("question", &item.question),
            ("gold", item.primary_answer()),
            ("prediction", prediction),
        ],
    )?;
    let request = GenerationRequest::user_prompt(prompt)
        .with_temperature(0.0)
        .with_max_tokens(16);
    for attempt in 0..JUDGE_ATTEMPTS {
        let generation = client.generate(&request, attempt)?;
        if let Some(verdict) = parse_nli_verdict(&generation.text) {
            return Ok((verdict == NliVerdict::Entailment, false));
        }
    }
    Ok((false, true))
}

/// Builds the full evaluation record for one predicted answer: exact
/// match and F1 against the gold aliases, judged accuracy via
/// [`nli_accuracy`], and whatever confidence / length metadata the
/// caller already has.
pub fn evaluate_answer(
    client: &Client,
    prompts: &PromptLibrary,
    item: &QAItem,
    prediction: &str,
    confidence: Option<Score>,
    gen_tokens: Option<u64>,
) -> Result<EvalRecord, JudgeError> {
    let (nli_correct, fell_back) = nli_accuracy(client, prompts, item, prediction)?;
    let mut record = EvalRecord {
        item_id: item.item_id.clone(),
        language: item.language,
        em: exact_match(prediction, &item.gold_answers, item.language),
        f1: Score::clamped(unigram_f1(prediction, &item.gold_answers, item.language)),
        nli_correct,
        confidence,
        gen_tokens,
        flags: Default::default(),
    };
    if fell_back {
        record.flags.insert(FLAG_JUDGE_FALLBACK.to_string());
    }
    Ok(record)
}
