//! Confidence-gated self-refinement: decide per item whether the
//! confidence score falls at or below a threshold, and if so ask the
//! model to revise its answer with that score quoted as feedback.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::backend::{BackendError, Client, GenerationRequest};
use crate::confidence::{estimate, ConfidenceError};
use crate::lang::LanguageCode;
use crate::par::parallel_map;
use crate::prompt::{PromptError, PromptLibrary, PromptPurpose};
use crate::types::{ConfidenceMethod, Generation, QAItem, Score};

/// Flag set on an outcome when the refinement reply was empty and the
/// initial answer was kept.
pub const FLAG_EMPTY_REPLY: &str = "empty_reply";

#[derive(Debug, Error, PartialEq)]
pub enum RefineError {
    #[error("threshold must lie in [0,1], got {0}")]
    InvalidThreshold(f64),
    #[error("policy string must be fixed:<k> or random:<seed>, got {0:?}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
}

/// How the refinement threshold k is chosen for each item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeedbackPolicy {
    /// One fixed threshold for every item.
    FixedValue { k: f64 },
    /// A fresh uniform draw from [0,1) per item, reproducible from the
    /// seed and the item's position.
    RandomSampling { seed: u64 },
}

impl FeedbackPolicy {
    pub fn fixed(k: f64) -> Result<FeedbackPolicy, RefineError> {
        if !(0.0..=1.0).contains(&k) {
            return Err(RefineError::InvalidThreshold(k));
        }
        Ok(FeedbackPolicy::FixedValue { k })
    }

    pub fn random(seed: u64) -> FeedbackPolicy {
        FeedbackPolicy::RandomSampling { seed }
    }

    pub fn validate(&self) -> Result<&FeedbackPolicy, RefineError> {
        if let FeedbackPolicy::FixedValue { k } = self {
            if !(0.0..=1.0).contains(k) {
                return Err(RefineError::InvalidThreshold(*k));
            }
        }
        Ok(self)
    }
}

impl fmt::Display for FeedbackPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeedbackPolicy::FixedValue { k } => write!(f, "fixed:{k}"),
            FeedbackPolicy::RandomSampling { seed } => write!(f, "random:{seed}"),
        }
    }
}

impl FromStr for FeedbackPolicy {
    type Err = RefineError;

    fn from_str(s: &str) -> Result<FeedbackPolicy, RefineError> {
        let invalid = || RefineError::InvalidPolicy(s.to_string());
        match s.split_once(':') {
            Some(("fixed", k)) => {
                FeedbackPolicy::fixed(k.parse().map_err(|_| invalid())?)
            }
            Some(("random", seed)) => {
                Ok(FeedbackPolicy::random(seed.parse().map_err(|_| invalid())?))
            }
            _ => Err(invalid()),
        }
    }
}

/// Per-item record of a refinement pass. `refined: false` always
/// implies `final_answer == initial_answer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementOutcome {
    pub item_id: String,
    pub language: LanguageCode,
    pub refined: bool,
    pub threshold_used: f64,
    pub initial_answer: String,
    pub final_answer: String,
    pub initial_conf: Score,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_conf: Option<Score>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flags: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One item joined with its initial answer and confidence score, the
/// unit of work for a refinement pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementInput {
    pub item: QAItem,
    pub initial_answer: String,
    pub confidence: Score,
}

/// Applies the policy: refine when the confidence lies at or below
/// the threshold (boundary inclusive). Returns the decision and the
/// threshold that was compared against.
pub fn decide_refine(
    conf: Score,
    policy: &FeedbackPolicy,
    item_index: u64,
) -> (bool, f64) {
    let threshold = match policy {
        FeedbackPolicy::FixedValue { k } => *k,
        FeedbackPolicy::RandomSampling { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            rng.set_stream(item_index);
            rng.random::<f64>()
        }
    };
    (conf.get() <= threshold, threshold)
}

/// Asks the model to revise `initial` with the confidence score quoted
/// to two decimals as feedback. An empty reply keeps the initial
/// answer; the boolean reports that fallback.
pub fn refine_answer(
    client: &Client,
    prompts: &PromptLibrary,
    item: &QAItem,
    initial: &str,
    conf: Score,
) -> Result<(String, bool), RefineError> {
    let (answer, fell_back, _) = revise(client, prompts, item, initial, conf, false)?;
    Ok((answer, fell_back))
}

fn revise(
    client: &Client,
    prompts: &PromptLibrary,
    item: &QAItem,
    initial: &str,
    conf: Score,
    want_probs: bool,
) -> Result<(String, bool, Option<Generation>), RefineError> {
    let prompt = prompts.render(
        PromptPurpose::Refine,
        item.language,
        &[
            ("question", &item.question),
            ("answer", initial),
            ("confidence", &format!("{:.2}", conf.get())),
        ],
    )?;
    let mut request = GenerationRequest::user_prompt(prompt);
    if want_probs {
        request = request.want_probs(0);
    }
    let generation = client.generate(&request, 0)?;
    let revised = generation.text.trim();
    if revised.is_empty() {
        Ok((initial.to_string(), true, None))
    } else {
        Ok((revised.to_string(), false, Some(generation)))
    }
}

fn refine_one(
    client: &Client,
    prompts: &PromptLibrary,
    input: &RefinementInput,
    policy: &FeedbackPolicy,
    recompute: Option<ConfidenceMethod>,
    item_index: u64,
) -> RefinementOutcome {
    let (refine, threshold_used) = decide_refine(input.confidence, policy, item_index);
    let mut outcome = RefinementOutcome {
        item_id: input.item.item_id.clone(),
        language: input.item.language,
        refined: false,
        threshold_used,
        initial_answer: input.initial_answer.clone(),
        final_answer: input.initial_answer.clone(),
        initial_conf: input.confidence,
        final_conf: None,
        flags: BTreeSet::new(),
        error: None,
    };
    if !refine {
        return outcome;
    }
    let want_probs = recompute.is_some_and(|m| m.is_likelihood());
    let revision = revise(
        client,
        prompts,
        &input.item,
        &input.initial_answer,
        input.confidence,
        want_probs,
    );
    let generation = match revision {
        Ok((final_answer, fell_back, generation)) => {
            outcome.refined = true;
            outcome.final_answer = final_answer;
            if fell_back {
                outcome.flags.insert(FLAG_EMPTY_REPLY.to_string());
            }
            generation
        }
        Err(err) => {
            outcome.error = Some(err.to_string());
            return outcome;
        }
    };
    // Re-score the revised generation itself, so likelihood methods
    // read its token probabilities and verbal methods quote its text.
    if let (Some(method), Some(generation)) = (recompute, generation) {
        match estimate(method, client, prompts, &input.item, &generation) {
            Ok(record) => outcome.final_conf = Some(record.score),
            Err(err) => outcome.error = Some(err.to_string()),
        }
    }
    outcome
}

/// One refinement pass over the whole joined input set. Per-item
/// failures are recorded on the outcome and the run continues; the
/// output order always matches the input order.
pub fn run_refinement(
    client: &Client,
    prompts: &PromptLibrary,
    inputs: &[RefinementInput],
    policy: &FeedbackPolicy,
    recompute: Option<ConfidenceMethod>,
) -> Result<Vec<RefinementOutcome>, RefineError> {
    policy.validate()?;
    Ok(parallel_map(inputs, client.concurrency(), |index, input| {
        refine_one(client, prompts, input, policy, recompute, index as u64)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, MockResponse, MockRule, MockScript};
    use LanguageCode::En;

    fn score(value: f64) -> Score {
        Score::new(value).unwrap()
    }

    fn input(index: usize, conf: f64) -> RefinementInput {
        RefinementInput {
            item: QAItem::new(
                format!("q{index}"),
                En,
                format!("Question {index}?"),
                vec![format!("gold {index}")],
            )
            .unwrap(),
            initial_answer: format!("draft {index}"),
            confidence: score(conf),
        }
    }

    fn revising_client() -> Client {
        let script = MockScript::new(vec![MockRule::contains(
            &["Review your previous answer"],
            MockResponse::text("revised"),
        )]);
        Client::new(Box::new(MockBackend::new("mock", script)))
    }

    #[test]
    fn fixed_policy_decisions() {
        let at = |conf: f64, k: f64| decide_refine(score(conf), &FeedbackPolicy::fixed(k).unwrap(), 0);
        assert_eq!(at(0.6, 0.75), (true, 0.75));
        assert_eq!(at(0.6, 0.25), (false, 0.25));
        assert_eq!(at(0.0, 0.0), (true, 0.0));
        assert_eq!(at(0.8, 0.8), (true, 0.8), "boundary is inclusive");
    }

    #[test]
    fn fixed_policy_rejects_out_of_range_threshold() {
        assert_eq!(FeedbackPolicy::fixed(1.2).unwrap_err(), RefineError::InvalidThreshold(1.2));
        assert_eq!(FeedbackPolicy::fixed(-0.1).unwrap_err(), RefineError::InvalidThreshold(-0.1));
    }

    #[test]
    fn policy_strings_round_trip() {
        let fixed: FeedbackPolicy = "fixed:0.75".parse().unwrap();
        assert_eq!(fixed, FeedbackPolicy::FixedValue { k: 0.75 });
        assert_eq!(fixed.to_string(), "fixed:0.75");

        let random: FeedbackPolicy = "random:7".parse().unwrap();
        assert_eq!(random, FeedbackPolicy::RandomSampling { seed: 7 });
        assert_eq!(random.to_string(), "random:7");

        assert!("fixed".parse::<FeedbackPolicy>().is_err());
        assert!("fixed:nope".parse::<FeedbackPolicy>().is_err());
        assert!("fixed:1.5".parse::<FeedbackPolicy>().is_err());
        assert!("gaussian:3".parse::<FeedbackPolicy>().is_err());
    }

    fn refined_count(confs: &[f64], k: f64) -> usize {
        let client = revising_client();
        let inputs: Vec<RefinementInput> =
            confs.iter().enumerate().map(|(i, &c)| input(i, c)).collect();
        let outcomes = run_refinement(
            &client,
            &PromptLibrary::builtin(),
            &inputs,
            &FeedbackPolicy::fixed(k).unwrap(),
            None,
        )
        .unwrap();
        outcomes.iter().filter(|o| o.refined).count()
    }

    #[test]
    fn threshold_sweep_counts() {
        let confs = [0.2, 0.4, 0.6, 0.8];
        assert_eq!(refined_count(&confs, 0.25), 1);
        assert_eq!(refined_count(&confs, 0.50), 2);
        assert_eq!(refined_count(&confs, 0.75), 3);
        assert_eq!(refined_count(&confs, 1.00), 4);
        assert_eq!(refined_count(&confs, 0.80), 4, "conf equal to k refines");
    }

    #[test]
    fn zero_threshold_touches_nothing() {
        let client = revising_client();
        let inputs: Vec<RefinementInput> = (0..4).map(|i| input(i, 0.1 + i as f64 * 0.2)).collect();
        let outcomes = run_refinement(
            &client,
            &PromptLibrary::builtin(),
            &inputs,
            &FeedbackPolicy::fixed(0.0).unwrap(),
            None,
        )
        .unwrap();
        for (outcome, raw) in outcomes.iter().zip(&inputs) {
            assert!(!outcome.refined);
            assert_eq!(outcome.final_answer, raw.initial_answer);
            assert_eq!(outcome.final_conf, None);
        }
    }

    #[test]
    fn unit_threshold_refines_everything() {
        let client = revising_client();
        let inputs: Vec<RefinementInput> = (0..4).map(|i| input(i, 0.1 + i as f64 * 0.2)).collect();
        let outcomes = run_refinement(
            &client,
            &PromptLibrary::builtin(),
            &inputs,
            &FeedbackPolicy::fixed(1.0).unwrap(),
            None,
        )
        .unwrap();
        assert!(outcomes.iter().all(|o| o.refined && o.final_answer == "revised"));
    }

    #[test]
    fn refined_sets_are_monotone_in_k() {
        let confs: Vec<f64> = (0..25).map(|i| (i as f64 * 0.517) % 1.0).collect();
        let sets: Vec<Vec<usize>> = [0.1, 0.3, 0.5, 0.7, 0.9]
            .iter()
            .map(|&k| {
                confs
                    .iter()
                    .enumerate()
                    .filter(|&(i, &c)| decide_refine(score(c), &FeedbackPolicy::fixed(k).unwrap(), i as u64).0)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        for window in sets.windows(2) {
            assert!(window[0].iter().all(|i| window[1].contains(i)));
        }
    }

    #[test]
    fn random_policy_rate_matches_complement_of_confidence() {
        let policy = FeedbackPolicy::random(17);
        let refined = (0..10_000u64)
            .filter(|&i| decide_refine(score(0.5), &policy, i).0)
            .count();
        let fraction = refined as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&fraction), "fraction {fraction} outside [0.48, 0.52]");
    }

    #[test]
    fn random_policy_draws_are_reproducible_and_per_item() {
        let policy = FeedbackPolicy::random(3);
        let (_, first) = decide_refine(score(0.5), &policy, 0);
        let (_, again) = decide_refine(score(0.5), &policy, 0);
        assert_eq!(first, again);
        let (_, other) = decide_refine(score(0.5), &policy, 1);
        assert_ne!(first, other);
        let (_, reseeded) = decide_refine(score(0.5), &FeedbackPolicy::random(4), 0);
        assert_ne!(first, reseeded);
    }

    #[test]
    fn prompt_quotes_confidence_to_two_decimals() {
        // The script only answers when "0.60" appears in the prompt,
        // so a successful revision proves the rendered feedback value.
        let script = MockScript::new(vec![MockRule::contains(
            &["Review your previous answer", "0.60"],
            MockResponse::text("revised"),
        )]);
        let client = Client::new(Box::new(MockBackend::new("mock", script)));
        let item = input(1, 0.6);
        let (answer, fell_back) =
            refine_answer(&client, &PromptLibrary::builtin(), &item.item, "draft 1", score(0.6))
                .unwrap();
        assert_eq!(answer, "revised");
        assert!(!fell_back);
    }

    #[test]
    fn empty_reply_keeps_initial_and_flags() {
        let script = MockScript::new(vec![MockRule::contains(
            &["Review your previous answer"],
            MockResponse::text("   "),
        )]);
        let client = Client::new(Box::new(MockBackend::new("mock", script)));
        let inputs = vec![input(0, 0.3)];
        let outcomes = run_refinement(
            &client,
            &PromptLibrary::builtin(),
            &inputs,
            &FeedbackPolicy::fixed(0.5).unwrap(),
            None,
        )
        .unwrap();
        assert!(outcomes[0].refined);
        assert_eq!(outcomes[0].final_answer, "draft 0");
        assert!(outcomes[0].flags.contains(FLAG_EMPTY_REPLY));
    }

    #[test]
    fn backend_failure_is_recorded_and_run_continues() {
        // No rule matches item q1's question, so its revision call
        // misses the script while the others succeed.
        let script = MockScript::new(vec![
            MockRule::contains(&["Question 0?"], MockResponse::text("revised 0")),
            MockRule::contains(&["Question 2?"], MockResponse::text("revised 2")),
        ]);
        let client = Client::new(Box::new(MockBackend::new("mock", script)));
        let inputs: Vec<RefinementInput> = (0..3).map(|i| input(i, 0.2)).collect();
        let outcomes = run_refinement(
            &client,
            &PromptLibrary::builtin(),
            &inputs,
            &FeedbackPolicy::fixed(0.5).unwrap(),
            None,
        )
        .unwrap();
        assert_eq!(outcomes.len(), 3);
        assert!(outcomes[0].refined && outcomes[0].error.is_none());
        assert!(!outcomes[1].refined);
        assert_eq!(outcomes[1].final_answer, "draft 1");
        assert!(outcomes[1].error.is_some());
        assert!(outcomes[2].refined && outcomes[2].error.is_none());
    }

    #[test]
    fn recompute_attaches_final_confidence_to_refined_items_only() {
        let script = MockScript::new(vec![MockRule::contains(
            &["Review your previous answer"],
            MockResponse::with_probs("revised", vec![0.9]),
        )]);
        let client = Client::new(Box::new(MockBackend::new("mock", script)));
        let inputs = vec![input(0, 0.3), input(1, 0.9)];
        let outcomes = run_refinement(
            &client,
            &PromptLibrary::builtin(),
            &inputs,
            &FeedbackPolicy::fixed(0.5).unwrap(),
            Some(ConfidenceMethod::LikelihoodMin),
        )
        .unwrap();
        assert_eq!(outcomes[0].final_conf, Some(score(0.9)));
        assert_eq!(outcomes[1].final_conf, None);
    }

    #[test]
    fn runs_are_deterministic() {
        let run = || {
            let client = revising_client();
            let inputs: Vec<RefinementInput> =
                (0..12).map(|i| input(i, (i as f64 * 0.37) % 1.0)).collect();
            let outcomes = run_refinement(
                &client,
                &PromptLibrary::builtin(),
                &inputs,
                &FeedbackPolicy::random(9),
                None,
            )
            .unwrap();
            serde_json::to_string(&outcomes).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn outcome_json_round_trips() {
        let outcome = RefinementOutcome {
            item_id: "q1".into(),
            language: En,
            refined: true,
            threshold_used: 0.75,
            initial_answer: "draft".into(),
            final_answer: "revised".into(),
            initial_conf: score(0.6),
            final_conf: None,
            flags: BTreeSet::new(),
            error: None,
        };
        let line = serde_json::to_string(&outcome).unwrap();
        assert!(!line.contains("final_conf"), "empty optionals stay off the wire");
        assert!(!line.contains("flags"));
        let back: RefinementOutcome = serde_json::from_str(&line).unwrap();
        assert_eq!(back, outcome);
    }
}
