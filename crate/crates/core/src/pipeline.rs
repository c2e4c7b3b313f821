//! Stage orchestration over JSONL artifacts: dataset build, answer
//! generation, confidence scoring, cross-lingual aggregation,
//! refinement, evaluation, and report assembly. Every stage reads its
//! inputs fresh from disk and writes atomically, so stages are
//! resumable and independently rerunnable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    AuditLog, BackendDescriptor, BackendError, Client, GenerationRequest, ResponseCache,
    DEFAULT_CONCURRENCY,
};
use crate::confidence::{estimate, ConfidenceError};
use crate::crosslingual::{
    cross_lingual_confidence, generate_paraphrases, prompt_perturbation_confidence,
    temperature_sampling_confidence, AggregateRecord, CrossLingualError,
};
use crate::dataset::{
    build_parallel_dataset, export_review_sheet, load_dataset, read_jsonl, save_dataset,
    write_jsonl, DatasetError, TranslationPair, DEFAULT_REVIEW_SAMPLE, DEFAULT_TOP_N,
};
use crate::judge::{evaluate_answer, JudgeError};
use crate::lang::{GroupingError, LanguageCode, LanguageGrouping};
use crate::metrics::EvalRecord;
use crate::par::parallel_map;
use crate::prompt::{PromptError, PromptLibrary, PromptPurpose};
use crate::refine::{
    run_refinement, FeedbackPolicy, RefineError, RefinementInput, RefinementOutcome,
};
use crate::report::{build_report, refinement_delta, Report};
use crate::types::{ConfidenceMethod, ConfidenceRecord, Generation, QAItem};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("no answer record for item {0}")]
    MissingAnswer(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
    #[error(transparent)]
    CrossLingual(#[from] CrossLingualError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Grouping(#[from] GroupingError),
}

fn default_methods() -> Vec<ConfidenceMethod> {
    ConfidenceMethod::MONOLINGUAL.to_vec()
}

fn default_policy() -> FeedbackPolicy {
    FeedbackPolicy::RandomSampling { seed: 0 }
}

fn default_verbal_number() -> ConfidenceMethod {
    ConfidenceMethod::VerbalNumber
}

fn default_likelihood_min() -> ConfidenceMethod {
    ConfidenceMethod::LikelihoodMin
}

fn default_top_n() -> usize {
    DEFAULT_TOP_N
}

fn default_review_sample() -> usize {
    DEFAULT_REVIEW_SAMPLE
}

fn default_concurrency() -> usize {
    DEFAULT_CONCURRENCY
}

fn default_temperature() -> f64 {
    0.8
}

fn default_sample_count() -> u32 {
    5
}

/// Everything a run needs, loadable from a JSON file. Relative paths
/// are resolved against the config file's directory at load time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// The model under study: answers questions and states confidence.
    pub backend: BackendDescriptor,
    /// Correctness judge; defaults to `backend`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<BackendDescriptor>,
    /// First translator for dataset construction; defaults to `backend`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translator_a: Option<BackendDescriptor>,
    /// Second, independent translator; defaults to `backend`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translator_b: Option<BackendDescriptor>,
    pub languages: Vec<LanguageCode>,
    #[serde(default)]
    pub groupings: Vec<LanguageGrouping>,
    #[serde(default = "default_methods")]
    pub methods: Vec<ConfidenceMethod>,
    #[serde(default = "default_policy")]
    pub policy: FeedbackPolicy,
    /// Confidence method whose scores gate refinement.
    #[serde(default = "default_verbal_number")]
    pub refine_method: ConfidenceMethod,
    /// Confidence method whose scores feed cross-lingual aggregation.
    #[serde(default = "default_verbal_number")]
    pub aggregate_method: ConfidenceMethod,
    /// When set, refined answers are re-scored with this method.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recompute_after_refine: Option<ConfidenceMethod>,
    /// Directory receiving all stage artifacts.
    pub data_dir: PathBuf,
    /// English source dataset for `build-dataset`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_log: Option<PathBuf>,
    /// Prompt template overrides directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_dir: Option<PathBuf>,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default = "default_review_sample")]
    pub review_sample: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_temperature")]
    pub answer_temperature: f64,
    /// Samples drawn by the temperature-sampling baseline.
    #[serde(default = "default_sample_count")]
    pub sampling_m: u32,
    #[serde(default = "default_temperature")]
    pub sampling_temperature: f64,
    /// Per-sample estimator behind the sampling/perturbation baselines.
    #[serde(default = "default_likelihood_min")]
    pub sampling_base: ConfidenceMethod,
    #[serde(default = "default_sample_count")]
    pub paraphrase_count: u32,
}

impl PipelineConfig {
    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|err| PipelineError::Config(format!("{}: {err}", path.display())))?;
        let mut config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|err| PipelineError::Config(format!("{}: {err}", path.display())))?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.data_dir);
        for optional in [
            &mut self.source,
            &mut self.cache_dir,
            &mut self.audit_log,
            &mut self.prompt_dir,
        ] {
            if let Some(p) = optional {
                resolve(p);
            }
        }
        for descriptor in [
            Some(&mut self.backend),
            self.judge.as_mut(),
            self.translator_a.as_mut(),
            self.translator_b.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            if let Some(script) = &mut descriptor.script {
                if script.is_relative() {
                    *script = base.join(&script);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |message: String| Err(PipelineError::Config(message));
        if self.languages.is_empty() {
            return fail("languages must be non-empty".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for &language in &self.languages {
            if !seen.insert(language) {
                return fail(format!("language {language} listed twice"));
            }
        }
        if self.methods.is_empty() {
            return fail("methods must be non-empty".into());
        }
        if self.methods.contains(&ConfidenceMethod::CrossLingual) {
            return fail("cross-lingual scores come from the aggregate stage, not `methods`".into());
        }
        for method in [self.refine_method, self.aggregate_method] {
            if !self.methods.contains(&method) {
                return fail(format!("{method} must be listed in `methods`"));
            }
        }
        if !self.sampling_base.is_monolingual() {
            return fail("sampling_base must be a monolingual method".into());
        }
        self.policy.validate().map_err(|err| PipelineError::Config(err.to_string()))?;
        for grouping in &self.groupings {
            grouping.validate()?;
            for language in &grouping.languages {
                if !self.languages.contains(language) {
                    return fail(format!(
                        "grouping {} uses {language}, which is not in `languages`",
                        grouping.name
                    ));
                }
            }
        }
        self.backend.validate()?;
        for descriptor in [&self.judge, &self.translator_a, &self.translator_b].into_iter().flatten()
        {
            descriptor.validate()?;
        }
        Ok(())
    }

    pub fn dataset_path(&self, language: LanguageCode) -> PathBuf {
        self.data_dir.join(format!("dataset_{language}.jsonl"))
    }

    pub fn translations_path(&self, language: LanguageCode) -> PathBuf {
        self.data_dir.join(format!("translations_{language}.jsonl"))
    }

    pub fn review_sheet_path(&self) -> PathBuf {
        self.data_dir.join("review_sheet.csv")
    }

    pub fn answers_path(&self, language: LanguageCode) -> PathBuf {
        self.data_dir.join(format!("answers_{language}.jsonl"))
    }

    pub fn confidence_path(&self, language: LanguageCode, method: ConfidenceMethod) -> PathBuf {
        self.data_dir.join(format!("confidence_{language}_{method}.jsonl"))
    }

    pub fn aggregate_path(&self, grouping: &str) -> PathBuf {
        self.data_dir.join(format!("aggregate_{grouping}.jsonl"))
    }

    pub fn outcomes_path(&self) -> PathBuf {
        self.data_dir.join("refine_outcomes.jsonl")
    }

    pub fn eval_path(&self, language: LanguageCode) -> PathBuf {
        self.data_dir.join(format!("eval_{language}.jsonl"))
    }

    pub fn refined_eval_path(&self, language: LanguageCode) -> PathBuf {
        self.data_dir.join(format!("eval_refined_{language}.jsonl"))
    }

    pub fn report_path(&self, extension: &str) -> PathBuf {
        self.data_dir.join(format!("report.{extension}"))
    }
}

/// One generated answer: the trimmed reply plus the full generation it
/// came from, so later stages can reuse token probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub item_id: String,
    pub language: LanguageCode,
    pub answer: String,
    pub generation: Generation,
}

/// What a stage did: how many records it was supposed to produce,
/// how many it actually produced, and where they went. A run is
/// successful only when every stage is complete.
#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub stage: &'static str,
    pub expected: usize,
    pub produced: usize,
    pub outputs: Vec<PathBuf>,
}

impl StageReport {
    pub fn complete(&self) -> bool {
        self.produced == self.expected
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    prompts: PromptLibrary,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Pipeline, PipelineError> {
        config.validate()?;
        let prompts = match &config.prompt_dir {
            Some(dir) => PromptLibrary::with_overrides(dir)?,
            None => PromptLibrary::builtin(),
        };
        Ok(Pipeline { config, prompts })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn client_for(&self, descriptor: &BackendDescriptor) -> Result<Client, PipelineError> {
        let mut client =
            Client::new(descriptor.build()?).with_concurrency(self.config.concurrency);
        if let Some(dir) = &self.config.cache_dir {
            client = client.with_cache(ResponseCache::open(dir)?);
        }
        if let Some(path) = &self.config.audit_log {
            client = client.with_audit(AuditLog::open(path)?);
        }
        Ok(client)
    }

    fn qa_client(&self) -> Result<Client, PipelineError> {
        self.client_for(&self.config.backend)
    }

    fn judge_client(&self) -> Result<Client, PipelineError> {
        self.client_for(self.config.judge.as_ref().unwrap_or(&self.config.backend))
    }

    fn languages<'a>(&'a self, selection: Option<&'a [LanguageCode]>) -> &'a [LanguageCode] {
        selection.unwrap_or(&self.config.languages)
    }

    /// Dual-translates the English source into every configured
    /// non-English language, filters by agreement, and writes the
    /// per-language datasets, retained pairs, and the review sheet.
    pub fn build_dataset(&self) -> Result<StageReport, PipelineError> {
        let source_path = self.config.source.as_ref().ok_or_else(|| {
            PipelineError::Config("build-dataset needs a `source` dataset".into())
        })?;
        let source = load_dataset(source_path)?;
        let targets: Vec<LanguageCode> = self
            .config
            .languages
            .iter()
            .copied()
            .filter(|&l| l != LanguageCode::En)
            .collect();
        let client_a =
            self.client_for(self.config.translator_a.as_ref().unwrap_or(&self.config.backend))?;
        let client_b =
            self.client_for(self.config.translator_b.as_ref().unwrap_or(&self.config.backend))?;
        let built = build_parallel_dataset(
            &client_a,
            &client_b,
            &self.prompts,
            &source,
            &targets,
            self.config.top_n,
        )?;

        let mut outputs = Vec::new();
        for (&language, items) in &built.corpus {
            let path = self.config.dataset_path(language);
            save_dataset(items, &path)?;
            outputs.push(path);
        }
        let mut all_pairs: Vec<TranslationPair> = Vec::new();
        for (&language, pairs) in &built.pairs {
            let path = self.config.translations_path(language);
            write_jsonl(&path, pairs)?;
            outputs.push(path);
            all_pairs.extend(pairs.iter().cloned());
        }
        if !targets.is_empty() {
            let sample = self.config.review_sample.min(all_pairs.len());
            let path = self.config.review_sheet_path();
            export_review_sheet(&all_pairs, sample, self.config.seed, &path)?;
            outputs.push(path);
        }
        Ok(StageReport {
            stage: "build-dataset",
            expected: built.attempted,
            produced: built.translated,
            outputs,
        })
    }

    /// Generates one answer per item and language at the configured
    /// temperature, requesting token probabilities when any configured
    /// method needs them.
    pub fn generate(
        &self,
        languages: Option<&[LanguageCode]>,
    ) -> Result<StageReport, PipelineError> {
        let client = self.qa_client()?;
        let want_probs = self.config.methods.iter().any(|m| m.is_likelihood());
        let mut report = StageReport {
            stage: "generate",
            expected: 0,
            produced: 0,
            outputs: Vec::new(),
        };
        for &language in self.languages(languages) {
            let items = load_dataset(&self.config.dataset_path(language))?;
            report.expected += items.len();
            let results = parallel_map(&items, client.concurrency(), |_, item| {
                self.answer_item(&client, item, want_probs)
            });
            let mut records = Vec::with_capacity(items.len());
            for (item, result) in items.iter().zip(results) {
                match result {
                    Ok(record) => records.push(record),
                    Err(err) => log::warn!("generate {} ({language}): {err}", item.item_id),
                }
            }
            report.produced += records.len();
            let path = self.config.answers_path(language);
            write_jsonl(&path, &records)?;
            report.outputs.push(path);
        }
        Ok(report)
    }

    fn answer_item(
        &self,
        client: &Client,
        item: &QAItem,
        want_probs: bool,
    ) -> Result<AnswerRecord, PipelineError> {
        let prompt = self.prompts.render(
            PromptPurpose::Answer,
            item.language,
            &[("question", &item.question)],
        )?;
        let mut request = GenerationRequest::user_prompt(prompt)
            .with_temperature(self.config.answer_temperature);
        if want_probs {
            request = request.want_probs(0);
        }
        let generation = client.generate(&request, 0)?;
        Ok(AnswerRecord {
            item_id: item.item_id.clone(),
            language: item.language,
            answer: generation.text.trim().to_string(),
            generation,
        })
    }

    /// Scores every item with the selected confidence methods, one
    /// output file per (language, method).
    pub fn score(
        &self,
        methods: Option<&[ConfidenceMethod]>,
        languages: Option<&[LanguageCode]>,
    ) -> Result<StageReport, PipelineError> {
        let client = self.qa_client()?;
        let methods = methods.unwrap_or(&self.config.methods);
        let mut report = StageReport {
            stage: "score",
            expected: 0,
            produced: 0,
            outputs: Vec::new(),
        };
        for &language in self.languages(languages) {
            let items = load_dataset(&self.config.dataset_path(language))?;
            let answers: Vec<AnswerRecord> = read_jsonl(&self.config.answers_path(language))?;
            let by_id: BTreeMap<&str, &AnswerRecord> =
                answers.iter().map(|a| (a.item_id.as_str(), a)).collect();
            for &method in methods {
                report.expected += items.len();
                let results = parallel_map(&items, client.concurrency(), |_, item| {
                    let answer = by_id
                        .get(item.item_id.as_str())
                        .ok_or_else(|| PipelineError::MissingAnswer(item.item_id.clone()))?;
                    self.score_item(&client, item, answer, method)
                });
                let mut records = Vec::with_capacity(items.len());
                for (item, result) in items.iter().zip(results) {
                    match result {
                        Ok(record) => records.push(record),
                        Err(err) => {
                            log::warn!("score {} ({language}, {method}): {err}", item.item_id)
                        }
                    }
                }
                report.produced += records.len();
                let path = self.config.confidence_path(language, method);
                write_jsonl(&path, &records)?;
                report.outputs.push(path);
            }
        }
        Ok(report)
    }

    fn score_item(
        &self,
        client: &Client,
        item: &QAItem,
        answer: &AnswerRecord,
        method: ConfidenceMethod,
    ) -> Result<ConfidenceRecord, PipelineError> {
        match method {
            ConfidenceMethod::TemperatureSampling => Ok(temperature_sampling_confidence(
                client,
                &self.prompts,
                item,
                self.config.sampling_m,
                self.config.sampling_temperature,
                self.config.sampling_base,
            )?),
            ConfidenceMethod::PromptPerturbation => {
                let paraphrases = generate_paraphrases(
                    client,
                    &self.prompts,
                    item,
                    self.config.paraphrase_count,
                )?;
                Ok(prompt_perturbation_confidence(
                    client,
                    &self.prompts,
                    item,
                    &paraphrases,
                    self.config.sampling_base,
                )?)
            }
            ConfidenceMethod::CrossLingual => Err(PipelineError::Config(
                "cross-lingual scores come from the aggregate stage".into(),
            )),
            monolingual => {
                Ok(estimate(monolingual, client, &self.prompts, item, &answer.generation)?)
            }
        }
    }

    /// Aggregates per-language scores of the configured method into
    /// one cross-lingual record per item and grouping.
    pub fn aggregate(&self, grouping: Option<&str>) -> Result<StageReport, PipelineError> {
        let groupings: Vec<&LanguageGrouping> = match grouping {
            Some(name) => {
                let found =
                    self.config.groupings.iter().find(|g| g.name == name).ok_or_else(|| {
                        PipelineError::Config(format!("unknown grouping {name:?}"))
                    })?;
                vec![found]
            }
            None => self.config.groupings.iter().collect(),
        };
        let method = self.config.aggregate_method;
        let mut report = StageReport {
            stage: "aggregate",
            expected: 0,
            produced: 0,
            outputs: Vec::new(),
        };
        for grouping in groupings {
            let mut per_language: BTreeMap<LanguageCode, BTreeMap<String, ConfidenceRecord>> =
                BTreeMap::new();
            let mut pivot_ids = Vec::new();
            for &language in &grouping.languages {
                let records: Vec<ConfidenceRecord> =
                    read_jsonl(&self.config.confidence_path(language, method))?;
                if language == grouping.pivot {
                    pivot_ids = records.iter().map(|r| r.item_id.clone()).collect();
                }
                per_language.insert(
                    language,
                    records.into_iter().map(|r| (r.item_id.clone(), r)).collect(),
                );
            }
            report.expected += pivot_ids.len();
            let mut aggregated = Vec::with_capacity(pivot_ids.len());
            for item_id in &pivot_ids {
                let mut records = BTreeMap::new();
                for (&language, by_id) in &per_language {
                    if let Some(record) = by_id.get(item_id) {
                        records.insert(language, record.clone());
                    }
                }
                match cross_lingual_confidence(&records, grouping) {
                    Ok(record) => aggregated.push(AggregateRecord {
                        grouping: grouping.name.clone(),
                        record,
                    }),
                    Err(err) => {
                        log::warn!("aggregate {item_id} ({}): {err}", grouping.name)
                    }
                }
            }
            report.produced += aggregated.len();
            let path = self.config.aggregate_path(&grouping.name);
            write_jsonl(&path, &aggregated)?;
            report.outputs.push(path);
        }
        Ok(report)
    }

    /// One confidence-gated refinement pass over every language, using
    /// the configured policy and the configured method's scores.
    /// Random thresholds are indexed by the item's position in the
    /// concatenated (config language order, dataset order) input list.
    pub fn refine(&self) -> Result<StageReport, PipelineError> {
        let client = self.qa_client()?;
        let mut inputs = Vec::new();
        for &language in &self.config.languages {
            let items = load_dataset(&self.config.dataset_path(language))?;
            let answers: Vec<AnswerRecord> = read_jsonl(&self.config.answers_path(language))?;
            let by_id: BTreeMap<&str, &AnswerRecord> =
                answers.iter().map(|a| (a.item_id.as_str(), a)).collect();
            let confidence: Vec<ConfidenceRecord> =
                read_jsonl(&self.config.confidence_path(language, self.config.refine_method))?;
            let conf_by_id: BTreeMap<&str, &ConfidenceRecord> =
                confidence.iter().map(|r| (r.item_id.as_str(), r)).collect();
            for item in items {
                let answer = by_id
                    .get(item.item_id.as_str())
                    .ok_or_else(|| PipelineError::MissingAnswer(item.item_id.clone()))?;
                let record = conf_by_id.get(item.item_id.as_str()).ok_or_else(|| {
                    PipelineError::Config(format!(
                        "no {} confidence for item {}",
                        self.config.refine_method, item.item_id
                    ))
                })?;
                inputs.push(RefinementInput {
                    item,
                    initial_answer: answer.answer.clone(),
                    confidence: record.score,
                });
            }
        }
        let outcomes = run_refinement(
            &client,
            &self.prompts,
            &inputs,
            &self.config.policy,
            self.config.recompute_after_refine,
        )?;
        let produced = outcomes.iter().filter(|o| o.error.is_none()).count();
        let path = self.config.outcomes_path();
        write_jsonl(&path, &outcomes)?;
        Ok(StageReport {
            stage: "refine",
            expected: inputs.len(),
            produced,
            outputs: vec![path],
        })
    }

    /// Judges every generated answer (and, when a refinement pass has
    /// run, every refined answer) and writes per-language evaluation
    /// records.
    pub fn evaluate(&self) -> Result<StageReport, PipelineError> {
        let judge = self.judge_client()?;
        let mut report = StageReport {
            stage: "evaluate",
            expected: 0,
            produced: 0,
            outputs: Vec::new(),
        };
        let outcomes: Vec<RefinementOutcome> = if self.config.outcomes_path().exists() {
            read_jsonl(&self.config.outcomes_path())?
        } else {
            Vec::new()
        };
        for &language in &self.config.languages {
            let items = load_dataset(&self.config.dataset_path(language))?;
            let answers: Vec<AnswerRecord> = read_jsonl(&self.config.answers_path(language))?;
            let by_id: BTreeMap<&str, &AnswerRecord> =
                answers.iter().map(|a| (a.item_id.as_str(), a)).collect();
            let confidence = self.optional_confidence(language)?;

            report.expected += items.len();
            let records = self.evaluate_set(&judge, &items, |item| {
                let answer = by_id
                    .get(item.item_id.as_str())
                    .ok_or_else(|| PipelineError::MissingAnswer(item.item_id.clone()))?;
                Ok((
                    answer.answer.clone(),
                    Some(answer.generation.tokens.len() as u64),
                    confidence.get(item.item_id.as_str()).copied(),
                ))
            })?;
            report.produced += records.len();
            let path = self.config.eval_path(language);
            write_jsonl(&path, &records)?;
            report.outputs.push(path);

            if !outcomes.is_empty() {
                let final_answers: BTreeMap<&str, &RefinementOutcome> = outcomes
                    .iter()
                    .filter(|o| o.language == language)
                    .map(|o| (o.item_id.as_str(), o))
                    .collect();
                report.expected += items.len();
                let records = self.evaluate_set(&judge, &items, |item| {
                    let outcome =
                        final_answers.get(item.item_id.as_str()).ok_or_else(|| {
                            PipelineError::MissingAnswer(item.item_id.clone())
                        })?;
                    let confidence =
                        outcome.final_conf.or(Some(outcome.initial_conf)).map(|s| s.get());
                    Ok((outcome.final_answer.clone(), None, confidence))
                })?;
                report.produced += records.len();
                let path = self.config.refined_eval_path(language);
                write_jsonl(&path, &records)?;
                report.outputs.push(path);
            }
        }
        Ok(report)
    }

    fn optional_confidence(
        &self,
        language: LanguageCode,
    ) -> Result<BTreeMap<String, f64>, PipelineError> {
        let path = self.config.confidence_path(language, self.config.refine_method);
        if !path.exists() {
            return Ok(BTreeMap::new());
        }
        let records: Vec<ConfidenceRecord> = read_jsonl(&path)?;
        Ok(records.into_iter().map(|r| (r.item_id, r.score.get())).collect())
    }

    fn evaluate_set(
        &self,
        judge: &Client,
        items: &[QAItem],
        lookup: impl Fn(&QAItem) -> Result<(String, Option<u64>, Option<f64>), PipelineError> + Sync,
    ) -> Result<Vec<EvalRecord>, PipelineError> {
        let results = parallel_map(items, judge.concurrency(), |_, item| {
            let (prediction, gen_tokens, confidence) = lookup(item)?;
            let confidence = confidence.map(crate::types::Score::clamped);
            Ok::<EvalRecord, PipelineError>(evaluate_answer(
                judge,
                &self.prompts,
                item,
                &prediction,
                confidence,
                gen_tokens,
            )?)
        });
        let mut records = Vec::with_capacity(items.len());
        for (item, result) in items.iter().zip(results) {
            match result {
                Ok(record) => records.push(record),
                Err(err) => log::warn!("evaluate {}: {err}", item.item_id),
            }
        }
        Ok(records)
    }

    /// Assembles the report from whatever artifacts exist and writes
    /// it as JSON, aligned text, and CSV.
    pub fn assemble_report(&self) -> Result<(Report, StageReport), PipelineError> {
        let mut eval = Vec::new();
        let mut refined_eval = Vec::new();
        let mut confidence = Vec::new();
        for &language in &self.config.languages {
            let path = self.config.eval_path(language);
            if path.exists() {
                eval.extend(read_jsonl::<EvalRecord>(&path)?);
            }
            let refined = self.config.refined_eval_path(language);
            if refined.exists() {
                refined_eval.extend(read_jsonl::<EvalRecord>(&refined)?);
            }
            for &method in &self.config.methods {
                let path = self.config.confidence_path(language, method);
                if path.exists() {
                    confidence.extend(read_jsonl::<ConfidenceRecord>(&path)?);
                }
            }
        }
        let mut aggregates = Vec::new();
        for grouping in &self.config.groupings {
            let path = self.config.aggregate_path(&grouping.name);
            if path.exists() {
                aggregates.extend(read_jsonl::<AggregateRecord>(&path)?);
            }
        }
        let refinement = if refined_eval.is_empty() {
            None
        } else {
            let outcomes: Vec<RefinementOutcome> = read_jsonl(&self.config.outcomes_path())?;
            Some(refinement_delta(&eval, &refined_eval, &outcomes))
        };

        let report = build_report(&eval, &confidence, &aggregates, refinement);
        let json_path = self.config.report_path("json");
        let text_path = self.config.report_path("txt");
        let csv_path = self.config.report_path("csv");
        crate::dataset::atomic_write(&json_path, report.to_json().as_bytes())?;
        crate::dataset::atomic_write(&text_path, report.to_text().as_bytes())?;
        crate::dataset::atomic_write(&csv_path, report.to_csv().as_bytes())?;
        let stage = StageReport {
            stage: "report",
            expected: 1,
            produced: 1,
            outputs: vec![json_path, text_path, csv_path],
        };
        Ok((report, stage))
    }

    /// Runs every stage in order. Dataset construction is skipped when
    /// no source is configured and the per-language datasets already
    /// exist.
    pub fn run_all(&self) -> Result<(Report, Vec<StageReport>), PipelineError> {
        let mut stages = Vec::new();
        if self.config.source.is_some() {
            stages.push(self.build_dataset()?);
        } else {
            for &language in &self.config.languages {
                let path = self.config.dataset_path(language);
                if !path.exists() {
                    return Err(PipelineError::Config(format!(
                        "no `source` configured and {} is missing",
                        path.display()
                    )));
                }
            }
        }
        stages.push(self.generate(None)?);
        stages.push(self.score(None, None)?);
        if !self.config.groupings.is_empty() {
            stages.push(self.aggregate(None)?);
        }
        stages.push(self.refine()?);
        stages.push(self.evaluate()?);
        let (report, stage) = self.assemble_report()?;
        stages.push(stage);
        Ok((report, stages))
    }
}
