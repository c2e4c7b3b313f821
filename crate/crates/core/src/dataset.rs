//! Dataset construction: dual translation of an English QA source,
//! agreement filtering on translator overlap, cross-language
//! intersection into a parallel corpus, and the JSONL / CSV artifacts
//! the pipeline reads and writes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Client, GenerationRequest};
use crate::lang::LanguageCode;
use crate::metrics::unigram_f1;
use crate::par::parallel_map;
use crate::prompt::{PromptError, PromptLibrary, PromptPurpose};
use crate::types::QAItem;

/// Retention cutoff for agreement filtering when none is configured.
pub const DEFAULT_TOP_N: usize = 2000;
/// Review-sheet sample size when none is configured.
pub const DEFAULT_REVIEW_SAMPLE: usize = 50;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("source item must be English, got {0}")]
    SourceNotEnglish(LanguageCode),
    #[error("target language must differ from the source")]
    TargetIsSource,
    #[error("translator {translator} returned an empty {field}")]
    EmptyTranslation { translator: char, field: &'static str },
    #[error("sample size {requested} exceeds retained count {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// One translator's rendering of a question and its answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Translation {
    pub question: String,
    pub answer: String,
}

/// Two independent translations of one source item into the same
/// target language, with their token-overlap agreement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationPair {
    pub item_id: String,
    pub source: QAItem,
    pub target_language: LanguageCode,
    pub translation_a: Translation,
    pub translation_b: Translation,
    pub agreement: f64,
}

impl TranslationPair {
    /// The target-language QA item this pair contributes to the
    /// corpus. Translator A is canonical; B exists to measure
    /// agreement.
    pub fn target_item(&self) -> QAItem {
        QAItem {
            item_id: self.item_id.clone(),
            language: self.target_language,
            question: self.translation_a.question.clone(),
            gold_answers: vec![self.translation_a.answer.clone()],
        }
    }
}

fn translate_text(
    client: &Client,
    prompts: &PromptLibrary,
    target: LanguageCode,
    text: &str,
) -> Result<String, DatasetError> {
    let prompt = prompts.render(PromptPurpose::Translate, target, &[("text", text)])?;
    let request = GenerationRequest::user_prompt(prompt)
        .with_temperature(0.0)
        .with_max_tokens(256);
    let generation = client.generate(&request, 0)?;
    Ok(generation.text.trim().to_string())
}

fn translate_fields(
    client: &Client,
    prompts: &PromptLibrary,
    item: &QAItem,
    target: LanguageCode,
    translator: char,
) -> Result<Translation, DatasetError> {
    let question = translate_text(client, prompts, target, &item.question)?;
    if question.is_empty() {
        return Err(DatasetError::EmptyTranslation { translator, field: "question" });
    }
    let answer = translate_text(client, prompts, target, item.primary_answer())?;
    if answer.is_empty() {
        return Err(DatasetError::EmptyTranslation { translator, field: "answer" });
    }
    Ok(Translation { question, answer })
}

/// Translates one English item with two independent backends and
/// scores their agreement: the mean of question-F1 and answer-F1
/// between the two translations, tokenized for the target language.
pub fn translate_item(
    client_a: &Client,
    client_b: &Client,
    prompts: &PromptLibrary,
    item: &QAItem,
    target: LanguageCode,
) -> Result<TranslationPair, DatasetError> {
    if item.language != LanguageCode::En {
        return Err(DatasetError::SourceNotEnglish(item.language));
    }
    if target == LanguageCode::En {
        return Err(DatasetError::TargetIsSource);
    }
    let translation_a = translate_fields(client_a, prompts, item, target, 'a')?;
    let translation_b = translate_fields(client_b, prompts, item, target, 'b')?;
    let question_f1 = unigram_f1(
        &translation_a.question,
        std::slice::from_ref(&translation_b.question),
        target,
    );
    let answer_f1 = unigram_f1(
        &translation_a.answer,
        std::slice::from_ref(&translation_b.answer),
        target,
    );
    Ok(TranslationPair {
        item_id: item.item_id.clone(),
        source: item.clone(),
        target_language: target,
        translation_a,
        translation_b,
        agreement: (question_f1 + answer_f1) / 2.0,
    })
}

/// Keeps the `top_n` highest-agreement pairs, ties broken by item_id
/// ascending so runs are deterministic.
pub fn similarity_filter(mut pairs: Vec<TranslationPair>, top_n: usize) -> Vec<TranslationPair> {
    pairs.sort_by(|a, b| {
        b.agreement
            .total_cmp(&a.agreement)
            .then_with(|| a.item_id.cmp(&b.item_id))
    });
    pairs.truncate(top_n);
    pairs
}

/// Restricts each language's retained pairs to the item ids retained
/// in every language, so the corpus stays parallel. List order within
/// each language is preserved.
pub fn intersect_languages(
    per_language: BTreeMap<LanguageCode, Vec<TranslationPair>>,
) -> BTreeMap<LanguageCode, Vec<TranslationPair>> {
    let mut shared: Option<BTreeSet<&str>> = None;
    for pairs in per_language.values() {
        let ids: BTreeSet<&str> = pairs.iter().map(|p| p.item_id.as_str()).collect();
        shared = Some(match shared {
            None => ids,
            Some(previous) => previous.intersection(&ids).copied().collect(),
        });
    }
    let shared: BTreeSet<String> =
        shared.unwrap_or_default().into_iter().map(str::to_string).collect();
    per_language
        .into_iter()
        .map(|(language, pairs)| {
            let kept =
                pairs.into_iter().filter(|p| shared.contains(&p.item_id)).collect();
            (language, kept)
        })
        .collect()
}

/// Output of a full dataset construction pass.
#[derive(Debug, Clone)]
pub struct ParallelDataset {
    /// Per-language item lists aligned to source order, English
    /// included.
    pub corpus: BTreeMap<LanguageCode, Vec<QAItem>>,
    /// Retained translation pairs per target language, post
    /// intersection.
    pub pairs: BTreeMap<LanguageCode, Vec<TranslationPair>>,
    /// Translation attempts (source items times target languages).
    pub attempted: usize,
    /// Attempts that produced a translation pair, before filtering.
    pub translated: usize,
}

/// Full construction pass: dual-translate every source item into every
/// target language, keep the `top_n` best-agreeing pairs per language,
/// intersect ids across languages, and emit per-language item lists
/// (including the restricted English source) aligned to source order.
pub fn build_parallel_dataset(
    client_a: &Client,
    client_b: &Client,
    prompts: &PromptLibrary,
    source: &[QAItem],
    targets: &[LanguageCode],
    top_n: usize,
) -> Result<ParallelDataset, DatasetError> {
    let mut per_language = BTreeMap::new();
    let mut translated = 0usize;
    for &target in targets {
        let results = parallel_map(source, client_a.concurrency(), |_, item| {
            translate_item(client_a, client_b, prompts, item, target)
        });
        let mut pairs = Vec::with_capacity(source.len());
        for (item, result) in source.iter().zip(results) {
            match result {
                Ok(pair) => pairs.push(pair),
                Err(err) => {
                    log::warn!("skipping {} for {target}: {err}", item.item_id);
                }
            }
        }
        translated += pairs.len();
        per_language.insert(target, similarity_filter(pairs, top_n));
    }
    let per_language = intersect_languages(per_language);

    let shared: BTreeSet<&str> = match per_language.values().next() {
        Some(pairs) => pairs.iter().map(|p| p.item_id.as_str()).collect(),
        None => source.iter().map(|item| item.item_id.as_str()).collect(),
    };
    let source_order: Vec<&str> = source
        .iter()
        .map(|item| item.item_id.as_str())
        .filter(|id| shared.contains(id))
        .collect();

    let mut corpus = BTreeMap::new();
    corpus.insert(
        LanguageCode::En,
        source.iter().filter(|item| shared.contains(item.item_id.as_str())).cloned().collect(),
    );
    for (language, pairs) in &per_language {
        let by_id: BTreeMap<&str, &TranslationPair> =
            pairs.iter().map(|p| (p.item_id.as_str(), p)).collect();
        let items = source_order.iter().map(|id| by_id[id].target_item()).collect();
        corpus.insert(*language, items);
    }
    Ok(ParallelDataset {
        corpus,
        pairs: per_language,
        attempted: source.len() * targets.len(),
        translated,
    })
}

/// Writes a seeded uniform sample of pairs as a CSV sheet for human
/// review: source text, both translations, and a blank verdict column.
pub fn export_review_sheet(
    pairs: &[TranslationPair],
    sample_size: usize,
    seed: u64,
    path: &Path,
) -> Result<(), DatasetError> {
    if sample_size > pairs.len() {
        return Err(DatasetError::SampleTooLarge {
            requested: sample_size,
            available: pairs.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, pairs.len(), sample_size);

    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "item_id",
        "target_language",
        "source_question",
        "source_answer",
        "question_a",
        "answer_a",
        "question_b",
        "answer_b",
        "agreement",
        "verdict",
    ])?;
    for index in picks {
        let pair = &pairs[index];
        writer.write_record([
            pair.item_id.as_str(),
            pair.target_language.as_str(),
            pair.source.question.as_str(),
            pair.source.primary_answer(),
            pair.translation_a.question.as_str(),
            pair.translation_a.answer.as_str(),
            pair.translation_b.question.as_str(),
            pair.translation_b.answer.as_str(),
            &format!("{:.4}", pair.agreement),
            "",
        ])?;
    }
    let bytes = writer.into_inner().expect("csv buffer");
    atomic_write(path, &bytes)?;
    Ok(())
}

/// Writes bytes under a temporary name in the target directory and
/// renames into place, so readers never observe a partial file.
fn open_with_context(path: &Path) -> Result<fs::File, std::io::Error> {
    fs::File::open(path)
        .map_err(|err| std::io::Error::new(err.kind(), format!("{}: {err}", path.display())))
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), std::io::Error> {
    let dir = match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => {
            fs::create_dir_all(parent)?;
            parent
        }
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".to_string());
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serializes records one JSON object per line and writes atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), DatasetError> {
    let mut bytes = Vec::new();
    for record in records {
        serde_json::to_writer(&mut bytes, record)
            .map_err(|err| std::io::Error::new(std::io::ErrorKind::InvalidData, err))?;
        bytes.push(b'\n');
    }
    atomic_write(path, &bytes)?;
    Ok(())
}

/// Reads one JSON object per line, reporting the 1-based line number
/// of the first malformed line. Blank lines are permitted.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let reader = BufReader::new(open_with_context(path)?);
    let mut records = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|err| DatasetError::MalformedLine {
            line: index + 1,
            reason: err.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Loads a QA dataset, validating every item and failing on the first
/// malformed or invariant-breaking line.
pub fn load_dataset(path: &Path) -> Result<Vec<QAItem>, DatasetError> {
    let reader = BufReader::new(open_with_context(path)?);
    let mut items = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| DatasetError::MalformedLine { line: index + 1, reason };
        let item: QAItem =
            serde_json::from_str(&line).map_err(|err| malformed(err.to_string()))?;
        item.validate().map_err(|err| malformed(err.to_string()))?;
        items.push(item);
    }
    Ok(items)
}

/// Saves a QA dataset as JSONL, one item per line.
pub fn save_dataset(items: &[QAItem], path: &Path) -> Result<(), DatasetError> {
    write_jsonl(path, items)
}
