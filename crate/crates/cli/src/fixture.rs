//! Bundled demo fixture: 50 synthetic capital-city questions in three
//! languages plus a mock script that drives every pipeline stage
//! offline. Seven of every ten items are answered correctly; of the
//! three wrong answers, one carries low confidence and gets fixed by
//! refinement, one is confidently wrong, and one is refined without
//! improving.
//!
//! Every rule is keyed on a purpose's instruction prefix plus an
//! item-unique question fragment, so a single script file serves the
//! answering model and both translators.

use std::error::Error;
use std::path::Path;

use polyconf::backend::{BackendDescriptor, MockResponse, MockRule, MockScript};
use polyconf::confidence::VerbalWordScale;
use polyconf::dataset::save_dataset;
use polyconf::lang::{GroupingMode, LanguageCode, LanguageGrouping};
use polyconf::pipeline::PipelineConfig;
use polyconf::prompt::{PromptLibrary, PromptPurpose};
use polyconf::refine::FeedbackPolicy;
use polyconf::types::{ConfidenceMethod, QAItem};

use LanguageCode::{De, En, Fr};

pub const FIXTURE_ITEMS: usize = 50;
pub const FIXTURE_LANGUAGES: [LanguageCode; 3] = [En, Fr, De];

struct Item {
    i: usize,
}

impl Item {
    fn id(&self) -> String {
        format!("q{:02}", self.i)
    }

    fn correct(&self) -> bool {
        self.i % 10 < 7
    }

    /// Deterministic spread so confidence values are not constant
    /// within a class.
    fn jitter(&self) -> f64 {
        (7 * (self.i % 5)) as f64 / 100.0
    }

    /// Region label, zero-padded so no label is a prefix of another
    /// and contains-keyed rules never shadow each other.
    fn label(&self) -> String {
        format!("R{:02}", self.i)
    }

    fn question(&self, language: LanguageCode) -> String {
        let label = self.label();
        match language {
            En => format!("What is the capital of region {label}?"),
            Fr => format!("Quelle est la capitale de la région {label} ?"),
            De => format!("Was ist die Hauptstadt der Region {label}?"),
            _ => unreachable!("fixture covers en/fr/de"),
        }
    }

    /// The second translator phrases a few questions differently, so
    /// agreement drops below 1.0 for them and the review sheet shows
    /// real divergence.
    fn question_b(&self, language: LanguageCode) -> String {
        let label = self.label();
        if self.i % 7 != 3 {
            return self.question(language);
        }
        match language {
            Fr => format!("Quelle est donc la capitale de la région {label} ?"),
            De => format!("Was ist denn die Hauptstadt der Region {label}?"),
            other => self.question(other),
        }
    }

    fn gold(&self, language: LanguageCode) -> String {
        let label = self.label();
        match language {
            En => format!("city {label}"),
            Fr => format!("ville {label}"),
            De => format!("Stadt {label}"),
            _ => unreachable!("fixture covers en/fr/de"),
        }
    }

    fn wrong(&self, language: LanguageCode) -> String {
        let label = self.label();
        match language {
            En => format!("wrong W{label}"),
            Fr => format!("faux W{label}"),
            De => format!("falsch W{label}"),
            _ => unreachable!("fixture covers en/fr/de"),
        }
    }

    fn answer(&self, language: LanguageCode) -> String {
        if self.correct() {
            self.gold(language)
        } else {
            self.wrong(language)
        }
    }

    /// Question fragment unique to this item within one language.
    fn token(&self, language: LanguageCode) -> String {
        match language {
            Fr => format!("{} ?", self.label()),
            _ => format!("{}?", self.label()),
        }
    }

    /// Token probabilities for the answer generation. Correct answers
    /// score high, wrong ones low, except the confidently-wrong class.
    fn answer_probs(&self) -> Vec<f64> {
        let j = self.jitter();
        if self.correct() {
            vec![0.92 - j, 0.68 + j / 2.0]
        } else {
            match self.i % 10 {
                7 => vec![0.48, 0.36],
                8 => vec![0.85, 0.72],
                _ => vec![0.52, 0.40],
            }
        }
    }

    fn verbal_number(&self, language: LanguageCode) -> String {
        let value = if self.correct() {
            let offset = match language {
                Fr => -0.02,
                De => 0.01,
                _ => 0.0,
            };
            0.58 + self.jitter() + offset
        } else {
            match self.i % 10 {
                7 => 0.46,
                8 => match language {
                    Fr => 0.59,
                    De => 0.66,
                    _ => 0.61,
                },
                _ => 0.48,
            }
        };
        format!("{value:.2}")
    }

    fn verbal_word(&self, language: LanguageCode) -> String {
        let scale = VerbalWordScale::builtin(language);
        let index = if self.correct() {
            if self.i % 2 == 0 {
                4
            } else {
                3
            }
        } else {
            match self.i % 10 {
                7 => 1,
                8 => 3,
                _ => 0,
            }
        };
        let word = scale.words().nth(index).expect("five-word scale").0.to_string();
        word
    }

    /// Reply and token probability for the true/false self-check.
    fn true_probability(&self) -> (&'static str, f64) {
        if self.correct() {
            ("A", 0.70 + self.jitter())
        } else {
            match self.i % 10 {
                7 => ("A", 0.45),
                8 => ("A", 0.80),
                _ => ("B", 0.55),
            }
        }
    }

    /// Second-pass reply: everything except the stubborn class comes
    /// back as the gold answer.
    fn refined(&self, language: LanguageCode) -> String {
        if self.i % 10 == 9 {
            self.wrong(language)
        } else {
            self.gold(language)
        }
    }
}

fn items() -> impl Iterator<Item = Item> {
    (0..FIXTURE_ITEMS).map(|i| Item { i })
}

pub fn fixture_script() -> MockScript {
    let prompts = PromptLibrary::builtin();
    let prefix = |purpose, language| prompts.instruction_prefix(purpose, language);
    let mut rules = Vec::new();

    // Translator B's divergent questions must precede the shared
    // translation rules; rules are first-match-wins.
    for item in items().filter(|item| item.i % 7 == 3) {
        for target in [Fr, De] {
            let mut rule = MockRule::contains(
                &[
                    &prefix(PromptPurpose::Translate, target),
                    &format!("Text: {}", item.question(En)),
                ],
                MockResponse::text(item.question_b(target)),
            );
            rule.model = Some("translator-b".into());
            rules.push(rule);
        }
    }
    for item in items() {
        for target in [Fr, De] {
            let translate = prefix(PromptPurpose::Translate, target);
            rules.push(MockRule::contains(
                &[&translate, &format!("Text: {}", item.question(En))],
                MockResponse::text(item.question(target)),
            ));
            rules.push(MockRule::contains(
                &[&translate, &format!("Text: {}", item.gold(En))],
                MockResponse::text(item.gold(target)),
            ));
        }
    }

    for item in items() {
        for language in FIXTURE_LANGUAGES {
            let token = item.token(language);
            rules.push(MockRule::contains(
                &[&prefix(PromptPurpose::Answer, language), &token],
                MockResponse::with_probs(item.answer(language), item.answer_probs()),
            ));
            rules.push(MockRule::contains(
                &[&prefix(PromptPurpose::VerbalNumber, language), &token],
                MockResponse::text(item.verbal_number(language)),
            ));
            rules.push(MockRule::contains(
                &[&prefix(PromptPurpose::VerbalWord, language), &token],
                MockResponse::text(item.verbal_word(language)),
            ));
            let (reply, prob) = item.true_probability();
            rules.push(MockRule::contains(
                &[&prefix(PromptPurpose::TrueProbability, language), &token],
                MockResponse::with_probs(reply, vec![prob]),
            ));
            rules.push(MockRule::contains(
                &[&prefix(PromptPurpose::Refine, language), &token],
                MockResponse::text(item.refined(language)),
            ));
        }
    }

    // Wrong answers contradict the reference; anything else entails.
    // The per-language catch-all must come after the wrong-answer
    // rules.
    for language in FIXTURE_LANGUAGES {
        let judge = prefix(PromptPurpose::NliJudge, language);
        let marker = match language {
            En => "wrong W",
            Fr => "faux W",
            De => "falsch W",
            _ => unreachable!("fixture covers en/fr/de"),
        };
        rules.push(MockRule::contains(&[&judge, marker], MockResponse::text("Contradiction")));
        rules.push(MockRule::contains(&[&judge], MockResponse::text("Entailment")));
    }

    MockScript::new(rules)
}

pub fn fixture_source() -> Vec<QAItem> {
    items()
        .map(|item| {
            QAItem::new(item.id(), En, item.question(En), vec![item.gold(En)])
                .expect("fixture items are valid")
        })
        .collect()
}

/// Config with paths relative to the fixture directory; `data_dir`
/// defaults to `data/` next to the config file.
pub fn fixture_config() -> PipelineConfig {
    PipelineConfig {
        backend: BackendDescriptor::mock("fixture-qa", "mock_script.json"),
        judge: None,
        translator_a: None,
        translator_b: Some(BackendDescriptor::mock("translator-b", "mock_script.json")),
        languages: FIXTURE_LANGUAGES.to_vec(),
        groupings: vec![LanguageGrouping::new(
            "shared3",
            GroupingMode::Shared,
            FIXTURE_LANGUAGES.to_vec(),
            En,
        )],
        methods: ConfidenceMethod::MONOLINGUAL.to_vec(),
        policy: FeedbackPolicy::fixed(0.5).expect("0.5 is a valid threshold"),
        refine_method: ConfidenceMethod::VerbalNumber,
        aggregate_method: ConfidenceMethod::VerbalNumber,
        recompute_after_refine: None,
        data_dir: "data".into(),
        source: Some("source_en.jsonl".into()),
        cache_dir: None,
        audit_log: None,
        prompt_dir: None,
        top_n: FIXTURE_ITEMS,
        review_sample: FIXTURE_ITEMS,
        seed: 13,
        concurrency: 8,
        answer_temperature: 0.8,
        sampling_m: 5,
        sampling_temperature: 0.8,
        sampling_base: ConfidenceMethod::LikelihoodMin,
        paraphrase_count: 5,
    }
}

/// Writes `source_en.jsonl`, `mock_script.json`, and `config.json`
/// into `dir`.
pub fn write_fixture(dir: &Path) -> Result<(), Box<dyn Error>> {
    std::fs::create_dir_all(dir)?;
    save_dataset(&fixture_source(), &dir.join("source_en.jsonl"))?;
    let script = serde_json::to_string_pretty(&fixture_script())? + "\n";
    std::fs::write(dir.join("mock_script.json"), script)?;
    let config = serde_json::to_string_pretty(&fixture_config())? + "\n";
    std::fs::write(dir.join("config.json"), config)?;
    Ok(())
}
