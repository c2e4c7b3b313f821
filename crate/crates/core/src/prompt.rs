//! Localized prompt templates keyed by (purpose, language).
//!
//! Defaults ship compiled into the binary from `templates/`; a template
//! directory with the same `<purpose>/<lang>.txt` layout can override
//! any subset of them. Placeholders use `{name}` syntax and rendering
//! fails if any placeholder is left unfilled.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::LanguageCode;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("unknown prompt purpose: {0:?}")]
    UnknownPurpose(String),
    #[error("placeholder {{{0}}} left unfilled")]
    UnfilledPlaceholder(String),
    #[error("failed to read template override {path}: {reason}")]
    OverrideRead { path: String, reason: String },
}

/// What a prompt is for; doubles as the template directory name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptPurpose {
    Answer,
    TrueProbability,
    VerbalNumber,
    VerbalWord,
    Refine,
    NliJudge,
    Translate,
    Paraphrase,
}

impl PromptPurpose {
    pub const ALL: [PromptPurpose; 8] = [
        PromptPurpose::Answer,
        PromptPurpose::TrueProbability,
        PromptPurpose::VerbalNumber,
        PromptPurpose::VerbalWord,
        PromptPurpose::Refine,
        PromptPurpose::NliJudge,
        PromptPurpose::Translate,
        PromptPurpose::Paraphrase,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptPurpose::Answer => "answer",
            PromptPurpose::TrueProbability => "true-probability",
            PromptPurpose::VerbalNumber => "verbal-number",
            PromptPurpose::VerbalWord => "verbal-word",
            PromptPurpose::Refine => "refine",
            PromptPurpose::NliJudge => "nli-judge",
            PromptPurpose::Translate => "translate",
            PromptPurpose::Paraphrase => "paraphrase",
        }
    }
}

impl fmt::Display for PromptPurpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptPurpose {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptPurpose::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| PromptError::UnknownPurpose(s.to_string()))
    }
}

fn builtin(purpose: PromptPurpose, language: LanguageCode) -> &'static str {
    macro_rules! by_language {
        ($dir:literal) => {
            match language {
                LanguageCode::En => include_str!(concat!("../templates/", $dir, "/en.txt")),
                LanguageCode::Fr => include_str!(concat!("../templates/", $dir, "/fr.txt")),
                LanguageCode::De => include_str!(concat!("../templates/", $dir, "/de.txt")),
                LanguageCode::It => include_str!(concat!("../templates/", $dir, "/it.txt")),
                LanguageCode::Id => include_str!(concat!("../templates/", $dir, "/id.txt")),
                LanguageCode::Zh => include_str!(concat!("../templates/", $dir, "/zh.txt")),
                LanguageCode::Ja => include_str!(concat!("../templates/", $dir, "/ja.txt")),
                LanguageCode::Ar => include_str!(concat!("../templates/", $dir, "/ar.txt")),
                LanguageCode::Ko => include_str!(concat!("../templates/", $dir, "/ko.txt")),
                LanguageCode::Th => include_str!(concat!("../templates/", $dir, "/th.txt")),
            }
        };
    }
    match purpose {
        PromptPurpose::Answer => by_language!("answer"),
        PromptPurpose::TrueProbability => by_language!("true-probability"),
        PromptPurpose::VerbalNumber => by_language!("verbal-number"),
        PromptPurpose::VerbalWord => by_language!("verbal-word"),
        PromptPurpose::Refine => by_language!("refine"),
        PromptPurpose::NliJudge => by_language!("nli-judge"),
        PromptPurpose::Translate => by_language!("translate"),
        PromptPurpose::Paraphrase => by_language!("paraphrase"),
    }
}

/// Templates for all (purpose, language) pairs: compiled-in defaults
/// plus optional per-file overrides from a template directory.
#[derive(Debug, Clone, Default)]
pub struct PromptLibrary {
    overrides: HashMap<(PromptPurpose, LanguageCode), String>,
}

impl PromptLibrary {
    /// The compiled-in default templates.
    pub fn builtin() -> PromptLibrary {
        PromptLibrary::default()
    }

    /// Builtin templates with overrides loaded from
    /// `<dir>/<purpose>/<lang>.txt` for whichever files exist.
    pub fn with_overrides(dir: &Path) -> Result<PromptLibrary, PromptError> {
        let mut library = PromptLibrary::builtin();
        for purpose in PromptPurpose::ALL {
            for &language in LanguageCode::ALL.iter() {
                let path = dir.join(purpose.as_str()).join(format!("{language}.txt"));
                if path.is_file() {
                    let text =
                        std::fs::read_to_string(&path).map_err(|e| PromptError::OverrideRead {
                            path: path.display().to_string(),
                            reason: e.to_string(),
                        })?;
                    library
                        .overrides
                        .insert((purpose, language), text.trim_end().to_string());
                }
            }
        }
        Ok(library)
    }

    /// The raw template text.
    pub fn template(&self, purpose: PromptPurpose, language: LanguageCode) -> &str {
        self.overrides
            .get(&(purpose, language))
            .map(String::as_str)
            .unwrap_or_else(|| builtin(purpose, language).trim_end())
    }

    /// The template's first line up to its first placeholder: a stable
    /// substring for matching requests in mock scripts and audit logs.
    pub fn instruction_prefix(&self, purpose: PromptPurpose, language: LanguageCode) -> String {
        let first_line = self.template(purpose, language).lines().next().unwrap_or("");
        match first_line.find('{') {
            Some(pos) => first_line[..pos].trim_end().to_string(),
            None => first_line.to_string(),
        }
    }

    /// Fills `{name}` placeholders and rejects templates with any
    /// placeholder left over.
    pub fn render(
        &self,
        purpose: PromptPurpose,
        language: LanguageCode,
        vars: &[(&str, &str)],
    ) -> Result<String, PromptError> {
        let mut text = self.template(purpose, language).to_string();
        for (name, value) in vars {
            text = text.replace(&format!("{{{name}}}"), value);
        }
        if let Some(captures) = placeholder_pattern().captures(&text) {
            return Err(PromptError::UnfilledPlaceholder(captures[1].to_string()));
        }
        Ok(text)
    }
}

fn placeholder_pattern() -> &'static regex::Regex {
    use std::sync::OnceLock;
    static PATTERN: OnceLock<regex::Regex> = OnceLock::new();
    PATTERN.get_or_init(|| regex::Regex::new(r"\{([a-z_]+)\}").unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use LanguageCode::*;

    #[test]
    fn every_pair_has_a_nonempty_template() {
        let library = PromptLibrary::builtin();
        for purpose in PromptPurpose::ALL {
            for &language in LanguageCode::ALL.iter() {
                let text = library.template(purpose, language);
                assert!(!text.trim().is_empty(), "{purpose}/{language}");
                assert!(
                    !library.instruction_prefix(purpose, language).is_empty(),
                    "{purpose}/{language}"
                );
            }
        }
    }

    #[test]
    fn templates_declare_expected_placeholders() {
        let library = PromptLibrary::builtin();
        for &language in LanguageCode::ALL.iter() {
            assert!(library.template(PromptPurpose::Answer, language).contains("{question}"));
            let tp = library.template(PromptPurpose::TrueProbability, language);
            assert!(tp.contains("{question}") && tp.contains("{answer}"));
            assert!(tp.contains("(A)") && tp.contains("(B)"));
            let refine = library.template(PromptPurpose::Refine, language);
            assert!(refine.contains("{confidence}"));
            let judge = library.template(PromptPurpose::NliJudge, language);
            assert!(judge.contains("{gold}") && judge.contains("{prediction}"));
            assert!(judge.contains("Entailment"));
            assert!(library.template(PromptPurpose::Translate, language).contains("{text}"));
            assert!(library.template(PromptPurpose::VerbalWord, language).contains("{words}"));
        }
    }

    #[test]
    fn render_fills_placeholders() {
        let library = PromptLibrary::builtin();
        let text = library
            .render(
                PromptPurpose::Answer,
                En,
                &[("question", "What is the capital of France?")],
            )
            .unwrap();
        assert!(text.contains("Q: What is the capital of France?"));
        assert!(!text.contains('{'));
    }

    #[test]
    fn render_rejects_missing_placeholder() {
        let library = PromptLibrary::builtin();
        let err = library
            .render(PromptPurpose::TrueProbability, En, &[("question", "q")])
            .unwrap_err();
        assert_eq!(err, PromptError::UnfilledPlaceholder("answer".into()));
    }

    #[test]
    fn instruction_prefix_stops_before_placeholders() {
        let library = PromptLibrary::builtin();
        let prefix = library.instruction_prefix(PromptPurpose::VerbalWord, En);
        assert!(prefix.starts_with("Choose the single word"));
        assert!(!prefix.contains('{'));
    }

    #[test]
    fn overrides_shadow_builtins() {
        let dir = tempfile::tempdir().unwrap();
        let answer_dir = dir.path().join("answer");
        std::fs::create_dir_all(&answer_dir).unwrap();
        std::fs::write(answer_dir.join("en.txt"), "Custom: {question}\n").unwrap();

        let library = PromptLibrary::with_overrides(dir.path()).unwrap();
        assert_eq!(library.template(PromptPurpose::Answer, En), "Custom: {question}");
        // Untouched pairs still come from the builtins.
        assert!(library
            .template(PromptPurpose::Answer, Fr)
            .starts_with("Réponds"));
    }

    #[test]
    fn purpose_round_trip() {
        for purpose in PromptPurpose::ALL {
            assert_eq!(purpose.as_str().parse::<PromptPurpose>().unwrap(), purpose);
        }
        assert!("mystery".parse::<PromptPurpose>().is_err());
    }
}
