//! Language codes, family affiliations, and language groupings.
//!
//! Ten languages are supported. Each maps to exactly one genealogical
//! family, and groupings of languages are tagged by how their families
//! relate to the grouping's pivot language (shared / distinct / mixed).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// ISO 639-1 code of a supported language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LanguageCode {
    En,
    It,
    Id,
    Fr,
    De,
    Zh,
    Ja,
    Ar,
    Ko,
    Th,
}

/// Genealogical family of a language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LanguageFamily {
    IndoEuropean,
    SinoTibetan,
    JapaneseRyukyuan,
    AfroAsiatic,
    Koreanic,
    KraDai,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LangError {
    #[error("unknown language code: {0:?}")]
    UnknownLanguage(String),
}

impl LanguageCode {
    /// All supported languages, in report column order.
    pub const ALL: [LanguageCode; 10] = [
        LanguageCode::En,
        LanguageCode::Zh,
        LanguageCode::Fr,
        LanguageCode::Ko,
        LanguageCode::De,
        LanguageCode::Ja,
        LanguageCode::It,
        LanguageCode::Ar,
        LanguageCode::Id,
        LanguageCode::Th,
    ];

    /// Case-insensitive parse of a two-letter code.
    pub fn parse(code_text: &str) -> Result<LanguageCode, LangError> {
        match code_text.to_ascii_lowercase().as_str() {
            "en" => Ok(LanguageCode::En),
            "it" => Ok(LanguageCode::It),
            "id" => Ok(LanguageCode::Id),
            "fr" => Ok(LanguageCode::Fr),
            "de" => Ok(LanguageCode::De),
            "zh" => Ok(LanguageCode::Zh),
            "ja" => Ok(LanguageCode::Ja),
            "ar" => Ok(LanguageCode::Ar),
            "ko" => Ok(LanguageCode::Ko),
            "th" => Ok(LanguageCode::Th),
            _ => Err(LangError::UnknownLanguage(code_text.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LanguageCode::En => "en",
            LanguageCode::It => "it",
            LanguageCode::Id => "id",
            LanguageCode::Fr => "fr",
            LanguageCode::De => "de",
            LanguageCode::Zh => "zh",
            LanguageCode::Ja => "ja",
            LanguageCode::Ar => "ar",
            LanguageCode::Ko => "ko",
            LanguageCode::Th => "th",
        }
    }

    pub fn family(&self) -> LanguageFamily {
        match self {
            LanguageCode::En
            | LanguageCode::It
            | LanguageCode::Id
            | LanguageCode::Fr
            | LanguageCode::De => LanguageFamily::IndoEuropean,
            LanguageCode::Zh => LanguageFamily::SinoTibetan,
            LanguageCode::Ja => LanguageFamily::JapaneseRyukyuan,
            LanguageCode::Ar => LanguageFamily::AfroAsiatic,
            LanguageCode::Ko => LanguageFamily::Koreanic,
            LanguageCode::Th => LanguageFamily::KraDai,
        }
    }

    /// English name, used in translation prompts.
    pub fn english_name(&self) -> &'static str {
        match self {
            LanguageCode::En => "English",
            LanguageCode::It => "Italian",
            LanguageCode::Id => "Indonesian",
            LanguageCode::Fr => "French",
            LanguageCode::De => "German",
            LanguageCode::Zh => "Chinese",
            LanguageCode::Ja => "Japanese",
            LanguageCode::Ar => "Arabic",
            LanguageCode::Ko => "Korean",
            LanguageCode::Th => "Thai",
        }
    }

    /// Whether uni-gram units are single characters rather than
    /// whitespace-delimited words (scripts without word boundaries).
    pub fn character_tokenized(&self) -> bool {
        matches!(
            self,
            LanguageCode::Zh | LanguageCode::Ja | LanguageCode::Th
        )
    }
}

impl fmt::Display for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LanguageCode {
    type Err = LangError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LanguageCode::parse(s)
    }
}

/// How a grouping's member families relate to its pivot's family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupingMode {
    /// Every member shares the pivot's family.
    Shared,
    /// Every non-pivot member belongs to a different family than the pivot.
    Distinct,
    /// Both shared-family and distinct-family members are present.
    Mixed,
}

impl fmt::Display for GroupingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupingMode::Shared => f.write_str("shared"),
            GroupingMode::Distinct => f.write_str("distinct"),
            GroupingMode::Mixed => f.write_str("mixed"),
        }
    }
}

/// A named candidate language set for cross-lingual aggregation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageGrouping {
    pub name: String,
    pub mode: GroupingMode,
    pub languages: Vec<LanguageCode>,
    pub pivot: LanguageCode,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GroupingError {
    #[error("grouping {0:?} has no languages")]
    EmptyLanguages(String),
    #[error("grouping {name:?}: pivot {pivot} is not a member")]
    PivotNotMember { name: String, pivot: LanguageCode },
    #[error(
        "grouping {name:?}: declared mode {declared} but composition is {actual}{}",
        offending.map(|l| format!(" (offending language: {l})")).unwrap_or_default()
    )]
    ModeMismatch {
        name: String,
        declared: GroupingMode,
        actual: GroupingMode,
        offending: Option<LanguageCode>,
    },
}

impl LanguageGrouping {
    pub fn new(
        name: impl Into<String>,
        mode: GroupingMode,
        languages: Vec<LanguageCode>,
        pivot: LanguageCode,
    ) -> Self {
        LanguageGrouping {
            name: name.into(),
            mode,
            languages,
            pivot,
        }
    }

    /// Mode computed from the actual family composition. A set whose members
    /// all share the pivot's family is `Shared` (a singleton pivot counts);
    /// one where every non-pivot member differs is `Distinct`; anything else
    /// is `Mixed`.
    pub fn computed_mode(&self) -> GroupingMode {
        let pivot_family = self.pivot.family();
        let non_pivot: Vec<_> = self
            .languages
            .iter()
            .filter(|l| **l != self.pivot)
            .collect();
        if non_pivot.iter().all(|l| l.family() == pivot_family) {
            GroupingMode::Shared
        } else if non_pivot.iter().all(|l| l.family() != pivot_family) {
            GroupingMode::Distinct
        } else {
            GroupingMode::Mixed
        }
    }

    /// Checks structural invariants and that the declared mode matches the
    /// family composition. Returns the grouping itself on success.
    pub fn validate(&self) -> Result<&Self, GroupingError> {
        if self.languages.is_empty() {
            return Err(GroupingError::EmptyLanguages(self.name.clone()));
        }
        if !self.languages.contains(&self.pivot) {
            return Err(GroupingError::PivotNotMember {
                name: self.name.clone(),
                pivot: self.pivot,
            });
        }
        let actual = self.computed_mode();
        if actual != self.mode {
            let pivot_family = self.pivot.family();
            // First language that breaks the declared mode, when one exists.
            let offending = match self.mode {
                GroupingMode::Shared => self
                    .languages
                    .iter()
                    .find(|l| l.family() != pivot_family)
                    .copied(),
                GroupingMode::Distinct => self
                    .languages
                    .iter()
                    .find(|l| **l != self.pivot && l.family() == pivot_family)
                    .copied(),
                GroupingMode::Mixed => None,
            };
            return Err(GroupingError::ModeMismatch {
                name: self.name.clone(),
                declared: self.mode,
                actual,
                offending,
            });
        }
        Ok(self)
    }
}
