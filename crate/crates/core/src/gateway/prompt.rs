//! Prompt templates and message rendering.
//!
//! Templates are TOML files. The system text may use `{instrument}` and
//! `{instrument_max}`; the user text must contain `{narrative}`. Output
//! format instructions are appended to the system message according to the
//! template's output mode, always asking for the score first so its tokens
//! sit at a known position in the completion.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Instrument, NarrativeRecord};

pub const NARRATIVE: &str = "{narrative}";
pub const INSTRUMENT_MAX: &str = "{instrument_max}";
pub const INSTRUMENT: &str = "{instrument}";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("template `{template}`: {field} is missing the {placeholder} placeholder")]
    MissingPlaceholder {
        template: String,
        field: &'static str,
        placeholder: &'static str,
    },
    #[error("narrative is empty")]
    EmptyNarrative,
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("{}: {message}", path.display())]
    Load { path: PathBuf, message: String },
    #[error("unsupported template version {0} (expected 1)")]
    Version(u32),
}

impl PromptError {
    pub fn code(&self) -> &'static str {
        match self {
            PromptError::MissingPlaceholder { .. } => "missing_placeholder",
            PromptError::EmptyNarrative => "empty_narrative",
            PromptError::UnknownTemplate(_) => "unknown_template",
            PromptError::Load { .. } => "template_load",
            PromptError::Version(_) => "template_version",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    #[default]
    ScoreOnly,
    ScorePlusExplanation,
    ScorePlusExplanationPlusSelfConfidence,
    Binary,
}

impl OutputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputMode::ScoreOnly => "score_only",
            OutputMode::ScorePlusExplanation => "score_plus_explanation",
            OutputMode::ScorePlusExplanationPlusSelfConfidence => {
                "score_plus_explanation_plus_self_confidence"
            }
            OutputMode::Binary => "binary",
        }
    }

    pub fn produces_score(self) -> bool {
        self != OutputMode::Binary
    }
}

impl fmt::Display for OutputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: "assistant".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    #[serde(default = "default_version")]
    pub version: u32,
    pub name: String,
    pub output_mode: OutputMode,
    pub system_text: String,
    pub user_text: String,
}

fn default_version() -> u32 {
    1
}

const BUILTIN: [(&str, &str); 4] = [
    ("score-only", include_str!("../../templates/score-only.toml")),
    ("score-explanation", include_str!("../../templates/score-explanation.toml")),
    (
        "score-explanation-confidence",
        include_str!("../../templates/score-explanation-confidence.toml"),
    ),
    ("binary", include_str!("../../templates/binary.toml")),
];

impl PromptTemplate {
    pub fn from_toml(src: &str) -> Result<Self, String> {
        let t: PromptTemplate = toml::from_str(src).map_err(|e| e.to_string())?;
        Ok(t)
    }

    /// Checks the placeholders the output mode needs.
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.version != 1 {
            return Err(PromptError::Version(self.version));
        }
        if !self.user_text.contains(NARRATIVE) {
            return Err(PromptError::MissingPlaceholder {
                template: self.name.clone(),
                field: "user_text",
                placeholder: NARRATIVE,
            });
        }
        if self.output_mode.produces_score() && !self.system_text.contains(INSTRUMENT_MAX) {
            return Err(PromptError::MissingPlaceholder {
                template: self.name.clone(),
                field: "system_text",
                placeholder: INSTRUMENT_MAX,
            });
        }
        Ok(())
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    pub fn builtin(name: &str) -> Result<Self, PromptError> {
        let (_, src) = BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))?;
        let t = Self::from_toml(src).expect("built-in templates parse");
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let src = std::fs::read_to_string(path).map_err(|e| PromptError::Load {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        let t = Self::from_toml(&src).map_err(|message| PromptError::Load {
            path: path.to_owned(),
            message,
        })?;
        t.validate()?;
        Ok(t)
    }

    /// A file path if one exists, otherwise a built-in template name.
    pub fn resolve(name_or_path: &str) -> Result<Self, PromptError> {
        let path = Path::new(name_or_path);
        if path.is_file() {
            Self::load(path)
        } else {
            Self::builtin(name_or_path)
        }
    }
}

fn format_instructions(mode: OutputMode, instrument: Instrument) -> String {
    let max = instrument.max_score();
    let name = instrument.display_name();
    match mode {
        OutputMode::ScoreOnly => format!(
            "Respond with the {name} total score only: a single integer from 0 to {max}, with no other text."
        ),
        OutputMode::ScorePlusExplanation => format!(
            "Respond with only the following fenced block, score line first:\n\
             ```\n\
             score: <integer from 0 to {max}>\n\
             explanation: <one or two sentences>\n\
             phrases: <phrase> | <phrase> | ...\n\
             ```"
        ),
        OutputMode::ScorePlusExplanationPlusSelfConfidence => format!(
            "Respond with only the following fenced block, score line first:\n\
             ```\n\
             score: <integer from 0 to {max}>\n\
             explanation: <one or two sentences>\n\
             phrases: <phrase> | <phrase> | ...\n\
             confidence: <your confidence in the score, a number from 0 to 1>\n\
             ```"
        ),
        OutputMode::Binary => {
            "Respond with a single digit only: 1 if the narrative indicates depression, 0 if it does not."
                .to_string()
        }
    }
}

fn fill_instrument(text: &str, instrument: Instrument) -> String {
    text.replace(INSTRUMENT_MAX, &instrument.max_score().to_string())
        .replace(INSTRUMENT, instrument.display_name())
}

/// Renders the system and user messages for one narrative. The narrative
/// is substituted last and verbatim.
pub fn build_prompt_for(
    template: &PromptTemplate,
    narrative: &str,
    instrument: Instrument,
) -> Result<Vec<ChatMessage>, PromptError> {
    if narrative.trim().is_empty() {
        return Err(PromptError::EmptyNarrative);
    }
    template.validate()?;
    let system = format!(
        "{}\n\n{}",
        fill_instrument(&template.system_text, instrument),
        format_instructions(template.output_mode, instrument)
    );
    let user = fill_instrument(&template.user_text, instrument).replace(NARRATIVE, narrative);
    Ok(vec![ChatMessage::system(system), ChatMessage::user(user)])
}

pub fn build_prompt(
    template: &PromptTemplate,
    record: &NarrativeRecord,
) -> Result<Vec<ChatMessage>, PromptError> {
    build_prompt_for(template, &record.text, record.instrument)
}
