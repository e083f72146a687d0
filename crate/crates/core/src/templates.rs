//! Versioned prompt templates with `{name}` placeholders.
//!
//! Templates are data: a TOML file with a `version` key and one string per
//! template name. The effective version is the declared version plus a short
//! digest of every template text, so any wording change changes the version
//! stamped into run records (and the mock fixture keys built from prompts).

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_ENTITY: &str = "List the main visible entity in these frames that this document could describe. Document: {document}. Answer with the entity name only.";
pub const DEFAULT_RATIONALE: &str = "Question: {question}. The video shows {entity}. Using this document as evidence: {document}, state one sentence of reasoning linking the entity to the answer.";
pub const DEFAULT_ANSWER: &str =
    "Question: {question}. Entity: {entity}. Reasoning: {rationale}. Give the final short answer only.";
pub const DEFAULT_VERIFY: &str = "Question: {question}. Entity seen in the video: {entity}. Reasoning: {rationale}. Proposed answer: {answer}. Does this reasoning support this answer? Reply Yes or No.";
pub const DEFAULT_VERIFY_ANSWER_ONLY: &str =
    "Question: {question}. Proposed answer: {answer}. Is this answer correct for the video? Reply Yes or No.";
pub const DEFAULT_STANDARD_RAG: &str =
    "Question: {question}. Documents: {documents}. Give the final short answer only.";
pub const DEFAULT_NO_RAG: &str = "Question: {question}. Give the final short answer only.";
pub const DEFAULT_JUDGE: &str = "Prediction: {prediction}. Reference answers: {gold}. Is the prediction equivalent to a reference answer? Reply Yes or No.";
pub const DEFAULT_VERSION: &str = "default-v1";

/// Which template, with its required placeholder set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    Entity,
    Rationale,
    Answer,
    Verify,
    VerifyAnswerOnly,
    StandardRag,
    NoRag,
    Judge,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 8] = [
        TemplateKind::Entity,
        TemplateKind::Rationale,
        TemplateKind::Answer,
        TemplateKind::Verify,
        TemplateKind::VerifyAnswerOnly,
        TemplateKind::StandardRag,
        TemplateKind::NoRag,
        TemplateKind::Judge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::Entity => "entity",
            TemplateKind::Rationale => "rationale",
            TemplateKind::Answer => "answer",
            TemplateKind::Verify => "verify",
            TemplateKind::VerifyAnswerOnly => "verify_answer_only",
            TemplateKind::StandardRag => "standard_rag",
            TemplateKind::NoRag => "no_rag",
            TemplateKind::Judge => "judge",
        }
    }

    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateKind::Entity => &["document"],
            TemplateKind::Rationale => &["question", "entity", "document"],
            TemplateKind::Answer => &["question", "entity", "rationale"],
            TemplateKind::Verify => &["question", "entity", "rationale", "answer"],
            TemplateKind::VerifyAnswerOnly => &["question", "answer"],
            TemplateKind::StandardRag => &["question", "documents"],
            TemplateKind::NoRag => &["question"],
            TemplateKind::Judge => &["prediction", "gold"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TemplateFile {
    version: String,
    entity: String,
    rationale: String,
    answer: String,
    #[serde(default = "d_verify")]
    verify: String,
    #[serde(default = "d_verify_answer_only")]
    verify_answer_only: String,
    #[serde(default = "d_standard_rag")]
    standard_rag: String,
    #[serde(default = "d_no_rag")]
    no_rag: String,
    #[serde(default = "d_judge")]
    judge: String,
}

fn d_verify() -> String {
    DEFAULT_VERIFY.into()
}
fn d_verify_answer_only() -> String {
    DEFAULT_VERIFY_ANSWER_ONLY.into()
}
fn d_standard_rag() -> String {
    DEFAULT_STANDARD_RAG.into()
}
fn d_no_rag() -> String {
    DEFAULT_NO_RAG.into()
}
fn d_judge() -> String {
    DEFAULT_JUDGE.into()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplateSet {
    file: TemplateFile,
    version: String,
}

impl Default for PromptTemplateSet {
    fn default() -> Self {
        Self::from_file(TemplateFile {
            version: DEFAULT_VERSION.into(),
            entity: DEFAULT_ENTITY.into(),
            rationale: DEFAULT_RATIONALE.into(),
            answer: DEFAULT_ANSWER.into(),
            verify: d_verify(),
            verify_answer_only: d_verify_answer_only(),
            standard_rag: d_standard_rag(),
            no_rag: d_no_rag(),
            judge: d_judge(),
        })
        .expect("built-in templates are valid")
    }
}

impl PromptTemplateSet {
    fn from_file(file: TemplateFile) -> Result<Self> {
        let mut set = Self {
            file,
            version: String::new(),
        };
        let mut h = Sha256::new();
        for kind in TemplateKind::ALL {
            let text = set.text(kind);
            let found = placeholders_in(text);
            let required: BTreeSet<String> = kind.placeholders().iter().map(|s| s.to_string()).collect();
            if found != required {
                return Err(Error::Template(format!(
                    "template {:?} has placeholders {:?}, expected exactly {:?}",
                    kind.name(),
                    found,
                    required
                )));
            }
            h.update(kind.name().as_bytes());
            h.update([0]);
            h.update(text.as_bytes());
            h.update([0]);
        }
        set.version = format!("{}+{}", set.file.version, &hex::encode(h.finalize())[..8]);
        Ok(set)
    }

    pub fn parse(toml_text: &str) -> Result<Self> {
        let file: TemplateFile = toml::from_str(toml_text).map_err(|e| Error::Template(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.file).expect("template file serializes")
    }

    /// Declared version plus content digest.
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn text(&self, kind: TemplateKind) -> &str {
        let f = &self.file;
        match kind {
            TemplateKind::Entity => &f.entity,
            TemplateKind::Rationale => &f.rationale,
            TemplateKind::Answer => &f.answer,
            TemplateKind::Verify => &f.verify,
            TemplateKind::VerifyAnswerOnly => &f.verify_answer_only,
            TemplateKind::StandardRag => &f.standard_rag,
            TemplateKind::NoRag => &f.no_rag,
            TemplateKind::Judge => &f.judge,
        }
    }

    /// Fills every placeholder of `kind`. Values are inserted verbatim.
    pub fn render(&self, kind: TemplateKind, values: &[(&str, &str)]) -> Result<String> {
        for name in kind.placeholders() {
            if !values.iter().any(|(k, _)| k == name) {
                return Err(Error::Template(format!(
                    "missing value for {{{name}}} in {} template",
                    kind.name()
                )));
            }
        }
        let text = self.text(kind);
        let mut out = String::with_capacity(text.len() + 64);
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_ident(&after[..close]) => {
                    let name = &after[..close];
                    let value = values
                        .iter()
                        .find(|(k, _)| *k == name)
                        .map(|(_, v)| *v)
                        .unwrap_or_default();
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                _ => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c == '_')
}

fn placeholders_in(text: &str) -> BTreeSet<String> {
    let mut found = BTreeSet::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_ident(&after[..close]) => {
                found.insert(after[..close].to_string());
                rest = &after[close + 1..];
            }
            _ => rest = after,
        }
    }
    found
}
