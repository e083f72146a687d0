//! Dataset manifest: QA items with relative frame directories, plus the
//! documents / index files backing retrieval.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub item_id: String,
    pub frame_dir: PathBuf,
    pub question: String,
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub items: Vec<QAItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub documents: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<PathBuf>,
}

/// A loaded manifest with every path made absolute.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<QAItem>,
    pub documents: Option<PathBuf>,
    pub index: Option<PathBuf>,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&std::fs::read(manifest_path)?)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        Self::from_manifest(manifest, base)
    }

    pub fn from_manifest(manifest: Manifest, base: &Path) -> Result<Self> {
        let abs = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
        let mut seen = HashSet::new();
        let mut items = Vec::with_capacity(manifest.items.len());
        for mut item in manifest.items {
            if !seen.insert(item.item_id.clone()) {
                return Err(Error::InvalidInput(format!("duplicate item id {}", item.item_id)));
            }
            if item.gold_answers.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "item {} has no gold answers",
                    item.item_id
                )));
            }
            if item.question.trim().is_empty() {
                return Err(Error::InvalidInput(format!(
                    "item {} has an empty question",
                    item.item_id
                )));
            }
            item.frame_dir = abs(item.frame_dir);
            if !item.frame_dir.is_dir() {
                return Err(Error::InvalidInput(format!(
                    "item {}: frame dir {} not found",
                    item.item_id,
                    item.frame_dir.display()
                )));
            }
            items.push(item);
        }
        if items.is_empty() {
            return Err(Error::InvalidInput("dataset has no items".into()));
        }
        Ok(Self {
            items,
            documents: manifest.documents.map(abs),
            index: manifest.index.map(abs),
        })
    }
}
