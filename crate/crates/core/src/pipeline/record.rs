//! Per-question run trace, serialized one JSON object per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::draft::{DraftCandidate, DraftFailure};
use crate::error::Result;
use crate::keyframe::KeyframeReference;
use crate::protocol::ModelTag;
use crate::verifier::{StrategyKind, VerifyPrompt};

use super::config::{JudgeKind, Mode, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDoc {
    pub doc_id: String,
    pub score: f64,
    pub best_keyframe_index: usize,
}

/// Stage timings in milliseconds.
///
/// Stage fields and `total_ms` carry simulated backend time unless the run
/// records wall-clock time, in which case they are measured. The simulated
/// total is always present.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub keyframe_ms: f64,
    pub retrieval_ms: f64,
    pub draft_ms: f64,
    pub verify_ms: f64,
    /// Single-pass generation in the baseline modes.
    pub generate_ms: f64,
    pub total_ms: f64,
    pub simulated_total_ms: f64,
    pub wall_clock: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAudit {
    pub ordinal: usize,
    pub doc_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_yes: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_no: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reliability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment: Option<f64>,
    pub in_high_set: bool,
    pub passed_filter: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub combined: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationAudit {
    pub strategy: StrategyKind,
    pub delta: f64,
    /// Per-item seed actually used by the random strategy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
    pub verify_prompt: VerifyPrompt,
    pub candidates: Vec<CandidateAudit>,
    pub selected_doc_id: String,
    pub selected_ordinal: usize,
}

/// Everything needed to re-run an item identically against the mock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub label: String,
    pub theta: f64,
    pub bins_per_channel: usize,
    pub keyframe_reference: KeyframeReference,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_frame_k: Option<usize>,
    pub strategy: StrategyKind,
    pub delta: f64,
    pub rng_seed: u64,
    pub template_version: String,
    pub max_keyframes: usize,
    pub max_new_tokens: [u32; 3],
    pub draft_parallel: usize,
    pub verify_parallel: usize,
    pub no_rag_model: ModelTag,
    pub judge: JudgeKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend_seed: Option<u64>,
}

impl ConfigSnapshot {
    pub fn new(cfg: &RunConfig, template_version: &str, backend_seed: Option<u64>) -> Self {
        Self {
            label: cfg.label(),
            theta: cfg.keyframe.theta,
            bins_per_channel: cfg.keyframe.bins_per_channel,
            keyframe_reference: cfg.keyframe.reference,
            k: cfg.retrieval.k,
            per_frame_k: cfg.retrieval.per_frame_k,
            strategy: cfg.verify.strategy,
            delta: cfg.verify.delta,
            rng_seed: cfg.verify.rng_seed,
            template_version: template_version.to_string(),
            max_keyframes: cfg.draft.max_keyframes,
            max_new_tokens: [
                cfg.draft.entity_max_tokens,
                cfg.draft.rationale_max_tokens,
                cfg.draft.answer_max_tokens,
            ],
            draft_parallel: cfg.draft.max_parallel,
            verify_parallel: cfg.verify.max_parallel,
            no_rag_model: cfg.no_rag_model,
            judge: cfg.judge,
            backend_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub item_id: String,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    pub keyframe_indices: Vec<usize>,
    pub retrieved: Vec<RetrievedDoc>,
    pub candidates: Vec<DraftCandidate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub draft_errors: Vec<DraftFailure>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationAudit>,
    pub final_answer: Option<String>,
    pub correct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub timing: Timing,
    pub config: ConfigSnapshot,
}

pub fn write_records<W: Write>(mut w: W, records: &[RunRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
