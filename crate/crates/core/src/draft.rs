//! Three-step structured drafting per retrieved document, fanned out in
//! parallel over documents.
//!
//! Each chain issues entity extraction (frames + document), rationale
//! (frames + question + entity + document) and answer (frames + question +
//! entity + rationale) calls to the drafter. The answer step never sees the
//! raw document.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyframe::KeyframeSet;
use crate::protocol::{ChatRequest, ImagePayload, InferenceBackend, ModelTag};
use crate::retrieval::RetrievalResult;
use crate::schedule::{fan_out, makespan};
use crate::templates::{PromptTemplateSet, TemplateKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DraftConfig {
    /// Frames attached to each drafter call, strided from the keyframe set.
    pub max_keyframes: usize,
    pub entity_max_tokens: u32,
    pub rationale_max_tokens: u32,
    pub answer_max_tokens: u32,
    pub max_parallel: usize,
}

impl Default for DraftConfig {
    fn default() -> Self {
        Self {
            max_keyframes: 8,
            entity_max_tokens: 16,
            rationale_max_tokens: 64,
            answer_max_tokens: 32,
            max_parallel: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DraftStep {
    Entity,
    Rationale,
    Answer,
}

impl DraftStep {
    fn as_str(self) -> &'static str {
        match self {
            DraftStep::Entity => "entity",
            DraftStep::Rationale => "rationale",
            DraftStep::Answer => "answer",
        }
    }
}

/// Simulated per-step latency reported by the drafter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub entity_ms: f64,
    pub rationale_ms: f64,
    pub answer_ms: f64,
}

impl StepTiming {
    pub fn total(&self) -> f64 {
        self.entity_ms + self.rationale_ms + self.answer_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftCandidate {
    pub ordinal: usize,
    pub doc_id: String,
    pub entity: String,
    pub rationale: String,
    pub answer: String,
    pub timing: StepTiming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftFailure {
    pub ordinal: usize,
    pub doc_id: String,
    pub step: DraftStep,
    pub error: String,
    /// Simulated time spent on the steps that did complete.
    pub elapsed_ms: f64,
}

/// Everything a drafter call needs besides the document.
pub struct DraftContext<'a> {
    pub question: &'a str,
    pub images: Vec<ImagePayload>,
    pub templates: &'a PromptTemplateSet,
    pub config: DraftConfig,
}

impl<'a> DraftContext<'a> {
    pub fn new(
        question: &'a str,
        keyframes: &KeyframeSet,
        templates: &'a PromptTemplateSet,
        config: DraftConfig,
    ) -> Result<Self> {
        if question.trim().is_empty() {
            return Err(Error::InvalidInput("question must be non-empty".into()));
        }
        if keyframes.is_empty() {
            return Err(Error::InvalidInput("keyframe set must be non-empty".into()));
        }
        Ok(Self {
            question,
            images: keyframe_payloads(keyframes, config.max_keyframes)?,
            templates,
            config,
        })
    }

    pub fn entity_request(&self, document: &str) -> Result<ChatRequest> {
        let prompt = self.templates.render(TemplateKind::Entity, &[("document", document)])?;
        Ok(self.request(prompt, self.config.entity_max_tokens))
    }

    pub fn rationale_request(&self, entity: &str, document: &str) -> Result<ChatRequest> {
        let prompt = self.templates.render(
            TemplateKind::Rationale,
            &[("question", self.question), ("entity", entity), ("document", document)],
        )?;
        Ok(self.request(prompt, self.config.rationale_max_tokens))
    }

    pub fn answer_request(&self, entity: &str, rationale: &str) -> Result<ChatRequest> {
        let prompt = self.templates.render(
            TemplateKind::Answer,
            &[
                ("question", self.question),
                ("entity", entity),
                ("rationale", rationale),
            ],
        )?;
        Ok(self.request(prompt, self.config.answer_max_tokens))
    }

    fn request(&self, prompt: String, max_new_tokens: u32) -> ChatRequest {
        ChatRequest::new(ModelTag::Drafter, prompt, max_new_tokens).with_images(self.images.clone())
    }
}

/// Encoded payloads for at most `max` uniformly strided keyframes.
pub fn keyframe_payloads(keyframes: &KeyframeSet, max: usize) -> Result<Vec<ImagePayload>> {
    keyframes
        .strided(max)
        .into_iter()
        .map(|f| Ok(ImagePayload::from(&f.encoded()?)))
        .collect()
}

/// Runs one entity → rationale → answer chain.
pub fn draft_one(
    ctx: &DraftContext<'_>,
    ordinal: usize,
    doc_id: &str,
    document: &str,
    backend: &dyn InferenceBackend,
) -> std::result::Result<DraftCandidate, DraftFailure> {
    let mut timing = StepTiming::default();
    let fail = |step: DraftStep, error: String, timing: &StepTiming| DraftFailure {
        ordinal,
        doc_id: doc_id.to_string(),
        step,
        error,
        elapsed_ms: timing.total(),
    };
    let call = |step: DraftStep, req: Result<ChatRequest>| -> std::result::Result<(String, f64), String> {
        let req = req.map_err(|e| e.to_string())?;
        let resp = backend.chat(&req).map_err(|e| e.to_string())?;
        let text = resp.text.trim().to_string();
        if text.is_empty() {
            return Err(Error::EmptyOutput { step: step.as_str() }.to_string());
        }
        Ok((text, resp.wall_time_ms))
    };

    let (entity, ms) =
        call(DraftStep::Entity, ctx.entity_request(document)).map_err(|e| fail(DraftStep::Entity, e, &timing))?;
    timing.entity_ms = ms;
    let (rationale, ms) = call(DraftStep::Rationale, ctx.rationale_request(&entity, document))
        .map_err(|e| fail(DraftStep::Rationale, e, &timing))?;
    timing.rationale_ms = ms;
    let (answer, ms) = call(DraftStep::Answer, ctx.answer_request(&entity, &rationale))
        .map_err(|e| fail(DraftStep::Answer, e, &timing))?;
    timing.answer_ms = ms;

    Ok(DraftCandidate {
        ordinal,
        doc_id: doc_id.to_string(),
        entity,
        rationale,
        answer,
        timing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftOutcome {
    pub candidates: Vec<DraftCandidate>,
    pub failures: Vec<DraftFailure>,
    /// Simulated critical path of the fan-out under `max_parallel` workers.
    pub simulated_ms: f64,
}

/// Drafts every retrieved document with at most `max_parallel` concurrent
/// chains. Fails only when no chain succeeds.
pub fn draft_all(
    ctx: &DraftContext<'_>,
    docs: &[RetrievalResult<'_>],
    backend: &dyn InferenceBackend,
) -> Result<DraftOutcome> {
    if docs.is_empty() {
        return Err(Error::InvalidInput("draft_all needs at least one document".into()));
    }
    if ctx.config.max_parallel == 0 {
        return Err(Error::Config("max_parallel must be >= 1".into()));
    }
    let results = fan_out(docs, ctx.config.max_parallel, |ordinal, hit| {
        draft_one(ctx, ordinal, &hit.doc.doc_id, &hit.doc.text, backend)
    });

    let durations: Vec<f64> = results
        .iter()
        .map(|r| match r {
            Ok(c) => c.timing.total(),
            Err(f) => f.elapsed_ms,
        })
        .collect();
    let simulated_ms = makespan(&durations, ctx.config.max_parallel);

    let (ok, err): (Vec<_>, Vec<_>) = results.into_iter().partition(|r| r.is_ok());
    let candidates: Vec<DraftCandidate> = ok.into_iter().map(|r| r.unwrap()).collect();
    let failures: Vec<DraftFailure> = err.into_iter().map(|r| r.unwrap_err()).collect();
    for f in &failures {
        log::warn!(
            "draft chain {} ({}) failed at {} step: {}",
            f.ordinal,
            f.doc_id,
            f.step.as_str(),
            f.error
        );
    }
    if candidates.is_empty() {
        return Err(Error::NoDrafts(docs.len()));
    }
    Ok(DraftOutcome {
        candidates,
        failures,
        simulated_ms,
    })
}
