//! End-to-end question answering: no-RAG and standard-RAG baselines and the
//! speculative draft-then-verify flow, plus evaluation and corpus tooling.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod judge;
pub mod record;
pub mod synth;

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::draft::{draft_all, DraftContext};
use crate::error::{Error, Result};
use crate::keyframe::{extract_keyframes, load_frame_dir, KeyframeConfig, KeyframeSet};
use crate::protocol::{ChatRequest, EmbedRequest, ImagePayload, InferenceBackend, ModelTag};
use crate::retrieval::{EmbeddingVector, Index, RawDocument, RetrievalResult};
use crate::schedule::{fan_out, makespan};
use crate::templates::{PromptTemplateSet, TemplateKind};
use crate::verifier::{
    embed_and_align, reliability_score, select_final, ReliabilityOutcome, ScoreRow, SelectionStrategy, StrategyKind,
    VerifyPrompt,
};

pub use config::{Backends, JudgeKind, Mode, RunConfig};
pub use dataset::{Dataset, QAItem};
pub use judge::{judge_answer, normalize_answer};
pub use record::{CandidateAudit, ConfigSnapshot, RetrievedDoc, RunRecord, Timing, VerificationAudit};

/// An item's frames after keyframe extraction, with the strided payloads
/// attached to every chat call.
pub struct PreparedItem {
    pub keyframes: KeyframeSet,
    pub images: Vec<ImagePayload>,
}

pub fn prepare_item(item: &QAItem, keyframe: &KeyframeConfig, max_images: usize) -> Result<PreparedItem> {
    let frames = load_frame_dir(&item.frame_dir)?;
    let keyframes = extract_keyframes(&frames, keyframe)?;
    let images = crate::draft::keyframe_payloads(&keyframes, max_images)?;
    Ok(PreparedItem { keyframes, images })
}

/// Payloads of every keyframe, as sent to the embedder.
pub fn all_keyframe_payloads(keyframes: &KeyframeSet) -> Result<Vec<ImagePayload>> {
    crate::draft::keyframe_payloads(keyframes, 0)
}

pub fn standard_rag_request(
    templates: &PromptTemplateSet,
    question: &str,
    images: &[ImagePayload],
    documents: &[&str],
    max_new_tokens: u32,
) -> Result<ChatRequest> {
    let joined = documents.join("\n");
    let prompt = templates.render(
        TemplateKind::StandardRag,
        &[("question", question), ("documents", &joined)],
    )?;
    Ok(ChatRequest::new(ModelTag::Verifier, prompt, max_new_tokens).with_images(images.to_vec()))
}

pub fn no_rag_request(
    templates: &PromptTemplateSet,
    question: &str,
    images: &[ImagePayload],
    model_tag: ModelTag,
    max_new_tokens: u32,
) -> Result<ChatRequest> {
    let prompt = templates.render(TemplateKind::NoRag, &[("question", question)])?;
    Ok(ChatRequest::new(model_tag, prompt, max_new_tokens).with_images(images.to_vec()))
}

pub fn judge_request(templates: &PromptTemplateSet, prediction: &str, gold_answers: &[String]) -> Result<ChatRequest> {
    let gold = gold_answers.join("; ");
    let prompt = templates.render(TemplateKind::Judge, &[("prediction", prediction), ("gold", &gold)])?;
    Ok(ChatRequest::new(ModelTag::Verifier, prompt, 1).with_first_token_distribution())
}

/// Seed for the random strategy on one item, stable across runs.
pub fn item_seed(rng_seed: u64, item_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(rng_seed.to_le_bytes());
    h.update(item_id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Embeds each payload. Returns unit vectors and the summed simulated time.
pub fn embed_images(
    images: &[ImagePayload],
    backend: &dyn InferenceBackend,
    max_parallel: usize,
) -> Result<(Vec<EmbeddingVector>, f64)> {
    let results = fan_out(images, max_parallel, |_, img| {
        backend.embed(&EmbedRequest::Image(img.clone()))
    });
    let mut out = Vec::with_capacity(images.len());
    let mut ms = 0.0;
    for r in results {
        let r = r?;
        ms += r.wall_time_ms;
        out.push(
            EmbeddingVector::normalized(&r.vector)
                .ok_or_else(|| Error::InvalidInput("embedder returned a zero vector for a keyframe".into()))?,
        );
    }
    Ok((out, ms))
}

/// A document row without a precomputed embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

pub fn read_source_documents<R: BufRead>(r: R) -> Result<Vec<SourceDocument>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Builds an index, embedding the text of every document that lacks a
/// vector.
pub fn build_index(
    docs: Vec<SourceDocument>,
    embedder: &dyn InferenceBackend,
    max_parallel: usize,
    bins_per_channel: u32,
) -> Result<Index> {
    let vectors = fan_out(&docs, max_parallel, |_, d| match &d.embedding {
        Some(v) => Ok::<_, Error>(v.clone()),
        None => Ok(embedder.embed(&EmbedRequest::Text(d.text.clone()))?.vector),
    });
    let raw = docs
        .into_iter()
        .zip(vectors)
        .map(|(d, v)| {
            Ok(RawDocument {
                doc_id: d.doc_id,
                text: d.text,
                embedding: v?,
                metadata: d.metadata,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut index = Index::build(raw)?;
    index.bins_per_channel = bins_per_channel;
    Ok(index)
}

/// Stage clock: simulated time from backend reports, wall time measured.
#[derive(Default)]
struct Clock {
    sim: Timing,
    wall: Timing,
}

impl Clock {
    fn stage<T>(&mut self, slot: fn(&mut Timing) -> &mut f64, f: impl FnOnce() -> Result<(T, f64)>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        *slot(&mut self.wall) += start.elapsed().as_secs_f64() * 1000.0;
        let (v, sim_ms) = out?;
        *slot(&mut self.sim) += sim_ms;
        Ok(v)
    }

    fn finish(self, wall_clock: bool) -> Timing {
        let sum = |t: &Timing| t.keyframe_ms + t.retrieval_ms + t.draft_ms + t.verify_ms + t.generate_ms;
        let simulated_total_ms = sum(&self.sim);
        let base = if wall_clock { self.wall } else { self.sim };
        Timing {
            total_ms: sum(&base),
            simulated_total_ms,
            wall_clock,
            ..base
        }
    }
}

fn keyframe_slot(t: &mut Timing) -> &mut f64 {
    &mut t.keyframe_ms
}
fn retrieval_slot(t: &mut Timing) -> &mut f64 {
    &mut t.retrieval_ms
}
fn draft_slot(t: &mut Timing) -> &mut f64 {
    &mut t.draft_ms
}
fn verify_slot(t: &mut Timing) -> &mut f64 {
    &mut t.verify_ms
}
fn generate_slot(t: &mut Timing) -> &mut f64 {
    &mut t.generate_ms
}

/// Answers questions under one run configuration.
#[derive(Clone)]
pub struct Engine {
    config: RunConfig,
    templates: PromptTemplateSet,
    index: Option<Arc<Index>>,
    backends: Backends,
    snapshot: ConfigSnapshot,
}

impl Engine {
    pub fn new(
        config: RunConfig,
        templates: PromptTemplateSet,
        index: Option<Arc<Index>>,
        backends: Backends,
    ) -> Result<Self> {
        config.validate()?;
        let seed = config.endpoints.drafter.as_deref().and_then(config::mock_seed);
        let snapshot = ConfigSnapshot::new(&config, templates.version(), seed);
        Ok(Self {
            config,
            templates,
            index,
            backends,
            snapshot,
        })
    }

    /// Loads templates from the config, connects endpoints and opens the
    /// dataset's index (building it from documents when only those exist).
    pub fn from_config(config: RunConfig, dataset: &Dataset) -> Result<Self> {
        let templates = match &config.templates {
            Some(p) => PromptTemplateSet::load(p)?,
            None => PromptTemplateSet::default(),
        };
        let backends = Backends::connect(&config.endpoints)?;
        let index = open_index(dataset, &backends, &config)?;
        Self::new(config, templates, index.map(Arc::new), backends)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn templates(&self) -> &PromptTemplateSet {
        &self.templates
    }

    pub fn index(&self) -> Option<&Arc<Index>> {
        self.index.as_ref()
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    /// Same backends and index under a different configuration.
    pub fn reconfigure(&self, config: RunConfig) -> Result<Self> {
        Self::new(
            config,
            self.templates.clone(),
            self.index.clone(),
            self.backends.clone(),
        )
    }

    /// Runs the configured mode. Failures are captured in the record.
    pub fn answer(&self, item: &QAItem) -> RunRecord {
        let mut rec = RunRecord {
            item_id: item.item_id.clone(),
            mode: self.config.mode,
            tags: item.tags.clone(),
            keyframe_indices: Vec::new(),
            retrieved: Vec::new(),
            candidates: Vec::new(),
            draft_errors: Vec::new(),
            verification: None,
            final_answer: None,
            correct: false,
            error: None,
            timing: Timing::default(),
            config: self.snapshot.clone(),
        };
        let mut clock = Clock::default();
        let result = match self.config.mode {
            Mode::NoRag => self.run_no_rag(item, &mut rec, &mut clock),
            Mode::StandardRag => self.run_standard_rag(item, &mut rec, &mut clock),
            Mode::SpeculateRag => self.run_speculate_rag(item, &mut rec, &mut clock),
        };
        rec.timing = clock.finish(self.config.record_wall_clock);
        let judged = result.and_then(|()| match &rec.final_answer {
            Some(a) => self.judge(a, &item.gold_answers),
            None => Ok(false),
        });
        match judged {
            Ok(correct) => rec.correct = correct,
            Err(e) => {
                log::warn!("item {} failed: {e}", item.item_id);
                rec.error = Some(e.to_string());
                rec.correct = false;
            }
        }
        rec
    }

    pub fn answer_no_rag(&self, item: &QAItem) -> RunRecord {
        self.with_mode(Mode::NoRag).answer(item)
    }

    pub fn answer_standard_rag(&self, item: &QAItem) -> RunRecord {
        self.with_mode(Mode::StandardRag).answer(item)
    }

    pub fn answer_speculate_rag(&self, item: &QAItem) -> RunRecord {
        self.with_mode(Mode::SpeculateRag).answer(item)
    }

    fn with_mode(&self, mode: Mode) -> std::borrow::Cow<'_, Engine> {
        if self.config.mode == mode {
            return std::borrow::Cow::Borrowed(self);
        }
        let mut cfg = self.config.clone();
        cfg.mode = mode;
        std::borrow::Cow::Owned(self.reconfigure(cfg).expect("mode change keeps config valid"))
    }

    fn judge(&self, prediction: &str, gold: &[String]) -> Result<bool> {
        match self.config.judge {
            JudgeKind::Rule => Ok(judge_answer(prediction, gold)),
            JudgeKind::Model => {
                let req = judge_request(&self.templates, prediction, gold)?;
                let resp = self.backends.verifier.chat(&req)?;
                let dist = resp.first_token_distribution.unwrap_or_default();
                Ok(crate::verifier::YesNo::from_distribution(&dist).is_some_and(|yn| yn.p_yes > yn.p_no))
            }
        }
    }

    fn prepare(&self, item: &QAItem, rec: &mut RunRecord, clock: &mut Clock) -> Result<PreparedItem> {
        let prepared = clock.stage(keyframe_slot, || {
            Ok((
                prepare_item(item, &self.config.keyframe, self.config.draft.max_keyframes)?,
                0.0,
            ))
        })?;
        rec.keyframe_indices = prepared.keyframes.indices();
        Ok(prepared)
    }

    fn require_index(&self) -> Result<&Index> {
        match &self.index {
            Some(i) if !i.is_empty() => Ok(i),
            _ => Err(Error::Config(format!(
                "{} mode needs a non-empty index",
                self.config.mode
            ))),
        }
    }

    fn retrieve<'a>(
        &self,
        index: &'a Index,
        prepared: &PreparedItem,
        rec: &mut RunRecord,
        clock: &mut Clock,
    ) -> Result<(Vec<RetrievalResult<'a>>, Vec<EmbeddingVector>)> {
        let (hits, embeddings) = clock.stage(retrieval_slot, || {
            let payloads = all_keyframe_payloads(&prepared.keyframes)?;
            let (embeddings, ms) = embed_images(
                &payloads,
                self.backends.embedder.as_ref(),
                self.config.verify.max_parallel,
            )?;
            let hits = index.retrieve(&embeddings, self.config.retrieval.k, self.config.retrieval.mode())?;
            Ok(((hits, embeddings), ms))
        })?;
        rec.retrieved = hits
            .iter()
            .map(|h| RetrievedDoc {
                doc_id: h.doc.doc_id.clone(),
                score: h.score,
                best_keyframe_index: h.best_keyframe_index,
            })
            .collect();
        Ok((hits, embeddings))
    }

    fn run_no_rag(&self, item: &QAItem, rec: &mut RunRecord, clock: &mut Clock) -> Result<()> {
        let prepared = self.prepare(item, rec, clock)?;
        let tag = self.config.no_rag_model;
        let backend = match tag {
            ModelTag::Drafter => &self.backends.drafter,
            ModelTag::Verifier => &self.backends.verifier,
        };
        let req = no_rag_request(
            &self.templates,
            &item.question,
            &prepared.images,
            tag,
            self.config.draft.answer_max_tokens,
        )?;
        let text = clock.stage(generate_slot, || {
            let resp = backend.chat(&req)?;
            Ok((resp.text, resp.wall_time_ms))
        })?;
        rec.final_answer = Some(nonempty_answer(text)?);
        Ok(())
    }

    fn run_standard_rag(&self, item: &QAItem, rec: &mut RunRecord, clock: &mut Clock) -> Result<()> {
        let index = self.require_index()?;
        let prepared = self.prepare(item, rec, clock)?;
        let (hits, _) = self.retrieve(index, &prepared, rec, clock)?;
        let docs: Vec<&str> = hits.iter().map(|h| h.doc.text.as_str()).collect();
        let req = standard_rag_request(
            &self.templates,
            &item.question,
            &prepared.images,
            &docs,
            self.config.draft.answer_max_tokens,
        )?;
        let text = clock.stage(generate_slot, || {
            let resp = self.backends.verifier.chat(&req)?;
            Ok((resp.text, resp.wall_time_ms))
        })?;
        rec.final_answer = Some(nonempty_answer(text)?);
        Ok(())
    }

    fn run_speculate_rag(&self, item: &QAItem, rec: &mut RunRecord, clock: &mut Clock) -> Result<()> {
        let index = self.require_index()?;
        let prepared = self.prepare(item, rec, clock)?;
        let (hits, keyframe_vectors) = self.retrieve(index, &prepared, rec, clock)?;

        let ctx = DraftContext {
            question: &item.question,
            images: prepared.images.clone(),
            templates: &self.templates,
            config: self.config.draft,
        };
        let outcome = clock.stage(draft_slot, || {
            let o = draft_all(&ctx, &hits, self.backends.drafter.as_ref())?;
            let ms = o.simulated_ms;
            Ok((o, ms))
        })?;
        rec.candidates = outcome.candidates;
        rec.draft_errors = outcome.failures;
        let candidates = &rec.candidates;

        let kind = self.config.verify.strategy;
        let parallel = self.config.verify.max_parallel;
        let prompt = if kind == StrategyKind::SelfConsistent {
            VerifyPrompt::AnswerOnly
        } else {
            VerifyPrompt::Full
        };
        let mut strategy: SelectionStrategy = self.config.verify.selection();
        if kind == StrategyKind::Random {
            strategy.rng_seed = item_seed(strategy.rng_seed, &item.item_id);
        }

        let (reliability, alignment) = clock.stage(verify_slot, || {
            let mut sim = 0.0;
            let reliability: Vec<Option<ReliabilityOutcome>> = if kind.needs_reliability() {
                let outs = fan_out(candidates, parallel, |_, c| {
                    reliability_score(
                        &self.templates,
                        &item.question,
                        &prepared.images,
                        c,
                        prompt,
                        self.backends.verifier.as_ref(),
                    )
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
                sim += makespan(&outs.iter().map(|o| o.simulated_ms).collect::<Vec<_>>(), parallel);
                outs.into_iter().map(Some).collect()
            } else {
                vec![None; candidates.len()]
            };

            let wanted: Vec<bool> = if !kind.needs_alignment() {
                vec![false; candidates.len()]
            } else if kind == StrategyKind::TwoStage {
                let r: Vec<f64> = reliability.iter().map(|o| o.map_or(0.0, |o| o.reliability)).collect();
                crate::verifier::high_reliability_set(&r, strategy.delta)
            } else {
                vec![true; candidates.len()]
            };
            let aligned = fan_out(candidates, parallel, |i, c| {
                if wanted[i] {
                    embed_and_align(&c.entity, &keyframe_vectors, self.backends.embedder.as_ref()).map(Some)
                } else {
                    Ok(None)
                }
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let embed_ms: Vec<f64> = aligned.iter().flatten().map(|(_, ms)| *ms).collect();
            sim += makespan(&embed_ms, parallel);
            let alignment: Vec<Option<f64>> = aligned.into_iter().map(|a| a.map(|(s, _)| s)).collect();
            Ok(((reliability, alignment), sim))
        })?;

        let rows: Vec<ScoreRow> = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| ScoreRow {
                ordinal: c.ordinal,
                reliability: reliability[i].map_or(0.0, |o| o.reliability),
                alignment: alignment[i].unwrap_or(0.0),
            })
            .collect();
        let selection = select_final(&rows, &strategy)?;
        let chosen = &candidates[selection.index];

        let audits = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let r = reliability[i];
                let mut flags = Vec::new();
                if r.is_some_and(|o| o.unscored) {
                    flags.push("unscored".to_string());
                }
                if i == selection.index {
                    flags.push("selected".to_string());
                }
                CandidateAudit {
                    ordinal: c.ordinal,
                    doc_id: c.doc_id.clone(),
                    p_yes: r.map(|o| o.p_yes),
                    p_no: r.map(|o| o.p_no),
                    reliability: r.map(|o| o.reliability),
                    alignment: alignment[i],
                    in_high_set: r.is_some() && selection.in_high_set[i],
                    passed_filter: selection.passed_filter[i],
                    combined: selection.combined[i],
                    flags,
                }
            })
            .collect();

        rec.verification = Some(VerificationAudit {
            strategy: kind,
            delta: strategy.delta,
            rng_seed: (kind == StrategyKind::Random).then_some(strategy.rng_seed),
            verify_prompt: prompt,
            candidates: audits,
            selected_doc_id: chosen.doc_id.clone(),
            selected_ordinal: chosen.ordinal,
        });
        rec.final_answer = Some(chosen.answer.clone());
        Ok(())
    }
}

fn nonempty_answer(text: String) -> Result<String> {
    let t = text.trim();
    if t.is_empty() {
        return Err(Error::EmptyOutput { step: "answer" });
    }
    Ok(t.to_string())
}

fn open_index(dataset: &Dataset, backends: &Backends, config: &RunConfig) -> Result<Option<Index>> {
    let bins = config.keyframe.bins_per_channel as u32;
    if let Some(path) = &dataset.index {
        let file = std::fs::File::open(path)?;
        return Ok(Some(Index::read_binary(std::io::BufReader::new(file))?));
    }
    if let Some(path) = &dataset.documents {
        return Ok(Some(load_documents(
            path,
            backends.embedder.as_ref(),
            config.verify.max_parallel,
            bins,
        )?));
    }
    Ok(None)
}

pub fn load_documents(
    path: &Path,
    embedder: &dyn InferenceBackend,
    max_parallel: usize,
    bins_per_channel: u32,
) -> Result<Index> {
    let file = std::fs::File::open(path)?;
    let docs = read_source_documents(std::io::BufReader::new(file))?;
    build_index(docs, embedder, max_parallel, bins_per_channel)
}
